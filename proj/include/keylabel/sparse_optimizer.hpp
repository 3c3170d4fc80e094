#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "keylabel/annotations.hpp"
#include "keylabel/geometry.hpp"
#include "keylabel/scene.hpp"

namespace kpl {

struct ClickRecord {
    std::size_t frame = 0;
    Pixel pixel = Pixel::Zero();
};

/// A lifted keypoint in one scene (a column of W_s). `history` keeps every
/// click that targeted this (scene, keypoint); the last one wins.
struct Observation {
    Point3 point = Point3::Zero();
    std::vector<ClickRecord> history;
};

struct LiftFailure {
    std::size_t entry_index = 0;
    std::string scene;
    int keypoint = 0;
    std::size_t frame = 0;
    std::string reason;
};

/// Per-scene observation maps, ordered as the scene list given to assemble.
struct ObservationSet {
    int num_keypoints = 0;
    std::vector<std::string> scene_ids;
    std::vector<std::map<int, Observation>> scenes;
    std::vector<LiftFailure> failures;

    std::size_t numScenes() const { return scenes.size(); }
    std::size_t numObservations() const;
    /// Convenience constructor from already-lifted points.
    static ObservationSet fromPoints(int num_keypoints, const std::vector<std::map<int, Point3>>& points);
};

/// Lift every click. Clicks that fail on depth are collected in `failures`;
/// references to unknown scenes, frames or keypoint ids throw ValidationError.
ObservationSet assemble(const AnnotationFile& annotations, std::span<const Scene> scenes);

/// RMS distance of the points from their best-fit line.
double line_spread(std::span<const Point3> points);
bool non_collinear(std::span<const Point3> points, double tolerance);

struct ScenePairLink {
    std::size_t a = 0;
    std::size_t b = 0;
    std::vector<int> shared;
    bool rigid = false;
    double spread = 0.0;
};

struct ConnectivityReport {
    std::vector<ScenePairLink> pairs;
    std::vector<std::vector<std::size_t>> components;
    /// Pairs that share at least one keypoint but are not rigidly tied.
    std::vector<std::pair<std::size_t, std::size_t>> under_constrained;
    bool solvable = false;
};

ConnectivityReport check_connectivity(const ObservationSet& obs, double collinearity_tolerance = 1e-3);

struct SolverOptions {
    int max_iterations = 500;
    double step_tolerance = 1e-10;
    double relative_decrease_tolerance = 1e-12;
    /// Initial damping relative to the largest diagonal entry of J^T J.
    double initial_damping = 1e-3;
    bool warm_start = false;
    double collinearity_tolerance = 1e-3;
};

/// Starting iterate plus a note of scenes that fell back to the default
/// initialization when a warm start was requested.
struct InitialGuess {
    std::vector<Point3> keypoints;
    std::vector<RigidTransformd> transforms;
    std::vector<std::size_t> fallback_scenes;
};

InitialGuess initialize(const ObservationSet& obs, const SolverOptions& options = {});

struct ResidualEntry {
    std::size_t scene = 0;
    int keypoint = 0;
    Eigen::Vector3d error = Eigen::Vector3d::Zero();
};

/// `transforms[s]` maps world coordinates into scene s's first-camera frame;
/// transforms[0] is the identity.
struct SparseSolution {
    std::vector<Point3> keypoints;
    std::vector<RigidTransformd> transforms;
    std::vector<ResidualEntry> residuals;
    bool converged = false;
    int iterations = 0;
    double objective = 0.0;
    std::vector<double> objective_history;
    std::string termination;
    std::vector<std::size_t> warm_start_fallbacks;

    double rmsResidual() const;
};

/// Residual and Jacobian of the joint registration problem over the
/// parameter vector [q_1 t_1 ... q_{S-1} t_{S-1} | Q_0 ... Q_{K-1}] with
/// quaternions in (w, x, y, z) order. Scene 0 is not parameterized.
class RegistrationProblem {
public:
    explicit RegistrationProblem(const ObservationSet& obs);

    Eigen::Index numParameters() const { return num_params_; }
    Eigen::Index numResiduals() const { return 3 * static_cast<Eigen::Index>(terms_.size()); }

    Eigen::VectorXd pack(std::span<const Point3> keypoints, std::span<const RigidTransformd> transforms) const;
    void unpack(const Eigen::VectorXd& x, std::vector<Point3>& keypoints,
                std::vector<RigidTransformd>& transforms) const;

    Eigen::VectorXd residuals(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const;
    /// Rescale every quaternion block to unit norm.
    void normalizeQuaternions(Eigen::VectorXd& x) const;

private:
    struct Term {
        std::size_t scene;
        int keypoint;
        Eigen::Vector3d target;
    };

    Eigen::Index transformOffset(std::size_t scene) const { return 7 * static_cast<Eigen::Index>(scene - 1); }
    Eigen::Index keypointOffset(int k) const { return 7 * static_cast<Eigen::Index>(num_scenes_ - 1) + 3 * k; }

    std::size_t num_scenes_ = 0;
    int num_keypoints_ = 0;
    Eigen::Index num_params_ = 0;
    std::vector<Term> terms_;
};

/// Levenberg-Marquardt solve of the joint keypoint/scene-transform problem.
/// Throws NotConnected or UnobservedKeypoint; a run that hits the iteration
/// limit returns with `converged == false`.
SparseSolution solve(const ObservationSet& obs, const SolverOptions& options = {});

}  // namespace kpl
