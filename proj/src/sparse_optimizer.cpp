#include "keylabel/sparse_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "keylabel/registration.hpp"

namespace kpl {

std::size_t ObservationSet::numObservations() const
{
    std::size_t n = 0;
    for (const auto& scene : scenes)
        n += scene.size();
    return n;
}

ObservationSet ObservationSet::fromPoints(int num_keypoints, const std::vector<std::map<int, Point3>>& points)
{
    ObservationSet obs;
    obs.num_keypoints = num_keypoints;
    for (std::size_t s = 0; s < points.size(); ++s) {
        obs.scene_ids.push_back("scene_" + std::to_string(s));
        auto& scene = obs.scenes.emplace_back();
        for (const auto& [k, p] : points[s])
            scene[k].point = p;
    }
    return obs;
}

ObservationSet assemble(const AnnotationFile& annotations, std::span<const Scene> scenes)
{
    ObservationSet obs;
    obs.num_keypoints = annotations.num_keypoints;
    obs.scenes.resize(scenes.size());
    std::map<std::string, std::size_t> index;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        obs.scene_ids.push_back(scenes[s].id);
        index.emplace(scenes[s].id, s);
    }

    std::map<std::pair<std::size_t, std::size_t>, DepthImage> depth_cache;
    for (std::size_t i = 0; i < annotations.entries.size(); ++i) {
        const auto& entry = annotations.entries[i];
        const std::string where = "entries[" + std::to_string(i) + "]";
        const auto it = index.find(entry.scene);
        if (it == index.end())
            throw Error(Errc::ValidationError, "annotation references unknown scene '" + entry.scene + "'", where);
        if (entry.keypoint < 0 || entry.keypoint >= annotations.num_keypoints)
            throw Error(Errc::ValidationError,
                        "keypoint id " + std::to_string(entry.keypoint) + " outside [0, " +
                            std::to_string(annotations.num_keypoints) + ")",
                        where);
        const std::size_t s = it->second;
        const Scene& scene = scenes[s];
        if (entry.frame >= scene.frameCount())
            throw Error(Errc::ValidationError, "frame index " + std::to_string(entry.frame) + " out of range", where);

        auto cached = depth_cache.find({s, entry.frame});
        if (cached == depth_cache.end())
            cached = depth_cache.emplace(std::make_pair(s, entry.frame), scene.depth(entry.frame)).first;

        try {
            const Point3 p = lift_annotation(scene.intrinsics, scene.poses[entry.frame], cached->second, entry.pixel);
            auto& observation = obs.scenes[s][entry.keypoint];
            observation.point = p;
            observation.history.push_back({entry.frame, entry.pixel});
        } catch (const Error& e) {
            if (e.code() != Errc::InvalidDepth && e.code() != Errc::OutOfBounds)
                throw;
            obs.failures.push_back({i, entry.scene, entry.keypoint, entry.frame, e.what()});
        }
    }
    return obs;
}

double line_spread(std::span<const Point3> points)
{
    if (points.size() < 2)
        return 0.0;
    Point3 mean = Point3::Zero();
    for (const auto& p : points)
        mean += p;
    mean /= static_cast<double>(points.size());
    Eigen::Matrix3Xd centered(3, points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        centered.col(static_cast<Eigen::Index>(i)) = points[i] - mean;
    Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(centered);
    const auto& sv = svd.singularValues();
    // Residual energy after removing the dominant direction.
    const double off_line = std::sqrt(sv[1] * sv[1] + (sv.size() > 2 ? sv[2] * sv[2] : 0.0));
    return off_line / std::sqrt(static_cast<double>(points.size()));
}

bool non_collinear(std::span<const Point3> points, double tolerance)
{
    return points.size() >= 3 && line_spread(points) > tolerance;
}

namespace {

struct DisjointSets {
    std::vector<std::size_t> parent;
    explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t i)
    {
        while (parent[i] != i)
            i = parent[i] = parent[parent[i]];
        return i;
    }
    void merge(std::size_t a, std::size_t b)
    {
        a = find(a);
        b = find(b);
        if (a != b)
            parent[std::max(a, b)] = std::min(a, b);
    }
};

std::vector<int> shared_keypoints(const std::map<int, Observation>& a, const std::map<int, Observation>& b)
{
    std::vector<int> shared;
    for (const auto& [k, _] : a)
        if (b.count(k))
            shared.push_back(k);
    return shared;
}

}  // namespace

ConnectivityReport check_connectivity(const ObservationSet& obs, double collinearity_tolerance)
{
    ConnectivityReport report;
    const std::size_t n = obs.numScenes();
    DisjointSets sets(n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            ScenePairLink link;
            link.a = a;
            link.b = b;
            link.shared = shared_keypoints(obs.scenes[a], obs.scenes[b]);
            if (link.shared.size() >= 3) {
                std::vector<Point3> pa;
                std::vector<Point3> pb;
                for (int k : link.shared) {
                    pa.push_back(obs.scenes[a].at(k).point);
                    pb.push_back(obs.scenes[b].at(k).point);
                }
                link.spread = std::min(line_spread(pa), line_spread(pb));
                link.rigid = link.spread > collinearity_tolerance;
            }
            if (link.rigid)
                sets.merge(a, b);
            else if (!link.shared.empty())
                report.under_constrained.emplace_back(a, b);
            report.pairs.push_back(std::move(link));
        }
    }

    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t s = 0; s < n; ++s)
        groups[sets.find(s)].push_back(s);
    for (auto& [_, members] : groups)
        report.components.push_back(std::move(members));

    bool every_scene_observed = true;
    for (const auto& scene : obs.scenes)
        every_scene_observed = every_scene_observed && !scene.empty();
    report.solvable = n > 0 && report.components.size() == 1 && every_scene_observed;
    return report;
}

InitialGuess initialize(const ObservationSet& obs, const SolverOptions& options)
{
    InitialGuess guess;
    const std::size_t n = obs.numScenes();
    guess.keypoints.assign(static_cast<std::size_t>(obs.num_keypoints), Point3::Zero());
    guess.transforms.assign(n, RigidTransformd::identity());
    if (!options.warm_start || n == 0)
        return guess;

    const ConnectivityReport report = check_connectivity(obs, options.collinearity_tolerance);
    std::vector<std::vector<std::size_t>> adjacency(n);
    for (const auto& link : report.pairs) {
        if (link.rigid) {
            adjacency[link.a].push_back(link.b);
            adjacency[link.b].push_back(link.a);
        }
    }

    std::vector<bool> placed_kp(static_cast<std::size_t>(obs.num_keypoints), false);
    std::vector<bool> visited(n, false);
    for (const auto& [k, o] : obs.scenes[0]) {
        guess.keypoints[static_cast<std::size_t>(k)] = o.point;
        placed_kp[static_cast<std::size_t>(k)] = true;
    }

    std::queue<std::size_t> frontier;
    frontier.push(0);
    visited[0] = true;
    while (!frontier.empty()) {
        const std::size_t cur = frontier.front();
        frontier.pop();
        for (std::size_t next : adjacency[cur]) {
            if (visited[next])
                continue;
            std::vector<Point3> src;
            std::vector<Point3> dst;
            for (const auto& [k, o] : obs.scenes[next]) {
                if (placed_kp[static_cast<std::size_t>(k)]) {
                    src.push_back(guess.keypoints[static_cast<std::size_t>(k)]);
                    dst.push_back(o.point);
                }
            }
            try {
                guess.transforms[next] = horn_align(src, dst, options.collinearity_tolerance);
            } catch (const Error&) {
                continue;
            }
            visited[next] = true;
            const RigidTransformd to_world = guess.transforms[next].inverse();
            for (const auto& [k, o] : obs.scenes[next]) {
                if (!placed_kp[static_cast<std::size_t>(k)]) {
                    guess.keypoints[static_cast<std::size_t>(k)] = to_world * o.point;
                    placed_kp[static_cast<std::size_t>(k)] = true;
                }
            }
            frontier.push(next);
        }
    }
    for (std::size_t s = 1; s < n; ++s)
        if (!visited[s])
            guess.fallback_scenes.push_back(s);
    return guess;
}

double SparseSolution::rmsResidual() const
{
    if (residuals.empty())
        return 0.0;
    double sq = 0.0;
    for (const auto& r : residuals)
        sq += r.error.squaredNorm();
    return std::sqrt(sq / static_cast<double>(residuals.size()));
}

RegistrationProblem::RegistrationProblem(const ObservationSet& obs)
    : num_scenes_(obs.numScenes()), num_keypoints_(obs.num_keypoints)
{
    if (num_scenes_ == 0)
        throw Error(Errc::InvalidArgument, "registration problem needs at least one scene");
    num_params_ = 7 * static_cast<Eigen::Index>(num_scenes_ - 1) + 3 * static_cast<Eigen::Index>(num_keypoints_);
    for (std::size_t s = 0; s < num_scenes_; ++s)
        for (const auto& [k, o] : obs.scenes[s])
            terms_.push_back({s, k, o.point});
}

Eigen::VectorXd RegistrationProblem::pack(std::span<const Point3> keypoints,
                                          std::span<const RigidTransformd> transforms) const
{
    Eigen::VectorXd x(num_params_);
    for (std::size_t s = 1; s < num_scenes_; ++s) {
        x.segment<4>(transformOffset(s)) = transforms[s].wxyz();
        x.segment<3>(transformOffset(s) + 4) = transforms[s].translation();
    }
    for (int k = 0; k < num_keypoints_; ++k)
        x.segment<3>(keypointOffset(k)) = keypoints[static_cast<std::size_t>(k)];
    return x;
}

void RegistrationProblem::unpack(const Eigen::VectorXd& x, std::vector<Point3>& keypoints,
                                 std::vector<RigidTransformd>& transforms) const
{
    keypoints.resize(static_cast<std::size_t>(num_keypoints_));
    transforms.assign(num_scenes_, RigidTransformd::identity());
    for (std::size_t s = 1; s < num_scenes_; ++s)
        transforms[s] = RigidTransformd::fromWxyz(x.segment<4>(transformOffset(s)),
                                                  x.segment<3>(transformOffset(s) + 4));
    for (int k = 0; k < num_keypoints_; ++k)
        keypoints[static_cast<std::size_t>(k)] = x.segment<3>(keypointOffset(k));
}

void RegistrationProblem::normalizeQuaternions(Eigen::VectorXd& x) const
{
    for (std::size_t s = 1; s < num_scenes_; ++s)
        x.segment<4>(transformOffset(s)).normalize();
}

namespace {

Eigen::Quaterniond unit_quaternion(const Eigen::Vector4d& wxyz)
{
    const Eigen::Vector4d u = wxyz.normalized();
    return Eigen::Quaterniond(u[0], u[1], u[2], u[3]);
}

}  // namespace

Eigen::VectorXd RegistrationProblem::residuals(const Eigen::VectorXd& x) const
{
    Eigen::VectorXd r(numResiduals());
    std::vector<Eigen::Matrix3d> rotations(num_scenes_, Eigen::Matrix3d::Identity());
    for (std::size_t s = 1; s < num_scenes_; ++s)
        rotations[s] = unit_quaternion(x.segment<4>(transformOffset(s))).toRotationMatrix();

    for (std::size_t i = 0; i < terms_.size(); ++i) {
        const Term& term = terms_[i];
        const Eigen::Vector3d q = x.segment<3>(keypointOffset(term.keypoint));
        Eigen::Vector3d mapped = q;
        if (term.scene > 0)
            mapped = rotations[term.scene] * q + x.segment<3>(transformOffset(term.scene) + 4);
        r.segment<3>(3 * static_cast<Eigen::Index>(i)) = mapped - term.target;
    }
    return r;
}

Eigen::MatrixXd RegistrationProblem::jacobian(const Eigen::VectorXd& x) const
{
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(numResiduals(), num_params_);
    for (std::size_t i = 0; i < terms_.size(); ++i) {
        const Term& term = terms_[i];
        const Eigen::Index row = 3 * static_cast<Eigen::Index>(i);
        const Eigen::Index kcol = keypointOffset(term.keypoint);
        if (term.scene == 0) {
            jac.block<3, 3>(row, kcol).setIdentity();
            continue;
        }
        const Eigen::Index tcol = transformOffset(term.scene);
        const Eigen::Vector4d raw = x.segment<4>(tcol);
        const double norm = raw.norm();
        const Eigen::Vector4d u = raw / norm;
        const double w = u[0];
        const Eigen::Vector3d v = u.tail<3>();
        const Eigen::Vector3d p = x.segment<3>(kcol);

        // d(R(u) p)/du using R p = p + 2w (v x p) + 2 v x (v x p).
        Eigen::Matrix<double, 3, 4> d_du;
        d_du.col(0) = 2.0 * v.cross(p);
        d_du.rightCols<3>() = -2.0 * w * skew(p) +
                              2.0 * (v.dot(p) * Eigen::Matrix3d::Identity() + v * p.transpose() -
                                     2.0 * p * v.transpose());
        // Chain through u = q / |q|.
        const Eigen::Matrix4d du_dq = (Eigen::Matrix4d::Identity() - u * u.transpose()) / norm;

        jac.block<3, 4>(row, tcol) = d_du * du_dq;
        jac.block<3, 3>(row, tcol + 4).setIdentity();
        jac.block<3, 3>(row, kcol) = Eigen::Quaterniond(u[0], u[1], u[2], u[3]).toRotationMatrix();
    }
    return jac;
}

namespace {

void fill_residuals(const ObservationSet& obs, SparseSolution& solution)
{
    solution.residuals.clear();
    double sq = 0.0;
    for (std::size_t s = 0; s < obs.numScenes(); ++s) {
        for (const auto& [k, o] : obs.scenes[s]) {
            const Eigen::Vector3d e =
                solution.transforms[s] * solution.keypoints[static_cast<std::size_t>(k)] - o.point;
            solution.residuals.push_back({s, k, e});
            sq += e.squaredNorm();
        }
    }
    solution.objective = sq;
}

}  // namespace

SparseSolution solve(const ObservationSet& obs, const SolverOptions& options)
{
    const ConnectivityReport report = check_connectivity(obs, options.collinearity_tolerance);
    if (!report.solvable)
        throw Error(Errc::NotConnected, "scenes are not rigidly connected through shared keypoints");

    std::vector<int> unobserved;
    for (int k = 0; k < obs.num_keypoints; ++k) {
        bool seen = false;
        for (const auto& scene : obs.scenes)
            seen = seen || scene.count(k) > 0;
        if (!seen)
            unobserved.push_back(k);
    }
    if (!unobserved.empty())
        throw Error(Errc::UnobservedKeypoint,
                    "keypoint " + std::to_string(unobserved.front()) + " is not annotated in any scene");

    SparseSolution solution;
    const InitialGuess guess = initialize(obs, options);
    solution.warm_start_fallbacks = guess.fallback_scenes;

    if (obs.numScenes() == 1) {
        // Gauge-only problem: the model is the single scene's observation.
        solution.transforms = {RigidTransformd::identity()};
        solution.keypoints.assign(static_cast<std::size_t>(obs.num_keypoints), Point3::Zero());
        for (const auto& [k, o] : obs.scenes[0])
            solution.keypoints[static_cast<std::size_t>(k)] = o.point;
        solution.converged = true;
        solution.termination = "closed_form";
        fill_residuals(obs, solution);
        solution.objective_history = {solution.objective};
        return solution;
    }

    const RegistrationProblem problem(obs);
    Eigen::VectorXd x = problem.pack(guess.keypoints, guess.transforms);
    Eigen::VectorXd r = problem.residuals(x);
    double cost = r.squaredNorm();
    solution.objective_history.push_back(cost);

    Eigen::MatrixXd jac = problem.jacobian(x);
    Eigen::MatrixXd normal = jac.transpose() * jac;
    Eigen::VectorXd gradient = jac.transpose() * r;
    double lambda = options.initial_damping * std::max(normal.diagonal().maxCoeff(), 1e-12);
    double nu = 2.0;

    solution.termination = "max_iterations";
    int iteration = 0;
    for (; iteration < options.max_iterations; ++iteration) {
        if (cost == 0.0) {
            solution.converged = true;
            solution.termination = "zero_objective";
            break;
        }
        Eigen::MatrixXd damped = normal;
        damped.diagonal().array() += lambda;
        const Eigen::VectorXd step = damped.ldlt().solve(-gradient);

        if (step.norm() < options.step_tolerance) {
            solution.converged = true;
            solution.termination = "step_tolerance";
            break;
        }

        Eigen::VectorXd candidate = x + step;
        problem.normalizeQuaternions(candidate);
        const Eigen::VectorXd r_new = problem.residuals(candidate);
        const double cost_new = r_new.squaredNorm();
        const double predicted = step.dot(lambda * step - gradient);

        if (cost_new < cost) {
            const double rel = (cost - cost_new) / cost;
            const double rho = predicted > 0.0 ? (cost - cost_new) / predicted : 1.0;
            x = std::move(candidate);
            r = r_new;
            cost = cost_new;
            solution.objective_history.push_back(cost);
            jac = problem.jacobian(x);
            normal = jac.transpose() * jac;
            gradient = jac.transpose() * r;
            lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
            nu = 2.0;
            if (rel < options.relative_decrease_tolerance) {
                ++iteration;
                solution.converged = true;
                solution.termination = "relative_decrease";
                break;
            }
        } else {
            lambda *= nu;
            nu *= 2.0;
            if (!std::isfinite(lambda) || lambda > 1e32 * std::max(1.0, normal.diagonal().maxCoeff())) {
                ++iteration;
                solution.converged = true;
                solution.termination = "no_further_decrease";
                break;
            }
        }
    }
    solution.iterations = iteration;
    problem.unpack(x, solution.keypoints, solution.transforms);
    solution.transforms[0] = RigidTransformd::identity();
    fill_residuals(obs, solution);
    return solution;
}

}  // namespace kpl
