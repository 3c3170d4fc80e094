#include <doctest.h>

#include <algorithm>

#include "keylabel/metrics.hpp"
#include "keylabel/registration.hpp"
#include "keylabel/sparse_optimizer.hpp"
#include "keylabel/synthetic.hpp"
#include "support.hpp"

using namespace kpl;

namespace {

struct Problem {
    std::vector<Point3> keypoints;
    std::vector<RigidTransformd> transforms;
    std::vector<std::map<int, Point3>> observed;
};

/// Every scene sees every keypoint unless `visible` says otherwise.
Problem make_problem(std::uint64_t seed, int scenes, int keypoints, double noise = 0.0,
                     const std::vector<std::vector<int>>& visible = {})
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, noise);
    Problem p;
    for (int k = 0; k < keypoints; ++k)
        p.keypoints.push_back(test::random_point(rng, 0.1));
    p.transforms.push_back(RigidTransformd::identity());
    for (int s = 1; s < scenes; ++s)
        p.transforms.push_back(test::random_transform(rng, 0.5));
    for (int s = 0; s < scenes; ++s) {
        auto& obs = p.observed.emplace_back();
        std::vector<int> ids = visible.empty() ? std::vector<int>{} : visible[static_cast<std::size_t>(s)];
        if (visible.empty())
            for (int k = 0; k < keypoints; ++k)
                ids.push_back(k);
        for (int k : ids) {
            Point3 w = p.transforms[static_cast<std::size_t>(s)] * p.keypoints[static_cast<std::size_t>(k)];
            if (noise > 0)
                w += Eigen::Vector3d(n(rng), n(rng), n(rng));
            obs[k] = w;
        }
    }
    return p;
}

Scene flat_scene(const std::string& id, std::size_t frames = 2)
{
    Scene s;
    s.id = id;
    s.intrinsics = {500.0, 500.0, 320.0, 240.0, 640, 480, 1000.0};
    s.poses.assign(frames, RigidTransformd::identity());
    s.depth_source = [](std::size_t) { return DepthImage(640, 480, 1, 1000); };
    return s;
}

}  // namespace

TEST_CASE("assemble: empty annotation set gives empty observations")
{
    const std::vector<Scene> scenes{flat_scene("a"), flat_scene("b")};
    AnnotationFile file;
    file.num_keypoints = 4;
    const ObservationSet obs = assemble(file, scenes);
    CHECK(obs.numScenes() == 2);
    CHECK(obs.numObservations() == 0);
    CHECK(obs.failures.empty());
}

TEST_CASE("assemble: later click overwrites and both are kept in history")
{
    const std::vector<Scene> scenes{flat_scene("a")};
    AnnotationFile file;
    file.num_keypoints = 3;
    file.entries.push_back({"a", 0, 1, Pixel(320, 240), "", ""});
    file.entries.push_back({"a", 1, 1, Pixel(820 - 320, 240), "", ""});
    const ObservationSet obs = assemble(file, scenes);
    REQUIRE(obs.scenes[0].count(1) == 1);
    const Observation& o = obs.scenes[0].at(1);
    CHECK(o.history.size() == 2);
    CHECK(o.history[0].frame == 0);
    CHECK(o.history[1].frame == 1);
    CHECK(o.point.isApprox(Point3(0.36, 0.0, 1.0)));
}

TEST_CASE("assemble: depth failures are collected, bad references throw")
{
    Scene holes = flat_scene("a");
    holes.depth_source = [](std::size_t) { return DepthImage(640, 480, 1, 0); };
    const std::vector<Scene> scenes{holes};
    AnnotationFile file;
    file.num_keypoints = 2;
    file.entries.push_back({"a", 0, 0, Pixel(10, 10), "", ""});
    const ObservationSet obs = assemble(file, scenes);
    CHECK(obs.numObservations() == 0);
    REQUIRE(obs.failures.size() == 1);
    CHECK(obs.failures[0].entry_index == 0);

    file.entries[0].keypoint = 2;
    CHECK_THROWS_AS(assemble(file, scenes), Error);
    file.entries[0].keypoint = 0;
    file.entries[0].scene = "nope";
    CHECK_THROWS_AS(assemble(file, scenes), Error);
}

TEST_CASE("assemble: noiseless generator clicks reproduce scene-frame points")
{
    synth::WorldSpec spec;
    spec.seed = 4;
    spec.scene_clouds = false;
    const auto world = synth::generate(spec);
    const auto scenes = world.makeScenes();
    const ObservationSet obs = assemble(world.annotations, scenes);
    CHECK(obs.failures.empty());
    for (std::size_t s = 0; s < obs.numScenes(); ++s) {
        const auto truth = world.keypointsInScene(s);
        for (const auto& [k, o] : obs.scenes[s])
            CHECK((o.point - truth[static_cast<std::size_t>(k)]).norm() < 1e-9);
    }
}

TEST_CASE("connectivity: shared non-collinear keypoints make a rigid pair")
{
    const Problem p = make_problem(1, 2, 6, 0.0, {{0, 1, 2, 3, 4}, {2, 3, 4, 5}});
    const auto report = check_connectivity(ObservationSet::fromPoints(6, p.observed));
    REQUIRE(report.pairs.size() == 1);
    CHECK(report.pairs[0].shared == std::vector<int>{2, 3, 4});
    CHECK(report.pairs[0].rigid);
    CHECK(report.components.size() == 1);
    CHECK(report.solvable);
}

TEST_CASE("connectivity: three collinear shared points are not rigid")
{
    std::vector<std::map<int, Point3>> pts(2);
    for (int k = 0; k < 3; ++k) {
        pts[0][k] = Point3(0.1 * k, 0.0, 0.5);
        pts[1][k] = Point3(0.0, 0.1 * k, 0.6);
    }
    pts[0][3] = Point3(0.3, 0.2, 0.5);
    const auto report = check_connectivity(ObservationSet::fromPoints(4, pts));
    REQUIRE(report.pairs.size() == 1);
    CHECK_FALSE(report.pairs[0].rigid);
    CHECK(report.under_constrained.size() == 1);
    CHECK_FALSE(report.solvable);
    CHECK(report.components.size() == 2);
}

TEST_CASE("connectivity: a chain of rigid pairs is one component")
{
    const Problem p = make_problem(2, 3, 9, 0.0, {{0, 1, 2, 3}, {1, 2, 3, 4, 5, 6}, {4, 5, 6, 7, 8}});
    const auto report = check_connectivity(ObservationSet::fromPoints(9, p.observed));
    // Independent reachability over the rigid edges.
    std::vector<int> reach{1, 0, 0};
    for (int pass = 0; pass < 3; ++pass)
        for (const auto& link : report.pairs)
            if (link.rigid && (reach[link.a] || reach[link.b]))
                reach[link.a] = reach[link.b] = 1;
    CHECK(std::count(reach.begin(), reach.end(), 1) == 3);
    CHECK(report.components.size() == 1);
    CHECK(report.solvable);
}

TEST_CASE("solve: single scene is the gauge-only problem")
{
    const Problem p = make_problem(3, 1, 5);
    const SparseSolution sol = solve(ObservationSet::fromPoints(5, p.observed));
    CHECK(sol.transforms[0].rotation().w() == 1.0);
    CHECK(sol.transforms[0].translation() == Point3::Zero());
    for (int k = 0; k < 5; ++k)
        CHECK(sol.keypoints[static_cast<std::size_t>(k)] == p.observed[0].at(k));
    CHECK(sol.rmsResidual() == 0.0);
}

TEST_CASE("solve: noiseless three-scene world is recovered")
{
    synth::WorldSpec spec;
    spec.seed = 8;
    spec.scene_clouds = false;
    const auto world = synth::generate(spec);
    const auto scenes = world.makeScenes();
    const SparseSolution sol = solve(assemble(world.annotations, scenes));
    CHECK(sol.converged);
    CHECK(sol.objective < 1e-12);
    CHECK(sparse_model_error(sol.keypoints, world.keypoints_world, true).rms < 1e-6);
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        CHECK(rotation_geodesic(sol.transforms[s].rotationMatrix(), world.scene_transforms[s].rotationMatrix()) <
              1e-6);
        CHECK((sol.transforms[s].translation() - world.scene_transforms[s].translation()).norm() < 1e-6);
    }
    CHECK(sol.transforms[0].rotation().w() == 1.0);
    CHECK(sol.transforms[0].translation() == Point3::Zero());
}

TEST_CASE("solve: invariants of the returned solution")
{
    const Problem p = make_problem(9, 4, 8, 0.002);
    const SparseSolution sol = solve(ObservationSet::fromPoints(8, p.observed));
    for (const auto& t : sol.transforms)
        CHECK(std::abs(t.rotation().norm() - 1.0) < 1e-9);
    double sq = 0.0;
    for (const auto& r : sol.residuals)
        sq += r.error.squaredNorm();
    CHECK(sol.rmsResidual() == doctest::Approx(std::sqrt(sq / static_cast<double>(sol.residuals.size()))));
    for (std::size_t i = 1; i < sol.objective_history.size(); ++i)
        CHECK(sol.objective_history[i] <= sol.objective_history[i - 1]);

    // Deterministic.
    const SparseSolution again = solve(ObservationSet::fromPoints(8, p.observed));
    CHECK(again.objective == sol.objective);
    CHECK(again.keypoints == sol.keypoints);
}

TEST_CASE("solve: isotropic observation noise gives error on the order of sigma")
{
    const double sigma = 0.002;
    std::vector<double> rms;
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const Problem p = make_problem(seed, 3, 9, sigma);
        const SparseSolution sol = solve(ObservationSet::fromPoints(9, p.observed));
        rms.push_back(sparse_model_error(sol.keypoints, p.keypoints, true).rms);
    }
    double mean = 0.0;
    for (double r : rms)
        mean += r / static_cast<double>(rms.size());
    CHECK(mean >= 0.5 * sigma);
    CHECK(mean <= 3.0 * sigma);
}

TEST_CASE("solve: gauge invariance under a common rigid motion")
{
    const Problem p = make_problem(12, 3, 7, 0.001);
    std::mt19937_64 rng(77);
    const RigidTransformd g = test::random_transform(rng, 0.4);
    auto moved = p.observed;
    for (auto& scene : moved)
        for (auto& [k, w] : scene)
            w = g * w;
    const SparseSolution a = solve(ObservationSet::fromPoints(7, p.observed));
    const SparseSolution b = solve(ObservationSet::fromPoints(7, moved));
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = i + 1; j < 7; ++j)
            CHECK(std::abs((a.keypoints[i] - a.keypoints[j]).norm() - (b.keypoints[i] - b.keypoints[j]).norm()) <
                  1e-6);
}

TEST_CASE("solve: permuting scenes after the first leaves the model unchanged")
{
    const Problem p = make_problem(13, 4, 8, 0.001);
    auto permuted = p.observed;
    std::swap(permuted[1], permuted[3]);
    const SparseSolution a = solve(ObservationSet::fromPoints(8, p.observed));
    const SparseSolution b = solve(ObservationSet::fromPoints(8, permuted));
    for (std::size_t k = 0; k < 8; ++k)
        CHECK((a.keypoints[k] - b.keypoints[k]).norm() < 1e-6);
}

TEST_CASE("solve: refuses disconnected and unobserved problems")
{
    const Problem split = make_problem(14, 3, 8, 0.0, {{0, 1, 2, 3}, {0, 1, 2, 3}, {4, 5, 6, 7}});
    try {
        solve(ObservationSet::fromPoints(8, split.observed));
        FAIL("expected NotConnected");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::NotConnected);
    }
    const Problem missing = make_problem(15, 2, 6, 0.0, {{0, 1, 2, 3}, {0, 1, 2, 3, 4}});
    try {
        solve(ObservationSet::fromPoints(6, missing.observed));
        FAIL("expected UnobservedKeypoint");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::UnobservedKeypoint);
    }
}

TEST_CASE("solve: iteration cap returns an unconverged, flagged result")
{
    const Problem p = make_problem(16, 3, 8, 0.001);
    SolverOptions options;
    options.max_iterations = 1;
    const SparseSolution sol = solve(ObservationSet::fromPoints(8, p.observed), options);
    CHECK_FALSE(sol.converged);
    CHECK(sol.termination == "max_iterations");
    CHECK(sol.keypoints.size() == 8);
}

TEST_CASE("analytic Jacobian matches central differences")
{
    const Problem p = make_problem(17, 4, 6, 0.003, {{0, 1, 2, 3}, {1, 2, 3, 4, 5}, {0, 2, 4, 5}, {0, 1, 3, 5}});
    const RegistrationProblem problem(ObservationSet::fromPoints(6, p.observed));
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<Point3> kps;
        std::vector<RigidTransformd> ts{RigidTransformd::identity()};
        for (int k = 0; k < 6; ++k)
            kps.push_back(test::random_point(rng, 0.2));
        for (int s = 1; s < 4; ++s)
            ts.push_back(test::random_transform(rng, 0.5));
        Eigen::VectorXd x = problem.pack(kps, ts);
        // Off the unit sphere too: the residual is defined for any quaternion.
        x *= 1.0 + 0.1 * trial;
        const Eigen::MatrixXd analytic = problem.jacobian(x);
        Eigen::MatrixXd numeric(analytic.rows(), analytic.cols());
        const double h = 1e-6;
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            Eigen::VectorXd xp = x;
            Eigen::VectorXd xm = x;
            xp[j] += h;
            xm[j] -= h;
            numeric.col(j) = (problem.residuals(xp) - problem.residuals(xm)) / (2 * h);
        }
        const double rel = (analytic - numeric).norm() / numeric.norm();
        CHECK(rel < 1e-5);
    }
}

TEST_CASE("initialize: default is all identity, warm start uses Horn")
{
    const Problem p = make_problem(18, 3, 6, 0.0, {{0, 1, 2, 3, 4, 5}, {0, 1, 2, 3}, {4, 5}});
    const ObservationSet obs = ObservationSet::fromPoints(6, p.observed);
    const InitialGuess cold = initialize(obs);
    for (const auto& t : cold.transforms) {
        CHECK(t.rotation().w() == 1.0);
        CHECK(t.rotation().vec() == Eigen::Vector3d::Zero());
        CHECK(t.translation() == Point3::Zero());
    }
    for (const auto& q : cold.keypoints)
        CHECK(q == Point3::Zero());

    SolverOptions warm;
    warm.warm_start = true;
    const InitialGuess guess = initialize(obs, warm);
    std::vector<Point3> src;
    std::vector<Point3> dst;
    for (int k = 0; k < 4; ++k) {
        src.push_back(p.observed[0].at(k));
        dst.push_back(p.observed[1].at(k));
    }
    const RigidTransformd expected = horn_align(src, dst);
    CHECK(quaternion_angle(guess.transforms[1].rotation(), expected.rotation()) < 1e-12);
    CHECK((guess.transforms[1].translation() - expected.translation()).norm() < 1e-12);
    // Scene 2 only shares two keypoints: default initialization, reported.
    CHECK(guess.fallback_scenes == std::vector<std::size_t>{2});
    CHECK(guess.transforms[2].translation() == Point3::Zero());
}
