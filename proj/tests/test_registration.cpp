#include <doctest.h>

#include "keylabel/metrics.hpp"
#include "keylabel/registration.hpp"
#include "keylabel/synthetic.hpp"
#include "support.hpp"

using namespace kpl;

namespace {

std::vector<Point3> cloud(std::mt19937_64& rng, int n)
{
    std::vector<Point3> pts;
    for (int i = 0; i < n; ++i)
        pts.push_back(test::random_point(rng, 0.15));
    return pts;
}

std::vector<Point3> moved(const RigidTransformd& t, const std::vector<Point3>& pts)
{
    std::vector<Point3> out;
    for (const auto& p : pts)
        out.push_back(t * p);
    return out;
}

}  // namespace

TEST_CASE("horn_align: identical point sets give the identity")
{
    std::mt19937_64 rng(1);
    const auto pts = cloud(rng, 6);
    const RigidTransformd t = horn_align(pts, pts);
    CHECK(quaternion_angle(t.rotation(), Eigen::Quaterniond::Identity()) < 1e-10);
    CHECK(t.translation().norm() < 1e-12);
    CHECK(t.rotation().w() >= 0.0);
}

TEST_CASE("horn_align: quarter turn about z plus unit x shift")
{
    const std::vector<Point3> src{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    const RigidTransformd truth(Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ())),
                                Eigen::Vector3d(1, 0, 0));
    const RigidTransformd t = horn_align(src, moved(truth, src));
    CHECK((t.rotationMatrix() - truth.rotationMatrix()).norm() < 1e-10);
    CHECK((t.translation() - Eigen::Vector3d(1, 0, 0)).norm() < 1e-10);
    // Expected image of (1,0,0) written out by hand.
    CHECK((t * Point3(1, 0, 0) - Point3(1, 1, 0)).norm() < 1e-10);
}

TEST_CASE("horn_align: noisy correspondences stay close to the truth")
{
    const double sigma = 0.001;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n(0.0, sigma);
        const auto src = cloud(rng, 8);
        const RigidTransformd truth = test::random_transform(rng, 0.5);
        auto dst = moved(truth, src);
        for (auto& p : dst)
            p += Eigen::Vector3d(n(rng), n(rng), n(rng));
        const RigidTransformd t = horn_align(src, dst);
        CHECK((t.translation() - truth.translation()).norm() < 0.005);
        CHECK(rotation_geodesic(t.rotationMatrix(), truth.rotationMatrix()) < 0.02);
    }
}

TEST_CASE("horn_align: minimizes the squared residual against perturbations")
{
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 0.01);
    const auto src = cloud(rng, 7);
    auto dst = moved(test::random_transform(rng), src);
    for (auto& p : dst)
        p += Eigen::Vector3d(n(rng), n(rng), n(rng));
    const RigidTransformd best = horn_align(src, dst);
    auto cost = [&](const RigidTransformd& t) {
        double c = 0.0;
        for (std::size_t i = 0; i < src.size(); ++i)
            c += (t * src[i] - dst[i]).squaredNorm();
        return c;
    };
    const double c0 = cost(best);
    for (int i = 0; i < 200; ++i) {
        const RigidTransformd nudge = test::random_transform(rng, 1e-3);
        const Eigen::Quaterniond small = Eigen::Quaterniond::Identity().slerp(0.01, nudge.rotation());
        CHECK(cost(compose(RigidTransformd(small, nudge.translation()), best)) >= c0 - 1e-15);
    }
}

TEST_CASE("horn_align: conjugating both sides composes the transforms")
{
    std::mt19937_64 rng(4);
    const auto src = cloud(rng, 5);
    const RigidTransformd a = test::random_transform(rng);
    const RigidTransformd b = test::random_transform(rng);
    const RigidTransformd t = horn_align(moved(a, src), moved(b, src));
    const RigidTransformd expected = compose(b, invert(a));
    CHECK(quaternion_angle(t.rotation(), expected.rotation()) < 1e-9);
    CHECK((t.translation() - expected.translation()).norm() < 1e-9);
}

TEST_CASE("horn_align: degenerate and malformed input")
{
    const std::vector<Point3> line{{0, 0, 0}, {0.1, 0, 0}, {0.2, 0, 0}, {0.3, 0, 0}};
    auto expect = [](auto&& fn, Errc code) {
        try {
            fn();
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == code);
        }
    };
    expect([&] { horn_align(line, line); }, Errc::Degenerate);
    const std::vector<Point3> two{{0, 0, 0}, {1, 0, 0}};
    expect([&] { horn_align(two, two); }, Errc::TooFewPoints);
    const std::vector<Point3> three{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    expect([&] { horn_align(three, two); }, Errc::LengthMismatch);
}

TEST_CASE("register_new_scene recovers a generator scene transform")
{
    synth::WorldSpec spec;
    spec.seed = 31;
    spec.num_scenes = 4;
    spec.scene_clouds = false;
    const auto world = synth::generate(spec);
    const auto scenes = world.makeScenes();
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        AnnotationFile clicks;
        clicks.num_keypoints = world.annotations.num_keypoints;
        for (const auto& e : world.annotations.entries)
            if (e.scene == scenes[s].id)
                clicks.entries.push_back(e);
        const RegistrationResult r = register_new_scene(world.keypoints_world, clicks, scenes[s]);
        const RigidTransformd& truth = world.scene_transforms[s];
        CHECK(rotation_geodesic(r.transform.rotationMatrix(), truth.rotationMatrix()) < 1e-6);
        CHECK((r.transform.translation() - truth.translation()).norm() < 1e-6);
        CHECK(r.rms < 1e-6);
        CHECK(r.keypoint_ids.size() == r.residuals.size());
    }
}
