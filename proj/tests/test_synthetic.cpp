#include <doctest.h>

#include <cmath>

#include "keylabel/pipeline.hpp"
#include "keylabel/synthetic.hpp"
#include "support.hpp"

using namespace kpl;

namespace {

synth::WorldSpec small_spec(std::uint64_t seed)
{
    synth::WorldSpec spec;
    spec.seed = seed;
    spec.num_scenes = 2;
    spec.frames_per_scene = 8;
    return spec;
}

}  // namespace

TEST_CASE("generation is deterministic down to the bytes on disk")
{
    test::TempDir a("sim_a");
    test::TempDir b("sim_b");
    const auto spec = small_spec(3);
    pipeline::simulate(spec, a.path());
    pipeline::simulate(spec, b.path());
    CHECK(pipeline::sha256_tree(a.path()) == pipeline::sha256_tree(b.path()));

    test::TempDir c("sim_c");
    pipeline::simulate(small_spec(4), c.path());
    CHECK(pipeline::sha256_tree(a.path()) != pipeline::sha256_tree(c.path()));
}

TEST_CASE("noiseless table depth equals the analytic ray-plane distance")
{
    auto spec = small_spec(5);
    spec.scene_clouds = false;
    const auto world = synth::generate(spec);
    const auto& intr = spec.intrinsics;
    std::size_t checked = 0;
    for (std::size_t t : {std::size_t{0}, std::size_t{5}}) {
        const synth::Render r = world.render(0, t, false);
        const RigidTransformd& cam = world.scenes[0].cameras[t];
        for (int v = 0; v < intr.height; v += 13) {
            for (int u = 0; u < intr.width; u += 13) {
                const std::uint16_t raw = r.depth.at(u, v);
                if (raw == 0 || r.object_mask.at(u, v))
                    continue;
                const Eigen::Vector3d dir = cam.rotationMatrix() *
                                            Eigen::Vector3d((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
                const double s = -cam.translation().z() / dir.z();
                CHECK(std::abs(raw - s * intr.depth_scale) <= 0.5 + 1e-6);
                ++checked;
            }
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("object mask and depth agree with the keypoint visibility oracle")
{
    auto spec = small_spec(6);
    spec.scene_clouds = false;
    const auto world = synth::generate(spec);
    const synth::Render r = world.render(1, 3, false);
    const auto pixels = world.keypointPixels(1, 3);
    std::size_t visible = 0;
    for (const auto& px : pixels) {
        if (!px)
            continue;
        ++visible;
        const int u = static_cast<int>(std::lround(px->x()));
        const int v = static_cast<int>(std::lround(px->y()));
        // Keypoints sit on object corners or edges; something object-coloured is adjacent.
        bool near_object = false;
        for (int dv = -1; dv <= 1; ++dv)
            for (int du = -1; du <= 1; ++du)
                near_object = near_object || (r.object_mask.inBounds(u + du, v + dv) && r.object_mask.at(u + du, v + dv));
        CHECK(near_object);
    }
    CHECK(visible > 0);
}

TEST_CASE("noiseless clicks land exactly on visible keypoints")
{
    auto spec = small_spec(7);
    spec.scene_clouds = false;
    const auto world = synth::generate(spec);
    REQUIRE_FALSE(world.annotations.entries.empty());
    for (const auto& e : world.annotations.entries) {
        std::size_t s = 0;
        while (world.scenes[s].id != e.scene)
            ++s;
        const auto truth = world.keypointPixels(s, e.frame)[static_cast<std::size_t>(e.keypoint)];
        REQUIRE(truth.has_value());
        CHECK((e.pixel - *truth).norm() < 1e-9);
    }
    // Every scene has enough clicks to be tied rigidly to the others.
    for (std::size_t s = 0; s < world.scenes.size(); ++s)
        CHECK(synth::clicked_keypoints(world, s).size() >= 3);
}

TEST_CASE("click noise perturbs clicks by about sigma")
{
    auto spec = small_spec(8);
    spec.scene_clouds = false;
    spec.noise.click_sigma = 2.0;
    const auto world = synth::generate(spec);
    double sq = 0.0;
    std::size_t n = 0;
    for (const auto& e : world.annotations.entries) {
        std::size_t s = 0;
        while (world.scenes[s].id != e.scene)
            ++s;
        const auto truth = world.keypointPixels(s, e.frame)[static_cast<std::size_t>(e.keypoint)];
        REQUIRE(truth.has_value());
        sq += (e.pixel - *truth).squaredNorm();
        ++n;
    }
    const double per_axis = std::sqrt(sq / (2.0 * static_cast<double>(n)));
    CHECK(per_axis > 0.5);
    CHECK(per_axis < 4.0);
}

TEST_CASE("generator ground truth is self-consistent")
{
    const auto world = synth::generate(small_spec(9));
    REQUIRE(world.scene_transforms.size() == 2);
    CHECK(world.scene_transforms[0].translation().norm() < 1e-12);
    for (std::size_t s = 0; s < 2; ++s) {
        const auto in_scene = world.keypointsInScene(s);
        for (std::size_t k = 0; k < in_scene.size(); ++k)
            CHECK((world.scene_transforms[s] * world.keypoints_world[k] - in_scene[k]).norm() < 1e-9);
        CHECK(world.scenes[s].cloud.points.size() == world.scenes[s].cloud_is_object.size());
        CHECK(world.scenes[s].recorded_poses[0].translation().norm() < 1e-12);
    }
}

TEST_CASE("invalid specs are rejected")
{
    auto expect_invalid = [](synth::WorldSpec spec) {
        try {
            synth::generate(spec);
            FAIL("expected SpecInvalid");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::SpecInvalid);
        }
    };
    auto spec = small_spec(1);
    spec.num_scenes = 0;
    expect_invalid(spec);
    spec = small_spec(1);
    spec.object = "teapot";
    expect_invalid(spec);
    spec = small_spec(1);
    spec.noise.click_sigma = -1;
    expect_invalid(spec);
    spec = small_spec(1);
    spec.elevation_max_deg = 95;
    expect_invalid(spec);
}
