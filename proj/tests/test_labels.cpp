#include <doctest.h>

#include <cmath>
#include <limits>

#include "keylabel/labels.hpp"
#include "keylabel/synthetic.hpp"
#include "support.hpp"

using namespace kpl;

namespace {

CameraIntrinsics intrinsics()
{
    return {500.0, 500.0, 320.0, 240.0, 640, 480, 1000.0};
}

DenseModel patch(double z, double half = 0.05, double step = 0.002)
{
    DenseModel m;
    for (double x = -half; x <= half; x += step)
        for (double y = -half; y <= half; y += step) {
            m.points.emplace_back(x, y, z);
            m.scene_ids.push_back(0);
        }
    return m;
}

bool subset(const Mask& a, const Mask& b)
{
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        if (a.pixels[i] && !b.pixels[i])
            return false;
    return true;
}

}  // namespace

TEST_CASE("keypoints project through identity transforms")
{
    const std::vector<Point3> kps{Point3(0, 0, 1), Point3(0.2, -0.1, 2)};
    const auto labels =
        keypoint_labels(kps, RigidTransformd::identity(), RigidTransformd::identity(), intrinsics());
    REQUIRE(labels.size() == 2);
    CHECK(labels[0].pixel == Pixel(320, 240));
    CHECK(labels[0].depth == 1.0);
    CHECK(labels[0].visible);
    CHECK(labels[1].pixel.isApprox(Pixel(320 + 500 * 0.1, 240 - 500 * 0.05)));
}

TEST_CASE("world_to_camera composes the inverse camera pose")
{
    std::mt19937_64 rng(2);
    const auto ts = test::random_transform(rng);
    const auto c = test::random_transform(rng);
    const Point3 p = test::random_point(rng);
    CHECK((world_to_camera(ts, c) * p - c.inverse() * (ts * p)).norm() < 1e-12);
}

TEST_CASE("keypoints behind the camera or out of frame are not visible")
{
    const std::vector<Point3> kps{Point3(0, 0, -1), Point3(5, 0, 1)};
    const auto labels =
        keypoint_labels(kps, RigidTransformd::identity(), RigidTransformd::identity(), intrinsics());
    CHECK_FALSE(labels[0].visible);
    CHECK_FALSE(labels[1].visible);
}

TEST_CASE("keypoint occlusion against a depth frame")
{
    const auto intr = intrinsics();
    const std::vector<Point3> kps{Point3(0, 0, 1)};
    DepthImage near(640, 480, 1, 500);
    DepthImage far(640, 480, 1, 1005);
    CHECK_FALSE(keypoint_labels(kps, RigidTransformd::identity(), RigidTransformd::identity(), intr, &near)[0].visible);
    CHECK(keypoint_labels(kps, RigidTransformd::identity(), RigidTransformd::identity(), intr, &far)[0].visible);
}

TEST_CASE("synthetic keypoint labels match ground-truth pixels")
{
    synth::WorldSpec spec;
    spec.seed = 12;
    spec.scene_clouds = false;
    const auto world = synth::generate(spec);
    std::size_t compared = 0;
    for (std::size_t s = 0; s < world.scenes.size(); ++s) {
        const Scene scene = world.makeScene(s);
        for (std::size_t t = 0; t < scene.frameCount(); t += 7) {
            const DepthImage depth = scene.depth(t);
            const auto labels = keypoint_labels(world.keypoints_world, world.scene_transforms[s], scene.poses[t],
                                                scene.intrinsics, &depth);
            const auto truth = world.keypointPixels(s, t);
            for (std::size_t k = 0; k < labels.size(); ++k) {
                if (!truth[k])
                    continue;
                CHECK(labels[k].visible);
                CHECK((labels[k].pixel - *truth[k]).norm() < 0.5);
                ++compared;
                // Re-lifting the label lands back on the keypoint.
                const Point3 cam = backproject(scene.intrinsics, labels[k].pixel, labels[k].depth);
                const Point3 back = invert(world.scene_transforms[s]) * (scene.poses[t] * cam);
                CHECK((back - world.keypoints_world[k]).norm() < 1e-3);
            }
        }
    }
    CHECK(compared > 0);
}

TEST_CASE("mask of a patch in front of the camera")
{
    const auto intr = intrinsics();
    const DenseModel model = patch(1.0);
    const Mask m = mask_label(model, RigidTransformd::identity(), RigidTransformd::identity(), intr, nullptr);
    // 0.1 m at 1 m and f = 500 covers about 50 px.
    CHECK(m.at(320, 240) == 1);
    CHECK(m.at(300, 220) == 1);
    CHECK(m.at(200, 240) == 0);
    const std::size_t n = count_set(m);
    CHECK(n > 45 * 45);
    CHECK(n < 56 * 56);

    // An occluder in front of every pixel hides the whole model.
    DepthImage wall(640, 480, 1, 400);
    const Mask hidden = mask_label(model, RigidTransformd::identity(), RigidTransformd::identity(), intr, &wall);
    CHECK(count_set(hidden) == 0);

    // No occlusion slack limit yields a superset of the tested mask.
    DepthImage half(640, 480, 1, 0);
    for (int v = 0; v < 480; ++v)
        for (int u = 0; u < 320; ++u)
            half.at(u, v) = 900;
    const Mask tested = mask_label(model, RigidTransformd::identity(), RigidTransformd::identity(), intr, &half);
    LabelOptions loose;
    loose.occlusion_tolerance = std::numeric_limits<double>::infinity();
    const Mask all = mask_label(model, RigidTransformd::identity(), RigidTransformd::identity(), intr, &half, loose);
    CHECK(subset(tested, all));
    CHECK(count_set(all) > count_set(tested));

    CHECK_THROWS_AS(mask_label(DenseModel{}, RigidTransformd::identity(), RigidTransformd::identity(), intr, nullptr),
                    Error);
}

TEST_CASE("bounding boxes from keypoints and masks")
{
    std::vector<KeypointLabel> kps{{Pixel(10, 10), 1.0, true}, {Pixel(20, 20), 1.0, true}, {Pixel(500, 5), 1.0, false}};
    LabelOptions opt;
    opt.min_bbox_side = 0.0;
    const BoundingBox b = bbox_from_keypoints(kps, opt);
    CHECK(b.center == Pixel(15, 15));
    CHECK(b.side == 15.0);

    const std::vector<KeypointLabel> single{{Pixel(100, 100), 1.0, true}};
    const BoundingBox s = bbox_from_keypoints(single);
    CHECK(s.center == Pixel(100, 100));
    CHECK(s.side == 32.0);

    const std::vector<KeypointLabel> hidden{{Pixel(1, 1), 1.0, false}};
    CHECK_THROWS_AS(bbox_from_keypoints(hidden), Error);

    Mask m(50, 50);
    for (int v = 10; v <= 20; ++v)
        for (int u = 5; u <= 30; ++u)
            m.at(u, v) = 1;
    const BoundingBox mb = bbox_from_mask(m, opt);
    CHECK(mb.center.x() == doctest::Approx(17.5));
    CHECK(mb.center.y() == doctest::Approx(15.0));
    CHECK(mb.side >= 25.0);
}

TEST_CASE("morphology: closing fills a one-pixel gap and keeps the outline")
{
    Mask m(30, 30);
    for (int v = 10; v < 20; ++v)
        for (int u = 10; u < 20; ++u)
            m.at(u, v) = u != 15;
    const Mask closed = close_square(m, 3);
    CHECK(closed.at(15, 14) == 1);
    CHECK(closed.at(9, 14) == 0);
    CHECK(closed.at(20, 14) == 0);
    CHECK(subset(m, closed));
    CHECK(subset(erode_square(m, 3), m));
    CHECK(subset(m, dilate_square(m, 3)));
    CHECK(subset(m, close_disk(m, 2.0)));
}

TEST_CASE("frame stride from recording and target rates")
{
    CHECK(frame_stride(30.0, 3.0) == 10);
    CHECK(frame_stride(30.0, 0.0) == 1);
    CHECK(frame_stride(30.0, 60.0) == 1);
    CHECK(frame_stride(15.0, 2.0) == 8);
}

TEST_CASE("dataset labels every sampled frame in order")
{
    synth::WorldSpec spec;
    spec.seed = 13;
    spec.num_scenes = 2;
    spec.frames_per_scene = 25;
    spec.scene_clouds = false;
    const auto world = synth::generate(spec);
    const auto scenes = world.makeScenes();
    LabelOptions opt;
    opt.masks = false;
    const LabelDataset ds = label_dataset(world.keypoints_world, world.scene_transforms, nullptr, scenes, opt);
    const std::size_t stride = frame_stride(spec.fps, opt.sampling_hz);
    std::size_t expected = 0;
    for (const auto& s : scenes)
        expected += (s.frameCount() + stride - 1) / stride;
    CHECK(ds.records.size() + ds.failures.size() == expected);
    CHECK(ds.failures.empty());
    for (std::size_t i = 1; i < ds.records.size(); ++i) {
        const auto& a = ds.records[i - 1];
        const auto& b = ds.records[i];
        CHECK((a.scene < b.scene || (a.scene == b.scene && a.frame < b.frame)));
    }
    for (const auto& r : ds.records) {
        CHECK(r.frame % stride == 0);
        CHECK(r.keypoints.size() == world.keypoints_world.size());
        CHECK_FALSE(r.mask.has_value());
    }
}
