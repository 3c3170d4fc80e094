#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "keylabel/dense.hpp"
#include "keylabel/geometry.hpp"
#include "keylabel/image.hpp"
#include "keylabel/scene.hpp"
#include "keylabel/sparse_optimizer.hpp"

namespace kpl {

struct KeypointLabel {
    Pixel pixel = Pixel::Zero();
    double depth = 0.0;
    bool visible = false;
};

/// Upright square: centre and side length in pixels.
struct BoundingBox {
    Pixel center = Pixel::Zero();
    double side = 0.0;

    bool operator==(const BoundingBox&) const = default;
};

enum class BoxSource { Keypoints, Mask };

struct LabelOptions {
    /// Occlusion slack (meters) for both keypoints and mask points.
    double occlusion_tolerance = 0.015;
    bool occlusion_test = true;
    double splat_radius = 2.0;
    int closing_kernel = 5;
    double bbox_scale = 1.5;
    double min_bbox_side = 32.0;
    BoxSource bbox_source = BoxSource::Keypoints;
    /// Target labeling rate; <= 0 labels every frame.
    double sampling_hz = 3.0;
    bool masks = true;
};

/// World -> camera-t map for scene s: (C^(t))^-1 composed with the
/// world->scene transform.
RigidTransformd world_to_camera(const RigidTransformd& scene_transform, const RigidTransformd& camera_pose);

/// Project every keypoint; `depth` enables the occlusion test.
std::vector<KeypointLabel> keypoint_labels(std::span<const Point3> keypoints, const RigidTransformd& scene_transform,
                                           const RigidTransformd& camera_pose, const CameraIntrinsics& intr,
                                           const DepthImage* depth = nullptr, const LabelOptions& options = {});

/// Depth-tested point splatting followed by a closing. Throws EmptyModel.
Mask mask_label(const DenseModel& model, const RigidTransformd& scene_transform, const RigidTransformd& camera_pose,
                const CameraIntrinsics& intr, const DepthImage* depth, const LabelOptions& options = {});

/// Square around the visible keypoints scaled by bbox_scale about its centre,
/// never smaller than min_bbox_side. Throws NothingToBound.
BoundingBox bbox_from_keypoints(std::span<const KeypointLabel> keypoints, const LabelOptions& options = {});
/// Tight upright square around the mask pixels (side = larger extent).
BoundingBox bbox_from_mask(const Mask& mask, const LabelOptions& options = {});

/// Binary morphology helpers (square kernel of odd size k, or disk of radius r).
Mask dilate_square(const Mask& mask, int kernel);
Mask erode_square(const Mask& mask, int kernel);
Mask close_square(const Mask& mask, int kernel);
Mask close_disk(const Mask& mask, double radius);

struct LabelRecord {
    std::string scene;
    std::size_t frame = 0;
    std::vector<KeypointLabel> keypoints;
    std::optional<Mask> mask;
    std::optional<BoundingBox> bbox;
};

struct FrameFailure {
    std::string scene;
    std::size_t frame = 0;
    std::string reason;
};

struct LabelDataset {
    std::vector<LabelRecord> records;
    std::vector<FrameFailure> failures;
};

/// Frame stride for a recording rate and a target labeling rate.
std::size_t frame_stride(double fps, double sampling_hz);

/// Label the sampled frames of every scene. `transforms[s]` pairs with
/// `scenes[s]`. Records are ordered by (scene, frame).
LabelDataset label_dataset(std::span<const Point3> keypoints, std::span<const RigidTransformd> transforms,
                           const DenseModel* dense, std::span<const Scene> scenes, const LabelOptions& options = {});

}  // namespace kpl
