#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "keylabel/annotations.hpp"
#include "keylabel/dense.hpp"
#include "keylabel/geometry.hpp"
#include "keylabel/image.hpp"
#include "keylabel/scene.hpp"

namespace kpl::synth {

enum class PrimitiveKind { Box, Cylinder };

/// Box: size = full (x, y, z) extents, local x/y centred, z in [0, size.z].
/// Cylinder: size = (radius, unused, height), axis along local z from 0.
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Box;
    Eigen::Vector3d size = Eigen::Vector3d::Ones();
    RigidTransformd pose;  // local -> object frame
};

struct ObjectShape {
    std::vector<Primitive> parts;
};

struct NoiseSpec {
    double depth_sigma = 0.0;        ///< meters, per pixel
    double click_sigma = 0.0;        ///< pixels, per axis
    double trajectory_drift = 0.0;   ///< meters per frame random walk

    bool operator==(const NoiseSpec&) const = default;
};

struct WorldSpec {
    std::uint64_t seed = 1;
    std::string object = "box";  ///< box | cylinder | composite
    Eigen::Vector3d box_size{0.275, 0.2, 0.15};
    double cylinder_radius = 0.06;
    double cylinder_height = 0.16;
    int num_scenes = 3;
    int num_keypoints = 9;
    int frames_per_scene = 60;
    double fps = 30.0;
    CameraIntrinsics intrinsics{615.0, 615.0, 320.0, 240.0, 640, 480, 1000.0};
    double camera_distance_min = 0.55;
    double camera_distance_max = 0.65;
    double elevation_min_deg = 35.0;
    double elevation_max_deg = 55.0;
    double sweep_deg = 40.0;
    int annotation_frames = 2;
    double table_size = 0.6;
    double cloud_spacing = 0.0025;
    /// Nudge each click frame's camera (sub-millimetre) so the noiseless
    /// click lands on a pixel centre at a depth the 16-bit image holds exactly.
    bool snap_clicks = true;
    /// Sample per-scene point clouds (skip for sparse-only studies).
    bool scene_clouds = true;
    NoiseSpec noise;

    void validate() const;
    bool operator==(const WorldSpec&) const = default;
};

ObjectShape make_shape(const WorldSpec& spec);
/// Candidate keypoints in the object frame, in selection order.
std::vector<Point3> keypoint_candidates(const ObjectShape& shape);

struct RayHit {
    double t = 0.0;
    bool object = false;
    Eigen::Vector3d normal = Eigen::Vector3d::Zero();
};

struct Render {
    DepthImage depth;
    Mask object_mask;
    ColorImage color;
};

struct SyntheticScene {
    std::string id;
    RigidTransformd object_in_table;
    std::vector<RigidTransformd> cameras;        ///< true camera -> table poses
    std::vector<RigidTransformd> recorded_poses; ///< C^(t) as exported (drift applied)
    RigidTransformd object_in_scene;             ///< object -> first-camera frame
    ScenePointCloud cloud;                       ///< first-camera frame
    std::vector<std::uint8_t> cloud_is_object;
};

class SyntheticWorld {
public:
    WorldSpec spec;
    ObjectShape shape;
    std::vector<Point3> keypoints_object;
    std::vector<Point3> keypoints_world;           ///< ground-truth sparse model
    std::vector<RigidTransformd> scene_transforms; ///< ground-truth world -> scene maps
    std::vector<SyntheticScene> scenes;
    AnnotationFile annotations;

    /// First hit along a table-frame ray, if any.
    std::optional<RayHit> cast(const SyntheticScene& scene, const Point3& origin, const Eigen::Vector3d& dir) const;
    /// Render frame t of scene s from the true camera. Depth noise is applied
    /// when `noisy` (deterministic per scene and frame).
    Render render(std::size_t s, std::size_t t, bool noisy = true, bool with_color = false) const;
    /// True if the table-frame point is the first surface hit from camera t.
    bool visibleFrom(const SyntheticScene& scene, const RigidTransformd& camera, const Point3& point_table) const;
    /// Ground-truth keypoint pixels for frame t (nullopt when not visible).
    std::vector<std::optional<Pixel>> keypointPixels(std::size_t s, std::size_t t) const;
    /// Scene view with lazily rendered (cached) frames.
    Scene makeScene(std::size_t s) const;
    std::vector<Scene> makeScenes() const;
    /// Object sparse points in scene s's first-camera frame.
    std::vector<Point3> keypointsInScene(std::size_t s) const;
};

/// Deterministic for a fixed spec. Throws SpecInvalid.
SyntheticWorld generate(const WorldSpec& spec);

/// Ground-truth keypoint ids visible from the click frames of one scene.
std::vector<int> clicked_keypoints(const SyntheticWorld& world, std::size_t scene);

}  // namespace kpl::synth
