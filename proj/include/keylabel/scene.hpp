#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "keylabel/geometry.hpp"
#include "keylabel/image.hpp"

namespace kpl {

/// One RGB-D recording. `poses[t]` is C^(t): it maps camera-t coordinates
/// into the frame of the scene's first camera, so poses[0] is identity.
/// Frames are fetched lazily through the sources.
struct Scene {
    std::string id;
    CameraIntrinsics intrinsics;
    std::vector<RigidTransformd> poses;
    double fps = 30.0;

    std::function<DepthImage(std::size_t)> depth_source;
    std::function<ColorImage(std::size_t)> color_source;
    /// Path of the stored color file, when frames live on disk.
    std::function<std::filesystem::path(std::size_t)> color_path;

    std::size_t frameCount() const { return poses.size(); }
    DepthImage depth(std::size_t frame) const;
    ColorImage color(std::size_t frame) const;
};

/// Raw depth lookup with the annotation fallback: the nearest valid depth
/// inside a (2*half_window+1)^2 window centred on the rounded click, ties
/// broken by smaller depth. Returns 0 if nothing valid is found.
std::uint16_t lookup_depth(const DepthImage& depth, const Pixel& px, int half_window = 2);

/// Lift a click on frame `frame` into the scene's first-camera frame.
Point3 lift_annotation(const Scene& scene, std::size_t frame, const Pixel& px, int half_window = 2);

/// Same, with the depth frame already in hand.
Point3 lift_annotation(const CameraIntrinsics& intr, const RigidTransformd& camera_pose, const DepthImage& depth,
                       const Pixel& px, int half_window = 2);

}  // namespace kpl
