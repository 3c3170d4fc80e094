#include "keylabel/scene.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace kpl {

DepthImage Scene::depth(std::size_t frame) const
{
    if (frame >= frameCount())
        throw Error(Errc::OutOfBounds, "frame index " + std::to_string(frame) + " out of range", id);
    if (!depth_source)
        throw Error(Errc::MissingFile, "scene has no depth source", id);
    return depth_source(frame);
}

ColorImage Scene::color(std::size_t frame) const
{
    if (frame >= frameCount())
        throw Error(Errc::OutOfBounds, "frame index " + std::to_string(frame) + " out of range", id);
    if (!color_source)
        throw Error(Errc::MissingFile, "scene has no color source", id);
    return color_source(frame);
}

std::uint16_t lookup_depth(const DepthImage& depth, const Pixel& px, int half_window)
{
    const int cu = static_cast<int>(std::lround(px.x()));
    const int cv = static_cast<int>(std::lround(px.y()));
    std::uint16_t best = 0;
    int best_dist = std::numeric_limits<int>::max();
    for (int dv = -half_window; dv <= half_window; ++dv) {
        for (int du = -half_window; du <= half_window; ++du) {
            const int u = cu + du;
            const int v = cv + dv;
            if (!depth.inBounds(u, v))
                continue;
            const std::uint16_t d = depth.at(u, v);
            if (d == 0)
                continue;
            const int dist = du * du + dv * dv;
            if (dist < best_dist || (dist == best_dist && d < best)) {
                best_dist = dist;
                best = d;
            }
        }
    }
    return best;
}

Point3 lift_annotation(const CameraIntrinsics& intr, const RigidTransformd& camera_pose, const DepthImage& depth,
                       const Pixel& px, int half_window)
{
    if (!intr.contains(px))
        throw Error(Errc::OutOfBounds, "annotation pixel outside image bounds");
    const std::uint16_t raw = lookup_depth(depth, px, half_window);
    if (raw == 0)
        throw Error(Errc::InvalidDepth, "no valid depth near annotation pixel");
    // The fallback depth is applied along the clicked ray, not the neighbor's.
    return camera_pose * backproject(intr, px, raw);
}

Point3 lift_annotation(const Scene& scene, std::size_t frame, const Pixel& px, int half_window)
{
    const DepthImage depth = scene.depth(frame);
    return lift_annotation(scene.intrinsics, scene.poses[frame], depth, px, half_window);
}

}  // namespace kpl
