#include "keylabel/labels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kpl {

RigidTransformd world_to_camera(const RigidTransformd& scene_transform, const RigidTransformd& camera_pose)
{
    return camera_pose.inverse() * scene_transform;
}

namespace {

bool occluded(const DepthImage* depth, const CameraIntrinsics& intr, int u, int v, double z, double tolerance)
{
    if (depth == nullptr || !depth->inBounds(u, v))
        return false;
    const std::uint16_t raw = depth->at(u, v);
    if (raw == 0)
        return false;
    return static_cast<double>(raw) / intr.depth_scale < z - tolerance;
}

}  // namespace

std::vector<KeypointLabel> keypoint_labels(std::span<const Point3> keypoints, const RigidTransformd& scene_transform,
                                           const RigidTransformd& camera_pose, const CameraIntrinsics& intr,
                                           const DepthImage* depth, const LabelOptions& options)
{
    const RigidTransformd to_camera = world_to_camera(scene_transform, camera_pose);
    std::vector<KeypointLabel> labels;
    labels.reserve(keypoints.size());
    for (const auto& q : keypoints) {
        KeypointLabel label;
        const Point3 pc = to_camera * q;
        label.depth = pc.z();
        if (pc.z() > 0.0) {
            label.pixel = project(intr, pc);
            label.visible = intr.contains(label.pixel);
            if (label.visible && options.occlusion_test) {
                const int u = static_cast<int>(std::lround(label.pixel.x()));
                const int v = static_cast<int>(std::lround(label.pixel.y()));
                label.visible = !occluded(depth, intr, u, v, pc.z(), options.occlusion_tolerance);
            }
        }
        labels.push_back(label);
    }
    return labels;
}

Mask dilate_square(const Mask& mask, int kernel)
{
    const int h = kernel / 2;
    // Separable: rows then columns.
    Mask rows(mask.width, mask.height);
    for (int v = 0; v < mask.height; ++v)
        for (int u = 0; u < mask.width; ++u) {
            std::uint8_t any = 0;
            for (int d = -h; d <= h && !any; ++d)
                any = mask.inBounds(u + d, v) && mask.at(u + d, v);
            rows.at(u, v) = any;
        }
    Mask out(mask.width, mask.height);
    for (int v = 0; v < mask.height; ++v)
        for (int u = 0; u < mask.width; ++u) {
            std::uint8_t any = 0;
            for (int d = -h; d <= h && !any; ++d)
                any = rows.inBounds(u, v + d) && rows.at(u, v + d);
            out.at(u, v) = any;
        }
    return out;
}

Mask erode_square(const Mask& mask, int kernel)
{
    // Pixels outside the image count as set so borders do not erode.
    const int h = kernel / 2;
    Mask rows(mask.width, mask.height);
    for (int v = 0; v < mask.height; ++v)
        for (int u = 0; u < mask.width; ++u) {
            std::uint8_t all = 1;
            for (int d = -h; d <= h && all; ++d)
                all = !mask.inBounds(u + d, v) || mask.at(u + d, v);
            rows.at(u, v) = all;
        }
    Mask out(mask.width, mask.height);
    for (int v = 0; v < mask.height; ++v)
        for (int u = 0; u < mask.width; ++u) {
            std::uint8_t all = 1;
            for (int d = -h; d <= h && all; ++d)
                all = !rows.inBounds(u, v + d) || rows.at(u, v + d);
            out.at(u, v) = all;
        }
    return out;
}

Mask close_square(const Mask& mask, int kernel)
{
    if (kernel <= 1)
        return mask;
    return erode_square(dilate_square(mask, kernel), kernel);
}

namespace {

std::vector<std::pair<int, int>> disk_offsets(double radius)
{
    std::vector<std::pair<int, int>> offsets;
    const int r = static_cast<int>(std::floor(radius));
    for (int dv = -r; dv <= r; ++dv)
        for (int du = -r; du <= r; ++du)
            if (du * du + dv * dv <= radius * radius)
                offsets.emplace_back(du, dv);
    return offsets;
}

Mask dilate_disk(const Mask& mask, double radius)
{
    const auto offsets = disk_offsets(radius);
    Mask out(mask.width, mask.height);
    for (int v = 0; v < mask.height; ++v)
        for (int u = 0; u < mask.width; ++u) {
            if (!mask.at(u, v))
                continue;
            for (const auto& [du, dv] : offsets)
                if (out.inBounds(u + du, v + dv))
                    out.at(u + du, v + dv) = 1;
        }
    return out;
}

Mask erode_disk(const Mask& mask, double radius)
{
    const auto offsets = disk_offsets(radius);
    Mask out(mask.width, mask.height);
    for (int v = 0; v < mask.height; ++v)
        for (int u = 0; u < mask.width; ++u) {
            if (!mask.at(u, v))
                continue;
            bool all = true;
            for (const auto& [du, dv] : offsets) {
                if (mask.inBounds(u + du, v + dv) && !mask.at(u + du, v + dv)) {
                    all = false;
                    break;
                }
            }
            out.at(u, v) = all;
        }
    return out;
}

}  // namespace

Mask close_disk(const Mask& mask, double radius)
{
    if (radius < 1.0)
        return mask;
    return erode_disk(dilate_disk(mask, radius), radius);
}

Mask mask_label(const DenseModel& model, const RigidTransformd& scene_transform, const RigidTransformd& camera_pose,
                const CameraIntrinsics& intr, const DepthImage* depth, const LabelOptions& options)
{
    require_nonempty(model);
    const RigidTransformd to_camera = world_to_camera(scene_transform, camera_pose);
    // Each point marks the pixel centres within splat_radius of its projection,
    // measured at sub-pixel precision. Eroding by the same disk after the
    // closing then takes the splat back off without rounding bias.
    const double r = std::max(options.splat_radius, 0.5);
    const int reach = static_cast<int>(std::ceil(r));
    Mask splat(intr.width, intr.height);
    for (const auto& p : model.points) {
        const Point3 pc = to_camera * p;
        if (!(pc.z() > 0.0))
            continue;
        const Pixel px = project(intr, pc);
        if (!intr.contains(px))
            continue;
        const int u0 = static_cast<int>(std::lround(px.x()));
        const int v0 = static_cast<int>(std::lround(px.y()));
        if (options.occlusion_test && occluded(depth, intr, u0, v0, pc.z(), options.occlusion_tolerance))
            continue;
        for (int v = v0 - reach; v <= v0 + reach; ++v)
            for (int u = u0 - reach; u <= u0 + reach; ++u)
                if (splat.inBounds(u, v) && (Pixel(u, v) - px).squaredNorm() <= r * r)
                    splat.at(u, v) = 1;
    }
    splat = close_square(splat, options.closing_kernel);
    return options.splat_radius >= 1.0 ? erode_disk(splat, options.splat_radius) : splat;
}

BoundingBox bbox_from_keypoints(std::span<const KeypointLabel> keypoints, const LabelOptions& options)
{
    Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector2d hi = -lo;
    bool any = false;
    for (const auto& k : keypoints) {
        if (!k.visible)
            continue;
        any = true;
        lo = lo.cwiseMin(k.pixel);
        hi = hi.cwiseMax(k.pixel);
    }
    if (!any)
        throw Error(Errc::NothingToBound, "no visible keypoint to bound");
    BoundingBox box;
    box.center = (lo + hi) / 2.0;
    box.side = (hi - lo).maxCoeff() * options.bbox_scale;
    if (!(box.side > 0.0))
        box.side = options.min_bbox_side;
    return box;
}

BoundingBox bbox_from_mask(const Mask& mask, const LabelOptions&)
{
    int umin = mask.width, vmin = mask.height, umax = -1, vmax = -1;
    for (int v = 0; v < mask.height; ++v)
        for (int u = 0; u < mask.width; ++u)
            if (mask.at(u, v)) {
                umin = std::min(umin, u);
                umax = std::max(umax, u);
                vmin = std::min(vmin, v);
                vmax = std::max(vmax, v);
            }
    if (umax < 0)
        throw Error(Errc::NothingToBound, "mask is empty");
    BoundingBox box;
    box.center = {(umin + umax) / 2.0, (vmin + vmax) / 2.0};
    // Pixel squares, so a single pixel has side 1.
    box.side = static_cast<double>(std::max(umax - umin + 1, vmax - vmin + 1));
    return box;
}

std::size_t frame_stride(double fps, double sampling_hz)
{
    if (!(sampling_hz > 0.0) || !(fps > 0.0))
        return 1;
    return static_cast<std::size_t>(std::max(1L, std::lround(fps / sampling_hz)));
}

LabelDataset label_dataset(std::span<const Point3> keypoints, std::span<const RigidTransformd> transforms,
                           const DenseModel* dense, std::span<const Scene> scenes, const LabelOptions& options)
{
    if (transforms.size() != scenes.size())
        throw Error(Errc::LengthMismatch, "one scene transform per scene is required");
    LabelDataset out;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const Scene& scene = scenes[s];
        const std::size_t stride = frame_stride(scene.fps, options.sampling_hz);
        for (std::size_t t = 0; t < scene.frameCount(); t += stride) {
            LabelRecord record;
            record.scene = scene.id;
            record.frame = t;
            std::optional<DepthImage> depth;
            try {
                depth = scene.depth(t);
            } catch (const Error& e) {
                out.failures.push_back({scene.id, t, std::string("depth unavailable: ") + e.what()});
            }
            const DepthImage* depth_ptr = depth ? &*depth : nullptr;
            record.keypoints =
                keypoint_labels(keypoints, transforms[s], scene.poses[t], scene.intrinsics, depth_ptr, options);
            if (dense != nullptr && options.masks)
                record.mask = mask_label(*dense, transforms[s], scene.poses[t], scene.intrinsics, depth_ptr, options);
            try {
                if (options.bbox_source == BoxSource::Mask && record.mask)
                    record.bbox = bbox_from_mask(*record.mask, options);
                else
                    record.bbox = bbox_from_keypoints(record.keypoints, options);
            } catch (const Error& e) {
                out.failures.push_back({scene.id, t, e.what()});
            }
            out.records.push_back(std::move(record));
        }
    }
    return out;
}

}  // namespace kpl
