#include "keylabel/dense.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include <Eigen/Eigenvalues>

#include "keylabel/spatial_grid.hpp"

namespace kpl {

void estimate_normals(ScenePointCloud& cloud, int neighbours, const Point3& viewpoint)
{
    const std::size_t n = cloud.points.size();
    cloud.normals.assign(n, Eigen::Vector3d::UnitZ());
    cloud.curvature.assign(n, 0.0);
    if (n < 3)
        return;

    // Cell size from the bounding box density; only affects speed.
    Eigen::AlignedBox3d bounds;
    for (const auto& p : cloud.points)
        bounds.extend(p);
    const double cell = std::max(bounds.diagonal().norm() * std::sqrt(neighbours / static_cast<double>(n)), 1e-4);
    const SpatialGrid grid(cloud.points, cell);

    for (std::size_t i = 0; i < n; ++i) {
        const auto idx = grid.nearest(cloud.points[i], static_cast<std::size_t>(neighbours));
        Point3 mean = Point3::Zero();
        for (auto j : idx)
            mean += cloud.points[j];
        mean /= static_cast<double>(idx.size());
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (auto j : idx) {
            const Point3 d = cloud.points[j] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        Eigen::Vector3d normal = eig.eigenvectors().col(0);
        if (normal.dot(viewpoint - cloud.points[i]) < 0.0)
            normal = -normal;
        cloud.normals[i] = normal.normalized();
        const double total = eig.eigenvalues().sum();
        cloud.curvature[i] = total > 0.0 ? std::max(eig.eigenvalues()[0], 0.0) / total : 0.0;
    }
}

void GrowthParams::validate() const
{
    if (!(neighbor_radius > 0.0) || !(smoothness_angle > 0.0) || !(max_seed_distance > 0.0) ||
        min_region_size == 0 || !(curvature_threshold > 0.0))
        throw Error(Errc::ValidationError, "growth parameters must be strictly positive");
}

std::vector<std::size_t> grow_region(const ScenePointCloud& cloud, std::span<const Point3> seeds,
                                     const GrowthParams& params)
{
    params.validate();
    if (cloud.points.empty() || seeds.empty())
        throw Error(Errc::NoSeedAttached, "no seed lies near the cloud");

    ScenePointCloud with_normals;
    const ScenePointCloud* source = &cloud;
    if (!cloud.hasNormals() || cloud.curvature.size() != cloud.points.size()) {
        with_normals = cloud;
        if (cloud.hasNormals()) {
            // Keep given normals, only derive curvature.
            ScenePointCloud tmp = cloud;
            estimate_normals(tmp);
            with_normals.curvature = tmp.curvature;
        } else {
            estimate_normals(with_normals);
        }
        source = &with_normals;
    }
    const auto& points = source->points;
    const auto& normals = source->normals;
    const auto& curvature = source->curvature;

    const SpatialGrid grid(points, params.neighbor_radius);
    std::vector<char> selected(points.size(), 0);
    std::vector<std::size_t> attached;
    for (const auto& seed : seeds)
        for (auto i : grid.radiusSearch(seed, params.max_seed_distance))
            attached.push_back(i);
    if (attached.empty())
        throw Error(Errc::NoSeedAttached, "every seed is farther than max_seed_distance from the cloud");
    std::sort(attached.begin(), attached.end());
    attached.erase(std::unique(attached.begin(), attached.end()), attached.end());

    const double cos_limit = std::cos(params.smoothness_angle);
    std::deque<std::size_t> queue;
    for (auto i : attached) {
        selected[i] = 1;
        queue.push_back(i);
    }
    while (!queue.empty()) {
        const std::size_t i = queue.front();
        queue.pop_front();
        if (curvature[i] > params.curvature_threshold)
            continue;
        for (auto j : grid.radiusSearch(points[i], params.neighbor_radius)) {
            if (selected[j])
                continue;
            if (normals[i].dot(normals[j]) > cos_limit) {
                selected[j] = 1;
                queue.push_back(j);
            }
        }
    }

    std::vector<std::size_t> region;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (selected[i])
            region.push_back(i);
    if (region.size() < params.min_region_size)
        region.clear();
    return region;
}

DenseModel fuse(std::span<const SceneRegion> regions, std::span<const RigidTransformd> transforms,
                const FuseOptions& options)
{
    if (!(options.voxel_size > 0.0))
        throw Error(Errc::InvalidArgument, "voxel size must be positive");
    DenseModel model;
    const double min_gap = options.voxel_size / 2.0;
    DynamicGrid kept(min_gap);
    const double cap_radius = options.object_size_cap / 2.0;

    for (const auto& region : regions) {
        if (region.scene >= transforms.size())
            throw Error(Errc::InvalidArgument, "region references a scene without a transform");
        const RigidTransformd to_world = transforms[region.scene].inverse();
        for (const auto& p : region.points) {
            const Point3 w = to_world * p;
            if (options.sparse_centroid && (w - *options.sparse_centroid).norm() > cap_radius)
                continue;
            if (kept.anyWithin(w, min_gap))
                continue;
            kept.insert(w);
            model.points.push_back(w);
            model.scene_ids.push_back(static_cast<std::uint32_t>(region.scene));
        }
    }
    require_nonempty(model);
    return model;
}

DenseModel crop(const DenseModel& model, const CropRegion& region)
{
    DenseModel out;
    for (std::size_t i = 0; i < model.points.size(); ++i) {
        const Point3& p = model.points[i];
        const bool inside = std::visit(
            [&](const auto& r) {
                using R = std::decay_t<decltype(r)>;
                if constexpr (std::is_same_v<R, CropSphere>)
                    return (p - r.center).norm() <= r.radius;
                else
                    return (p.array() >= r.min.array()).all() && (p.array() <= r.max.array()).all();
            },
            region);
        if (inside) {
            out.points.push_back(p);
            out.scene_ids.push_back(model.scene_ids.empty() ? 0u : model.scene_ids[i]);
        }
    }
    return out;
}

void require_nonempty(const DenseModel& model)
{
    if (model.empty())
        throw Error(Errc::EmptyModel, "dense model has no points");
}

}  // namespace kpl
