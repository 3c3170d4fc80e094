#pragma once

#include <array>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "keylabel/geometry.hpp"

namespace kpl {

/// Scene reconstruction as a point set in the scene's first-camera frame.
/// `normals` and `curvature` are filled by estimate_normals when absent.
struct ScenePointCloud {
    std::vector<Point3> points;
    std::vector<Eigen::Vector3d> normals;
    std::vector<double> curvature;
    std::vector<std::array<std::uint8_t, 3>> colors;

    bool hasNormals() const { return !points.empty() && normals.size() == points.size(); }
};

/// PCA normals over the k nearest neighbours, oriented toward `viewpoint`.
/// Curvature is the surface variation l0 / (l0 + l1 + l2).
void estimate_normals(ScenePointCloud& cloud, int neighbours = 16, const Point3& viewpoint = Point3::Zero());

struct GrowthParams {
    double neighbor_radius = 0.008;
    double smoothness_angle = 25.0 * std::numbers::pi / 180.0;
    double max_seed_distance = 0.015;
    std::size_t min_region_size = 10;
    /// Points above this surface variation join a region but do not spread it.
    double curvature_threshold = 0.05;

    void validate() const;
};

/// Seeded region growing. Every cloud point within max_seed_distance of a
/// seed starts the growth; the result is the sorted union over all seeds.
/// Throws NoSeedAttached when no seed reaches the cloud.
std::vector<std::size_t> grow_region(const ScenePointCloud& cloud, std::span<const Point3> seeds,
                                     const GrowthParams& params = {});

struct SceneRegion {
    std::size_t scene = 0;
    std::vector<Point3> points;
};

struct DenseModel {
    std::vector<Point3> points;
    std::vector<std::uint32_t> scene_ids;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

struct FuseOptions {
    double voxel_size = 0.003;
    /// When set, points farther than object_size_cap / 2 from it are dropped.
    std::optional<Point3> sparse_centroid;
    double object_size_cap = 1.0;
};

/// Map each region to the world frame with the inverse of its scene's
/// world->scene transform, concatenate in scene order and thin so that no two
/// kept points are closer than voxel_size / 2. Throws EmptyModel.
DenseModel fuse(std::span<const SceneRegion> regions, std::span<const RigidTransformd> transforms,
                const FuseOptions& options = {});

struct CropSphere {
    Point3 center = Point3::Zero();
    double radius = 0.0;
};
struct CropBox {
    Point3 min = Point3::Zero();
    Point3 max = Point3::Zero();
};
using CropRegion = std::variant<CropSphere, CropBox>;

DenseModel crop(const DenseModel& model, const CropRegion& region);

/// Throws EmptyModel if the model has no points.
void require_nonempty(const DenseModel& model);

}  // namespace kpl
