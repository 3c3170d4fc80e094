#include "keylabel/spatial_grid.hpp"

#include <algorithm>
#include <cmath>

namespace kpl {

namespace {

constexpr std::int64_t kBias = 1 << 20;

std::int64_t pack_cell(const Eigen::Vector3i& c)
{
    return ((static_cast<std::int64_t>(c.x()) + kBias) << 42) | ((static_cast<std::int64_t>(c.y()) + kBias) << 21) |
           (static_cast<std::int64_t>(c.z()) + kBias);
}

Eigen::Vector3i cell_of(const Point3& p, double cell)
{
    return {static_cast<int>(std::floor(p.x() / cell)), static_cast<int>(std::floor(p.y() / cell)),
            static_cast<int>(std::floor(p.z() / cell))};
}

}  // namespace

SpatialGrid::SpatialGrid(std::span<const Point3> points, double cell_size) : points_(points), cell_(cell_size)
{
    if (!(cell_size > 0.0))
        throw Error(Errc::InvalidArgument, "grid cell size must be positive");
    for (std::size_t i = 0; i < points.size(); ++i)
        buckets_[pack(cellOf(points[i]))].push_back(static_cast<std::uint32_t>(i));
}

Eigen::Vector3i SpatialGrid::cellOf(const Point3& p) const { return cell_of(p, cell_); }

SpatialGrid::Key SpatialGrid::pack(const Eigen::Vector3i& c) { return pack_cell(c); }

std::vector<std::size_t> SpatialGrid::radiusSearch(const Point3& center, double radius) const
{
    std::vector<std::size_t> out;
    const Eigen::Vector3i lo = cellOf(center - Point3::Constant(radius));
    const Eigen::Vector3i hi = cellOf(center + Point3::Constant(radius));
    const double r2 = radius * radius;
    for (int x = lo.x(); x <= hi.x(); ++x)
        for (int y = lo.y(); y <= hi.y(); ++y)
            for (int z = lo.z(); z <= hi.z(); ++z) {
                const auto it = buckets_.find(pack({x, y, z}));
                if (it == buckets_.end())
                    continue;
                for (std::uint32_t i : it->second)
                    if ((points_[i] - center).squaredNorm() <= r2)
                        out.push_back(i);
            }
    std::sort(out.begin(), out.end());
    return out;
}

bool SpatialGrid::anyWithin(const Point3& center, double radius) const
{
    const Eigen::Vector3i lo = cellOf(center - Point3::Constant(radius));
    const Eigen::Vector3i hi = cellOf(center + Point3::Constant(radius));
    const double r2 = radius * radius;
    for (int x = lo.x(); x <= hi.x(); ++x)
        for (int y = lo.y(); y <= hi.y(); ++y)
            for (int z = lo.z(); z <= hi.z(); ++z) {
                const auto it = buckets_.find(pack({x, y, z}));
                if (it == buckets_.end())
                    continue;
                for (std::uint32_t i : it->second)
                    if ((points_[i] - center).squaredNorm() < r2)
                        return true;
            }
    return false;
}

std::vector<std::size_t> SpatialGrid::nearest(const Point3& center, std::size_t k) const
{
    k = std::min(k, points_.size());
    if (k == 0)
        return {};
    const Eigen::Vector3i c = cellOf(center);
    std::vector<std::pair<double, std::size_t>> found;
    for (int ring = 0;; ++ring) {
        // Visit only the shell at Chebyshev distance `ring`.
        for (int x = c.x() - ring; x <= c.x() + ring; ++x)
            for (int y = c.y() - ring; y <= c.y() + ring; ++y)
                for (int z = c.z() - ring; z <= c.z() + ring; ++z) {
                    if (std::max({std::abs(x - c.x()), std::abs(y - c.y()), std::abs(z - c.z())}) != ring)
                        continue;
                    const auto it = buckets_.find(pack({x, y, z}));
                    if (it == buckets_.end())
                        continue;
                    for (std::uint32_t i : it->second)
                        found.emplace_back((points_[i] - center).squaredNorm(), i);
                }
        if (found.size() >= k) {
            std::sort(found.begin(), found.end());
            // Every point outside the visited cube is at least this far away.
            const double covered = ring * cell_;
            if (found[k - 1].first <= covered * covered || found.size() == points_.size())
                break;
        }
        if (found.size() == points_.size())
            break;
    }
    std::sort(found.begin(), found.end());
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
        out.push_back(found[i].second);
    return out;
}

bool DynamicGrid::anyWithin(const Point3& center, double radius) const
{
    const Eigen::Vector3i lo = cell_of(center - Point3::Constant(radius), cell_);
    const Eigen::Vector3i hi = cell_of(center + Point3::Constant(radius), cell_);
    const double r2 = radius * radius;
    for (int x = lo.x(); x <= hi.x(); ++x)
        for (int y = lo.y(); y <= hi.y(); ++y)
            for (int z = lo.z(); z <= hi.z(); ++z) {
                const auto it = buckets_.find(pack_cell({x, y, z}));
                if (it == buckets_.end())
                    continue;
                for (const auto& p : it->second)
                    if ((p - center).squaredNorm() < r2)
                        return true;
            }
    return false;
}

void DynamicGrid::insert(const Point3& p) { buckets_[pack_cell(cell_of(p, cell_))].push_back(p); }

}  // namespace kpl
