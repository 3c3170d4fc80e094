#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "keylabel/geometry.hpp"

namespace kpl {

/// Uniform hash grid over a fixed point set. Queries are exact; results are
/// returned in ascending index order so callers never see bucket layout.
class SpatialGrid {
public:
    SpatialGrid(std::span<const Point3> points, double cell_size);

    /// Indices of points with |p - center| <= radius.
    std::vector<std::size_t> radiusSearch(const Point3& center, double radius) const;
    /// True if any point lies strictly closer than `radius`.
    bool anyWithin(const Point3& center, double radius) const;
    /// The k nearest points (ties by index), nearest first.
    std::vector<std::size_t> nearest(const Point3& center, std::size_t k) const;

    double cellSize() const { return cell_; }

private:
    using Key = std::int64_t;
    Eigen::Vector3i cellOf(const Point3& p) const;
    static Key pack(const Eigen::Vector3i& c);

    std::span<const Point3> points_;
    double cell_;
    std::unordered_map<Key, std::vector<std::uint32_t>> buckets_;
};

/// Incrementally filled variant used for greedy deduplication.
class DynamicGrid {
public:
    explicit DynamicGrid(double cell_size) : cell_(cell_size) {}
    bool anyWithin(const Point3& center, double radius) const;
    void insert(const Point3& p);

private:
    double cell_;
    std::unordered_map<std::int64_t, std::vector<Point3>> buckets_;
};

}  // namespace kpl
