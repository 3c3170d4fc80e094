#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "keylabel/geometry.hpp"
#include "keylabel/image.hpp"

namespace kpl {

/// Mean pixel distance over keypoints visible in both sets.
/// Throws LengthMismatch or EmptyComparison.
double keypoint_error_2d(std::span<const std::optional<Pixel>> predicted,
                         std::span<const std::optional<Pixel>> ground_truth);

struct IouResult {
    double value = 0.0;
    /// Set when both masks were empty; value is then 1.
    bool both_empty = false;
};

/// Throws DimensionMismatch.
IouResult iou(const Mask& a, const Mask& b);

/// Axis-angle magnitude of R1^T R2 in radians. Evaluated through the
/// quaternion of the relative rotation so angles near pi stay accurate.
double rotation_geodesic(const Eigen::Matrix3d& r1, const Eigen::Matrix3d& r2);

inline double radians_to_degrees(double rad) { return rad * 180.0 / 3.14159265358979323846; }

struct SparseModelError {
    double mean = 0.0;
    double median = 0.0;
    double rms = 0.0;
    bool gauge_aligned = false;
};

/// Distances in meters between corresponding points, optionally after a
/// rigid (Horn) alignment of the estimate onto the ground truth.
SparseModelError sparse_model_error(std::span<const Point3> estimate, std::span<const Point3> ground_truth,
                                    bool gauge_align);

/// Aggregated numbers for one evaluated run. Lengths in mm, angles in both
/// radians and degrees.
struct MetricReport {
    std::string ground_truth_source = "synthetic oracle (known correspondences, no CAD/ICP alignment)";
    double keypoint_3d_mean_mm = 0.0;
    double keypoint_3d_median_mm = 0.0;
    double keypoint_3d_rms_mm = 0.0;
    bool keypoint_3d_gauge_aligned = true;
    double keypoint_2d_mean_px = 0.0;
    double keypoint_2d_median_px = 0.0;
    std::size_t keypoint_2d_frames = 0;
    double mean_iou = 0.0;
    std::size_t iou_frames = 0;
    double rotation_error_rad = 0.0;
    double rotation_error_deg = 0.0;
    double translation_error_mm = 0.0;
    std::size_t scenes = 0;
    std::size_t keypoints = 0;
    std::size_t labels = 0;
};

double median(std::vector<double> values);

}  // namespace kpl
