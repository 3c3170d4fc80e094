#pragma once

#include <span>
#include <vector>

#include "keylabel/annotations.hpp"
#include "keylabel/geometry.hpp"
#include "keylabel/scene.hpp"

namespace kpl {

/// Closed-form least-squares rigid alignment (no scale) via the unit
/// quaternion eigenvector of the 4x4 cross-covariance form. Returns the
/// transform T minimizing sum |T*src_i - dst_i|^2, with q.w() >= 0.
/// Throws LengthMismatch, TooFewPoints, or Degenerate when the source
/// points are collinear within `collinearity_tolerance` (meters, RMS
/// distance from the best-fit line).
RigidTransformd horn_align(std::span<const Point3> src, std::span<const Point3> dst,
                           double collinearity_tolerance = 1e-9);

struct RegistrationResult {
    /// World -> new scene's first-camera frame.
    RigidTransformd transform;
    std::vector<int> keypoint_ids;
    std::vector<double> residuals;
    double rms = 0.0;
};

/// Register a scene that was not part of the optimization using its clicks
/// and the solved keypoint model. All clicks are used jointly.
RegistrationResult register_new_scene(std::span<const Point3> model_keypoints, const AnnotationFile& clicks,
                                      const Scene& scene, double collinearity_tolerance = 1e-3);

}  // namespace kpl
