#include "keylabel/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "keylabel/registration.hpp"

namespace kpl {

double keypoint_error_2d(std::span<const std::optional<Pixel>> predicted,
                         std::span<const std::optional<Pixel>> ground_truth)
{
    if (predicted.size() != ground_truth.size())
        throw Error(Errc::LengthMismatch, "predicted and ground-truth keypoint counts differ");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (!predicted[i] || !ground_truth[i])
            continue;
        sum += (*predicted[i] - *ground_truth[i]).norm();
        ++n;
    }
    if (n == 0)
        throw Error(Errc::EmptyComparison, "no keypoint is visible in both sets");
    return sum / static_cast<double>(n);
}

IouResult iou(const Mask& a, const Mask& b)
{
    if (a.width != b.width || a.height != b.height)
        throw Error(Errc::DimensionMismatch, "masks have different dimensions");
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const bool pa = a.pixels[i] != 0;
        const bool pb = b.pixels[i] != 0;
        inter += pa && pb;
        uni += pa || pb;
    }
    if (uni == 0)
        return {1.0, true};
    return {static_cast<double>(inter) / static_cast<double>(uni), false};
}

double rotation_geodesic(const Eigen::Matrix3d& r1, const Eigen::Matrix3d& r2)
{
    const Eigen::Quaterniond rel(Eigen::Matrix3d(r1.transpose() * r2));
    return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

double median(std::vector<double> values)
{
    if (values.empty())
        return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t m = values.size() / 2;
    return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

SparseModelError sparse_model_error(std::span<const Point3> estimate, std::span<const Point3> ground_truth,
                                    bool gauge_align)
{
    if (estimate.size() != ground_truth.size())
        throw Error(Errc::LengthMismatch, "estimate and ground truth have different point counts");
    if (estimate.empty())
        throw Error(Errc::EmptyComparison, "no points to compare");
    RigidTransformd align;
    if (gauge_align)
        align = horn_align(estimate, ground_truth);
    std::vector<double> d;
    double sq = 0.0;
    for (std::size_t i = 0; i < estimate.size(); ++i) {
        d.push_back((align * estimate[i] - ground_truth[i]).norm());
        sq += d.back() * d.back();
    }
    SparseModelError out;
    double sum = 0.0;
    for (double v : d)
        sum += v;
    out.mean = sum / static_cast<double>(d.size());
    out.rms = std::sqrt(sq / static_cast<double>(d.size()));
    out.median = median(d);
    out.gauge_aligned = gauge_align;
    return out;
}

}  // namespace kpl
