#include "keylabel/registration.hpp"

#include <cmath>
#include <map>

#include <Eigen/Eigenvalues>

#include "keylabel/sparse_optimizer.hpp"

namespace kpl {

RigidTransformd horn_align(std::span<const Point3> src, std::span<const Point3> dst, double collinearity_tolerance)
{
    if (src.size() != dst.size())
        throw Error(Errc::LengthMismatch, "source and destination point counts differ");
    if (src.size() < 3)
        throw Error(Errc::TooFewPoints, "at least three correspondences are required");
    if (!non_collinear(src, collinearity_tolerance))
        throw Error(Errc::Degenerate, "source points are collinear or coincident");

    const double n = static_cast<double>(src.size());
    Point3 src_mean = Point3::Zero();
    Point3 dst_mean = Point3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        src_mean += src[i];
        dst_mean += dst[i];
    }
    src_mean /= n;
    dst_mean /= n;

    Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i)
        s += (src[i] - src_mean) * (dst[i] - dst_mean).transpose();

    const double sxx = s(0, 0), sxy = s(0, 1), sxz = s(0, 2);
    const double syx = s(1, 0), syy = s(1, 1), syz = s(1, 2);
    const double szx = s(2, 0), szy = s(2, 1), szz = s(2, 2);

    Eigen::Matrix4d nmat;
    nmat << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
            syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
            szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
            sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;

    // Eigenvalues come back in increasing order.
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(nmat);
    Eigen::Vector4d q = eig.eigenvectors().col(3);
    // Sign convention: w >= 0; for w == 0 the first nonzero component is positive.
    for (int i = 0; i < 4; ++i) {
        if (q[i] != 0.0) {
            if (q[i] < 0.0)
                q = -q;
            break;
        }
    }

    const Eigen::Quaterniond rotation(q[0], q[1], q[2], q[3]);
    const RigidTransformd rot_only(rotation, Point3::Zero());
    return RigidTransformd(rot_only.rotation(), dst_mean - rot_only.rotation() * src_mean);
}

RegistrationResult register_new_scene(std::span<const Point3> model_keypoints, const AnnotationFile& clicks,
                                      const Scene& scene, double collinearity_tolerance)
{
    // Last click per keypoint wins, as in assemble.
    std::map<int, Point3> lifted;
    for (const auto& entry : clicks.entries) {
        if (entry.keypoint < 0 || static_cast<std::size_t>(entry.keypoint) >= model_keypoints.size())
            throw Error(Errc::ValidationError,
                        "keypoint id " + std::to_string(entry.keypoint) + " not present in the model");
        if (entry.frame >= scene.frameCount())
            throw Error(Errc::ValidationError, "frame " + std::to_string(entry.frame) + " out of range", scene.id);
        lifted[entry.keypoint] = lift_annotation(scene, entry.frame, entry.pixel);
    }
    if (lifted.size() < 3)
        throw Error(Errc::TooFewPoints, "registration needs clicks on at least three distinct keypoints");

    RegistrationResult result;
    std::vector<Point3> src;
    std::vector<Point3> dst;
    for (const auto& [k, p] : lifted) {
        result.keypoint_ids.push_back(k);
        src.push_back(model_keypoints[static_cast<std::size_t>(k)]);
        dst.push_back(p);
    }
    result.transform = horn_align(src, dst, collinearity_tolerance);

    double sq = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double r = (result.transform * src[i] - dst[i]).norm();
        result.residuals.push_back(r);
        sq += r * r;
    }
    result.rms = std::sqrt(sq / static_cast<double>(src.size()));
    return result;
}

}  // namespace kpl
