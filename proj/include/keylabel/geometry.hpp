#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "keylabel/error.hpp"

namespace kpl {

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;

/// Metric point in some camera or world frame (meters).
using Point3 = Eigen::Vector3d;
/// Continuous pixel coordinate; integer values are pixel centers.
using Pixel = Eigen::Vector2d;

/// Pinhole intrinsics shared by the color and depth streams.
struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
    /// Depth-image units per meter.
    double depth_scale = 1000.0;

    /// Throws ValidationError when an invariant is violated.
    void validate() const
    {
        if (!(fx > 0.0) || !(fy > 0.0))
            throw Error(Errc::ValidationError, "focal lengths must be positive");
        if (width <= 0 || height <= 0)
            throw Error(Errc::ValidationError, "image size must be positive");
        if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
            throw Error(Errc::ValidationError, "principal point outside image");
        if (!(depth_scale > 0.0))
            throw Error(Errc::ValidationError, "depth_scale must be positive");
    }

    template <typename Scalar>
    bool contains(const Vector2<Scalar>& px) const
    {
        return px.x() > Scalar(-0.5) && px.x() < Scalar(width) - Scalar(0.5) &&
               px.y() > Scalar(-0.5) && px.y() < Scalar(height) - Scalar(0.5);
    }

    bool operator==(const CameraIntrinsics&) const = default;
};

/// Rigid map p -> R(q) p + t with a unit quaternion q.
template <typename Scalar>
class RigidTransform {
public:
    using Quaternion = Eigen::Quaternion<Scalar>;
    using Vector = Vector3<Scalar>;

    RigidTransform() : rotation_(Quaternion::Identity()), translation_(Vector::Zero()) {}

    RigidTransform(const Quaternion& rotation, const Vector& translation)
        : rotation_(rotation.normalized()), translation_(translation)
    {
    }

    RigidTransform(const Matrix3<Scalar>& rotation, const Vector& translation)
        : rotation_(Quaternion(rotation).normalized()), translation_(translation)
    {
    }

    static RigidTransform identity() { return RigidTransform(); }

    /// From a homogeneous 4x4 pose matrix.
    static RigidTransform fromMatrix(const Matrix4<Scalar>& m)
    {
        return RigidTransform(Matrix3<Scalar>(m.template topLeftCorner<3, 3>()),
                              Vector(m.template topRightCorner<3, 1>()));
    }

    /// Quaternion stored as (w, x, y, z).
    static RigidTransform fromWxyz(const Eigen::Matrix<Scalar, 4, 1>& wxyz, const Vector& t)
    {
        return RigidTransform(Quaternion(wxyz[0], wxyz[1], wxyz[2], wxyz[3]), t);
    }

    const Quaternion& rotation() const { return rotation_; }
    const Vector& translation() const { return translation_; }
    Matrix3<Scalar> rotationMatrix() const { return rotation_.toRotationMatrix(); }

    Eigen::Matrix<Scalar, 4, 1> wxyz() const
    {
        return {rotation_.w(), rotation_.x(), rotation_.y(), rotation_.z()};
    }

    Matrix4<Scalar> matrix() const
    {
        Matrix4<Scalar> m = Matrix4<Scalar>::Identity();
        m.template topLeftCorner<3, 3>() = rotationMatrix();
        m.template topRightCorner<3, 1>() = translation_;
        return m;
    }

    Vector operator*(const Vector& p) const { return rotation_ * p + translation_; }

    RigidTransform operator*(const RigidTransform& other) const
    {
        return RigidTransform(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_);
    }

    RigidTransform inverse() const
    {
        const Quaternion inv = rotation_.conjugate();
        return RigidTransform(inv, -(inv * translation_));
    }

    template <typename Other>
    RigidTransform<Other> cast() const
    {
        return RigidTransform<Other>(rotation_.template cast<Other>(), translation_.template cast<Other>());
    }

private:
    Quaternion rotation_;
    Vector translation_;
};

using RigidTransformd = RigidTransform<double>;

template <typename Scalar>
Vector3<Scalar> apply(const RigidTransform<Scalar>& transform, const Vector3<Scalar>& p)
{
    return transform * p;
}

template <typename Scalar>
RigidTransform<Scalar> compose(const RigidTransform<Scalar>& a, const RigidTransform<Scalar>& b)
{
    return a * b;
}

template <typename Scalar>
RigidTransform<Scalar> invert(const RigidTransform<Scalar>& transform)
{
    return transform.inverse();
}

/// Angle of the relative rotation between two unit quaternions, in [0, pi].
template <typename Scalar>
Scalar quaternion_angle(const Eigen::Quaternion<Scalar>& a, const Eigen::Quaternion<Scalar>& b)
{
    const Eigen::Quaternion<Scalar> rel = a.conjugate() * b;
    return Scalar(2) * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

/// Pixel plus metric depth to camera-frame point.
template <typename Scalar>
Vector3<Scalar> backproject(const CameraIntrinsics& intr, const Vector2<Scalar>& px, Scalar depth_m)
{
    return {(px.x() - Scalar(intr.cx)) * depth_m / Scalar(intr.fx),
            (px.y() - Scalar(intr.cy)) * depth_m / Scalar(intr.fy), depth_m};
}

/// Pixel plus raw depth-image value to camera-frame point. A raw value of
/// zero marks missing depth.
inline Point3 backproject(const CameraIntrinsics& intr, const Pixel& px, std::uint16_t depth_raw)
{
    if (depth_raw == 0)
        throw Error(Errc::InvalidDepth, "depth value is zero (invalid)");
    if (!intr.contains(px))
        throw Error(Errc::OutOfBounds, "pixel outside image bounds");
    return backproject<double>(intr, px, static_cast<double>(depth_raw) / intr.depth_scale);
}

/// Camera-frame point to pixel. The result may fall outside the image.
template <typename Scalar>
Vector2<Scalar> project(const CameraIntrinsics& intr, const Vector3<Scalar>& p)
{
    if (!(p.z() > Scalar(0)))
        throw Error(Errc::BehindCamera, "point is not in front of the camera");
    return {Scalar(intr.fx) * p.x() / p.z() + Scalar(intr.cx), Scalar(intr.fy) * p.y() / p.z() + Scalar(intr.cy)};
}

/// Skew-symmetric cross-product matrix.
template <typename Scalar>
Matrix3<Scalar> skew(const Vector3<Scalar>& v)
{
    Matrix3<Scalar> m;
    m << Scalar(0), -v.z(), v.y(), v.z(), Scalar(0), -v.x(), -v.y(), v.x(), Scalar(0);
    return m;
}

}  // namespace kpl
