#pragma once

// Rigid transforms with uniform scale, model/world frame conversion,
// rotation and translation error metrics, and field-of-view footprints.
//
// Conventions: quaternions are (w, x, y, z), right-handed, Y-up. A Transform
// maps a model-local point p to world as  t + s * R * p.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "arinspect/error.hpp"

namespace arinspect::geometry {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

/// Largest deviation of |q| from 1 accepted for caller-supplied unit quaternions.
inline constexpr double kUnitQuatTolerance = 1e-6;

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

inline bool is_finite(const Vec3& v) { return v.allFinite(); }

inline bool is_unit(const Quat& q, double tol = kUnitQuatTolerance) {
    return q.coeffs().allFinite() && std::abs(q.norm() - 1.0) <= tol;
}

/// Quaternion from (w, x, y, z) without normalizing.
inline Quat quat_wxyz(double w, double x, double y, double z) { return Quat(w, x, y, z); }

inline Quat axis_angle(const Vec3& axis, double angle_rad) {
    return Quat(Eigen::AngleAxisd(angle_rad, axis.normalized()));
}

/// Position plus unit orientation. Orientation is normalized on construction.
class Pose {
public:
    Pose() : position_(Vec3::Zero()), orientation_(Quat::Identity()) {}

    Pose(const Vec3& position, const Quat& orientation) : position_(position) {
        if (!position.allFinite()) {
            throw ValidationError("pose position is not finite");
        }
        const double n = orientation.norm();
        if (!orientation.coeffs().allFinite() || n < 1e-12) {
            throw ValidationError("pose orientation is zero or not finite");
        }
        // Already-unit input is kept bit-for-bit so serialize/restore is exact.
        orientation_ = std::abs(n - 1.0) <= 8.0 * std::numeric_limits<double>::epsilon()
                           ? orientation
                           : Quat(orientation.coeffs() / n);
    }

    const Vec3& position() const noexcept { return position_; }
    const Quat& orientation() const noexcept { return orientation_; }

    friend bool operator==(const Pose& a, const Pose& b) {
        return a.position_ == b.position_ && a.orientation_.coeffs() == b.orientation_.coeffs();
    }

private:
    Vec3 position_;
    Quat orientation_;
};

/// Similarity transform restricted to uniform scale.
class Transform {
public:
    Transform() = default;

    explicit Transform(const Pose& pose, double scale = 1.0) : pose_(pose), scale_(scale) {
        if (!(scale > 0.0) || !std::isfinite(scale)) {
            throw ValidationError("transform scale must be positive and finite, got " +
                                  std::to_string(scale));
        }
    }

    Transform(const Vec3& translation, const Quat& rotation, double scale = 1.0)
        : Transform(Pose(translation, rotation), scale) {}

    static Transform identity() { return {}; }
    static Transform translation(double x, double y, double z) {
        return Transform(Vec3(x, y, z), Quat::Identity());
    }
    static Transform rotation(const Quat& q) { return Transform(Vec3::Zero(), q); }
    static Transform scaling(double s) { return Transform(Vec3::Zero(), Quat::Identity(), s); }

    const Pose& pose() const noexcept { return pose_; }
    const Vec3& translation() const noexcept { return pose_.position(); }
    const Quat& rotation() const noexcept { return pose_.orientation(); }
    double scale() const noexcept { return scale_; }

    /// t + s R p
    Vec3 apply(const Vec3& p) const { return translation() + scale_ * (rotation() * p); }

    /// R^T (p - t) / s
    Vec3 apply_inverse(const Vec3& p) const {
        return (rotation().conjugate() * (p - translation())) / scale_;
    }

    /// 4x4 homogeneous form [sR t; 0 1].
    Eigen::Matrix4d matrix() const {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = scale_ * rotation().toRotationMatrix();
        m.topRightCorner<3, 1>() = translation();
        return m;
    }

    friend bool operator==(const Transform& a, const Transform& b) {
        return a.pose_ == b.pose_ && a.scale_ == b.scale_;
    }

private:
    Pose pose_;
    double scale_ = 1.0;
};

/// parent * child: the child expressed in the parent's frame, then lifted to world.
inline Transform compose(const Transform& parent, const Transform& child) {
    const Vec3 t = parent.apply(child.translation());
    return Transform(t, parent.rotation() * child.rotation(), parent.scale() * child.scale());
}

inline Transform inverse(const Transform& t) {
    const Quat r_inv = t.rotation().conjugate();
    const double s_inv = 1.0 / t.scale();
    return Transform(-(s_inv * (r_inv * t.translation())), r_inv, s_inv);
}

inline Vec3 to_model_coordinates(const Vec3& world_point, const Transform& model) {
    return model.apply_inverse(world_point);
}

inline Vec3 to_world_coordinates(const Vec3& local_point, const Transform& model) {
    return model.apply(local_point);
}

/// Smallest rotation (degrees, in [0, 180]) taking orientation `a` onto `b`.
///
/// Evaluated as 2 atan2(|v|, |w|) of the relative quaternion conj(a) b, which
/// equals 2 acos(|<a, b>|) for unit inputs but stays accurate near 0 and maps
/// q vs -q to exactly zero.
inline double rotation_angle_between(const Quat& a, const Quat& b) {
    if (!is_unit(a) || !is_unit(b)) {
        throw ValidationError("rotation_angle_between: quaternion is not unit length");
    }
    const Quat rel = a.conjugate() * b;
    const double half = std::atan2(rel.vec().norm(), std::abs(rel.w()));
    return std::clamp(rad_to_deg(2.0 * half), 0.0, 180.0);
}

/// Euclidean distance between two positions, meters.
inline double translation_offset(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

struct FovSpec {
    double horizontal_deg = 43.0;
    double vertical_deg = 29.0;

    void validate() const {
        auto ok = [](double a) { return std::isfinite(a) && a > 0.0 && a < 180.0; };
        if (!ok(horizontal_deg) || !ok(vertical_deg)) {
            throw ValidationError("field-of-view angles must lie in (0, 180) degrees");
        }
    }
};

struct Footprint {
    double width_m = 0.0;
    double height_m = 0.0;
};

/// Width and height covered by the view frustum at `distance_m`.
inline Footprint fov_footprint(const FovSpec& fov, double distance_m) {
    fov.validate();
    if (!(distance_m >= 0.0) || !std::isfinite(distance_m)) {
        throw ValidationError("distance must be a finite non-negative number");
    }
    return {2.0 * distance_m * std::tan(deg_to_rad(fov.horizontal_deg) / 2.0),
            2.0 * distance_m * std::tan(deg_to_rad(fov.vertical_deg) / 2.0)};
}

}  // namespace arinspect::geometry
