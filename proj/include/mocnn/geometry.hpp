#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mocnn/error.hpp"

namespace mocnn {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

/// Proper rigid motion p -> rotation * p + translation.
template <typename Scalar>
struct RigidTransform {
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();

  static RigidTransform identity() { return {}; }

  static RigidTransform from_translation(const Vec3<Scalar>& t) {
    return {Mat3<Scalar>::Identity(), t};
  }

  /// Rotation given as an axis-angle vector (direction = axis, norm = angle).
  static RigidTransform from_axis_angle(const Vec3<Scalar>& axis_angle,
                                        const Vec3<Scalar>& t = Vec3<Scalar>::Zero()) {
    const Scalar angle = axis_angle.norm();
    if (angle == Scalar(0)) return from_translation(t);
    return {Eigen::AngleAxis<Scalar>(angle, axis_angle / angle).toRotationMatrix(), t};
  }

  static RigidTransform rotation_about(const Vec3<Scalar>& unit_axis, Scalar angle) {
    return {Eigen::AngleAxis<Scalar>(angle, unit_axis).toRotationMatrix(), Vec3<Scalar>::Zero()};
  }

  Vec3<Scalar> apply(const Vec3<Scalar>& p) const { return rotation * p + translation; }

  Eigen::Matrix<Scalar, 4, 4> matrix() const {
    Eigen::Matrix<Scalar, 4, 4> m = Eigen::Matrix<Scalar, 4, 4>::Identity();
    m.template topLeftCorner<3, 3>() = rotation;
    m.template topRightCorner<3, 1>() = translation;
    return m;
  }

  bool is_valid(Scalar tol = Scalar(1e-9)) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    const Mat3<Scalar> gram = rotation.transpose() * rotation;
    return (gram - Mat3<Scalar>::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - Scalar(1)) <= tol;
  }
};

/// Applies b first, then a.
template <typename Scalar>
RigidTransform<Scalar> compose(const RigidTransform<Scalar>& a, const RigidTransform<Scalar>& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

template <typename Scalar>
RigidTransform<Scalar> inverse(const RigidTransform<Scalar>& t) {
  const Mat3<Scalar> rt = t.rotation.transpose();
  return {rt, -(rt * t.translation)};
}

template <typename Scalar>
struct Pixel {
  Scalar u;
  Scalar v;
};

template <typename Scalar>
struct PinholeCamera {
  Scalar fx = 365.0;
  Scalar fy = 365.0;
  Scalar cx = 256.0;
  Scalar cy = 212.0;
  int width = 512;
  int height = 424;
  /// Maps robot-base coordinates into the camera frame (x right, y down, z forward).
  RigidTransform<Scalar> extrinsic;

  bool is_valid() const {
    return fx > 0 && fy > 0 && cx >= 0 && cx < width && cy >= 0 && cy < height &&
           extrinsic.is_valid();
  }
};

inline constexpr double kMinProjectionDepth = 1e-6;

template <typename Scalar>
Pixel<Scalar> project(const PinholeCamera<Scalar>& camera, const Vec3<Scalar>& point_cam) {
  if (!(point_cam.z() > Scalar(kMinProjectionDepth))) {
    throw Error(Errc::BehindCamera, "point depth " + std::to_string(double(point_cam.z())));
  }
  return {camera.fx * point_cam.x() / point_cam.z() + camera.cx,
          camera.fy * point_cam.y() / point_cam.z() + camera.cy};
}

/// Camera-frame point at the given depth (z) whose projection is (u, v).
template <typename Scalar>
Vec3<Scalar> unproject(const PinholeCamera<Scalar>& camera, Pixel<Scalar> px, Scalar depth) {
  return {(px.u - camera.cx) * depth / camera.fx, (px.v - camera.cy) * depth / camera.fy, depth};
}

template <typename Scalar>
std::vector<Vec3<Scalar>> to_camera_frame(std::span<const Vec3<Scalar>> points,
                                          const PinholeCamera<Scalar>& camera) {
  std::vector<Vec3<Scalar>> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(camera.extrinsic.apply(p));
  return out;
}

/// Camera pose looking from `eye` at `target`, expressed as camera-from-base.
template <typename Scalar>
RigidTransform<Scalar> look_at(const Vec3<Scalar>& eye, const Vec3<Scalar>& target,
                               const Vec3<Scalar>& world_up = Vec3<Scalar>::UnitZ()) {
  const Vec3<Scalar> forward = (target - eye).normalized();
  Vec3<Scalar> right = forward.cross(world_up);
  if (right.norm() < Scalar(1e-9)) right = forward.cross(Vec3<Scalar>::UnitX());
  right.normalize();
  const Vec3<Scalar> down = forward.cross(right);
  // Rows of the camera-from-base rotation are the camera axes in base coordinates.
  Mat3<Scalar> r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  return {r, -(r * eye)};
}

}  // namespace mocnn
