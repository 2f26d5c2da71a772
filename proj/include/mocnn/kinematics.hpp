#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mocnn/geometry.hpp"

namespace mocnn {

/// Revolute joint: rotate about `axis`, then apply the fixed child-link `offset`.
template <typename Scalar>
struct JointSpec {
  Vec3<Scalar> axis = Vec3<Scalar>::UnitZ();
  RigidTransform<Scalar> offset;
  /// Capsule radius of the link ending at this joint's child frame.
  Scalar radius = Scalar(0.05);
  Scalar lower = Scalar(-M_PI);
  Scalar upper = Scalar(M_PI);
};

template <typename Scalar>
struct KinematicChain {
  std::string name;
  /// Selects the render color scheme ("ur" or "kuka").
  std::string family = "ur";
  std::vector<JointSpec<Scalar>> joints;

  std::size_t n_joints() const { return joints.size(); }
};

using JointSpecd = JointSpec<double>;
using KinematicChaind = KinematicChain<double>;

/// Throws InvalidArgument unless the chain has 6 or 7 joints with unit axes
/// and positive radii.
void validate_chain(const KinematicChaind& chain);

/// Frame origins in the base frame: index 0 is the base origin, index i the
/// child frame of joint i, the last entry is the end-effector tip.
template <typename Scalar>
std::vector<Vec3<Scalar>> forward_kinematics(const KinematicChain<Scalar>& chain,
                                             std::span<const Scalar> angles) {
  if (angles.size() != chain.n_joints()) {
    throw Error(Errc::AngleCountMismatch, "expected " + std::to_string(chain.n_joints()) +
                                              " angles, got " + std::to_string(angles.size()));
  }
  std::vector<Vec3<Scalar>> positions;
  positions.reserve(chain.n_joints() + 1);
  positions.push_back(Vec3<Scalar>::Zero());
  RigidTransform<Scalar> frame;
  for (std::size_t i = 0; i < chain.n_joints(); ++i) {
    if (!std::isfinite(angles[i])) throw Error(Errc::InvalidArgument, "non-finite joint angle");
    const auto& joint = chain.joints[i];
    frame = compose(compose(frame, RigidTransform<Scalar>::rotation_about(joint.axis, angles[i])),
                    joint.offset);
    positions.push_back(frame.translation);
  }
  return positions;
}

enum class RobotModel { Ur3Like, Ur5Like, Ur10Like, KukaLike };

std::optional<RobotModel> parse_robot_model(std::string_view name);
std::string_view robot_model_name(RobotModel model);

/// Built-in chains. The UR-like sizes scale one base geometry by 0.5, 1.0, 1.5.
KinematicChaind make_chain(RobotModel model);

/// Reads a chain description. Format, one record per line ('#' starts a comment):
///   name <text>
///   family <ur|kuka>
///   joint ax ay az  rx ry rz  tx ty tz  radius [lower upper]
/// where (ax, ay, az) is the rotation axis, (rx, ry, rz) the offset rotation as
/// an axis-angle vector and (tx, ty, tz) the offset translation in meters.
KinematicChaind parse_chain(std::string_view text);
KinematicChaind load_chain(const std::filesystem::path& path);
std::string format_chain(const KinematicChaind& chain);

}  // namespace mocnn
