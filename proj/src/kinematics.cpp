#include "mocnn/kinematics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mocnn {

namespace {

JointSpecd joint(Vec3<double> axis, Vec3<double> translation, double radius, double lower,
                 double upper) {
  JointSpecd j;
  j.axis = axis;
  j.offset = RigidTransform<double>::from_translation(translation);
  j.radius = radius;
  j.lower = lower;
  j.upper = upper;
  return j;
}

KinematicChaind ur_like(double scale, std::string name) {
  const Vec3<double> z = Vec3<double>::UnitZ();
  const Vec3<double> y = Vec3<double>::UnitY();
  KinematicChaind chain;
  chain.name = std::move(name);
  chain.family = "ur";
  chain.joints = {
      joint(z, {0, 0, 0.16 * scale}, 0.075 * scale, -M_PI, M_PI),
      joint(y, {0, 0, 0.425 * scale}, 0.065 * scale, -1.3, 1.3),
      joint(y, {0, 0, 0.392 * scale}, 0.055 * scale, -2.3, 2.3),
      joint(y, {0, 0.11 * scale, 0}, 0.05 * scale, -M_PI, M_PI),
      joint(z, {0, 0, 0.095 * scale}, 0.045 * scale, -M_PI, M_PI),
      joint(y, {0, 0.082 * scale, 0}, 0.04 * scale, -M_PI, M_PI),
  };
  return chain;
}

KinematicChaind kuka_like() {
  const Vec3<double> z = Vec3<double>::UnitZ();
  const Vec3<double> y = Vec3<double>::UnitY();
  KinematicChaind chain;
  chain.name = "kukalike";
  chain.family = "kuka";
  chain.joints = {
      joint(z, {0, 0, 0.34}, 0.08, -2.9, 2.9),
      joint(y, {0, 0, 0.20}, 0.072, -1.6, 1.6),
      joint(z, {0, 0, 0.20}, 0.066, -2.9, 2.9),
      joint(-y, {0, 0, 0.20}, 0.064, -2.0, 2.0),
      joint(z, {0, 0, 0.19}, 0.058, -2.9, 2.9),
      joint(y, {0, 0, 0.08}, 0.054, -2.0, 2.0),
      joint(z, {0, 0, 0.126}, 0.045, -3.0, 3.0),
  };
  return chain;
}

}  // namespace

void validate_chain(const KinematicChaind& chain) {
  const auto n = chain.n_joints();
  if (n != 6 && n != 7) {
    throw Error(Errc::InvalidArgument, "chain must have 6 or 7 joints, has " + std::to_string(n));
  }
  for (const auto& j : chain.joints) {
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) throw Error(Errc::InvalidArgument, "joint axis not unit");
    if (!(j.radius > 0)) throw Error(Errc::InvalidArgument, "link radius must be positive");
    if (!(j.lower <= j.upper)) throw Error(Errc::InvalidArgument, "joint limits reversed");
    if (!j.offset.is_valid()) throw Error(Errc::InvalidArgument, "invalid joint offset");
  }
}

std::optional<RobotModel> parse_robot_model(std::string_view name) {
  if (name == "ur3like") return RobotModel::Ur3Like;
  if (name == "ur5like") return RobotModel::Ur5Like;
  if (name == "ur10like") return RobotModel::Ur10Like;
  if (name == "kukalike") return RobotModel::KukaLike;
  return std::nullopt;
}

std::string_view robot_model_name(RobotModel model) {
  switch (model) {
    case RobotModel::Ur3Like: return "ur3like";
    case RobotModel::Ur5Like: return "ur5like";
    case RobotModel::Ur10Like: return "ur10like";
    case RobotModel::KukaLike: return "kukalike";
  }
  return "";
}

KinematicChaind make_chain(RobotModel model) {
  switch (model) {
    case RobotModel::Ur3Like: return ur_like(0.5, "ur3like");
    case RobotModel::Ur5Like: return ur_like(1.0, "ur5like");
    case RobotModel::Ur10Like: return ur_like(1.5, "ur10like");
    case RobotModel::KukaLike: return kuka_like();
  }
  throw Error(Errc::InvalidArgument, "unknown robot model");
}

KinematicChaind parse_chain(std::string_view text) {
  KinematicChaind chain;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string keyword;
    if (!(fields >> keyword)) continue;
    const auto fail = [&](const std::string& why) {
      throw Error(Errc::FormatError, "chain line " + std::to_string(line_no) + ": " + why);
    };
    if (keyword == "name") {
      fields >> chain.name;
    } else if (keyword == "family") {
      fields >> chain.family;
    } else if (keyword == "joint") {
      double v[10];
      for (double& x : v) {
        if (!(fields >> x)) fail("expected 10 numbers after 'joint'");
      }
      JointSpecd j;
      j.axis = Vec3<double>(v[0], v[1], v[2]);
      if (j.axis.norm() == 0) fail("zero joint axis");
      j.axis.normalize();
      j.offset = RigidTransform<double>::from_axis_angle({v[3], v[4], v[5]}, {v[6], v[7], v[8]});
      j.radius = v[9];
      double lo, hi;
      if (fields >> lo) {
        if (!(fields >> hi)) fail("joint limits need both lower and upper");
        j.lower = lo;
        j.upper = hi;
      }
      chain.joints.push_back(j);
    } else {
      fail("unknown keyword '" + keyword + "'");
    }
  }
  validate_chain(chain);
  return chain;
}

KinematicChaind load_chain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_chain(buffer.str());
}

std::string format_chain(const KinematicChaind& chain) {
  std::ostringstream out;
  out << std::setprecision(17);
  if (!chain.name.empty()) out << "name " << chain.name << '\n';
  out << "family " << chain.family << '\n';
  for (const auto& j : chain.joints) {
    const Eigen::AngleAxisd aa(j.offset.rotation);
    const Vec3<double> rv = aa.axis() * aa.angle();
    const auto& t = j.offset.translation;
    out << "joint " << j.axis.x() << ' ' << j.axis.y() << ' ' << j.axis.z() << "  " << rv.x() << ' '
        << rv.y() << ' ' << rv.z() << "  " << t.x() << ' ' << t.y() << ' ' << t.z() << "  "
        << j.radius << "  " << j.lower << ' ' << j.upper << '\n';
  }
  return out.str();
}

}  // namespace mocnn
