#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mocnn/datastore.hpp"
#include "mocnn/geometry.hpp"
#include "mocnn/io.hpp"
#include "mocnn/kinematics.hpp"

namespace mocnn {

inline constexpr double kMinForegroundFraction = 0.06;
inline constexpr double kMaxForegroundFraction = 0.18;
inline constexpr int kRenderAttempts = 64;

struct SceneConfig {
  /// Camera distance from the look-at point, meters.
  double distance_min = 0.8;
  double distance_max = 1.4;
  /// Camera elevation above the horizontal plane, radians.
  double elevation_min = 0.0;
  double elevation_max = 0.7;
  int background_id = 0;
  double brightness = 1.0;
  std::uint64_t seed = 0;
  /// Renders a second, inert robot further back; it appears in the color image only.
  bool distractor = false;

  void validate() const;
};

/// Scene ranges sized for a chain so that the robot covers a plausible share of the frame.
SceneConfig default_scene(const KinematicChaind& chain);

struct Sample {
  Image8 color;  // 512 x 424 RGB
  Image8 mask;   // 512 x 424, values {0, 1}
  std::vector<Vec3<double>> joints_3d;  // camera frame, n_joints + 1 origins
  Vec3<double> base_3d = Vec3<double>::Zero();
  int robot_type = 0;
  std::vector<double> angles;
  PinholeCamera<double> camera;

  double foreground_fraction() const;
};

/// Sphere-swept segment in camera coordinates.
struct Capsule {
  Vec3<double> a = Vec3<double>::Zero();
  Vec3<double> b = Vec3<double>::Zero();
  double radius = 0;
  int link = 0;
  bool in_mask = true;
};

/// Link capsules of a posed chain; positions are camera-frame frame origins.
std::vector<Capsule> link_capsules(const KinematicChaind& chain, std::span<const Vec3<double>> positions_cam);

/// Ray parameter of the first intersection of the ray t * dir (unit dir, t > 0) with the capsule.
std::optional<double> ray_capsule_hit(const Vec3<double>& dir, const Capsule& capsule);

/// Unit viewing ray through the centre of pixel (x, y).
Vec3<double> pixel_ray(const PinholeCamera<double>& camera, int x, int y);

/// Union of the in-mask capsules, {0, 1} per pixel.
Image8 rasterize_mask(std::span<const Capsule> capsules, const PinholeCamera<double>& camera);

/// Renders one labeled sample. Joint angles and camera pose are drawn from
/// `scene.seed`; up to 64 draws are tried until the mask covers 6-18% of the frame.
Sample render_sample(const KinematicChaind& chain, int robot_type, const SceneConfig& scene);

struct RobotEntry {
  KinematicChaind chain;
  std::string name;
};

/// Renders n samples into out_dir and writes the manifest. Sample i uses
/// robots[i % robots.size()] with robot_type = its index in `robots`. Every
/// sample gets its own seed, background and brightness derived from
/// base_config.seed; distance/elevation ranges come from default_scene of
/// each chain unless `use_base_ranges` is set.
DatasetManifest generate_dataset(std::span<const RobotEntry> robots, std::size_t n, const SceneConfig& base_config,
                                 const std::filesystem::path& out_dir, bool use_base_ranges = false);

DatasetManifest generate_dataset(const KinematicChaind& chain, int robot_type, std::size_t n,
                                 const SceneConfig& base_config, const std::filesystem::path& out_dir);

}  // namespace mocnn
