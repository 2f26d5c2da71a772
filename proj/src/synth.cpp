#include "mocnn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "mocnn/random.hpp"

namespace mocnn {

namespace {

using Vec3d = Vec3<double>;

constexpr double kNearPlane = 0.05;

struct Rgb {
  double r, g, b;
};

// Flat link colors, base to tool.
constexpr std::array<Rgb, 7> kUrPalette = {{{55, 115, 185},
                                            {200, 204, 208},
                                            {196, 200, 205},
                                            {55, 115, 185},
                                            {200, 204, 208},
                                            {55, 115, 185},
                                            {90, 90, 95}}};
constexpr std::array<Rgb, 7> kKukaPalette = {{{235, 105, 25},
                                              {226, 226, 220},
                                              {235, 105, 25},
                                              {226, 226, 220},
                                              {235, 105, 25},
                                              {226, 226, 220},
                                              {70, 70, 72}}};

Rgb link_color(const std::string& family, int link) {
  const auto& palette = family == "kuka" ? kKukaPalette : kUrPalette;
  return palette[std::size_t(link) % palette.size()];
}

// Direction towards the light in camera coordinates (above and behind the camera).
const Vec3d kLightDir = Vec3d(-0.3, -0.6, -0.75).normalized();

double chain_reach(const KinematicChaind& chain) {
  double reach = 0;
  for (const auto& j : chain.joints) reach += j.offset.translation.norm();
  return reach;
}

struct PixelBox {
  int x0, y0, x1, y1;  // inclusive-exclusive
  bool empty() const { return x0 >= x1 || y0 >= y1; }
};

// Image-space bounding box of a capsule that lies in front of the camera.
PixelBox capsule_box(const Capsule& c, const PinholeCamera<double>& camera) {
  const Vec3d lo = c.a.cwiseMin(c.b).array() - c.radius;
  const Vec3d hi = c.a.cwiseMax(c.b).array() + c.radius;
  double umin = std::numeric_limits<double>::infinity(), vmin = umin;
  double umax = -umin, vmax = -umin;
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3d p((corner & 1) ? hi.x() : lo.x(), (corner & 2) ? hi.y() : lo.y(), (corner & 4) ? hi.z() : lo.z());
    const auto px = project(camera, p);
    umin = std::min(umin, px.u);
    umax = std::max(umax, px.u);
    vmin = std::min(vmin, px.v);
    vmax = std::max(vmax, px.v);
  }
  const auto clampi = [](double v, int hi_limit) {
    return static_cast<int>(std::clamp(v, 0.0, double(hi_limit)));
  };
  return {clampi(std::floor(umin) - 1, camera.width), clampi(std::floor(vmin) - 1, camera.height),
          clampi(std::ceil(umax) + 2, camera.width), clampi(std::ceil(vmax) + 2, camera.height)};
}

bool in_front(const Capsule& c) { return c.a.z() - c.radius > kNearPlane && c.b.z() - c.radius > kNearPlane; }

double smooth(double t) { return t * t * (3 - 2 * t); }

Image8 render_background(const PinholeCamera<double>& camera, int background_id, double brightness) {
  Rng rng(mix_seed(0xb4c6u + std::uint64_t(background_id)));
  const auto color = [&] {
    return Rgb{rng.uniform(35, 190), rng.uniform(35, 190), rng.uniform(35, 190)};
  };
  const Rgb c1 = color(), c2 = color();
  const int kind = background_id % 3;
  Image8 image(camera.width, camera.height, 3);

  const double angle = rng.uniform(0, 2 * M_PI);
  const int cell = 16 + int(rng.below(49));
  constexpr int kGrid = 32;
  const int gw = camera.width / kGrid + 2, gh = camera.height / kGrid + 2;
  std::vector<double> lattice(std::size_t(gw) * gh);
  for (auto& v : lattice) v = rng.uniform();

  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      double t = 0;
      if (kind == 0) {
        const double s = ((x - camera.width / 2.0) * std::cos(angle) + (y - camera.height / 2.0) * std::sin(angle)) /
                         double(camera.width);
        t = std::clamp(0.5 + s, 0.0, 1.0);
      } else if (kind == 1) {
        t = ((x / cell) + (y / cell)) % 2 ? 1.0 : 0.0;
      } else {
        const int gx = x / kGrid, gy = y / kGrid;
        const double fx = smooth(double(x % kGrid) / kGrid), fy = smooth(double(y % kGrid) / kGrid);
        const auto at = [&](int i, int j) { return lattice[std::size_t(j) * gw + i]; };
        const double top = at(gx, gy) * (1 - fx) + at(gx + 1, gy) * fx;
        const double bottom = at(gx, gy + 1) * (1 - fx) + at(gx + 1, gy + 1) * fx;
        t = top * (1 - fy) + bottom * fy;
      }
      const double rgb[3] = {c1.r + (c2.r - c1.r) * t, c1.g + (c2.g - c1.g) * t, c1.b + (c2.b - c1.b) * t};
      for (int ch = 0; ch < 3; ++ch) {
        image.at(x, y, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(rgb[ch] * brightness), 0L, 255L));
      }
    }
  }
  return image;
}

struct Pose {
  std::vector<double> angles;
  std::vector<Vec3d> positions;  // base frame
};

Pose random_pose(const KinematicChaind& chain, Rng& rng) {
  Pose pose;
  for (const auto& j : chain.joints) pose.angles.push_back(rng.uniform(j.lower, j.upper));
  pose.positions = forward_kinematics<double>(chain, pose.angles);
  return pose;
}

void shade(Image8& color, const std::vector<Capsule>& capsules, const std::vector<std::string>& families,
           const PinholeCamera<double>& camera, double brightness) {
  const std::size_t pixels = std::size_t(camera.width) * camera.height;
  std::vector<double> depth(pixels, std::numeric_limits<double>::infinity());
  std::vector<int> owner(pixels, -1);
  for (std::size_t c = 0; c < capsules.size(); ++c) {
    const auto box = capsule_box(capsules[c], camera);
    for (int y = box.y0; y < box.y1; ++y) {
      for (int x = box.x0; x < box.x1; ++x) {
        const auto t = ray_capsule_hit(pixel_ray(camera, x, y), capsules[c]);
        const std::size_t k = std::size_t(y) * camera.width + x;
        if (t && *t < depth[k]) {
          depth[k] = *t;
          owner[k] = int(c);
        }
      }
    }
  }
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const std::size_t k = std::size_t(y) * camera.width + x;
      if (owner[k] < 0) continue;
      const Capsule& cap = capsules[std::size_t(owner[k])];
      const Vec3d p = depth[k] * pixel_ray(camera, x, y);
      const Vec3d ab = cap.b - cap.a;
      const double len2 = ab.squaredNorm();
      const double s = len2 > 0 ? std::clamp((p - cap.a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      const Vec3d normal = (p - (cap.a + s * ab)).normalized();
      const double intensity = (0.35 + 0.65 * std::max(0.0, normal.dot(kLightDir))) * brightness;
      const Rgb base = link_color(families[std::size_t(owner[k])], cap.link);
      const double rgb[3] = {base.r, base.g, base.b};
      for (int ch = 0; ch < 3; ++ch) {
        color.at(x, y, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(rgb[ch] * intensity), 0L, 255L));
      }
    }
  }
}

}  // namespace

void SceneConfig::validate() const {
  if (!(distance_min > 0 && distance_min <= distance_max)) {
    throw Error(Errc::InvalidArgument, "camera distance range must satisfy 0 < min <= max");
  }
  if (!(elevation_min <= elevation_max)) throw Error(Errc::InvalidArgument, "elevation range reversed");
  if (!(brightness >= 0.5 && brightness <= 1.5)) throw Error(Errc::InvalidArgument, "brightness outside [0.5, 1.5]");
  if (background_id < 0) throw Error(Errc::InvalidArgument, "background_id must be >= 0");
}

SceneConfig default_scene(const KinematicChaind& chain) {
  const double reach = chain_reach(chain);
  SceneConfig scene;
  scene.distance_min = 0.62 * reach;
  scene.distance_max = 1.05 * reach;
  return scene;
}

double Sample::foreground_fraction() const {
  if (mask.pixels.empty()) return 0;
  std::size_t fg = 0;
  for (auto v : mask.pixels) fg += v ? 1 : 0;
  return double(fg) / double(mask.pixels.size());
}

std::vector<Capsule> link_capsules(const KinematicChaind& chain, std::span<const Vec3<double>> positions_cam) {
  if (positions_cam.size() != chain.n_joints() + 1) {
    throw Error(Errc::AngleCountMismatch, "expected n_joints + 1 frame origins");
  }
  std::vector<Capsule> out;
  for (std::size_t i = 0; i < chain.n_joints(); ++i) {
    out.push_back({positions_cam[i], positions_cam[i + 1], chain.joints[i].radius, int(i), true});
  }
  return out;
}

std::optional<double> ray_capsule_hit(const Vec3<double>& dir, const Capsule& capsule) {
  const Vec3d ba = capsule.b - capsule.a;
  const Vec3d oa = -capsule.a;  // ray origin is the camera centre
  const double r2 = capsule.radius * capsule.radius;
  const double baba = ba.dot(ba);
  const auto sphere = [&](const Vec3d& oc) -> std::optional<double> {
    const double b = dir.dot(oc);
    const double c = oc.dot(oc) - r2;
    const double h = b * b - c;
    if (h < 0) return std::nullopt;
    const double t = -b - std::sqrt(h);
    if (t > 0) return t;
    return std::nullopt;
  };
  if (baba == 0) return sphere(oa);
  const double bard = ba.dot(dir);
  const double baoa = ba.dot(oa);
  const double rdoa = dir.dot(oa);
  const double oaoa = oa.dot(oa);
  const double a = baba - bard * bard;
  const double b = baba * rdoa - baoa * bard;
  const double c = baba * oaoa - baoa * baoa - r2 * baba;
  if (a <= 1e-14 * baba) {
    // Ray parallel to the axis: only the caps can be hit first.
    const auto ta = sphere(oa);
    const auto tb = sphere(-capsule.b);
    if (ta && tb) return std::min(*ta, *tb);
    return ta ? ta : tb;
  }
  const double h = b * b - a * c;
  if (h < 0) return std::nullopt;
  const double t = (-b - std::sqrt(h)) / a;
  const double y = baoa + t * bard;
  if (y > 0 && y < baba) {
    if (t > 0) return t;
    return std::nullopt;
  }
  return sphere(y <= 0 ? oa : Vec3d(-capsule.b));
}

Vec3<double> pixel_ray(const PinholeCamera<double>& camera, int x, int y) {
  return Vec3d((x + 0.5 - camera.cx) / camera.fx, (y + 0.5 - camera.cy) / camera.fy, 1.0).normalized();
}

Image8 rasterize_mask(std::span<const Capsule> capsules, const PinholeCamera<double>& camera) {
  Image8 mask(camera.width, camera.height, 1);
  for (const auto& cap : capsules) {
    if (!cap.in_mask) continue;
    if (!in_front(cap)) throw Error(Errc::BehindCamera, "capsule crosses the near plane");
    const auto box = capsule_box(cap, camera);
    for (int y = box.y0; y < box.y1; ++y) {
      for (int x = box.x0; x < box.x1; ++x) {
        if (mask.at(x, y)) continue;
        if (ray_capsule_hit(pixel_ray(camera, x, y), cap)) mask.at(x, y) = 1;
      }
    }
  }
  return mask;
}

Sample render_sample(const KinematicChaind& chain, int robot_type, const SceneConfig& scene) {
  validate_chain(chain);
  scene.validate();
  Rng rng(scene.seed);
  const double reach = chain_reach(chain);
  for (int attempt = 0; attempt < kRenderAttempts; ++attempt) {
    const Pose pose = random_pose(chain, rng);
    const Vec3d target(rng.uniform(-0.1, 0.1) * reach, rng.uniform(-0.1, 0.1) * reach,
                       rng.uniform(0.25, 0.55) * reach);
    const double azimuth = rng.uniform(0, 2 * M_PI);
    const double elevation = rng.uniform(scene.elevation_min, scene.elevation_max);
    const double distance = rng.uniform(scene.distance_min, scene.distance_max);
    const Vec3d eye = target + distance * Vec3d(std::cos(elevation) * std::cos(azimuth),
                                                std::cos(elevation) * std::sin(azimuth), std::sin(elevation));
    PinholeCamera<double> camera;
    camera.extrinsic = look_at(eye, target);

    const auto positions_cam = to_camera_frame<double>(pose.positions, camera);
    const auto capsules = link_capsules(chain, positions_cam);
    if (!std::all_of(capsules.begin(), capsules.end(), in_front)) continue;
    Image8 mask = rasterize_mask(capsules, camera);
    std::size_t fg = 0;
    for (auto v : mask.pixels) fg += v;
    const double fraction = double(fg) / double(mask.pixels.size());
    if (fraction < kMinForegroundFraction || fraction > kMaxForegroundFraction) continue;

    std::vector<Capsule> scene_capsules = capsules;
    std::vector<std::string> families(capsules.size(), chain.family);
    if (scene.distractor) {
      // A second robot placed behind the target, away from the camera.
      const Pose other = random_pose(chain, rng);
      const Vec3d away = (target - eye).normalized();
      const Vec3d side = away.cross(Vec3d::UnitZ()).normalized();
      Vec3d base = target + rng.uniform(1.2, 2.2) * reach * away + rng.uniform(-0.6, 0.6) * reach * side;
      base.z() = 0;
      std::vector<Vec3d> shifted;
      for (const auto& p : other.positions) shifted.push_back(p + base);
      for (auto cap : link_capsules(chain, to_camera_frame<double>(shifted, camera))) {
        cap.in_mask = false;
        if (!in_front(cap)) continue;
        scene_capsules.push_back(cap);
        families.push_back(chain.family);
      }
    }

    Sample sample;
    sample.color = render_background(camera, scene.background_id, scene.brightness);
    shade(sample.color, scene_capsules, families, camera, scene.brightness);
    sample.mask = std::move(mask);
    sample.joints_3d = positions_cam;
    sample.base_3d = positions_cam.front();
    sample.robot_type = robot_type;
    sample.angles = pose.angles;
    sample.camera = camera;
    return sample;
  }
  throw Error(Errc::UnreachableForegroundFraction,
              "no camera pose / joint configuration in " + std::to_string(kRenderAttempts) +
                  " attempts gave a foreground fraction in [0.06, 0.18]");
}

DatasetManifest generate_dataset(std::span<const RobotEntry> robots, std::size_t n, const SceneConfig& base_config,
                                 const std::filesystem::path& out_dir, bool use_base_ranges) {
  if (n < 1) throw Error(Errc::InvalidArgument, "dataset needs at least one sample");
  if (robots.empty()) throw Error(Errc::InvalidArgument, "no robots given");
  const std::size_t n_joints = robots.front().chain.n_joints();
  for (const auto& r : robots) {
    if (r.chain.n_joints() != n_joints) throw Error(Errc::InvalidArgument, "robots in one dataset must share n_joints");
  }
  std::filesystem::create_directories(out_dir);
  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.generation_seed = base_config.seed;
  for (const auto& r : robots) manifest.robot_names.push_back(r.name);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t which = i % robots.size();
    const auto& chain = robots[which].chain;
    SceneConfig scene = use_base_ranges ? base_config : default_scene(chain);
    scene.seed = derive_seed(base_config.seed, i);
    scene.distractor = base_config.distractor;
    Rng appearance(derive_seed(scene.seed, 0xa11ceULL));
    scene.background_id = base_config.background_id >= 0 ? base_config.background_id : int(appearance.below(1000));
    scene.brightness = base_config.brightness > 0 ? base_config.brightness : appearance.uniform(0.5, 1.5);

    const Sample sample = render_sample(chain, int(which), scene);
    char id[32];
    std::snprintf(id, sizeof(id), "s%06zu", i);
    SampleRecord record;
    record.id = id;
    record.color_path = record.id + "_color.png";
    record.mask_path = record.id + "_mask.png";
    record.joints_3d = sample.joints_3d;
    record.base_3d = sample.base_3d;
    record.angles = sample.angles;
    record.robot_type = sample.robot_type;

    write_png(out_dir / record.color_path, sample.color);
    Image8 mask_png = sample.mask;
    for (auto& v : mask_png.pixels) v = v ? 255 : 0;
    write_png(out_dir / record.mask_path, mask_png);
    manifest.records.push_back(std::move(record));
  }
  save_manifest(manifest);
  return manifest;
}

DatasetManifest generate_dataset(const KinematicChaind& chain, int robot_type, std::size_t n,
                                 const SceneConfig& base_config, const std::filesystem::path& out_dir) {
  if (robot_type < 0) throw Error(Errc::BadLabel, "robot_type must be >= 0");
  // Record labels index robot_names, so earlier slots are left unnamed.
  std::vector<RobotEntry> robots(std::size_t(robot_type) + 1, RobotEntry{chain, ""});
  robots.back().name = chain.name;
  auto manifest = generate_dataset(std::span<const RobotEntry>(robots).last(1), n, base_config, out_dir, true);
  for (auto& r : manifest.records) r.robot_type = robot_type;
  manifest.robot_names.assign(std::size_t(robot_type) + 1, "");
  manifest.robot_names.back() = chain.name;
  save_manifest(manifest);
  return manifest;
}

}  // namespace mocnn
