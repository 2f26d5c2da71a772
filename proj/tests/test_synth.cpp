#include <cmath>

#include "doctest.h"
#include "mocnn/datastore.hpp"
#include "mocnn/io.hpp"
#include "mocnn/kinematics.hpp"
#include "mocnn/synth.hpp"
#include "test_util.hpp"

using namespace mocnn;

namespace {

// Squared distance from the viewing ray {t d, t >= 0} to the segment [a, b],
// minimized over the segment by sampling a quadratic exactly.
double ray_segment_distance2(const Vec3<double>& d, const Vec3<double>& a, const Vec3<double>& b) {
  // |P(s)|^2 - (P(s).d)^2 is quadratic in s for the infinite line through the origin.
  const Vec3<double> u = b - a;
  const double q2 = u.squaredNorm() - std::pow(u.dot(d), 2);
  const double q1 = 2 * (a.dot(u) - a.dot(d) * u.dot(d));
  const double q0 = a.squaredNorm() - std::pow(a.dot(d), 2);
  double s = q2 > 0 ? -q1 / (2 * q2) : 0;
  s = std::clamp(s, 0.0, 1.0);
  double best = q0 + q1 * s + q2 * s * s;
  for (double e : {0.0, 1.0}) best = std::min(best, q0 + q1 * e + q2 * e * e);
  return best;
}

// Minimum pixel distance from (u, v) to a foreground mask pixel centre.
double distance_to_mask(const Image8& mask, double u, double v) {
  double best = std::numeric_limits<double>::infinity();
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      best = std::min(best, std::hypot(x + 0.5 - u, y + 0.5 - v));
    }
  }
  return best;
}

}  // namespace

TEST_CASE("rendering is deterministic in the seed") {
  const auto chain = make_chain(RobotModel::Ur5Like);
  auto scene = default_scene(chain);
  scene.seed = 42;
  const Sample a = render_sample(chain, 1, scene);
  const Sample b = render_sample(chain, 1, scene);
  CHECK(a.color.pixels == b.color.pixels);
  CHECK(a.mask.pixels == b.mask.pixels);
  CHECK(a.angles == b.angles);
  for (std::size_t i = 0; i < a.joints_3d.size(); ++i) CHECK(a.joints_3d[i] == b.joints_3d[i]);
  CHECK(a.robot_type == 1);
  scene.seed = 43;
  CHECK(render_sample(chain, 1, scene).mask.pixels != a.mask.pixels);
}

TEST_CASE("samples satisfy the shape, fraction and ground-truth contracts") {
  for (auto model : {RobotModel::Ur3Like, RobotModel::Ur10Like, RobotModel::KukaLike}) {
    const auto chain = make_chain(model);
    auto scene = default_scene(chain);
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      scene.seed = seed;
      scene.background_id = int(seed % 5);
      scene.brightness = 0.5 + 0.1 * double(seed % 11);
      const Sample s = render_sample(chain, 0, scene);
      REQUIRE(s.color.width == 512);
      REQUIRE(s.color.height == 424);
      REQUIRE(s.color.channels == 3);
      REQUIRE(s.mask.width == 512);
      REQUIRE(s.mask.channels == 1);
      CHECK(s.foreground_fraction() >= 0.06);
      CHECK(s.foreground_fraction() <= 0.18);
      REQUIRE(s.joints_3d.size() == chain.n_joints() + 1);
      CHECK(s.base_3d == s.joints_3d[0]);
      // joints_3d is the camera-frame image of forward kinematics
      const auto fk = forward_kinematics<double>(chain, s.angles);
      for (std::size_t i = 0; i < fk.size(); ++i) CHECK((s.camera.extrinsic.apply(fk[i]) - s.joints_3d[i]).norm() < 1e-12);
      // all rendered geometry is in front of the camera
      for (const auto& cap : link_capsules(chain, s.joints_3d)) {
        CHECK(cap.a.z() - cap.radius > 0);
        CHECK(cap.b.z() - cap.radius > 0);
      }
      // projected joints sit on the mask
      for (std::size_t i = 0; i < s.joints_3d.size(); ++i) {
        const auto px = project(s.camera, s.joints_3d[i]);
        if (px.u < 0 || px.v < 0 || px.u >= 512 || px.v >= 424) continue;
        const double r = chain.joints[i == 0 ? 0 : i - 1].radius;
        const double r_px = s.camera.fx * r / s.joints_3d[i].z();
        CHECK(distance_to_mask(s.mask, px.u, px.v) <= 2 * r_px);
      }
    }
  }
}

TEST_CASE("single capsule mask matches the per-pixel distance oracle") {
  PinholeCamera<double> cam;
  Rng rng(5);
  for (int trial = 0; trial < 6; ++trial) {
    Capsule cap;
    cap.a = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.8, 1.6)};
    cap.b = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.8, 1.6)};
    cap.radius = rng.uniform(0.02, 0.08);
    const std::vector<Capsule> caps{cap};
    const Image8 mask = rasterize_mask(caps, cam);
    std::size_t mismatches = 0, fg = 0;
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const bool inside = ray_segment_distance2(pixel_ray(cam, x, y), cap.a, cap.b) <= cap.radius * cap.radius;
        mismatches += inside != bool(mask.at(x, y));
        fg += inside;
      }
    }
    CHECK(fg > 100);
    CHECK(mismatches == 0);
  }
}

TEST_CASE("ray-capsule hit returns the first surface point") {
  Capsule cap{{0, 0, 2}, {0, 0, 3}, 0.1, 0, true};
  const auto t = ray_capsule_hit(Vec3<double>(0, 0, 1), cap);
  REQUIRE(t);
  CHECK(*t == doctest::Approx(1.9));
  Capsule side{{-0.5, 0, 2}, {0.5, 0, 2}, 0.1, 0, true};
  const auto ts = ray_capsule_hit(Vec3<double>(0, 0, 1), side);
  REQUIRE(ts);
  CHECK(*ts == doctest::Approx(1.9));
  CHECK_FALSE(ray_capsule_hit(Vec3<double>(0, 1, 0), side));
  CHECK_FALSE(ray_capsule_hit(Vec3<double>(0, 0, -1), side));
}

TEST_CASE("impossible scenes report UnreachableForegroundFraction") {
  const auto chain = make_chain(RobotModel::Ur3Like);
  SceneConfig scene;
  scene.distance_min = scene.distance_max = 40.0;  // robot is a speck
  try {
    render_sample(chain, 0, scene);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnreachableForegroundFraction);
  }
  scene.brightness = 2.0;
  CHECK_THROWS_AS(render_sample(chain, 0, scene), Error);
}

TEST_CASE("distractor robot shows in color but not in the mask") {
  const auto chain = make_chain(RobotModel::Ur5Like);
  auto scene = default_scene(chain);
  scene.seed = 3;
  const Sample plain = render_sample(chain, 0, scene);
  scene.distractor = true;
  const Sample busy = render_sample(chain, 0, scene);
  CHECK(plain.mask.pixels == busy.mask.pixels);
  CHECK(plain.joints_3d == busy.joints_3d);
}

TEST_CASE("generated datasets are complete and reproducible") {
  const auto dir_a = testutil::temp_dir("gen_a"), dir_b = testutil::temp_dir("gen_b");
  const auto chain = make_chain(RobotModel::KukaLike);
  SceneConfig base = default_scene(chain);
  base.seed = 99;
  const auto m = generate_dataset(chain, 0, 10, base, dir_a);
  REQUIRE(m.records.size() == 10);
  for (const auto& r : m.records) {
    CHECK(std::filesystem::exists(dir_a / r.color_path));
    CHECK(std::filesystem::exists(dir_a / r.mask_path));
    CHECK(r.n_joints() == 7);
    const Image8 mask = read_png(dir_a / r.mask_path);
    for (auto v : mask.pixels) REQUIRE((v == 0 || v == 255));
  }
  generate_dataset(chain, 0, 10, base, dir_b);
  for (const char* f : {"manifest.jsonl", "dataset.json"}) CHECK(read_file(dir_a / f) == read_file(dir_b / f));
  for (const auto& r : m.records) {
    CHECK(read_file(dir_a / r.color_path) == read_file(dir_b / r.color_path));
    CHECK(read_file(dir_a / r.mask_path) == read_file(dir_b / r.mask_path));
  }
  const auto loaded = load_manifest(dir_a);
  CHECK(loaded.records.size() == 10);
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("mixed-robot datasets cycle robots and label by list position") {
  const auto dir = testutil::temp_dir("gen_mixed");
  const std::vector<RobotEntry> robots{{make_chain(RobotModel::Ur3Like), "ur3like"},
                                       {make_chain(RobotModel::Ur5Like), "ur5like"},
                                       {make_chain(RobotModel::Ur10Like), "ur10like"}};
  SceneConfig base;
  base.seed = 5;
  base.background_id = -1;
  base.brightness = 0;
  const auto m = generate_dataset(robots, 6, base, dir);
  REQUIRE(m.robot_names == std::vector<std::string>{"ur3like", "ur5like", "ur10like"});
  for (std::size_t i = 0; i < 6; ++i) CHECK(m.records[i].robot_type == int(i % 3));
  std::filesystem::remove_all(dir);
}

TEST_CASE("a full-size Kuka-like corpus of 1837 samples") {
  const auto dir = testutil::temp_dir("gen_1837");
  const auto chain = make_chain(RobotModel::KukaLike);
  SceneConfig base = default_scene(chain);
  base.seed = 1837;
  const auto m = generate_dataset(chain, 0, 1837, base, dir);
  CHECK(m.records.size() == 1837);
  CHECK(load_manifest(dir).records.size() == 1837);
  std::filesystem::remove_all(dir);
}
