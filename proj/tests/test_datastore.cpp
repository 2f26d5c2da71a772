#include <algorithm>
#include <set>

#include "doctest.h"
#include "mocnn/datastore.hpp"
#include "mocnn/io.hpp"
#include "mocnn/kinematics.hpp"
#include "mocnn/synth.hpp"
#include "test_util.hpp"

using namespace mocnn;

namespace {

DatasetManifest fake_manifest(std::size_t n) {
  DatasetManifest m;
  m.robot_names = {"r"};
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord r;
    r.id = "s" + std::to_string(i);
    r.joints_3d.assign(7, Vec3<double>(0.1 * double(i), 0.2, 1.0));
    r.base_3d = r.joints_3d[0];
    r.angles.assign(6, 0.25);
    m.records.push_back(r);
  }
  return m;
}

Image8 solid(int channels, std::uint8_t value) {
  Image8 img(kSourceWidth, kSourceHeight, channels);
  std::fill(img.pixels.begin(), img.pixels.end(), value);
  return img;
}

const std::filesystem::path& small_dataset() {
  static const auto dir = [] {
    const auto d = testutil::temp_dir("datastore_small");
    const auto chain = make_chain(RobotModel::Ur5Like);
    SceneConfig base = default_scene(chain);
    base.seed = 17;
    auto m = generate_dataset(chain, 0, 10, base, d);
    save_manifest(split(std::move(m), 0.8, 3));
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("split sizes follow the floor rule") {
  auto m = split(fake_manifest(10), 0.8, 1);
  CHECK(m.indices(SplitTag::Train).size() == 8);
  CHECK(m.indices(SplitTag::Test).size() == 2);
  m = split(fake_manifest(5), 0.8, 1);
  CHECK(m.indices(SplitTag::Train).size() == 4);
  CHECK(m.indices(SplitTag::Test).size() == 1);
  try {
    split(fake_manifest(1), 0.8, 1);
    FAIL("expected TooFewSamples");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TooFewSamples);
  }
}

TEST_CASE("split is a seeded partition") {
  for (std::size_t n : {2u, 3u, 7u, 15u, 100u, 1837u}) {
    const auto a = split(fake_manifest(n), 0.8, 11), b = split(fake_manifest(n), 0.8, 11);
    const auto train = a.indices(SplitTag::Train), test = a.indices(SplitTag::Test);
    CHECK(train.size() + test.size() == n);
    CHECK(train.size() == n * 8 / 10);
    std::set<std::size_t> all(train.begin(), train.end());
    all.insert(test.begin(), test.end());
    CHECK(all.size() == n);
    CHECK(train == b.indices(SplitTag::Train));
  }
  CHECK(split(fake_manifest(100), 0.8, 1).indices(SplitTag::Train) !=
        split(fake_manifest(100), 0.8, 2).indices(SplitTag::Train));
}

TEST_CASE("train subsets are nested across sizes") {
  const auto m = split(fake_manifest(200), 0.8, 4);
  std::vector<std::set<std::size_t>> subsets;
  for (std::size_t n : {10u, 40u, 100u, 160u}) {
    const auto sub = subsample_train(m, n, 77);
    const auto idx = sub.indices(SplitTag::Train);
    CHECK(idx.size() == n);
    CHECK(sub.indices(SplitTag::Test) == m.indices(SplitTag::Test));
    subsets.emplace_back(idx.begin(), idx.end());
  }
  for (std::size_t k = 1; k < subsets.size(); ++k) {
    CHECK(std::includes(subsets[k].begin(), subsets[k].end(), subsets[k - 1].begin(), subsets[k - 1].end()));
  }
  try {
    subsample_train(m, 161, 77);
    FAIL("expected InsufficientSamples");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InsufficientSamples);
  }
}

TEST_CASE("downscale of uniform and hand-computed images") {
  const Tensord white = downscale_input(solid(3, 255));
  CHECK(white.shape() == Shape{3, 212, 256});
  CHECK(std::all_of(white.values().begin(), white.values().end(), [](double v) { return v == 1.0; }));
  const Tensord black = downscale_input(solid(3, 0));
  CHECK(std::all_of(black.values().begin(), black.values().end(), [](double v) { return v == 0.0; }));

  Image8 img = solid(3, 0);
  for (int c = 0; c < 3; ++c) {
    img.at(1, 0, c) = 255;
    img.at(0, 1, c) = 255;
    img.at(1, 1, c) = 255;
  }
  const Tensord t = downscale_input(img);
  CHECK(std::abs(t[0] - 0.75) < 1e-6);
  CHECK(t[1] == 0.0);
  CHECK_THROWS_AS(downscale_input(Image8(256, 212, 3)), Error);
}

TEST_CASE("downscale preserves mean intensity") {
  Rng rng(3);
  Image8 img(kSourceWidth, kSourceHeight, 3);
  for (auto& v : img.pixels) v = std::uint8_t(rng.below(256));
  const Tensord t = downscale_input(img);
  double src = 0, dst = 0;
  for (auto v : img.pixels) src += v / 255.0;
  for (double v : t.values()) dst += v;
  CHECK(std::abs(src / double(img.pixels.size()) - dst / double(t.size())) < 1e-6);
}

TEST_CASE("mask downscale uses the two-of-four majority rule") {
  Image8 mask = solid(1, 0);
  mask.at(0, 0) = 255;  // 1 of 4 -> background
  mask.at(2, 0) = 255;
  mask.at(3, 1) = 255;  // 2 of 4 -> foreground
  mask.at(4, 0) = 255;
  mask.at(5, 0) = 255;
  mask.at(4, 1) = 255;  // 3 of 4
  const auto small = downscale_mask(mask);
  CHECK(small[0] == 0);
  CHECK(small[1] == 1);
  CHECK(small[2] == 1);
  CHECK(small[3] == 0);
}

TEST_CASE("manifest lines round-trip exactly") {
  SampleRecord r;
  r.id = "s000001";
  r.color_path = "s000001_color.png";
  r.mask_path = "s000001_mask.png";
  r.joints_3d = {{0.1, -0.2, 1.3}, {1.0 / 3.0, 2e-17, 0.7}};
  r.base_3d = r.joints_3d[0];
  r.angles = {M_PI / 7};
  r.robot_type = 2;
  r.split_tag = SplitTag::Test;
  const auto line = record_to_json_line(r);
  CHECK(line.find('\n') == std::string::npos);
  const auto back = record_from_json_line(line);
  CHECK(back.id == r.id);
  CHECK(back.joints_3d == r.joints_3d);
  CHECK(back.base_3d == r.base_3d);
  CHECK(back.angles == r.angles);
  CHECK(back.robot_type == 2);
  CHECK(back.split_tag == SplitTag::Test);
  CHECK_THROWS_AS(record_from_json_line("{\"id\": 3}"), Error);
}

TEST_CASE("load_input is pure and matches batches") {
  const auto m = load_manifest(small_dataset());
  REQUIRE(m.records.size() == 10);
  const auto& rec = m.records[m.indices(SplitTag::Train)[0]];
  const Tensord a = load_input(m, rec), b = load_input(m, rec);
  CHECK(a == b);
  const SplitData data(m, SplitTag::Train);
  CHECK(data.image(0) == a);
  const std::vector<std::size_t> items{0};
  const Batch batch = data.make_batch(items);
  CHECK(batch.images.slice(0) == a);
  CHECK(batch.ids[0] == rec.id);
  for (double v : batch.masks.values()) CHECK((v == 0.0 || v == 1.0));
  CHECK(batch.joints.shape() == Shape{1, 18});
  CHECK(batch.joints[0] == rec.joints_3d[1].x());
  CHECK(batch.bases[2] == rec.base_3d.z());
}

TEST_CASE("batch iteration sizes, determinism and coverage") {
  const auto m = load_manifest(small_dataset());
  const SplitData train(m, SplitTag::Train);
  REQUIRE(train.size() == 8);
  std::vector<std::size_t> sizes;
  BatchIterator it(train, 3, 5);
  Batch b;
  std::multiset<std::string> ids;
  while (it.next(b)) {
    sizes.push_back(b.size());
    ids.insert(b.ids.begin(), b.ids.end());
    CHECK(b.images.dim(0) == b.size());
    CHECK(b.masks.dim(0) == b.size());
    CHECK(b.joints.dim(0) == b.size());
    CHECK(b.types.size() == b.size());
  }
  CHECK(sizes == std::vector<std::size_t>{3, 3, 2});
  CHECK(it.batch_count() == 3);
  std::set<std::string> unique(ids.begin(), ids.end());
  CHECK(unique.size() == ids.size());
  std::set<std::string> expected;
  for (auto i : m.indices(SplitTag::Train)) expected.insert(m.records[i].id);
  CHECK(unique == expected);
  CHECK(BatchIterator(train, 3, 5).order() == it.order());
}

TEST_CASE("batch sizes for ten records in fours") {
  auto m = load_manifest(small_dataset());
  for (auto& r : m.records) r.split_tag = SplitTag::Train;
  const SplitData all(m, SplitTag::Train);
  BatchIterator it(all, 4, 1);
  Batch b;
  std::vector<std::size_t> sizes;
  while (it.next(b)) sizes.push_back(b.size());
  CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
}

TEST_CASE("empty split is rejected") {
  auto m = load_manifest(small_dataset());
  for (auto& r : m.records) r.split_tag = SplitTag::Train;
  try {
    SplitData none(m, SplitTag::Test);
    FAIL("expected EmptySplit");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptySplit);
  }
}

TEST_CASE("manifest load checks referenced files") {
  const auto dir = testutil::temp_dir("datastore_missing");
  auto m = load_manifest(small_dataset());
  for (const auto& entry : std::filesystem::directory_iterator(small_dataset())) {
    std::filesystem::copy(entry.path(), dir / entry.path().filename());
  }
  std::filesystem::remove(dir / m.records[3].mask_path);
  CHECK_THROWS_AS(load_manifest(dir), Error);
  std::filesystem::remove_all(dir);
}
