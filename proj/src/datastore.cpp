#include "mocnn/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mocnn/random.hpp"

namespace mocnn {

namespace {

using ordered_json = nlohmann::ordered_json;

SplitTag parse_split_tag(const std::string& s) {
  if (s == "train") return SplitTag::Train;
  if (s == "test") return SplitTag::Test;
  if (s == "unassigned") return SplitTag::Unassigned;
  throw Error(Errc::FormatError, "unknown split_tag '" + s + "'");
}

ordered_json vec_json(const Vec3<double>& v) { return ordered_json::array({v.x(), v.y(), v.z()}); }

Vec3<double> json_vec(const ordered_json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(Errc::FormatError, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void check_source(const Image8& image, int channels, const std::string& what) {
  if (image.width != kSourceWidth || image.height != kSourceHeight || image.channels != channels) {
    throw Error(Errc::BadDimensions, what + " is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                                         "x" + std::to_string(image.channels) + ", expected 512x424x" +
                                         std::to_string(channels));
  }
}

// Sums of each 2x2 block per channel, channel-major.
std::vector<std::uint16_t> block_sums(const Image8& color) {
  check_source(color, 3, "color image");
  std::vector<std::uint16_t> sums(std::size_t(3) * kInputHeight * kInputWidth);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < kInputHeight; ++y) {
      for (int x = 0; x < kInputWidth; ++x) {
        sums[(std::size_t(c) * kInputHeight + y) * kInputWidth + x] = std::uint16_t(
            color.at(2 * x, 2 * y, c) + color.at(2 * x + 1, 2 * y, c) + color.at(2 * x, 2 * y + 1, c) +
            color.at(2 * x + 1, 2 * y + 1, c));
      }
    }
  }
  return sums;
}

Tensord sums_to_input(const std::vector<std::uint16_t>& sums) {
  Tensord t({3, std::size_t(kInputHeight), std::size_t(kInputWidth)});
  for (std::size_t i = 0; i < sums.size(); ++i) t[i] = double(sums[i]) / (4.0 * 255.0);
  return t;
}

}  // namespace

std::string_view split_tag_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::Train: return "train";
    case SplitTag::Test: return "test";
    case SplitTag::Unassigned: return "unassigned";
  }
  return "unassigned";
}

std::vector<std::size_t> DatasetManifest::indices(SplitTag tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split_tag == tag) out.push_back(i);
  }
  return out;
}

std::string record_to_json_line(const SampleRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["color_path"] = r.color_path;
  j["mask_path"] = r.mask_path;
  j["joints_3d"] = ordered_json::array();
  for (const auto& p : r.joints_3d) j["joints_3d"].push_back(vec_json(p));
  j["base_3d"] = vec_json(r.base_3d);
  j["angles"] = r.angles;
  j["robot_type"] = r.robot_type;
  j["split_tag"] = std::string(split_tag_name(r.split_tag));
  return j.dump();
}

SampleRecord record_from_json_line(std::string_view line) {
  try {
    const auto j = ordered_json::parse(line);
    SampleRecord r;
    r.id = j.at("id").get<std::string>();
    r.color_path = j.at("color_path").get<std::string>();
    r.mask_path = j.at("mask_path").get<std::string>();
    for (const auto& p : j.at("joints_3d")) r.joints_3d.push_back(json_vec(p));
    r.base_3d = json_vec(j.at("base_3d"));
    r.angles = j.at("angles").get<std::vector<double>>();
    r.robot_type = j.value("robot_type", 0);
    r.split_tag = parse_split_tag(j.at("split_tag").get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, std::string("manifest record: ") + e.what());
  }
}

void save_manifest(const DatasetManifest& manifest) {
  std::string lines;
  for (const auto& r : manifest.records) lines += record_to_json_line(r) + "\n";
  std::filesystem::create_directories(manifest.root);
  write_file_atomic(manifest.root / kManifestFile, lines);
  ordered_json meta;
  meta["robot_names"] = manifest.robot_names;
  meta["n_joints"] = manifest.n_joints();
  meta["n_samples"] = manifest.records.size();
  meta["generation_seed"] = manifest.generation_seed;
  meta["split_seed"] = manifest.split_seed;
  write_file_atomic(manifest.root / kDatasetMetaFile, meta.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  DatasetManifest manifest;
  manifest.root = dir;
  try {
    const auto meta = ordered_json::parse(read_file(dir / kDatasetMetaFile));
    manifest.robot_names = meta.at("robot_names").get<std::vector<std::string>>();
    manifest.generation_seed = meta.at("generation_seed").get<std::uint64_t>();
    manifest.split_seed = meta.at("split_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, std::string("dataset.json: ") + e.what());
  }
  std::istringstream lines(read_file(dir / kManifestFile));
  std::string line;
  std::set<std::string> ids;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    auto record = record_from_json_line(line);
    if (!ids.insert(record.id).second) throw Error(Errc::FormatError, "duplicate record id " + record.id);
    for (const auto& path : {record.color_path, record.mask_path}) {
      if (!std::filesystem::exists(dir / path)) throw Error(Errc::Io, "missing file " + (dir / path).string());
    }
    if (record.robot_type < 0 || std::size_t(record.robot_type) >= manifest.robot_names.size()) {
      throw Error(Errc::BadLabel, "record " + record.id + " has robot_type outside robot_names");
    }
    manifest.records.push_back(std::move(record));
  }
  const std::size_t n_joints = manifest.n_joints();
  for (const auto& r : manifest.records) {
    if (r.n_joints() != n_joints || r.angles.size() != n_joints) {
      throw Error(Errc::FormatError, "record " + r.id + " has inconsistent joint count");
    }
  }
  return manifest;
}

DatasetManifest split(DatasetManifest manifest, double train_fraction, std::uint64_t seed) {
  const std::size_t n = manifest.records.size();
  if (n < 2) throw Error(Errc::TooFewSamples, "split needs at least 2 records, have " + std::to_string(n));
  if (!(train_fraction > 0 && train_fraction < 1)) throw Error(Errc::InvalidArgument, "train fraction in (0, 1)");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * double(n) + 1e-9));
  for (std::size_t k = 0; k < n; ++k) {
    manifest.records[order[k]].split_tag = k < n_train ? SplitTag::Train : SplitTag::Test;
  }
  manifest.split_seed = seed;
  return manifest;
}

DatasetManifest subsample_train(const DatasetManifest& manifest, std::size_t count, std::uint64_t seed) {
  auto train = manifest.indices(SplitTag::Train);
  if (count > train.size()) {
    throw Error(Errc::InsufficientSamples, "requested " + std::to_string(count) + " training samples, split has " +
                                               std::to_string(train.size()));
  }
  Rng rng(seed);
  rng.shuffle(train.begin(), train.end());
  DatasetManifest out = manifest;
  for (std::size_t k = count; k < train.size(); ++k) out.records[train[k]].split_tag = SplitTag::Unassigned;
  return out;
}

Tensord downscale_input(const Image8& color) { return sums_to_input(block_sums(color)); }

std::vector<std::uint8_t> downscale_mask(const Image8& mask) {
  check_source(mask, 1, "mask image");
  std::vector<std::uint8_t> out(std::size_t(kInputHeight) * kInputWidth);
  for (int y = 0; y < kInputHeight; ++y) {
    for (int x = 0; x < kInputWidth; ++x) {
      const int votes = (mask.at(2 * x, 2 * y) != 0) + (mask.at(2 * x + 1, 2 * y) != 0) +
                        (mask.at(2 * x, 2 * y + 1) != 0) + (mask.at(2 * x + 1, 2 * y + 1) != 0);
      out[std::size_t(y) * kInputWidth + x] = votes >= 2 ? 1 : 0;
    }
  }
  return out;
}

Tensord load_input(const DatasetManifest& manifest, const SampleRecord& record) {
  return downscale_input(read_png(manifest.root / record.color_path));
}

SplitData::SplitData(const DatasetManifest& manifest, SplitTag tag) {
  for (auto i : manifest.indices(tag)) records_.push_back(manifest.records[i]);
  if (records_.empty()) {
    throw Error(Errc::EmptySplit, "split '" + std::string(split_tag_name(tag)) + "' has no records");
  }
  load(manifest);
}

SplitData::SplitData(const DatasetManifest& manifest, std::span<const std::size_t> record_indices) {
  for (auto i : record_indices) records_.push_back(manifest.records.at(i));
  if (records_.empty()) throw Error(Errc::EmptySplit, "no records selected");
  load(manifest);
}

void SplitData::load(const DatasetManifest& manifest) {
  n_joints_ = records_.front().n_joints();
  input_sums_.reserve(records_.size());
  masks_.reserve(records_.size());
  for (const auto& r : records_) {
    if (r.n_joints() != n_joints_) throw Error(Errc::FormatError, "mixed joint counts in one split");
    input_sums_.push_back(block_sums(read_png(manifest.root / r.color_path)));
    masks_.push_back(downscale_mask(read_png(manifest.root / r.mask_path)));
  }
}

Tensord SplitData::image(std::size_t i) const { return sums_to_input(input_sums_.at(i)); }

Batch SplitData::make_batch(std::span<const std::size_t> items) const {
  const std::size_t b = items.size();
  const std::size_t plane = std::size_t(kInputHeight) * kInputWidth;
  Batch batch;
  batch.images = Tensord({b, 3, std::size_t(kInputHeight), std::size_t(kInputWidth)});
  batch.masks = Tensord({b, std::size_t(kInputHeight), std::size_t(kInputWidth)});
  batch.joints = Tensord({b, 3 * n_joints_});
  batch.bases = Tensord({b, 3});
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t i = items[k];
    const auto& r = records_.at(i);
    batch.ids.push_back(r.id);
    batch.types.push_back(r.robot_type);
    const auto& sums = input_sums_[i];
    for (std::size_t p = 0; p < sums.size(); ++p) batch.images[k * 3 * plane + p] = double(sums[p]) / (4.0 * 255.0);
    for (std::size_t p = 0; p < plane; ++p) batch.masks[k * plane + p] = masks_[i][p];
    for (std::size_t j = 0; j < n_joints_; ++j) {
      for (int c = 0; c < 3; ++c) batch.joints[k * 3 * n_joints_ + 3 * j + c] = r.joints_3d[j + 1][c];
    }
    for (int c = 0; c < 3; ++c) batch.bases[k * 3 + c] = r.base_3d[c];
  }
  return batch;
}

BatchIterator::BatchIterator(const SplitData& data, std::size_t batch_size, std::optional<std::uint64_t> epoch_seed)
    : data_(&data), batch_size_(batch_size) {
  if (batch_size == 0) throw Error(Errc::InvalidArgument, "batch_size must be >= 1");
  if (data.size() == 0) throw Error(Errc::EmptySplit, "no records to batch");
  order_.resize(data.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (epoch_seed) {
    Rng rng(*epoch_seed);
    rng.shuffle(order_.begin(), order_.end());
  }
}

std::size_t BatchIterator::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  out = data_->make_batch(std::span<const std::size_t>(order_).subspan(cursor_, end - cursor_));
  cursor_ = end;
  return true;
}

}  // namespace mocnn
