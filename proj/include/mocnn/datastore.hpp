#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mocnn/geometry.hpp"
#include "mocnn/io.hpp"
#include "mocnn/tensor.hpp"

namespace mocnn {

inline constexpr int kSourceWidth = 512;
inline constexpr int kSourceHeight = 424;
inline constexpr int kInputWidth = 256;
inline constexpr int kInputHeight = 212;

enum class SplitTag { Unassigned, Train, Test };

std::string_view split_tag_name(SplitTag tag);

struct SampleRecord {
  std::string id;
  std::string color_path;  // relative to the dataset directory
  std::string mask_path;
  std::vector<Vec3<double>> joints_3d;  // n_joints + 1 frame origins, camera frame
  Vec3<double> base_3d = Vec3<double>::Zero();
  std::vector<double> angles;
  int robot_type = 0;
  SplitTag split_tag = SplitTag::Unassigned;

  std::size_t n_joints() const { return joints_3d.empty() ? 0 : joints_3d.size() - 1; }
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<SampleRecord> records;
  /// Robot model names; a record's robot_type indexes this list.
  std::vector<std::string> robot_names;
  std::uint64_t generation_seed = 0;
  std::uint64_t split_seed = 0;

  std::size_t n_joints() const { return records.empty() ? 0 : records.front().n_joints(); }
  std::size_t n_types() const { return robot_names.size(); }
  std::vector<std::size_t> indices(SplitTag tag) const;
};

inline constexpr const char* kManifestFile = "manifest.jsonl";
inline constexpr const char* kDatasetMetaFile = "dataset.json";

/// Writes manifest.jsonl (one SampleRecord per line) and dataset.json.
void save_manifest(const DatasetManifest& manifest);
/// Reads a dataset directory; verifies ids are unique and image files exist.
DatasetManifest load_manifest(const std::filesystem::path& dir);

std::string record_to_json_line(const SampleRecord& record);
SampleRecord record_from_json_line(std::string_view line);

/// Seeded shuffle, floor(train_fraction * n) records to train, the rest to test.
DatasetManifest split(DatasetManifest manifest, double train_fraction, std::uint64_t seed);

/// Keeps the test split and the first `count` train records of a seeded
/// permutation; permutations are shared, so smaller subsets nest in larger ones.
DatasetManifest subsample_train(const DatasetManifest& manifest, std::size_t count,
                                std::uint64_t seed);

/// 2x2 box filter of an RGB source to kInputWidth x kInputHeight, scaled to [0, 1].
/// Result is 3 x 212 x 256, channel-major.
Tensord downscale_input(const Image8& color);
/// 2x2 majority downscale of a {0,1} or {0,255} mask; ties count as foreground.
std::vector<std::uint8_t> downscale_mask(const Image8& mask);

Tensord load_input(const DatasetManifest& manifest, const SampleRecord& record);

struct Batch {
  std::vector<std::string> ids;
  Tensord images;   // B x 3 x 212 x 256
  Tensord masks;    // B x 212 x 256, values {0, 1}
  Tensord joints;   // B x 3*n_joints (frames 1..n, camera frame, meters)
  Tensord bases;    // B x 3
  std::vector<int> types;

  std::size_t size() const { return ids.size(); }
};

/// Decoded, downscaled split held in memory. Inputs are stored as exact 2x2
/// sums so that batches reproduce load_input bit for bit.
class SplitData {
 public:
  SplitData(const DatasetManifest& manifest, SplitTag tag);
  SplitData(const DatasetManifest& manifest, std::span<const std::size_t> record_indices);

  std::size_t size() const { return records_.size(); }
  std::size_t n_joints() const { return n_joints_; }
  const SampleRecord& record(std::size_t i) const { return records_[i]; }

  Batch make_batch(std::span<const std::size_t> items) const;
  Tensord image(std::size_t i) const;

 private:
  void load(const DatasetManifest& manifest);

  std::vector<SampleRecord> records_;
  std::vector<std::vector<std::uint16_t>> input_sums_;
  std::vector<std::vector<std::uint8_t>> masks_;
  std::size_t n_joints_ = 0;
};

/// Seeded per-epoch permutation over a split, emitting the final partial batch.
class BatchIterator {
 public:
  BatchIterator(const SplitData& data, std::size_t batch_size, std::optional<std::uint64_t> epoch_seed);

  std::size_t batch_count() const;
  bool next(Batch& out);
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const SplitData* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace mocnn
