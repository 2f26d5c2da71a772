#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mocnn/datastore.hpp"
#include "mocnn/model.hpp"
#include "mocnn/train.hpp"

namespace mocnn {

struct EvalReport {
  double mask_accuracy = 0;
  double joint_error_median_cm = 0;
  double base_error_median_cm = 0;
  std::vector<double> per_joint_error_cm;  // median per joint, base side first
  std::vector<double> per_joint_p90_cm;
  std::optional<double> type_accuracy;
  double forward_ms_mean = 0;
  double forward_ms_batch16 = 0;  // amortized per sample
  std::size_t n_samples = 0;
  LossBreakdown loss;
};

/// Fraction of pixels where (pred >= threshold) agrees with the binary ground truth.
double mask_accuracy(const Tensord& pred_probs, const Tensord& gt_mask, double threshold = 0.5);

/// Median with the midpoint rule for even counts.
double median(std::vector<double> values);
/// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

struct CoordinateErrors {
  std::vector<std::vector<double>> per_joint_cm;  // [joint][sample]
  std::vector<double> joint_median_cm;            // per joint
  double overall_median_cm = 0;                   // over every joint of every sample
};

/// Euclidean errors in cm of B x 3k predictions (k points per row).
CoordinateErrors coordinate_errors(const Tensord& est, const Tensord& gt);

struct EvalOptions {
  bool include_type = true;
  bool measure_timing = true;
  std::size_t timing_samples = 50;
  std::size_t batch_size = 16;
  LossWeights weights;
};

EvalReport evaluate(const MultiObjectiveNet& net, const SplitData& data, const EvalOptions& options = {});

struct TimingResult {
  double batch1_ms = 0;              // mean per single-image forward
  double batch16_ms_per_sample = 0;  // amortized over batches of 16
};

/// Times forward passes over `images` (each 3 x H x W) after `warmup` discarded runs.
TimingResult timing(const MultiObjectiveNet& net, std::span<const Tensord> images, std::size_t warmup = 5);

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
/// Rows: joint_index,median_cm,p90_cm for each joint then a "base" row.
void write_per_joint_csv(const EvalReport& report, const std::filesystem::path& path);
void write_per_joint_svg(const EvalReport& report, const std::filesystem::path& path);

struct SweepRow {
  std::size_t n = 0;
  double final_val_loss = 0;
  double wall_seconds = 0;
  std::size_t steps = 0;
};

inline const std::vector<std::size_t> kDefaultSweepCounts{48, 96, 192, 312, 624};

/// One transfer run per count on nested, seeded subsets of the train split.
/// Writes sweep.csv and sweep.svg (plus each run's files under n<count>/) when
/// config.run_dir is set.
std::vector<SweepRow> sample_count_sweep(const MultiObjectiveNet& pretrained, const DatasetManifest& manifest,
                                         std::span<const std::size_t> counts, const TrainConfig& config,
                                         const std::function<void(const SweepRow&)>& on_row = {});

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);
void write_sweep_svg(std::span<const SweepRow> rows, const std::filesystem::path& path);

}  // namespace mocnn
