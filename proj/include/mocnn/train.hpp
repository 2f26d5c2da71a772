#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "mocnn/datastore.hpp"
#include "mocnn/loss.hpp"
#include "mocnn/model.hpp"
#include "mocnn/optim.hpp"

namespace mocnn {

enum class OptimizerKind { Adam, SgdMomentum };

std::string_view optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  LossWeights weights;
  double lr_start = 1e-3;
  double lr_end = 1e-6;
  OptimizerKind optimizer = OptimizerKind::Adam;
  /// Only used by OptimizerKind::SgdMomentum.
  double momentum = 0.9;
  /// Epochs without validation improvement before stopping; 0 disables.
  std::size_t early_stop_patience = 10;
  /// Start the coordinate output biases at the training-set mean targets.
  bool init_coordinate_bias = true;
  /// Where train.csv, val.csv and checkpoints go; empty keeps everything in memory.
  std::filesystem::path run_dir;

  LrSchedule schedule() const { return {lr_start, lr_end, epochs}; }
  void validate() const;
};

struct LogRow {
  std::size_t step = 0;  // optimizer steps completed
  std::size_t epoch = 0;
  double lr = 0;
  LossBreakdown loss;
};

struct TrainResult {
  MultiObjectiveNet net;   // after the last epoch
  MultiObjectiveNet best;  // lowest validation loss
  std::vector<LogRow> train_log;
  std::vector<LogRow> val_log;  // one row per epoch, step = steps so far
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
  double best_val_loss = 0;
  double wall_seconds = 0;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const LogRow& val_row, const TrainResult& so_far)>;

/// Trains every parameter of `net` on the manifest's train split, validating
/// on its test split after each epoch.
TrainResult train_full(MultiObjectiveNet net, const DatasetManifest& manifest, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

/// Loads a pretrained checkpoint, resizes the joint and type heads for the new
/// dataset, freezes the encoder and trains the remaining layers.
TrainResult train_transfer(const std::filesystem::path& pretrained_path, const DatasetManifest& manifest,
                           const TrainConfig& config, const ArchitectureSpec& spec = {},
                           const EpochCallback& on_epoch = {});

/// Same as above starting from an in-memory network (already adapted or not).
TrainResult train_transfer(MultiObjectiveNet pretrained, const DatasetManifest& manifest, const TrainConfig& config,
                           const EpochCallback& on_epoch = {});

/// Mean loss of `net` over every record of `data` (batch-size weighted).
LossBreakdown validation_loss(const MultiObjectiveNet& net, const SplitData& data, const LossWeights& weights,
                              std::size_t batch_size = 16);

/// Seed for subsample_train used by transfer and the sample-count sweep, so a
/// transfer on n samples sees the same subset as the sweep's n-sample run.
std::uint64_t train_subset_seed(std::uint64_t seed);

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& rows);
std::vector<LogRow> read_log_csv(const std::filesystem::path& path);

}  // namespace mocnn
