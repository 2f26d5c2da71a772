#include "mocnn/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "mocnn/io.hpp"
#include "mocnn/random.hpp"

namespace mocnn {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5000;
constexpr std::uint64_t kJointHeadStream = 0xA0;
constexpr std::uint64_t kTypeHeadStream = 0xA1;
constexpr std::uint64_t kSubsetStream = 0x5EE9;

LossTargets targets_of(const Batch& batch) { return {batch.masks, batch.joints, batch.bases, batch.types}; }

std::vector<EncodedFeatures> encode_all(const MultiObjectiveNet& net, const SplitData& data) {
  std::vector<EncodedFeatures> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out.push_back(net.encode(data.image(i)));
  return out;
}

void accumulate(LossBreakdown& sum, const LossBreakdown& x, double w) {
  sum.mask += w * x.mask;
  sum.jcoords += w * x.jcoords;
  sum.bcoords += w * x.bcoords;
  sum.type += w * x.type;
}

// Validation over `data` in fixed order; uses `cache` when given.
LossBreakdown evaluate_split(const MultiObjectiveNet& net, const SplitData& data, const LossWeights& weights,
                             std::size_t batch_size, const std::vector<EncodedFeatures>* cache) {
  LossBreakdown sum;
  std::vector<std::size_t> items;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    items.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) items.push_back(i);
    const Batch batch = data.make_batch(items);
    std::vector<EncodedFeatures> features;
    features.reserve(items.size());
    for (std::size_t k = 0; k < items.size(); ++k) {
      features.push_back(cache ? (*cache)[items[k]] : net.encode(batch.images.slice(k)));
    }
    const NetOutputs out = net.decode(features);
    accumulate(sum, evaluate_loss(out, targets_of(batch), weights), double(items.size()));
  }
  const double n = double(data.size());
  return combined_loss(sum.mask / n, sum.jcoords / n, sum.bcoords / n, sum.type / n, weights);
}

void set_bias_to_mean(MultiObjectiveNet& net, const SplitData& data, bool joints, bool base) {
  const std::size_t nj = data.n_joints();
  std::vector<double> joint_mean(3 * nj, 0.0), base_mean(3, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = data.record(i);
    for (std::size_t j = 0; j < nj; ++j) {
      for (int c = 0; c < 3; ++c) joint_mean[3 * j + c] += r.joints_3d[j + 1][c];
    }
    for (int c = 0; c < 3; ++c) base_mean[c] += r.base_3d[c];
  }
  const double n = double(data.size());
  if (joints) {
    auto& b = net.parameter("joint_fc2.bias").value;
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = joint_mean[k] / n;
  }
  if (base) {
    auto& b = net.parameter("base_fc2.bias").value;
    for (std::size_t k = 0; k < 3; ++k) b[k] = base_mean[k] / n;
  }
}

TrainResult run_training(MultiObjectiveNet net, const SplitData& train, const SplitData& val,
                         const TrainConfig& config, const EpochCallback& on_epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool encoder_trainable = net.encoder_trainable();
  std::vector<EncodedFeatures> train_cache, val_cache;
  if (!encoder_trainable) {
    train_cache = encode_all(net, train);
    val_cache = encode_all(net, val);
  }

  const LrSchedule schedule = config.schedule();
  SgdMomentum<double> sgd(config.momentum);
  Adam<double> adam;
  auto params = net.parameter_ptrs();
  TrainResult result{net, net, {}, {}, 0, 0, std::numeric_limits<double>::infinity(), 0, false};
  std::size_t since_best = 0;
  const bool write = !config.run_dir.empty();
  if (write) std::filesystem::create_directories(config.run_dir);

  std::vector<EncodedFeatures> features;
  std::vector<MultiObjectiveNet::EncoderTrace> traces;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(schedule, epoch);
    BatchIterator it(train, config.batch_size, derive_seed(config.seed, kShuffleStream + epoch));
    const auto& order = it.order();
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> items(order.data() + start, end - start);
      const Batch batch = train.make_batch(items);
      features.clear();
      traces.clear();
      if (encoder_trainable) {
        traces.resize(items.size());
        for (std::size_t k = 0; k < items.size(); ++k) {
          features.push_back(net.encode(batch.images.slice(k), &traces[k]));
        }
      } else {
        for (auto i : items) features.push_back(train_cache[i]);
      }
      MultiObjectiveNet::DecoderTrace trace;
      net.decode(features, &trace);
      OutputGrads grads;
      const LossBreakdown loss = evaluate_loss(trace.outputs, targets_of(batch), config.weights, &grads);
      if (!std::isfinite(loss.final)) {
        throw Error(Errc::NonFinite, "non-finite loss at step " + std::to_string(result.steps));
      }
      net.zero_grad();
      net.backward(features, traces, trace, grads);
      if (config.optimizer == OptimizerKind::Adam) {
        adam.step(params, lr);
      } else {
        sgd.step(params, lr);
      }
      ++result.steps;
      result.train_log.push_back({result.steps, epoch, lr, loss});
    }

    const LossBreakdown vloss =
        evaluate_split(net, val, config.weights, config.batch_size, encoder_trainable ? nullptr : &val_cache);
    const LogRow val_row{result.steps, epoch, lr, vloss};
    result.val_log.push_back(val_row);
    result.epochs_run = epoch + 1;
    if (vloss.final < result.best_val_loss) {
      result.best_val_loss = vloss.final;
      result.best = net;
      since_best = 0;
      if (write) save(net, config.run_dir / "ckpt-best.bin");
    } else {
      ++since_best;
    }
    if (write) {
      write_log_csv(config.run_dir / "train.csv", result.train_log);
      write_log_csv(config.run_dir / "val.csv", result.val_log);
    }
    result.net = net;
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_epoch) on_epoch(val_row, result);
    if (config.early_stop_patience > 0 && since_best >= config.early_stop_patience) {
      result.stopped_early = epoch + 1 < config.epochs;
      break;
    }
  }
  if (write) save(net, config.run_dir / "ckpt-final.bin");
  result.net = std::move(net);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::string format_row(const LogRow& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.epoch, r.lr, r.loss.mask,
                r.loss.jcoords, r.loss.bcoords, r.loss.type, r.loss.final);
  return buf;
}

}  // namespace

std::string_view optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::SgdMomentum;
  throw Error(Errc::InvalidArgument, "unknown optimizer '" + std::string(name) + "' (expected adam or sgd)");
}

std::uint64_t train_subset_seed(std::uint64_t seed) { return derive_seed(seed, kSubsetStream); }

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(Errc::InvalidArgument, "epochs must be >= 1");
  if (batch_size < 1) throw Error(Errc::InvalidArgument, "batch_size must be >= 1");
  if (!(lr_start >= lr_end && lr_end > 0)) throw Error(Errc::InvalidArgument, "need lr_start >= lr_end > 0");
  if (!(momentum >= 0 && momentum < 1)) throw Error(Errc::InvalidArgument, "momentum must be in [0, 1)");
  for (double w : {weights.mask, weights.jcoords, weights.bcoords, weights.type}) {
    if (!(w >= 0) || !std::isfinite(w)) throw Error(Errc::InvalidArgument, "loss weights must be finite and >= 0");
  }
}

LossBreakdown validation_loss(const MultiObjectiveNet& net, const SplitData& data, const LossWeights& weights,
                              std::size_t batch_size) {
  return evaluate_split(net, data, weights, batch_size, nullptr);
}

TrainResult train_full(MultiObjectiveNet net, const DatasetManifest& manifest, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  config.validate();
  for (const auto& p : net.parameters()) {
    if (!p.trainable) throw Error(Errc::InvalidArgument, "full training needs every parameter trainable: " + p.name);
  }
  if (net.n_joints() != manifest.n_joints()) {
    throw Error(Errc::ShapeMismatch, "network predicts " + std::to_string(net.n_joints()) + " joints, dataset has " +
                                         std::to_string(manifest.n_joints()));
  }
  if (net.n_types() < manifest.n_types()) throw Error(Errc::BadLabel, "dataset has more robot types than the network");
  const SplitData train(manifest, SplitTag::Train);
  const SplitData val(manifest, SplitTag::Test);
  if (config.init_coordinate_bias) set_bias_to_mean(net, train, true, true);
  return run_training(std::move(net), train, val, config, on_epoch);
}

TrainResult train_transfer(MultiObjectiveNet net, const DatasetManifest& manifest, const TrainConfig& config,
                           const EpochCallback& on_epoch) {
  config.validate();
  const SplitData train(manifest, SplitTag::Train);
  const SplitData val(manifest, SplitTag::Test);
  adapt_joint_head(net, manifest.n_joints(), derive_seed(config.seed, kJointHeadStream));
  adapt_type_head(net, std::max<std::size_t>(1, manifest.n_types()), derive_seed(config.seed, kTypeHeadStream));
  freeze_for_transfer(net);
  if (config.init_coordinate_bias) set_bias_to_mean(net, train, true, false);
  return run_training(std::move(net), train, val, config, on_epoch);
}

TrainResult train_transfer(const std::filesystem::path& pretrained_path, const DatasetManifest& manifest,
                           const TrainConfig& config, const ArchitectureSpec& spec, const EpochCallback& on_epoch) {
  return train_transfer(load(pretrained_path, spec), manifest, config, on_epoch);
}

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& rows) {
  std::string text = "step,epoch,lr,mask,jcoords,bcoords,type,final\n";
  for (const auto& r : rows) text += format_row(r);
  write_file_atomic(path, text);
}

std::vector<LogRow> read_log_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "step,epoch,lr,mask,jcoords,bcoords,type,final") throw Error(Errc::FormatError, "bad log header");
  std::vector<LogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LogRow r;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf,%lf,%lf,%lf", &r.step, &r.epoch, &r.lr, &r.loss.mask,
                    &r.loss.jcoords, &r.loss.bcoords, &r.loss.type, &r.loss.final) != 8) {
      throw Error(Errc::FormatError, "bad log row: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace mocnn
