#include "mocnn/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "mocnn/io.hpp"
#include "mocnn/random.hpp"
#include "mocnn/svg_plot.hpp"

namespace mocnn {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

Tensord stack(std::span<const Tensord> images, std::size_t first, std::size_t count) {
  Shape shape{count};
  for (auto d : images[0].shape()) shape.push_back(d);
  Tensord out(shape);
  const std::size_t n = images[0].size();
  for (std::size_t k = 0; k < count; ++k) {
    const auto& img = images[(first + k) % images.size()];
    std::copy(img.data(), img.data() + n, out.data() + k * n);
  }
  return out;
}

}  // namespace

double mask_accuracy(const Tensord& pred, const Tensord& gt, double threshold) {
  if (pred.shape() != gt.shape()) {
    throw Error(Errc::ShapeMismatch, "mask_accuracy: " + shape_string(pred.shape()) + " vs " + shape_string(gt.shape()));
  }
  if (pred.size() == 0) throw Error(Errc::ShapeMismatch, "mask_accuracy: empty mask");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) agree += (pred[i] >= threshold) == (gt[i] >= 0.5);
  return double(agree) / double(pred.size());
}

double median(std::vector<double> v) {
  if (v.empty()) throw Error(Errc::InvalidArgument, "median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lower + upper);
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw Error(Errc::InvalidArgument, "percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

CoordinateErrors coordinate_errors(const Tensord& est, const Tensord& gt) {
  if (est.shape() != gt.shape() || est.rank() != 2 || est.dim(1) % 3 != 0 || est.dim(0) == 0) {
    throw Error(Errc::ShapeMismatch, "coordinate_errors: " + shape_string(est.shape()) + " vs " +
                                         shape_string(gt.shape()));
  }
  const std::size_t b = est.dim(0), k = est.dim(1) / 3;
  CoordinateErrors out;
  out.per_joint_cm.assign(k, std::vector<double>(b));
  std::vector<double> all;
  all.reserve(b * k);
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t j = 0; j < k; ++j) {
      double sq = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = est[s * 3 * k + 3 * j + c] - gt[s * 3 * k + 3 * j + c];
        sq += d * d;
      }
      const double cm = 100.0 * std::sqrt(sq);
      out.per_joint_cm[j][s] = cm;
      all.push_back(cm);
    }
  }
  for (const auto& errs : out.per_joint_cm) out.joint_median_cm.push_back(median(errs));
  out.overall_median_cm = median(std::move(all));
  return out;
}

TimingResult timing(const MultiObjectiveNet& net, std::span<const Tensord> images, std::size_t warmup) {
  if (images.empty()) throw Error(Errc::EmptySplit, "timing needs at least one image");
  const std::size_t runs = std::max<std::size_t>(50, images.size());
  for (std::size_t i = 0; i < warmup; ++i) (void)net.forward(stack(images, i, 1));
  TimingResult r;
  double total = 0;
  for (std::size_t i = 0; i < runs; ++i) {
    const Tensord x = stack(images, i, 1);
    const auto t0 = std::chrono::steady_clock::now();
    (void)net.forward(x);
    total += elapsed_ms(t0);
  }
  r.batch1_ms = total / double(runs);
  const std::size_t batches = (runs + 15) / 16;
  total = 0;
  for (std::size_t i = 0; i < batches; ++i) {
    const Tensord x = stack(images, 16 * i, 16);
    const auto t0 = std::chrono::steady_clock::now();
    (void)net.forward(x);
    total += elapsed_ms(t0);
  }
  r.batch16_ms_per_sample = total / double(16 * batches);
  return r;
}

EvalReport evaluate(const MultiObjectiveNet& net, const SplitData& data, const EvalOptions& options) {
  if (data.n_joints() != net.n_joints()) {
    throw Error(Errc::ShapeMismatch, "network predicts " + std::to_string(net.n_joints()) + " joints, data has " +
                                         std::to_string(data.n_joints()));
  }
  const std::size_t n = data.size(), nj = net.n_joints();
  Tensord est_j({n, 3 * nj}), gt_j({n, 3 * nj}), est_b({n, 3}), gt_b({n, 3});
  std::size_t mask_agree = 0, mask_total = 0, type_hits = 0;
  LossBreakdown sum;
  std::vector<std::size_t> items;
  for (std::size_t start = 0; start < n; start += options.batch_size) {
    items.clear();
    for (std::size_t i = start; i < std::min(n, start + options.batch_size); ++i) items.push_back(i);
    const Batch batch = data.make_batch(items);
    const NetOutputs out = net.forward(batch.images);
    const LossBreakdown l =
        evaluate_loss(out, {batch.masks, batch.joints, batch.bases, batch.types}, options.weights);
    const double w = double(items.size());
    sum.mask += w * l.mask;
    sum.jcoords += w * l.jcoords;
    sum.bcoords += w * l.bcoords;
    sum.type += w * l.type;
    for (std::size_t p = 0; p < out.mask_probs.size(); ++p) {
      mask_agree += (out.mask_probs[p] >= 0.5) == (batch.masks[p] >= 0.5);
    }
    mask_total += out.mask_probs.size();
    for (std::size_t k = 0; k < items.size(); ++k) {
      const std::size_t s = items[k];
      for (std::size_t c = 0; c < 3 * nj; ++c) {
        est_j[s * 3 * nj + c] = out.joints[k * 3 * nj + c];
        gt_j[s * 3 * nj + c] = batch.joints[k * 3 * nj + c];
      }
      for (std::size_t c = 0; c < 3; ++c) {
        est_b[s * 3 + c] = out.bases[k * 3 + c];
        gt_b[s * 3 + c] = batch.bases[k * 3 + c];
      }
      const auto probs = out.type_probs.row(k);
      const auto best = std::size_t(std::max_element(probs.begin(), probs.end()) - probs.begin());
      type_hits += int(best) == batch.types[k];
    }
  }

  EvalReport report;
  report.n_samples = n;
  report.mask_accuracy = double(mask_agree) / double(mask_total);
  const CoordinateErrors je = coordinate_errors(est_j, gt_j);
  const CoordinateErrors be = coordinate_errors(est_b, gt_b);
  report.joint_error_median_cm = je.overall_median_cm;
  report.base_error_median_cm = be.overall_median_cm;
  report.per_joint_error_cm = je.joint_median_cm;
  for (const auto& errs : je.per_joint_cm) report.per_joint_p90_cm.push_back(percentile(errs, 90));
  if (options.include_type) report.type_accuracy = double(type_hits) / double(n);
  const double dn = double(n);
  report.loss = combined_loss(sum.mask / dn, sum.jcoords / dn, sum.bcoords / dn, sum.type / dn, options.weights);
  if (options.measure_timing) {
    std::vector<Tensord> images;
    for (std::size_t i = 0; i < std::min(n, options.timing_samples); ++i) images.push_back(data.image(i));
    const TimingResult t = timing(net, images);
    report.forward_ms_mean = t.batch1_ms;
    report.forward_ms_batch16 = t.batch16_ms_per_sample;
  }
  return report;
}

void write_report_json(const EvalReport& r, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["mask_accuracy"] = r.mask_accuracy;
  j["joint_error_median_cm"] = r.joint_error_median_cm;
  j["base_error_median_cm"] = r.base_error_median_cm;
  j["per_joint_error_cm"] = r.per_joint_error_cm;
  j["per_joint_p90_cm"] = r.per_joint_p90_cm;
  if (r.type_accuracy) j["type_accuracy"] = *r.type_accuracy;
  j["forward_ms_mean"] = r.forward_ms_mean;
  j["forward_ms_batch16"] = r.forward_ms_batch16;
  j["n_samples"] = r.n_samples;
  j["loss"] = {{"mask", r.loss.mask},
               {"jcoords", r.loss.jcoords},
               {"bcoords", r.loss.bcoords},
               {"type", r.loss.type},
               {"final", r.loss.final}};
  write_file_atomic(path, j.dump(2) + "\n");
}

void write_per_joint_csv(const EvalReport& r, const std::filesystem::path& path) {
  std::string text = "joint_index,median_cm,p90_cm\n";
  char buf[128];
  for (std::size_t j = 0; j < r.per_joint_error_cm.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", j + 1, r.per_joint_error_cm[j], r.per_joint_p90_cm[j]);
    text += buf;
  }
  std::snprintf(buf, sizeof buf, "base,%.17g,\n", r.base_error_median_cm);
  text += buf;
  write_file_atomic(path, text);
}

void write_per_joint_svg(const EvalReport& r, const std::filesystem::path& path) {
  std::vector<std::string> labels;
  std::vector<double> values;
  for (std::size_t j = 0; j < r.per_joint_error_cm.size(); ++j) {
    labels.push_back("J" + std::to_string(j + 1));
    values.push_back(r.per_joint_error_cm[j]);
  }
  labels.push_back("base");
  values.push_back(r.base_error_median_cm);
  write_file_atomic(path, svg::bar_chart(labels, values, {"Median error per joint", "joint (base to end-effector)",
                                                          "median error [cm]"}));
}

std::vector<SweepRow> sample_count_sweep(const MultiObjectiveNet& pretrained, const DatasetManifest& manifest,
                                         std::span<const std::size_t> counts, const TrainConfig& config,
                                         const std::function<void(const SweepRow&)>& on_row) {
  if (counts.empty()) throw Error(Errc::InvalidArgument, "sweep needs at least one count");
  const std::size_t available = manifest.indices(SplitTag::Train).size();
  const std::size_t largest = *std::max_element(counts.begin(), counts.end());
  if (largest > available) {
    throw Error(Errc::InsufficientSamples, "sweep needs " + std::to_string(largest) + " training samples, split has " +
                                               std::to_string(available));
  }
  const std::uint64_t subset_seed = train_subset_seed(config.seed);
  std::vector<SweepRow> rows;
  for (std::size_t n : counts) {
    const DatasetManifest subset = subsample_train(manifest, n, subset_seed);
    TrainConfig cfg = config;
    if (!config.run_dir.empty()) cfg.run_dir = config.run_dir / ("n" + std::to_string(n));
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult result = train_transfer(pretrained, subset, cfg);
    const double wall = elapsed_ms(t0) / 1000.0;
    rows.push_back({n, result.best_val_loss, wall, result.steps});
    if (on_row) on_row(rows.back());
    if (!config.run_dir.empty()) {
      write_sweep_csv(rows, config.run_dir / "sweep.csv");
      write_sweep_svg(rows, config.run_dir / "sweep.svg");
    }
  }
  return rows;
}

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
  std::string text = "n,final_val_loss,wall_seconds,steps\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.6f,%zu\n", r.n, r.final_val_loss, r.wall_seconds, r.steps);
    text += buf;
  }
  write_file_atomic(path, text);
}

void write_sweep_svg(std::span<const SweepRow> rows, const std::filesystem::path& path) {
  svg::Series loss{"validation loss", {}, {}};
  for (const auto& r : rows) {
    loss.x.push_back(double(r.n));
    loss.y.push_back(r.final_val_loss);
  }
  write_file_atomic(path, svg::line_chart({loss}, {"Validation loss vs training samples", "training samples",
                                                   "validation loss"}));
}

}  // namespace mocnn
