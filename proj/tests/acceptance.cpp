// End-to-end acceptance run. Prints one PASS/FAIL line per criterion. Exits
// non-zero when the run aborts, or with --strict when any hard criterion fails.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "mocnn/eval.hpp"
#include "mocnn/io.hpp"
#include "mocnn/kinematics.hpp"
#include "mocnn/synth.hpp"
#include "mocnn/train.hpp"

using namespace mocnn;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 1;
constexpr std::size_t kUrSamples = 800;
constexpr std::size_t kKukaSamples = 800;
constexpr std::size_t kTransferSamples = 312;
// Library defaults: 60 epochs from scratch, 30 for transfer, patience 10.
const std::size_t kFullEpochs = TrainConfig{}.epochs;
constexpr std::size_t kTransferEpochs = 30;

struct Outcome {
  bool pass = false;
  bool soft = false;  // reported as a warning instead of a failure
  std::string detail;
};

std::map<int, Outcome> g_results;
const std::map<int, std::string> kNames{{1, "loss-formula oracles"},     {2, "gradient correctness"},
                                        {3, "freeze contract"},          {4, "geometry oracles"},
                                        {5, "ground-truth consistency"}, {6, "desk-scale pipeline"},
                                        {7, "sweep shape"},              {8, "determinism"},
                                        {9, "per-joint profile"}};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void log(const std::string& s) {
  std::printf("  %s\n", s.c_str());
  std::fflush(stdout);
}

void record(int id, bool pass, const std::string& detail, bool soft = false) {
  g_results[id] = {pass, soft, detail};
  std::printf("[%s] %d %s: %s\n", pass ? "PASS" : (soft ? "WARN" : "FAIL"), id, kNames.at(id).c_str(),
              detail.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- datasets

struct Datasets {
  DatasetManifest ur;
  DatasetManifest kuka;
  double seconds = 0;
};

DatasetManifest generate(const std::vector<RobotModel>& models, std::size_t n, std::uint64_t seed,
                         const fs::path& dir) {
  std::vector<RobotEntry> robots;
  for (auto m : models) robots.push_back({make_chain(m), std::string(robot_model_name(m))});
  SceneConfig base;
  base.seed = seed;
  base.background_id = -1;
  base.brightness = 0;
  auto manifest = split(generate_dataset(robots, n, base, dir), 0.8, derive_seed(seed, 0x5B));
  save_manifest(manifest);
  return manifest;
}

Datasets make_datasets(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  Datasets d;
  d.ur = generate({RobotModel::Ur3Like, RobotModel::Ur5Like, RobotModel::Ur10Like}, kUrSamples, kSeed,
                  work / "data_ur");
  d.kuka = generate({RobotModel::KukaLike}, kKukaSamples, kSeed + 1, work / "data_kuka");
  d.seconds = seconds_since(t0);
  log(fmt("generated %zu UR-like and %zu Kuka-like samples in %.1f s", d.ur.records.size(), d.kuka.records.size(),
          d.seconds));
  return d;
}

// ---------------------------------------------------------------- criterion 1

double oracle_mask(const Tensord& p, const Tensord& g) {
  double fg = 0;
  for (double v : g.values()) fg += v;
  const double n = double(g.size());
  double sum = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double q = std::min(std::max(p[i], 1e-7), 1 - 1e-7);
    sum += g[i] == 1.0 ? -(n / fg) * std::log(q) : -(n / (n - fg)) * std::log(1 - q);
  }
  return sum / n;
}

double oracle_distance(const Tensord& e, const Tensord& g, std::size_t points) {
  double total = 0;
  for (std::size_t b = 0; b < e.dim(0); ++b) {
    double row = 0;
    for (std::size_t j = 0; j < points; ++j) {
      double d2 = 0;
      for (std::size_t c = 0; c < 3; ++c) d2 += std::pow(e[(b * points + j) * 3 + c] - g[(b * points + j) * 3 + c], 2);
      row += std::sqrt(d2);
    }
    total += row / double(points);
  }
  return total / double(e.dim(0));
}

void criterion_loss_oracles(const fs::path& work) {
  Rng rng(101);
  const auto rnd = [&](Shape s, double lo, double hi) {
    Tensord t(std::move(s));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
  };
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng.below(4), h = 2 + rng.below(8), w = 2 + rng.below(8);
    const std::size_t k = 6 + rng.below(2), c = 1 + rng.below(4);
    Tensord gt({b, h, w});
    for (auto& v : gt.values()) v = rng.uniform() < 0.25 ? 1.0 : 0.0;
    gt[0] = 1;
    gt[1] = 0;
    const Tensord est = rnd({b, h, w}, 0, 1);
    const Tensord je = rnd({b, 3 * k}, -1, 1), jg = rnd({b, 3 * k}, -1, 1);
    const Tensord be = rnd({b, 3}, -1, 1), bg = rnd({b, 3}, -1, 1);
    Tensord probs = rnd({b, c}, 0.01, 1);
    std::vector<int> labels(b);
    double type_oracle = 0;
    for (std::size_t r = 0; r < b; ++r) {
      double s = 0;
      for (std::size_t q = 0; q < c; ++q) s += probs[r * c + q];
      for (std::size_t q = 0; q < c; ++q) probs[r * c + q] /= s;
      labels[r] = int(rng.below(c));
      type_oracle -= std::log(probs[r * c + std::size_t(labels[r])]) / double(b);
    }
    std::size_t fg = 0;
    for (double v : gt.values()) fg += v == 1.0;
    const auto cw = fg_bg_weights(gt.values());
    const double n = double(gt.size());
    worst = std::max(worst, std::abs(cw.fg - n / double(fg)) + std::abs(cw.bg - n / (n - double(fg))));
    worst = std::max(worst, std::abs(mask_loss(est, gt) - oracle_mask(est, gt)));
    worst = std::max(worst, std::abs(joint_loss(je, jg) - oracle_distance(je, jg, k)));
    worst = std::max(worst, std::abs(base_loss(be, bg) - oracle_distance(be, bg, 1)));
    worst = std::max(worst, std::abs(type_loss(probs, labels) - type_oracle));
    const LossWeights lw{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
    const auto l = combined_loss(mask_loss(est, gt), joint_loss(je, jg), base_loss(be, bg), type_loss(probs, labels), lw);
    const double oracle = lw.mask * oracle_mask(est, gt) + lw.jcoords * oracle_distance(je, jg, k) +
                          lw.bcoords * oracle_distance(be, bg, 1) + lw.type * type_oracle;
    worst = std::max(worst, std::abs(l.final - oracle));
  }

  // Every logged row of every training run in the work directory.
  const LossWeights w;
  std::size_t rows = 0, files = 0;
  double worst_identity = 0;
  for (const auto& entry : fs::recursive_directory_iterator(work)) {
    const auto name = entry.path().filename().string();
    if (name != "train.csv" && name != "val.csv") continue;
    ++files;
    for (const auto& r : read_log_csv(entry.path())) {
      ++rows;
      const double expect = w.mask * r.loss.mask + w.jcoords * r.loss.jcoords + w.bcoords * r.loss.bcoords +
                            w.type * r.loss.type;
      worst_identity = std::max(worst_identity, std::abs(expect - r.loss.final));
    }
  }
  const bool pass = worst < 1e-9 && worst_identity < 1e-9 && rows > 0;
  record(1, pass,
         fmt("max oracle deviation %.3g over 100 instances; weighted-sum identity max deviation %.3g over %zu "
             "logged rows in %zu logs (tol 1e-9)",
             worst, worst_identity, rows, files));
}

// ---------------------------------------------------------------- criterion 2

void criterion_gradients() {
  double worst = 0;
  std::size_t params = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = testutil::end_to_end_gradient_check(seed);
    worst = std::max(worst, r.relative_error);
    params = r.parameters;
  }
  record(2, worst < 1e-4 && params <= 1000,
         fmt("max relative error %.3g over 20 seeds, %zu parameters, 16x16 input (tol 1e-4)", worst, params));
}

// ---------------------------------------------------------------- criterion 3

void criterion_freeze(const fs::path& work, const fs::path& pretrained, const DatasetManifest& kuka) {
  const auto subset = subsample_train(kuka, 48, train_subset_seed(kSeed));
  const auto before = load_checkpoint(pretrained);
  bool pass = true;
  std::string detail;
  for (std::size_t epochs : {1, 5, 30}) {
    TrainConfig c;
    c.epochs = epochs;
    c.seed = kSeed;
    c.early_stop_patience = 0;
    c.run_dir = work / ("freeze_e" + std::to_string(epochs));
    const auto r = train_transfer(pretrained, subset, c);
    const auto after = load_checkpoint(c.run_dir / "ckpt-final.bin");
    std::size_t frozen = 0, differing = 0, changed_trainable = 0;
    for (std::size_t i = 0; i < after.size(); ++i) {
      if (after[i].trainable) {
        if (before[i].value.shape() != after[i].value.shape() ||
            std::memcmp(before[i].value.data(), after[i].value.data(), 8 * after[i].value.size()) != 0) {
          ++changed_trainable;
        }
        continue;
      }
      ++frozen;
      if (before[i].value.shape() != after[i].value.shape() ||
          std::memcmp(before[i].value.data(), after[i].value.data(), 8 * after[i].value.size()) != 0) {
        ++differing;
      }
    }
    pass = pass && differing == 0 && frozen == 10 && changed_trainable > 0 && r.epochs_run == epochs;
    detail += fmt("%zu epochs: %zu/%zu frozen tensors differ; ", epochs, differing, frozen);
  }
  record(3, pass, detail + "(48-sample transfer)");
}

// ---------------------------------------------------------------- criterion 4

using M4 = std::array<std::array<double, 4>, 4>;

M4 mul4(const M4& a, const M4& b) {
  M4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

M4 joint_matrix(const JointSpecd& j, double q) {
  const Vec3<double> k = j.axis.normalized();
  const double c = std::cos(q), s = std::sin(q), v = 1 - c;
  M4 r{};
  r[0] = {c + k.x() * k.x() * v, k.x() * k.y() * v - k.z() * s, k.x() * k.z() * v + k.y() * s, 0};
  r[1] = {k.y() * k.x() * v + k.z() * s, c + k.y() * k.y() * v, k.y() * k.z() * v - k.x() * s, 0};
  r[2] = {k.z() * k.x() * v - k.y() * s, k.z() * k.y() * v + k.x() * s, c + k.z() * k.z() * v, 0};
  r[3] = {0, 0, 0, 1};
  M4 o{};
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) o[a][b] = j.offset.rotation(a, b);
    o[a][3] = j.offset.translation[a];
  }
  o[3] = {0, 0, 0, 1};
  return mul4(r, o);
}

void criterion_geometry() {
  Rng rng(404);
  double worst_fk = 0;
  for (auto model : {RobotModel::Ur5Like, RobotModel::KukaLike}) {
    const auto chain = make_chain(model);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> q;
      for (const auto& j : chain.joints) q.push_back(rng.uniform(j.lower, j.upper));
      const auto got = forward_kinematics<double>(chain, std::span<const double>(q));
      M4 m{};
      for (int i = 0; i < 4; ++i) m[i][i] = 1;
      for (std::size_t i = 0; i < chain.n_joints(); ++i) {
        m = mul4(m, joint_matrix(chain.joints[i], q[i]));
        const Vec3<double> want(m[0][3], m[1][3], m[2][3]);
        worst_fk = std::max(worst_fk, (got[i + 1] - want).cwiseAbs().maxCoeff());
      }
    }
  }
  PinholeCamera<double> cam;
  double worst_proj = 0;
  const auto principal = project(cam, Vec3<double>(0, 0, 1.7));
  worst_proj = std::max({worst_proj, std::abs(principal.u - cam.cx), std::abs(principal.v - cam.cy)});
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec3<double> p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.2, 5));
    const double s = rng.uniform(0.1, 10);
    const auto a = project(cam, p), b = project(cam, Vec3<double>(s * p));
    worst_proj = std::max({worst_proj, std::abs(a.u - b.u), std::abs(a.v - b.v)});
    const double u = cam.fx * p.x() / p.z() + cam.cx, v = cam.fy * p.y() / p.z() + cam.cy;
    worst_proj = std::max({worst_proj, std::abs(a.u - u), std::abs(a.v - v)});
  }
  record(4, worst_fk < 1e-9 && worst_proj < 1e-9,
         fmt("forward kinematics max deviation %.3g m over 1000 configurations each for 6 and 7 joints; "
             "projection identities max deviation %.3g px (tol 1e-9)",
             worst_fk, worst_proj));
}

// ---------------------------------------------------------------- criterion 5

// Pixel distance from (u, v) to the nearest foreground pixel centre, searched
// within `limit` pixels; returns infinity when none is that close.
double near_foreground(const Image8& mask, double u, double v, double limit) {
  double best = std::numeric_limits<double>::infinity();
  const int x0 = std::max(0, int(std::floor(u - limit - 1))), x1 = std::min(mask.width - 1, int(std::ceil(u + limit)));
  const int y0 = std::max(0, int(std::floor(v - limit - 1))), y1 = std::min(mask.height - 1, int(std::ceil(v + limit)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (mask.at(x, y)) best = std::min(best, std::hypot(x + 0.5 - u, y + 0.5 - v));
    }
  }
  return best;
}

void criterion_ground_truth(const Datasets& d) {
  bool pass = true;
  std::string detail;
  for (const auto* m : {&d.ur, &d.kuka}) {
    std::vector<KinematicChaind> chains;
    for (const auto& name : m->robot_names) chains.push_back(make_chain(*parse_robot_model(name)));
    const PinholeCamera<double> cam;
    double fmin = 1, fmax = 0;
    std::size_t off_mask = 0, out_of_bounds = 0, joints = 0;
    for (const auto& r : m->records) {
      const Image8 mask = read_png(m->root / r.mask_path);
      std::size_t fg = 0;
      for (auto v : mask.pixels) fg += v != 0;
      const double frac = double(fg) / double(mask.pixels.size());
      fmin = std::min(fmin, frac);
      fmax = std::max(fmax, frac);
      const auto& chain = chains[std::size_t(r.robot_type)];
      for (std::size_t i = 0; i < r.joints_3d.size(); ++i) {
        ++joints;
        const auto px = project(cam, r.joints_3d[i]);
        if (px.u < 0 || px.v < 0 || px.u >= cam.width || px.v >= cam.height) {
          ++out_of_bounds;
          continue;
        }
        const double radius_px = cam.fx * chain.joints[i == 0 ? 0 : i - 1].radius / r.joints_3d[i].z();
        if (near_foreground(mask, px.u, px.v, 2 * radius_px) > 2 * radius_px) ++off_mask;
      }
    }
    const bool ok = fmin >= kMinForegroundFraction && fmax <= kMaxForegroundFraction && off_mask == 0 &&
                    m->records.size() >= 500;
    pass = pass && ok;
    detail += fmt("%s: %zu samples, foreground %.4f..%.4f, %zu/%zu joints off-mask (%zu out of frame); ",
                  m->robot_names.size() > 1 ? "UR-like" : "Kuka-like", m->records.size(), fmin, fmax, off_mask,
                  joints, out_of_bounds);
  }
  record(5, pass, detail + "(fraction bounds [0.06, 0.18], 2 capsule radii)");
}

// ---------------------------------------------------------------- criterion 6

struct Pipeline {
  fs::path ur_best;
  EvalReport kuka_full_report;
  EvalReport transfer_report;
  bool ran = false;
};

EpochCallback progress(const std::string& label) {
  return [label](const LogRow& v, const TrainResult& r) {
    log(fmt("[%s] epoch %zu steps %zu val %.5f (mask %.4f joints %.4f base %.4f type %.4f) %.0f s", label.c_str(),
            v.epoch + 1, r.steps, v.loss.final, v.loss.mask, v.loss.jcoords, v.loss.bcoords, v.loss.type,
            r.wall_seconds));
  };
}

Pipeline criterion_pipeline(const fs::path& work, const Datasets& d) {
  const auto t0 = std::chrono::steady_clock::now();
  Pipeline p;
  EvalOptions eval_options;
  eval_options.measure_timing = false;

  TrainConfig ur_config;
  ur_config.epochs = kFullEpochs;
  ur_config.seed = kSeed;
  ur_config.run_dir = work / "ur_full";
  const auto ur = train_full(MultiObjectiveNet::build(6, d.ur.n_types(), derive_seed(kSeed, 0x1417)), d.ur,
                             ur_config, progress("ur full"));
  p.ur_best = ur_config.run_dir / "ckpt-best.bin";
  const auto ur_report = evaluate(ur.best, SplitData(d.ur, SplitTag::Test), eval_options);
  log(fmt("UR-like full training: %zu steps, mask accuracy %.4f, joint median %.2f cm, base median %.2f cm, type "
          "accuracy %.3f",
          ur.steps, ur_report.mask_accuracy, ur_report.joint_error_median_cm, ur_report.base_error_median_cm,
          ur_report.type_accuracy.value_or(0)));

  const auto kuka = subsample_train(d.kuka, kTransferSamples, train_subset_seed(kSeed));
  const SplitData kuka_test(kuka, SplitTag::Test);
  eval_options.include_type = false;

  TrainConfig full_config;
  full_config.epochs = kFullEpochs;
  full_config.seed = kSeed;
  full_config.run_dir = work / "kuka_full";
  const auto kuka_full = train_full(MultiObjectiveNet::build(7, 1, derive_seed(kSeed, 0x1417)), kuka, full_config,
                           progress("kuka full"));
  p.kuka_full_report = evaluate(kuka_full.best, kuka_test, eval_options);

  TrainConfig transfer_config;
  transfer_config.epochs = kTransferEpochs;
  transfer_config.seed = kSeed;
  transfer_config.run_dir = work / "kuka_transfer";
  const auto transfer = train_transfer(p.ur_best, kuka, transfer_config, {}, progress("transfer"));
  p.transfer_report = evaluate(transfer.best, kuka_test, eval_options);
  write_per_joint_csv(p.transfer_report, transfer_config.run_dir / "per_joint.csv");
  write_report_json(p.transfer_report, transfer_config.run_dir / "report.json");
  const double seconds = seconds_since(t0) + d.seconds;

  const double target = 1.10 * kuka_full.val_log.back().loss.final;
  std::optional<std::size_t> reach_step;
  for (const auto& row : transfer.val_log) {
    if (row.loss.final <= target) {
      reach_step = row.step;
      break;
    }
  }
  const double step_budget = 0.25 * double(kuka_full.steps);
  const double full_err = p.kuka_full_report.joint_error_median_cm, tl_err = p.transfer_report.joint_error_median_cm;
  const bool mask_ok = p.transfer_report.mask_accuracy >= 0.90;
  const bool joint_ok = tl_err <= 2 * full_err;
  const bool steps_ok = reach_step && double(*reach_step) < step_budget;
  const bool time_ok = seconds < 1800;
  log(fmt("Kuka-like full training: %zu steps, final val %.5f, mask accuracy %.4f, joint median %.2f cm, base "
          "median %.2f cm",
          kuka_full.steps, kuka_full.val_log.back().loss.final, p.kuka_full_report.mask_accuracy, full_err,
          p.kuka_full_report.base_error_median_cm));
  log(fmt("transfer: %zu steps, best val %.5f, mask accuracy %.4f, joint median %.2f cm, base median %.2f cm",
          transfer.steps, transfer.best_val_loss, p.transfer_report.mask_accuracy, tl_err,
          p.transfer_report.base_error_median_cm));
  record(6, mask_ok && joint_ok && steps_ok && time_ok,
         fmt("transfer mask accuracy %.4f (>= 0.90) %s; joint median %.2f cm vs full %.2f cm (<= 2x) %s; "
             "within 10%% of full final val %.5f at step %s of budget %.0f (25%% of %zu) %s; runtime %.0f s "
             "(< 1800) %s",
             p.transfer_report.mask_accuracy, mask_ok ? "ok" : "FAILED", tl_err, full_err, joint_ok ? "ok" : "FAILED",
             kuka_full.val_log.back().loss.final, reach_step ? std::to_string(*reach_step).c_str() : "never",
             step_budget, kuka_full.steps, steps_ok ? "ok" : "FAILED", seconds, time_ok ? "ok" : "FAILED"));
  p.ran = true;
  return p;
}

// ---------------------------------------------------------------- criterion 7

void criterion_sweep(const fs::path& work, const fs::path& pretrained, const DatasetManifest& kuka) {
  TrainConfig config;
  config.epochs = kTransferEpochs;
  config.seed = kSeed;
  config.run_dir = work / "sweep";
  const auto rows = sample_count_sweep(load(pretrained), kuka, kDefaultSweepCounts, config, [](const SweepRow& r) {
    log(fmt("[sweep] n=%zu best val %.5f steps %zu %.1f s", r.n, r.final_val_loss, r.steps, r.wall_seconds));
  });
  bool non_increasing = true, wall_increasing = true;
  std::string losses;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    losses += fmt("%zu:%.4f ", rows[i].n, rows[i].final_val_loss);
    if (i == 0) continue;
    if (rows[i].n <= 312 && rows[i].final_val_loss > 1.05 * rows[i - 1].final_val_loss) non_increasing = false;
    if (!(rows[i].wall_seconds > rows[i - 1].wall_seconds)) wall_increasing = false;
  }
  const double l312 = rows[3].final_val_loss, l624 = rows[4].final_val_loss;
  const double improvement = (l312 - l624) / l312;
  const bool plateau = improvement < 0.15;
  std::string walls;
  for (const auto& r : rows) walls += fmt("%.0f ", r.wall_seconds);
  record(7, non_increasing && plateau && wall_increasing,
         fmt("val loss %s- non-increasing 48..312 within 5%% %s; 312->624 improvement %.1f%% (< 15%%) %s; wall "
             "seconds %s- strictly increasing %s",
             losses.c_str(), non_increasing ? "ok" : "FAILED", 100 * improvement, plateau ? "ok" : "FAILED",
             walls.c_str(), wall_increasing ? "ok" : "FAILED"));
}

// ---------------------------------------------------------------- criterion 8

int run_cli(const std::string& args, const fs::path& log_file) {
  const std::string cmd = std::string(MOCNN_CLI_PATH) + " " + args + " >> '" + log_file.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// CSV text with the named column removed.
std::string drop_column(const std::string& text, const std::string& column) {
  std::istringstream in(text);
  std::string line, out;
  int drop = -1;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == column) drop = int(i);
      }
      header = false;
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (int(i) == drop) continue;
      out += cells[i] + ",";
    }
    out += "\n";
  }
  return out;
}

void criterion_determinism(const fs::path& work) {
  const fs::path log_file = work / "cli.log";
  const auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
  bool ok = true;
  for (const char* rep : {"a", "b"}) {
    const fs::path r = work / "det" / rep;
    ok = ok && run_cli("gen --robot ur3like --robot ur5like --robot ur10like --n 40 --seed 9 --out " + q(r / "ur"),
                       log_file) == 0;
    ok = ok && run_cli("gen --robot kukalike --n 60 --seed 10 --out " + q(r / "kuka"), log_file) == 0;
    ok = ok && run_cli("train --data " + q(r / "ur") + " --out " + q(r / "full") + " --epochs 2 --seed 3 --quiet",
                       log_file) == 0;
    ok = ok && run_cli("transfer --from " + q(r / "full/ckpt-best.bin") + " --data " + q(r / "kuka") + " --out " +
                           q(r / "tl") + " --epochs 3 --samples 24 --seed 3 --quiet",
                       log_file) == 0;
    ok = ok && run_cli("eval --ckpt " + q(r / "tl/ckpt-final.bin") + " --data " + q(r / "kuka") + " --out " +
                           q(r / "ev") + " --no-timing",
                       log_file) == 0;
    ok = ok && run_cli("sweep --from " + q(r / "full/ckpt-best.bin") + " --data " + q(r / "kuka") + " --out " +
                           q(r / "sw") + " --counts 8,16,32 --epochs 2 --seed 3 --quiet",
                       log_file) == 0;
  }
  if (!ok) {
    record(8, false, "a CLI command failed, see " + log_file.string());
    return;
  }
  const fs::path a = work / "det" / "a", b = work / "det" / "b";
  std::size_t compared = 0;
  std::vector<std::string> differing;
  std::set<std::string> kinds;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    const auto name = rel.filename().string(), ext = rel.extension().string();
    const bool is_ckpt = ext == ".bin", is_manifest = name == "manifest.jsonl" || name == "dataset.json";
    const bool is_csv = ext == ".csv", is_png = ext == ".png";
    if (!(is_ckpt || is_manifest || is_csv || is_png)) continue;
    if (!fs::exists(b / rel)) {
      differing.push_back(rel.string() + " (missing)");
      continue;
    }
    std::string x = read_file(a / rel), y = read_file(b / rel);
    if (name == "sweep.csv") {
      x = drop_column(x, "wall_seconds");
      y = drop_column(y, "wall_seconds");
    }
    ++compared;
    kinds.insert(is_ckpt ? "checkpoints" : is_manifest ? "manifests" : is_csv ? "CSV reports" : "images");
    if (x != y) differing.push_back(rel.string());
  }
  std::string kind_list;
  for (const auto& k : kinds) kind_list += k + " ";
  record(8, differing.empty() && kinds.size() == 4,
         fmt("%zu files (%s) compared across two runs of gen/train/transfer/eval/sweep, %zu differ%s%s", compared,
             kind_list.c_str(), differing.size(), differing.empty() ? "" : ": first ",
             differing.empty() ? "" : differing.front().c_str()) +
             " (sweep.csv wall_seconds column excluded)");
}

// ---------------------------------------------------------------- criterion 9

void criterion_profile(const Pipeline& p) {
  const auto& med = p.transfer_report.per_joint_error_cm;
  std::string values;
  for (double v : med) values += fmt("%.2f ", v);
  if (med.size() != 7) {
    record(9, false, fmt("expected 7 per-joint medians, got %zu", med.size()));
    return;
  }
  const bool tendency = med.back() >= med.front();
  record(9, tendency,
         fmt("transfer per-joint medians base->end-effector [cm]: %s- end-effector %.2f %s base-side %.2f%s",
             values.c_str(), med.back(), tendency ? ">=" : "<", med.front(),
             tendency ? "" : " (soft check, reported as a warning)"),
         true);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  std::string work_arg = "acceptance_work";
  std::vector<int> only;
  bool strict = false;
  app.add_option("--work", work_arg, "Scratch directory, wiped at start")->capture_default_str();
  app.add_flag("--strict", strict, "Exit non-zero when any hard criterion fails");
  app.add_option("--only", only, "Run only these criteria (6 also runs for 3, 7 and 9)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path work = fs::absolute(work_arg);
  fs::remove_all(work);
  fs::create_directories(work);
  const auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  const auto t0 = std::chrono::steady_clock::now();

  try {
    if (wanted(2)) criterion_gradients();
    if (wanted(4)) criterion_geometry();
    const bool need_pipeline = wanted(3) || wanted(6) || wanted(7) || wanted(9);
    std::optional<Datasets> data;
    if (need_pipeline || wanted(5)) data = make_datasets(work);
    if (wanted(5)) criterion_ground_truth(*data);
    Pipeline pipeline;
    if (need_pipeline) pipeline = criterion_pipeline(work, *data);
    if (wanted(9)) criterion_profile(pipeline);
    if (wanted(3)) criterion_freeze(work, pipeline.ur_best, data->kuka);
    if (wanted(7)) criterion_sweep(work, pipeline.ur_best, data->kuka);
    if (wanted(8)) criterion_determinism(work);
    if (wanted(1)) criterion_loss_oracles(work);
  } catch (const std::exception& e) {
    std::printf("acceptance run aborted: %s\n", e.what());
    return 1;
  }

  std::printf("\nsummary (%.0f s)\n", seconds_since(t0));
  bool all = true;
  for (const auto& [id, o] : g_results) {
    std::printf("%s criterion %d %s\n", o.pass ? "PASS" : (o.soft ? "WARN" : "FAIL"), id, kNames.at(id).c_str());
    if (!o.pass && !o.soft) all = false;
  }
  std::printf("%s\n", all ? "all hard criteria passed" : "some hard criteria FAILED");
  return all || !strict ? 0 : 1;
}
