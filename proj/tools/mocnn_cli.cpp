#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>

#include "json.hpp"
#include "mocnn/datastore.hpp"
#include "mocnn/eval.hpp"
#include "mocnn/io.hpp"
#include "mocnn/kinematics.hpp"
#include "mocnn/random.hpp"
#include "mocnn/svg_plot.hpp"
#include "mocnn/synth.hpp"
#include "mocnn/train.hpp"

using namespace mocnn;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kSplitStream = 0x5B;
constexpr std::uint64_t kInitStream = 0x1417;

struct TrainFlags {
  std::string config_path;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  std::size_t patience = 0;
  std::uint64_t seed = 1;
  std::string optimizer;
  bool quiet = false;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* patience_opt = nullptr;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, std::size_t default_epochs) {
  f.epochs = default_epochs;
  f.epochs_opt = cmd->add_option("--epochs", f.epochs, "Training epochs")->capture_default_str();
  f.batch_opt = cmd->add_option("--batch-size", f.batch_size, "Mini-batch size (default 16)");
  f.patience_opt =
      cmd->add_option("--patience", f.patience, "Early-stopping patience in epochs, 0 disables (default 10)");
  cmd->add_option("--optimizer", f.optimizer, "adam (default) or sgd with momentum")
      ->check(CLI::IsMember({"adam", "sgd"}));
  cmd->add_option("--seed", f.seed, "Seed for every random choice of the command")->capture_default_str();
  cmd->add_option("--config", f.config_path,
                  "JSON file overriding TrainConfig fields (epochs, batch_size, early_stop_patience, lr_start, "
                  "lr_end, optimizer, momentum, init_coordinate_bias) and \"weights\" {mask, jcoords, bcoords, type}")
      ->check(CLI::ExistingFile);
  cmd->add_flag("--quiet", f.quiet, "Suppress per-epoch progress");
}

TrainConfig make_config(const TrainFlags& f) {
  TrainConfig c;
  c.epochs = f.epochs;
  c.seed = f.seed;
  if (!f.config_path.empty()) {
    json j;
    try {
      j = json::parse(read_file(f.config_path));
      if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
      if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
      if (j.contains("early_stop_patience")) c.early_stop_patience = j["early_stop_patience"].get<std::size_t>();
      if (j.contains("lr_start")) c.lr_start = j["lr_start"].get<double>();
      if (j.contains("lr_end")) c.lr_end = j["lr_end"].get<double>();
      if (j.contains("optimizer")) c.optimizer = parse_optimizer(j["optimizer"].get<std::string>());
      if (j.contains("momentum")) c.momentum = j["momentum"].get<double>();
      if (j.contains("init_coordinate_bias")) c.init_coordinate_bias = j["init_coordinate_bias"].get<bool>();
      if (j.contains("weights")) {
        const auto& w = j["weights"];
        c.weights.mask = w.value("mask", c.weights.mask);
        c.weights.jcoords = w.value("jcoords", c.weights.jcoords);
        c.weights.bcoords = w.value("bcoords", c.weights.bcoords);
        c.weights.type = w.value("type", c.weights.type);
      }
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ValidationError("--config", e.what());
    } catch (const Error& e) {
      throw CLI::ValidationError("--config", e.what());
    }
  }
  if (!f.optimizer.empty()) c.optimizer = parse_optimizer(f.optimizer);
  if (f.epochs_opt->count()) c.epochs = f.epochs;
  if (f.batch_opt->count()) c.batch_size = f.batch_size;
  if (f.patience_opt->count()) c.early_stop_patience = f.patience;
  try {
    c.validate();
  } catch (const Error& e) {
    throw CLI::ValidationError("config", e.what());
  }
  return c;
}

json config_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["early_stop_patience"] = c.early_stop_patience;
  j["lr_start"] = c.lr_start;
  j["lr_end"] = c.lr_end;
  j["optimizer"] = std::string(optimizer_name(c.optimizer));
  j["momentum"] = c.momentum;
  j["init_coordinate_bias"] = c.init_coordinate_bias;
  j["weights"] = {{"mask", c.weights.mask},
                  {"jcoords", c.weights.jcoords},
                  {"bcoords", c.weights.bcoords},
                  {"type", c.weights.type}};
  return j;
}

// Creates the run directory and writes its config snapshot; refuses to reuse one.
void open_run_dir(const fs::path& out, const json& snapshot) {
  fs::create_directories(out);
  const fs::path cfg = out / "config.json";
  if (fs::exists(cfg)) throw Error(Errc::Io, "run directory " + out.string() + " already holds a config.json");
  write_file_atomic(cfg, snapshot.dump(2) + "\n");
}

EpochCallback progress(bool quiet, const std::string& label) {
  if (quiet) return {};
  return [label](const LogRow& v, const TrainResult& r) {
    std::fprintf(stderr, "[%s] epoch %zu  steps %zu  lr %.3g  val %.5f (mask %.4f joints %.4f base %.4f type %.4f)  %.1fs\n",
                 label.c_str(), v.epoch + 1, r.steps, v.lr, v.loss.final, v.loss.mask, v.loss.jcoords,
                 v.loss.bcoords, v.loss.type, r.wall_seconds);
  };
}

void write_loss_svg(const TrainResult& r, const fs::path& path) {
  svg::Series train{"train (epoch mean)", {}, {}}, val{"validation", {}, {}};
  std::map<std::size_t, std::pair<double, int>> per_epoch;
  for (const auto& row : r.train_log) {
    auto& acc = per_epoch[row.epoch];
    acc.first += row.loss.final;
    acc.second += 1;
  }
  for (const auto& [epoch, acc] : per_epoch) {
    train.x.push_back(double(epoch + 1));
    train.y.push_back(acc.first / acc.second);
  }
  for (const auto& row : r.val_log) {
    val.x.push_back(double(row.epoch + 1));
    val.y.push_back(row.loss.final);
  }
  write_file_atomic(path, svg::line_chart({train, val}, {"Combined loss", "epoch", "loss", 640, 400, true}));
}

void write_eval_outputs(const MultiObjectiveNet& net, const DatasetManifest& manifest, SplitTag tag,
                        const fs::path& out, bool timing) {
  const SplitData data(manifest, tag);
  EvalOptions opt;
  opt.include_type = net.n_types() > 1;
  opt.measure_timing = timing;
  const EvalReport report = evaluate(net, data, opt);
  fs::create_directories(out);
  write_report_json(report, out / "report.json");
  write_per_joint_csv(report, out / "per_joint.csv");
  write_per_joint_svg(report, out / "per_joint.svg");
  std::fprintf(stderr, "mask accuracy %.4f  joint median %.2f cm  base median %.2f cm", report.mask_accuracy,
               report.joint_error_median_cm, report.base_error_median_cm);
  if (report.type_accuracy) std::fprintf(stderr, "  type accuracy %.4f", *report.type_accuracy);
  std::fprintf(stderr, "  forward %.2f ms\n", report.forward_ms_mean);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-objective robot-arm perception: synthetic data, training, transfer and evaluation"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Render a labelled synthetic dataset");
  std::vector<std::string> robots;
  std::vector<std::string> chain_files;
  std::size_t gen_n = 0;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  double train_fraction = 0.8;
  bool distractor = false;
  gen->add_option("--robot", robots,
                  "Robot model (ur3like, ur5like, ur10like, kukalike); repeat to mix models, each becoming one "
                  "robot-type class in the order given");
  gen->add_option("--chain", chain_files, "Chain description file; repeatable, adds classes after --robot ones")
      ->check(CLI::ExistingFile);
  gen->add_option("--n", gen_n, "Number of samples")->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Generation and split seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--train-fraction", train_fraction, "Share of samples tagged train, the rest test")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  gen->add_flag("--distractor", distractor, "Add an unlabelled second robot to the color images");

  // train
  auto* train = app.add_subcommand("train", "Train a network from scratch on a dataset");
  TrainFlags train_flags;
  std::string train_data, train_out;
  train->add_option("--data", train_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", train_out, "Run directory (must not hold a previous run)")->required();
  add_train_flags(train, train_flags, 60);

  // transfer
  auto* transfer = app.add_subcommand("transfer", "Transfer a trained network to a new robot dataset");
  TrainFlags transfer_flags;
  std::string transfer_from, transfer_data, transfer_out;
  std::size_t transfer_samples = 0;
  transfer->add_option("--from", transfer_from, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  transfer->add_option("--data", transfer_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  transfer->add_option("--out", transfer_out, "Run directory (must not hold a previous run)")->required();
  transfer->add_option("--samples", transfer_samples, "Train on a seeded subset of this many train samples (0: all)");
  add_train_flags(transfer, transfer_flags, 30);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_out, eval_split = "test";
  bool eval_no_timing = false;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", eval_out, "Output directory (default: the checkpoint's directory)");
  eval->add_option("--split", eval_split, "Split to evaluate")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "test"}));
  eval->add_flag("--no-timing", eval_no_timing, "Skip forward-time measurement");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Transfer runs over increasing training-set sizes");
  TrainFlags sweep_flags;
  std::string sweep_from, sweep_data, sweep_out;
  std::vector<std::size_t> sweep_counts = kDefaultSweepCounts;
  sweep->add_option("--from", sweep_from, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  sweep->add_option("--data", sweep_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  sweep->add_option("--out", sweep_out, "Run directory (must not hold a previous run)")->required();
  sweep->add_option("--counts", sweep_counts, "Training-set sizes")->delimiter(',')->capture_default_str();
  add_train_flags(sweep, sweep_flags, 30);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 2;
  }

  try {
    if (gen->parsed()) {
      if (robots.empty() && chain_files.empty()) throw CLI::ValidationError("--robot", "give at least one robot");
      std::vector<RobotEntry> entries;
      for (const auto& name : robots) {
        const auto model = parse_robot_model(name);
        if (!model) throw CLI::ValidationError("--robot", "unknown robot '" + name + "'");
        entries.push_back({make_chain(*model), name});
      }
      for (const auto& file : chain_files) {
        auto chain = load_chain(file);
        entries.push_back({chain, chain.name});
      }
      for (std::size_t i = 1; i < entries.size(); ++i) {
        if (entries[i].chain.n_joints() != entries[0].chain.n_joints()) {
          throw CLI::ValidationError("--robot", "all robots of one dataset need the same joint count");
        }
      }
      SceneConfig base;
      base.seed = gen_seed;
      base.background_id = -1;
      base.brightness = 0;
      base.distractor = distractor;
      DatasetManifest m = generate_dataset(entries, gen_n, base, gen_out);
      if (gen_n >= 2) m = split(std::move(m), train_fraction, derive_seed(gen_seed, kSplitStream));
      save_manifest(m);
      std::fprintf(stderr, "wrote %zu samples to %s (%zu train / %zu test)\n", m.records.size(), gen_out.c_str(),
                   m.indices(SplitTag::Train).size(), m.indices(SplitTag::Test).size());
    } else if (train->parsed()) {
      const TrainConfig cfg_in = make_config(train_flags);
      const DatasetManifest m = load_manifest(train_data);
      TrainConfig cfg = cfg_in;
      cfg.run_dir = train_out;
      json snap{{"command", "train"}, {"data", train_data}, {"train", config_json(cfg)}};
      open_run_dir(train_out, snap);
      auto net = MultiObjectiveNet::build(m.n_joints(), std::max<std::size_t>(1, m.n_types()),
                                          derive_seed(cfg.seed, kInitStream));
      const TrainResult r = train_full(std::move(net), m, cfg, progress(train_flags.quiet, "train"));
      write_loss_svg(r, train_out / fs::path("loss.svg"));
      write_eval_outputs(r.best, m, SplitTag::Test, train_out, true);
    } else if (transfer->parsed()) {
      const TrainConfig cfg_in = make_config(transfer_flags);
      DatasetManifest m = load_manifest(transfer_data);
      if (transfer_samples > 0) m = subsample_train(m, transfer_samples, train_subset_seed(cfg_in.seed));
      TrainConfig cfg = cfg_in;
      cfg.run_dir = transfer_out;
      json snap{{"command", "transfer"},
                {"from", transfer_from},
                {"data", transfer_data},
                {"samples", transfer_samples},
                {"train", config_json(cfg)}};
      open_run_dir(transfer_out, snap);
      const TrainResult r = train_transfer(fs::path(transfer_from), m, cfg, {}, progress(transfer_flags.quiet, "transfer"));
      write_loss_svg(r, transfer_out / fs::path("loss.svg"));
      write_eval_outputs(r.best, m, SplitTag::Test, transfer_out, true);
    } else if (eval->parsed()) {
      const DatasetManifest m = load_manifest(eval_data);
      const auto net = load(eval_ckpt);
      const fs::path out = eval_out.empty() ? fs::path(eval_ckpt).parent_path() : fs::path(eval_out);
      write_eval_outputs(net, m, eval_split == "train" ? SplitTag::Train : SplitTag::Test,
                         out.empty() ? fs::path(".") : out, !eval_no_timing);
    } else if (sweep->parsed()) {
      TrainConfig cfg = make_config(sweep_flags);
      const DatasetManifest m = load_manifest(sweep_data);
      cfg.run_dir = sweep_out;
      json snap{{"command", "sweep"},
                {"from", sweep_from},
                {"data", sweep_data},
                {"counts", sweep_counts},
                {"train", config_json(cfg)}};
      open_run_dir(sweep_out, snap);
      const auto pretrained = load(sweep_from);
      sample_count_sweep(pretrained, m, sweep_counts, cfg, [&](const SweepRow& row) {
        if (!sweep_flags.quiet) {
          std::fprintf(stderr, "[sweep] n=%zu  val %.5f  steps %zu  %.1fs\n", row.n, row.final_val_loss, row.steps,
                       row.wall_seconds);
        }
      });
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << app.get_subcommands().front()->help();
    return 2;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
