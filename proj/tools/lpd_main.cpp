// lpd: command-line entry points for data generation, training, evaluation and diagnostics.
//
// Exit codes: 0 success, 2 usage error, 1 runtime failure.

#include "lpd/feature_store.hpp"
#include "lpd/model.hpp"
#include "lpd/retrieval_eval.hpp"
#include "lpd/synthetic.hpp"
#include "lpd/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kRunManifest = "run_manifest.json";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Options that take part in config-file resolution and in the persisted snapshot.
class Settings {
 public:
  explicit Settings(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& names, const std::string& key, T& value, const std::string& help) {
    auto* opt = app_->add_option(names, value, help)->capture_default_str();
    bindings_.push_back({key, opt, [&value](const json& j) { value = j.get<T>(); }, [&value] { return json(value); }});
    return opt;
  }

  // Fills every option not given on the command line from `config`.
  void apply(const json& config) const {
    for (auto it = config.begin(); it != config.end(); ++it) {
      bool known = false;
      for (const auto& b : bindings_) known = known || b.key == it.key();
      if (!known) throw UsageError("config: unknown key '" + it.key() + "' for '" + app_->get_name() + "'");
    }
    for (const auto& b : bindings_) {
      if (b.option->count() > 0 || !config.contains(b.key)) continue;
      try {
        b.load(config.at(b.key));
      } catch (const json::exception& e) {
        throw UsageError("config: bad value for '" + b.key + "': " + e.what());
      }
    }
  }

  json snapshot() const {
    json out = json::object();
    for (const auto& b : bindings_) out[b.key] = b.dump();
    return out;
  }

 private:
  struct Binding {
    std::string key;
    CLI::Option* option;
    std::function<void(const json&)> load;
    std::function<json()> dump;
  };
  CLI::App* app_;
  std::vector<Binding> bindings_;
};

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
}

// A config file is either a bare settings object or a run manifest written by a previous run.
void resolve(const Settings& settings, const Common& common, const std::string& subcommand) {
  if (common.config_path.empty()) return;
  json cfg = read_json(common.config_path);
  if (!cfg.is_object()) throw UsageError("config must be a JSON object");
  if (cfg.contains("config")) {
    if (cfg.value("subcommand", subcommand) != subcommand) {
      throw UsageError("manifest was written by '" + cfg.value("subcommand", std::string{}) + "', not '" + subcommand + "'");
    }
    cfg = cfg["config"];
  }
  settings.apply(cfg);
}

void write_manifest(const fs::path& dir, const std::string& subcommand, const Settings& settings,
                    const Common& common) {
  json m;
  m["subcommand"] = subcommand;
  m["config_file"] = common.config_path;
  m["seed"] = common.seed;
  m["output_dir"] = common.out;
  m["config"] = settings.snapshot();
  fs::create_directories(dir);
  std::ofstream out(dir / kRunManifest, std::ios::trunc);
  out << m.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / kRunManifest).string());
}

// Output directories must be new or empty unless --force; --force only clears earlier run outputs.
void prepare_output(const fs::path& dir, bool force) {
  if (!fs::exists(dir) || fs::is_empty(dir)) {
    fs::create_directories(dir);
    return;
  }
  if (!force) throw UsageError("output directory " + dir.string() + " exists; pass --force to overwrite");
  if (!fs::exists(dir / kRunManifest)) {
    throw UsageError("refusing to clear " + dir.string() + ": it does not look like an lpd output directory");
  }
  fs::remove_all(dir);
  fs::create_directories(dir);
}

void add_common(Settings& s, Common& c, bool with_out) {
  s.add("--seed", "seed", c.seed, "random seed");
  s.add("--threads", "threads", c.threads, "worker threads for collection scoring")->check(CLI::PositiveNumber);
  if (with_out) s.add("--out", "out", c.out, "output directory");
}

void add_flags(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config or run manifest; command-line flags take precedence");
  app->add_flag("--force", c.force, "overwrite an existing output directory");
}

// ---- gen-data ---------------------------------------------------------------

struct GenData {
  Common common;
  lpd::SyntheticConfig cfg;
};

void setup_gen_data(CLI::App& root, GenData& g, Settings& s, std::function<int()>& run) {
  auto* app = root.add_subcommand("gen-data", "write the seeded synthetic benchmark to a dataset directory");
  s = Settings(app);
  add_flags(app, g.common);
  add_common(s, g.common, true);
  auto& c = g.cfg;
  s.add("--queries", "queries", c.queries, "test queries")->check(CLI::PositiveNumber);
  s.add("--clusters", "clusters", c.clusters, "relevance clusters (modes) per query")->check(CLI::PositiveNumber);
  s.add("--relevant-per-cluster", "relevant-per-cluster", c.relevant_per_cluster, "relevant videos per cluster")
      ->check(CLI::PositiveNumber);
  s.add("--distractors", "distractors", c.distractors, "irrelevant videos in the test collection");
  s.add("--val-queries", "val-queries", c.val_queries, "validation queries")->check(CLI::PositiveNumber);
  s.add("--val-distractors", "val-distractors", c.val_distractors, "irrelevant videos in the validation collection");
  s.add("--train-topics", "train-topics", c.train_concepts, "training topics")->check(CLI::PositiveNumber);
  s.add("--train-videos-per-cluster", "train-videos-per-cluster", c.train_videos_per_cluster,
        "training videos per topic and cluster")
      ->check(CLI::PositiveNumber);
  s.add("--captions-per-video", "captions-per-video", c.captions_per_video, "captions per training video")
      ->check(CLI::PositiveNumber);
  s.add("--text-dims", "text-dims", c.text_dims, "raw text feature dimensions")->delimiter(',');
  s.add("--video-dims", "video-dims", c.video_dims, "raw video feature dimensions")->delimiter(',');
  s.add("--latent-dim", "latent-dim", c.latent_dim, "latent topic dimension")->check(CLI::PositiveNumber);
  s.add("--noise", "noise", c.noise, "per-entry feature noise")->check(CLI::NonNegativeNumber);
  s.add("--cluster-spread", "cluster-spread", c.cluster_spread, "scale of per-cluster offsets")
      ->check(CLI::NonNegativeNumber);
  s.add("--unseen-signal", "unseen-signal", c.unseen_signal, "topic share a feature keeps for clusters it misses")
      ->check(CLI::NonNegativeNumber);
  run = [&g, &s] {
    resolve(s, g.common, "gen-data");
    if (g.common.out.empty()) throw UsageError("--out is required");
    try {
      lpd::validate(g.cfg);
    } catch (const lpd::FeatureStoreError& e) {
      throw UsageError(e.what());
    }
    const fs::path out = g.common.out;
    prepare_output(out, g.common.force);
    const auto ds = lpd::generate_synthetic(g.cfg, g.common.seed);
    lpd::write_dataset(out, ds);
    write_manifest(out, "gen-data", s, g.common);
    std::size_t judgments = 0;
    for (const auto& [q, rel] : ds.test.relevance) judgments += rel.size();
    std::printf("wrote %s: %zu training pairs, %zu test queries, %zu test items, %zu relevant judgments\n",
                out.string().c_str(), ds.train.pairs.size(), ds.test.relevance.size(), ds.test.collection.size(),
                judgments);
    return 0;
  };
}

// ---- train ------------------------------------------------------------------

struct ModelFlags {
  std::string topology = "lpd";
  std::string dcl = "partial";
  std::string mtrl = "ef";
  std::string gate = ">=";
};

void add_loss_flags(Settings& s, ModelFlags& m, lpd::LossConfig& loss) {
  s.add("--topology", "topology", m.topology, "space wiring")->check(CLI::IsMember({"lpd", "parallel-heads"}));
  s.add("--dcl", "dcl", m.dcl, "de-correlation mode")->check(CLI::IsMember({"partial", "full", "off"}));
  s.add("--mtrl", "mtrl", m.mtrl, "multi-space ranking loss")->check(CLI::IsMember({"ef", "plain"}));
  s.add("--gate", "gate", m.gate, "entropy gate comparison")->check(CLI::IsMember({">=", ">"}));
  s.add("--margin", "margin", loss.margin, "ranking margin")->check(CLI::PositiveNumber);
  s.add("--dcl-weight", "dcl-weight", loss.dcl_weight, "weight of the de-correlation term")
      ->check(CLI::NonNegativeNumber);
}

// Translates string-valued settings; values from a config file have not been through CLI11 checks.
void apply_loss_flags(const ModelFlags& m, lpd::LossConfig& loss, lpd::Topology& topology) {
  try {
    topology = lpd::parse_topology(m.topology);
    loss.dcl_mode = lpd::parse_dcl_mode(m.dcl);
    loss.mtrl_mode = lpd::parse_mtrl_mode(m.mtrl);
    loss.gate_comparison = lpd::parse_gate_comparison(m.gate);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

struct Train {
  Common common;
  std::string data;
  ModelFlags model;
  lpd::TrainingConfig cfg;
  bool resume = false;
};

void setup_train(CLI::App& root, Train& t, Settings& s, std::function<int()>& run) {
  auto* app = root.add_subcommand("train", "train a model and keep the best validation checkpoint");
  s = Settings(app);
  add_flags(app, t.common);
  app->add_flag("--resume", t.resume, "continue from <out>/state.bin");
  add_common(s, t.common, true);
  s.add("--data", "data", t.data, "dataset directory");
  add_loss_flags(s, t.model, t.cfg.loss);
  auto& c = t.cfg;
  s.add("--batch", "batch", c.batch_size, "mini-batch size")->check(CLI::PositiveNumber);
  s.add("--lr", "lr", c.initial_lr, "initial learning rate")->check(CLI::PositiveNumber);
  s.add("--lr-decay", "lr-decay", c.lr_decay, "learning-rate factor per epoch")->check(CLI::Range(0.0, 1.0));
  s.add("--patience", "patience", c.patience, "epochs without validation improvement before stopping")
      ->check(CLI::PositiveNumber);
  s.add("--max-epochs", "max-epochs", c.max_epochs, "epoch limit");
  s.add("--dim", "dim", c.common_dim, "common space dimension")->check(CLI::PositiveNumber);
  s.add("--depth", "depth", c.eval_depth, "validation ranking depth")->check(CLI::PositiveNumber);
  s.add("--rmsprop-smoothing", "rmsprop-smoothing", c.rmsprop_smoothing, "RMSProp accumulator decay");
  s.add("--rmsprop-eps", "rmsprop-eps", c.rmsprop_eps, "RMSProp epsilon");
  run = [&t, &s] {
    resolve(s, t.common, "train");
    if (t.data.empty()) throw UsageError("--data is required");
    if (t.common.out.empty()) throw UsageError("--out is required");
    apply_loss_flags(t.model, t.cfg.loss, t.cfg.topology);
    t.cfg.seed = t.common.seed;
    t.cfg.threads = t.common.threads;
    try {
      t.cfg.validate();
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    const fs::path out = t.common.out;
    lpd::TrainOptions options;
    options.out_dir = out;
    if (t.resume) {
      options.resume = lpd::load_state(out / "state.bin");
    } else {
      prepare_output(out, t.common.force);
    }
    const auto ds = lpd::load_dataset(t.data);
    write_manifest(out, "train", s, t.common);
    options.on_epoch = [](const lpd::TelemetryRow& row) {
      std::printf("epoch %3zu  step %6zu  lr %.3g  val mAP %.4f\n", row.epoch, row.step, row.lr, row.val_map.value_or(0.0));
      std::fflush(stdout);
    };
    const auto result = lpd::train(ds, t.cfg, options);
    std::printf("best val mAP %.4f at epoch %zu%s; checkpoint pointer %s\n", result.best_val_map, result.best_epoch,
                result.early_stopped ? " (early stop)" : "", (out / "best").string().c_str());
    return 0;
  };
}

// ---- eval / diagnose ----------------------------------------------------------

struct Eval {
  Common common;
  std::string data;
  std::string run_dir;
  std::string checkpoint;
  std::string split = "test";
  std::string topology;
  std::size_t depth = 1000;
  std::size_t topk = 20;
};

fs::path resolve_checkpoint(const Eval& e) {
  if (!e.checkpoint.empty()) return e.checkpoint;
  if (e.run_dir.empty()) throw UsageError("pass --checkpoint or --run");
  std::ifstream in(fs::path(e.run_dir) / "best");
  std::string name;
  if (!in || !std::getline(in, name) || name.empty()) {
    throw std::runtime_error("no best checkpoint pointer in " + e.run_dir);
  }
  return fs::path(e.run_dir) / name;
}

lpd::Split parse_split(const std::string& s) {
  if (s == "val") return lpd::Split::kVal;
  if (s == "test") return lpd::Split::kTest;
  throw UsageError("split must be val or test");
}

void setup_eval(CLI::App& root, const char* name, const char* help, Eval& e, Settings& s, std::function<int()>& run,
                bool diagnose) {
  auto* app = root.add_subcommand(name, help);
  s = Settings(app);
  add_flags(app, e.common);
  add_common(s, e.common, true);
  s.add("--data", "data", e.data, "dataset directory");
  s.add("--run", "run", e.run_dir, "training output directory (uses its best checkpoint)");
  s.add("--checkpoint", "checkpoint", e.checkpoint, "checkpoint file (overrides --run)");
  s.add("--split", "split", e.split, "split to score")->check(CLI::IsMember({"val", "test"}));
  s.add("--topology", "topology", e.topology, "expected topology of the checkpoint")
      ->check(CLI::IsMember({"", "lpd", "parallel-heads"}));
  s.add("--depth", "depth", e.depth, "ranking depth")->check(CLI::PositiveNumber);
  s.add("--topk,--k", "topk", e.topk, "k for precision@k and the inter-space IoU")->check(CLI::PositiveNumber);
  run = [&e, &s, name, diagnose] {
    resolve(s, e.common, name);
    if (e.data.empty()) throw UsageError("--data is required");
    const auto split = parse_split(e.split);
    std::optional<lpd::Topology> expected;
    if (!e.topology.empty()) expected = lpd::parse_topology(e.topology);
    const auto ckpt = resolve_checkpoint(e);
    const auto params = lpd::load_checkpoint(ckpt);
    if (expected && *expected != params.topology) {
      throw std::runtime_error("checkpoint " + ckpt.string() + " has topology " + lpd::to_string(params.topology) +
                               ", expected " + lpd::to_string(*expected));
    }
    const auto ds = lpd::load_dataset(e.data);
    if (!(lpd::model_dims(ds, params.dims.common_dim) == params.dims)) {
      throw std::runtime_error("checkpoint feature dimensions do not match the dataset");
    }
    lpd::EvalOptions options{e.depth, {e.topk}, e.topk};
    const auto report = lpd::evaluate_split(params, ds, split, options, e.common.threads);
    if (!e.common.out.empty()) {
      const fs::path out = e.common.out;
      prepare_output(out, e.common.force);
      if (!diagnose) {
        lpd::write_report_csv(out / "report.csv", report);
        std::ofstream(out / "summary.txt") << lpd::summarize(report);
      }
      lpd::write_iou_csv(out / "iou.csv", report.iou);
      write_manifest(out, name, s, e.common);
    }
    if (diagnose) {
      std::printf("inter-space IoU@%zu over %zu spaces (%s split)\n", e.topk,
                  static_cast<std::size_t>(report.iou.values.rows()), e.split.c_str());
      for (Eigen::Index r = 0; r < report.iou.values.rows(); ++r) {
        for (Eigen::Index c = 0; c < report.iou.values.cols(); ++c) std::printf(" %.3f", report.iou.values(r, c));
        std::printf("\n");
      }
      std::printf("mean off-diagonal IoU: %.4f\n", report.iou.mean_off_diagonal);
    } else {
      std::fputs(lpd::summarize(report).c_str(), stdout);
    }
    return 0;
  };
}

// ---- gradcheck ----------------------------------------------------------------

struct GradCheck {
  Common common;
  ModelFlags model;
  lpd::GradCheckConfig cfg;
  double tolerance = 1e-4;
};

void setup_gradcheck(CLI::App& root, GradCheck& g, Settings& s, std::function<int()>& run) {
  auto* app = root.add_subcommand("gradcheck", "compare analytic gradients with central differences on a tiny model");
  s = Settings(app);
  add_flags(app, g.common);
  add_common(s, g.common, true);
  add_loss_flags(s, g.model, g.cfg.loss);
  s.add("--text-dims", "text-dims", g.cfg.dims.text_dims, "raw text feature dimensions")->delimiter(',');
  s.add("--video-dims", "video-dims", g.cfg.dims.video_dims, "raw video feature dimensions")->delimiter(',');
  s.add("--dim", "dim", g.cfg.dims.common_dim, "common space dimension")->check(CLI::PositiveNumber);
  s.add("--batch", "batch", g.cfg.batch_size, "batch size")->check(CLI::PositiveNumber);
  s.add("--step", "step", g.cfg.step, "finite-difference step")->check(CLI::PositiveNumber);
  s.add("--tolerance", "tolerance", g.tolerance, "maximum accepted relative error")->check(CLI::PositiveNumber);
  run = [&g, &s] {
    resolve(s, g.common, "gradcheck");
    apply_loss_flags(g.model, g.cfg.loss, g.cfg.topology);
    g.cfg.seed = g.common.seed;
    try {
      g.cfg.loss.validate(g.cfg.batch_size);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    const auto result = lpd::gradcheck(g.cfg);
    std::printf("%-20s %14s %14s %10s\n", "tensor", "analytic", "numeric", "rel-error");
    for (const auto& t : result.tensors) {
      std::printf("%-20s %14.6e %14.6e %10.3e%s\n", t.parameter.c_str(), t.analytic, t.numeric, t.rel_error,
                  t.finite ? "" : "  non-finite");
    }
    const bool ok = result.passed(g.tolerance);
    std::printf("max rel-error %.3e (%zu restarts): %s\n", result.max_rel_error, result.restarts, ok ? "ok" : "FAILED");
    if (!g.common.out.empty()) {
      const fs::path out = g.common.out;
      prepare_output(out, g.common.force);
      std::ofstream csv(out / "gradcheck.csv");
      csv << "tensor,analytic,numeric,rel_error,finite\n";
      char line[256];
      for (const auto& t : result.tensors) {
        std::snprintf(line, sizeof line, "%s,%.17g,%.17g,%.17g,%d\n", t.parameter.c_str(), t.analytic, t.numeric,
                      t.rel_error, t.finite ? 1 : 0);
        csv << line;
      }
      write_manifest(out, "gradcheck", s, g.common);
    }
    return ok ? 0 : 1;
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-space text-to-video retrieval with partial de-correlation"};
  app.require_subcommand(1);

  GenData gen;
  Train train;
  Eval eval, diag;
  GradCheck grad;
  Settings s_gen(&app), s_train(&app), s_eval(&app), s_diag(&app), s_grad(&app);
  std::function<int()> run_gen, run_train, run_eval, run_diag, run_grad;
  setup_gen_data(app, gen, s_gen, run_gen);
  setup_train(app, train, s_train, run_train);
  setup_eval(app, "eval", "score a split and write mAP and precision@k reports", eval, s_eval, run_eval, false);
  setup_eval(app, "diagnose", "inter-space IoU of per-space top-k rankings", diag, s_diag, run_diag, true);
  setup_gradcheck(app, grad, s_grad, run_grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "gen-data") return run_gen();
    if (name == "train") return run_train();
    if (name == "eval") return run_eval();
    if (name == "diagnose") return run_diag();
    return run_grad();
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
