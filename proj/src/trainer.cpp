#include "lpd/trainer.hpp"

#include "lpd/random.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace fs = std::filesystem;

namespace lpd {

namespace {

enum Stream : std::uint64_t { kInit = 101, kBatches = 102 };

constexpr char kStateMagic[8] = {'L', 'P', 'D', 'S', 'T', 'A', 'T', 'E'};
constexpr std::uint32_t kStateVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  if constexpr (std::is_same_v<T, double>) {
    put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(value));
  } else {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
  }
}

template <typename T>
T get(std::istream& in) {
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(get<std::uint64_t>(in));
  } else {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw TrainingError("training state: truncated");
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
    return value;
  }
}

template <typename T>
void put_optional(std::ostream& out, const std::optional<T>& v) {
  put<std::uint8_t>(out, v ? 1 : 0);
  put<T>(out, v.value_or(T{}));
}

template <typename T>
std::optional<T> get_optional(std::istream& in) {
  const bool present = get<std::uint8_t>(in) != 0;
  const T value = get<T>(in);
  return present ? std::optional<T>(value) : std::nullopt;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<const Matrix*> entropy_sources(const ModelParams& params, const ForwardPass& fwd) {
  std::vector<const Matrix*> sources;
  for (std::size_t s = 0; s < params.dims.spaces(); ++s) sources.push_back(&fwd.entropy_source(params, s));
  return sources;
}

void save_best_pointer(const fs::path& out_dir, const std::string& checkpoint_name) {
  std::ofstream out(out_dir / "best", std::ios::trunc);
  out << checkpoint_name << '\n';
}

}  // namespace

void TrainingConfig::validate() const {
  if (batch_size < 2) throw TrainingError("batch size must be >= 2");
  if (!(initial_lr > 0.0)) throw TrainingError("learning rate must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw TrainingError("lr decay must be in (0, 1]");
  if (!(rmsprop_smoothing >= 0.0 && rmsprop_smoothing < 1.0)) throw TrainingError("rmsprop smoothing must be in [0, 1)");
  if (!(rmsprop_eps > 0.0)) throw TrainingError("rmsprop eps must be > 0");
  if (patience < 1) throw TrainingError("patience must be >= 1");
  if (common_dim < 1) throw TrainingError("common dimension must be >= 1");
  if (eval_depth < 1) throw TrainingError("evaluation depth must be >= 1");
  loss.validate(batch_size);
}

std::string format_row(const TelemetryRow& row) {
  std::string s = std::to_string(row.step) + "," + std::to_string(row.epoch) + ",";
  if (row.itrl_total) s += format_double(*row.itrl_total);
  s += ",";
  if (row.dcl) s += format_double(*row.dcl);
  s += ",";
  if (row.gates) s += std::to_string(*row.gates);
  s += "," + format_double(row.lr) + ",";
  if (row.val_map) s += format_double(*row.val_map);
  return s;
}

void write_training_log(const fs::path& path, const std::vector<TelemetryRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw TrainingError("cannot write " + path.string());
  out << kTelemetryHeader << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
}

void write_state(std::ostream& out, const TrainingState& state) {
  out.write(kStateMagic, sizeof kStateMagic);
  put<std::uint32_t>(out, kStateVersion);
  put<std::uint64_t>(out, state.epoch);
  put<std::uint64_t>(out, state.step);
  put<double>(out, state.lr);
  put<double>(out, state.best_val_map);
  put<std::uint64_t>(out, state.best_epoch);
  put<std::uint64_t>(out, state.epochs_since_improvement);
  put<std::uint8_t>(out, state.stopped ? 1 : 0);
  write_params(out, state.params);
  write_params(out, state.best_params);
  put<std::uint64_t>(out, state.accumulators.size());
  for (double a : state.accumulators) put<double>(out, a);
  put<std::uint64_t>(out, state.telemetry.size());
  for (const auto& r : state.telemetry) {
    put<std::uint64_t>(out, r.step);
    put<std::uint64_t>(out, r.epoch);
    put_optional<double>(out, r.itrl_total);
    put_optional<double>(out, r.dcl);
    put_optional<std::uint64_t>(out, r.gates);
    put<double>(out, r.lr);
    put_optional<double>(out, r.val_map);
  }
  if (!out) throw TrainingError("training state: write failed");
}

TrainingState read_state(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kStateMagic, sizeof magic) != 0) throw TrainingError("training state: bad magic");
  if (get<std::uint32_t>(in) != kStateVersion) throw TrainingError("training state: unsupported version");
  TrainingState s;
  s.epoch = get<std::uint64_t>(in);
  s.step = get<std::uint64_t>(in);
  s.lr = get<double>(in);
  s.best_val_map = get<double>(in);
  s.best_epoch = get<std::uint64_t>(in);
  s.epochs_since_improvement = get<std::uint64_t>(in);
  s.stopped = get<std::uint8_t>(in) != 0;
  s.params = read_params(in);
  s.best_params = read_params(in);
  const auto n_acc = get<std::uint64_t>(in);
  if (n_acc != s.params.parameter_count()) throw TrainingError("training state: accumulator size mismatch");
  s.accumulators.resize(n_acc);
  for (auto& a : s.accumulators) a = get<double>(in);
  const auto rows = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < rows; ++i) {
    TelemetryRow r;
    r.step = get<std::uint64_t>(in);
    r.epoch = get<std::uint64_t>(in);
    r.itrl_total = get_optional<double>(in);
    r.dcl = get_optional<double>(in);
    r.gates = get_optional<std::uint64_t>(in);
    r.lr = get<double>(in);
    r.val_map = get_optional<double>(in);
    s.telemetry.push_back(r);
  }
  return s;
}

void save_state(const fs::path& path, const TrainingState& state) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TrainingError("cannot write " + path.string());
  write_state(out, state);
}

TrainingState load_state(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrainingError("cannot open " + path.string());
  return read_state(in);
}

void rmsprop_update(std::span<double> params, std::span<double> accumulators, std::span<const double> grads,
                    double lr, double smoothing, double eps) {
  if (params.size() != accumulators.size() || params.size() != grads.size()) {
    throw TrainingError("rmsprop: size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    accumulators[i] = smoothing * accumulators[i] + (1.0 - smoothing) * g * g;
    params[i] -= lr * g / std::sqrt(accumulators[i] + eps);
  }
}

ModelDims model_dims(const Dataset& dataset, std::size_t common_dim) {
  return ModelDims{dataset.text_dims(), dataset.video_dims(), common_dim};
}

EvalReport evaluate_split(const ModelParams& params, const Dataset& dataset, Split split, const EvalOptions& options,
                          std::size_t threads) {
  const auto& data = dataset.split(split);
  const auto queries = data.queries();
  std::vector<Matrix> query_features;
  for (const auto& t : dataset.text) query_features.push_back(t.gather_ids(queries));
  const auto scores = score_collection(params, query_features, dataset.video, data.collection, 4096, threads);
  return evaluate(scores.aggregate, scores.spaces, queries, data.collection, data.relevance, options);
}

StepResult loss_and_gradient(const ModelParams& params, std::span<const Matrix> text_features,
                             std::span<const Matrix> video_features, const LossConfig& config,
                             const std::vector<bool>* frozen_gates) {
  const auto fwd = forward(params, text_features, video_features);
  const auto sources = entropy_sources(params, fwd);
  StepResult out;
  out.loss = total_loss(fwd.similarities.spaces, sources, config, frozen_gates);
  out.grad = backward(params, fwd, text_features, video_features, out.loss.grads);
  return out;
}

TrainResult train(const Dataset& dataset, const TrainingConfig& config, const TrainOptions& options) {
  config.validate();
  if (dataset.val.relevance.empty()) throw TrainingError("validation split has no judged queries");
  const BatchSampler sampler(dataset.train, config.batch_size, derive_seed(config.seed, kBatches));
  TrainingState state;
  if (options.resume) {
    state = *options.resume;
    if (!(state.params.dims == model_dims(dataset, config.common_dim)) || state.params.topology != config.topology) {
      throw TrainingError("resume state does not match dataset dimensions or topology");
    }
  } else {
    state.params = ModelParams::initialize(model_dims(dataset, config.common_dim), config.topology,
                                           derive_seed(config.seed, kInit));
    state.best_params = state.params;
    state.accumulators.assign(state.params.parameter_count(), 0.0);
    state.lr = config.initial_lr;
  }

  const auto eval_val = [&](const ModelParams& p) {
    return evaluate_split(p, dataset, Split::kVal, EvalOptions{config.eval_depth, {}, 0}, config.threads)
        .mean_average_precision;
  };

  const auto checkpoint = [&](std::size_t epoch) {
    if (!options.out_dir) return;
    char name[64];
    std::snprintf(name, sizeof name, "checkpoints/epoch_%04zu.ckpt", epoch);
    save_checkpoint(*options.out_dir / name, state.best_params);
    save_best_pointer(*options.out_dir, name);
  };
  const auto persist = [&] {
    if (!options.out_dir) return;
    write_training_log(*options.out_dir / "training.csv", state.telemetry);
    save_state(*options.out_dir / "state.bin", state);
  };

  if (!options.resume && config.max_epochs > 0) {
    state.best_val_map = eval_val(state.params);
    state.best_epoch = 0;
    TelemetryRow row{state.step, 0, std::nullopt, std::nullopt, std::nullopt, state.lr, state.best_val_map};
    state.telemetry.push_back(row);
    checkpoint(0);
    persist();
    if (options.on_epoch) options.on_epoch(row);
  }

  std::vector<double> flat = state.params.flatten();
  while (!state.stopped && state.epoch < config.max_epochs) {
    const std::size_t epoch = state.epoch + 1;
    for (const auto& pairs : sampler.epoch_batches(epoch - 1)) {
      const auto batch = make_batch(dataset, pairs);
      const auto step = loss_and_gradient(state.params, batch.text, batch.video, config.loss);
      ++state.step;
      if (!std::isfinite(step.loss.total)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(state.step) + " (mtrl=" + format_double(step.loss.mtrl) +
                            ", dcl=" + format_double(step.loss.dcl) + ")");
      }
      const auto grad = step.grad.flatten();
      rmsprop_update(flat, state.accumulators, grad, state.lr, config.rmsprop_smoothing, config.rmsprop_eps);
      state.params.assign(flat);
      state.telemetry.push_back({state.step, epoch, step.loss.mtrl, step.loss.dcl, step.loss.entropy.gate_mask(),
                                 state.lr, std::nullopt});
    }
    state.epoch = epoch;
    state.lr = config.initial_lr * std::pow(config.lr_decay, static_cast<double>(epoch));

    const double val_map = eval_val(state.params);
    TelemetryRow row{state.step, epoch, std::nullopt, std::nullopt, std::nullopt, state.lr, val_map};
    state.telemetry.push_back(row);
    if (val_map > state.best_val_map) {
      state.best_val_map = val_map;
      state.best_epoch = epoch;
      state.best_params = state.params;
      state.epochs_since_improvement = 0;
      checkpoint(epoch);
    } else {
      ++state.epochs_since_improvement;
      if (state.epochs_since_improvement >= config.patience) state.stopped = true;
    }
    persist();
    if (options.on_epoch) options.on_epoch(row);
  }

  TrainResult result;
  result.best_params = state.best_params;
  result.best_val_map = state.best_val_map;
  result.best_epoch = state.best_epoch;
  result.early_stopped = state.stopped;
  result.state = std::move(state);
  return result;
}

bool GradCheckResult::passed(double tolerance) const {
  for (const auto& t : tensors) {
    if (!t.finite || !(t.rel_error < tolerance)) return false;
  }
  return true;
}

namespace {

// True when the instance sits within `tol` of a point where the loss is not differentiable:
// a hinge at exactly zero, a tie for the hardest negative, or a correlation crossing zero.
bool near_kink(std::span<const Matrix> spaces, const LossConfig& config, double tol) {
  for (const auto& s : spaces) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      double best = -1e300, second = -1e300;
      for (Eigen::Index j = 0; j < s.cols(); ++j) {
        if (j == i) continue;
        if (s(i, j) > best) {
          second = best;
          best = s(i, j);
        } else if (s(i, j) > second) {
          second = s(i, j);
        }
      }
      if (std::abs(config.margin + best - s(i, i)) < tol) return true;
      if (best - second < tol) return true;
    }
  }
  if (config.dcl_mode != DclMode::kOff) {
    for (std::size_t a = 0; a < spaces.size(); ++a) {
      for (std::size_t c = a + 1; c < spaces.size(); ++c) {
        // Any row with |r| ~ 0 puts the absolute value at its kink.
        const Eigen::Index b = spaces[a].rows();
        for (Eigen::Index i = 0; i < b; ++i) {
          std::vector<double> x, y;
          for (Eigen::Index j = 0; j < b; ++j) {
            if (config.dcl_mode == DclMode::kPartial && j == i) continue;
            x.push_back(spaces[a](i, j));
            y.push_back(spaces[c](i, j));
          }
          if (std::abs(pearson(x, y)) < tol) return true;
        }
      }
    }
  }
  return false;
}

}  // namespace

GradCheckResult gradcheck(const GradCheckConfig& config) {
  config.loss.validate(config.batch_size);
  GradCheckResult result;
  for (std::size_t attempt = 0; attempt <= config.max_restarts; ++attempt) {
    Rng rng(derive_seed(config.seed, 2 * attempt));
    std::vector<Matrix> text, video;
    const auto b = static_cast<Eigen::Index>(config.batch_size);
    for (auto d : config.dims.text_dims) {
      text.push_back(Matrix::NullaryExpr(b, static_cast<Eigen::Index>(d), [&] { return rng.normal(); }));
    }
    for (auto d : config.dims.video_dims) {
      video.push_back(Matrix::NullaryExpr(b, static_cast<Eigen::Index>(d), [&] { return rng.normal(); }));
    }
    auto params = ModelParams::initialize(config.dims, config.topology, derive_seed(config.seed, 2 * attempt + 1));

    const auto fwd = forward(params, text, video);
    const auto base = loss_and_gradient(params, text, video, config.loss);
    if (near_kink(fwd.similarities.spaces, config.loss, config.kink_tolerance)) {
      ++result.restarts;
      continue;
    }
    const auto gates = base.loss.entropy.gates;
    auto probe = params;
    const auto evaluator = [&](std::span<const double> flat) {
      probe.assign(flat);
      const auto f = forward(probe, text, video);
      const auto sources = entropy_sources(probe, f);
      return total_loss(f.similarities.spaces, sources, config.loss, &gates).total;
    };
    const auto numeric = finite_difference_gradient(evaluator, params.flatten(), config.step);

    std::size_t offset = 0;
    base.grad.for_each_tensor([&](const std::string& name, std::span<const double> analytic) {
      GradCheckReport worst{name, 0.0, 0.0, 0.0, true};
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double n = numeric.values[offset + i];
        const bool finite = numeric.finite[offset + i];
        const double err = finite ? relative_error(analytic[i], n) : INFINITY;
        if (!finite || err > worst.rel_error || i == 0) worst = {name, analytic[i], n, err, finite};
      }
      offset += analytic.size();
      result.max_rel_error = std::max(result.max_rel_error, worst.rel_error);
      result.tensors.push_back(worst);
    });
    return result;
  }
  throw TrainingError("gradcheck: every draw landed near a non-differentiable point");
}

}  // namespace lpd
