#pragma once

#include "lpd/feature_store.hpp"
#include "lpd/losses.hpp"
#include "lpd/model.hpp"
#include "lpd/retrieval_eval.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpd {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingConfig {
  std::size_t batch_size = 128;
  double initial_lr = 1e-4;
  double lr_decay = 0.99;          // per epoch
  double rmsprop_smoothing = 0.9;
  double rmsprop_eps = 1e-8;
  std::size_t patience = 10;       // epochs without validation improvement
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  std::size_t common_dim = 512;
  Topology topology = Topology::kFeatureSpecific;
  LossConfig loss;
  std::size_t eval_depth = 1000;
  std::size_t threads = 1;

  void validate() const;
};

/// One CSV row. Step rows carry the loss terms; epoch rows carry validation mAP.
struct TelemetryRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::optional<double> itrl_total;
  std::optional<double> dcl;
  std::optional<std::uint64_t> gates;
  double lr = 0.0;
  std::optional<double> val_map;

  bool operator==(const TelemetryRow&) const = default;
};

inline constexpr const char* kTelemetryHeader = "step,epoch,itrl_total,dcl,gates,lr,val_mAP";
std::string format_row(const TelemetryRow& row);
void write_training_log(const std::filesystem::path& path, const std::vector<TelemetryRow>& rows);

struct TrainingState {
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;
  double lr = 0.0;
  ModelParams params;
  std::vector<double> accumulators;
  ModelParams best_params;
  double best_val_map = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_since_improvement = 0;
  bool stopped = false;
  std::vector<TelemetryRow> telemetry;
};

void write_state(std::ostream& out, const TrainingState& state);
TrainingState read_state(std::istream& in);
void save_state(const std::filesystem::path& path, const TrainingState& state);
TrainingState load_state(const std::filesystem::path& path);

/// In-place RMSProp: acc <- rho acc + (1 - rho) g^2; theta <- theta - lr g / sqrt(acc + eps).
void rmsprop_update(std::span<double> params, std::span<double> accumulators, std::span<const double> grads,
                    double lr, double smoothing, double eps);

ModelDims model_dims(const Dataset& dataset, std::size_t common_dim);

/// Scores a val/test split's queries against its collection and evaluates.
EvalReport evaluate_split(const ModelParams& params, const Dataset& dataset, Split split, const EvalOptions& options,
                          std::size_t threads = 1);

struct TrainOptions {
  /// When set: training.csv, state.bin, checkpoint files and the `best` pointer go here.
  std::optional<std::filesystem::path> out_dir;
  /// Continue from a saved state instead of initializing.
  std::optional<TrainingState> resume;
  std::function<void(const TelemetryRow&)> on_epoch;
};

struct TrainResult {
  TrainingState state;
  ModelParams best_params;
  double best_val_map = 0.0;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

/// Epoch 0 evaluates the initialized model; each later epoch runs one pass of
/// batches, decays the learning rate, evaluates validation mAP and checkpoints on
/// improvement. Deterministic for a fixed config and dataset.
TrainResult train(const Dataset& dataset, const TrainingConfig& config, const TrainOptions& options = {});

/// Loss and gradient of a single batch, shared by the training step and gradcheck.
struct StepResult {
  LossResult loss;
  ModelParams grad;
};
StepResult loss_and_gradient(const ModelParams& params, std::span<const Matrix> text_features,
                             std::span<const Matrix> video_features, const LossConfig& config,
                             const std::vector<bool>* frozen_gates = nullptr);

struct GradCheckConfig {
  ModelDims dims{{5, 4}, {3, 6, 4}, 8};
  std::size_t batch_size = 6;
  Topology topology = Topology::kFeatureSpecific;
  LossConfig loss;
  std::uint64_t seed = 0;
  double step = 1e-5;
  /// Instances within this distance of a hinge or argmax kink are redrawn.
  double kink_tolerance = 1e-4;
  std::size_t max_restarts = 50;
};

struct GradCheckResult {
  std::vector<GradCheckReport> tensors;  // worst coordinate per parameter tensor
  double max_rel_error = 0.0;
  std::size_t restarts = 0;
  bool passed(double tolerance = 1e-4) const;
};

/// Analytic gradient of total_loss against central differences for every scalar parameter
/// of a random tiny model on a random batch. Gates are frozen at the unperturbed point.
GradCheckResult gradcheck(const GradCheckConfig& config);

}  // namespace lpd
