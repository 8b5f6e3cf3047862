#include "lpd/synthetic.hpp"
#include "lpd/trainer.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace lpd;

namespace {

const Dataset& small_dataset() {
  static const Dataset ds = generate_synthetic(testing::small_synthetic(), 4);
  return ds;
}

TrainingConfig small_config() {
  TrainingConfig c;
  c.batch_size = 16;
  c.initial_lr = 3e-3;
  c.common_dim = 12;
  c.max_epochs = 4;
  c.patience = 10;
  c.eval_depth = 100;
  c.seed = 1;
  c.loss.dcl_weight = 0.3;
  return c;
}

// No weight can exceed 1, so a strict gate at 1 closes every space; with DcL off the loss is 0.
TrainingConfig zero_loss_config() {
  auto c = small_config();
  c.loss.dcl_mode = DclMode::kOff;
  c.loss.gate_threshold = 1.0;
  c.loss.gate_comparison = GateComparison::kGreater;
  return c;
}

}  // namespace

TEST_CASE("rmsprop update follows the recurrence") {
  std::vector<double> theta{1.0, -2.0}, acc{0.0, 4.0};
  const std::vector<double> g{0.5, -1.0};
  rmsprop_update(theta, acc, g, 0.1, 0.9, 1e-8);
  CHECK(acc[0] == doctest::Approx(0.025));
  CHECK(acc[1] == doctest::Approx(3.7));
  CHECK(theta[0] == doctest::Approx(1.0 - 0.1 * 0.5 / std::sqrt(0.025 + 1e-8)));
  CHECK(theta[1] == doctest::Approx(-2.0 + 0.1 / std::sqrt(3.7 + 1e-8)));
}

TEST_CASE("training config validation") {
  TrainingConfig c;
  c.validate();
  c.lr_decay = 1.5;
  CHECK_THROWS_AS(c.validate(), TrainingError);
  c = TrainingConfig{};
  c.patience = 0;
  CHECK_THROWS_AS(c.validate(), TrainingError);
  c = TrainingConfig{};
  c.batch_size = 3;
  CHECK_THROWS_AS(c.validate(), LossError);
}

TEST_CASE("max epochs zero returns the initialized model with an empty log") {
  auto c = small_config();
  c.max_epochs = 0;
  const auto r = train(small_dataset(), c);
  CHECK(r.state.telemetry.empty());
  const auto init = ModelParams::initialize(model_dims(small_dataset(), c.common_dim), c.topology,
                                            derive_seed(c.seed, 101));
  CHECK(r.best_params.flatten() == init.flatten());
  CHECK(r.state.step == 0);
}

TEST_CASE("learning rate decays per epoch") {
  auto c = small_config();
  c.initial_lr = 1e-4;
  std::vector<double> lrs;
  TrainOptions opt;
  opt.on_epoch = [&](const TelemetryRow& row) { lrs.push_back(row.lr); };
  train(small_dataset(), c, opt);
  REQUIRE(lrs.size() == 5);
  for (std::size_t e = 0; e < lrs.size(); ++e) {
    CHECK(std::abs(lrs[e] - 1e-4 * std::pow(0.99, static_cast<double>(e))) <= 1e-15);
  }
}

TEST_CASE("zero loss leaves parameters unchanged and stops after patience") {
  auto c = zero_loss_config();
  c.patience = 3;
  c.max_epochs = 20;
  const auto r = train(small_dataset(), c);
  const auto init = ModelParams::initialize(model_dims(small_dataset(), c.common_dim), c.topology,
                                            derive_seed(c.seed, 101));
  CHECK(r.state.params.flatten() == init.flatten());
  CHECK(r.early_stopped);
  CHECK(r.state.epoch == 3);
  CHECK(r.best_epoch == 0);
  for (const auto& row : r.state.telemetry) {
    if (row.itrl_total) CHECK(*row.itrl_total == 0.0);
  }
}

TEST_CASE("training is deterministic and persists its outputs") {
  testing::TempDir a("train"), b("train");
  const auto c = small_config();
  TrainOptions oa, ob;
  oa.out_dir = a.path();
  ob.out_dir = b.path();
  const auto ra = train(small_dataset(), c, oa);
  const auto rb = train(small_dataset(), c, ob);
  CHECK(ra.state.telemetry == rb.state.telemetry);
  CHECK(testing::read_file(a / "training.csv") == testing::read_file(b / "training.csv"));
  const auto best = testing::read_file(a / "best");
  REQUIRE_FALSE(best.empty());
  const auto ckpt = best.substr(0, best.size() - 1);
  CHECK(testing::read_file(a / ckpt) == testing::read_file(b / ckpt));
  CHECK(load_checkpoint(a / ckpt).flatten() == ra.best_params.flatten());
  CHECK(testing::read_file(a / "training.csv").rfind(std::string(kTelemetryHeader) + "\n", 0) == 0);
}

TEST_CASE("resuming from a saved state reproduces the telemetry bit-exactly") {
  const auto c = small_config();
  const auto full = train(small_dataset(), c);

  testing::TempDir dir("resume");
  auto first = c;
  first.max_epochs = 2;
  TrainOptions opt;
  opt.out_dir = dir.path();
  train(small_dataset(), first, opt);
  TrainOptions resume;
  resume.resume = load_state(dir / "state.bin");
  const auto rest = train(small_dataset(), c, resume);
  CHECK(rest.state.telemetry == full.state.telemetry);
  CHECK(rest.state.params.flatten() == full.state.params.flatten());
  CHECK(rest.best_epoch == full.best_epoch);
}

TEST_CASE("state serialization round trip") {
  const auto r = train(small_dataset(), small_config());
  std::stringstream buf;
  write_state(buf, r.state);
  const auto back = read_state(buf);
  CHECK(back.telemetry == r.state.telemetry);
  CHECK(back.accumulators == r.state.accumulators);
  CHECK(back.best_val_map == r.state.best_val_map);
  for (double a : back.accumulators) CHECK(a >= 0.0);
}

TEST_CASE("training improves on the initial model and stops early") {
  auto c = small_config();
  c.max_epochs = 60;
  c.patience = 3;
  const auto r = train(small_dataset(), c);
  CHECK(r.early_stopped);
  CHECK(r.state.epoch < c.max_epochs);
  REQUIRE(r.state.telemetry.front().val_map.has_value());
  CHECK(r.best_val_map > *r.state.telemetry.front().val_map);
}

TEST_CASE("parameter census is constant across training") {
  auto c = small_config();
  c.topology = Topology::kParallelHeads;
  const auto r = train(small_dataset(), c);
  CHECK(r.state.params.parameter_count() ==
        ModelParams::initialize(model_dims(small_dataset(), c.common_dim), c.topology, 0).parameter_count());
  CHECK(r.state.accumulators.size() == r.state.params.parameter_count());
}

TEST_CASE("too small a training split is an error") {
  auto c = small_config();
  c.batch_size = 1000;
  CHECK_THROWS(train(small_dataset(), c));
}

TEST_CASE("telemetry rows format as csv") {
  const TelemetryRow step{3, 1, 0.5, 0.25, 5, 1e-4, std::nullopt};
  CHECK(format_row(step) == "3,1,0.5,0.25,5,0.0001,");
  const TelemetryRow epoch{3, 1, std::nullopt, std::nullopt, std::nullopt, 0.5, 0.75};
  CHECK(format_row(epoch) == "3,1,,,,0.5,0.75");
}

TEST_CASE("gradcheck passes on both topologies") {
  for (auto topo : {Topology::kFeatureSpecific, Topology::kParallelHeads}) {
    for (auto mode : {DclMode::kOff, DclMode::kPartial}) {
      GradCheckConfig g;
      g.topology = topo;
      g.loss.dcl_mode = mode;
      g.seed = 3;
      const auto r = gradcheck(g);
      CHECK(r.passed(1e-4));
      CHECK(r.max_rel_error < 1e-4);
      CHECK_FALSE(r.tensors.empty());
    }
  }
}
