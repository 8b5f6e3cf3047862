#include "lpd/losses.hpp"
#include "lpd/random.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace lpd;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index n) {
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

// Naive per-row DcL: copy each row's kept entries into fresh vectors and correlate.
double naive_dcl(const Matrix& m, const Matrix& n, bool drop_diagonal) {
  double total = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> x, y;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (drop_diagonal && i == j) continue;
      x.push_back(m(i, j));
      y.push_back(n(i, j));
    }
    double mx = 0, my = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      mx += x[k];
      my += y[k];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(y.size());
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      sxy += (x[k] - mx) * (y[k] - my);
      sxx += (x[k] - mx) * (x[k] - mx);
      syy += (y[k] - my) * (y[k] - my);
    }
    if (sxx > 0 && syy > 0) total += std::abs(sxy / std::sqrt(sxx * syy));
  }
  return total / static_cast<double>(m.rows());
}

Matrix row_matrix(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

}  // namespace

TEST_CASE("itrl examples") {
  // Row 0: positive 0.5 with negatives 0.6 and 0.3.
  const auto a = itrl(row_matrix({{0.5, 0.6, 0.3}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}), 0.2);
  CHECK(a.row_losses[0] == doctest::Approx(0.3));
  CHECK(a.hardest_negatives[0] == 1);
  CHECK(a.row_losses[1] == 0.0);
  CHECK(a.mean == doctest::Approx(0.1));

  const auto tie = itrl(row_matrix({{0.5, 0.5}, {0.0, 1.0}}), 0.2);
  CHECK(tie.row_losses[0] == doctest::Approx(0.2));

  const auto satisfied = itrl(row_matrix({{0.9, 0.1, 0.2}, {0.1, 0.9, 0.2}, {0.3, 0.1, 0.9}}), 0.2);
  CHECK(satisfied.mean == 0.0);
  CHECK(satisfied.grad.isZero(0.0));
}

TEST_CASE("itrl ties go to the lowest column") {
  const auto r = itrl(row_matrix({{0.1, 0.7, 0.7, 0.7}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}), 0.2);
  CHECK(r.hardest_negatives[0] == 1);
  CHECK(r.grad(0, 1) > 0.0);
  CHECK(r.grad(0, 2) == 0.0);
}

TEST_CASE("itrl ignores non-hardest negatives") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    Matrix m = random_matrix(rng, 6);
    const auto base = itrl(m, 0.2);
    Matrix moved = m;
    for (Eigen::Index i = 0; i < 6; ++i) {
      const auto h = static_cast<Eigen::Index>(base.hardest_negatives[static_cast<std::size_t>(i)]);
      for (Eigen::Index j = 0; j < 6; ++j) {
        if (j != i && j != h) moved(i, j) = m(i, h) - rng.uniform(0.01, 1.0);
      }
    }
    const auto after = itrl(moved, 0.2);
    CHECK(after.mean == base.mean);
    CHECK(after.grad == base.grad);
    CHECK(after.mean >= 0.0);
  }
}

TEST_CASE("dcl examples") {
  Rng rng(1);
  const Matrix m = random_matrix(rng, 6);
  CHECK(dcl_pair(m, m, DclMode::kPartial).value == doctest::Approx(1.0));
  CHECK(dcl_pair(m, m, DclMode::kFull).value == doctest::Approx(1.0));
  CHECK(dcl_pair(m, m, DclMode::kOff).value == 0.0);

  // Every row's negatives run 0.1, 0.2, 0.3 in one space and 0.3, 0.2, 0.1 in the other.
  Matrix a(4, 4), b(4, 4);
  for (Eigen::Index i = 0; i < 4; ++i) {
    double k = 0;
    for (Eigen::Index j = 0; j < 4; ++j) {
      if (j == i) {
        a(i, j) = 5.0;
        b(i, j) = -7.0;
        continue;
      }
      k += 1;
      a(i, j) = 0.1 * k;
      b(i, j) = 0.4 - 0.1 * k;
    }
  }
  CHECK(dcl_pair(a, b, DclMode::kPartial).value == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dcl matches the naive per-row oracle") {
  Rng rng(17);
  for (int t = 0; t < 100; ++t) {
    const Matrix m = random_matrix(rng, 8), n = random_matrix(rng, 8);
    CHECK(std::abs(dcl_pair(m, n, DclMode::kPartial).value - naive_dcl(m, n, true)) < 1e-10);
    CHECK(std::abs(dcl_pair(m, n, DclMode::kFull).value - naive_dcl(m, n, false)) < 1e-10);
  }
}

TEST_CASE("dcl is symmetric and bounded") {
  Rng rng(19);
  for (int t = 0; t < 50; ++t) {
    const Matrix m = random_matrix(rng, 7), n = random_matrix(rng, 7);
    const double v = dcl_pair(m, n, DclMode::kPartial).value;
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == doctest::Approx(dcl_pair(n, m, DclMode::kPartial).value).epsilon(1e-14));
  }
}

TEST_CASE("partial dcl leaves positives without gradient") {
  Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    const auto r = dcl_pair(random_matrix(rng, 8), random_matrix(rng, 8), DclMode::kPartial);
    for (Eigen::Index i = 0; i < 8; ++i) {
      CHECK(r.grad_m(i, i) == 0.0);
      CHECK(r.grad_n(i, i) == 0.0);
    }
  }
}

TEST_CASE("dcl gradient matches finite differences") {
  Rng rng(29);
  for (auto mode : {DclMode::kPartial, DclMode::kFull}) {
    const Matrix m = random_matrix(rng, 6), n = random_matrix(rng, 6);
    const auto r = dcl_pair(m, n, mode);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < 6; ++i) {
      for (Eigen::Index j = 0; j < 6; ++j) {
        Matrix mp = m, mm = m;
        mp(i, j) += h;
        mm(i, j) -= h;
        const double numeric = (dcl_pair(mp, n, mode).value - dcl_pair(mm, n, mode).value) / (2 * h);
        CHECK(relative_error(r.grad_m(i, j), numeric) < 1e-7);
      }
    }
  }
}

TEST_CASE("dcl rejects batches below four") {
  Rng rng(2);
  CHECK_THROWS_AS(dcl_pair(random_matrix(rng, 3), random_matrix(rng, 3), DclMode::kPartial), LossError);
  LossConfig cfg;
  CHECK_THROWS_AS(cfg.validate(3), LossError);
  cfg.dcl_mode = DclMode::kOff;
  cfg.validate(3);
}

TEST_CASE("dcl_all averages over unordered pairs") {
  Rng rng(31);
  const Matrix m = random_matrix(rng, 5);
  const std::vector<Matrix> same{m, m};
  CHECK(dcl_all(same, DclMode::kPartial).value == doctest::Approx(1.0));

  // Spaces 0 and 1 correlate perfectly; space 2 has rows orthogonal to both after centering.
  Matrix a(4, 4), c(4, 4);
  for (Eigen::Index i = 0; i < 4; ++i) {
    a.row(i) << 1, 2, 3, 4;
    c.row(i) << 1, -1, -1, 1;
  }
  const std::vector<Matrix> three{a, a, c};
  const auto r = dcl_all(three, DclMode::kFull);
  CHECK(r.pairs == 3);
  CHECK(r.value == doctest::Approx(1.0 / 3.0));

  std::vector<Matrix> nine(9, m);
  CHECK(dcl_all(nine, DclMode::kPartial).pairs == 36);

  const std::vector<Matrix> single{m};
  const auto lone = dcl_all(single, DclMode::kPartial);
  CHECK(lone.value == 0.0);
  CHECK_FALSE(lone.warning.empty());
}

TEST_CASE("entropy weights examples") {
  LossConfig cfg;
  const std::vector<double> h{4.6, 0.0};
  const auto r = weights_from_entropies(h, cfg);
  CHECK(std::abs(r.weights[0] - 0.731) < 1e-3);
  CHECK(std::abs(r.weights[1] - 0.269) < 1e-3);
  CHECK(r.gates == std::vector<bool>{true, false});
  CHECK(r.gate_mask() == 1u);

  const std::vector<double> equal(5, 2.0);
  const auto ge = weights_from_entropies(equal, cfg);
  for (double w : ge.weights) CHECK(w == doctest::Approx(0.2));
  CHECK(ge.gates == std::vector<bool>(5, true));
  cfg.gate_comparison = GateComparison::kGreater;
  // Equal weights sit exactly on the threshold, so the strict gate closes every space.
  CHECK(weights_from_entropies(equal, cfg).gates == std::vector<bool>(5, false));
}

TEST_CASE("entropy weights sum to one and are permutation equivariant") {
  LossConfig cfg;
  Rng rng(37);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> h(6);
    for (auto& v : h) v = rng.uniform(0.0, 5.0);
    const auto w = weights_from_entropies(h, cfg).weights;
    double sum = 0;
    for (double v : w) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-12);
    std::vector<double> rev(h.rbegin(), h.rend());
    const auto wr = weights_from_entropies(rev, cfg).weights;
    for (std::size_t i = 0; i < 6; ++i) CHECK(wr[i] == doctest::Approx(w[5 - i]).epsilon(1e-15));
  }
}

TEST_CASE("embedding entropy examples") {
  CHECK(embedding_entropy(Matrix::Constant(6, 4, 0.3), 100, 1e-10) <= 1e-9);

  // Each column spreads 100 rows evenly over [0,1] after min-max scaling.
  Matrix spread(100, 3);
  for (Eigen::Index r = 0; r < 100; ++r) spread.row(r).setConstant(static_cast<double>(r) * 2.5 - 7.0);
  CHECK(std::abs(embedding_entropy(spread, 100, 1e-10) - std::log(100.0)) < 1e-3);
}

TEST_CASE("identical embedding distributions gate every space") {
  Rng rng(41);
  Matrix e = random_matrix(rng, 8);
  const std::vector<const Matrix*> sources{&e, &e, &e};
  const auto r = entropy_weights(sources, LossConfig{});
  for (double w : r.weights) CHECK(w == doctest::Approx(1.0 / 3.0));
  CHECK(r.gates == std::vector<bool>(3, true));
}

TEST_CASE("total loss arms") {
  Rng rng(43);
  std::vector<Matrix> spaces{random_matrix(rng, 6), random_matrix(rng, 6), random_matrix(rng, 6)};
  Matrix e0 = random_matrix(rng, 6), e1 = Matrix::Constant(6, 6, 1.0), e2 = random_matrix(rng, 6);
  const std::vector<const Matrix*> sources{&e0, &e1, &e2};

  LossConfig plain;
  plain.dcl_mode = DclMode::kOff;
  plain.mtrl_mode = MtrlMode::kPlainSum;
  const auto p = total_loss(spaces, sources, plain);
  double sum = 0;
  for (const auto& s : spaces) sum += itrl(s, 0.2).mean;
  CHECK(p.total == doctest::Approx(sum).epsilon(1e-15));
  CHECK(p.dcl == 0.0);

  // Gating only masks terms: the gated sum equals the masked plain sum.
  LossConfig ef;
  ef.dcl_mode = DclMode::kOff;
  const auto g = total_loss(spaces, sources, ef);
  double masked = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(g.itrl[s] == p.itrl[s]);
    if (g.entropy.gates[s]) masked += p.itrl[s];
  }
  CHECK(g.mtrl == doctest::Approx(masked).epsilon(1e-15));
  CHECK_FALSE(g.entropy.gates[1]);

  LossConfig full = ef;
  full.dcl_mode = DclMode::kPartial;
  full.dcl_weight = 0.5;
  const auto d = total_loss(spaces, sources, full);
  CHECK(d.total == doctest::Approx(g.mtrl + 0.5 * dcl_all(spaces, DclMode::kPartial).value).epsilon(1e-14));
  // Closed gates still receive the de-correlation gradient.
  CHECK_FALSE(d.grads[1].isZero(0.0));
}

TEST_CASE("strict gate with equal entropies zeroes the ranking loss") {
  Rng rng(47);
  std::vector<Matrix> spaces{random_matrix(rng, 5), random_matrix(rng, 5)};
  Matrix e = random_matrix(rng, 5);
  const std::vector<const Matrix*> sources{&e, &e};
  LossConfig cfg;
  cfg.dcl_mode = DclMode::kOff;
  cfg.gate_comparison = GateComparison::kGreater;
  const auto r = total_loss(spaces, sources, cfg);
  CHECK(r.mtrl == 0.0);
  CHECK(r.total == 0.0);
  for (const auto& g : r.grads) CHECK(g.isZero(0.0));
}

TEST_CASE("loss mode names parse") {
  CHECK(parse_dcl_mode("partial") == DclMode::kPartial);
  CHECK(parse_mtrl_mode("plain") == MtrlMode::kPlainSum);
  CHECK(parse_mtrl_mode("ef-gated") == MtrlMode::kEfGated);
  CHECK(parse_gate_comparison(">") == GateComparison::kGreater);
  CHECK_THROWS_AS(parse_dcl_mode("half"), LossError);
}
