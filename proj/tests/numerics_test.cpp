#include "lpd/numerics.hpp"
#include "lpd/random.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

using namespace lpd;

namespace {

// Central-difference check of an analytic (grad_x, grad_y) pair.
void check_pair_gradient(double (*f)(std::span<const double>, std::span<const double>), const ValueWithGrad& g,
                         std::vector<double> x, std::vector<double> y) {
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    CHECK(g.grad_x[i] == doctest::Approx((f(xp, y) - f(xm, y)) / (2 * h)).epsilon(1e-6));
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto yp = y, ym = y;
    yp[i] += h;
    ym[i] -= h;
    CHECK(g.grad_y[i] == doctest::Approx((f(x, yp) - f(x, ym)) / (2 * h)).epsilon(1e-6));
  }
}

}  // namespace

TEST_CASE("cosine examples") {
  CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{1, 0}) == doctest::Approx(1.0));
  CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == doctest::Approx(0.0));
  CHECK(cosine(std::vector<double>{1, 2}, std::vector<double>{2, 1}) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("cosine of a zero vector is zero with zero gradient") {
  const auto g = cosine_with_grad(std::vector<double>{0, 0, 0}, std::vector<double>{1, 2, 3});
  CHECK(g.value == 0.0);
  for (double v : g.grad_x) CHECK(v == 0.0);
  for (double v : g.grad_y) CHECK(v == 0.0);
}

TEST_CASE("cosine gradient matches finite differences") {
  const std::vector<double> x{0.3, -1.2, 0.7}, y{1.1, 0.4, -0.5};
  check_pair_gradient(&cosine, cosine_with_grad(x, y), x, y);
}

TEST_CASE("cosine rejects mismatched lengths") {
  CHECK_THROWS_AS(cosine(std::vector<double>{1, 2}, std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("pearson examples") {
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0));
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(std::abs(pearson(std::vector<double>{1, 2, 4}, std::vector<double>{1, 3, 5}) - 0.9820) < 1e-4);
}

TEST_CASE("pearson with zero variance is zero with zero gradient") {
  const auto g = pearson_with_grad(std::vector<double>{2, 2, 2}, std::vector<double>{1, 5, 3});
  CHECK(g.value == 0.0);
  for (double v : g.grad_x) CHECK(v == 0.0);
  for (double v : g.grad_y) CHECK(v == 0.0);
}

TEST_CASE("pearson gradient matches finite differences") {
  const std::vector<double> x{0.3, -1.2, 0.7, 2.0}, y{1.1, 0.4, -0.5, 0.2};
  check_pair_gradient(&pearson, pearson_with_grad(x, y), x, y);
}

TEST_CASE("pearson stays inside [-1, 1] and is symmetric") {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> x(7), y(7);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    const double r = pearson(x, y);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    CHECK(r == doctest::Approx(pearson(y, x)).epsilon(1e-14));
  }
}

TEST_CASE("softmax examples") {
  const auto half = softmax(std::vector<double>{0, 0});
  CHECK(half[0] == doctest::Approx(0.5));
  CHECK(half[1] == doctest::Approx(0.5));
  for (double c : {-1000.0, 0.0, 3.5, 1e6}) CHECK(softmax(std::vector<double>{c})[0] == 1.0);
  const auto w = softmax(std::vector<double>{0.99989, 0});
  CHECK(std::abs(w[0] - 0.7310) < 1e-3);
  CHECK(std::abs(w[1] - 0.2690) < 1e-3);
}

TEST_CASE("softmax is stable for large logits and sums to one") {
  const auto w = softmax(std::vector<double>{1000, 999, -1000});
  CHECK(std::isfinite(w[0]));
  CHECK(w[0] + w[1] + w[2] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w[0] / w[1] == doctest::Approx(std::exp(1.0)));
  CHECK_THROWS(softmax(std::vector<double>{}));
}

TEST_CASE("histogram entropy examples") {
  std::vector<double> uniform;
  for (int i = 0; i < 100; ++i) uniform.push_back((i + 0.5) / 100.0);
  CHECK(std::abs(histogram_entropy(uniform) - std::log(100.0)) < 1e-3);

  const std::vector<double> one_bin(50, 0.42);
  CHECK(histogram_entropy(one_bin) <= 1e-9);

  std::vector<double> two_bins(10, 0.1);
  two_bins.resize(20, 0.9);
  CHECK(std::abs(histogram_entropy(two_bins) - std::log(2.0)) < 1e-3);
}

TEST_CASE("histogram bins edges") {
  CHECK(histogram_bin(0.0, 100) == 0);
  CHECK(histogram_bin(0.999, 100) == 99);
  CHECK(histogram_bin(1.0, 100) == 99);
  CHECK(histogram_bin(0.5, 100) == 50);
  CHECK_THROWS(histogram_bin(1.5, 100));
  CHECK_THROWS(histogram_bin(-0.1, 100));
  CHECK_THROWS(histogram_bin(std::numeric_limits<double>::quiet_NaN(), 100));
}

TEST_CASE("distribution entropy is nonnegative and maximal for the uniform distribution") {
  Rng rng(5);
  const double max = distribution_entropy(std::vector<double>(100, 0.01));
  for (int t = 0; t < 50; ++t) {
    std::vector<double> p(100);
    double sum = 0;
    for (auto& v : p) sum += v = rng.uniform();
    for (auto& v : p) v /= sum;
    const double h = distribution_entropy(p);
    CHECK(h >= 0.0);
    CHECK(h <= max + 1e-12);
  }
}

TEST_CASE("row normalization backward matches finite differences") {
  Rng rng(3);
  Matrix x(3, 4), g(3, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = rng.normal();
    g.data()[i] = rng.normal();
  }
  x.row(1).setZero();
  const auto fwd = normalize_rows(x);
  CHECK(fwd.unit.row(0).norm() == doctest::Approx(1.0));
  CHECK(fwd.unit.row(1).norm() == 0.0);
  const Matrix analytic = normalize_rows_backward(fwd, g);
  CHECK(analytic.row(1).norm() == 0.0);
  const double h = 1e-6;
  for (Eigen::Index i : {0, 2}) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      Matrix xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      const double numeric =
          (normalize_rows(xp).unit.cwiseProduct(g).sum() - normalize_rows(xm).unit.cwiseProduct(g).sum()) / (2 * h);
      CHECK(analytic(i, j) == doctest::Approx(numeric).epsilon(1e-6));
    }
  }
}

TEST_CASE("finite difference gradient examples") {
  const auto square = [](std::span<const double> p) { return p[0] * p[0]; };
  const auto g = finite_difference_gradient(square, {3.0}, 1e-4);
  CHECK(std::abs(g.values[0] - 6.0) < 1e-6);
  CHECK(g.finite[0]);

  const auto constant = [](std::span<const double>) { return 4.2; };
  const auto c = finite_difference_gradient(constant, {1.0, -2.0}, 1e-4);
  CHECK(c.values[0] == 0.0);
  CHECK(c.values[1] == 0.0);
}

TEST_CASE("finite difference gradient reports non-finite losses per parameter") {
  const auto f = [](std::span<const double> p) { return p[1] > 0.5 ? std::log(-1.0) : p[0]; };
  const auto g = finite_difference_gradient(f, {1.0, 0.5}, 1e-4);
  CHECK(g.finite[0]);
  CHECK(g.values[0] == doctest::Approx(1.0));
  CHECK_FALSE(g.finite[1]);
}

TEST_CASE("relative error uses a unit floor") {
  CHECK(relative_error(1e-9, 2e-9) == doctest::Approx(1e-9));
  CHECK(relative_error(100.0, 101.0) == doctest::Approx(1.0 / 101.0));
}

TEST_CASE("rng is reproducible and derive_seed separates streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
}
