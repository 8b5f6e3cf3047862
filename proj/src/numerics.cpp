#include "lpd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lpd {

namespace {

void require_same_size(std::span<const double> x, std::span<const double> y, const char* what) {
  if (x.size() != y.size()) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
  }
}

}  // namespace

double cosine(std::span<const double> u, std::span<const double> v) {
  return cosine_with_grad(u, v).value;
}

ValueWithGrad cosine_with_grad(std::span<const double> u, std::span<const double> v) {
  require_same_size(u, v, "cosine");
  if (u.empty()) throw std::invalid_argument("cosine: empty vectors");
  const std::size_t n = u.size();
  ValueWithGrad out;
  out.grad_x.assign(n, 0.0);
  out.grad_y.assign(n, 0.0);

  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) return out;

  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  const double c = dot / (nu * nv);
  out.value = c;
  for (std::size_t i = 0; i < n; ++i) {
    out.grad_x[i] = v[i] / (nu * nv) - c * u[i] / uu;
    out.grad_y[i] = u[i] / (nu * nv) - c * v[i] / vv;
  }
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  return pearson_with_grad(x, y).value;
}

ValueWithGrad pearson_with_grad(std::span<const double> x, std::span<const double> y) {
  require_same_size(x, y, "pearson");
  if (x.size() < 2) throw std::invalid_argument("pearson: need at least 2 points");
  const std::size_t n = x.size();
  ValueWithGrad out;
  out.grad_x.assign(n, 0.0);
  out.grad_y.assign(n, 0.0);

  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);

  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = x[i] - mx, b = y[i] - my;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  if (saa == 0.0 || sbb == 0.0) return out;

  const double denom = std::sqrt(saa * sbb);
  const double r = sab / denom;
  out.value = r;
  // The mean-centering terms drop out because centered deviations sum to zero.
  for (std::size_t i = 0; i < n; ++i) {
    const double a = x[i] - mx, b = y[i] - my;
    out.grad_x[i] = b / denom - r * a / saa;
    out.grad_y[i] = a / denom - r * b / sbb;
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

std::size_t histogram_bin(double value, std::size_t bins) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw std::invalid_argument("histogram: value outside [0,1]");
  }
  const auto idx = static_cast<std::size_t>(value * static_cast<double>(bins));
  return std::min(idx, bins - 1);
}

std::vector<double> histogram_distribution(std::span<const double> values, std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
  if (values.empty()) throw std::invalid_argument("histogram: no values");
  std::vector<double> counts(bins, 0.0);
  for (double v : values) counts[histogram_bin(v, bins)] += 1.0;
  const double n = static_cast<double>(values.size());
  for (double& c : counts) c /= n;
  return counts;
}

double distribution_entropy(std::span<const double> probabilities, double eps) {
  double h = 0.0;
  for (double p : probabilities) h -= p * std::log(p + eps);
  return h;
}

double histogram_entropy(std::span<const double> values, std::size_t bins, double eps) {
  const auto p = histogram_distribution(values, bins);
  return distribution_entropy(p, eps);
}

RowNormalized normalize_rows(const Matrix& x) {
  RowNormalized out;
  out.norms = x.rowwise().norm();
  out.unit = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (out.norms[r] > 0.0) out.unit.row(r) /= out.norms[r];
  }
  return out;
}

Matrix normalize_rows_backward(const RowNormalized& fwd, const Matrix& grad_unit) {
  Matrix grad = Matrix::Zero(grad_unit.rows(), grad_unit.cols());
  for (Eigen::Index r = 0; r < grad_unit.rows(); ++r) {
    const double n = fwd.norms[r];
    if (n == 0.0) continue;
    const auto u = fwd.unit.row(r);
    const auto g = grad_unit.row(r);
    grad.row(r) = (g - g.dot(u) * u) / n;
  }
  return grad;
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / scale;
}

NumericGradient finite_difference_gradient(const std::function<double(std::span<const double>)>& loss,
                                           std::vector<double> params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_gradient: step must be positive");
  NumericGradient out;
  out.values.assign(params.size(), 0.0);
  out.finite.assign(params.size(), true);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double plus = loss(params);
    params[i] = saved - step;
    const double minus = loss(params);
    params[i] = saved;
    const double g = (plus - minus) / (2.0 * step);
    out.finite[i] = std::isfinite(g);
    out.values[i] = out.finite[i] ? g : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace lpd
