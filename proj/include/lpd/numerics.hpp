#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace lpd {

// Row-major so that row i of a similarity matrix is one text's scores over the batch.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct ValueWithGrad {
  double value = 0.0;
  std::vector<double> grad_x;
  std::vector<double> grad_y;
};

/// Cosine similarity. A zero-norm input yields 0.
double cosine(std::span<const double> u, std::span<const double> v);
ValueWithGrad cosine_with_grad(std::span<const double> u, std::span<const double> v);

/// Sample Pearson correlation. Zero variance in either input yields 0 with zero gradient.
double pearson(std::span<const double> x, std::span<const double> y);
ValueWithGrad pearson_with_grad(std::span<const double> x, std::span<const double> y);

/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

inline constexpr std::size_t kDefaultEntropyBins = 100;
inline constexpr double kDefaultEntropyEps = 1e-10;

/// Bin index for a value in [0,1]; 1.0 lands in the last bin.
std::size_t histogram_bin(double value, std::size_t bins);

/// Frequency distribution of values in [0,1] over `bins` equal-width bins.
std::vector<double> histogram_distribution(std::span<const double> values, std::size_t bins);

/// -sum_j P_j ln(P_j + eps) over the bin-frequency distribution of `values`.
double histogram_entropy(std::span<const double> values, std::size_t bins = kDefaultEntropyBins,
                         double eps = kDefaultEntropyEps);

/// Same as histogram_entropy but starting from an already-normalized distribution.
double distribution_entropy(std::span<const double> probabilities, double eps = kDefaultEntropyEps);

// Row-wise L2 normalization used by every cosine-similarity matrix in the model.
// Rows with zero norm stay zero and receive zero gradient.
struct RowNormalized {
  Matrix unit;
  Vector norms;
};
RowNormalized normalize_rows(const Matrix& x);
Matrix normalize_rows_backward(const RowNormalized& fwd, const Matrix& grad_unit);

struct GradCheckReport {
  std::string parameter;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool finite = true;
};

/// |a - n| / max(1, |a|, |n|)
double relative_error(double analytic, double numeric);

struct NumericGradient {
  std::vector<double> values;
  std::vector<bool> finite;
};

/// Central differences (f(p+h) - f(p-h)) / 2h for every coordinate of `params`.
/// `params` is restored before returning.
NumericGradient finite_difference_gradient(const std::function<double(std::span<const double>)>& loss,
                                           std::vector<double> params, double step);

}  // namespace lpd
