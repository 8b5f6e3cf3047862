#include "lpd/losses.hpp"

#include <algorithm>
#include <cmath>

namespace lpd {

std::string to_string(DclMode m) {
  switch (m) {
    case DclMode::kPartial: return "partial";
    case DclMode::kFull: return "full";
    case DclMode::kOff: return "off";
  }
  return "?";
}

std::string to_string(MtrlMode m) { return m == MtrlMode::kEfGated ? "ef" : "plain"; }
std::string to_string(GateComparison c) { return c == GateComparison::kGreaterEqual ? ">=" : ">"; }

DclMode parse_dcl_mode(const std::string& s) {
  if (s == "partial") return DclMode::kPartial;
  if (s == "full") return DclMode::kFull;
  if (s == "off") return DclMode::kOff;
  throw LossError("unknown dcl mode '" + s + "'");
}

MtrlMode parse_mtrl_mode(const std::string& s) {
  if (s == "ef" || s == "ef-gated") return MtrlMode::kEfGated;
  if (s == "plain" || s == "plain-sum") return MtrlMode::kPlainSum;
  throw LossError("unknown mtrl mode '" + s + "'");
}

GateComparison parse_gate_comparison(const std::string& s) {
  if (s == ">=" || s == "ge") return GateComparison::kGreaterEqual;
  if (s == ">" || s == "gt") return GateComparison::kGreater;
  throw LossError("unknown gate comparison '" + s + "'");
}

void LossConfig::validate(std::optional<std::size_t> batch_size) const {
  if (!(margin > 0.0)) throw LossError("margin must be > 0");
  if (entropy_bins < 2) throw LossError("entropy bins must be >= 2");
  if (!(entropy_eps > 0.0)) throw LossError("entropy eps must be > 0");
  if (!(dcl_weight >= 0.0)) throw LossError("dcl weight must be >= 0");
  if (batch_size && dcl_mode != DclMode::kOff && *batch_size < kMinDclBatch) {
    throw LossError("de-correlation loss needs batch size >= " + std::to_string(kMinDclBatch) + ", got " +
                    std::to_string(*batch_size));
  }
}

ItrlResult itrl(const Matrix& sims, double margin) {
  const Eigen::Index b = sims.rows();
  if (sims.cols() != b) throw LossError("itrl: similarity matrix must be square");
  if (b < 2) throw LossError("itrl: batch needs at least 2 pairs");
  ItrlResult out;
  out.row_losses.assign(static_cast<std::size_t>(b), 0.0);
  out.hardest_negatives.assign(static_cast<std::size_t>(b), 0);
  out.grad = Matrix::Zero(b, b);
  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    Eigen::Index hardest = i == 0 ? 1 : 0;
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j != i && sims(i, j) > sims(i, hardest)) hardest = j;
    }
    const double loss = std::max(0.0, margin + sims(i, hardest) - sims(i, i));
    out.row_losses[static_cast<std::size_t>(i)] = loss;
    out.hardest_negatives[static_cast<std::size_t>(i)] = static_cast<std::size_t>(hardest);
    total += loss;
    // At the kink (loss exactly 0) the subgradient is 0.
    if (loss > 0.0) {
      out.grad(i, hardest) += inv_b;
      out.grad(i, i) -= inv_b;
    }
  }
  out.mean = total * inv_b;
  return out;
}

DclPairResult dcl_pair(const Matrix& m, const Matrix& n, DclMode mode) {
  const Eigen::Index b = m.rows();
  if (m.cols() != b || n.rows() != b || n.cols() != b) throw LossError("dcl: matrices must be square and equal-sized");
  DclPairResult out;
  out.grad_m = Matrix::Zero(b, b);
  out.grad_n = Matrix::Zero(b, b);
  if (mode == DclMode::kOff) return out;
  if (static_cast<std::size_t>(b) < kMinDclBatch) {
    throw LossError("dcl: batch size " + std::to_string(b) + " below minimum " + std::to_string(kMinDclBatch));
  }

  // Z masks the positives out of the correlation in partial mode: masked entries are
  // excluded from the row statistics, not treated as zeros.
  Matrix mask = Matrix::Ones(b, b);
  if (mode == DclMode::kPartial) mask.diagonal().setZero();
  const Vector count = mask.rowwise().sum();

  const Vector mean_m = m.cwiseProduct(mask).rowwise().sum().cwiseQuotient(count);
  const Vector mean_n = n.cwiseProduct(mask).rowwise().sum().cwiseQuotient(count);
  const Matrix cm = (m.colwise() - mean_m).cwiseProduct(mask);
  const Matrix cn = (n.colwise() - mean_n).cwiseProduct(mask);
  const Vector sab = cm.cwiseProduct(cn).rowwise().sum();
  const Vector saa = cm.rowwise().squaredNorm();
  const Vector sbb = cn.rowwise().squaredNorm();

  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    if (saa[i] == 0.0 || sbb[i] == 0.0) continue;
    const double denom = std::sqrt(saa[i] * sbb[i]);
    const double r = sab[i] / denom;
    total += std::abs(r);
    // d|r| has subgradient 0 at r = 0.
    const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
    if (sign == 0.0) continue;
    const double scale = sign * inv_b;
    out.grad_m.row(i) = scale * (cn.row(i) / denom - (r / saa[i]) * cm.row(i));
    out.grad_n.row(i) = scale * (cm.row(i) / denom - (r / sbb[i]) * cn.row(i));
  }
  out.value = total * inv_b;
  return out;
}

DclResult dcl_all(std::span<const Matrix> spaces, DclMode mode) {
  DclResult out;
  for (const auto& s : spaces) out.grads.push_back(Matrix::Zero(s.rows(), s.cols()));
  if (mode == DclMode::kOff) return out;
  if (spaces.size() < 2) {
    out.warning = "de-correlation needs at least 2 spaces; contributing 0";
    return out;
  }
  const std::size_t pairs = spaces.size() * (spaces.size() - 1) / 2;
  const double inv_pairs = 1.0 / static_cast<double>(pairs);
  double total = 0.0;
  for (std::size_t a = 0; a < spaces.size(); ++a) {
    for (std::size_t c = a + 1; c < spaces.size(); ++c) {
      const auto pair = dcl_pair(spaces[a], spaces[c], mode);
      total += pair.value;
      out.grads[a] += inv_pairs * pair.grad_m;
      out.grads[c] += inv_pairs * pair.grad_n;
      ++out.pairs;
    }
  }
  out.value = total * inv_pairs;
  return out;
}

std::uint64_t EntropyReport::gate_mask() const {
  std::uint64_t mask = 0;
  for (std::size_t s = 0; s < gates.size() && s < 64; ++s) {
    if (gates[s]) mask |= std::uint64_t{1} << s;
  }
  return mask;
}

double embedding_entropy(const Matrix& embeddings, std::size_t bins, double eps) {
  if (embeddings.size() == 0) throw LossError("entropy: empty embedding matrix");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(embeddings.size()));
  const Eigen::Index b = embeddings.rows();
  for (Eigen::Index c = 0; c < embeddings.cols(); ++c) {
    const auto col = embeddings.col(c);
    const double lo = col.minCoeff();
    const double range = col.maxCoeff() - lo;
    for (Eigen::Index r = 0; r < b; ++r) values.push_back(range > 0.0 ? (col[r] - lo) / range : 0.0);
  }
  return histogram_entropy(values, bins, eps);
}

EntropyReport weights_from_entropies(std::span<const double> entropies, const LossConfig& config) {
  if (entropies.empty()) throw LossError("entropy weights: no spaces");
  EntropyReport report;
  report.entropies.assign(entropies.begin(), entropies.end());
  std::vector<double> squashed;
  for (double h : entropies) squashed.push_back(std::tanh(h));
  report.weights = softmax(squashed);
  const double threshold = config.gate_threshold.value_or(1.0 / static_cast<double>(entropies.size()));
  for (double w : report.weights) {
    report.gates.push_back(config.gate_comparison == GateComparison::kGreaterEqual ? w >= threshold : w > threshold);
  }
  return report;
}

EntropyReport entropy_weights(std::span<const Matrix* const> sources, const LossConfig& config) {
  std::vector<double> h;
  for (const Matrix* m : sources) {
    if (m->rows() < 2) throw LossError("entropy weights: batch needs at least 2 rows");
    h.push_back(embedding_entropy(*m, config.entropy_bins, config.entropy_eps));
  }
  return weights_from_entropies(h, config);
}

LossResult total_loss(std::span<const Matrix> spaces, std::span<const Matrix* const> entropy_sources,
                      const LossConfig& config, const std::vector<bool>* frozen_gates) {
  if (spaces.empty()) throw LossError("total loss: no spaces");
  if (entropy_sources.size() != spaces.size()) throw LossError("total loss: one entropy source per space required");
  config.validate(static_cast<std::size_t>(spaces.front().rows()));

  LossResult out;
  out.entropy = entropy_weights(entropy_sources, config);
  if (frozen_gates) {
    if (frozen_gates->size() != spaces.size()) throw LossError("total loss: frozen gate count mismatch");
    out.entropy.gates = *frozen_gates;
  }
  const auto dcl = dcl_all(spaces, config.dcl_mode);
  out.dcl = dcl.value;
  for (std::size_t s = 0; s < spaces.size(); ++s) {
    const auto term = itrl(spaces[s], config.margin);
    out.itrl.push_back(term.mean);
    const bool included = config.mtrl_mode == MtrlMode::kPlainSum || out.entropy.gates[s];
    Matrix grad = config.dcl_weight * dcl.grads[s];
    if (included) {
      out.mtrl += term.mean;
      grad += term.grad;
    }
    out.grads.push_back(std::move(grad));
  }
  out.total = out.mtrl + config.dcl_weight * out.dcl;
  return out;
}

}  // namespace lpd
