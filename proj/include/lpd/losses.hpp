#pragma once

#include "lpd/numerics.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpd {

class LossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class DclMode { kPartial, kFull, kOff };
enum class MtrlMode { kEfGated, kPlainSum };
enum class GateComparison { kGreaterEqual, kGreater };

std::string to_string(DclMode m);
std::string to_string(MtrlMode m);
std::string to_string(GateComparison c);
DclMode parse_dcl_mode(const std::string& s);
/// Accepts "ef", "ef-gated", "plain" and "plain-sum".
MtrlMode parse_mtrl_mode(const std::string& s);
/// Accepts ">=", "ge", ">" and "gt".
GateComparison parse_gate_comparison(const std::string& s);

struct LossConfig {
  double margin = 0.2;
  DclMode dcl_mode = DclMode::kPartial;
  double dcl_weight = 1.0;
  MtrlMode mtrl_mode = MtrlMode::kEfGated;
  std::size_t entropy_bins = 100;
  double entropy_eps = 1e-10;
  /// Unset means 1 / (number of spaces).
  std::optional<double> gate_threshold;
  GateComparison gate_comparison = GateComparison::kGreaterEqual;

  /// Throws LossError on margin <= 0 or bins < 2, and on DcL with batch_size < 4.
  void validate(std::optional<std::size_t> batch_size = std::nullopt) const;
};

/// Minimum batch size for a de-correlation term: Pearson over fewer than 3 negatives is
/// always +-1 or undefined.
inline constexpr std::size_t kMinDclBatch = 4;

struct ItrlResult {
  std::vector<double> row_losses;
  std::vector<std::size_t> hardest_negatives;
  double mean = 0.0;
  Matrix grad;  // d mean / d sims
};

/// Text-to-video hinge on the hardest in-batch negative of each row. Diagonal entries
/// are the positives. Ties in the argmax go to the lowest column.
ItrlResult itrl(const Matrix& sims, double margin);

struct DclPairResult {
  double value = 0.0;
  Matrix grad_m;
  Matrix grad_n;
};

/// Mean over text rows of |pearson| between the rows of two spaces' similarity matrices.
/// Partial mode drops the diagonal (positive) entries from each row before correlating;
/// full mode correlates whole rows; off mode returns 0.
DclPairResult dcl_pair(const Matrix& m, const Matrix& n, DclMode mode);

struct DclResult {
  double value = 0.0;
  std::vector<Matrix> grads;
  std::size_t pairs = 0;
  std::string warning;
};

/// Mean of dcl_pair over every unordered pair of spaces.
DclResult dcl_all(std::span<const Matrix> spaces, DclMode mode);

struct EntropyReport {
  std::vector<double> entropies;
  std::vector<double> weights;
  std::vector<bool> gates;

  std::uint64_t gate_mask() const;
};

/// Per-column min-max normalization over the batch followed by the 100-bin histogram
/// entropy of all b*d values. Constant columns map to 0.
double embedding_entropy(const Matrix& embeddings, std::size_t bins, double eps);

/// W = softmax(tanh(H)); gate_s compares w_s against the threshold.
EntropyReport weights_from_entropies(std::span<const double> entropies, const LossConfig& config);

/// One b x d source matrix per space.
EntropyReport entropy_weights(std::span<const Matrix* const> sources, const LossConfig& config);

struct LossResult {
  double total = 0.0;
  double mtrl = 0.0;        // gated (or plain) sum of per-space ITRL means
  double dcl = 0.0;         // unweighted mean DcL over space pairs
  std::vector<double> itrl; // per-space ITRL mean, independent of gating
  EntropyReport entropy;
  std::vector<Matrix> grads;  // d total / d sims, per space
};

/// total = MTRL + dcl_weight * DcL. Gates select which ITRL terms are summed; DcL always
/// covers every space. No gradient flows through the entropy weights. `frozen_gates`
/// replaces the computed gate decisions (used to hold gates fixed under perturbation).
LossResult total_loss(std::span<const Matrix> spaces, std::span<const Matrix* const> entropy_sources,
                      const LossConfig& config, const std::vector<bool>* frozen_gates = nullptr);

}  // namespace lpd
