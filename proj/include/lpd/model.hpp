#pragma once

#include "lpd/feature_store.hpp"
#include "lpd/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace lpd {

/// How the k1+k2 common spaces are wired.
///  - kFeatureSpecific: space i (i < k1) compares text feature i against an attention
///    fusion of all video features; space k1+j compares a fusion of all text features
///    against video feature j.
///  - kParallelHeads: every space fuses both modalities with its own pair of heads.
enum class Topology { kFeatureSpecific, kParallelHeads };

std::string to_string(Topology t);
/// Accepts "lpd", "feature-specific" and "parallel-heads".
Topology parse_topology(const std::string& s);

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelDims {
  std::vector<std::size_t> text_dims;
  std::vector<std::size_t> video_dims;
  std::size_t common_dim = 512;

  std::size_t text_features() const { return text_dims.size(); }
  std::size_t video_features() const { return video_dims.size(); }
  std::size_t spaces() const { return text_dims.size() + video_dims.size(); }
  bool operator==(const ModelDims&) const = default;
};

/// y = tanh(x W + b), W is d_in x d.
struct LinearTransform {
  Matrix weight;
  Vector bias;
};

/// Scores one embedding with u . e + c.
struct AttentionHead {
  Vector weight;
  double bias = 0.0;
};

/// All trainable weights. Exactly one transform per raw feature, shared by every
/// space that consumes that feature.
struct ModelParams {
  ModelDims dims;
  Topology topology = Topology::kFeatureSpecific;
  std::vector<LinearTransform> text_transforms;
  std::vector<LinearTransform> video_transforms;
  // Feature-specific: heads[s] fuses the opposite modality of space s.
  // Parallel-heads: heads[2s] fuses text and heads[2s+1] fuses video for space s.
  std::vector<AttentionHead> heads;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
  static ModelParams initialize(const ModelDims& dims, Topology topology, std::uint64_t seed);
  static ModelParams zeros(const ModelDims& dims, Topology topology);
  ModelParams zeros_like() const { return zeros(dims, topology); }

  static std::size_t head_count(const ModelDims& dims, Topology topology);
  /// Head that fuses text features for `space`, or -1 when the text side is a single feature.
  int text_fusion_head(std::size_t space) const;
  int video_fusion_head(std::size_t space) const;

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  /// Visits every parameter tensor in flatten() order.
  void for_each_tensor(const std::function<void(const std::string&, std::span<double>)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, std::span<const double>)>& fn) const;

  void check_finite() const;
};

/// tanh(features * W + b) row-wise.
Matrix transform(const Matrix& features, const LinearTransform& params);

struct FusionResult {
  Matrix fused;    // b x d
  Matrix weights;  // b x k, rows sum to 1
};

/// Per row: logits_i = u . e_i + c, a = softmax(logits), output = sum_i a_i e_i.
FusionResult fuse(std::span<const Matrix> embeddings, const AttentionHead& head);

struct EmbeddingBatch {
  std::vector<Matrix> text;
  std::vector<Matrix> video;
};

/// Per-space b x b (texts x videos) cosine matrices and their arithmetic mean.
struct SpaceSimilarities {
  std::vector<Matrix> spaces;
  Matrix aggregate;
};

/// One modality's view of every space: the matrix each space compares on this side.
struct SideEncoding {
  std::vector<Matrix> embeddings;            // per raw feature, after transform
  std::vector<Matrix> sides;                 // per space, b x d
  std::vector<Matrix> fusion_weights;        // per space, empty when the side is not fused
};

SideEncoding encode_text(const ModelParams& params, std::span<const Matrix> text_features);
SideEncoding encode_video(const ModelParams& params, std::span<const Matrix> video_features);

struct ForwardPass {
  SideEncoding text;
  SideEncoding video;
  std::vector<RowNormalized> text_units;
  std::vector<RowNormalized> video_units;
  SpaceSimilarities similarities;

  EmbeddingBatch embeddings() const { return {text.embeddings, video.embeddings}; }
  /// The b x d matrix whose value distribution drives the entropy weight of space s:
  /// the space's own (unfused) feature embedding, or its fused video side for
  /// parallel-heads spaces.
  const Matrix& entropy_source(const ModelParams& params, std::size_t space) const;
};

ForwardPass forward(const ModelParams& params, std::span<const Matrix> text_features,
                    std::span<const Matrix> video_features);
SpaceSimilarities forward_spaces(const Batch& batch, const ModelParams& params);

/// Gradient of sum_s <grad_spaces[s], S_s> with respect to every parameter.
ModelParams backward(const ModelParams& params, const ForwardPass& fwd, std::span<const Matrix> text_features,
                     std::span<const Matrix> video_features, std::span<const Matrix> grad_spaces);

/// Splits a gradient on the aggregate matrix into equal per-space gradients.
std::vector<Matrix> aggregate_gradient_to_spaces(const Matrix& grad_aggregate, std::size_t spaces);

struct CollectionScores {
  std::vector<Matrix> spaces;  // per space, queries x items
  Matrix aggregate;
};

/// Scores every query against every collection item, streaming items in chunks.
/// `item_ids` selects the collection; each id must exist in every video table.
CollectionScores score_collection(const ModelParams& params, std::span<const Matrix> query_features,
                                  const std::vector<FeatureTable>& video_tables,
                                  std::span<const std::string> item_ids, std::size_t chunk_size = 4096,
                                  std::size_t threads = 1);

// Checkpoint container, little-endian:
//   char[8] "LPDCKPT\0" | u32 version | u32 topology | u64 k1 | u64 k2 | u64 d
//   | u64 text_dims[k1] | u64 video_dims[k2] | u64 parameter_count | f64 values[parameter_count]
// values follow ModelParams::flatten() order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_params(std::ostream& out, const ModelParams& params);
ModelParams read_params(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace lpd
