#include "lpd/model.hpp"

#include "lpd/random.hpp"

#include <cmath>
#include <thread>

namespace lpd {

namespace {

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

void fill_uniform(Rng& rng, std::span<double> values, double bound) {
  for (double& v : values) v = rng.uniform(-bound, bound);
}

void check_features(std::span<const Matrix> features, const std::vector<std::size_t>& dims, const char* side) {
  if (features.size() != dims.size()) {
    throw ModelError(std::string(side) + ": expected " + std::to_string(dims.size()) + " feature matrices, got " +
                     std::to_string(features.size()));
  }
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (features[i].cols() != idx(dims[i])) {
      throw ModelError(std::string(side) + " feature " + std::to_string(i) + ": expected " + std::to_string(dims[i]) +
                       " columns, got " + std::to_string(features[i].cols()));
    }
    if (features[i].rows() != features[0].rows()) throw ModelError(std::string(side) + ": row count mismatch");
  }
}

// Accumulates the gradient of a fusion output into the fused embeddings and the head.
void fuse_backward(std::span<const Matrix> embeddings, const AttentionHead& head, const Matrix& weights,
                   const Matrix& grad_fused, std::vector<Matrix>& grad_embeddings, AttentionHead& grad_head) {
  const std::size_t k = embeddings.size();
  const Eigen::Index b = grad_fused.rows();
  Matrix grad_weights(b, idx(k));
  for (std::size_t i = 0; i < k; ++i) {
    grad_weights.col(idx(i)) = grad_fused.cwiseProduct(embeddings[i]).rowwise().sum();
  }
  // Softmax Jacobian: dlogit_i = a_i (da_i - sum_k a_k da_k).
  const Vector expected = weights.cwiseProduct(grad_weights).rowwise().sum();
  const Matrix grad_logits = weights.cwiseProduct(grad_weights.colwise() - expected);
  for (std::size_t i = 0; i < k; ++i) {
    const auto a = weights.col(idx(i));
    const auto gl = grad_logits.col(idx(i));
    grad_embeddings[i] += (grad_fused.array().colwise() * a.array()).matrix();
    grad_embeddings[i] += gl * head.weight.transpose();
    grad_head.weight += embeddings[i].transpose() * gl;
    grad_head.bias += gl.sum();
  }
}

void transform_backward(const Matrix& features, const Matrix& output, const Matrix& grad_output,
                        LinearTransform& grad) {
  const Matrix grad_pre = grad_output.cwiseProduct((1.0 - output.array().square()).matrix());
  grad.weight += features.transpose() * grad_pre;
  grad.bias += grad_pre.colwise().sum().transpose();
}

SideEncoding encode_side(const ModelParams& params, std::span<const Matrix> features,
                         const std::vector<LinearTransform>& transforms, bool text_side) {
  SideEncoding enc;
  for (std::size_t i = 0; i < features.size(); ++i) enc.embeddings.push_back(transform(features[i], transforms[i]));
  const std::size_t spaces = params.dims.spaces();
  const std::size_t k1 = params.dims.text_features();
  enc.sides.resize(spaces);
  enc.fusion_weights.resize(spaces);
  for (std::size_t s = 0; s < spaces; ++s) {
    const int h = text_side ? params.text_fusion_head(s) : params.video_fusion_head(s);
    if (h < 0) {
      enc.sides[s] = enc.embeddings[text_side ? s : s - k1];
    } else {
      auto fused = fuse(enc.embeddings, params.heads[static_cast<std::size_t>(h)]);
      enc.sides[s] = std::move(fused.fused);
      enc.fusion_weights[s] = std::move(fused.weights);
    }
  }
  return enc;
}

void side_backward(const ModelParams& params, const SideEncoding& enc, std::span<const Matrix> features,
                   bool text_side, const std::vector<Matrix>& grad_sides,
                   std::vector<LinearTransform>& grad_transforms, std::vector<AttentionHead>& grad_heads) {
  std::vector<Matrix> grad_emb;
  for (const auto& e : enc.embeddings) grad_emb.push_back(Matrix::Zero(e.rows(), e.cols()));
  const std::size_t k1 = params.dims.text_features();
  for (std::size_t s = 0; s < grad_sides.size(); ++s) {
    const int h = text_side ? params.text_fusion_head(s) : params.video_fusion_head(s);
    if (h < 0) {
      grad_emb[text_side ? s : s - k1] += grad_sides[s];
    } else {
      const auto hh = static_cast<std::size_t>(h);
      fuse_backward(enc.embeddings, params.heads[hh], enc.fusion_weights[s], grad_sides[s], grad_emb, grad_heads[hh]);
    }
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    transform_backward(features[i], enc.embeddings[i], grad_emb[i], grad_transforms[i]);
  }
}

}  // namespace

std::string to_string(Topology t) { return t == Topology::kFeatureSpecific ? "lpd" : "parallel-heads"; }

Topology parse_topology(const std::string& s) {
  if (s == "lpd" || s == "feature-specific") return Topology::kFeatureSpecific;
  if (s == "parallel-heads") return Topology::kParallelHeads;
  throw ModelError("unknown topology '" + s + "'");
}

std::size_t ModelParams::head_count(const ModelDims& dims, Topology topology) {
  return topology == Topology::kFeatureSpecific ? dims.spaces() : 2 * dims.spaces();
}

ModelParams ModelParams::zeros(const ModelDims& dims, Topology topology) {
  if (dims.text_dims.empty() || dims.video_dims.empty()) throw ModelError("need at least one feature per modality");
  if (dims.common_dim < 1) throw ModelError("common dimension must be >= 1");
  ModelParams p;
  p.dims = dims;
  p.topology = topology;
  const auto d = idx(dims.common_dim);
  for (auto di : dims.text_dims) p.text_transforms.push_back({Matrix::Zero(idx(di), d), Vector::Zero(d)});
  for (auto di : dims.video_dims) p.video_transforms.push_back({Matrix::Zero(idx(di), d), Vector::Zero(d)});
  p.heads.assign(head_count(dims, topology), AttentionHead{Vector::Zero(d), 0.0});
  return p;
}

ModelParams ModelParams::initialize(const ModelDims& dims, Topology topology, std::uint64_t seed) {
  ModelParams p = zeros(dims, topology);
  Rng rng(seed);
  for (auto* transforms : {&p.text_transforms, &p.video_transforms}) {
    for (auto& t : *transforms) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.weight.rows()));
      fill_uniform(rng, {t.weight.data(), static_cast<std::size_t>(t.weight.size())}, bound);
      fill_uniform(rng, {t.bias.data(), static_cast<std::size_t>(t.bias.size())}, bound);
    }
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(dims.common_dim));
  for (auto& h : p.heads) {
    fill_uniform(rng, {h.weight.data(), static_cast<std::size_t>(h.weight.size())}, bound);
    h.bias = rng.uniform(-bound, bound);
  }
  return p;
}

int ModelParams::text_fusion_head(std::size_t space) const {
  if (topology == Topology::kParallelHeads) return static_cast<int>(2 * space);
  return space < dims.text_features() ? -1 : static_cast<int>(space);
}

int ModelParams::video_fusion_head(std::size_t space) const {
  if (topology == Topology::kParallelHeads) return static_cast<int>(2 * space + 1);
  return space < dims.text_features() ? static_cast<int>(space) : -1;
}

void ModelParams::for_each_tensor(const std::function<void(const std::string&, std::span<double>)>& fn) {
  const auto visit_transforms = [&](std::vector<LinearTransform>& ts, const std::string& prefix) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const auto name = prefix + "[" + std::to_string(i) + "]";
      fn(name + ".weight", {ts[i].weight.data(), static_cast<std::size_t>(ts[i].weight.size())});
      fn(name + ".bias", {ts[i].bias.data(), static_cast<std::size_t>(ts[i].bias.size())});
    }
  };
  visit_transforms(text_transforms, "text");
  visit_transforms(video_transforms, "video");
  for (std::size_t s = 0; s < heads.size(); ++s) {
    const auto name = "head[" + std::to_string(s) + "]";
    fn(name + ".weight", {heads[s].weight.data(), static_cast<std::size_t>(heads[s].weight.size())});
    fn(name + ".bias", {&heads[s].bias, 1});
  }
}

void ModelParams::for_each_tensor(
    const std::function<void(const std::string&, std::span<const double>)>& fn) const {
  const_cast<ModelParams*>(this)->for_each_tensor(
      [&](const std::string& name, std::span<double> values) { fn(name, values); });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, std::span<const double> v) { n += v.size(); });
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for_each_tensor([&](const std::string&, std::span<const double> v) { flat.insert(flat.end(), v.begin(), v.end()); });
  return flat;
}

void ModelParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ModelError("parameter vector size mismatch");
  std::size_t offset = 0;
  for_each_tensor([&](const std::string&, std::span<double> v) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
    offset += v.size();
  });
}

void ModelParams::check_finite() const {
  for_each_tensor([](const std::string& name, std::span<const double> v) {
    for (double x : v) {
      if (!std::isfinite(x)) throw ModelError("non-finite value in " + name);
    }
  });
}

Matrix transform(const Matrix& features, const LinearTransform& params) {
  if (features.cols() != params.weight.rows()) {
    throw ModelError("transform: input has " + std::to_string(features.cols()) + " columns, weight expects " +
                     std::to_string(params.weight.rows()));
  }
  Matrix pre = features * params.weight;
  pre.rowwise() += params.bias.transpose();
  return pre.array().tanh().matrix();
}

FusionResult fuse(std::span<const Matrix> embeddings, const AttentionHead& head) {
  if (embeddings.empty()) throw ModelError("fuse: no embeddings");
  const Eigen::Index b = embeddings[0].rows();
  const Eigen::Index d = embeddings[0].cols();
  for (const auto& e : embeddings) {
    if (e.rows() != b || e.cols() != d) throw ModelError("fuse: embedding shape mismatch");
  }
  if (head.weight.size() != d) throw ModelError("fuse: attention head dimension mismatch");

  const auto k = idx(embeddings.size());
  FusionResult out;
  out.weights.resize(b, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    out.weights.col(i) = (embeddings[static_cast<std::size_t>(i)] * head.weight).array() + head.bias;
  }
  for (Eigen::Index r = 0; r < b; ++r) {
    const double mx = out.weights.row(r).maxCoeff();
    out.weights.row(r) = (out.weights.row(r).array() - mx).exp();
    out.weights.row(r) /= out.weights.row(r).sum();
  }
  out.fused = Matrix::Zero(b, d);
  for (Eigen::Index i = 0; i < k; ++i) {
    out.fused += (embeddings[static_cast<std::size_t>(i)].array().colwise() * out.weights.col(i).array()).matrix();
  }
  return out;
}

SideEncoding encode_text(const ModelParams& params, std::span<const Matrix> text_features) {
  check_features(text_features, params.dims.text_dims, "text");
  return encode_side(params, text_features, params.text_transforms, true);
}

SideEncoding encode_video(const ModelParams& params, std::span<const Matrix> video_features) {
  check_features(video_features, params.dims.video_dims, "video");
  return encode_side(params, video_features, params.video_transforms, false);
}

const Matrix& ForwardPass::entropy_source(const ModelParams& params, std::size_t space) const {
  if (params.topology == Topology::kParallelHeads) return video.sides[space];
  const std::size_t k1 = params.dims.text_features();
  return space < k1 ? text.embeddings[space] : video.embeddings[space - k1];
}

ForwardPass forward(const ModelParams& params, std::span<const Matrix> text_features,
                    std::span<const Matrix> video_features) {
  ForwardPass fwd;
  fwd.text = encode_text(params, text_features);
  fwd.video = encode_video(params, video_features);
  const std::size_t spaces = params.dims.spaces();
  const Eigen::Index b_text = text_features[0].rows();
  const Eigen::Index b_video = video_features[0].rows();
  fwd.similarities.aggregate = Matrix::Zero(b_text, b_video);
  for (std::size_t s = 0; s < spaces; ++s) {
    fwd.text_units.push_back(normalize_rows(fwd.text.sides[s]));
    fwd.video_units.push_back(normalize_rows(fwd.video.sides[s]));
    fwd.similarities.spaces.push_back(fwd.text_units[s].unit * fwd.video_units[s].unit.transpose());
    fwd.similarities.aggregate += fwd.similarities.spaces[s];
  }
  fwd.similarities.aggregate /= static_cast<double>(spaces);
  return fwd;
}

SpaceSimilarities forward_spaces(const Batch& batch, const ModelParams& params) {
  return forward(params, batch.text, batch.video).similarities;
}

ModelParams backward(const ModelParams& params, const ForwardPass& fwd, std::span<const Matrix> text_features,
                     std::span<const Matrix> video_features, std::span<const Matrix> grad_spaces) {
  const std::size_t spaces = params.dims.spaces();
  if (grad_spaces.size() != spaces) throw ModelError("backward: expected one gradient per space");
  ModelParams grad = params.zeros_like();

  std::vector<Matrix> grad_text_sides(spaces), grad_video_sides(spaces);
  for (std::size_t s = 0; s < spaces; ++s) {
    const Matrix& g = grad_spaces[s];
    const Matrix grad_text_unit = g * fwd.video_units[s].unit;
    const Matrix grad_video_unit = g.transpose() * fwd.text_units[s].unit;
    grad_text_sides[s] = normalize_rows_backward(fwd.text_units[s], grad_text_unit);
    grad_video_sides[s] = normalize_rows_backward(fwd.video_units[s], grad_video_unit);
  }
  side_backward(params, fwd.text, text_features, true, grad_text_sides, grad.text_transforms,
                grad.heads);
  side_backward(params, fwd.video, video_features, false, grad_video_sides,
                grad.video_transforms, grad.heads);
  return grad;
}

std::vector<Matrix> aggregate_gradient_to_spaces(const Matrix& grad_aggregate, std::size_t spaces) {
  return std::vector<Matrix>(spaces, grad_aggregate / static_cast<double>(spaces));
}

CollectionScores score_collection(const ModelParams& params, std::span<const Matrix> query_features,
                                  const std::vector<FeatureTable>& video_tables,
                                  std::span<const std::string> item_ids, std::size_t chunk_size,
                                  std::size_t threads) {
  if (chunk_size < 1) throw ModelError("chunk size must be >= 1");
  if (video_tables.size() != params.dims.video_features()) throw ModelError("video table count mismatch");
  for (std::size_t j = 0; j < video_tables.size(); ++j) {
    if (video_tables[j].dim() != params.dims.video_dims[j]) {
      throw ModelError("video table '" + video_tables[j].name() + "' dim mismatch");
    }
  }
  // Resolve every id against every table up front so misalignment fails before scoring.
  std::vector<std::vector<std::size_t>> rows(video_tables.size());
  for (std::size_t j = 0; j < video_tables.size(); ++j) {
    rows[j].reserve(item_ids.size());
    for (const auto& id : item_ids) {
      const auto r = video_tables[j].find(id);
      if (!r) throw ModelError("collection id '" + id + "' missing from video feature '" + video_tables[j].name() + "'");
      rows[j].push_back(*r);
    }
  }

  const auto text = encode_text(params, query_features);
  const std::size_t spaces = params.dims.spaces();
  std::vector<Matrix> query_units;
  for (std::size_t s = 0; s < spaces; ++s) query_units.push_back(normalize_rows(text.sides[s]).unit);

  const Eigen::Index nq = query_features.empty() ? 0 : query_features[0].rows();
  const Eigen::Index n = idx(item_ids.size());
  CollectionScores out;
  out.spaces.assign(spaces, Matrix::Zero(nq, n));
  out.aggregate = Matrix::Zero(nq, n);

  const std::size_t chunks = (item_ids.size() + chunk_size - 1) / chunk_size;
  const auto score_chunk = [&](std::size_t c) {
    const std::size_t begin = c * chunk_size;
    const std::size_t len = std::min(chunk_size, item_ids.size() - begin);
    std::vector<Matrix> feats;
    for (std::size_t j = 0; j < video_tables.size(); ++j) {
      feats.push_back(video_tables[j].gather(std::span<const std::size_t>(rows[j]).subspan(begin, len)));
    }
    const auto video = encode_video(params, feats);
    for (std::size_t s = 0; s < spaces; ++s) {
      const Matrix unit = normalize_rows(video.sides[s]).unit;
      for (Eigen::Index q = 0; q < nq; ++q) {
        for (Eigen::Index i = 0; i < idx(len); ++i) {
          out.spaces[s](q, idx(begin) + i) = query_units[s].row(q).dot(unit.row(i));
        }
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, chunks));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks; ++c) score_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < chunks; c += workers) score_chunk(c);
      });
    }
    for (auto& t : pool) t.join();
  }

  for (std::size_t s = 0; s < spaces; ++s) out.aggregate += out.spaces[s];
  out.aggregate /= static_cast<double>(spaces);
  return out;
}

}  // namespace lpd
