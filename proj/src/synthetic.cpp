#include "lpd/synthetic.hpp"

#include "lpd/random.hpp"

#include <cmath>
#include <cstdio>
#include <string>

namespace lpd {

namespace {

enum Stream : std::uint64_t { kProjections = 1, kTrain = 2, kVal = 3, kTest = 4 };

std::string make_id(const char* prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, n);
  return buf;
}

Vector random_latent(Rng& rng, std::size_t dim, double scale) {
  Vector z(static_cast<Eigen::Index>(dim));
  const double s = scale / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal() * s;
  return z;
}

Matrix random_projection(Rng& rng, std::size_t out_dim, std::size_t latent_dim) {
  Matrix p(static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(latent_dim));
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = rng.normal();
  }
  return p;
}

// Accumulates rows for every feature table of both modalities.
class Builder {
 public:
  Builder(const SyntheticConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(derive_seed(seed, kProjections));
    for (auto d : cfg.text_dims) text_proj_.push_back(random_projection(rng, d, cfg.latent_dim));
    for (auto d : cfg.video_dims) video_proj_.push_back(random_projection(rng, d, cfg.latent_dim));
    text_values_.resize(cfg.text_dims.size());
    video_values_.resize(cfg.video_dims.size());
  }

  std::string add_text(Rng& rng, const Vector& topic, const char* prefix) {
    const auto id = make_id(prefix, text_ids_.size());
    text_ids_.push_back(id);
    for (std::size_t i = 0; i < text_proj_.size(); ++i) append(text_values_[i], text_proj_[i] * topic, rng);
    return id;
  }

  // `centroids[j]` is the latent that video feature j expresses for this mode.
  std::string add_video(Rng& rng, const std::vector<Vector>& centroids, const char* prefix) {
    const auto id = make_id(prefix, video_ids_.size());
    video_ids_.push_back(id);
    for (std::size_t j = 0; j < video_proj_.size(); ++j) append(video_values_[j], video_proj_[j] * centroids[j], rng);
    return id;
  }

  // Per-feature latents for mode `cluster` of `topic`.
  std::vector<Vector> mode_latents(Rng& rng, const Vector& topic, std::size_t cluster) const {
    const Vector offset = random_latent(rng, cfg_.latent_dim, cfg_.cluster_spread);
    std::vector<Vector> out;
    for (std::size_t j = 0; j < video_proj_.size(); ++j) {
      if (feature_sees_cluster(j, cluster, video_proj_.size(), cfg_.clusters)) {
        out.push_back(topic + offset);
      } else {
        out.push_back(cfg_.unseen_signal * (topic + offset) + random_latent(rng, cfg_.latent_dim, 1.0));
      }
    }
    return out;
  }

  void finish(Dataset& ds) {
    for (std::size_t i = 0; i < text_proj_.size(); ++i) {
      ds.text.emplace_back(Modality::kText, "t" + std::to_string(i), cfg_.text_dims[i], text_ids_,
                           std::move(text_values_[i]));
    }
    for (std::size_t j = 0; j < video_proj_.size(); ++j) {
      ds.video.emplace_back(Modality::kVideo, "v" + std::to_string(j), cfg_.video_dims[j], video_ids_,
                            std::move(video_values_[j]));
    }
  }

 private:
  void append(std::vector<float>& dst, const Vector& centroid, Rng& rng) const {
    for (Eigen::Index k = 0; k < centroid.size(); ++k) {
      const double noise = cfg_.noise > 0.0 ? cfg_.noise * rng.normal() : 0.0;
      dst.push_back(static_cast<float>(centroid[k] + noise));
    }
  }

  const SyntheticConfig& cfg_;
  std::vector<Matrix> text_proj_, video_proj_;
  std::vector<std::string> text_ids_, video_ids_;
  std::vector<std::vector<float>> text_values_, video_values_;
};

void build_eval_split(Builder& b, Rng& rng, const SyntheticConfig& cfg, std::size_t n_queries,
                      std::size_t n_distractors, const char* text_prefix, const char* video_prefix,
                      PairDataset& split) {
  for (std::size_t q = 0; q < n_queries; ++q) {
    const Vector topic = random_latent(rng, cfg.latent_dim, 1.0);
    const auto query = b.add_text(rng, topic, text_prefix);
    auto& relevant = split.relevance[query];
    for (std::size_t c = 0; c < cfg.clusters; ++c) {
      const auto latents = b.mode_latents(rng, topic, c);
      for (std::size_t k = 0; k < cfg.relevant_per_cluster; ++k) {
        const auto v = b.add_video(rng, latents, video_prefix);
        relevant.insert(v);
        split.collection.push_back(v);
        split.pairs.push_back({query, v});
      }
    }
  }
  for (std::size_t k = 0; k < n_distractors; ++k) {
    const Vector topic = random_latent(rng, cfg.latent_dim, 1.0);
    const auto cluster = static_cast<std::size_t>(rng.below(cfg.clusters));
    split.collection.push_back(b.add_video(rng, b.mode_latents(rng, topic, cluster), video_prefix));
  }
}

}  // namespace

bool feature_sees_cluster(std::size_t feature, std::size_t cluster, std::size_t video_features,
                          std::size_t clusters) {
  return feature % clusters == cluster || cluster % video_features == feature;
}

void validate(const SyntheticConfig& c) {
  const auto fail = [](const std::string& why) { throw FeatureStoreError("infeasible synthetic config: " + why); };
  if (c.queries < 1) fail("queries must be >= 1");
  if (c.clusters < 1) fail("clusters must be >= 1");
  if (c.relevant_per_cluster < 1) fail("relevant-per-cluster must be >= 1");
  if (c.val_queries < 1) fail("val-queries must be >= 1");
  if (c.train_concepts < 1 || c.train_videos_per_cluster < 1 || c.captions_per_video < 1) {
    fail("training split must be non-empty");
  }
  if (c.text_dims.empty() || c.video_dims.empty()) fail("need at least one feature per modality");
  for (auto d : c.text_dims) {
    if (d < 1) fail("feature dims must be >= 1");
  }
  for (auto d : c.video_dims) {
    if (d < 1) fail("feature dims must be >= 1");
  }
  if (c.latent_dim < 1) fail("latent dim must be >= 1");
  if (!(c.noise >= 0.0) || !(c.cluster_spread >= 0.0) || !(c.unseen_signal >= 0.0)) {
    fail("noise, spread and unseen signal must be >= 0");
  }
}

Dataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Builder b(cfg, seed);
  Dataset ds;

  Rng train_rng(derive_seed(seed, kTrain));
  for (std::size_t topic_idx = 0; topic_idx < cfg.train_concepts; ++topic_idx) {
    const Vector topic = random_latent(train_rng, cfg.latent_dim, 1.0);
    for (std::size_t c = 0; c < cfg.clusters; ++c) {
      const auto latents = b.mode_latents(train_rng, topic, c);
      for (std::size_t k = 0; k < cfg.train_videos_per_cluster; ++k) {
        const auto v = b.add_video(train_rng, latents, "trv");
        for (std::size_t cap = 0; cap < cfg.captions_per_video; ++cap) {
          ds.train.pairs.push_back({b.add_text(train_rng, topic, "trt"), v});
        }
      }
    }
  }

  Rng val_rng(derive_seed(seed, kVal));
  build_eval_split(b, val_rng, cfg, cfg.val_queries, cfg.val_distractors, "vaq", "vav", ds.val);
  Rng test_rng(derive_seed(seed, kTest));
  build_eval_split(b, test_rng, cfg, cfg.queries, cfg.distractors, "teq", "tev", ds.test);

  b.finish(ds);
  return ds;
}

}  // namespace lpd
