#pragma once

#include "lpd/feature_store.hpp"

#include <cstdint>
#include <vector>

namespace lpd {

/// Multi-mode relevance benchmark. Every concept (query) owns `clusters` visually
/// distinct modes; video feature j only carries the concept signal for the modes it
/// "sees" and looks mostly like an unrelated random concept otherwise, so no single video
/// feature can separate all modes of a query. An unseen mode keeps a weak
/// `unseen_signal` share of the concept on top of an unrelated decoy latent.
struct SyntheticConfig {
  std::size_t queries = 20;
  std::size_t clusters = 3;
  std::size_t relevant_per_cluster = 10;
  std::size_t distractors = 1000;

  std::size_t val_queries = 20;
  std::size_t val_distractors = 1000;

  std::size_t train_concepts = 300;
  std::size_t train_videos_per_cluster = 2;
  std::size_t captions_per_video = 2;

  std::vector<std::size_t> text_dims = {24, 32, 40};
  std::vector<std::size_t> video_dims = {16, 24, 32, 40, 48, 56};

  std::size_t latent_dim = 16;
  double noise = 0.3;          // per-entry Gaussian noise on every feature vector
  double cluster_spread = 0.5; // scale of the per-mode latent offset
  double unseen_signal = 0.3;  // concept signal a feature keeps for modes it does not see
};

/// True when video feature `feature` carries the concept signal for mode `cluster`.
bool feature_sees_cluster(std::size_t feature, std::size_t cluster, std::size_t video_features,
                          std::size_t clusters);

/// Throws FeatureStoreError for infeasible configurations.
void validate(const SyntheticConfig& config);

Dataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace lpd
