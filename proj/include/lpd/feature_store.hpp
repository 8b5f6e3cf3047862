#pragma once

#include "lpd/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace lpd {

enum class Modality { kText, kVideo };

std::string to_string(Modality m);
Modality parse_modality(const std::string& s);

class FeatureStoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One named feature of one modality: an id-indexed matrix of f32 vectors.
class FeatureTable {
 public:
  FeatureTable() = default;
  FeatureTable(Modality modality, std::string name, std::size_t dim, std::vector<std::string> ids,
               std::vector<float> values);

  Modality modality() const { return modality_; }
  const std::string& name() const { return name_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<float>& values() const { return values_; }

  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::optional<std::size_t> find(const std::string& id) const;
  std::size_t index_of(const std::string& id) const;

  /// Gathers the given rows as a 64-bit matrix.
  Matrix gather(std::span<const std::size_t> rows) const;
  Matrix gather_ids(std::span<const std::string> ids) const;

 private:
  Modality modality_ = Modality::kText;
  std::string name_;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ManifestEntry {
  Modality modality = Modality::kText;
  std::string feature_name;
  std::size_t dim = 0;
  std::filesystem::path vectors_path;
  std::filesystem::path ids_path;
};

/// Parses `modality<TAB>feature-name<TAB>dim<TAB>vectors-path<TAB>ids-path` lines.
/// Relative paths are resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
/// Paths are written relative to the manifest's directory when they live under it.
void write_manifest(const std::filesystem::path& manifest, std::span<const ManifestEntry> entries);

FeatureTable load_feature_table(const ManifestEntry& entry);
void write_feature_table(const FeatureTable& table, const std::filesystem::path& vectors_path,
                         const std::filesystem::path& ids_path);

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split s);

struct TextVideoPair {
  std::string text_id;
  std::string video_id;
  bool operator==(const TextVideoPair&) const = default;
};

using Relevance = std::map<std::string, std::set<std::string>>;

/// Training pairs (train split) or queries with judgments over a searchable collection
/// (val/test splits).
struct PairDataset {
  Split split = Split::kTrain;
  std::vector<TextVideoPair> pairs;
  Relevance relevance;
  std::vector<std::string> collection;

  std::vector<std::string> queries() const;
};

std::vector<TextVideoPair> read_pairs(const std::filesystem::path& path);
void write_pairs(const std::filesystem::path& path, std::span<const TextVideoPair> pairs);
/// `query-id<TAB>video-id` per line; presence means relevant.
Relevance read_relevance(const std::filesystem::path& path);
void write_relevance(const std::filesystem::path& path, const Relevance& relevance);
std::vector<std::string> read_id_list(const std::filesystem::path& path);
void write_id_list(const std::filesystem::path& path, std::span<const std::string> ids);

struct Dataset {
  std::vector<FeatureTable> text;
  std::vector<FeatureTable> video;
  PairDataset train{Split::kTrain, {}, {}, {}};
  PairDataset val{Split::kVal, {}, {}, {}};
  PairDataset test{Split::kTest, {}, {}, {}};

  std::vector<std::size_t> text_dims() const;
  std::vector<std::size_t> video_dims() const;
  const PairDataset& split(Split s) const;

  /// Throws FeatureStoreError when a referenced id is missing from any table of its modality.
  void validate() const;
};

/// Directory layout: manifest.tsv, features/*.f32|*.ids, train.pairs,
/// {val,test}.qrels, {val,test}.collection.
Dataset load_dataset(const std::filesystem::path& dir);
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

/// Row i of every matrix belongs to pair i.
struct Batch {
  std::vector<Matrix> text;
  std::vector<Matrix> video;
  std::vector<std::string> text_ids;
  std::vector<std::string> video_ids;

  std::size_t size() const { return text_ids.size(); }
};

Batch make_batch(const Dataset& dataset, std::span<const TextVideoPair> pairs);

/// Epoch-wise batching over training pairs. Each epoch takes one caption per video
/// (round-robin across epochs), shuffles the videos with a seed derived from (seed, epoch)
/// and cuts batches of exactly `batch_size` rows with distinct video ids and distinct
/// text ids. Leftover rows at the end of an epoch are dropped.
class BatchSampler {
 public:
  BatchSampler(const PairDataset& train, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::vector<TextVideoPair>> epoch_batches(std::size_t epoch) const;
  std::size_t batch_size() const { return batch_size_; }
  std::size_t video_count() const { return by_video_.size(); }

 private:
  std::size_t batch_size_;
  std::uint64_t seed_;
  // Videos in first-appearance order, each with its captions in file order.
  std::vector<std::pair<std::string, std::vector<std::string>>> by_video_;
};

/// First batch of the seed's epoch-0 shuffle.
Batch sample_batch(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed);

}  // namespace lpd
