#include "lpd/feature_store.hpp"

#include "lpd/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <unordered_set>

namespace fs = std::filesystem;

namespace lpd {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw FeatureStoreError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw FeatureStoreError("cannot write " + path.string());
  return out;
}

// Lines without the trailing LF (and without a stray CR).
std::vector<std::string> read_lines(const fs::path& path) {
  auto in = open_in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
}

fs::path relative_if_under(const fs::path& p, const fs::path& base) {
  const auto rel = p.lexically_relative(base);
  if (!rel.empty() && *rel.begin() != "..") return rel;
  return p;
}

}  // namespace

std::string to_string(Modality m) { return m == Modality::kText ? "text" : "video"; }

Modality parse_modality(const std::string& s) {
  if (s == "text") return Modality::kText;
  if (s == "video") return Modality::kVideo;
  throw FeatureStoreError("unknown modality '" + s + "'");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

FeatureTable::FeatureTable(Modality modality, std::string name, std::size_t dim,
                           std::vector<std::string> ids, std::vector<float> values)
    : modality_(modality), name_(std::move(name)), dim_(dim), ids_(std::move(ids)), values_(std::move(values)) {
  if (dim_ < 1) throw FeatureStoreError(name_ + ": dim must be >= 1");
  if (values_.size() != ids_.size() * dim_) {
    throw FeatureStoreError(name_ + ": payload length mismatch (" + std::to_string(values_.size()) +
                            " values for " + std::to_string(ids_.size()) + " ids x dim " + std::to_string(dim_) + ")");
  }
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) {
      throw FeatureStoreError(name_ + ": duplicate id '" + ids_[i] + "' at row " + std::to_string(i));
    }
    for (std::size_t k = 0; k < dim_; ++k) {
      if (!std::isfinite(values_[i * dim_ + k])) {
        throw FeatureStoreError(name_ + ": non-finite value at row " + std::to_string(i) + " ('" + ids_[i] +
                                "'), column " + std::to_string(k));
      }
    }
  }
}

std::optional<std::size_t> FeatureTable::find(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t FeatureTable::index_of(const std::string& id) const {
  const auto idx = find(id);
  if (!idx) throw FeatureStoreError(name_ + ": unknown id '" + id + "'");
  return *idx;
}

Matrix FeatureTable::gather(std::span<const std::size_t> rows) const {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim_));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = row(rows[r]);
    for (std::size_t k = 0; k < dim_; ++k) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = src[k];
  }
  return out;
}

Matrix FeatureTable::gather_ids(std::span<const std::string> ids) const {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) rows.push_back(index_of(id));
  return gather(rows);
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest) {
  const auto base = manifest.parent_path();
  std::vector<ManifestEntry> entries;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(manifest)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 5) {
      throw FeatureStoreError(manifest.string() + ":" + std::to_string(lineno) + ": expected 5 tab-separated fields");
    }
    ManifestEntry e;
    e.modality = parse_modality(cols[0]);
    e.feature_name = cols[1];
    try {
      e.dim = std::stoul(cols[2]);
    } catch (const std::exception&) {
      throw FeatureStoreError(manifest.string() + ":" + std::to_string(lineno) + ": bad dim '" + cols[2] + "'");
    }
    e.vectors_path = fs::path(cols[3]).is_absolute() ? fs::path(cols[3]) : base / cols[3];
    e.ids_path = fs::path(cols[4]).is_absolute() ? fs::path(cols[4]) : base / cols[4];
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const fs::path& manifest, std::span<const ManifestEntry> entries) {
  auto out = open_out(manifest);
  const auto base = manifest.parent_path();
  for (const auto& e : entries) {
    out << to_string(e.modality) << '\t' << e.feature_name << '\t' << e.dim << '\t'
        << relative_if_under(e.vectors_path, base).generic_string() << '\t'
        << relative_if_under(e.ids_path, base).generic_string() << '\n';
  }
}

FeatureTable load_feature_table(const ManifestEntry& entry) {
  auto ids = read_id_list(entry.ids_path);
  if (entry.dim < 1) throw FeatureStoreError(entry.feature_name + ": dim must be >= 1");

  auto in = open_in(entry.vectors_path, std::ios::binary);
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::uintmax_t>(in.tellg());
  in.seekg(0);
  const std::uintmax_t expected = ids.size() * entry.dim * sizeof(float);
  if (bytes != expected) {
    throw FeatureStoreError(entry.feature_name + ": payload length mismatch (" + std::to_string(bytes) +
                            " bytes, expected " + std::to_string(expected) + ")");
  }
  std::vector<float> values(ids.size() * entry.dim);
  std::vector<std::uint32_t> raw(values.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw FeatureStoreError(entry.feature_name + ": short read");
  for (std::size_t i = 0; i < raw.size(); ++i) values[i] = std::bit_cast<float>(to_little_endian(raw[i]));

  return FeatureTable(entry.modality, entry.feature_name, entry.dim, std::move(ids), std::move(values));
}

void write_feature_table(const FeatureTable& table, const fs::path& vectors_path, const fs::path& ids_path) {
  write_id_list(ids_path, table.ids());
  auto out = open_out(vectors_path, std::ios::binary);
  std::vector<std::uint32_t> raw(table.values().size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_little_endian(std::bit_cast<std::uint32_t>(table.values()[i]));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(std::uint32_t)));
}

std::vector<std::string> PairDataset::queries() const {
  std::vector<std::string> out;
  out.reserve(relevance.size());
  for (const auto& [q, _] : relevance) out.push_back(q);
  return out;
}

std::vector<TextVideoPair> read_pairs(const fs::path& path) {
  std::vector<TextVideoPair> pairs;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 2) throw FeatureStoreError(path.string() + ":" + std::to_string(lineno) + ": expected 2 fields");
    pairs.push_back({cols[0], cols[1]});
  }
  return pairs;
}

void write_pairs(const fs::path& path, std::span<const TextVideoPair> pairs) {
  auto out = open_out(path);
  for (const auto& p : pairs) out << p.text_id << '\t' << p.video_id << '\n';
}

Relevance read_relevance(const fs::path& path) {
  Relevance rel;
  for (const auto& p : read_pairs(path)) rel[p.text_id].insert(p.video_id);
  return rel;
}

void write_relevance(const fs::path& path, const Relevance& relevance) {
  auto out = open_out(path);
  for (const auto& [q, videos] : relevance) {
    for (const auto& v : videos) out << q << '\t' << v << '\n';
  }
}

std::vector<std::string> read_id_list(const fs::path& path) {
  std::vector<std::string> ids;
  for (auto& line : read_lines(path)) {
    if (!line.empty()) ids.push_back(std::move(line));
  }
  return ids;
}

void write_id_list(const fs::path& path, std::span<const std::string> ids) {
  auto out = open_out(path);
  for (const auto& id : ids) out << id << '\n';
}

std::vector<std::size_t> Dataset::text_dims() const {
  std::vector<std::size_t> dims;
  for (const auto& t : text) dims.push_back(t.dim());
  return dims;
}

std::vector<std::size_t> Dataset::video_dims() const {
  std::vector<std::size_t> dims;
  for (const auto& t : video) dims.push_back(t.dim());
  return dims;
}

const PairDataset& Dataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return train;
}

void Dataset::validate() const {
  if (text.empty() || video.empty()) throw FeatureStoreError("dataset needs at least one text and one video feature");
  const auto require = [](const std::vector<FeatureTable>& tables, const std::string& id, const std::string& where) {
    for (const auto& t : tables) {
      if (!t.find(id)) {
        throw FeatureStoreError(where + ": id '" + id + "' missing from " + to_string(t.modality()) + " feature '" +
                                t.name() + "'");
      }
    }
  };
  for (const auto* split : {&train, &val, &test}) {
    const auto where = to_string(split->split);
    for (const auto& p : split->pairs) {
      require(text, p.text_id, where);
      require(video, p.video_id, where);
    }
    for (const auto& [q, videos] : split->relevance) {
      require(text, q, where);
      for (const auto& v : videos) require(video, v, where);
    }
    for (const auto& v : split->collection) require(video, v, where);
  }
}

namespace {
const char* kManifest = "manifest.tsv";
}

Dataset load_dataset(const fs::path& dir) {
  const auto manifest = dir / kManifest;
  if (!fs::exists(manifest)) throw FeatureStoreError("missing manifest " + manifest.string());
  Dataset ds;
  for (const auto& entry : read_manifest(manifest)) {
    auto table = load_feature_table(entry);
    (entry.modality == Modality::kText ? ds.text : ds.video).push_back(std::move(table));
  }
  ds.train.pairs = read_pairs(dir / "train.pairs");
  for (auto* split : {&ds.val, &ds.test}) {
    const auto name = to_string(split->split);
    split->relevance = read_relevance(dir / (name + ".qrels"));
    split->collection = read_id_list(dir / (name + ".collection"));
    for (const auto& [q, videos] : split->relevance) {
      for (const auto& v : videos) split->pairs.push_back({q, v});
    }
  }
  ds.validate();
  return ds;
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir / "features");
  std::vector<ManifestEntry> entries;
  for (const auto* tables : {&dataset.text, &dataset.video}) {
    for (const auto& t : *tables) {
      const auto stem = to_string(t.modality()) + "_" + t.name();
      ManifestEntry e{t.modality(), t.name(), t.dim(), dir / "features" / (stem + ".f32"),
                      dir / "features" / (stem + ".ids")};
      write_feature_table(t, e.vectors_path, e.ids_path);
      entries.push_back(std::move(e));
    }
  }
  write_manifest(dir / kManifest, entries);
  write_pairs(dir / "train.pairs", dataset.train.pairs);
  for (const auto* split : {&dataset.val, &dataset.test}) {
    const auto name = to_string(split->split);
    write_relevance(dir / (name + ".qrels"), split->relevance);
    write_id_list(dir / (name + ".collection"), split->collection);
  }
}

Batch make_batch(const Dataset& dataset, std::span<const TextVideoPair> pairs) {
  Batch batch;
  for (const auto& p : pairs) {
    batch.text_ids.push_back(p.text_id);
    batch.video_ids.push_back(p.video_id);
  }
  for (const auto& t : dataset.text) batch.text.push_back(t.gather_ids(batch.text_ids));
  for (const auto& t : dataset.video) batch.video.push_back(t.gather_ids(batch.video_ids));
  return batch;
}

BatchSampler::BatchSampler(const PairDataset& train, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
  if (batch_size_ < 1) throw FeatureStoreError("batch size must be >= 1");
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& p : train.pairs) {
    auto [it, inserted] = slot.emplace(p.video_id, by_video_.size());
    if (inserted) by_video_.push_back({p.video_id, {}});
    by_video_[it->second].second.push_back(p.text_id);
  }
  if (by_video_.size() < batch_size_) {
    throw FeatureStoreError("training split has " + std::to_string(by_video_.size()) +
                            " distinct videos, fewer than batch size " + std::to_string(batch_size_));
  }
}

std::vector<std::vector<TextVideoPair>> BatchSampler::epoch_batches(std::size_t epoch) const {
  std::vector<TextVideoPair> order;
  order.reserve(by_video_.size());
  for (const auto& [video, captions] : by_video_) order.push_back({captions[epoch % captions.size()], video});
  Rng rng(derive_seed(seed_, epoch));
  rng.shuffle(order);

  // Rows whose text id already sits in the batch being built stay in the pool for the next one.
  std::vector<std::vector<TextVideoPair>> batches;
  std::vector<bool> used(order.size(), false);
  std::size_t first_unused = 0;
  while (true) {
    while (first_unused < order.size() && used[first_unused]) ++first_unused;
    std::vector<TextVideoPair> current;
    std::unordered_set<std::string> texts;
    for (std::size_t i = first_unused; i < order.size() && current.size() < batch_size_; ++i) {
      if (used[i] || texts.contains(order[i].text_id)) continue;
      texts.insert(order[i].text_id);
      current.push_back(order[i]);
      used[i] = true;
    }
    if (current.size() < batch_size_) break;
    batches.push_back(std::move(current));
  }
  if (batches.empty()) throw FeatureStoreError("cannot form a batch with distinct text ids");
  return batches;
}

Batch sample_batch(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed) {
  const BatchSampler sampler(dataset.train, batch_size, seed);
  const auto batches = sampler.epoch_batches(0);
  return make_batch(dataset, batches.front());
}

}  // namespace lpd
