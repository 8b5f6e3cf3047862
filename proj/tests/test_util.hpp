#pragma once

#include "lpd/random.hpp"
#include "lpd/synthetic.hpp"

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace lpd::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    Rng rng(derive_seed(static_cast<std::uint64_t>(::getpid()), counter++));
    path_ = std::filesystem::temp_directory_path() / ("lpd_" + tag + "_" + std::to_string(rng.next_u64() % 1000000007));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

// Small benchmark used by tests that need a real dataset but not the full reference scale.
inline SyntheticConfig small_synthetic() {
  SyntheticConfig c;
  c.queries = 4;
  c.clusters = 3;
  c.relevant_per_cluster = 3;
  c.distractors = 60;
  c.val_queries = 4;
  c.val_distractors = 60;
  c.train_concepts = 20;
  c.train_videos_per_cluster = 1;
  c.captions_per_video = 2;
  c.text_dims = {6, 5};
  c.video_dims = {4, 7, 5};
  c.latent_dim = 4;
  return c;
}

}  // namespace lpd::testing
