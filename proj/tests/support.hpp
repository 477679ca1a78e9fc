#pragma once

#include "mapguide/language_model.hpp"
#include "mapguide/rng.hpp"

#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

namespace testing {

namespace fs = std::filesystem;

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("mapguide_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline mapguide::Matrix random_matrix(mapguide::Index rows, mapguide::Index cols, mapguide::Rng& rng) {
  mapguide::Matrix m(rows, cols);
  for (mapguide::Index i = 0; i < rows; ++i)
    for (mapguide::Index j = 0; j < cols; ++j) m(i, j) = mapguide::standard_normal(rng);
  return m;
}

// Untrained toy LM with random weights.
inline mapguide::ToyLm random_lm(const std::vector<std::string>& words, int hidden = 8, int layers = 2,
                                 int context = 6, std::uint64_t seed = 7) {
  mapguide::ToyLmConfig cfg;
  cfg.hidden_dim = hidden;
  cfg.n_layers = layers;
  cfg.n_heads = 2;
  cfg.context_limit = context;
  cfg.seed = seed;
  return mapguide::ToyLm(cfg, mapguide::Vocabulary(words));
}

inline std::vector<std::string> letters(int n) {
  std::vector<std::string> w;
  for (int i = 0; i < n; ++i) w.push_back(std::string(1, static_cast<char>('a' + i)));
  return w;
}

}  // namespace testing
