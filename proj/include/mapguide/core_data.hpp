#pragma once

#include "mapguide/common.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mapguide {

// TR-major voxel responses. Row i was acquired at t0 + i * tr_seconds.
struct FmriSeries {
  Matrix data;
  double tr_seconds = 2.0;
  double t0 = 0.0;
  std::vector<std::int64_t> voxel_ids;

  Index n_trs() const { return data.rows(); }
  Index n_voxels() const { return data.cols(); }
  double time_at(Index i) const { return t0 + static_cast<double>(i) * tr_seconds; }
  std::vector<double> times() const;

  // Throws ValidationError when an invariant does not hold.
  void validate() const;

  // Columns for the requested ids, in the requested order.
  FmriSeries select_voxels(const std::vector<std::int64_t>& ids) const;
  FmriSeries slice_rows(Index begin, Index count) const;
};

struct WordEntry {
  std::string token;
  double time = 0.0;
  bool operator==(const WordEntry&) const = default;
};

struct WordTimeline {
  std::vector<WordEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::vector<std::string> tokens() const;
  std::vector<double> times() const;
  void validate() const;

  // Entries with begin <= time < end.
  WordTimeline between(double begin, double end) const;
  bool operator==(const WordTimeline&) const = default;
};

// Lowercase and drop punctuation/whitespace. May return an empty string.
std::string normalize_token(std::string_view raw);
bool is_clean_token(std::string_view token);

struct EmbeddingSeries {
  Matrix vectors;
  std::vector<double> times;
  bool delayed = false;

  Index rows() const { return vectors.rows(); }
  Index dim() const { return vectors.cols(); }
  void validate() const;
  // Row whose time is nearest t (ties go to the earlier row).
  Index nearest_row(double t) const;
  EmbeddingSeries slice_rows(Index begin, Index count) const;
};

enum class Nonlinearity { none, tanh };

struct MapperConfig {
  int input_voxels = 0;
  int embed_dim = 16;
  int encoder_layers = 2;
  int encoder_width = 32;
  int n_heads = 4;
  int patch_size = 250;
  int tap_layer = 2;
  double mask_ratio = 0.05;
  double contrastive_weight = 0.2;
  double temperature = 0.1;
  int projector_dim = 32;
  int batch_size = 32;
  double learning_rate = 1e-4;
  int max_epochs = 200;
  int patience = 20;
  // Frame t + response_lag is paired with embedding row t (hemodynamic lead).
  int response_lag = 1;
  bool symmetric_infonce = false;
  bool masked_in_mse = false;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const MapperConfig&) const = default;
};

using TensorMap = std::map<std::string, Matrix>;

struct MapperCheckpoint {
  MapperConfig config;
  TensorMap encoder;
  TensorMap embedding_projector;
  TensorMap contrastive_projector;
};

struct SyntheticSpec {
  int vocab_size = 40;
  int n_words = 4000;
  int n_trs = 2000;
  int voxels = 1000;
  int duplication_factor = 1;
  double noise_sigma = 0.0;
  Nonlinearity nonlinearity = Nonlinearity::none;
  double tr_seconds = 2.0;
  // Base voxels (before duplication) whose replicas form the auditory set.
  int auditory_voxels = 8;
  // Successors per token in the generative Markov prior.
  int branching = 4;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

}  // namespace mapguide
