#pragma once

#include "mapguide/core_data.hpp"
#include "mapguide/language_model.hpp"

#include <span>
#include <vector>

namespace mapguide {

// One feature vector per word, stamped with the word's time.
struct WordVectorPairs {
  Matrix vectors;  // n_words x n
  std::vector<double> times;

  Index size() const { return vectors.rows(); }
  Index dim() const { return vectors.cols(); }
};

// Row i is the LM's layer-`layer` state for words[i - window .. i] (clipped at
// the story start).
WordVectorPairs embed_contexts(const LanguageModel& lm, const WordTimeline& timeline, int window, int layer);

// Lanczos kernel sinc(x) * sinc(x / lobes) on |x| < lobes, 0 outside.
double lanczos_kernel(double x, int lobes);

// Resample word vectors onto a uniform grid with the normalized Lanczos
// kernel, x measured in TRs. Rows with zero total weight are zero vectors.
EmbeddingSeries lanczos_resample(const WordVectorPairs& pairs, std::span<const double> target_times, int lobes = 3);

// Row t = [row t-d for d in delays], zero where t-d falls outside the series.
EmbeddingSeries fir_expand(const EmbeddingSeries& series, std::span<const int> delays);
EmbeddingSeries fir_expand(const EmbeddingSeries& series);

// Same delay scheme on a raw matrix (used for voxel designs).
Matrix delay_matrix(const Matrix& x, std::span<const int> delays);

inline constexpr int kDefaultContextWindow = 5;
inline constexpr int kDefaultDelays[] = {1, 2, 3, 4};

}  // namespace mapguide
