#pragma once

#include "mapguide/core_data.hpp"
#include "mapguide/language_model.hpp"

#include <string>
#include <vector>

namespace mapguide {

// First-order Markov source over a made-up vocabulary. It plays the role of
// "natural text" for the toy LM and for synthetic stories.
struct TokenPrior {
  std::vector<std::string> words;
  Vector initial;      // vocab
  Matrix transition;   // vocab x vocab, rows sum to 1

  std::vector<std::string> sample(std::size_t n, Rng& rng) const;
};

TokenPrior make_token_prior(const SyntheticSpec& spec);

// Stories of `story_len` words each, stamped at one word per second.
std::vector<WordTimeline> sample_corpus(const TokenPrior& prior, std::size_t n_stories, std::size_t story_len,
                                        std::uint64_t seed);

struct SyntheticDataset {
  FmriSeries fmri;
  WordTimeline timeline;
  EmbeddingSeries ground_truth;  // undelayed, one row per TR
  std::vector<std::int64_t> auditory_voxel_ids;
  Matrix voxel_map;  // base voxels x (4 * n), the fixed random linear map
};

// Deterministic in (spec, lm). Words are spread at a constant rate over
// n_trs * tr_seconds; voxels respond to the FIR-expanded ground truth through
// a fixed random linear map, optional tanh, replication and Gaussian noise.
SyntheticDataset synth_dataset(const SyntheticSpec& spec, const LanguageModel& lm);

}  // namespace mapguide
