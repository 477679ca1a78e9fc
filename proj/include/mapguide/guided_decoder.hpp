#pragma once

#include "mapguide/core_data.hpp"
#include "mapguide/io.hpp"
#include "mapguide/language_model.hpp"
#include "mapguide/mapper.hpp"
#include "mapguide/word_rate.hpp"

#include <map>
#include <optional>
#include <vector>

namespace mapguide {

struct BeamHypothesis {
  std::vector<TokenId> tokens;
  std::vector<double> times;
  double lm_logprob = 0.0;
  // Mean per-word cosine to the guidance target; guidance_sum is the running total.
  double guidance_score = 0.0;
  double guidance_sum = 0.0;
};

enum class Guidance { mapper, oracle, none };
enum class Proposal { top_k, sample };

struct DecodeConfig {
  int beam_width = 10;
  int continuations = 20;
  Guidance guidance = Guidance::mapper;
  Proposal proposal = Proposal::top_k;
  // Ranking key is (1 - lm_weight) * guidance + lm_weight * lm_logprob; 0 ranks
  // by similarity alone.
  double lm_weight = 0.0;
  int context_window = 5;
  // 0 picks the LM's default (middle) layer.
  int layer = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

json to_json(const DecodeConfig& c);
DecodeConfig decode_config_from_json(const json& j);
std::string to_string(Guidance g);
Guidance guidance_from_string(const std::string& s);

// Memoized context -> hidden state lookups for one LM and layer.
class ContextEmbedder {
 public:
  ContextEmbedder(const LanguageModel& lm, int layer, int window);
  // State for the last `window + 1` tokens of `tokens`.
  const Vector& embed_tail(std::span<const TokenId> tokens);
  int layer() const { return layer_; }
  int window() const { return window_; }

 private:
  const LanguageModel& lm_;
  int layer_;
  int window_;
  std::map<std::vector<TokenId>, Vector> cache_;
};

// Cosine between the candidate's trailing-context embedding and the target
// row nearest its last word time.
double score_continuation(const BeamHypothesis& candidate, const EmbeddingSeries& target, ContextEmbedder& embedder);
double score_continuation(const BeamHypothesis& candidate, const EmbeddingSeries& target, const LanguageModel& lm,
                          int layer, int window = 5);

// Strict weak ordering used to pick survivors: true when a ranks before b.
bool ranks_before(const BeamHypothesis& a, const BeamHypothesis& b, const DecodeConfig& cfg, const Vocabulary& vocab);

struct StepLog {
  double time = 0.0;
  std::vector<double> guidance_scores;
  std::vector<double> lm_logprobs;
};

// One search step: extend each beam by `continuations` proposals, score, keep
// the best `beam_width`.
std::vector<BeamHypothesis> beam_step(const std::vector<BeamHypothesis>& beams, double next_time,
                                      const EmbeddingSeries* target, const LanguageModel& lm, const DecodeConfig& cfg,
                                      ContextEmbedder& embedder, Rng& rng);

struct DecodeResult {
  WordTimeline transcript;
  std::vector<StepLog> steps;
  BeamHypothesis best;
};

// Search over the given word times against a target series (null for
// guidance == none).
DecodeResult decode_with_target(const std::vector<double>& word_times, const EmbeddingSeries* target,
                                const LanguageModel& lm, const DecodeConfig& cfg);

// Full Stage B: word times from the word-rate model, targets from the mapper
// (or `oracle` when guidance == oracle). guidance == none draws a single
// ancestral LM sample on the same time grid.
DecodeResult decode(const FmriSeries& fmri, const Mapper& mapper, const WordRateModel& word_rate,
                    const LanguageModel& lm, const DecodeConfig& cfg,
                    const EmbeddingSeries* oracle = nullptr);

json decode_log_json(const DecodeResult& r);

}  // namespace mapguide
