#include "mapguide/guided_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mapguide {

void DecodeConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("decode config: " + m); };
  if (beam_width < 1) fail("beam_width must be >= 1");
  if (continuations < 1) fail("continuations must be >= 1");
  if (!(lm_weight >= 0.0 && lm_weight <= 1.0)) fail("lm_weight must be in [0, 1]");
  if (context_window < 0) fail("context_window must be >= 0");
  if (layer < 0) fail("layer must be >= 0");
}

std::string to_string(Guidance g) {
  switch (g) {
    case Guidance::mapper: return "mapper";
    case Guidance::oracle: return "oracle";
    case Guidance::none: return "none";
  }
  return "mapper";
}

Guidance guidance_from_string(const std::string& s) {
  if (s == "mapper") return Guidance::mapper;
  if (s == "oracle") return Guidance::oracle;
  if (s == "none") return Guidance::none;
  throw ValidationError("guidance must be one of mapper|oracle|none, got '" + s + "'");
}

json to_json(const DecodeConfig& c) {
  return {{"beam_width", c.beam_width},
          {"continuations", c.continuations},
          {"guidance", to_string(c.guidance)},
          {"proposal", c.proposal == Proposal::top_k ? "top_k" : "sample"},
          {"lm_weight", c.lm_weight},
          {"context_window", c.context_window},
          {"layer", c.layer},
          {"seed", c.seed}};
}

DecodeConfig decode_config_from_json(const json& j) {
  reject_unknown_keys(j, {"beam_width", "continuations", "guidance", "proposal", "lm_weight", "context_window", "layer",
                          "seed"},
                      "decode config");
  DecodeConfig c;
  try {
    c.beam_width = j.value("beam_width", c.beam_width);
    c.continuations = j.value("continuations", c.continuations);
    c.guidance = guidance_from_string(j.value("guidance", std::string("mapper")));
    const auto p = j.value("proposal", std::string("top_k"));
    if (p == "top_k") {
      c.proposal = Proposal::top_k;
    } else if (p == "sample") {
      c.proposal = Proposal::sample;
    } else {
      throw ValidationError("decode config: proposal must be top_k or sample");
    }
    c.lm_weight = j.value("lm_weight", c.lm_weight);
    c.context_window = j.value("context_window", c.context_window);
    c.layer = j.value("layer", c.layer);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("decode config: ") + e.what());
  }
  return c;
}

ContextEmbedder::ContextEmbedder(const LanguageModel& lm, int layer, int window)
    : lm_(lm), layer_(layer == 0 ? lm.default_layer() : layer), window_(window) {
  if (layer_ < 1 || layer_ > lm.n_layers()) throw ArgumentError("embedding layer out of range");
  if (window_ < 0) throw ArgumentError("context window must be >= 0");
}

const Vector& ContextEmbedder::embed_tail(std::span<const TokenId> tokens) {
  if (tokens.empty()) throw ArgumentError("cannot embed an empty context");
  const std::size_t keep = std::min(tokens.size(), static_cast<std::size_t>(window_) + 1);
  std::vector<TokenId> key(tokens.end() - static_cast<std::ptrdiff_t>(keep), tokens.end());
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  Vector v = lm_.hidden_state(key, layer_);
  return cache_.emplace(std::move(key), std::move(v)).first->second;
}

double score_continuation(const BeamHypothesis& candidate, const EmbeddingSeries& target, ContextEmbedder& embedder) {
  if (candidate.tokens.empty()) throw ArgumentError("candidate has no tokens");
  if (target.rows() == 0) throw ArgumentError("empty guidance target");
  const Vector& v = embedder.embed_tail(candidate.tokens);
  if (v.size() != target.dim()) throw ShapeError("candidate embedding and target dimensions differ");
  const Index row = target.nearest_row(candidate.times.back());
  return cosine(v.transpose(), target.vectors.row(row));
}

double score_continuation(const BeamHypothesis& candidate, const EmbeddingSeries& target, const LanguageModel& lm,
                          int layer, int window) {
  ContextEmbedder embedder(lm, layer, window);
  return score_continuation(candidate, target, embedder);
}

namespace {

bool lexicographic_less(const std::vector<TokenId>& a, const std::vector<TokenId>& b, const Vocabulary& vocab) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), [&](TokenId x, TokenId y) {
    return vocab.token(x) < vocab.token(y);
  });
}

std::vector<TokenId> propose(const Vector& probs, const DecodeConfig& cfg, Rng& rng) {
  std::vector<TokenId> ids;
  for (TokenId i = 0; i < static_cast<TokenId>(probs.size()); ++i)
    if (i != Vocabulary::kBos) ids.push_back(i);
  const auto k = std::min(ids.size(), static_cast<std::size_t>(cfg.continuations));
  if (cfg.proposal == Proposal::top_k) {
    std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) { return probs(a) > probs(b); });
    ids.resize(k);
    return ids;
  }
  // Sequential draws without replacement, proportional to probability.
  std::vector<TokenId> out;
  std::vector<double> w;
  for (auto id : ids) w.push_back(probs(id));
  while (out.size() < k) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = uniform01(rng) * total;
      double acc = 0.0;
      pick = w.size() - 1;
      for (std::size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        if (u < acc && w[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = uniform_index(rng, w.size());
    }
    out.push_back(ids[pick]);
    ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(pick));
    w.erase(w.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

}  // namespace

bool ranks_before(const BeamHypothesis& a, const BeamHypothesis& b, const DecodeConfig& cfg, const Vocabulary& vocab) {
  if (cfg.guidance != Guidance::none) {
    const double ka = (1.0 - cfg.lm_weight) * a.guidance_score + cfg.lm_weight * a.lm_logprob;
    const double kb = (1.0 - cfg.lm_weight) * b.guidance_score + cfg.lm_weight * b.lm_logprob;
    if (ka != kb) return ka > kb;
  }
  if (a.lm_logprob != b.lm_logprob) return a.lm_logprob > b.lm_logprob;
  return lexicographic_less(a.tokens, b.tokens, vocab);
}

std::vector<BeamHypothesis> beam_step(const std::vector<BeamHypothesis>& beams, double next_time,
                                      const EmbeddingSeries* target, const LanguageModel& lm, const DecodeConfig& cfg,
                                      ContextEmbedder& embedder, Rng& rng) {
  if (beams.empty() || static_cast<int>(beams.size()) > cfg.beam_width)
    throw ArgumentError("beam count must be in [1, beam_width]");
  const bool guided = cfg.guidance != Guidance::none;
  if (guided && target == nullptr) throw ArgumentError("guided decoding needs a target series");

  std::vector<BeamHypothesis> candidates;
  candidates.reserve(beams.size() * static_cast<std::size_t>(cfg.continuations));
  for (const auto& beam : beams) {
    const Vector probs = lm.next_token_distribution(beam.tokens);
    for (auto id : propose(probs, cfg, rng)) {
      BeamHypothesis c = beam;
      c.tokens.push_back(id);
      c.times.push_back(next_time);
      c.lm_logprob += std::log(std::max(probs(id), 1e-300));
      if (guided) {
        c.guidance_sum += score_continuation(c, *target, embedder);
        c.guidance_score = c.guidance_sum / static_cast<double>(c.tokens.size());
      }
      candidates.push_back(std::move(c));
    }
  }
  const auto keep = std::min(candidates.size(), static_cast<std::size_t>(cfg.beam_width));
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                    [&](const BeamHypothesis& a, const BeamHypothesis& b) {
                      return ranks_before(a, b, cfg, lm.vocabulary());
                    });
  candidates.resize(keep);
  return candidates;
}

DecodeResult decode_with_target(const std::vector<double>& word_times, const EmbeddingSeries* target,
                                const LanguageModel& lm, const DecodeConfig& cfg) {
  cfg.validate();
  if (cfg.guidance != Guidance::none && (target == nullptr || target->rows() == 0))
    throw ArgumentError("guided decoding needs a non-empty target series");
  ContextEmbedder embedder(lm, cfg.layer, cfg.context_window);
  auto rng = make_stream(cfg.seed, "decode/proposals");
  DecodeResult result;
  std::vector<BeamHypothesis> beams{BeamHypothesis{}};
  for (double t : word_times) {
    beams = beam_step(beams, t, target, lm, cfg, embedder, rng);
    StepLog log;
    log.time = t;
    for (const auto& b : beams) {
      log.guidance_scores.push_back(b.guidance_score);
      log.lm_logprobs.push_back(b.lm_logprob);
    }
    result.steps.push_back(std::move(log));
  }
  result.best = beams.front();
  for (std::size_t i = 0; i < result.best.tokens.size(); ++i)
    result.transcript.entries.push_back({lm.vocabulary().token(result.best.tokens[i]), result.best.times[i]});
  return result;
}

DecodeResult decode(const FmriSeries& fmri, const Mapper& mapper, const WordRateModel& word_rate,
                    const LanguageModel& lm, const DecodeConfig& cfg, const EmbeddingSeries* oracle) {
  const auto times = predict_word_times(word_rate, fmri);
  switch (cfg.guidance) {
    case Guidance::none: {
      // Without guidance every ranking collapses onto LM likelihood, which
      // loops; unguided decoding is an ancestral LM sample instead.
      auto sample_path = cfg;
      sample_path.beam_width = 1;
      sample_path.continuations = 1;
      sample_path.proposal = Proposal::sample;
      return decode_with_target(times, nullptr, lm, sample_path);
    }
    case Guidance::oracle:
      if (oracle == nullptr) throw ArgumentError("oracle guidance needs ground-truth embeddings");
      return decode_with_target(times, oracle, lm, cfg);
    case Guidance::mapper: {
      const auto target = forward_map(mapper, fmri);
      return decode_with_target(times, &target, lm, cfg);
    }
  }
  throw ArgumentError("unknown guidance mode");
}

json decode_log_json(const DecodeResult& r) {
  json steps = json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"time", s.time}, {"guidance_scores", s.guidance_scores}, {"lm_logprobs", s.lm_logprobs}});
  return {{"steps", steps},
          {"best", {{"lm_logprob", r.best.lm_logprob}, {"guidance_score", r.best.guidance_score},
                    {"n_words", r.best.tokens.size()}}}};
}

}  // namespace mapguide
