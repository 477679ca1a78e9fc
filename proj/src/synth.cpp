#include "mapguide/synth.hpp"

#include "mapguide/stimulus_features.hpp"

#include <cmath>
#include <set>

namespace mapguide {

namespace {

std::size_t draw(const Eigen::Ref<const RowVector>& probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return static_cast<std::size_t>(i);
  }
  return static_cast<std::size_t>(probs.size() - 1);
}

std::vector<std::string> make_words(int n, Rng& rng) {
  static constexpr std::string_view kOnsets = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (static_cast<int>(out.size()) < n) {
    std::string w;
    const int syllables = 2 + static_cast<int>(uniform_index(rng, 2));
    for (int s = 0; s < syllables; ++s) {
      w += kOnsets[uniform_index(rng, kOnsets.size())];
      w += kVowels[uniform_index(rng, kVowels.size())];
    }
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

}  // namespace

std::vector<std::string> TokenPrior::sample(std::size_t n, Rng& rng) const {
  std::vector<std::string> out;
  out.reserve(n);
  if (n == 0) return out;
  std::size_t cur = draw(initial.transpose(), rng);
  out.push_back(words[cur]);
  while (out.size() < n) {
    cur = draw(transition.row(static_cast<Index>(cur)), rng);
    out.push_back(words[cur]);
  }
  return out;
}

TokenPrior make_token_prior(const SyntheticSpec& spec) {
  spec.validate();
  auto rng = make_stream(spec.seed, "synth/prior");
  TokenPrior prior;
  prior.words = make_words(spec.vocab_size, rng);
  const Index v = spec.vocab_size;
  prior.initial = Vector::Constant(v, 1.0 / static_cast<double>(v));
  prior.transition = Matrix::Zero(v, v);
  for (Index a = 0; a < v; ++a) {
    std::set<Index> succ;
    while (static_cast<int>(succ.size()) < spec.branching) succ.insert(static_cast<Index>(uniform_index(rng, v)));
    double total = 0.0;
    for (auto b : succ) {
      const double w = -std::log(1.0 - uniform01(rng)) + 0.1;
      prior.transition(a, b) = w;
      total += w;
    }
    prior.transition.row(a) /= total;
  }
  return prior;
}

std::vector<WordTimeline> sample_corpus(const TokenPrior& prior, std::size_t n_stories, std::size_t story_len,
                                        std::uint64_t seed) {
  auto rng = make_stream(seed, "synth/corpus");
  std::vector<WordTimeline> stories;
  stories.reserve(n_stories);
  for (std::size_t s = 0; s < n_stories; ++s) {
    WordTimeline tl;
    const auto tokens = prior.sample(story_len, rng);
    for (std::size_t i = 0; i < tokens.size(); ++i) tl.entries.push_back({tokens[i], static_cast<double>(i)});
    stories.push_back(std::move(tl));
  }
  return stories;
}

SyntheticDataset synth_dataset(const SyntheticSpec& spec, const LanguageModel& lm) {
  spec.validate();
  const auto prior = make_token_prior(spec);
  for (const auto& w : prior.words)
    if (!lm.vocabulary().contains(w)) throw VocabularyError("language model does not know synthetic word '" + w + "'");

  SyntheticDataset ds;
  const double duration = spec.n_trs * spec.tr_seconds;
  const double spacing = duration / static_cast<double>(spec.n_words);
  {
    auto rng = make_stream(spec.seed, "synth/story");
    const auto tokens = prior.sample(static_cast<std::size_t>(spec.n_words), rng);
    for (std::size_t i = 0; i < tokens.size(); ++i)
      ds.timeline.entries.push_back({tokens[i], (static_cast<double>(i) + 0.5) * spacing});
  }

  std::vector<double> tr_times(static_cast<std::size_t>(spec.n_trs));
  for (std::size_t i = 0; i < tr_times.size(); ++i) tr_times[i] = static_cast<double>(i) * spec.tr_seconds;
  const auto pairs = embed_contexts(lm, ds.timeline, kDefaultContextWindow, lm.default_layer());
  ds.ground_truth = lanczos_resample(pairs, tr_times, 3);
  const auto delayed = fir_expand(ds.ground_truth);

  const Index base = spec.voxels / spec.duplication_factor;
  const Index feat = delayed.dim();
  {
    auto rng = make_stream(spec.seed, "synth/voxel_map");
    ds.voxel_map.resize(base, feat);
    const double sd = 1.0 / std::sqrt(static_cast<double>(feat));
    for (Index i = 0; i < base; ++i)
      for (Index j = 0; j < feat; ++j) ds.voxel_map(i, j) = sd * standard_normal(rng);
  }
  Matrix clean = delayed.vectors * ds.voxel_map.transpose();  // m x base
  if (spec.nonlinearity == Nonlinearity::tanh) clean = clean.array().tanh().matrix();

  ds.fmri.tr_seconds = spec.tr_seconds;
  ds.fmri.t0 = 0.0;
  ds.fmri.data.resize(spec.n_trs, spec.voxels);
  auto noise_rng = make_stream(spec.seed, "synth/noise");
  for (Index t = 0; t < spec.n_trs; ++t)
    for (Index j = 0; j < base; ++j)
      for (Index r = 0; r < spec.duplication_factor; ++r) {
        const double eps = spec.noise_sigma > 0.0 ? spec.noise_sigma * standard_normal(noise_rng) : 0.0;
        ds.fmri.data(t, j * spec.duplication_factor + r) = clean(t, j) + eps;
      }
  ds.fmri.voxel_ids.resize(static_cast<std::size_t>(spec.voxels));
  for (std::size_t i = 0; i < ds.fmri.voxel_ids.size(); ++i) ds.fmri.voxel_ids[i] = static_cast<std::int64_t>(i);
  for (Index i = 0; i < spec.auditory_voxels * spec.duplication_factor; ++i) ds.auditory_voxel_ids.push_back(i);
  return ds;
}

}  // namespace mapguide
