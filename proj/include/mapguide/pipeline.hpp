#pragma once

#include "mapguide/core_data.hpp"
#include "mapguide/evaluation.hpp"
#include "mapguide/guided_decoder.hpp"
#include "mapguide/io.hpp"
#include "mapguide/language_model.hpp"
#include "mapguide/mapper.hpp"
#include "mapguide/stimulus_features.hpp"
#include "mapguide/synth.hpp"
#include "mapguide/word_rate.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mapguide {

// Input paths. Empty entries fall back to the run directory's own artifacts.
struct DataPaths {
  std::string fmri;
  std::string timeline;
  std::string features;
  std::string corpus;
  std::string lm;
  std::string checkpoint;
  std::string word_rate;
  std::string auditory_voxels;
  std::string voxel_mask;
  std::string test_fmri;
  std::string reference;
  std::string prediction;
  std::string oracle;
};

struct WordRateConfig {
  double ridge_lambda = 1.0;
  std::vector<int> delays = kWordRateDelays;
};

struct EvaluateConfig {
  double width = 20.0;
  double stride = 2.0;
  int n_baselines = 200;
  std::uint64_t seed = 0;
  std::vector<Metric> metrics = kAllMetrics;
};

// Synthetic session plus the corpus used to train the toy LM.
struct SynthConfig {
  SyntheticSpec spec;
  int corpus_stories = 200;
  int story_length = 60;
  // Trailing TRs held out as the decoding test story.
  int test_trs = 200;
};

struct RunConfig {
  DataPaths data;
  ToyLmConfig lm;
  MapperConfig mapper;
  WordRateConfig word_rate;
  DecodeConfig decode;
  EvaluateConfig evaluate;
  SynthConfig synth;
};

json to_json(const RunConfig& c);
// Missing sections and keys take defaults; unknown keys are rejected.
RunConfig run_config_from_json(const json& j);
// Checks every section (mapper input width is filled in later from data).
void validate(const RunConfig& c);
// Hex digest of the canonical JSON form.
std::string config_hash(const RunConfig& c);

// The whole synthetic setup: Markov-prior corpus, toy LM trained on it, one
// long session split into a training part and a held-out test story.
struct Experiment {
  std::vector<WordTimeline> corpus;
  ToyLm lm;
  FmriSeries train_fmri;
  WordTimeline train_timeline;
  FmriSeries test_fmri;
  WordTimeline test_timeline;
  EmbeddingSeries test_truth;
  EmbeddingSeries train_truth;
  std::vector<std::int64_t> auditory_voxel_ids;
};

Experiment make_experiment(const SynthConfig& synth, const ToyLmConfig& lm_config);
// Same corpus and LM, different session (e.g. another noise level).
Experiment make_experiment(const SynthConfig& synth, const std::vector<WordTimeline>& corpus, const ToyLm& lm);

std::vector<WordTimeline> make_corpus(const SynthConfig& synth);

// LM context states per word, resampled onto the scan's TR grid.
EmbeddingSeries stimulus_embeddings(const LanguageModel& lm, const WordTimeline& timeline, const FmriSeries& grid,
                                    int window = kDefaultContextWindow, int layer = 0);

// Mapper config with the input width taken from the data.
MapperConfig resolve_mapper_config(MapperConfig c, const FmriSeries& fmri);

MetricReport evaluate_prediction(const WordTimeline& reference, const WordTimeline& prediction,
                                 const LanguageModel& lm, const std::vector<WordTimeline>& idf_stories,
                                 const EvaluateConfig& cfg);

}  // namespace mapguide
