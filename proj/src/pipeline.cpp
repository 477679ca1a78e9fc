#include "mapguide/pipeline.hpp"

#include "mapguide/stimulus_features.hpp"

#include <cstdio>

namespace mapguide {

namespace {

json data_to_json(const DataPaths& d) {
  return {{"fmri", d.fmri},
          {"timeline", d.timeline},
          {"features", d.features},
          {"corpus", d.corpus},
          {"lm", d.lm},
          {"checkpoint", d.checkpoint},
          {"word_rate", d.word_rate},
          {"auditory_voxels", d.auditory_voxels},
          {"voxel_mask", d.voxel_mask},
          {"test_fmri", d.test_fmri},
          {"reference", d.reference},
          {"prediction", d.prediction},
          {"oracle", d.oracle}};
}

DataPaths data_from_json(const json& j) {
  reject_unknown_keys(j, {"fmri", "timeline", "features", "corpus", "lm", "checkpoint", "word_rate", "auditory_voxels",
                          "voxel_mask", "test_fmri", "reference", "prediction", "oracle"},
                      "data");
  DataPaths d;
  auto get = [&](const char* k, std::string& out) { out = j.value(k, out); };
  get("fmri", d.fmri);
  get("timeline", d.timeline);
  get("features", d.features);
  get("corpus", d.corpus);
  get("lm", d.lm);
  get("checkpoint", d.checkpoint);
  get("word_rate", d.word_rate);
  get("auditory_voxels", d.auditory_voxels);
  get("voxel_mask", d.voxel_mask);
  get("test_fmri", d.test_fmri);
  get("reference", d.reference);
  get("prediction", d.prediction);
  get("oracle", d.oracle);
  return d;
}

json evaluate_to_json(const EvaluateConfig& e) {
  std::vector<std::string> metrics;
  for (auto m : e.metrics) metrics.push_back(to_string(m));
  return {{"width", e.width},
          {"stride", e.stride},
          {"n_baselines", e.n_baselines},
          {"seed", e.seed},
          {"metrics", metrics}};
}

EvaluateConfig evaluate_from_json(const json& j) {
  reject_unknown_keys(j, {"width", "stride", "n_baselines", "seed", "metrics"}, "evaluate");
  EvaluateConfig e;
  e.width = j.value("width", e.width);
  e.stride = j.value("stride", e.stride);
  e.n_baselines = j.value("n_baselines", e.n_baselines);
  e.seed = j.value("seed", e.seed);
  if (j.contains("metrics")) {
    e.metrics.clear();
    for (const auto& m : j.at("metrics").get<std::vector<std::string>>()) e.metrics.push_back(metric_from_string(m));
  }
  return e;
}

json synth_to_json(const SynthConfig& s) {
  json j = to_json(s.spec);
  j["corpus_stories"] = s.corpus_stories;
  j["story_length"] = s.story_length;
  j["test_trs"] = s.test_trs;
  return j;
}

SynthConfig synth_from_json(json j) {
  SynthConfig s;
  s.corpus_stories = j.value("corpus_stories", s.corpus_stories);
  s.story_length = j.value("story_length", s.story_length);
  s.test_trs = j.value("test_trs", s.test_trs);
  j.erase("corpus_stories");
  j.erase("story_length");
  j.erase("test_trs");
  s.spec = synthetic_spec_from_json(j);
  return s;
}

json section(const json& j, const char* name) {
  if (!j.contains(name)) return json::object();
  const auto& s = j.at(name);
  if (!s.is_object()) throw ValidationError(std::string("config section '") + name + "' must be an object");
  return s;
}

}  // namespace

json to_json(const RunConfig& c) {
  return {{"data", data_to_json(c.data)},
          {"lm", to_json(c.lm)},
          {"mapper", to_json(c.mapper)},
          {"word_rate", {{"ridge_lambda", c.word_rate.ridge_lambda}, {"delays", c.word_rate.delays}}},
          {"decode", to_json(c.decode)},
          {"evaluate", evaluate_to_json(c.evaluate)},
          {"synth", synth_to_json(c.synth)}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("run config must be a JSON object");
  reject_unknown_keys(j, {"data", "lm", "mapper", "word_rate", "decode", "evaluate", "synth"}, "run config");
  RunConfig c;
  try {
    c.data = data_from_json(section(j, "data"));
    c.lm = toy_lm_config_from_json(section(j, "lm"));
    c.mapper = mapper_config_from_json(section(j, "mapper"));
    const auto wr = section(j, "word_rate");
    reject_unknown_keys(wr, {"ridge_lambda", "delays"}, "word_rate");
    c.word_rate.ridge_lambda = wr.value("ridge_lambda", c.word_rate.ridge_lambda);
    c.word_rate.delays = wr.value("delays", c.word_rate.delays);
    c.decode = decode_config_from_json(section(j, "decode"));
    c.evaluate = evaluate_from_json(section(j, "evaluate"));
    c.synth = synth_from_json(section(j, "synth"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
  return c;
}

void validate(const RunConfig& c) {
  c.lm.validate();
  auto m = c.mapper;
  if (m.input_voxels == 0) m.input_voxels = 1;
  m.validate();
  if (!(c.word_rate.ridge_lambda >= 0.0)) throw ValidationError("word_rate: ridge_lambda must be >= 0");
  if (c.word_rate.delays.empty()) throw ValidationError("word_rate: delays must not be empty");
  c.decode.validate();
  if (!(c.evaluate.width > 0.0)) throw ValidationError("evaluate: width must be > 0");
  if (!(c.evaluate.stride > 0.0)) throw ValidationError("evaluate: stride must be > 0");
  if (c.evaluate.n_baselines < 2) throw ValidationError("evaluate: n_baselines must be >= 2");
  if (c.evaluate.metrics.empty()) throw ValidationError("evaluate: metrics must not be empty");
  c.synth.spec.validate();
  if (c.synth.corpus_stories < 1) throw ValidationError("synth: corpus_stories must be >= 1");
  if (c.synth.story_length < 1) throw ValidationError("synth: story_length must be >= 1");
  if (c.synth.test_trs < 2 || c.synth.test_trs >= c.synth.spec.n_trs)
    throw ValidationError("synth: test_trs must be in [2, n_trs)");
}

std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
  return buf;
}

std::vector<WordTimeline> make_corpus(const SynthConfig& synth) {
  const auto prior = make_token_prior(synth.spec);
  return sample_corpus(prior, static_cast<std::size_t>(synth.corpus_stories),
                       static_cast<std::size_t>(synth.story_length), synth.spec.seed);
}

Experiment make_experiment(const SynthConfig& synth, const ToyLmConfig& lm_config) {
  auto corpus = make_corpus(synth);
  auto lm = train_toy_lm(corpus, lm_config);
  return make_experiment(synth, corpus, lm);
}

Experiment make_experiment(const SynthConfig& synth, const std::vector<WordTimeline>& corpus, const ToyLm& lm) {
  const auto ds = synth_dataset(synth.spec, lm);
  const Index m = ds.fmri.n_trs();
  const Index test = synth.test_trs;
  if (test < 2 || test >= m) throw ValidationError("synth: test_trs must be in [2, n_trs)");
  const Index train = m - test;
  const double split_time = ds.fmri.time_at(train);
  Experiment ex{corpus,
                lm,
                ds.fmri.slice_rows(0, train),
                ds.timeline.between(-1e300, split_time),
                ds.fmri.slice_rows(train, test),
                ds.timeline.between(split_time, 1e300),
                ds.ground_truth.slice_rows(train, test),
                ds.ground_truth.slice_rows(0, train),
                ds.auditory_voxel_ids};
  return ex;
}

EmbeddingSeries stimulus_embeddings(const LanguageModel& lm, const WordTimeline& timeline, const FmriSeries& grid,
                                    int window, int layer) {
  const auto pairs = embed_contexts(lm, timeline, window, layer == 0 ? lm.default_layer() : layer);
  const auto times = grid.times();
  // Lanczos distances are measured relative to the grid origin.
  return lanczos_resample(pairs, times, 3);
}

MapperConfig resolve_mapper_config(MapperConfig c, const FmriSeries& fmri) {
  if (c.input_voxels == 0) c.input_voxels = static_cast<int>(fmri.n_voxels());
  if (c.input_voxels != fmri.n_voxels())
    throw ShapeError("mapper input_voxels (" + std::to_string(c.input_voxels) + ") does not match the scan (" +
                     std::to_string(fmri.n_voxels()) + ")");
  c.validate();
  return c;
}

MetricReport evaluate_prediction(const WordTimeline& reference, const WordTimeline& prediction,
                                 const LanguageModel& lm, const std::vector<WordTimeline>& idf_stories,
                                 const EvaluateConfig& cfg) {
  if (prediction.empty()) throw ArgumentError("prediction timeline is empty");
  const auto baselines = random_baseline(lm, prediction.times(), cfg.n_baselines, cfg.seed);
  const IdfTable idf(idf_stories);
  TokenEmbedder embedder(lm);
  MetricContext ctx{&embedder, &idf};
  WindowOptions opt;
  opt.width = cfg.width;
  opt.stride = cfg.stride;
  return evaluate_transcript(reference, prediction, baselines, cfg.metrics, ctx, opt);
}

}  // namespace mapguide
