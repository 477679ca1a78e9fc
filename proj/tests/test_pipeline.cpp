#include "mapguide/pipeline.hpp"

#include "support.hpp"

#include <cctype>

using namespace mapguide;

namespace {

SynthConfig small_synth() {
  SynthConfig s;
  s.spec.vocab_size = 12;
  s.spec.n_words = 300;
  s.spec.n_trs = 150;
  s.spec.voxels = 30;
  s.spec.auditory_voxels = 3;
  s.spec.noise_sigma = 0.1;
  s.corpus_stories = 20;
  s.story_length = 20;
  s.test_trs = 40;
  return s;
}

ToyLmConfig quick_lm() {
  ToyLmConfig c;
  c.hidden_dim = 8;
  c.epochs = 1;
  return c;
}

}  // namespace

TEST_CASE("run config JSON round trip") {
  RunConfig c;
  c.mapper.contrastive_weight = 0.7;
  c.decode.beam_width = 3;
  c.evaluate.metrics = {Metric::bleu, Metric::wer};
  c.synth.test_trs = 77;
  c.data.fmri = "scan.json";
  const auto back = run_config_from_json(json::parse(to_json(c).dump()));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.evaluate.metrics == c.evaluate.metrics);
}

TEST_CASE("missing sections take defaults") {
  const auto c = run_config_from_json(json::parse(R"({"mapper": {"mask_ratio": 0.1}})"));
  CHECK(c.mapper.mask_ratio == 0.1);
  RunConfig d;
  d.mapper.mask_ratio = 0.1;
  CHECK(to_json(c) == to_json(d));
  CHECK(to_json(run_config_from_json(json::object())) == to_json(RunConfig{}));
}

TEST_CASE("unknown keys and bad types are rejected") {
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"mappr": {}})")), ValidationError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"mapper": {"lamda": 1}})")), ValidationError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"synth": {"test_tr": 5}})")), ValidationError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"evaluate": {"width": "wide"}})")), ValidationError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"decode": 3})")), ValidationError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"([1, 2])")), ValidationError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"evaluate": {"metrics": ["ROUGE"]}})")), ValidationError);
}

TEST_CASE("config hash is stable and sensitive") {
  RunConfig a, b;
  const auto h = config_hash(a);
  CHECK(h.size() == 16);
  for (char ch : h) CHECK(std::isxdigit(static_cast<unsigned char>(ch)));
  CHECK(config_hash(b) == h);
  CHECK(config_hash(run_config_from_json(to_json(a))) == h);
  b.decode.seed = 1;
  CHECK(config_hash(b) != h);
}

TEST_CASE("validation of every section") {
  CHECK_NOTHROW(validate(RunConfig{}));
  auto bad = [](auto mutate) {
    RunConfig c;
    mutate(c);
    CHECK_THROWS_AS(validate(c), ValidationError);
  };
  bad([](RunConfig& c) { c.synth.test_trs = c.synth.spec.n_trs; });
  bad([](RunConfig& c) { c.synth.test_trs = 1; });
  bad([](RunConfig& c) { c.evaluate.n_baselines = 1; });
  bad([](RunConfig& c) { c.evaluate.width = 0.0; });
  bad([](RunConfig& c) { c.mapper.mask_ratio = 1.0; });
  bad([](RunConfig& c) { c.mapper.contrastive_weight = -0.5; });
  bad([](RunConfig& c) { c.word_rate.ridge_lambda = -1.0; });
  bad([](RunConfig& c) { c.word_rate.delays.clear(); });
  bad([](RunConfig& c) { c.decode.beam_width = 0; });
  bad([](RunConfig& c) { c.lm.hidden_dim = 0; });
}

TEST_CASE("experiment split keeps every TR and word") {
  const auto synth = small_synth();
  const auto ex = make_experiment(synth, quick_lm());
  CHECK(ex.train_fmri.n_trs() == 110);
  CHECK(ex.test_fmri.n_trs() == 40);
  CHECK(ex.test_truth.rows() == 40);
  CHECK(ex.train_truth.rows() == 110);
  CHECK(ex.train_timeline.size() + ex.test_timeline.size() == 300);
  const double split = ex.test_fmri.t0;
  CHECK(split == doctest::Approx(110 * 2.0));
  for (double t : ex.train_timeline.times()) CHECK(t < split);
  for (double t : ex.test_timeline.times()) CHECK(t >= split);
  CHECK(ex.corpus.size() == 20);
  CHECK(ex.auditory_voxel_ids.size() == 3);

  // Same corpus and LM, different noise: the words do not change.
  auto noisy = synth;
  noisy.spec.noise_sigma = 2.0;
  const auto ex2 = make_experiment(noisy, ex.corpus, ex.lm);
  CHECK(ex2.test_timeline == ex.test_timeline);
  CHECK((ex2.test_fmri.data - ex.test_fmri.data).norm() > 0.0);
  CHECK(ex2.test_truth.vectors == ex.test_truth.vectors);

  auto wrong = synth;
  wrong.test_trs = synth.spec.n_trs;
  CHECK_THROWS_AS(make_experiment(wrong, ex.corpus, ex.lm), ValidationError);
}

TEST_CASE("stimulus embeddings follow the scan grid") {
  const auto ex = make_experiment(small_synth(), quick_lm());
  const auto e = stimulus_embeddings(ex.lm, ex.train_timeline, ex.train_fmri);
  CHECK(e.rows() == ex.train_fmri.n_trs());
  CHECK(e.dim() == 8);
  CHECK(e.times == ex.train_fmri.times());
  CHECK(e.vectors.allFinite());
}

TEST_CASE("mapper input width comes from the data") {
  const auto ex = make_experiment(small_synth(), quick_lm());
  MapperConfig c;
  c.patch_size = 10;
  CHECK(resolve_mapper_config(c, ex.train_fmri).input_voxels == 30);
  c.input_voxels = 20;
  CHECK_THROWS_AS(resolve_mapper_config(c, ex.train_fmri), ShapeError);
}

TEST_CASE("evaluating the reference against itself beats the baselines") {
  const auto ex = make_experiment(small_synth(), quick_lm());
  EvaluateConfig cfg;
  cfg.n_baselines = 10;
  cfg.metrics = {Metric::wer, Metric::bleu};
  const auto rep = evaluate_prediction(ex.test_timeline, ex.test_timeline, ex.lm, ex.corpus, cfg);
  CHECK(rep.scores.at(Metric::bleu).mean_similarity == doctest::Approx(1.0));
  CHECK(rep.scores.at(Metric::bleu).sim_zs > 2.0);
  CHECK(rep.scores.at(Metric::wer).sim_pos == 1.0);
  CHECK_THROWS_AS(evaluate_prediction(ex.test_timeline, WordTimeline{}, ex.lm, ex.corpus, cfg), ArgumentError);
}
