// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. `acceptance --only 1,3,9` runs a subset.
#define DOCTEST_CONFIG_DISABLE  // only the helpers from support.hpp are used
#include "mapguide/pipeline.hpp"

#include "cli_runner.hpp"
#include "metric_cases.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace mapguide;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- shared synthetic setup ---------------------------------------------------

// Built once: Markov-prior corpus and the toy LM trained on it.
struct World {
  RunConfig defaults;
  std::vector<WordTimeline> corpus;
  ToyLm lm;
};

World& world() {
  static World w = [] {
    RunConfig d;
    auto corpus = make_corpus(d.synth);
    auto lm = train_toy_lm(corpus, d.lm);
    return World{d, std::move(corpus), std::move(lm)};
  }();
  return w;
}

struct Trained {
  Experiment ex;
  MapperCheckpoint ckpt;
  double cosine = 0.0;
};

Trained train_on(const SynthConfig& synth, const MapperConfig& mc) {
  auto& w = world();
  Trained t{make_experiment(synth, w.corpus, w.lm), {}, 0.0};
  const auto feats = stimulus_embeddings(w.lm, t.ex.train_timeline, t.ex.train_fmri);
  t.ckpt = train_mapper(t.ex.train_fmri, feats, resolve_mapper_config(mc, t.ex.train_fmri)).checkpoint;
  t.cosine = eval_mapper(t.ckpt, t.ex.test_fmri, t.ex.test_truth);
  return t;
}

double bleu_z(const Trained& t, Guidance g) {
  auto& w = world();
  const auto wr = fit_word_rate(t.ex.train_fmri.select_voxels(t.ex.auditory_voxel_ids), t.ex.train_timeline,
                                w.defaults.word_rate.ridge_lambda, w.defaults.word_rate.delays);
  auto dc = w.defaults.decode;
  dc.guidance = g;
  const Mapper mapper(t.ckpt);
  const auto r = decode(t.ex.test_fmri, mapper, wr, w.lm, dc, &t.ex.test_truth);
  auto ec = w.defaults.evaluate;
  ec.metrics = {Metric::bleu};
  return evaluate_prediction(t.ex.test_timeline, r.transcript, w.lm, w.corpus, ec).scores.at(Metric::bleu).sim_zs;
}

// Shorter schedule for the noise/weight sweep: ten times the default rate,
// 60 epochs.
MapperConfig sweep_mapper(double lambda) {
  MapperConfig mc;
  mc.max_epochs = 60;
  mc.learning_rate = 1e-3;
  mc.contrastive_weight = lambda;
  return mc;
}

SynthConfig noisy(double sigma) {
  auto s = world().defaults.synth;
  s.spec.noise_sigma = sigma;
  return s;
}

// Sweep results shared by the ordering and correlation criteria.
struct SweepPoint {
  double sigma;
  double lambda;
  double cosine;
  double z;
};

std::vector<SweepPoint>& sweep() {
  static std::vector<SweepPoint> points = [] {
    std::vector<SweepPoint> out;
    const std::vector<std::pair<double, double>> grid = {{0.0, 0.2}, {1.0, 0.2}, {2.0, 0.2},
                                                         {4.0, 0.2}, {1.0, 0.0}, {2.0, 0.0}};
    for (const auto& [sigma, lambda] : grid) {
      const auto t = train_on(noisy(sigma), sweep_mapper(lambda));
      out.push_back({sigma, lambda, t.cosine, bleu_z(t, Guidance::mapper)});
    }
    return out;
  }();
  return points;
}

// --- criteria -------------------------------------------------------------------

Outcome loss_oracles() {
  auto rng = make_stream(11, "acceptance/losses");
  double worst = 0.0;
  for (int b = 0; b < 100; ++b) {
    const Index n = 1 + static_cast<Index>(uniform_index(rng, 8));
    const Index d = 1 + static_cast<Index>(uniform_index(rng, 16));
    Matrix e(n, d), e_hat(n, d);
    for (Index i = 0; i < e.size(); ++i) {
      e.data()[i] = standard_normal(rng);
      e_hat.data()[i] = standard_normal(rng);
    }
    const double eta = 0.05 + 0.95 * uniform01(rng);
    const Matrix h = testing::unit_rows(n, d, rng);
    const Matrix hm = testing::unit_rows(n, d, rng);
    const double m_err = std::abs(static_cast<long double>(mse_loss(e, e_hat)) - testing::oracle_mse(e, e_hat));
    const double c_err = std::abs(static_cast<long double>(infonce_loss({h, hm}, eta)) -
                                  testing::oracle_infonce(h, hm, static_cast<long double>(eta)));
    worst = std::max({worst, m_err, c_err});
  }
  return {worst <= 1e-6, fmt("worst abs error %.3g over 100 batches", worst)};
}

Outcome gradient_check() {
  const auto g = testing::check_hybrid_gradients(1);
  return {g.max_rel_error < 1e-4, fmt("max relative error %.3g over %zu parameters", g.max_rel_error, g.checked)};
}

Outcome signal_pipeline() {
  auto rng = make_stream(12, "acceptance/signal");
  bool ok = true;
  double worst = 0.0;

  // Constants survive resampling wherever words are present.
  WordVectorPairs flat;
  flat.vectors = Matrix(60, 3);
  for (Index i = 0; i < 60; ++i) flat.vectors.row(i) << 1.5, -2.0, 0.25;
  double t = 0.3;
  for (int i = 0; i < 60; ++i) {
    flat.times.push_back(t);
    t += 0.2 + uniform01(rng);
  }
  std::vector<double> grid;
  for (int i = 0; i < 30; ++i) grid.push_back(2.0 * i);
  const auto out = lanczos_resample(flat, grid, 3);
  int covered = 0;
  for (Index r = 0; r < out.rows(); ++r) {
    if (out.vectors.row(r).isZero(0.0)) continue;
    ++covered;
    worst = std::max(worst, (out.vectors.row(r) - flat.vectors.row(0)).cwiseAbs().maxCoeff());
  }
  ok = ok && covered > 20;

  // A word sitting on a grid node comes back unchanged.
  WordVectorPairs node;
  node.vectors = Matrix(1, 2);
  node.vectors << 3.0, -1.0;
  node.times = {4.0};
  const std::vector<double> small{0.0, 2.0, 4.0, 6.0, 8.0};
  worst = std::max(worst, (lanczos_resample(node, small, 3).vectors.row(2) - node.vectors.row(0)).cwiseAbs().maxCoeff());
  ok = ok && worst <= 1e-6;

  // FIR: m x 4n, row k holds zeros in every block whose delay exceeds k.
  EmbeddingSeries s;
  s.vectors = testing::random_matrix(12, 5, rng);
  for (int i = 0; i < 12; ++i) s.times.push_back(2.0 * i);
  const auto fir = fir_expand(s);
  ok = ok && fir.rows() == 12 && fir.dim() == 20 && fir.delayed;
  for (Index k = 0; k < 4; ++k)
    for (Index block = 0; block < 4; ++block) {
      const auto seg = fir.vectors.row(k).segment(block * 5, 5);
      if (block + 1 > k) ok = ok && seg.isZero(0.0);
      else ok = ok && seg == s.vectors.row(k - block - 1);
    }
  return {ok, fmt("Lanczos worst error %.3g, %d covered rows; FIR %lldx%lld", worst, covered,
                  static_cast<long long>(fir.rows()), static_cast<long long>(fir.dim()))};
}

std::optional<Trained> g_zero_noise;

Outcome stage_a_recovery() {
  const auto start = Clock::now();
  g_zero_noise = train_on(world().defaults.synth, world().defaults.mapper);
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  const auto& spec = world().defaults.synth.spec;
  return {g_zero_noise->cosine >= 0.95 && secs < 600.0,
          fmt("V=%d D=%d m=%d: held-out cosine %.4f in %.0f s", spec.voxels, g_zero_noise->ckpt.config.embed_dim,
              spec.n_trs, g_zero_noise->cosine, secs)};
}

Outcome contrastive_direction() {
  // Duplicated voxels with heavy noise, larger batches for more negatives.
  auto synth = world().defaults.synth;
  synth.spec.noise_sigma = 1.0;
  synth.spec.duplication_factor = 4;
  synth.spec.n_trs = 600;
  synth.spec.n_words = 1200;
  synth.test_trs = 120;
  auto& w = world();
  const auto ex = make_experiment(synth, w.corpus, w.lm);
  const auto feats = stimulus_embeddings(w.lm, ex.train_timeline, ex.train_fmri);
  double sum = 0.0;
  std::ostringstream per;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto mc = resolve_mapper_config(w.defaults.mapper, ex.train_fmri);
    mc.max_epochs = 80;
    mc.learning_rate = 1e-3;
    mc.batch_size = 128;
    mc.seed = seed;
    mc.mask_ratio = 0.05;
    mc.contrastive_weight = 0.2;
    const double with = eval_mapper(train_mapper(ex.train_fmri, feats, mc).checkpoint, ex.test_fmri, ex.test_truth);
    mc.contrastive_weight = 0.0;
    const double without = eval_mapper(train_mapper(ex.train_fmri, feats, mc).checkpoint, ex.test_fmri, ex.test_truth);
    sum += with - without;
    per << (seed ? " " : "") << fmt("%+.3f", with - without);
  }
  const double mean = sum / 5.0;
  return {mean > 0.0, fmt("mean cosine gain %+.4f (per seed: %s)", mean, per.str().c_str())};
}

Outcome oracle_upper_bound() {
  const auto start = Clock::now();
  if (!g_zero_noise) g_zero_noise = train_on(world().defaults.synth, world().defaults.mapper);
  const double oracle = bleu_z(*g_zero_noise, Guidance::oracle);
  const double none = bleu_z(*g_zero_noise, Guidance::none);
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  return {oracle >= 3.0 && std::abs(none) <= 1.0 && secs < 900.0,
          fmt("BLEU story z: oracle %.2f, unguided %.2f (%d baselines, %.0f s)", oracle, none,
              world().defaults.evaluate.n_baselines, secs)};
}

Outcome ordering() {
  const auto t = train_on(noisy(1.0), sweep_mapper(0.2));
  const double oracle = bleu_z(t, Guidance::oracle);
  const double mapper = bleu_z(t, Guidance::mapper);
  const double none = bleu_z(t, Guidance::none);
  return {oracle > mapper && mapper > none,
          fmt("noise 1.0 (cosine %.3f): oracle %.2f > mapper %.2f > unguided %.2f", t.cosine, oracle, mapper, none)};
}

Outcome correlation() {
  std::vector<std::pair<double, double>> runs;
  std::ostringstream pts;
  for (const auto& p : sweep()) {
    runs.push_back({p.cosine, p.z});
    pts << (runs.size() > 1 ? ", " : "") << fmt("s=%g l=%g: %.3f/%.2f", p.sigma, p.lambda, p.cosine, p.z);
  }
  const double rho = correlation_report(runs).spearman;
  return {runs.size() >= 5 && rho > 0.6,
          fmt("spearman %.3f over %zu configs (cosine/z: %s)", rho, runs.size(), pts.str().c_str())};
}

Outcome metric_harness() {
  const auto bad = testing::run_metric_table();
  // Positive rate counts strict wins only; equal means score zero.
  const std::vector<std::vector<double>> base = {{0.0, 1.0, 2.0}, {2.0, 3.0, 4.0}};
  const auto tie = normalized_scores({1.0, 2.0, 3.0}, base);
  const bool eq7 = tie.sim_pos == 0.0 && normalized_scores({1.0, 2.5, 3.0}, base).sim_pos == 1.0 / 3.0;
  const bool eq8 = tie.sim_zs == 0.0;
  std::string first;
  if (!bad.empty())
    first = fmt("; first mismatch: case %zu %s got %.6g want %.6g", bad.front().index, bad.front().what.c_str(),
                bad.front().got, bad.front().want);
  return {bad.empty() && eq7 && eq8,
          fmt("%zu cases, %zu mismatches; positive-rate tie %s; zero-numerator z %s%s", testing::metric_cases().size(),
              bad.size(), eq7 ? "ok" : "wrong", eq8 ? "ok" : "wrong", first.c_str())};
}

Outcome determinism() {
  testing::TempDir tmp;
  const auto config = tmp / "tiny.json";
  write_text_file(config, testing::kTinyConfig);
  std::vector<fs::path> runs;
  for (const char* name : {"a", "b"}) {
    const auto dir = tmp / name;
    for (const char* cmd : {"synth", "features", "train", "decode", "evaluate"}) {
      const auto r = testing::run_cli({cmd, "--config", config.string(), "--run-dir", dir.string()}, tmp.path(),
                                      tmp / "roots");
      if (r.exit_code != 0) return {false, fmt("run %s: `%s` exited %d: %s", name, cmd, r.exit_code, r.err.c_str())};
    }
    runs.push_back(dir);
  }
  bool same = true;
  for (const char* f : {"transcript.jsonl", "report.json", "train_log.json", "decode_log.json"})
    same = same && read_text_file(runs[0] / f) == read_text_file(runs[1] / f);
  const auto words = load_timeline(runs[0] / "transcript.jsonl").size();
  return {same && words > 0, fmt("two runs, %zu-word transcripts, artifacts %s", words, same ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "criterion numbers to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"loss oracles", loss_oracles},
      {"hybrid gradient check", gradient_check},
      {"signal pipeline", signal_pipeline},
      {"stage-A recovery", stage_a_recovery},
      {"contrastive direction", contrastive_direction},
      {"oracle upper bound", oracle_upper_bound},
      {"guidance ordering", ordering},
      {"cosine/BLEU correlation", correlation},
      {"metric harness", metric_harness},
      {"determinism", determinism},
  };
  const std::set<int> wanted(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[i].first << ": " << o.detail
              << fmt(" [%.1f s]", secs) << std::endl;
  }
  const std::size_t ran = wanted.empty() ? criteria.size() : wanted.size();
  std::cout << (failures == 0 ? "all criteria passed" : fmt("%d of %zu criteria failed", failures, ran)) << std::endl;
  return failures == 0 ? 0 : 1;
}
