#include "mapguide/stimulus_features.hpp"
#include "mapguide/synth.hpp"

#include "support.hpp"

using namespace mapguide;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.vocab_size = 10;
  s.n_words = 250;
  s.n_trs = 100;
  s.voxels = 48;
  s.auditory_voxels = 2;
  return s;
}

ToyLm lm_for(const SyntheticSpec& s) { return testing::random_lm(make_token_prior(s).words); }

}  // namespace

TEST_CASE("token prior is a proper Markov source") {
  const auto prior = make_token_prior(small_spec());
  CHECK(prior.words.size() == 10);
  CHECK(prior.initial.sum() == doctest::Approx(1.0));
  for (Index a = 0; a < prior.transition.rows(); ++a) {
    CHECK(prior.transition.row(a).sum() == doctest::Approx(1.0));
    CHECK((prior.transition.row(a).array() > 0.0).count() == 4);
  }
  for (const auto& w : prior.words) CHECK(is_clean_token(w));
  auto rng = make_stream(0, "test");
  const auto s = prior.sample(50, rng);
  for (std::size_t i = 1; i < s.size(); ++i) {
    const auto a = std::find(prior.words.begin(), prior.words.end(), s[i - 1]) - prior.words.begin();
    const auto b = std::find(prior.words.begin(), prior.words.end(), s[i]) - prior.words.begin();
    CHECK(prior.transition(a, b) > 0.0);
  }
}

TEST_CASE("synthetic dataset shape and determinism") {
  const auto spec = small_spec();
  const auto lm = lm_for(spec);
  const auto a = synth_dataset(spec, lm);
  const auto b = synth_dataset(spec, lm);
  CHECK(a.fmri.data == b.fmri.data);
  CHECK(a.timeline == b.timeline);
  CHECK(a.ground_truth.vectors == b.ground_truth.vectors);
  CHECK(a.fmri.n_trs() == 100);
  CHECK(a.fmri.n_voxels() == 48);
  CHECK(a.timeline.size() == 250);
  CHECK(a.ground_truth.rows() == 100);
  CHECK(a.ground_truth.dim() == lm.hidden_dim());
  CHECK_FALSE(a.ground_truth.delayed);
  CHECK_NOTHROW(a.fmri.validate());
  CHECK_NOTHROW(a.timeline.validate());
  CHECK(a.auditory_voxel_ids == std::vector<std::int64_t>{0, 1});
  // Constant rate: 2.5 words per TR.
  CHECK(a.timeline.entries[1].time - a.timeline.entries[0].time == doctest::Approx(0.8));
}

TEST_CASE("zero noise replicas are identical") {
  auto spec = small_spec();
  spec.duplication_factor = 4;
  const auto ds = synth_dataset(spec, lm_for(spec));
  for (Index j = 0; j < 12; ++j)
    for (Index r = 1; r < 4; ++r) CHECK(ds.fmri.data.col(4 * j + r) == ds.fmri.data.col(4 * j));
  CHECK(ds.auditory_voxel_ids.size() == 8);
}

TEST_CASE("noisy replicas differ with the expected spread") {
  auto spec = small_spec();
  spec.duplication_factor = 4;
  spec.noise_sigma = 0.5;
  const auto ds = synth_dataset(spec, lm_for(spec));
  const Matrix diff = ds.fmri.data.col(1) - ds.fmri.data.col(0);
  // Difference of two N(0, s^2) draws has variance 2 s^2.
  const double var = diff.squaredNorm() / static_cast<double>(diff.size());
  CHECK(var == doctest::Approx(0.5).epsilon(0.35));
}

TEST_CASE("zero noise linear data is an exact image of the delayed embeddings") {
  const auto spec = small_spec();
  const auto ds = synth_dataset(spec, lm_for(spec));
  const Matrix x = fir_expand(ds.ground_truth).vectors;
  const Matrix& f = ds.fmri.data;
  const Matrix beta = x.colPivHouseholderQr().solve(f);
  const double rel = (x * beta - f).norm() / f.norm();
  CHECK(rel < 1e-5);
  Eigen::ColPivHouseholderQR<Matrix> qr(f);
  CHECK(qr.rank() <= x.cols());
}

TEST_CASE("tanh output is bounded") {
  auto spec = small_spec();
  spec.nonlinearity = Nonlinearity::tanh;
  const auto ds = synth_dataset(spec, lm_for(spec));
  CHECK(ds.fmri.data.cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("language model must cover the synthetic vocabulary") {
  const auto spec = small_spec();
  CHECK_THROWS_AS(synth_dataset(spec, testing::random_lm(testing::letters(5))), VocabularyError);
}

TEST_CASE("corpus sampling is seeded") {
  const auto prior = make_token_prior(small_spec());
  const auto a = sample_corpus(prior, 3, 12, 5);
  const auto b = sample_corpus(prior, 3, 12, 5);
  const auto c = sample_corpus(prior, 3, 12, 6);
  REQUIRE(a.size() == 3);
  CHECK(a[2].tokens() == b[2].tokens());
  CHECK(a[0].tokens() != c[0].tokens());
  CHECK(a[0].entries[11].time == 11.0);
}
