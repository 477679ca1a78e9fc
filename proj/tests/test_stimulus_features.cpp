#include "mapguide/stimulus_features.hpp"

#include "support.hpp"

#include <cmath>

using namespace mapguide;

namespace {

WordTimeline word_story(const std::vector<std::string>& words, double start = 0.0, double step = 0.7) {
  WordTimeline tl;
  for (std::size_t i = 0; i < words.size(); ++i) tl.entries.push_back({words[i], start + step * static_cast<double>(i)});
  return tl;
}

std::vector<double> grid(std::size_t n, double t0, double tr) {
  std::vector<double> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(t0 + tr * static_cast<double>(i));
  return t;
}

// sinc written out independently of the library kernel.
long double ref_sinc(long double x) {
  if (x == 0.0L) return 1.0L;
  const long double px = 3.141592653589793238462643383279502884L * x;
  return std::sin(px) / px;
}

long double ref_kernel(long double x, int lobes) {
  if (std::fabs(x) >= lobes) return 0.0L;
  return ref_sinc(x) * ref_sinc(x / lobes);
}

EmbeddingSeries series_from(const Matrix& m) {
  EmbeddingSeries s;
  s.vectors = m;
  s.times = grid(static_cast<std::size_t>(m.rows()), 0.0, 2.0);
  return s;
}

}  // namespace

TEST_CASE("embed_contexts uses the trailing window") {
  const auto lm = testing::random_lm(testing::letters(10), 8, 2, 12);
  const std::vector<std::string> words{"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
  const auto tl = word_story(words);
  const auto pairs = embed_contexts(lm, tl, 5, 1);
  REQUIRE(pairs.size() == 10);
  CHECK(pairs.times == tl.times());
  // First word: context of length 1.
  CHECK(pairs.vectors.row(0).transpose() == hidden_state(lm, {"a"}, 1));
  // Word 7 with window 5: words 2..7.
  const std::vector<std::string> ctx(words.begin() + 2, words.begin() + 8);
  CHECK(ctx.size() == 6);
  CHECK(pairs.vectors.row(7).transpose() == hidden_state(lm, ctx, 1));
  CHECK_THROWS_AS(embed_contexts(lm, WordTimeline{}, 5, 1), ArgumentError);
  CHECK_THROWS_AS(embed_contexts(lm, tl, -1, 1), ArgumentError);
}

TEST_CASE("repeated words in different contexts get different vectors") {
  const auto lm = testing::random_lm(testing::letters(6));
  const auto pairs = embed_contexts(lm, word_story({"a", "b", "c", "d", "b", "a", "f"}), 5, 1);
  CHECK((pairs.vectors.row(1) - pairs.vectors.row(4)).norm() > 1e-6);
  CHECK((pairs.vectors.row(0) - pairs.vectors.row(5)).norm() > 1e-6);
}

TEST_CASE("lanczos kernel against a direct evaluation") {
  CHECK(lanczos_kernel(0.0, 3) == 1.0);
  CHECK(lanczos_kernel(3.0, 3) == 0.0);
  CHECK(lanczos_kernel(-4.2, 3) == 0.0);
  for (double x = -2.95; x < 3.0; x += 0.1)
    CHECK(lanczos_kernel(x, 3) == doctest::Approx(static_cast<double>(ref_kernel(x, 3))).epsilon(1e-12));
  CHECK(lanczos_kernel(1.0, 3) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(lanczos_kernel(0.5, 0), ArgumentError);
}

TEST_CASE("resampling preserves constants") {
  WordVectorPairs p;
  auto rng = make_stream(4, "test");
  p.vectors = Matrix(30, 3);
  for (Index i = 0; i < 30; ++i) p.vectors.row(i) << 1.5, -2.0, 0.25;
  double t = 0.3;
  for (int i = 0; i < 30; ++i) {
    p.times.push_back(t);
    t += 0.2 + uniform01(rng);
  }
  const auto out = lanczos_resample(p, grid(20, 0.0, 2.0));
  for (Index r = 0; r < out.rows(); ++r) {
    if (out.vectors.row(r).isZero(0.0)) continue;
    CHECK(std::abs(out.vectors(r, 0) - 1.5) < 1e-6);
    CHECK(std::abs(out.vectors(r, 1) + 2.0) < 1e-6);
    CHECK(std::abs(out.vectors(r, 2) - 0.25) < 1e-6);
  }
  CHECK_FALSE(out.delayed);
}

TEST_CASE("a word on a node reproduces its vector") {
  WordVectorPairs p;
  p.vectors = Matrix(1, 2);
  p.vectors << 3.0, -1.0;
  p.times = {4.0};
  const auto out = lanczos_resample(p, grid(5, 0.0, 2.0));
  CHECK((out.vectors.row(2) - p.vectors.row(0)).norm() < 1e-6);
  // Rows whose support holds no words stay zero.
  WordVectorPairs far;
  far.vectors = p.vectors;
  far.times = {100.0};
  CHECK(lanczos_resample(far, grid(5, 0.0, 2.0)).vectors.isZero(0.0));
}

TEST_CASE("two symmetric words average") {
  WordVectorPairs p;
  p.vectors = Matrix(2, 3);
  p.vectors << 1.0, 2.0, 3.0, -5.0, 0.0, 1.0;
  p.times = {9.0, 11.0};  // tau = 10, TR = 2
  const auto out = lanczos_resample(p, grid(11, 0.0, 2.0));
  const RowVector mid = (p.vectors.row(0) + p.vectors.row(1)) / 2.0;
  CHECK((out.vectors.row(5) - mid).norm() < 1e-12);
  // Direct kernel evaluation for an off-centre row.
  const long double w0 = ref_kernel((9.0L - 8.0L) / 2.0L, 3), w1 = ref_kernel((11.0L - 8.0L) / 2.0L, 3);
  for (Index c = 0; c < 3; ++c) {
    const long double want = (w0 * p.vectors(0, c) + w1 * p.vectors(1, c)) / (w0 + w1);
    CHECK(out.vectors(4, c) == doctest::Approx(static_cast<double>(want)).epsilon(1e-12));
  }
}

TEST_CASE("resampling is translation equivariant") {
  auto rng = make_stream(5, "test");
  WordVectorPairs p;
  p.vectors = testing::random_matrix(25, 4, rng);
  for (int i = 0; i < 25; ++i) p.times.push_back(0.9 * i + 0.1);
  const auto a = lanczos_resample(p, grid(12, 0.0, 2.0));
  auto shifted = p;
  for (auto& t : shifted.times) t += 37.0;
  const auto b = lanczos_resample(shifted, grid(12, 37.0, 2.0));
  CHECK((a.vectors - b.vectors).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("resampling argument checks") {
  WordVectorPairs p;
  p.vectors = Matrix::Ones(1, 2);
  p.times = {0.0};
  CHECK_THROWS_AS(lanczos_resample(p, grid(5, 0.0, 2.0), 0), ArgumentError);
  CHECK_THROWS_AS(lanczos_resample(p, std::vector<double>{0.0}), ArgumentError);
  CHECK_THROWS_AS(lanczos_resample(p, std::vector<double>{0.0, 2.0, 5.0}), ArgumentError);
  CHECK_THROWS_AS(lanczos_resample(WordVectorPairs{}, grid(5, 0.0, 2.0)), ArgumentError);
}

TEST_CASE("FIR expansion layout") {
  Matrix x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  const auto f = fir_expand(series_from(x));
  CHECK(f.rows() == 3);
  CHECK(f.dim() == 8);
  CHECK(f.delayed);
  CHECK(f.vectors.row(0).isZero(0.0));
  // Row 1 holds row 0 at delay 1 and zeros for delays 2..4.
  CHECK(f.vectors(1, 0) == 1.0);
  CHECK(f.vectors(1, 1) == 2.0);
  CHECK(f.vectors.row(1).tail(6).isZero(0.0));

  auto rng = make_stream(6, "test");
  const Matrix big = testing::random_matrix(9, 3, rng);
  const auto g = fir_expand(series_from(big));
  CHECK(g.vectors.row(5).head(3) == big.row(4));
  CHECK(g.vectors.row(5).segment(9, 3) == big.row(1));
  CHECK(g.vectors.row(3).tail(3).isZero(0.0));
}

TEST_CASE("FIR expansion is linear") {
  auto rng = make_stream(7, "test");
  const Matrix x = testing::random_matrix(10, 3, rng);
  const Matrix y = testing::random_matrix(10, 3, rng);
  const double a = 1.7, b = -0.4;
  const Matrix lhs = fir_expand(series_from(a * x + b * y)).vectors;
  const Matrix rhs = a * fir_expand(series_from(x)).vectors + b * fir_expand(series_from(y)).vectors;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("FIR expansion errors") {
  auto s = series_from(Matrix::Ones(4, 2));
  s.delayed = true;
  CHECK_THROWS_AS(fir_expand(s), ArgumentError);
  s.delayed = false;
  CHECK_THROWS_AS(fir_expand(s, std::vector<int>{}), ArgumentError);
}
