#include "mapguide/mapper.hpp"

#include "oracles.hpp"
#include "support.hpp"

#include <cmath>

using namespace mapguide;

namespace {

// Zero-noise linear toy problem: frame t + 1 = E[t] * W.
struct LinearTask {
  FmriSeries fmri;
  EmbeddingSeries target;
};

LinearTask linear_task(Index m, Index d, Index v, std::uint64_t seed) {
  auto rng = make_stream(seed, "linear-task");
  LinearTask t;
  const Matrix e = testing::random_matrix(m, d, rng);
  const Matrix w = testing::random_matrix(d, v, rng);
  t.fmri.data = Matrix::Zero(m, v);
  t.fmri.data.row(0) = testing::random_matrix(1, v, rng);
  t.fmri.data.bottomRows(m - 1) = e.topRows(m - 1) * w;
  t.fmri.tr_seconds = 2.0;
  t.fmri.voxel_ids.resize(static_cast<std::size_t>(v));
  for (Index i = 0; i < v; ++i) t.fmri.voxel_ids[static_cast<std::size_t>(i)] = i;
  t.target.vectors = e;
  t.target.times = t.fmri.times();
  return t;
}

}  // namespace

TEST_CASE("mse loss examples") {
  Matrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 0, 1;
  CHECK(mse_loss(a, b) == 2.0);
  CHECK(mse_loss(a, a) == 0.0);
  Matrix c(2, 2), d(2, 2);
  c << 1, 0, 3, 3;
  d << 0, 1, 3, 3;
  CHECK(mse_loss(c, d) == 1.0);
  CHECK_THROWS_AS(mse_loss(a, c), ShapeError);
}

TEST_CASE("infonce examples") {
  Matrix one(1, 3);
  one << 0.6, 0.8, 0.0;
  CHECK(infonce_loss({one, one}, 0.1) == doctest::Approx(0.0));

  Matrix same = Matrix::Zero(3, 2);
  same.col(0).setOnes();
  CHECK(infonce_loss({same, same}, 0.7) == doctest::Approx(3.0 * std::log(3.0)));

  const Matrix eye = Matrix::Identity(2, 2);
  const double want = 2.0 * -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(infonce_loss({eye, eye}, 1.0) == doctest::Approx(want).epsilon(1e-12));
  CHECK(want == doctest::Approx(0.6265).epsilon(1e-4));

  CHECK_THROWS_AS(infonce_loss({eye, eye}, 0.0), ArgumentError);
  CHECK_THROWS_AS(infonce_loss({eye, eye}, -1.0), ArgumentError);
}

TEST_CASE("losses match brute-force oracles on random batches") {
  auto rng = make_stream(21, "test");
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 1 + static_cast<Index>(uniform_index(rng, 8));
    const Index d = 1 + static_cast<Index>(uniform_index(rng, 16));
    const Matrix e = testing::random_matrix(n, d, rng);
    const Matrix e_hat = testing::random_matrix(n, d, rng);
    worst = std::max(worst, std::abs(mse_loss(e, e_hat) - static_cast<double>(testing::oracle_mse(e, e_hat))));
    const Matrix h = testing::unit_rows(n, d, rng);
    const Matrix hm = testing::unit_rows(n, d, rng);
    const double eta = 0.05 + uniform01(rng);
    worst = std::max(worst, std::abs(infonce_loss({h, hm}, eta) -
                                     static_cast<double>(testing::oracle_infonce(h, hm, eta))));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("symmetric infonce adds the transposed term") {
  auto rng = make_stream(22, "test");
  const Matrix h = testing::unit_rows(5, 4, rng);
  const Matrix hm = testing::unit_rows(5, 4, rng);
  const double want = static_cast<double>(testing::oracle_infonce(h, hm, 0.3) + testing::oracle_infonce(hm, h, 0.3));
  CHECK(infonce_loss({h, hm}, 0.3, true) == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("hybrid loss") {
  auto rng = make_stream(23, "test");
  const Matrix e = testing::random_matrix(6, 4, rng);
  const Matrix e_hat = testing::random_matrix(6, 4, rng);
  const ContrastivePair pair{testing::unit_rows(6, 5, rng), testing::unit_rows(6, 5, rng)};
  CHECK(hybrid_loss(e, e_hat, pair, 0.0, 0.1) == mse_loss(e, e_hat));
  const double nce = infonce_loss(pair, 0.1);
  CHECK(hybrid_loss(e, e_hat, pair, 0.2, 0.1) == doctest::Approx(mse_loss(e, e_hat) + 0.2 * nce));
  REQUIRE(nce > 0.0);
  double prev = -1.0;
  for (double lambda : {0.0, 0.05, 0.1, 0.2, 0.5, 1.0}) {
    const double l = hybrid_loss(e, e_hat, pair, lambda, 0.1);
    CHECK(l > prev);
    prev = l;
  }
  CHECK_THROWS_AS(hybrid_loss(e, e_hat, pair, -0.1, 0.1), ArgumentError);
}

TEST_CASE("random mask") {
  auto rng = make_stream(24, "test");
  const Matrix batch = testing::random_matrix(4, 50, rng) + Matrix::Constant(4, 50, 10.0);
  auto s0 = make_stream(1, "mask");
  CHECK(random_mask(batch, 0.0, s0) == batch);

  const Matrix wide = Matrix::Ones(1, 10000);
  auto s = make_stream(2, "mask");
  int inside = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const Matrix m = random_mask(wide, 0.05, s);
    const double frac = static_cast<double>((m.array() == 0.0).count()) / 10000.0;
    if (frac >= 0.045 && frac <= 0.055) ++inside;
  }
  // Binomial sd is ~0.0022, so the band is about +-2.3 sd: expect ~98%.
  CHECK(inside >= 90);

  auto a = make_stream(3, "mask");
  auto b = make_stream(3, "mask");
  CHECK(random_mask(batch, 0.3, a) == random_mask(batch, 0.3, b));
  const Matrix m = random_mask(batch, 0.3, a);
  for (Index i = 0; i < m.size(); ++i) CHECK((m.data()[i] == 0.0 || m.data()[i] == batch.data()[i]));
  CHECK_THROWS_AS(random_mask(batch, 1.0, a), ArgumentError);
}

TEST_CASE("forward_map shape, per-frame determinism and times") {
  auto cfg = testing::tiny_mapper(10, 4);
  Mapper mapper(cfg);
  CHECK(mapper.tokens() == 3);
  auto rng = make_stream(25, "test");
  FmriSeries f;
  f.data = testing::random_matrix(7, 10, rng);
  f.data.row(5) = f.data.row(2);
  f.tr_seconds = 2.0;
  f.t0 = 10.0;
  for (int i = 0; i < 10; ++i) f.voxel_ids.push_back(i);
  const auto out = forward_map(mapper, f);
  CHECK(out.rows() == 7);
  CHECK(out.dim() == 3);
  // Equal up to SIMD summation order inside the batched matmul.
  CHECK((out.vectors.row(5) - out.vectors.row(2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(out.times[0] == 8.0);
  CHECK(out.times[6] == 20.0);

  FmriSeries wrong = f;
  wrong.data = testing::random_matrix(7, 9, rng);
  wrong.voxel_ids.pop_back();
  CHECK_THROWS_AS(forward_map(mapper, wrong), ShapeError);
}

TEST_CASE("contrastive projections are unit rows") {
  Mapper mapper(testing::tiny_mapper());
  auto rng = make_stream(26, "test");
  const Matrix p = mapper.project(testing::random_matrix(5, 8, rng));
  CHECK(p.rows() == 5);
  CHECK(p.cols() == 4);
  for (Index i = 0; i < 5; ++i) CHECK(std::abs(p.row(i).norm() - 1.0) < 1e-6);
  const auto lat = mapper.encode(testing::random_matrix(5, 8, rng));
  CHECK(lat.latents.rows() == 5);
  CHECK(lat.tap_latents.cols() == lat.latents.cols());
  CHECK(lat.latents.allFinite());
}

TEST_CASE("hybrid objective gradients match finite differences") {
  const auto r = testing::check_hybrid_gradients();
  INFO(r.worst);
  CHECK(r.checked > 500);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("training is deterministic and improves on a clean linear task") {
  const auto task = linear_task(120, 4, 12, 3);
  auto cfg = testing::tiny_mapper(12, 4);
  cfg.embed_dim = 4;
  cfg.max_epochs = 15;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-3;
  const auto a = train_mapper(task.fmri, task.target, cfg);
  const auto b = train_mapper(task.fmri, task.target, cfg);
  CHECK(a.checkpoint.encoder == b.checkpoint.encoder);
  CHECK(a.checkpoint.embedding_projector == b.checkpoint.embedding_projector);
  CHECK(a.checkpoint.contrastive_projector == b.checkpoint.contrastive_projector);
  REQUIRE(a.log.size() == 15);
  CHECK(a.log.back().val_mse < a.log.front().val_mse);
  CHECK(a.best_val_cosine > a.log.front().val_cosine);

  auto other = cfg;
  other.seed = 4;
  CHECK(train_mapper(task.fmri, task.target, other).checkpoint.encoder != a.checkpoint.encoder);
}

TEST_CASE("epoch training loss is non-increasing with the default optimizer") {
  const auto task = linear_task(200, 4, 16, 5);
  auto cfg = testing::tiny_mapper(16, 4);
  cfg.embed_dim = 4;
  cfg.max_epochs = 25;
  cfg.contrastive_weight = 0.0;
  cfg.learning_rate = MapperConfig{}.learning_rate;
  const auto r = train_mapper(task.fmri, task.target, cfg);
  for (std::size_t i = 1; i < r.log.size(); ++i) {
    CAPTURE(i);
    CHECK(r.log[i].train_loss <= r.log[i - 1].train_loss);
  }
}

TEST_CASE("training rejects misaligned inputs") {
  auto task = linear_task(40, 4, 12, 6);
  auto cfg = testing::tiny_mapper(12, 4);
  cfg.embed_dim = 4;
  cfg.max_epochs = 1;
  auto short_target = task.target.slice_rows(0, 30);
  CHECK_THROWS_AS(train_mapper(task.fmri, short_target, cfg), ShapeError);
  cfg.input_voxels = 11;
  CHECK_THROWS_AS(train_mapper(task.fmri, task.target, cfg), ShapeError);
}

TEST_CASE("eval_mapper cosine conventions") {
  Mapper mapper(testing::tiny_mapper());
  auto rng = make_stream(27, "test");
  FmriSeries f;
  f.data = testing::random_matrix(30, 8, rng);
  f.tr_seconds = 2.0;
  for (int i = 0; i < 8; ++i) f.voxel_ids.push_back(i);
  const auto pred = forward_map(mapper, f);

  CHECK(eval_mapper(mapper, f, pred) == doctest::Approx(1.0));
  EmbeddingSeries neg = pred;
  neg.vectors = -pred.vectors;
  CHECK(eval_mapper(mapper, f, neg) == doctest::Approx(-1.0));

  EmbeddingSeries rnd = pred;
  rnd.vectors = testing::random_matrix(30, 3, rng);
  long double want = 0.0L;
  for (Index i = 0; i < 30; ++i) {
    long double dot = 0.0L, na = 0.0L, nb = 0.0L;
    for (Index j = 0; j < 3; ++j) {
      dot += static_cast<long double>(pred.vectors(i, j)) * rnd.vectors(i, j);
      na += static_cast<long double>(pred.vectors(i, j)) * pred.vectors(i, j);
      nb += static_cast<long double>(rnd.vectors(i, j)) * rnd.vectors(i, j);
    }
    want += dot / std::sqrt(na * nb);
  }
  CHECK(std::abs(eval_mapper(mapper, f, rnd) - static_cast<double>(want / 30.0L)) < 1e-6);

  EmbeddingSeries wrong_dim = pred;
  wrong_dim.vectors = Matrix::Ones(30, 5);
  CHECK_THROWS_AS(eval_mapper(mapper, f, wrong_dim), ShapeError);

  // Zero rows contribute 0.
  CHECK(mean_row_cosine(Matrix::Zero(2, 3), Matrix::Ones(2, 3)) == 0.0);
}
