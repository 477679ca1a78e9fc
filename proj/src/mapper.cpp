#include "mapguide/mapper.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mapguide {

double mse_loss(const Matrix& e, const Matrix& e_hat) {
  if (e.rows() != e_hat.rows() || e.cols() != e_hat.cols()) throw ShapeError("mse_loss: shape mismatch");
  if (e.rows() == 0) throw ShapeError("mse_loss: empty batch");
  return (e - e_hat).squaredNorm() / static_cast<double>(e.rows());
}

double infonce_loss(const ContrastivePair& pair, double eta, bool symmetric) {
  if (!(eta > 0.0)) throw ArgumentError("infonce temperature must be > 0");
  ad::Graph g(false);
  return g.scalar(g.infonce_loss(g.constant(pair.h), g.constant(pair.h_m), eta, symmetric));
}

double hybrid_loss(const Matrix& e, const Matrix& e_hat, const ContrastivePair& pair, double lambda, double eta) {
  if (!(lambda >= 0.0)) throw ArgumentError("contrastive weight must be >= 0");
  const double mse = mse_loss(e, e_hat);
  if (lambda == 0.0) return mse;
  return mse + lambda * infonce_loss(pair, eta);
}

Matrix random_mask(const Matrix& batch, double ratio, Rng& stream) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ArgumentError("mask ratio must be in [0, 1)");
  if (ratio == 0.0) return batch;
  Matrix out = batch;
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j)
      if (uniform01(stream) < ratio) out(i, j) = 0.0;
  return out;
}

double mean_row_cosine(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw ShapeError("cosine: shape mismatch");
  if (pred.rows() == 0) throw ShapeError("cosine: no rows");
  double total = 0.0;
  for (Index i = 0; i < pred.rows(); ++i) total += cosine(pred.row(i), truth.row(i));
  return total / static_cast<double>(pred.rows());
}

Mapper::Mapper(const MapperConfig& config) : config_(config) {
  config_.validate();
  init_parameters();
  input_mean_ = RowVector::Zero(config_.input_voxels);
  input_scale_ = RowVector::Ones(config_.input_voxels);
}

Mapper::Mapper(const MapperCheckpoint& ckpt) : Mapper(ckpt.config) {
  TensorMap all;
  auto take = [&](const TensorMap& group, const std::string& prefix) {
    for (const auto& [k, v] : group) {
      if (prefix == "encoder/" && (k == "input_mean" || k == "input_scale")) continue;
      all.emplace(prefix + k, v);
    }
  };
  take(ckpt.encoder, "encoder/");
  take(ckpt.embedding_projector, "embedding_projector/");
  take(ckpt.contrastive_projector, "contrastive_projector/");
  params_.assign(all);
  auto stat = [&](const char* name) -> RowVector {
    auto it = ckpt.encoder.find(name);
    if (it == ckpt.encoder.end()) throw IntegrityError(std::string("missing tensor 'encoder/") + name + "'");
    if (it->second.rows() != 1 || it->second.cols() != config_.input_voxels)
      throw IntegrityError(std::string("tensor 'encoder/") + name + "' has the wrong shape");
    return it->second.row(0);
  };
  input_mean_ = stat("input_mean");
  input_scale_ = stat("input_scale");
}

Index Mapper::tokens() const { return (config_.input_voxels + config_.patch_size - 1) / config_.patch_size; }

void Mapper::init_parameters() {
  auto rng = make_stream(config_.seed, "mapper/init");
  const Index w = config_.encoder_width;
  const Index t = tokens();
  const Index f = 2 * w;
  params_.add("encoder/patch_w", ad::xavier_normal(config_.input_voxels, w, rng) *
                                     std::sqrt(static_cast<double>(config_.input_voxels + w) /
                                               static_cast<double>(std::min<Index>(config_.patch_size,
                                                                                   config_.input_voxels) + w)));
  params_.add("encoder/patch_b", ad::xavier_normal(t, w, rng) * 0.1);
  for (int l = 1; l <= config_.encoder_layers; ++l) {
    const auto p = "encoder/block" + std::to_string(l) + "/";
    params_.add(p + "wq", ad::xavier_normal(w, w, rng));
    params_.add(p + "wk", ad::xavier_normal(w, w, rng));
    params_.add(p + "wv", ad::xavier_normal(w, w, rng));
    params_.add(p + "wo", ad::xavier_normal(w, w, rng));
    params_.add(p + "ln1_g", Matrix::Ones(1, w));
    params_.add(p + "ln1_b", Matrix::Zero(1, w));
    params_.add(p + "w1", ad::xavier_normal(w, f, rng));
    params_.add(p + "b1", Matrix::Zero(1, f));
    params_.add(p + "w2", ad::xavier_normal(f, w, rng));
    params_.add(p + "b2", Matrix::Zero(1, w));
    params_.add(p + "ln2_g", Matrix::Ones(1, w));
    params_.add(p + "ln2_b", Matrix::Zero(1, w));
  }
  params_.add("embedding_projector/w", ad::xavier_normal(t * w, config_.embed_dim, rng));
  params_.add("embedding_projector/b", Matrix::Zero(1, config_.embed_dim));
  params_.add("contrastive_projector/w1", ad::xavier_normal(t * w, w, rng));
  params_.add("contrastive_projector/b1", Matrix::Zero(1, w));
  params_.add("contrastive_projector/w2", ad::xavier_normal(w, config_.projector_dim, rng));
  params_.add("contrastive_projector/b2", Matrix::Zero(1, config_.projector_dim));
}

MapperCheckpoint Mapper::checkpoint() const {
  MapperCheckpoint ckpt;
  ckpt.config = config_;
  for (const auto& [name, p] : params_.items()) {
    const auto slash = name.find('/');
    const auto group = name.substr(0, slash);
    auto key = name.substr(slash + 1);
    if (group == "encoder") {
      ckpt.encoder.emplace(std::move(key), p.value);
    } else if (group == "embedding_projector") {
      ckpt.embedding_projector.emplace(std::move(key), p.value);
    } else {
      ckpt.contrastive_projector.emplace(std::move(key), p.value);
    }
  }
  ckpt.encoder.emplace("input_mean", Matrix(input_mean_));
  ckpt.encoder.emplace("input_scale", Matrix(input_scale_));
  return ckpt;
}

void Mapper::set_input_stats(const RowVector& mean, const RowVector& scale) {
  if (mean.size() != config_.input_voxels || scale.size() != config_.input_voxels)
    throw ShapeError("input stats do not match input_voxels");
  input_mean_ = mean;
  input_scale_ = scale;
}

Matrix Mapper::standardize(const Matrix& raw) const {
  if (raw.cols() != config_.input_voxels)
    throw ShapeError("expected " + std::to_string(config_.input_voxels) + " voxels, got " + std::to_string(raw.cols()));
  Matrix z = raw.rowwise() - input_mean_;
  return z.array().rowwise() / input_scale_.array();
}

Mapper::Nodes Mapper::forward(ad::Graph& g, ad::NodeId input, bool with_projection) const {
  auto P = [&](const std::string& name) { return g.param(params_.at(name)); };
  const Index t = tokens();
  Nodes out;
  auto x = g.patch_embed(input, P("encoder/patch_w"), P("encoder/patch_b"), config_.patch_size);
  for (int l = 1; l <= config_.encoder_layers; ++l) {
    const auto p = "encoder/block" + std::to_string(l) + "/";
    auto q = g.matmul(x, P(p + "wq"));
    auto k = g.matmul(x, P(p + "wk"));
    auto v = g.matmul(x, P(p + "wv"));
    auto a = g.matmul(g.attention(q, k, v, t, config_.n_heads, false), P(p + "wo"));
    auto h = g.layer_norm(g.add(x, a), P(p + "ln1_g"), P(p + "ln1_b"));
    auto ff = g.add_bias(g.matmul(g.gelu(g.add_bias(g.matmul(h, P(p + "w1")), P(p + "b1"))), P(p + "w2")),
                         P(p + "b2"));
    x = g.layer_norm(g.add(h, ff), P(p + "ln2_g"), P(p + "ln2_b"));
    if (l == config_.tap_layer) out.tap = g.flatten_groups(x, t);
  }
  out.latent = g.flatten_groups(x, t);
  out.embedding = g.add_bias(g.matmul(out.latent, P("embedding_projector/w")), P("embedding_projector/b"));
  if (with_projection) {
    auto hid = g.gelu(g.add_bias(g.matmul(out.tap, P("contrastive_projector/w1")), P("contrastive_projector/b1")));
    auto proj = g.add_bias(g.matmul(hid, P("contrastive_projector/w2")), P("contrastive_projector/b2"));
    out.projection = g.l2_normalize_rows(proj);
  }
  return out;
}

Matrix Mapper::predict(const Matrix& raw) const {
  ad::Graph g(false);
  auto n = forward(g, g.constant(standardize(raw)), false);
  return g.value(n.embedding);
}

LatentBatch Mapper::encode(const Matrix& raw) const {
  ad::Graph g(false);
  auto n = forward(g, g.constant(standardize(raw)), false);
  return {g.value(n.latent), g.value(n.tap)};
}

Matrix Mapper::project(const Matrix& standardized) const {
  ad::Graph g(false);
  auto n = forward(g, g.constant(standardized), true);
  return g.value(n.projection);
}

EmbeddingSeries forward_map(const Mapper& mapper, const FmriSeries& fmri) {
  if (fmri.n_voxels() != mapper.config().input_voxels)
    throw ShapeError("fmri has " + std::to_string(fmri.n_voxels()) + " voxels, mapper expects " +
                     std::to_string(mapper.config().input_voxels));
  EmbeddingSeries out;
  out.vectors.resize(fmri.n_trs(), mapper.config().embed_dim);
  constexpr Index kChunk = 256;
  for (Index b = 0; b < fmri.n_trs(); b += kChunk) {
    const Index n = std::min(kChunk, fmri.n_trs() - b);
    out.vectors.middleRows(b, n) = mapper.predict(fmri.data.middleRows(b, n));
  }
  out.times.resize(static_cast<std::size_t>(fmri.n_trs()));
  for (Index i = 0; i < fmri.n_trs(); ++i)
    out.times[static_cast<std::size_t>(i)] = fmri.time_at(i - mapper.config().response_lag);
  return out;
}

EmbeddingSeries forward_map(const MapperCheckpoint& ckpt, const FmriSeries& fmri) {
  return forward_map(Mapper(ckpt), fmri);
}

namespace {

struct Aligned {
  Matrix x;
  Matrix y;
};

// Frame t + lag with target row t, matched on time.
Aligned align_pairs(const FmriSeries& fmri, const EmbeddingSeries& target, int lag) {
  const double tol = 1e-6 * fmri.tr_seconds;
  std::vector<Index> xs, ys;
  for (Index r = 0; r < target.rows(); ++r) {
    const double t = target.times[static_cast<std::size_t>(r)];
    const double idx = (t - fmri.t0) / fmri.tr_seconds + lag;
    const auto frame = static_cast<Index>(std::llround(idx));
    if (std::abs(fmri.time_at(frame - lag) - t) > tol) continue;
    if (frame < 0 || frame >= fmri.n_trs()) continue;
    xs.push_back(frame);
    ys.push_back(r);
  }
  Aligned a;
  a.x.resize(static_cast<Index>(xs.size()), fmri.n_voxels());
  a.y.resize(static_cast<Index>(ys.size()), target.dim());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    a.x.row(static_cast<Index>(i)) = fmri.data.row(xs[i]);
    a.y.row(static_cast<Index>(i)) = target.vectors.row(ys[i]);
  }
  return a;
}

Matrix gather(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

TrainResult train_mapper(const FmriSeries& fmri, const EmbeddingSeries& target, const MapperConfig& config) {
  config.validate();
  fmri.validate();
  target.validate();
  if (fmri.n_trs() != target.rows())
    throw ShapeError("fmri has " + std::to_string(fmri.n_trs()) + " rows, target has " + std::to_string(target.rows()));
  if (fmri.n_voxels() != config.input_voxels) throw ShapeError("fmri voxel count does not match input_voxels");
  if (target.dim() != config.embed_dim) throw ShapeError("target dimension does not match embed_dim");

  const auto pairs = align_pairs(fmri, target, config.response_lag);
  const Index n_pairs = pairs.x.rows();
  const auto n_train = static_cast<Index>(std::floor(config.train_fraction * static_cast<double>(n_pairs)));
  const Index n_val = n_pairs - n_train;
  if (n_train < 1 || n_val < 1) throw ShapeError("not enough aligned rows for a train/validation split");

  const Matrix x_train = pairs.x.topRows(n_train);
  const Matrix y_train = pairs.y.topRows(n_train);
  const Matrix x_val = pairs.x.bottomRows(n_val);
  const Matrix y_val = pairs.y.bottomRows(n_val);

  Mapper mapper(config);
  {
    const RowVector mean = x_train.colwise().mean();
    RowVector scale = ((x_train.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n_train))
                          .sqrt()
                          .matrix();
    for (Index j = 0; j < scale.size(); ++j)
      if (!(scale(j) > 1e-12)) scale(j) = 1.0;
    mapper.set_input_stats(mean, scale);
  }
  const Matrix z_train = mapper.standardize(x_train);

  auto shuffle_rng = make_stream(config.seed, "mapper/shuffle");
  auto mask_rng = make_stream(config.seed, "mapper/mask");
  ad::Adam opt(config.learning_rate);
  const bool contrastive = config.contrastive_weight > 0.0;

  TrainResult result;
  TensorMap best = mapper.parameters().values();
  double best_mse = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<Index> order(static_cast<std::size_t>(n_train));
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
    EpochLog log;
    log.epoch = epoch;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
      const std::vector<Index> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      const Matrix zb = gather(z_train, idx);
      const Matrix yb = gather(y_train, idx);

      ad::Graph g;
      auto clean = mapper.forward(g, g.constant(zb), contrastive);
      auto target_node = g.constant(yb);
      auto mse = g.mse_loss(clean.embedding, target_node);
      ad::NodeId loss = mse;
      double infonce_value = 0.0;
      if (contrastive || config.masked_in_mse) {
        const Matrix zm = random_mask(zb, config.mask_ratio, mask_rng);
        auto masked = mapper.forward(g, g.constant(zm), contrastive);
        if (config.masked_in_mse) {
          loss = g.scale(g.add(mse, g.mse_loss(masked.embedding, target_node)), 0.5);
        }
        if (contrastive) {
          auto nce = g.infonce_loss(clean.projection, masked.projection, config.temperature, config.symmetric_infonce);
          infonce_value = g.scalar(nce);
          loss = g.add(loss, g.scale(nce, config.contrastive_weight));
        }
      }
      log.train_loss += g.scalar(loss);
      log.train_mse += g.scalar(mse);
      log.train_infonce += infonce_value;
      ++batches;

      mapper.parameters().zero_grad();
      g.backward(loss);
      opt.step(mapper.parameters());
    }
    log.train_loss /= batches;
    log.train_mse /= batches;
    log.train_infonce /= batches;

    const Matrix pred_val = mapper.predict(x_val);
    log.val_mse = mse_loss(y_val, pred_val);
    log.val_cosine = mean_row_cosine(pred_val, y_val);
    result.log.push_back(log);

    if (log.val_mse < best_mse) {
      best_mse = log.val_mse;
      best = mapper.parameters().values();
      result.best_epoch = epoch;
      result.best_val_mse = log.val_mse;
      result.best_val_cosine = log.val_cosine;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  mapper.parameters().assign(best);
  result.checkpoint = mapper.checkpoint();
  return result;
}

double eval_mapper(const Mapper& mapper, const FmriSeries& fmri, const EmbeddingSeries& target) {
  const auto pred = forward_map(mapper, fmri);
  if (pred.dim() != target.dim()) throw ShapeError("embedding dimension mismatch");
  std::vector<Index> pr, tr;
  const double tol = 1e-6 * fmri.tr_seconds;
  for (Index i = 0; i < pred.rows(); ++i) {
    const double t = pred.times[static_cast<std::size_t>(i)];
    if (target.times.empty()) break;
    const Index r = target.nearest_row(t);
    if (std::abs(target.times[static_cast<std::size_t>(r)] - t) <= tol) {
      pr.push_back(i);
      tr.push_back(r);
    }
  }
  if (pr.empty()) throw ShapeError("no predicted rows align with the target times");
  return mean_row_cosine(gather(pred.vectors, pr), gather(target.vectors, tr));
}

double eval_mapper(const MapperCheckpoint& ckpt, const FmriSeries& fmri, const EmbeddingSeries& target) {
  return eval_mapper(Mapper(ckpt), fmri, target);
}

}  // namespace mapguide
