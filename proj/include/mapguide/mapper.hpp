#pragma once

#include "mapguide/autograd.hpp"
#include "mapguide/core_data.hpp"
#include "mapguide/rng.hpp"

#include <vector>

namespace mapguide {

// Encoder outputs for a batch, flattened over patch tokens (N x T*width).
struct LatentBatch {
  Matrix latents;
  Matrix tap_latents;
};

// Projected, L2-normalized views of the unmasked and masked batch.
struct ContrastivePair {
  Matrix h;
  Matrix h_m;
};

// (1/N) sum_i sum_j (e_ij - e_hat_ij)^2. The sum over D is not averaged.
double mse_loss(const Matrix& e, const Matrix& e_hat);

// -sum_i log softmax_j(h_i . hm_j / eta) at j = i, max-subtracted.
double infonce_loss(const ContrastivePair& pair, double eta, bool symmetric = false);

double hybrid_loss(const Matrix& e, const Matrix& e_hat, const ContrastivePair& pair, double lambda, double eta);

// Zero each entry independently with probability `ratio`.
Matrix random_mask(const Matrix& batch, double ratio, Rng& stream);

double mean_row_cosine(const Matrix& pred, const Matrix& truth);

class Mapper {
 public:
  explicit Mapper(const MapperConfig& config);
  // Throws IntegrityError when a tensor is missing or mis-shaped.
  explicit Mapper(const MapperCheckpoint& ckpt);

  const MapperConfig& config() const { return config_; }
  Index tokens() const;
  MapperCheckpoint checkpoint() const;

  // Voxel standardization learned from the training inputs.
  void set_input_stats(const RowVector& mean, const RowVector& scale);
  Matrix standardize(const Matrix& raw) const;

  struct Nodes {
    ad::NodeId embedding = -1;
    ad::NodeId projection = -1;
    ad::NodeId latent = -1;
    ad::NodeId tap = -1;
  };
  // `input` is a standardized N x V batch node.
  Nodes forward(ad::Graph& g, ad::NodeId input, bool with_projection) const;

  Matrix predict(const Matrix& raw) const;
  LatentBatch encode(const Matrix& raw) const;
  // Projector output for a standardized batch.
  Matrix project(const Matrix& standardized) const;

  // Combined view over all trainable tensors (encoder/..., embedding_projector/...,
  // contrastive_projector/...).
  ad::ParameterSet& parameters() { return params_; }
  const ad::ParameterSet& parameters() const { return params_; }

 private:
  void init_parameters();

  MapperConfig config_;
  mutable ad::ParameterSet params_;
  RowVector input_mean_;
  RowVector input_scale_;
};

// One D-dimensional row per TR. Row i comes from frame i and is stamped
// t0 + (i - response_lag) * TR, the time of the embedding it predicts.
EmbeddingSeries forward_map(const Mapper& mapper, const FmriSeries& fmri);
EmbeddingSeries forward_map(const MapperCheckpoint& ckpt, const FmriSeries& fmri);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double train_mse = 0.0;
  double train_infonce = 0.0;
  double val_mse = 0.0;
  double val_cosine = 0.0;
};

struct TrainResult {
  MapperCheckpoint checkpoint;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_mse = 0.0;
  double best_val_cosine = 0.0;
};

// Pairs frame t + response_lag with embedding row t, splits contiguously into
// train/validation, trains with MSE + lambda * InfoNCE and keeps the weights
// with the lowest validation MSE.
TrainResult train_mapper(const FmriSeries& fmri, const EmbeddingSeries& target, const MapperConfig& config);

// Mean cosine between forward_map(fmri) and the target rows at the same times.
double eval_mapper(const MapperCheckpoint& ckpt, const FmriSeries& fmri, const EmbeddingSeries& target);
double eval_mapper(const Mapper& mapper, const FmriSeries& fmri, const EmbeddingSeries& target);

}  // namespace mapguide
