#pragma once

// Minimal tape-based reverse-mode differentiation over row-major Eigen
// matrices. Enough for post-LN transformer blocks, MLP heads and the losses
// used in training; nothing more.

#include "mapguide/common.hpp"
#include "mapguide/core_data.hpp"
#include "mapguide/rng.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace mapguide::ad {

struct Parameter {
  Matrix value;
  Matrix grad;
};

class ParameterSet {
 public:
  Parameter& add(const std::string& name, Matrix init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  std::size_t scalar_count() const;

  TensorMap values() const;
  // Replaces every value; names and shapes must match exactly.
  void assign(const TensorMap& values);

  std::map<std::string, Parameter>& items() { return params_; }
  const std::map<std::string, Parameter>& items() const { return params_; }

 private:
  std::map<std::string, Parameter> params_;
};

Matrix xavier_normal(Index rows, Index cols, Rng& rng);

using NodeId = int;

class Graph {
 public:
  // With record == false no backward closures are kept (inference).
  explicit Graph(bool record = true) : record_(record) {}

  NodeId constant(Matrix m);
  NodeId param(Parameter& p);

  const Matrix& value(NodeId id) const {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    return n.param ? n.param->value : n.value;
  }
  // Empty matrix when no gradient reached the node.
  const Matrix& grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  double scalar(NodeId id) const { return value(id)(0, 0); }

  // Seeds d(loss)/d(loss) = 1 and accumulates into Parameter::grad.
  void backward(NodeId loss);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId add_bias(NodeId a, NodeId bias_row);
  NodeId gelu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId layer_norm(NodeId a, NodeId gain, NodeId bias);

  // Scaled dot-product attention over consecutive blocks of `seq_len` rows,
  // heads split along columns.
  NodeId attention(NodeId q, NodeId k, NodeId v, Index seq_len, int heads, bool causal);

  // x: N x V, w: V x width, b: T x width with T = ceil(V / patch).
  // Row n*T + p is x[n, patch p] * w[patch p rows] + b[p].
  NodeId patch_embed(NodeId x, NodeId w, NodeId b, Index patch);

  // (N*T) x W -> N x (T*W), row n = rows n*T .. n*T+T-1 concatenated.
  NodeId flatten_groups(NodeId a, Index group);

  NodeId gather_rows(NodeId table, std::vector<Index> ids);
  NodeId select_rows(NodeId a, std::vector<Index> rows);
  NodeId l2_normalize_rows(NodeId a);

  // (1/N) * sum of squared differences (the per-row sum is not averaged).
  NodeId mse_loss(NodeId pred, NodeId target);
  // Sum over anchors of -log softmax(h hm^T / eta)_ii; symmetric adds the
  // transposed term.
  NodeId infonce_loss(NodeId h, NodeId hm, double eta, bool symmetric = false);
  // Mean next-token negative log likelihood.
  NodeId cross_entropy(NodeId logits, std::vector<Index> targets);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void()> back;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  NodeId push(Matrix value, bool needs_grad);
  bool needs(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
  void accumulate(NodeId id, const Matrix& g);
  void on_backward(NodeId out, std::function<void()> fn);

  bool record_;
  std::vector<Node> nodes_;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet& params);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

// Row-wise softmax and log-sum-exp, max-subtracted.
Matrix softmax_rows(const Matrix& logits);
Vector logsumexp_rows(const Matrix& logits);

}  // namespace mapguide::ad
