#include "mapguide/autograd.hpp"

#include <cmath>
#include <limits>

namespace mapguide::ad {

Parameter& ParameterSet::add(const std::string& name, Matrix init) {
  auto [it, inserted] = params_.emplace(name, Parameter{});
  if (!inserted) throw ArgumentError("duplicate parameter '" + name + "'");
  it->second.grad = Matrix::Zero(init.rows(), init.cols());
  it->second.value = std::move(init);
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterSet::zero_grad() {
  for (auto& [_, p] : params_) p.grad.setZero();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

TensorMap ParameterSet::values() const {
  TensorMap out;
  for (const auto& [k, p] : params_) out.emplace(k, p.value);
  return out;
}

void ParameterSet::assign(const TensorMap& values) {
  for (const auto& [k, p] : params_) {
    auto it = values.find(k);
    if (it == values.end()) throw IntegrityError("missing tensor '" + k + "'");
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw IntegrityError("tensor '" + k + "' has shape " + std::to_string(it->second.rows()) + "x" +
                           std::to_string(it->second.cols()) + ", expected " + std::to_string(p.value.rows()) + "x" +
                           std::to_string(p.value.cols()));
  }
  for (const auto& [k, _] : values)
    if (!params_.count(k)) throw IntegrityError("unexpected tensor '" + k + "'");
  for (auto& [k, p] : params_) p.value = values.at(k);
}

Matrix xavier_normal(Index rows, Index cols, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = sd * standard_normal(rng);
  return m;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Vector logsumexp_rows(const Matrix& logits) {
  Vector out(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out(i) = mx + std::log((logits.row(i).array() - mx).exp().sum());
  }
  return out;
}

NodeId Graph::push(Matrix value, bool needs_grad) {
  nodes_.push_back(Node{std::move(value), Matrix(), {}, nullptr, needs_grad && record_});
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::accumulate(NodeId id, const Matrix& g) {
  auto& n = node(id);
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Graph::on_backward(NodeId out, std::function<void()> fn) {
  if (node(out).needs_grad) node(out).back = std::move(fn);
}

NodeId Graph::constant(Matrix m) { return push(std::move(m), false); }

NodeId Graph::param(Parameter& p) {
  // Parameter values are referenced, not copied; they must outlive the graph
  // and stay unchanged until backward() returns.
  const auto id = push(Matrix(), true);
  node(id).param = &p;
  return id;
}

void Graph::backward(NodeId loss) {
  if (!record_) throw ArgumentError("backward on a non-recording graph");
  if (value(loss).size() != 1) throw ArgumentError("backward needs a scalar loss");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  node(loss).grad = Matrix::Ones(1, 1);
  for (auto i = static_cast<NodeId>(nodes_.size()) - 1; i >= 0; --i) {
    auto& n = node(i);
    if (n.grad.size() == 0) continue;
    if (n.back) n.back();
    if (n.param) n.param->grad += n.grad;
  }
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  if (value(a).cols() != value(b).rows()) throw ShapeError("matmul shape mismatch");
  const auto out = push(value(a) * value(b), needs(a) || needs(b));
  on_backward(out, [this, a, b, out] {
    const Matrix& g = grad(out);
    if (needs(a)) accumulate(a, g * value(b).transpose());
    if (needs(b)) accumulate(b, value(a).transpose() * g);
  });
  return out;
}

NodeId Graph::add(NodeId a, NodeId b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) throw ShapeError("add shape mismatch");
  const auto out = push(value(a) + value(b), needs(a) || needs(b));
  on_backward(out, [this, a, b, out] {
    accumulate(a, grad(out));
    accumulate(b, grad(out));
  });
  return out;
}

NodeId Graph::sub(NodeId a, NodeId b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) throw ShapeError("sub shape mismatch");
  const auto out = push(value(a) - value(b), needs(a) || needs(b));
  on_backward(out, [this, a, b, out] {
    accumulate(a, grad(out));
    if (needs(b)) accumulate(b, -grad(out));
  });
  return out;
}

NodeId Graph::scale(NodeId a, double s) {
  const auto out = push(value(a) * s, needs(a));
  on_backward(out, [this, a, s, out] { accumulate(a, grad(out) * s); });
  return out;
}

NodeId Graph::add_bias(NodeId a, NodeId bias_row) {
  const auto& bv = value(bias_row);
  if (bv.rows() != 1 || bv.cols() != value(a).cols()) throw ShapeError("bias shape mismatch");
  Matrix v = value(a);
  v.rowwise() += bv.row(0);
  const auto out = push(std::move(v), needs(a) || needs(bias_row));
  on_backward(out, [this, a, bias_row, out] {
    accumulate(a, grad(out));
    if (needs(bias_row)) accumulate(bias_row, grad(out).colwise().sum());
  });
  return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;
}  // namespace

NodeId Graph::gelu(NodeId a) {
  const Matrix& x = value(a);
  Matrix v = x.unaryExpr([](double t) { return 0.5 * t * (1.0 + std::tanh(kGeluC * (t + kGeluK * t * t * t))); });
  const auto out = push(std::move(v), needs(a));
  on_backward(out, [this, a, out] {
    const Matrix& x = value(a);
    Matrix d = x.unaryExpr([](double t) {
      const double th = std::tanh(kGeluC * (t + kGeluK * t * t * t));
      return 0.5 * (1.0 + th) + 0.5 * t * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluK * t * t);
    });
    accumulate(a, grad(out).cwiseProduct(d));
  });
  return out;
}

NodeId Graph::tanh(NodeId a) {
  Matrix v = value(a).array().tanh().matrix();
  const auto out = push(std::move(v), needs(a));
  on_backward(out, [this, a, out] {
    const Matrix& y = value(out);
    accumulate(a, grad(out).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
  return out;
}

NodeId Graph::layer_norm(NodeId a, NodeId gain, NodeId bias) {
  constexpr double kEps = 1e-5;
  const Matrix& x = value(a);
  const Index rows = x.rows();
  const Index cols = x.cols();
  if (value(gain).cols() != cols || value(bias).cols() != cols) throw ShapeError("layer_norm shape mismatch");
  Matrix xhat(rows, cols);
  Vector inv_std(rows);
  for (Index i = 0; i < rows; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + kEps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Matrix y = xhat.array().rowwise() * value(gain).row(0).array();
  y.rowwise() += value(bias).row(0);
  const auto out = push(std::move(y), needs(a) || needs(gain) || needs(bias));
  if (!needs(out)) return out;
  on_backward(out, [this, a, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
    const Matrix& g = grad(out);
    if (needs(gain)) accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
    if (needs(bias)) accumulate(bias, g.colwise().sum());
    if (needs(a)) {
      Matrix dxhat = g.array().rowwise() * value(gain).row(0).array();
      Matrix dx(dxhat.rows(), dxhat.cols());
      for (Index i = 0; i < dxhat.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
        dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
      }
      accumulate(a, dx);
    }
  });
  return out;
}

NodeId Graph::attention(NodeId q, NodeId k, NodeId v, Index seq_len, int heads, bool causal) {
  const Matrix& Q = value(q);
  const Matrix& K = value(k);
  const Matrix& V = value(v);
  if (Q.rows() != K.rows() || Q.rows() != V.rows() || Q.cols() != K.cols() || Q.cols() != V.cols())
    throw ShapeError("attention q/k/v shape mismatch");
  if (seq_len < 1 || Q.rows() % seq_len != 0) throw ShapeError("attention rows not a multiple of seq_len");
  if (heads < 1 || Q.cols() % heads != 0) throw ShapeError("attention heads must divide width");
  const Index blocks = Q.rows() / seq_len;
  const Index dh = Q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix O(Q.rows(), Q.cols());
  std::vector<Matrix> probs(static_cast<std::size_t>(blocks * heads));
  for (Index b = 0; b < blocks; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = Q.block(b * seq_len, h * dh, seq_len, dh);
      const auto kb = K.block(b * seq_len, h * dh, seq_len, dh);
      const auto vb = V.block(b * seq_len, h * dh, seq_len, dh);
      Matrix s = (qb * kb.transpose()) * inv_sqrt;
      if (causal)
        for (Index i = 0; i < seq_len; ++i)
          for (Index j = i + 1; j < seq_len; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
      Matrix p = softmax_rows(s);
      O.block(b * seq_len, h * dh, seq_len, dh) = p * vb;
      probs[static_cast<std::size_t>(b * heads + h)] = std::move(p);
    }
  }
  const auto out = push(std::move(O), needs(q) || needs(k) || needs(v));
  if (!needs(out)) return out;
  on_backward(out, [this, q, k, v, out, seq_len, heads, blocks, dh, inv_sqrt, probs = std::move(probs)] {
    const Matrix& G = grad(out);
    const Matrix& Q = value(q);
    const Matrix& K = value(k);
    const Matrix& V = value(v);
    Matrix dQ = Matrix::Zero(Q.rows(), Q.cols());
    Matrix dK = Matrix::Zero(Q.rows(), Q.cols());
    Matrix dV = Matrix::Zero(Q.rows(), Q.cols());
    for (Index b = 0; b < blocks; ++b) {
      for (int h = 0; h < heads; ++h) {
        const Matrix& p = probs[static_cast<std::size_t>(b * heads + h)];
        const auto gb = G.block(b * seq_len, h * dh, seq_len, dh);
        const auto qb = Q.block(b * seq_len, h * dh, seq_len, dh);
        const auto kb = K.block(b * seq_len, h * dh, seq_len, dh);
        const auto vb = V.block(b * seq_len, h * dh, seq_len, dh);
        dV.block(b * seq_len, h * dh, seq_len, dh) = p.transpose() * gb;
        Matrix dp = gb * vb.transpose();
        Vector rs = dp.cwiseProduct(p).rowwise().sum();
        Matrix ds = p.cwiseProduct((dp.colwise() - rs));
        dQ.block(b * seq_len, h * dh, seq_len, dh) = ds * kb * inv_sqrt;
        dK.block(b * seq_len, h * dh, seq_len, dh) = ds.transpose() * qb * inv_sqrt;
      }
    }
    accumulate(q, dQ);
    accumulate(k, dK);
    accumulate(v, dV);
  });
  return out;
}

NodeId Graph::patch_embed(NodeId x, NodeId w, NodeId b, Index patch) {
  const Matrix& X = value(x);
  const Matrix& W = value(w);
  const Matrix& B = value(b);
  const Index n = X.rows();
  const Index v = X.cols();
  const Index tokens = (v + patch - 1) / patch;
  if (W.rows() != v || B.rows() != tokens || B.cols() != W.cols()) throw ShapeError("patch_embed shape mismatch");
  const Index width = W.cols();
  Matrix out(n * tokens, width);
  for (Index p = 0; p < tokens; ++p) {
    const Index lo = p * patch;
    const Index len = std::min(patch, v - lo);
    Matrix e = X.middleCols(lo, len) * W.middleRows(lo, len);
    e.rowwise() += B.row(p);
    for (Index i = 0; i < n; ++i) out.row(i * tokens + p) = e.row(i);
  }
  const auto id = push(std::move(out), needs(x) || needs(w) || needs(b));
  on_backward(id, [this, x, w, b, id, patch, tokens, n, v, width] {
    const Matrix& G = grad(id);
    const Matrix& X = value(x);
    const Matrix& W = value(w);
    Matrix dW = Matrix::Zero(W.rows(), width);
    Matrix dB = Matrix::Zero(tokens, width);
    Matrix dX = needs(x) ? Matrix::Zero(n, v) : Matrix();
    for (Index p = 0; p < tokens; ++p) {
      const Index lo = p * patch;
      const Index len = std::min(patch, v - lo);
      Matrix gp(n, width);
      for (Index i = 0; i < n; ++i) gp.row(i) = G.row(i * tokens + p);
      if (needs(w)) dW.middleRows(lo, len) = X.middleCols(lo, len).transpose() * gp;
      dB.row(p) = gp.colwise().sum();
      if (needs(x)) dX.middleCols(lo, len) = gp * W.middleRows(lo, len).transpose();
    }
    accumulate(w, dW);
    accumulate(b, dB);
    if (needs(x)) accumulate(x, dX);
  });
  return id;
}

NodeId Graph::flatten_groups(NodeId a, Index group) {
  const Matrix& A = value(a);
  if (group < 1 || A.rows() % group != 0) throw ShapeError("flatten_groups: rows not a multiple of group");
  const Index n = A.rows() / group;
  const Index w = A.cols();
  Matrix out = Eigen::Map<const Matrix>(A.data(), n, group * w);
  const auto id = push(std::move(out), needs(a));
  on_backward(id, [this, a, id, group, n, w] {
    accumulate(a, Eigen::Map<const Matrix>(grad(id).data(), n * group, w));
  });
  return id;
}

NodeId Graph::gather_rows(NodeId table, std::vector<Index> ids) {
  const Matrix& T = value(table);
  Matrix out(static_cast<Index>(ids.size()), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= T.rows()) throw ArgumentError("gather_rows index out of range");
    out.row(static_cast<Index>(i)) = T.row(ids[i]);
  }
  const auto id = push(std::move(out), needs(table));
  on_backward(id, [this, table, id, ids = std::move(ids)] {
    Matrix g = Matrix::Zero(value(table).rows(), value(table).cols());
    const Matrix& G = grad(id);
    for (std::size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += G.row(static_cast<Index>(i));
    accumulate(table, g);
  });
  return id;
}

NodeId Graph::select_rows(NodeId a, std::vector<Index> rows) {
  return gather_rows(a, std::move(rows));
}

NodeId Graph::l2_normalize_rows(NodeId a) {
  const Matrix& X = value(a);
  Vector norms = X.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) norms(i) = std::max(norms(i), 1e-12);
  Matrix y = X.array().colwise() / norms.array();
  const auto id = push(std::move(y), needs(a));
  on_backward(id, [this, a, id, norms = std::move(norms)] {
    const Matrix& Y = value(id);
    const Matrix& G = grad(id);
    Vector dots = Y.cwiseProduct(G).rowwise().sum();
    Matrix d = (G - (Y.array().colwise() * dots.array()).matrix()).array().colwise() / norms.array();
    accumulate(a, d);
  });
  return id;
}

NodeId Graph::mse_loss(NodeId pred, NodeId target) {
  const Matrix& P = value(pred);
  const Matrix& T = value(target);
  if (P.rows() != T.rows() || P.cols() != T.cols()) throw ShapeError("mse_loss shape mismatch");
  const double n = static_cast<double>(P.rows());
  Matrix out(1, 1);
  out(0, 0) = (P - T).squaredNorm() / n;
  const auto id = push(std::move(out), needs(pred) || needs(target));
  on_backward(id, [this, pred, target, id, n] {
    const double g = grad(id)(0, 0);
    Matrix d = (value(pred) - value(target)) * (2.0 * g / n);
    if (needs(target)) accumulate(target, -d);
    accumulate(pred, d);
  });
  return id;
}

NodeId Graph::infonce_loss(NodeId h, NodeId hm, double eta, bool symmetric) {
  if (!(eta > 0.0)) throw ArgumentError("temperature must be > 0");
  const Matrix& H = value(h);
  const Matrix& Hm = value(hm);
  if (H.rows() != Hm.rows() || H.cols() != Hm.cols()) throw ShapeError("infonce shape mismatch");
  const Matrix s = (H * Hm.transpose()) / eta;
  const Vector lse = logsumexp_rows(s);
  double loss = (lse - s.diagonal()).sum();
  Vector lse_t;
  if (symmetric) {
    const Matrix st = s.transpose();
    lse_t = logsumexp_rows(st);
    loss += (lse_t - s.diagonal()).sum();
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  const auto id = push(std::move(out), needs(h) || needs(hm));
  on_backward(id, [this, h, hm, id, eta, symmetric, s] {
    const double g = grad(id)(0, 0);
    const Index n = s.rows();
    Matrix ds = softmax_rows(s) - Matrix::Identity(n, n);
    if (symmetric) ds += softmax_rows(s.transpose()).transpose() - Matrix::Identity(n, n);
    ds *= g / eta;
    if (needs(h)) accumulate(h, ds * value(hm));
    if (needs(hm)) accumulate(hm, ds.transpose() * value(h));
  });
  return id;
}

NodeId Graph::cross_entropy(NodeId logits, std::vector<Index> targets) {
  const Matrix& L = value(logits);
  if (static_cast<Index>(targets.size()) != L.rows()) throw ShapeError("cross_entropy target count mismatch");
  const Vector lse = logsumexp_rows(L);
  double total = 0.0;
  for (Index i = 0; i < L.rows(); ++i) total += lse(i) - L(i, targets[static_cast<std::size_t>(i)]);
  const double n = static_cast<double>(L.rows());
  Matrix out(1, 1);
  out(0, 0) = total / n;
  const auto id = push(std::move(out), needs(logits));
  on_backward(id, [this, logits, id, n, targets = std::move(targets)] {
    Matrix d = softmax_rows(value(logits));
    for (std::size_t i = 0; i < targets.size(); ++i) d(static_cast<Index>(i), targets[i]) -= 1.0;
    accumulate(logits, d * (grad(id)(0, 0) / n));
  });
  return id;
}

void Adam::step(ParameterSet& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params.items()) {
    auto [it, inserted] = moments_.try_emplace(name);
    auto& [m, v] = it->second;
    if (inserted) {
      m = Matrix::Zero(p.value.rows(), p.value.cols());
      v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    m = beta1_ * m + (1.0 - beta1_) * p.grad;
    v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

}  // namespace mapguide::ad
