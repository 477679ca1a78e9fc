#include "mapguide/stimulus_features.hpp"

#include <cmath>
#include <numbers>

namespace mapguide {

WordVectorPairs embed_contexts(const LanguageModel& lm, const WordTimeline& timeline, int window, int layer) {
  if (timeline.empty()) throw ArgumentError("cannot embed an empty timeline");
  if (window < 0) throw ArgumentError("context window must be >= 0");
  const auto ids = lm.vocabulary().encode(timeline.tokens());
  WordVectorPairs out;
  out.vectors.resize(static_cast<Index>(ids.size()), lm.hidden_dim());
  out.times = timeline.times();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t begin = i >= static_cast<std::size_t>(window) ? i - static_cast<std::size_t>(window) : 0;
    std::span<const TokenId> ctx(ids.data() + begin, i + 1 - begin);
    out.vectors.row(static_cast<Index>(i)) = lm.hidden_state(ctx, layer).transpose();
  }
  return out;
}

double lanczos_kernel(double x, int lobes) {
  if (lobes < 1) throw ArgumentError("lanczos lobes must be >= 1");
  const double a = static_cast<double>(lobes);
  if (std::abs(x) >= a) return 0.0;
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return a * std::sin(px) * std::sin(px / a) / (px * px);
}

EmbeddingSeries lanczos_resample(const WordVectorPairs& pairs, std::span<const double> target_times, int lobes) {
  if (lobes < 1) throw ArgumentError("lanczos lobes must be >= 1");
  if (pairs.size() == 0) throw ArgumentError("no word vectors to resample");
  if (target_times.size() < 2) throw ArgumentError("need >= 2 target times to define the TR");
  const double tr = target_times[1] - target_times[0];
  if (!(tr > 0.0)) throw ArgumentError("target times must be increasing");
  for (std::size_t i = 1; i < target_times.size(); ++i)
    if (std::abs((target_times[i] - target_times[i - 1]) - tr) > 1e-9 * std::max(1.0, tr))
      throw ArgumentError("target times are not uniformly spaced");

  EmbeddingSeries out;
  out.times.assign(target_times.begin(), target_times.end());
  out.vectors = Matrix::Zero(static_cast<Index>(target_times.size()), pairs.dim());
  for (std::size_t r = 0; r < target_times.size(); ++r) {
    double total = 0.0;
    RowVector acc = RowVector::Zero(pairs.dim());
    for (Index i = 0; i < pairs.size(); ++i) {
      const double w = lanczos_kernel((pairs.times[static_cast<std::size_t>(i)] - target_times[r]) / tr, lobes);
      if (w == 0.0) continue;
      total += w;
      acc += w * pairs.vectors.row(i);
    }
    if (total != 0.0) out.vectors.row(static_cast<Index>(r)) = acc / total;
  }
  return out;
}

Matrix delay_matrix(const Matrix& x, std::span<const int> delays) {
  const Index m = x.rows();
  const Index n = x.cols();
  Matrix out = Matrix::Zero(m, n * static_cast<Index>(delays.size()));
  for (std::size_t k = 0; k < delays.size(); ++k) {
    const Index d = delays[k];
    for (Index t = 0; t < m; ++t) {
      const Index src = t - d;
      if (src >= 0 && src < m) out.block(t, static_cast<Index>(k) * n, 1, n) = x.row(src);
    }
  }
  return out;
}

EmbeddingSeries fir_expand(const EmbeddingSeries& series, std::span<const int> delays) {
  if (series.delayed) throw ArgumentError("series is already FIR-expanded");
  if (delays.empty()) throw ArgumentError("need at least one delay");
  EmbeddingSeries out;
  out.vectors = delay_matrix(series.vectors, delays);
  out.times = series.times;
  out.delayed = true;
  return out;
}

EmbeddingSeries fir_expand(const EmbeddingSeries& series) { return fir_expand(series, kDefaultDelays); }

}  // namespace mapguide
