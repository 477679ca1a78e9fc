#include "mapguide/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace mapguide {

namespace {

WindowOptions resolve_interval(const WordTimeline& ref, const WordTimeline& pred, const WindowOptions& opt) {
  if (ref.empty() || pred.empty()) throw ArgumentError("window_pairs needs non-empty timelines");
  if (!(opt.width > 0.0)) throw ArgumentError("window width must be > 0");
  if (!(opt.stride > 0.0)) throw ArgumentError("window stride must be > 0");
  WindowOptions out = opt;
  if (!out.t_start) out.t_start = std::min(ref.entries.front().time, pred.entries.front().time);
  if (!out.t_end) out.t_end = std::max(ref.entries.back().time, pred.entries.back().time);
  return out;
}

std::vector<double> window_starts(const WindowOptions& opt) {
  std::vector<double> starts;
  const double t0 = *opt.t_start;
  const double t1 = *opt.t_end;
  for (long k = 0;; ++k) {
    const double s = t0 + static_cast<double>(k) * opt.stride;
    if (s + opt.width > t1 + 1e-9) break;
    starts.push_back(s);
  }
  if (starts.empty()) starts.push_back(t0);
  return starts;
}

Tokens tokens_in(const WordTimeline& tl, double begin, double end) {
  Tokens out;
  // Timelines are sorted: binary search the first entry at or after begin.
  auto it = std::lower_bound(tl.entries.begin(), tl.entries.end(), begin,
                             [](const WordEntry& e, double t) { return e.time < t; });
  for (; it != tl.entries.end() && it->time < end; ++it) out.push_back(it->token);
  return out;
}

// Same window grid for the prediction and every baseline.
struct Grid {
  std::vector<double> starts;
  std::vector<Tokens> refs;
  double width = 0.0;
};

Grid make_grid(const WordTimeline& ref, const WindowOptions& resolved) {
  Grid g;
  g.width = resolved.width;
  for (double s : window_starts(resolved)) {
    auto r = tokens_in(ref, s, s + resolved.width);
    if (r.empty()) continue;
    g.starts.push_back(s);
    g.refs.push_back(std::move(r));
  }
  if (g.starts.empty()) throw UndefinedError("no evaluation window contains reference words");
  return g;
}

std::vector<double> grid_similarities(const Grid& g, const WordTimeline& pred, Metric m, MetricContext& ctx) {
  std::vector<double> out;
  out.reserve(g.starts.size());
  for (std::size_t i = 0; i < g.starts.size(); ++i)
    out.push_back(similarity(m, g.refs[i], tokens_in(pred, g.starts[i], g.starts[i] + g.width), ctx));
  return out;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v, double mean) {
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

WindowPairSet window_pairs(const WordTimeline& ref, const WordTimeline& pred, const WindowOptions& opt) {
  const auto resolved = resolve_interval(ref, pred, opt);
  WindowPairSet set;
  set.width = resolved.width;
  set.stride = resolved.stride;
  for (double s : window_starts(resolved)) {
    WindowPair w;
    w.start = s;
    w.ref = tokens_in(ref, s, s + resolved.width);
    if (w.ref.empty()) continue;
    w.pred = tokens_in(pred, s, s + resolved.width);
    set.windows.push_back(std::move(w));
  }
  return set;
}

double wer(const Tokens& ref, const Tokens& pred) {
  if (ref.empty()) throw UndefinedError("WER is undefined for an empty reference");
  std::vector<std::size_t> prev(ref.size() + 1), cur(ref.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= pred.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (pred[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[ref.size()]) / static_cast<double>(ref.size());
}

double bleu1(const Tokens& ref, const Tokens& pred) {
  if (pred.empty()) return 0.0;
  std::map<std::string, int> ref_counts, pred_counts;
  for (const auto& w : ref) ++ref_counts[w];
  for (const auto& w : pred) ++pred_counts[w];
  int clipped = 0;
  for (const auto& [w, c] : pred_counts) {
    auto it = ref_counts.find(w);
    if (it != ref_counts.end()) clipped += std::min(c, it->second);
  }
  return static_cast<double>(clipped) / static_cast<double>(pred.size());
}

MeteorAlignment meteor_align(const Tokens& ref, const Tokens& pred) {
  // match_of[i] = reference index aligned to pred[i], or -1.
  std::vector<long> match_of(pred.size(), -1);
  std::vector<bool> ref_used(ref.size(), false);
  auto stage = [&](auto key) {
    std::vector<std::string> rk(ref.size());
    for (std::size_t j = 0; j < ref.size(); ++j) rk[j] = key(ref[j]);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (match_of[i] >= 0) continue;
      const auto pk = key(pred[i]);
      long pick = -1;
      // Prefer the slot that extends the previous word's chunk.
      if (i > 0 && match_of[i - 1] >= 0) {
        const auto next = static_cast<std::size_t>(match_of[i - 1] + 1);
        if (next < ref.size() && !ref_used[next] && rk[next] == pk) pick = static_cast<long>(next);
      }
      for (std::size_t j = 0; pick < 0 && j < ref.size(); ++j)
        if (!ref_used[j] && rk[j] == pk) pick = static_cast<long>(j);
      if (pick >= 0) {
        match_of[i] = pick;
        ref_used[static_cast<std::size_t>(pick)] = true;
      }
    }
  };
  stage([](const std::string& w) { return w; });
  stage([](const std::string& w) { return porter_stem(w); });

  MeteorAlignment a;
  long prev_i = -2;
  long prev_j = -2;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (match_of[i] < 0) continue;
    ++a.matches;
    const long ii = static_cast<long>(i);
    if (!(ii == prev_i + 1 && match_of[i] == prev_j + 1)) ++a.chunks;
    prev_i = ii;
    prev_j = match_of[i];
  }
  return a;
}

double meteor(const Tokens& ref, const Tokens& pred) {
  if (ref.empty() || pred.empty()) return 0.0;
  const auto a = meteor_align(ref, pred);
  if (a.matches == 0) return 0.0;
  const double m = a.matches;
  const double p = m / static_cast<double>(pred.size());
  const double r = m / static_cast<double>(ref.size());
  const double f = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return f * (1.0 - penalty);
}

IdfTable::IdfTable(const std::vector<WordTimeline>& stories) : n_docs_(stories.size()) {
  for (const auto& s : stories) {
    std::vector<std::string> seen;
    for (const auto& e : s.entries) seen.push_back(e.token);
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (const auto& w : seen) ++df_[w];
  }
}

IdfTable::IdfTable(std::size_t n_documents, std::map<std::string, int> document_freq)
    : n_docs_(n_documents), df_(std::move(document_freq)) {
  for (const auto& [w, c] : df_)
    if (c < 0 || static_cast<std::size_t>(c) > n_docs_) throw ArgumentError("document frequency out of range for '" + w + "'");
}

double IdfTable::idf(const std::string& word) const {
  if (empty()) throw ConfigurationError("idf table is empty");
  auto it = df_.find(word);
  const double df = it == df_.end() ? 0.0 : it->second;
  return std::log((1.0 + static_cast<double>(n_docs_)) / (1.0 + df));
}

TokenEmbedder::TokenEmbedder(const LanguageModel& lm, int layer, int window)
    : lm_(lm), ctx_(lm, layer, window) {}

Matrix TokenEmbedder::embed(const Tokens& tokens) {
  Matrix out = Matrix::Zero(static_cast<Index>(tokens.size()), lm_.hidden_dim());
  std::vector<TokenId> known;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!lm_.vocabulary().contains(tokens[i])) continue;
    known.push_back(lm_.vocabulary().id(tokens[i]));
    out.row(static_cast<Index>(i)) = ctx_.embed_tail(known).transpose();
  }
  return out;
}

double bert_recall(const Tokens& ref, const Matrix& ref_vectors, const Tokens& pred, const Matrix& pred_vectors,
                   const IdfTable& idf) {
  if (idf.empty()) throw ConfigurationError("bert_recall needs a non-empty idf table");
  if (ref_vectors.rows() != static_cast<Index>(ref.size()) || pred_vectors.rows() != static_cast<Index>(pred.size()))
    throw ShapeError("token vectors must have one row per token");
  if (!ref.empty() && !pred.empty() && ref_vectors.cols() != pred_vectors.cols())
    throw ShapeError("reference and prediction vectors differ in width");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double w = idf.idf(ref[i]);
    den += w;
    if (pred.empty()) continue;
    double best = -1.0;
    for (Index j = 0; j < pred_vectors.rows(); ++j)
      best = std::max(best, cosine(ref_vectors.row(static_cast<Index>(i)), pred_vectors.row(j)));
    num += w * best;
  }
  return den > 0.0 ? num / den : 0.0;
}

double bert_recall(const Tokens& ref, const Tokens& pred, TokenEmbedder& embedder, const IdfTable& idf) {
  return bert_recall(ref, embedder.embed(ref), pred, embedder.embed(pred), idf);
}

std::vector<WordTimeline> random_baseline(const LanguageModel& lm, const std::vector<double>& word_times, int n,
                                          std::uint64_t seed) {
  if (n < 2) throw ArgumentError("random baseline needs n >= 2");
  auto rng = make_stream(seed, "eval/baseline");
  const auto& vocab = lm.vocabulary();
  std::vector<WordTimeline> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) {
    std::vector<TokenId> ids;
    WordTimeline tl;
    for (double t : word_times) {
      Vector p = lm.next_token_distribution(ids);
      p(Vocabulary::kBos) = 0.0;
      const double total = p.sum();
      TokenId pick = static_cast<TokenId>(p.size()) - 1;
      if (total > 0.0) {
        const double u = uniform01(rng) * total;
        double acc = 0.0;
        for (Index i = 1; i < p.size(); ++i) {
          acc += p(i);
          if (u < acc) {
            pick = static_cast<TokenId>(i);
            break;
          }
        }
      } else {
        pick = 1 + static_cast<TokenId>(uniform_index(rng, static_cast<std::size_t>(p.size() - 1)));
      }
      ids.push_back(pick);
      tl.entries.push_back({vocab.token(pick), t});
    }
    out.push_back(std::move(tl));
  }
  return out;
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::wer: return "WER";
    case Metric::bleu: return "BLEU";
    case Metric::meteor: return "METR";
    case Metric::bert: return "BERT";
  }
  return "?";
}

Metric metric_from_string(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (u == "WER") return Metric::wer;
  if (u == "BLEU") return Metric::bleu;
  if (u == "METR" || u == "METEOR") return Metric::meteor;
  if (u == "BERT") return Metric::bert;
  throw ValidationError("unknown metric '" + s + "' (expected WER, BLEU, METR or BERT)");
}

double similarity(Metric m, const Tokens& ref, const Tokens& pred, MetricContext& ctx) {
  switch (m) {
    case Metric::wer: return -wer(ref, pred);
    case Metric::bleu: return bleu1(ref, pred);
    case Metric::meteor: return meteor(ref, pred);
    case Metric::bert:
      if (ctx.embedder == nullptr || ctx.idf == nullptr)
        throw ConfigurationError("BERT metric needs a language model and an idf table");
      return bert_recall(ref, pred, *ctx.embedder, *ctx.idf);
  }
  throw ArgumentError("unknown metric");
}

RandomBaselineStats baseline_stats(const std::vector<std::vector<double>>& sims) {
  if (sims.size() < 2) throw ArgumentError("baseline statistics need at least 2 sequences");
  const std::size_t s = sims.front().size();
  if (s == 0) throw ArgumentError("baseline statistics need at least one window");
  for (const auto& row : sims)
    if (row.size() != s) throw ShapeError("every baseline must cover the same windows");
  RandomBaselineStats st;
  st.n_sequences = static_cast<int>(sims.size());
  std::vector<double> column(sims.size());
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t b = 0; b < sims.size(); ++b) column[b] = sims[b][i];
    const double mu = mean_of(column);
    st.window_mean.push_back(mu);
    st.window_std.push_back(sample_std(column, mu));
  }
  std::vector<double> averages;
  for (const auto& row : sims) averages.push_back(mean_of(row));
  st.mean = mean_of(averages);
  st.std = sample_std(averages, st.mean);
  return st;
}

NormalizedScore normalized_scores(const std::vector<double>& pred_sims,
                                  const std::vector<std::vector<double>>& baseline_sims) {
  NormalizedScore out;
  out.baseline = baseline_stats(baseline_sims);
  if (pred_sims.size() != out.baseline.window_mean.size())
    throw ShapeError("prediction and baselines must cover the same windows");
  out.window_similarity = pred_sims;
  int positive = 0;
  for (std::size_t i = 0; i < pred_sims.size(); ++i)
    if (pred_sims[i] - out.baseline.window_mean[i] > 0.0) ++positive;
  out.sim_pos = static_cast<double>(positive) / static_cast<double>(pred_sims.size());
  out.mean_similarity = mean_of(pred_sims);
  if (out.baseline.std == 0.0) throw UndefinedError("story z-score is undefined: baseline spread is zero");
  out.sim_zs = (out.mean_similarity - out.baseline.mean) / out.baseline.std;
  return out;
}

NormalizedScore normalized_scores(const WordTimeline& ref, const WordTimeline& pred,
                                  const std::vector<WordTimeline>& baselines, Metric metric, MetricContext& ctx,
                                  const WindowOptions& opt) {
  const auto grid = make_grid(ref, resolve_interval(ref, pred, opt));
  std::vector<std::vector<double>> base;
  base.reserve(baselines.size());
  for (const auto& b : baselines) base.push_back(grid_similarities(grid, b, metric, ctx));
  return normalized_scores(grid_similarities(grid, pred, metric, ctx), base);
}

MetricReport evaluate_transcript(const WordTimeline& ref, const WordTimeline& pred,
                                 const std::vector<WordTimeline>& baselines, const std::vector<Metric>& metrics,
                                 MetricContext& ctx, const WindowOptions& opt) {
  const auto grid = make_grid(ref, resolve_interval(ref, pred, opt));
  MetricReport report;
  report.window_starts = grid.starts;
  for (auto m : metrics) {
    std::vector<std::vector<double>> base;
    base.reserve(baselines.size());
    for (const auto& b : baselines) base.push_back(grid_similarities(grid, b, m, ctx));
    report.scores[m] = normalized_scores(grid_similarities(grid, pred, m, ctx), base);
  }
  return report;
}

json to_json(const MetricReport& r) {
  json metrics = json::object();
  for (const auto& [m, s] : r.scores) {
    metrics[to_string(m)] = {{"sim_pos", s.sim_pos},
                             {"sim_zs", s.sim_zs},
                             {"mean_similarity", s.mean_similarity},
                             {"baseline_mean", s.baseline.mean},
                             {"baseline_std", s.baseline.std},
                             {"n_baselines", s.baseline.n_sequences}};
  }
  json windows = json::array();
  for (std::size_t i = 0; i < r.window_starts.size(); ++i) {
    json w = {{"start", r.window_starts[i]}};
    for (const auto& [m, s] : r.scores)
      w[to_string(m)] = {{"similarity", s.window_similarity[i]},
                         {"baseline_mean", s.baseline.window_mean[i]},
                         {"baseline_std", s.baseline.window_std[i]}};
    windows.push_back(std::move(w));
  }
  return {{"metrics", metrics}, {"windows", windows}};
}

std::string windows_csv(const MetricReport& r) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "start";
  for (const auto& [m, s] : r.scores) {
    const auto n = to_string(m);
    os << ',' << n << ',' << n << "_baseline_mean," << n << "_baseline_std";
  }
  os << '\n';
  for (std::size_t i = 0; i < r.window_starts.size(); ++i) {
    os << r.window_starts[i];
    for (const auto& [m, s] : r.scores)
      os << ',' << s.window_similarity[i] << ',' << s.baseline.window_mean[i] << ',' << s.baseline.window_std[i];
    os << '\n';
  }
  return os.str();
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ArgumentError("spearman needs equal-length inputs");
  if (x.size() < 2) throw ArgumentError("spearman needs at least 2 points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean_of(rx);
  const double my = mean_of(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedError("correlation is undefined for constant input");
  return sxy / std::sqrt(sxx * syy);
}

CorrelationReport correlation_report(const std::vector<std::pair<double, double>>& runs, int n_bins) {
  if (runs.size() < 3) throw ArgumentError("correlation report needs at least 3 runs");
  if (n_bins < 1) throw ArgumentError("n_bins must be >= 1");
  std::vector<double> x, y;
  for (const auto& [a, b] : runs) {
    x.push_back(a);
    y.push_back(b);
  }
  CorrelationReport rep;
  rep.spearman = spearman(x, y);
  const double lo = *std::min_element(x.begin(), x.end());
  const double hi = *std::max_element(x.begin(), x.end());
  const double step = (hi - lo) / n_bins;
  std::vector<std::vector<double>> bins(static_cast<std::size_t>(n_bins));
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto b = static_cast<int>((x[i] - lo) / step);
    b = std::clamp(b, 0, n_bins - 1);
    bins[static_cast<std::size_t>(b)].push_back(y[i]);
  }
  for (int b = 0; b < n_bins; ++b) {
    const auto& ys = bins[static_cast<std::size_t>(b)];
    if (ys.empty()) continue;
    CorrelationBin cb;
    cb.x_center = lo + (b + 0.5) * step;
    cb.count = static_cast<int>(ys.size());
    cb.y_mean = mean_of(ys);
    double ss = 0.0;
    for (double v : ys) ss += (v - cb.y_mean) * (v - cb.y_mean);
    cb.y_std = std::sqrt(ss / static_cast<double>(ys.size()));
    rep.bins.push_back(cb);
  }
  return rep;
}

json to_json(const CorrelationReport& r) {
  json bins = json::array();
  for (const auto& b : r.bins)
    bins.push_back({{"x_center", b.x_center}, {"y_mean", b.y_mean}, {"y_std", b.y_std}, {"count", b.count}});
  return {{"spearman", r.spearman}, {"bins", bins}};
}

}  // namespace mapguide
