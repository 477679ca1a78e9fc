#pragma once

#include "mapguide/core_data.hpp"
#include "mapguide/guided_decoder.hpp"
#include "mapguide/io.hpp"
#include "mapguide/language_model.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mapguide {

using Tokens = std::vector<std::string>;

struct WindowPair {
  Tokens ref;
  Tokens pred;
  double start = 0.0;
};

struct WindowPairSet {
  std::vector<WindowPair> windows;
  double width = 20.0;
  double stride = 2.0;
};

struct WindowOptions {
  double width = 20.0;
  double stride = 2.0;
  // Default interval: first to last word time across both timelines.
  std::optional<double> t_start;
  std::optional<double> t_end;
};

// Windows start at t_start + k*stride while start + width <= t_end (at least
// one window). Membership is half-open; windows with an empty reference are
// dropped.
WindowPairSet window_pairs(const WordTimeline& ref, const WordTimeline& pred, const WindowOptions& opt = {});

// Levenshtein(pred -> ref) / |ref|. Throws UndefinedError on an empty reference.
double wer(const Tokens& ref, const Tokens& pred);
// Clipped unigram precision, no brevity penalty. Empty prediction scores 0.
double bleu1(const Tokens& ref, const Tokens& pred);

std::string porter_stem(const std::string& word);

struct MeteorAlignment {
  int matches = 0;
  int chunks = 0;
};
// Exact stage, then stem stage over what is left.
MeteorAlignment meteor_align(const Tokens& ref, const Tokens& pred);
double meteor(const Tokens& ref, const Tokens& pred);

// idf(w) = log((1 + N) / (1 + df(w))) over N training stories.
class IdfTable {
 public:
  IdfTable() = default;
  explicit IdfTable(const std::vector<WordTimeline>& stories);
  IdfTable(std::size_t n_documents, std::map<std::string, int> document_freq);

  double idf(const std::string& word) const;
  std::size_t n_documents() const { return n_docs_; }
  bool empty() const { return n_docs_ == 0; }
  const std::map<std::string, int>& document_freq() const { return df_; }

 private:
  std::size_t n_docs_ = 0;
  std::map<std::string, int> df_;
};

// Contextual token vectors: the LM state for each token given up to `window`
// preceding tokens of the same list. Unknown words embed as zero vectors.
class TokenEmbedder {
 public:
  TokenEmbedder(const LanguageModel& lm, int layer = 0, int window = 5);
  Matrix embed(const Tokens& tokens);

 private:
  const LanguageModel& lm_;
  ContextEmbedder ctx_;
};

// Generic form with caller-provided token vectors (rows align with tokens).
double bert_recall(const Tokens& ref, const Matrix& ref_vectors, const Tokens& pred, const Matrix& pred_vectors,
                   const IdfTable& idf);
double bert_recall(const Tokens& ref, const Tokens& pred, TokenEmbedder& embedder, const IdfTable& idf);

// n unguided LM samples on a shared word-time grid.
std::vector<WordTimeline> random_baseline(const LanguageModel& lm, const std::vector<double>& word_times, int n = 200,
                                          std::uint64_t seed = 0);

enum class Metric { wer, bleu, meteor, bert };
std::string to_string(Metric m);
Metric metric_from_string(const std::string& s);
inline const std::vector<Metric> kAllMetrics = {Metric::wer, Metric::bleu, Metric::meteor, Metric::bert};

// Everything a metric may need beyond the token lists.
struct MetricContext {
  TokenEmbedder* embedder = nullptr;
  const IdfTable* idf = nullptr;
};

// Larger is better for every metric (WER is negated).
double similarity(Metric m, const Tokens& ref, const Tokens& pred, MetricContext& ctx);

struct RandomBaselineStats {
  std::vector<double> window_mean;
  std::vector<double> window_std;
  double mean = 0.0;
  double std = 0.0;
  int n_sequences = 0;
};

// sims[b][i] = similarity of baseline b in window i. Stds use n - 1.
RandomBaselineStats baseline_stats(const std::vector<std::vector<double>>& sims);

struct NormalizedScore {
  double sim_pos = 0.0;
  double sim_zs = 0.0;
  double mean_similarity = 0.0;
  std::vector<double> window_similarity;
  RandomBaselineStats baseline;
};

// Positive rate (strict) and story z-score from per-window similarities.
// Throws UndefinedError when the baseline spread is zero.
NormalizedScore normalized_scores(const std::vector<double>& pred_sims, const std::vector<std::vector<double>>& baseline_sims);
NormalizedScore normalized_scores(const WordTimeline& ref, const WordTimeline& pred,
                                  const std::vector<WordTimeline>& baselines, Metric metric, MetricContext& ctx,
                                  const WindowOptions& opt = {});

struct MetricReport {
  std::map<Metric, NormalizedScore> scores;
  std::vector<double> window_starts;
};

MetricReport evaluate_transcript(const WordTimeline& ref, const WordTimeline& pred,
                                 const std::vector<WordTimeline>& baselines, const std::vector<Metric>& metrics,
                                 MetricContext& ctx, const WindowOptions& opt = {});

json to_json(const MetricReport& r);
// One row per window: start, then similarity and baseline mean/std per metric.
std::string windows_csv(const MetricReport& r);

double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct CorrelationBin {
  double x_center = 0.0;
  double y_mean = 0.0;
  double y_std = 0.0;
  int count = 0;
};

struct CorrelationReport {
  double spearman = 0.0;
  std::vector<CorrelationBin> bins;
};

// Needs at least 3 runs; constant inputs throw UndefinedError.
CorrelationReport correlation_report(const std::vector<std::pair<double, double>>& runs, int n_bins = 5);
json to_json(const CorrelationReport& r);

}  // namespace mapguide
