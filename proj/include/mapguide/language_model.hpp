#pragma once

#include "mapguide/autograd.hpp"
#include "mapguide/core_data.hpp"
#include "mapguide/io.hpp"

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mapguide {

using TokenId = int;

class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr const char* kBosToken = "<bos>";

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}
  // `words` must not contain the begin-of-text marker; it is inserted at id 0.
  explicit Vocabulary(const std::vector<std::string>& words);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  // Throws VocabularyError for unknown words.
  TokenId id(const std::string& word) const;
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<TokenId> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// What the decoder and the feature pipeline need from a generative LM.
// External models plug in by implementing this.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const Vocabulary& vocabulary() const = 0;
  virtual int context_limit() const = 0;
  virtual int hidden_dim() const = 0;
  virtual int n_layers() const = 0;

  // Distribution over the vocabulary for the token following `context`.
  // Contexts longer than the limit are truncated to the most recent tokens.
  virtual Vector next_token_distribution(std::span<const TokenId> context) const = 0;
  // Representation of the last context position after block `layer` (1-based).
  virtual Vector hidden_state(std::span<const TokenId> context, int layer) const = 0;

  int default_layer() const { return (n_layers() + 1) / 2; }
};

Vector next_token_distribution(const LanguageModel& lm, const std::vector<std::string>& context);
Vector hidden_state(const LanguageModel& lm, const std::vector<std::string>& context, int layer);

struct ToyLmConfig {
  int hidden_dim = 16;
  int n_layers = 2;
  int n_heads = 2;
  int ffn_mult = 4;
  int context_limit = 8;
  int epochs = 6;
  int batch_size = 64;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
  // Fixed vocabulary; empty means "collect from the corpus".
  std::vector<std::string> vocabulary;

  void validate() const;
};

json to_json(const ToyLmConfig& c);
ToyLmConfig toy_lm_config_from_json(const json& j);

// Word-level causal transformer: token + position embeddings, post-LN
// self-attention blocks, linear output head.
class ToyLm final : public LanguageModel {
 public:
  ToyLm(ToyLmConfig config, Vocabulary vocab);

  const Vocabulary& vocabulary() const override { return vocab_; }
  int context_limit() const override { return config_.context_limit; }
  int hidden_dim() const override { return config_.hidden_dim; }
  int n_layers() const override { return config_.n_layers; }
  Vector next_token_distribution(std::span<const TokenId> context) const override;
  Vector hidden_state(std::span<const TokenId> context, int layer) const override;

  // Logits for every position of an explicit model input (no BOS handling,
  // no truncation). Row i depends only on input[0..i].
  Matrix position_logits(std::span<const TokenId> input) const;
  // Block outputs for every position of an explicit model input.
  Matrix position_hidden(std::span<const TokenId> input, int layer) const;

  // The model input for a context: the most recent `context_limit` tokens of
  // [<bos>] + context.
  std::vector<TokenId> model_input(std::span<const TokenId> context) const;

  const ToyLmConfig& config() const { return config_; }
  ad::ParameterSet& parameters() { return params_; }
  const ad::ParameterSet& parameters() const { return params_; }
  std::uint64_t corpus_digest() const { return corpus_digest_; }
  void set_corpus_digest(std::uint64_t d) { corpus_digest_ = d; }

  // Training-time forward over `batch` sequences of equal length laid out
  // row-major; returns block outputs (index 0 = embeddings) and logits node.
  struct Forward {
    std::vector<ad::NodeId> layers;
    ad::NodeId logits = -1;
  };
  Forward forward(ad::Graph& g, const std::vector<TokenId>& flat_ids, Index seq_len, int up_to_layer) const;

 private:
  ToyLmConfig config_;
  Vocabulary vocab_;
  // Mutable only through training; inference treats it as read-only.
  mutable ad::ParameterSet params_;
  std::uint64_t corpus_digest_ = 0;
};

// Trains on the token streams of `corpus`. Throws ArgumentError on an empty corpus.
ToyLm train_toy_lm(const std::vector<WordTimeline>& corpus, const ToyLmConfig& config);

// exp(mean NLL) over every position of every story, predicting each token
// from its (truncated) left context.
double perplexity(const LanguageModel& lm, const std::vector<WordTimeline>& stories);

void save_toy_lm(const ToyLm& lm, const fs::path& dir);
ToyLm load_toy_lm(const fs::path& dir);

}  // namespace mapguide
