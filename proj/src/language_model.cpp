#include "mapguide/language_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace mapguide {

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  tokens_.push_back(kBosToken);
  index_.emplace(kBosToken, kBos);
  for (const auto& w : words) {
    if (w == kBosToken) throw VocabularyError("vocabulary words must not contain the <bos> marker");
    if (index_.count(w)) throw VocabularyError("duplicate vocabulary word '" + w + "'");
    index_.emplace(w, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(w);
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw VocabularyError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw VocabularyError("word '" + word + "' is not in the vocabulary");
  return it->second;
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<TokenId> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(token(id));
  return out;
}

Vector next_token_distribution(const LanguageModel& lm, const std::vector<std::string>& context) {
  const auto ids = lm.vocabulary().encode(context);
  return lm.next_token_distribution(ids);
}

Vector hidden_state(const LanguageModel& lm, const std::vector<std::string>& context, int layer) {
  const auto ids = lm.vocabulary().encode(context);
  return lm.hidden_state(ids, layer);
}

void ToyLmConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("lm config: " + m); };
  if (hidden_dim < 1) fail("hidden_dim must be >= 1");
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (n_heads < 1 || hidden_dim % n_heads != 0) fail("n_heads must divide hidden_dim");
  if (ffn_mult < 1) fail("ffn_mult must be >= 1");
  if (context_limit < 2) fail("context_limit must be >= 2");
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
}

json to_json(const ToyLmConfig& c) {
  return {{"hidden_dim", c.hidden_dim}, {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
          {"ffn_mult", c.ffn_mult},     {"context_limit", c.context_limit}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"seed", c.seed},
          {"vocabulary", c.vocabulary}};
}

ToyLmConfig toy_lm_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"hidden_dim", "n_layers", "n_heads", "ffn_mult", "context_limit", "epochs", "batch_size",
                       "learning_rate", "seed", "vocabulary"},
                      "lm config");
  ToyLmConfig c;
  try {
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.context_limit = j.value("context_limit", c.context_limit);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.vocabulary = j.value("vocabulary", c.vocabulary);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("lm config: ") + e.what());
  }
  return c;
}

ToyLm::ToyLm(ToyLmConfig config, Vocabulary vocab) : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.validate();
  auto rng = make_stream(config_.seed, "lm/init");
  const Index d = config_.hidden_dim;
  const Index v = static_cast<Index>(vocab_.size());
  const Index f = d * config_.ffn_mult;
  params_.add("tok_emb", ad::xavier_normal(v, d, rng));
  params_.add("pos_emb", ad::xavier_normal(config_.context_limit, d, rng) * 0.1);
  for (int l = 1; l <= config_.n_layers; ++l) {
    const auto p = "block" + std::to_string(l) + "/";
    params_.add(p + "wq", ad::xavier_normal(d, d, rng));
    params_.add(p + "wk", ad::xavier_normal(d, d, rng));
    params_.add(p + "wv", ad::xavier_normal(d, d, rng));
    params_.add(p + "wo", ad::xavier_normal(d, d, rng));
    params_.add(p + "ln1_g", Matrix::Ones(1, d));
    params_.add(p + "ln1_b", Matrix::Zero(1, d));
    params_.add(p + "w1", ad::xavier_normal(d, f, rng));
    params_.add(p + "b1", Matrix::Zero(1, f));
    params_.add(p + "w2", ad::xavier_normal(f, d, rng));
    params_.add(p + "b2", Matrix::Zero(1, d));
    params_.add(p + "ln2_g", Matrix::Ones(1, d));
    params_.add(p + "ln2_b", Matrix::Zero(1, d));
  }
  params_.add("out_w", ad::xavier_normal(d, v, rng));
  params_.add("out_b", Matrix::Zero(1, v));
}

ToyLm::Forward ToyLm::forward(ad::Graph& g, const std::vector<TokenId>& flat_ids, Index seq_len,
                              int up_to_layer) const {
  if (seq_len < 1 || seq_len > config_.context_limit) throw ArgumentError("sequence length exceeds context limit");
  if (static_cast<Index>(flat_ids.size()) % seq_len != 0) throw ShapeError("ids not a multiple of seq_len");
  std::vector<Index> ids(flat_ids.begin(), flat_ids.end());
  std::vector<Index> pos(flat_ids.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<Index>(i) % seq_len;
  for (auto id : ids)
    if (id < 0 || id >= static_cast<Index>(vocab_.size())) throw VocabularyError("token id out of range");

  auto P = [&](const std::string& name) { return g.param(params_.at(name)); };
  Forward out;
  auto x = g.add(g.gather_rows(P("tok_emb"), std::move(ids)), g.gather_rows(P("pos_emb"), std::move(pos)));
  out.layers.push_back(x);
  for (int l = 1; l <= up_to_layer; ++l) {
    const auto p = "block" + std::to_string(l) + "/";
    auto q = g.matmul(x, P(p + "wq"));
    auto k = g.matmul(x, P(p + "wk"));
    auto v = g.matmul(x, P(p + "wv"));
    auto a = g.matmul(g.attention(q, k, v, seq_len, config_.n_heads, true), P(p + "wo"));
    auto h = g.layer_norm(g.add(x, a), P(p + "ln1_g"), P(p + "ln1_b"));
    auto ff = g.add_bias(g.matmul(g.gelu(g.add_bias(g.matmul(h, P(p + "w1")), P(p + "b1"))), P(p + "w2")),
                         P(p + "b2"));
    x = g.layer_norm(g.add(h, ff), P(p + "ln2_g"), P(p + "ln2_b"));
    out.layers.push_back(x);
  }
  if (up_to_layer == config_.n_layers) out.logits = g.add_bias(g.matmul(x, P("out_w")), P("out_b"));
  return out;
}

std::vector<TokenId> ToyLm::model_input(std::span<const TokenId> context) const {
  std::vector<TokenId> full;
  full.reserve(context.size() + 1);
  full.push_back(Vocabulary::kBos);
  full.insert(full.end(), context.begin(), context.end());
  const auto limit = static_cast<std::size_t>(config_.context_limit);
  if (full.size() > limit) full.erase(full.begin(), full.end() - static_cast<std::ptrdiff_t>(limit));
  return full;
}

Matrix ToyLm::position_logits(std::span<const TokenId> input) const {
  ad::Graph g(false);
  const std::vector<TokenId> ids(input.begin(), input.end());
  auto f = forward(g, ids, static_cast<Index>(ids.size()), config_.n_layers);
  return g.value(f.logits);
}

Matrix ToyLm::position_hidden(std::span<const TokenId> input, int layer) const {
  if (layer < 1 || layer > config_.n_layers)
    throw ArgumentError("layer " + std::to_string(layer) + " outside [1, " + std::to_string(config_.n_layers) + "]");
  ad::Graph g(false);
  const std::vector<TokenId> ids(input.begin(), input.end());
  auto f = forward(g, ids, static_cast<Index>(ids.size()), layer);
  return g.value(f.layers.back());
}

Vector ToyLm::next_token_distribution(std::span<const TokenId> context) const {
  const auto input = model_input(context);
  const Matrix logits = position_logits(input);
  return ad::softmax_rows(logits.bottomRows(1)).row(0).transpose();
}

Vector ToyLm::hidden_state(std::span<const TokenId> context, int layer) const {
  const auto input = model_input(context);
  const Matrix h = position_hidden(input, layer);
  return h.bottomRows(1).row(0).transpose();
}

namespace {

std::uint64_t digest_corpus(const std::vector<WordTimeline>& corpus) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& story : corpus) {
    for (const auto& e : story.entries) {
      h = splitmix64(h ^ fnv1a(e.token));
    }
    h = splitmix64(h ^ 0x5eedULL);
  }
  return h;
}

}  // namespace

ToyLm train_toy_lm(const std::vector<WordTimeline>& corpus, const ToyLmConfig& config) {
  config.validate();
  std::size_t total = 0;
  for (const auto& s : corpus) total += s.size();
  if (total == 0) throw ArgumentError("cannot train a language model on an empty corpus");

  std::vector<std::string> words = config.vocabulary;
  if (words.empty()) {
    std::set<std::string> uniq;
    for (const auto& s : corpus)
      for (const auto& e : s.entries) uniq.insert(e.token);
    words.assign(uniq.begin(), uniq.end());
  }
  ToyLm lm(config, Vocabulary(words));
  lm.set_corpus_digest(digest_corpus(corpus));
  const auto& vocab = lm.vocabulary();

  // Training windows: every length-L slice of [<bos>] + story (shorter
  // stories give one short window).
  const auto L = static_cast<std::size_t>(config.context_limit);
  struct Window {
    std::vector<TokenId> input;
    std::vector<Index> target;
  };
  std::map<std::size_t, std::vector<Window>> by_len;
  for (const auto& s : corpus) {
    if (s.empty()) continue;
    std::vector<TokenId> seq{Vocabulary::kBos};
    for (const auto& e : s.entries) seq.push_back(vocab.id(e.token));
    const std::size_t len = std::min(L, seq.size() - 1);
    for (std::size_t st = 0; st + len < seq.size(); ++st) {
      Window w;
      w.input.assign(seq.begin() + static_cast<std::ptrdiff_t>(st), seq.begin() + static_cast<std::ptrdiff_t>(st + len));
      for (std::size_t i = 0; i < len; ++i) w.target.push_back(seq[st + i + 1]);
      by_len[len].push_back(std::move(w));
    }
  }

  ad::Adam opt(config.learning_rate);
  auto rng = make_stream(config.seed, "lm/shuffle");
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (auto& [len, windows] : by_len) {
      std::vector<std::size_t> order(windows.size());
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
        std::vector<TokenId> ids;
        std::vector<Index> targets;
        for (std::size_t i = b; i < end; ++i) {
          const auto& w = windows[order[i]];
          ids.insert(ids.end(), w.input.begin(), w.input.end());
          targets.insert(targets.end(), w.target.begin(), w.target.end());
        }
        ad::Graph g;
        auto f = lm.forward(g, ids, static_cast<Index>(len), config.n_layers);
        auto loss = g.cross_entropy(f.logits, std::move(targets));
        lm.parameters().zero_grad();
        g.backward(loss);
        opt.step(lm.parameters());
      }
    }
  }
  return lm;
}

double perplexity(const LanguageModel& lm, const std::vector<WordTimeline>& stories) {
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& s : stories) {
    const auto ids = lm.vocabulary().encode(s.tokens());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Vector p = lm.next_token_distribution(std::span<const TokenId>(ids.data(), i));
      nll -= std::log(std::max(p(ids[i]), 1e-300));
      ++count;
    }
  }
  if (count == 0) throw ArgumentError("perplexity of an empty corpus");
  return std::exp(nll / static_cast<double>(count));
}

void save_toy_lm(const ToyLm& lm, const fs::path& dir) {
  save_tensor_dir(lm.parameters().values(), dir);
  json cfg = to_json(lm.config());
  cfg["vocabulary"] = std::vector<std::string>(lm.vocabulary().tokens().begin() + 1, lm.vocabulary().tokens().end());
  json doc = {{"config", cfg}, {"corpus_digest", lm.corpus_digest()}};
  write_text_file(dir / "lm.json", doc.dump(2) + "\n");
}

ToyLm load_toy_lm(const fs::path& dir) {
  if (!fs::exists(dir / "lm.json")) throw IntegrityError("missing " + (dir / "lm.json").string());
  const auto doc = read_json_file(dir / "lm.json");
  auto cfg = toy_lm_config_from_json(doc.at("config"));
  Vocabulary vocab(cfg.vocabulary);
  ToyLm lm(cfg, std::move(vocab));
  lm.parameters().assign(load_tensor_dir(dir));
  lm.set_corpus_digest(doc.value("corpus_digest", std::uint64_t{0}));
  return lm;
}

}  // namespace mapguide
