#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tmeg/graph.hpp"
#include "tmeg/pmd.hpp"

namespace tmeg {

// Token string -> row of the token embedding table. Rows 0..2 are reserved.
class TokenVocabulary {
 public:
  static constexpr std::size_t kUnknown = 0;
  static constexpr std::size_t kCls = 1;
  static constexpr std::size_t kSep = 2;

  TokenVocabulary() : tokens_{"[UNK]", "[CLS]", "[SEP]"} { reindex(); }
  explicit TokenVocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 3 || tokens_[0] != "[UNK]" || tokens_[1] != "[CLS]" || tokens_[2] != "[SEP]")
      throw ConfigError("vocabulary must start with [UNK], [CLS], [SEP]");
    reindex();
  }

  // Sorted unique tokens of a corpus after the reserved rows.
  static TokenVocabulary from_corpus(const Corpus& corpus) {
    std::set<std::string> uniq;
    for (const auto& d : corpus.documents)
      for (const auto& s : d.steps) uniq.insert(s.tokens.begin(), s.tokens.end());
    std::vector<std::string> tokens{"[UNK]", "[CLS]", "[SEP]"};
    for (const auto& t : uniq)
      if (t != "[UNK]" && t != "[CLS]" && t != "[SEP]") tokens.push_back(t);
    return TokenVocabulary(std::move(tokens));
  }

  std::size_t id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnknown : it->second;
  }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const TokenVocabulary& a, const TokenVocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = i;
  }
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

enum class CoherenceDenominator { Inclusive, Exclusive };

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_heads = 8;
  std::size_t n_layers = 4;
  std::size_t ffn_multiplier = 4;
  std::size_t scorer_layers = 2;
  std::size_t scorer_d = 0;  // 0 -> d_model
  std::size_t scorer_heads = 8;
  Real tau = Real(0.07);
  std::size_t negatives = 8;  // K
  Real lambda_b = Real(0.1);
  Real lambda_t = kDefaultLambdaT;
  Real lambda_m = kDefaultLambdaM;
  std::size_t d_v = 16;
  std::size_t max_steps = 32;
  std::size_t max_positions = 512;
  Real init_std = Real(0.02);
  Real edge_bias_lr_scale = 1;  // Adam step multiplier for the edge-bias tables
  CoherenceDenominator coherence_denominator = CoherenceDenominator::Inclusive;
  TokenVocabulary vocabulary;

  std::size_t token_vocab_size() const { return vocabulary.size(); }
  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t scorer_width() const { return scorer_d == 0 ? d_model : scorer_d; }

  // Reasoning head at 512 hidden, 2 layers, 8 heads.
  static ModelConfig wide_scorer_preset() {
    ModelConfig c;
    c.scorer_d = 512;
    c.scorer_layers = 2;
    c.scorer_heads = 8;
    return c;
  }
};

inline void validate(const ModelConfig& c) {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model config: " + msg);
  };
  need(c.d_model > 0 && c.n_heads > 0 && c.d_model % c.n_heads == 0, "d_model must be divisible by n_heads");
  need(c.scorer_heads > 0 && c.scorer_width() % c.scorer_heads == 0, "scorer width must be divisible by scorer_heads");
  need(c.ffn_multiplier > 0, "ffn_multiplier must be positive");
  need(c.tau > 0, "tau must be positive");
  need(c.lambda_b >= 0, "lambda_b must be >= 0");
  need(c.lambda_t > 0, "lambda_t must be positive");
  need(c.d_v > 0 && c.max_steps > 0 && c.max_positions > 0, "table extents must be positive");
  need(c.negatives >= 1, "negatives (K) must be >= 1");
  need(c.init_std >= 0, "init_std must be >= 0");
  need(c.edge_bias_lr_scale > 0, "edge_bias_lr_scale must be positive");
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},
          {"ffn_multiplier", c.ffn_multiplier},
          {"scorer_layers", c.scorer_layers},
          {"scorer_d", c.scorer_width()},
          {"scorer_heads", c.scorer_heads},
          {"tau", c.tau},
          {"negatives", c.negatives},
          {"lambda_b", c.lambda_b},
          {"lambda_t", c.lambda_t},
          {"lambda_m", c.lambda_m},
          {"d_v", c.d_v},
          {"max_steps", c.max_steps},
          {"max_positions", c.max_positions},
          {"init_std", c.init_std},
          {"edge_bias_lr_scale", c.edge_bias_lr_scale},
          {"coherence_denominator",
           c.coherence_denominator == CoherenceDenominator::Inclusive ? "inclusive" : "exclusive"},
          {"token_vocab_size", c.token_vocab_size()},
          {"vocabulary", c.vocabulary.tokens()}};
}

// Missing keys keep their defaults; "vocabulary" is optional here and
// normally filled from the training corpus.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto get = [&](const char* key, auto& out) {
    if (auto it = j.find(key); it != j.end()) out = it->get<std::decay_t<decltype(out)>>();
  };
  try {
    get("d_model", c.d_model);
    get("n_heads", c.n_heads);
    get("n_layers", c.n_layers);
    get("ffn_multiplier", c.ffn_multiplier);
    get("scorer_layers", c.scorer_layers);
    get("scorer_d", c.scorer_d);
    get("scorer_heads", c.scorer_heads);
    get("tau", c.tau);
    get("negatives", c.negatives);
    get("lambda_b", c.lambda_b);
    get("lambda_t", c.lambda_t);
    get("lambda_m", c.lambda_m);
    get("d_v", c.d_v);
    get("max_steps", c.max_steps);
    get("max_positions", c.max_positions);
    get("init_std", c.init_std);
    get("edge_bias_lr_scale", c.edge_bias_lr_scale);
    if (auto it = j.find("coherence_denominator"); it != j.end()) {
      const auto s = it->get<std::string>();
      if (s == "inclusive") c.coherence_denominator = CoherenceDenominator::Inclusive;
      else if (s == "exclusive") c.coherence_denominator = CoherenceDenominator::Exclusive;
      else throw ConfigError("model config: coherence_denominator must be inclusive or exclusive");
    }
    if (auto it = j.find("vocabulary"); it != j.end())
      c.vocabulary = TokenVocabulary(it->get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  if (c.scorer_d == c.d_model) c.scorer_d = 0;
  validate(c);
  return c;
}

inline std::string model_config_text(const ModelConfig& c) { return model_config_to_json(c).dump(); }

}  // namespace tmeg
