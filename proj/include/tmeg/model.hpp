#pragma once

// Encoder and reasoning head: node embeddings, modality MLPs, graph-biased
// fusion layers, CLS extraction, candidate scoring and the training losses.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tmeg/autodiff.hpp"
#include "tmeg/graph.hpp"
#include "tmeg/model_config.hpp"
#include "tmeg/params.hpp"

namespace tmeg {

inline constexpr std::size_t kBoxFeatures = 6;  // x1, y1, x2, y2, w, h

namespace ad {

inline Var linear(const Var& x, const Var& weight, const Var& bias) { return add_row(matmul(x, weight), bias); }

inline Var embed_lookup(const Var& table, std::size_t index) { return gather_rows(table, {index}); }

}  // namespace ad

// Attention logits in the e[i][j] layout: key node i, query node j.
// b_t and b_m are indexed by code; entry 0 is never read.
inline DenseArray attention_logits(const DenseArray& q, const DenseArray& k, const CodeGrid& phi_t,
                                   const CodeGrid& phi_m, std::span<const Real> b_t, std::span<const Real> b_m) {
  const std::size_t n = q.rows();
  if (k.rows() != n || k.cols() != q.cols() || phi_t.n != n || phi_m.n != n)
    throw ShapeError("attention_logits: inconsistent shapes");
  const Real alpha = Real(1) / std::sqrt(static_cast<Real>(q.cols()));
  DenseArray e(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < q.cols(); ++p) acc += q(j, p) * k(i, p);
      Real bias = 0;
      if (const auto ct = phi_t.at(i, j)) bias += b_t[ct];
      if (const auto cm = phi_m.at(i, j)) bias += b_m[cm];
      e(i, j) = alpha * acc + bias;
    }
  return e;
}

// Per-head attention logits (e layout) and weights (row j = distribution over i).
struct EncoderTrace {
  std::size_t n_heads = 0;
  std::vector<DenseArray> logits;
  std::vector<DenseArray> weights;
  std::vector<DenseArray> queries;
  std::vector<DenseArray> keys;

  const DenseArray& logits_at(std::size_t layer, std::size_t head) const { return logits.at(layer * n_heads + head); }
  const DenseArray& weights_at(std::size_t layer, std::size_t head) const { return weights.at(layer * n_heads + head); }
};

// Edge codes of one graph as shared grids, transposed to the (query, key) layout.
struct GraphCodes {
  std::shared_ptr<const CodeGrid> temporal;
  std::shared_ptr<const CodeGrid> modal;

  explicit GraphCodes(const TmegGraph& g)
      : temporal(std::make_shared<CodeGrid>(g.phi_t.transposed())),
        modal(std::make_shared<CodeGrid>(g.phi_m.transposed())) {}
};

struct ClsRows {
  ad::Var text;    // N_t x d
  ad::Var visual;  // N_a x d
  std::vector<int> text_steps;
  std::vector<int> visual_steps;
};

class TmegModel {
 public:
  TmegModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    validate(config_);
    init_parameters(seed);
  }
  // Structure only; values are expected to come from a checkpoint.
  explicit TmegModel(ModelConfig config) : TmegModel(std::move(config), 0) {}

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  Parameter& param(const std::string& name) { return store_.get(name); }

  // Bias row for (layer, head) indexed by code, entry 0 pinned to 0.
  std::vector<Real> edge_bias_row(std::size_t layer, std::size_t head, bool temporal) const {
    const Parameter& p = store_.get(layer_name(layer) + (temporal ? ".temporal_bias" : ".modal_bias"));
    std::vector<Real> row{0};
    for (std::size_t c = 0; c < p.value.cols(); ++c) row.push_back(p.value(head, c));
    return row;
  }

  // H0: content + position + segment for text, projected feature + box + segment for visual.
  ad::Var encode_nodes(ad::Tape& t, const TmegGraph& g) {
    std::vector<std::size_t> text_nodes, object_nodes, vcls_nodes;
    std::vector<std::size_t> token_ids, positions, text_segments, object_segments, vcls_segments;
    std::vector<Real> feat_values, box_values;
    for (const Node& n : g.nodes) {
      const std::size_t seg = segment_of(n);
      if (n.is_text()) {
        if (n.text_position >= config_.max_positions)
          throw ShapeError("encode_nodes: text position " + std::to_string(n.text_position) + " exceeds max_positions " +
                           std::to_string(config_.max_positions));
        text_nodes.push_back(n.global_index);
        token_ids.push_back(n.kind == NodeKind::Cls   ? TokenVocabulary::kCls
                            : n.kind == NodeKind::Sep ? TokenVocabulary::kSep
                                                      : config_.vocabulary.id(n.token));
        positions.push_back(n.text_position);
        text_segments.push_back(seg);
      } else if (n.kind == NodeKind::Object) {
        if (n.feature.size() != config_.d_v)
          throw ShapeError("encode_nodes: object feature dimension " + std::to_string(n.feature.size()) +
                           " != d_v " + std::to_string(config_.d_v));
        object_nodes.push_back(n.global_index);
        feat_values.insert(feat_values.end(), n.feature.begin(), n.feature.end());
        const BoundingBox& b = n.box;
        box_values.insert(box_values.end(), {b.x1, b.y1, b.x2, b.y2, b.width(), b.height()});
        object_segments.push_back(seg);
      } else {
        vcls_nodes.push_back(n.global_index);
        vcls_segments.push_back(seg);
      }
    }
    ad::Var segment = t.param(param("embed.segment"));
    std::vector<ad::Var> groups;
    std::vector<std::size_t> order;
    if (!text_nodes.empty()) {
      ad::Var rows = ad::add(ad::gather_rows(t.param(param("embed.token")), token_ids),
                             ad::gather_rows(t.param(param("embed.position")), positions));
      groups.push_back(ad::add(rows, ad::gather_rows(segment, text_segments)));
      order.insert(order.end(), text_nodes.begin(), text_nodes.end());
    }
    if (!object_nodes.empty()) {
      const std::size_t m = object_nodes.size();
      ad::Var f = t.constant(DenseArray(m, config_.d_v, std::move(feat_values)));
      ad::Var bx = t.constant(DenseArray(m, kBoxFeatures, std::move(box_values)));
      ad::Var rows = ad::add(ad::linear(f, t.param(param("embed.visual.weight")), t.param(param("embed.visual.bias"))),
                             ad::linear(bx, t.param(param("embed.box.weight")), t.param(param("embed.box.bias"))));
      groups.push_back(ad::add(rows, ad::gather_rows(segment, object_segments)));
      order.insert(order.end(), object_nodes.begin(), object_nodes.end());
    }
    if (!vcls_nodes.empty()) {
      const std::size_t m = vcls_nodes.size();
      ad::Var zero_box = t.constant(DenseArray(m, kBoxFeatures));
      ad::Var rows =
          ad::add(ad::gather_rows(t.param(param("embed.visual_cls")), std::vector<std::size_t>(m, 0)),
                  ad::linear(zero_box, t.param(param("embed.box.weight")), t.param(param("embed.box.bias"))));
      groups.push_back(ad::add(rows, ad::gather_rows(segment, vcls_segments)));
      order.insert(order.end(), vcls_nodes.begin(), vcls_nodes.end());
    }
    return reorder(ad::concat_rows(groups), order, g.size());
  }

  ad::Var project_modalities(ad::Tape& t, const ad::Var& h0, const TmegGraph& g) {
    std::vector<std::size_t> text, visual;
    for (const Node& n : g.nodes) (n.is_text() ? text : visual).push_back(n.global_index);
    std::vector<ad::Var> groups;
    std::vector<std::size_t> order;
    if (!text.empty()) {
      groups.push_back(mlp(t, ad::gather_rows(h0, text), "project.text"));
      order.insert(order.end(), text.begin(), text.end());
    }
    if (!visual.empty()) {
      groups.push_back(mlp(t, ad::gather_rows(h0, visual), "project.visual"));
      order.insert(order.end(), visual.begin(), visual.end());
    }
    return reorder(ad::concat_rows(groups), order, g.size());
  }

  // One graph-biased layer. Without `codes` it is a plain transformer layer.
  ad::Var fusion_layer(ad::Tape& t, const ad::Var& h, std::size_t layer, const GraphCodes* codes,
                       EncoderTrace* trace = nullptr) {
    if (layer >= config_.n_layers) throw ShapeError("fusion_layer: layer out of range");
    return transformer_layer(t, h, layer_name(layer), config_.n_heads, codes, trace);
  }

  ad::Var run_encoder(ad::Tape& t, const TmegGraph& g, EncoderTrace* trace = nullptr) {
    if (trace) *trace = EncoderTrace{config_.n_heads, {}, {}, {}, {}};
    const GraphCodes codes(g);
    ad::Var h = project_modalities(t, encode_nodes(t, g), g);
    for (std::size_t l = 0; l < config_.n_layers; ++l) h = fusion_layer(t, h, l, &codes, trace);
    return h;
  }

  // CLS rows of each modality in unit order.
  static ClsRows extract_cls(const ad::Var& h, const TmegGraph& g) {
    if (h.rows() != g.size()) throw ShapeError("extract_cls: hidden states do not match graph");
    ClsRows out;
    for (Modality m : {Modality::Text, Modality::Visual}) {
      std::vector<std::pair<std::size_t, std::size_t>> units;
      for (const Node& n : g.nodes)
        if (n.kind == NodeKind::Cls && n.modality == m) units.emplace_back(n.unit, n.global_index);
      std::sort(units.begin(), units.end());
      std::vector<std::size_t> idx;
      std::vector<int> steps;
      for (const auto& [_, i] : units) {
        idx.push_back(i);
        steps.push_back(g.nodes[i].step_index);
      }
      if (idx.empty()) throw ShapeError("extract_cls: graph has no CLS node for a modality");
      (m == Modality::Text ? out.text : out.visual) = ad::gather_rows(h, idx);
      (m == Modality::Text ? out.text_steps : out.visual_steps) = std::move(steps);
    }
    return out;
  }

  // [CLS, text rows..., SEP, image rows...] at scorer width.
  ad::Var assemble_pair(ad::Tape& t, const ad::Var& text, const ad::Var& visual) {
    ad::Var a = text, b = visual;
    if (config_.scorer_width() != config_.d_model) {
      ad::Var w = t.param(param("scorer.input.weight"));
      ad::Var bias = t.param(param("scorer.input.bias"));
      a = ad::linear(a, w, bias);
      b = ad::linear(b, w, bias);
    }
    return ad::concat_rows({t.param(param("scorer.cls")), a, t.param(param("scorer.sep")), b});
  }

  // 1x1 score read from the leading CLS position.
  ad::Var score_candidate(ad::Tape& t, const ad::Var& sequence) {
    ad::Var h = sequence;
    for (std::size_t l = 0; l < config_.scorer_layers; ++l)
      h = transformer_layer(t, h, "scorer." + std::to_string(l), config_.scorer_heads, nullptr, nullptr);
    return ad::linear(ad::gather_rows(h, {0}), t.param(param("scorer.head.weight")),
                      t.param(param("scorer.head.bias")));
  }

  struct CandidateOutput {
    ad::Var score;
    ClsRows cls;
  };

  CandidateOutput forward_candidate(ad::Tape& t, const TmegGraph& g) {
    ad::Var h = run_encoder(t, g);
    ClsRows cls = extract_cls(h, g);
    ad::Var score = score_candidate(t, assemble_pair(t, cls.text, cls.visual));
    return {score, std::move(cls)};
  }

 private:
  static std::string layer_name(std::size_t layer) { return "fusion." + std::to_string(layer); }

  std::size_t segment_of(const Node& n) const {
    if (n.step_index < 1 || static_cast<std::size_t>(n.step_index) > config_.max_steps)
      throw ShapeError("encode_nodes: step " + std::to_string(n.step_index) + " outside segment table of " +
                       std::to_string(config_.max_steps));
    return static_cast<std::size_t>(n.step_index - 1);
  }

  // rows[k] belongs to node order[k]; returns rows in node order.
  static ad::Var reorder(const ad::Var& rows, const std::vector<std::size_t>& order, std::size_t n) {
    std::vector<std::size_t> inverse(n);
    for (std::size_t k = 0; k < order.size(); ++k) inverse[order[k]] = k;
    return ad::gather_rows(rows, std::move(inverse));
  }

  ad::Var mlp(ad::Tape& t, const ad::Var& x, const std::string& prefix) {
    ad::Var h = ad::tanh(ad::linear(x, t.param(param(prefix + ".0.weight")), t.param(param(prefix + ".0.bias"))));
    return ad::linear(h, t.param(param(prefix + ".1.weight")), t.param(param(prefix + ".1.bias")));
  }

  ad::Var transformer_layer(ad::Tape& t, const ad::Var& h, const std::string& prefix, std::size_t n_heads,
                            const GraphCodes* codes, EncoderTrace* trace) {
    auto lin = [&](const ad::Var& x, const std::string& name) {
      return ad::linear(x, t.param(param(prefix + "." + name + ".weight")),
                        t.param(param(prefix + "." + name + ".bias")));
    };
    const std::size_t width = h.cols();
    const std::size_t dh = width / n_heads;
    const Real alpha = Real(1) / std::sqrt(static_cast<Real>(dh));
    ad::Var q = lin(h, "query");
    ad::Var k = ad::matmul(h, t.param(param(prefix + ".key.weight")));
    ad::Var v = lin(h, "value");
    std::optional<ad::Var> bt, bm;
    if (codes) {
      bt = t.param(param(prefix + ".temporal_bias"));
      bm = t.param(param(prefix + ".modal_bias"));
    }
    std::vector<ad::Var> heads;
    for (std::size_t hd = 0; hd < n_heads; ++hd) {
      ad::Var qh = ad::slice_cols(q, hd * dh, (hd + 1) * dh);
      ad::Var kh = ad::slice_cols(k, hd * dh, (hd + 1) * dh);
      ad::Var logits = ad::matmul_nt(qh, kh, alpha);  // (query j, key i)
      if (codes)
        logits = ad::add(logits, ad::edge_bias({ad::gather_rows(*bt, {hd}), ad::gather_rows(*bm, {hd})},
                                               {codes->temporal, codes->modal}));
      ad::Var weights = ad::softmax_rows(logits);
      if (trace) {
        trace->logits.push_back(logits.value().transposed());
        trace->weights.push_back(weights.value());
        trace->queries.push_back(qh.value());
        trace->keys.push_back(kh.value());
      }
      heads.push_back(ad::matmul(weights, ad::slice_cols(v, hd * dh, (hd + 1) * dh)));
    }
    ad::Var attended = lin(ad::concat_cols(heads), "output");
    ad::Var h1 = ad::layer_norm_rows(ad::add(attended, h), t.param(param(prefix + ".norm1.gamma")),
                                     t.param(param(prefix + ".norm1.beta")));
    ad::Var ffn = lin(ad::gelu(lin(h1, "ffn.0")), "ffn.1");
    return ad::layer_norm_rows(ad::add(ffn, h1), t.param(param(prefix + ".norm2.gamma")),
                               t.param(param(prefix + ".norm2.beta")));
  }

  void add_normal(const std::string& name, std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng = derive_stream(seed, "init", name);
    std::normal_distribution<Real> dist(0, 1);
    DenseArray a(rows, cols);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = config_.init_std * dist(rng);
    store_.add(name, std::move(a));
  }
  void add_linear(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed) {
    add_normal(name + ".weight", in, out, seed);
    store_.add(name + ".bias", DenseArray(1, out));
  }
  void add_layer(const std::string& prefix, std::size_t width, bool edge_biases, std::uint64_t seed) {
    for (const char* n : {"query", "value", "output"}) add_linear(prefix + "." + n, width, width, seed);
    add_normal(prefix + ".key.weight", width, width, seed);
    add_linear(prefix + ".ffn.0", width, config_.ffn_multiplier * width, seed);
    add_linear(prefix + ".ffn.1", config_.ffn_multiplier * width, width, seed);
    for (const char* n : {".norm1", ".norm2"}) {
      store_.add(prefix + n + ".gamma", DenseArray(1, width, 1));
      store_.add(prefix + n + ".beta", DenseArray(1, width));
    }
    if (edge_biases) {
      store_.add(prefix + ".temporal_bias", DenseArray(config_.n_heads, kTemporalVocabulary - 1)).lr_scale =
          config_.edge_bias_lr_scale;
      store_.add(prefix + ".modal_bias", DenseArray(config_.n_heads, kModalVocabulary - 1)).lr_scale =
          config_.edge_bias_lr_scale;
    }
  }

  void init_parameters(std::uint64_t seed) {
    const std::size_t d = config_.d_model;
    const std::size_t sd = config_.scorer_width();
    add_normal("embed.token", config_.token_vocab_size(), d, seed);
    add_normal("embed.position", config_.max_positions, d, seed);
    add_normal("embed.segment", config_.max_steps, d, seed);
    add_linear("embed.visual", config_.d_v, d, seed);
    add_linear("embed.box", kBoxFeatures, d, seed);
    add_normal("embed.visual_cls", 1, d, seed);
    for (const char* m : {"project.text", "project.visual"}) {
      add_linear(std::string(m) + ".0", d, d, seed);
      add_linear(std::string(m) + ".1", d, d, seed);
    }
    for (std::size_t l = 0; l < config_.n_layers; ++l) add_layer(layer_name(l), d, true, seed);
    if (sd != d) add_linear("scorer.input", d, sd, seed);
    add_normal("scorer.cls", 1, sd, seed);
    add_normal("scorer.sep", 1, sd, seed);
    for (std::size_t l = 0; l < config_.scorer_layers; ++l) add_layer("scorer." + std::to_string(l), sd, false, seed);
    add_linear("scorer.head", sd, 1, seed);
  }

  ModelConfig config_;
  ParamStore store_;
};

// -log softmax(sim/tau)[positive] with cosine similarity. The exclusive
// variant drops the positive from the denominator.
inline ad::Var coherence_loss(const ad::Var& text, const ad::Var& positive, const ad::Var& negatives, Real tau,
                              CoherenceDenominator denominator = CoherenceDenominator::Inclusive) {
  if (!(tau > 0)) throw ConfigError("coherence_loss: tau must be positive");
  if (negatives.rows() < 1) throw ShapeError("coherence_loss: need at least one negative");
  if (text.rows() != 1 || positive.rows() != 1) throw ShapeError("coherence_loss: text and positive must be rows");
  ad::Var candidates = ad::normalize_rows(ad::concat_rows({positive, negatives}));
  ad::Var sims = ad::matmul_nt(ad::normalize_rows(text), candidates, Real(1) / tau);
  ad::Var pos = ad::element(sims, 0, 0);
  if (denominator == CoherenceDenominator::Inclusive) return ad::sub(ad::logsumexp_rows(sims), pos);
  return ad::sub(ad::logsumexp_rows(ad::slice_cols(sims, 1, sims.cols())), pos);
}

inline ad::Var prediction_loss(const ad::Var& scores, std::size_t gold) {
  if (scores.rows() != 1 || scores.cols() < 2) throw ShapeError("prediction_loss: need a row of >= 2 scores");
  return ad::cross_entropy(scores, gold);
}

inline ad::Var total_loss(const ad::Var& pred, const ad::Var& coh, Real lambda_b) {
  return ad::add(pred, ad::scale(coh, lambda_b));
}

// A task instance with its per-candidate graphs already built.
struct PreparedInstance {
  std::string doc_id;
  TaskKind task_kind = TaskKind::Cloze;
  std::size_t gold_index = 0;
  std::vector<TmegGraph> graphs;
};

struct BatchLoss {
  ad::Var loss;
  std::vector<ad::Var> scores;  // 1 x N_c per instance
  std::size_t coherence_terms = 0;
};

// Mean over the batch of prediction loss + lambda_b * coherence loss. The
// coherence positive for each text step is the gold candidate's image at the
// same step; negatives are K image-CLS rows drawn without replacement from
// other documents' gold candidates in the batch.
inline BatchLoss batch_loss(TmegModel& model, ad::Tape& t, std::span<const PreparedInstance* const> batch,
                            Real lambda_b, std::uint64_t negative_seed) {
  if (batch.empty()) throw ShapeError("batch_loss: empty batch");
  const ModelConfig& cfg = model.config();
  BatchLoss out;
  std::vector<ClsRows> gold_cls;
  for (const PreparedInstance* inst : batch) {
    std::vector<ad::Var> scores;
    for (std::size_t j = 0; j < inst->graphs.size(); ++j) {
      auto fwd = model.forward_candidate(t, inst->graphs[j]);
      scores.push_back(fwd.score);
      if (j == inst->gold_index) gold_cls.push_back(std::move(fwd.cls));
    }
    out.scores.push_back(ad::concat_cols(scores));
  }

  Rng rng = derive_stream(negative_seed, "negatives");
  std::vector<ad::Var> losses;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    ad::Var pred = prediction_loss(out.scores[b], batch[b]->gold_index);
    if (lambda_b == 0) {
      losses.push_back(pred);
      continue;
    }
    std::vector<std::pair<std::size_t, std::size_t>> pool;  // (batch item, visual row)
    for (std::size_t o = 0; o < batch.size(); ++o)
      if (batch[o]->doc_id != batch[b]->doc_id)
        for (std::size_t r = 0; r < gold_cls[o].visual.rows(); ++r) pool.emplace_back(o, r);
    const ClsRows& cls = gold_cls[b];
    std::vector<ad::Var> steps;
    for (std::size_t i = 0; i < cls.text_steps.size() && !pool.empty(); ++i) {
      auto it = std::find(cls.visual_steps.begin(), cls.visual_steps.end(), cls.text_steps[i]);
      if (it == cls.visual_steps.end()) continue;
      const std::size_t p = static_cast<std::size_t>(it - cls.visual_steps.begin());
      auto draw = pool;
      std::shuffle(draw.begin(), draw.end(), rng);
      draw.resize(std::min(cfg.negatives, draw.size()));
      std::vector<ad::Var> negs;
      for (const auto& [o, r] : draw) negs.push_back(ad::gather_rows(gold_cls[o].visual, {r}));
      steps.push_back(coherence_loss(ad::gather_rows(cls.text, {i}), ad::gather_rows(cls.visual, {p}),
                                     ad::concat_rows(negs), cfg.tau, cfg.coherence_denominator));
    }
    out.coherence_terms += steps.size();
    losses.push_back(steps.empty() ? pred : total_loss(pred, ad::mean(steps), lambda_b));
  }
  out.loss = ad::mean(losses);
  return out;
}

}  // namespace tmeg
