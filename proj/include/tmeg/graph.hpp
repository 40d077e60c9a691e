#pragma once

// Temporal-modal entity graph over one (context steps, candidate image
// sequence) pairing: a node table plus symmetric temporal and modal edge-code
// matrices that the encoder turns into per-head attention biases.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tmeg/code_grid.hpp"
#include "tmeg/geometry.hpp"
#include "tmeg/pmd.hpp"

namespace tmeg {

inline constexpr Real kDefaultLambdaT = 7;
inline constexpr Real kDefaultLambdaM = Real(0.5);

// Temporal code vocabulary.
enum class TemporalCode : std::uint8_t { None = 0, TextNode = 1, VisualNode = 2, Edge = 3 };
inline constexpr std::size_t kTemporalVocabulary = 4;

// Modal code vocabulary.
enum class ModalCode : std::uint8_t { None = 0, IntraText = 1, IntraVisual = 2, InterNode = 3, InterEdge = 4 };
inline constexpr std::size_t kModalVocabulary = 5;

constexpr std::uint8_t code(TemporalCode c) { return static_cast<std::uint8_t>(c); }
constexpr std::uint8_t code(ModalCode c) { return static_cast<std::uint8_t>(c); }

enum class Modality : std::uint8_t { Text, Visual };
enum class NodeKind : std::uint8_t { Cls, Sep, Token, Object };

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Cls: return "cls";
    case NodeKind::Sep: return "sep";
    case NodeKind::Token: return "token";
    case NodeKind::Object: return "object";
  }
  return "?";
}

struct Node {
  std::size_t global_index = 0;
  Modality modality = Modality::Text;
  NodeKind kind = NodeKind::Token;
  int step_index = 0;       // text: the step; visual: the step the candidate position stands for
  std::size_t unit = 0;     // ordinal of the instruction/image unit (text units first)
  std::string unit_id;      // "step-<t>" or the image_id
  std::size_t local_index = 0;
  std::size_t text_position = 0;  // index within the concatenated text sequence (text nodes)
  std::optional<std::string> entity_id;
  std::string token;                                    // token nodes
  std::map<std::string, BoundingBox> grounding_boxes;   // token nodes inside a noun phrase
  std::vector<Real> feature;                            // object nodes
  BoundingBox box;                                      // object nodes

  bool is_text() const { return modality == Modality::Text; }
  bool is_visual() const { return modality == Modality::Visual; }
};

// The images a candidate contributes, in sequence order, and the step each
// position stands for (empty -> positions 1..n).
struct CandidateSequence {
  std::vector<const StepImage*> images;
  std::vector<int> position_steps;

  int step_at(std::size_t p) const {
    return position_steps.empty() ? static_cast<int>(p) + 1 : position_steps.at(p);
  }
};

struct TmegGraph {
  std::vector<Node> nodes;
  CodeGrid phi_t;
  CodeGrid phi_m;
  std::size_t candidate_index = 0;

  std::size_t size() const { return nodes.size(); }

  std::vector<std::size_t> cls_indices(Modality m) const {
    std::vector<std::size_t> out;
    for (const auto& n : nodes)
      if (n.kind == NodeKind::Cls && n.modality == m) out.push_back(n.global_index);
    return out;
  }
};

// Node order: per step [CLS, tokens..., SEP]; then per candidate image [CLS, objects...].
inline std::vector<Node> build_nodes(const std::vector<const Step*>& steps, const CandidateSequence& candidate) {
  std::vector<Node> nodes;
  std::size_t unit = 0;
  std::size_t text_pos = 0;
  auto push = [&](Node n) {
    n.global_index = nodes.size();
    nodes.push_back(std::move(n));
  };
  for (const Step* step : steps) {
    const std::string uid = "step-" + std::to_string(step->index);
    std::size_t local = 0;
    auto base = [&](NodeKind kind) {
      Node n;
      n.modality = Modality::Text;
      n.kind = kind;
      n.step_index = step->index;
      n.unit = unit;
      n.unit_id = uid;
      n.local_index = local++;
      n.text_position = text_pos++;
      return n;
    };
    push(base(NodeKind::Cls));
    for (std::size_t t = 0; t < step->tokens.size(); ++t) {
      Node n = base(NodeKind::Token);
      n.token = step->tokens[t];
      for (const NounPhrase& np : step->noun_phrases)
        if (np.span.contains(t)) {
          n.entity_id = np.entity_id;
          n.grounding_boxes = np.grounding_boxes;
        }
      push(std::move(n));
    }
    push(base(NodeKind::Sep));
    ++unit;
  }
  for (std::size_t p = 0; p < candidate.images.size(); ++p) {
    const StepImage& img = *candidate.images[p];
    auto base = [&](NodeKind kind, std::size_t local) {
      Node n;
      n.modality = Modality::Visual;
      n.kind = kind;
      n.step_index = candidate.step_at(p);
      n.unit = unit;
      n.unit_id = img.image_id;
      n.local_index = local;
      return n;
    };
    push(base(NodeKind::Cls, 0));
    for (std::size_t o = 0; o < img.objects.size(); ++o) {
      Node n = base(NodeKind::Object, o + 1);
      n.feature = img.objects[o].feature;
      n.box = img.objects[o].box;
      push(std::move(n));
    }
    ++unit;
  }
  return nodes;
}

// Full connectivity inside each unit, plus every CLS to every node of its modality.
inline void intra_modal_labels(const std::vector<Node>& nodes, CodeGrid& phi_m) {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (std::size_t j = i + 1; j < nodes.size(); ++j) {
      const Node& a = nodes[i];
      const Node& b = nodes[j];
      if (a.modality != b.modality) continue;
      const bool linked = a.unit == b.unit || a.kind == NodeKind::Cls || b.kind == NodeKind::Cls;
      if (linked) phi_m.set_if_none(i, j, code(a.is_text() ? ModalCode::IntraText : ModalCode::IntraVisual));
    }
}

// Same entity mentioned in different steps.
inline void temporal_text_labels(const std::vector<Node>& nodes, CodeGrid& phi_t) {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& a = nodes[i];
    if (a.kind != NodeKind::Token || !a.entity_id) continue;
    for (std::size_t j = i + 1; j < nodes.size(); ++j) {
      const Node& b = nodes[j];
      if (b.kind != NodeKind::Token || !b.entity_id) continue;
      if (a.step_index != b.step_index && *a.entity_id == *b.entity_id)
        phi_t.set_if_none(i, j, code(TemporalCode::TextNode));
    }
  }
}

// Objects in different images whose features lie strictly closer than lambda_t.
inline void temporal_visual_labels(const std::vector<Node>& nodes, Real lambda_t, CodeGrid& phi_t) {
  if (!(lambda_t > 0)) throw ConfigError("lambda_t must be positive");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].kind != NodeKind::Object) continue;
    for (std::size_t j = i + 1; j < nodes.size(); ++j) {
      if (nodes[j].kind != NodeKind::Object || nodes[i].unit == nodes[j].unit) continue;
      if (euclidean(nodes[i].feature, nodes[j].feature) < lambda_t)
        phi_t.set_if_none(i, j, code(TemporalCode::VisualNode));
    }
  }
}

// Phrase tokens to objects whose box overlaps the phrase's grounding box in
// that image with IoU strictly above lambda_m.
inline void inter_modal_labels(const std::vector<Node>& nodes, Real lambda_m, CodeGrid& phi_m) {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& tok = nodes[i];
    if (tok.kind != NodeKind::Token || tok.grounding_boxes.empty()) continue;
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const Node& obj = nodes[j];
      if (obj.kind != NodeKind::Object) continue;
      auto it = tok.grounding_boxes.find(obj.unit_id);
      if (it != tok.grounding_boxes.end() && iou(it->second, obj.box) > lambda_m)
        phi_m.set_if_none(i, j, code(ModalCode::InterNode));
    }
  }
}

// Relation-level edges, filled only where no node-level label exists.
//  temporal: entities a != b both mentioned in steps t != t' link a@t with b@t'.
//  inter-modal: entities a != b in step t both grounded into image I link
//  a's tokens with b's grounded objects in I, and vice versa.
inline void derive_edge_based_labels(TmegGraph& g) {
  const auto& nodes = g.nodes;
  // (entity, step) -> token nodes
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> mentions;
  for (const Node& n : nodes)
    if (n.kind == NodeKind::Token && n.entity_id) mentions[{*n.entity_id, n.step_index}].push_back(n.global_index);

  std::map<std::string, std::set<int>> steps_of;
  for (const auto& [key, _] : mentions) steps_of[key.first].insert(key.second);

  for (auto a = steps_of.begin(); a != steps_of.end(); ++a)
    for (auto b = std::next(a); b != steps_of.end(); ++b) {
      std::vector<int> shared;
      std::set_intersection(a->second.begin(), a->second.end(), b->second.begin(), b->second.end(),
                            std::back_inserter(shared));
      for (int t : shared)
        for (int u : shared) {
          if (t == u) continue;
          for (std::size_t x : mentions[{a->first, t}])
            for (std::size_t y : mentions[{b->first, u}]) g.phi_t.set_if_none(x, y, code(TemporalCode::Edge));
        }
    }

  // (step, image unit) -> entity -> (tokens, grounded objects)
  struct Grounded {
    std::vector<std::size_t> tokens;
    std::set<std::size_t> objects;
  };
  std::map<std::pair<int, std::size_t>, std::map<std::string, Grounded>> groups;
  for (const auto& [key, toks] : mentions)
    for (std::size_t x : toks)
      for (std::size_t o = 0; o < nodes.size(); ++o) {
        if (nodes[o].kind != NodeKind::Object || g.phi_m.at(x, o) != code(ModalCode::InterNode)) continue;
        Grounded& gr = groups[{key.second, nodes[o].unit}][key.first];
        if (gr.tokens.empty()) gr.tokens = toks;
        gr.objects.insert(o);
      }
  for (const auto& [_, by_entity] : groups)
    for (auto a = by_entity.begin(); a != by_entity.end(); ++a)
      for (auto b = std::next(a); b != by_entity.end(); ++b) {
        for (std::size_t x : a->second.tokens)
          for (std::size_t o : b->second.objects) g.phi_m.set_if_none(x, o, code(ModalCode::InterEdge));
        for (std::size_t x : b->second.tokens)
          for (std::size_t o : a->second.objects) g.phi_m.set_if_none(x, o, code(ModalCode::InterEdge));
      }
}

inline TmegGraph assemble_graph(const std::vector<const Step*>& steps, const CandidateSequence& candidate,
                                Real lambda_t = kDefaultLambdaT, Real lambda_m = kDefaultLambdaM) {
  TmegGraph g;
  g.nodes = build_nodes(steps, candidate);
  g.phi_t = CodeGrid(g.nodes.size());
  g.phi_m = CodeGrid(g.nodes.size());
  intra_modal_labels(g.nodes, g.phi_m);
  temporal_text_labels(g.nodes, g.phi_t);
  temporal_visual_labels(g.nodes, lambda_t, g.phi_t);
  inter_modal_labels(g.nodes, lambda_m, g.phi_m);
  derive_edge_based_labels(g);
  return g;
}

// Graph for candidate j of a task instance.
inline TmegGraph assemble_instance_graph(const TaskInstance& inst, std::size_t j, const Corpus& corpus,
                                         const ImageIndex& index, Real lambda_t = kDefaultLambdaT,
                                         Real lambda_m = kDefaultLambdaM) {
  const PmdDocument& doc = corpus.document(inst.doc_id);
  std::vector<const Step*> steps;
  for (int s : inst.context_steps) steps.push_back(&doc.step(s));
  CandidateSequence cand;
  for (const auto& id : inst.candidates.at(j)) cand.images.push_back(&index.image(id));
  cand.position_steps = inst.position_steps;
  TmegGraph g = assemble_graph(steps, cand, lambda_t, lambda_m);
  g.candidate_index = j;
  return g;
}

// Relabels nodes so old node i becomes new node perm[i]; both code matrices follow.
inline TmegGraph permuted(const TmegGraph& g, const std::vector<std::size_t>& perm) {
  const std::size_t n = g.size();
  if (perm.size() != n) throw ShapeError("permuted: permutation size mismatch");
  TmegGraph out;
  out.candidate_index = g.candidate_index;
  out.nodes.resize(n);
  out.phi_t = CodeGrid(n);
  out.phi_m = CodeGrid(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.nodes[perm[i]] = g.nodes[i];
    out.nodes[perm[i]].global_index = perm[i];
    for (std::size_t j = 0; j < n; ++j) {
      out.phi_t.at(perm[i], perm[j]) = g.phi_t.at(i, j);
      out.phi_m.at(perm[i], perm[j]) = g.phi_m.at(i, j);
    }
  }
  return out;
}

namespace detail {
inline nlohmann::json run_length(const CodeGrid& grid) {
  nlohmann::json runs = nlohmann::json::array();
  std::size_t i = 0;
  while (i < grid.codes.size()) {
    std::size_t j = i;
    while (j < grid.codes.size() && grid.codes[j] == grid.codes[i]) ++j;
    runs.push_back({grid.codes[i], j - i});
    i = j;
  }
  return runs;
}
}  // namespace detail

// Node table plus run-length encoded ([code, count] pairs, row-major) matrices.
inline nlohmann::json graph_to_json(const TmegGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const Node& n : g.nodes) {
    nlohmann::json jn = {{"index", n.global_index},
                         {"modality", n.is_text() ? "text" : "visual"},
                         {"kind", to_string(n.kind)},
                         {"step", n.step_index},
                         {"unit_id", n.unit_id},
                         {"local_index", n.local_index}};
    if (n.entity_id) jn["entity_id"] = *n.entity_id;
    if (n.kind == NodeKind::Token) jn["token"] = n.token;
    nodes.push_back(std::move(jn));
  }
  return {{"candidate_index", g.candidate_index},
          {"node_count", g.size()},
          {"nodes", nodes},
          {"phi_t", detail::run_length(g.phi_t)},
          {"phi_m", detail::run_length(g.phi_m)}};
}

}  // namespace tmeg
