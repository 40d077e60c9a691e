#pragma once

// A tiny two-document corpus whose graphs contain every edge code, plus a
// matching small model configuration. Used by gradient checks and examples.

#include <random>
#include <string>
#include <vector>

#include "tmeg/gradcheck.hpp"
#include "tmeg/model.hpp"
#include "tmeg/train.hpp"

namespace tmeg::fixtures {

namespace detail {

inline std::vector<Real> axis(std::size_t d_v, std::size_t k, Real scale, Real offset) {
  std::vector<Real> v(d_v, offset);
  v[k % d_v] += scale;
  return v;
}

// Two steps, each mentioning both entities and grounding them in its image.
inline PmdDocument two_step_document(const std::string& id, const std::string& e0, const std::string& e1,
                                     std::size_t axis0, std::size_t axis1, std::size_t d_v) {
  const BoundingBox left{0.0, 0.0, 0.5, 0.5};
  const BoundingBox right{0.5, 0.5, 1.0, 1.0};
  PmdDocument doc{id, "tiny", {}};
  for (int s = 1; s <= 2; ++s) {
    Step step;
    step.index = s;
    const std::string image_id = id + "/s" + std::to_string(s) + "/i0";
    step.tokens = s == 1 ? std::vector<std::string>{e0, e1, "w" + id} : std::vector<std::string>{e1, e0, "w" + id};
    const std::string first = s == 1 ? e0 : e1;
    const std::string second = s == 1 ? e1 : e0;
    step.noun_phrases.push_back({{0, 1}, first, {{image_id, first == e0 ? left : right}}});
    step.noun_phrases.push_back({{1, 2}, second, {{image_id, second == e0 ? left : right}}});
    const Real wobble = Real(0.05) * s;
    step.images.push_back({image_id,
                           {{axis(d_v, axis0, 6, wobble), left, 1.0}, {axis(d_v, axis1, 6, -wobble), right, 1.0}}});
    doc.steps.push_back(std::move(step));
  }
  return doc;
}

}  // namespace detail

inline Corpus tiny_corpus(std::size_t d_v = 4) {
  Corpus c{d_v, {}};
  c.documents.push_back(detail::two_step_document("fa", "ea", "eb", 0, 1, d_v));
  c.documents.push_back(detail::two_step_document("fb", "ec", "ed", 2, 3, d_v));
  validate_corpus(c);
  return c;
}

// Two-candidate questions: the gold sequence is the document's own images;
// the distractor swaps in the other document's step-2 image.
inline std::vector<TaskInstance> tiny_instances() {
  auto make = [](const std::string& own, const std::string& other, std::size_t gold) {
    TaskInstance t;
    t.task_kind = TaskKind::Cloze;
    t.doc_id = own;
    t.context_steps = {1, 2};
    t.position_steps = {1, 2};
    std::vector<std::string> truth{own + "/s1/i0", own + "/s2/i0"};
    std::vector<std::string> fake{own + "/s1/i0", other + "/s2/i0"};
    t.candidates = gold == 0 ? std::vector{truth, fake} : std::vector{fake, truth};
    t.gold_index = gold;
    return t;
  };
  return {make("fa", "fb", 0), make("fb", "fa", 1)};
}

inline ModelConfig tiny_model_config(const Corpus& corpus) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 2;
  c.ffn_multiplier = 2;
  c.scorer_layers = 1;
  c.scorer_d = 4;
  c.scorer_heads = 2;
  c.negatives = 2;
  c.d_v = corpus.d_v;
  c.max_steps = 2;
  c.max_positions = 12;
  c.init_std = Real(0.3);
  c.vocabulary = TokenVocabulary::from_corpus(corpus);
  return c;
}

// Adds N(0, sigma^2) to every parameter entry, including the zero-initialised
// biases, edge-bias tables and layer-norm affines.
inline void perturb_parameters(ParamStore& store, std::uint64_t seed, Real sigma) {
  Rng rng = derive_stream(seed, "perturb");
  std::normal_distribution<Real> dist(0, sigma);
  for (Parameter& p : store.params())
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] += dist(rng);
}

// The combined objective over both tiny instances as one batch.
inline LossFn tiny_loss(TmegModel& model, const std::vector<PreparedInstance>& prepared, Real lambda_b,
                        std::uint64_t negative_seed = 0) {
  return [&model, &prepared, lambda_b, negative_seed](ad::Tape& t) {
    std::vector<const PreparedInstance*> batch;
    for (const auto& p : prepared) batch.push_back(&p);
    return batch_loss(model, t, batch, lambda_b, negative_seed).loss;
  };
}

struct GradCheckOptions {
  std::uint64_t seed = 0;
  Real h = Real(1e-5);
  std::size_t coords_per_param = 32;
  Real lambda_b = Real(0.1);
  Real perturb_sigma = Real(0.3);
};

inline GradCheckOptions grad_check_options_from_json(const nlohmann::json& j) {
  GradCheckOptions o;
  try {
    o.seed = j.value("seed", o.seed);
    o.h = j.value("h", o.h);
    o.coords_per_param = j.value("coords_per_param", o.coords_per_param);
    o.lambda_b = j.value("lambda_b", o.lambda_b);
    o.perturb_sigma = j.value("perturb_sigma", o.perturb_sigma);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("grad-check config: ") + e.what());
  }
  if (!(o.h > 0)) throw ConfigError("grad-check config: h must be positive");
  return o;
}

// Finite-difference check of the combined loss on the tiny corpus with
// randomised parameters.
inline GradCheckReport tiny_grad_check(const GradCheckOptions& o) {
  const Corpus corpus = tiny_corpus();
  const ModelConfig mc = tiny_model_config(corpus);
  const auto prepared = prepare_instances(corpus, tiny_instances(), mc, Ablation::None);
  TmegModel model(mc, o.seed);
  perturb_parameters(model.store(), o.seed, o.perturb_sigma);
  return finite_difference_check(tiny_loss(model, prepared, o.lambda_b), model.store(), o.h, o.seed,
                                 o.coords_per_param);
}

}  // namespace tmeg::fixtures
