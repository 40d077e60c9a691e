#pragma once

// Seeded generator of annotated procedural documents.
//
// Feature scale: each entity e has a persistent latent vector drawn from
// N(0, latent_scale^2 I) in d_v dimensions; an object depicting e is
// latent(e) + N(0, feature_noise_sigma^2 I). With the defaults (d_v = 16,
// latent_scale = 3.5, sigma = 0.25) two depictions of one entity sit about
// sigma * sqrt(2 d_v) ~ 1.4 apart while distinct entities sit about
// latent_scale * sqrt(2 d_v) ~ 20 apart, so a visual temporal threshold of 7
// separates them. Clutter objects get fresh N(0, latent_scale^2 I) features.

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include "tmeg/corpus_io.hpp"

namespace tmeg {

struct SyntheticConfig {
  std::size_t num_docs = 16;
  std::size_t steps_min = 4, steps_max = 8;
  std::size_t tokens_per_step_min = 8, tokens_per_step_max = 16;
  std::size_t entity_vocab_size = 24;
  std::size_t token_vocab_size = 64;
  std::size_t entities_per_doc = 5;
  std::size_t mentions_per_step_min = 1, mentions_per_step_max = 2;
  std::size_t images_per_step_min = 1, images_per_step_max = 1;
  std::size_t objects_per_image_min = 2, objects_per_image_max = 5;
  std::size_t d_v = 16;
  Real latent_scale = Real(3.5);
  Real feature_noise_sigma = Real(0.25);
  Real grounding_jitter = Real(0.02);
  std::size_t n_candidates = 4;
  std::uint64_t seed = 0;
  std::string domain_tag = "recipe-like";
  std::string doc_prefix = "doc";
};

inline void validate(const SyntheticConfig& c) {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("synthetic config: " + msg);
  };
  need(c.num_docs > 0, "num_docs must be positive");
  need(c.steps_min >= 2 && c.steps_min <= c.steps_max, "need 2 <= steps_min <= steps_max (entities must recur)");
  need(c.tokens_per_step_min > 0 && c.tokens_per_step_min <= c.tokens_per_step_max, "bad tokens_per_step range");
  need(c.entity_vocab_size > 0 && c.token_vocab_size > 0, "vocabulary sizes must be positive");
  need(c.entities_per_doc >= 1 && c.entities_per_doc <= c.entity_vocab_size,
       "entities_per_doc must be in [1, entity_vocab_size]");
  need(c.mentions_per_step_min >= 1 && c.mentions_per_step_min <= c.mentions_per_step_max,
       "bad mentions_per_step range");
  need(c.mentions_per_step_max <= c.entities_per_doc, "mentions_per_step_max exceeds entities_per_doc");
  // every mention may take two tokens, and recurrence repair can add one more mention
  need(c.tokens_per_step_min >= 2 * (c.mentions_per_step_max + 1),
       "entities exceed tokens available: tokens_per_step_min must be >= 2 * (mentions_per_step_max + 1)");
  need(c.images_per_step_min >= 1 && c.images_per_step_min <= c.images_per_step_max, "bad images_per_step range");
  need(c.objects_per_image_min >= 1 && c.objects_per_image_min <= c.objects_per_image_max &&
           c.objects_per_image_max <= kMaxObjectsPerImage,
       "objects_per_image range must lie in [1,36]");
  need(c.objects_per_image_max >= c.mentions_per_step_max + 1,
       "objects_per_image_max must leave room for every mentioned entity");
  need(c.d_v > 0, "d_v must be positive");
  need(c.latent_scale > 0, "latent_scale must be positive");
  need(c.feature_noise_sigma >= 0 && c.grounding_jitter >= 0, "noise and jitter must be >= 0");
  need(c.n_candidates >= 2, "n_candidates must be >= 2");
}

inline SyntheticConfig synthetic_config_from_json(const Json& j) {
  SyntheticConfig c;
  auto get = [&](const char* key, auto& out) {
    if (auto it = j.find(key); it != j.end()) out = it->get<std::decay_t<decltype(out)>>();
  };
  try {
    get("num_docs", c.num_docs);
    get("steps_min", c.steps_min);
    get("steps_max", c.steps_max);
    get("tokens_per_step_min", c.tokens_per_step_min);
    get("tokens_per_step_max", c.tokens_per_step_max);
    get("entity_vocab_size", c.entity_vocab_size);
    get("token_vocab_size", c.token_vocab_size);
    get("entities_per_doc", c.entities_per_doc);
    get("mentions_per_step_min", c.mentions_per_step_min);
    get("mentions_per_step_max", c.mentions_per_step_max);
    get("images_per_step_min", c.images_per_step_min);
    get("images_per_step_max", c.images_per_step_max);
    get("objects_per_image_min", c.objects_per_image_min);
    get("objects_per_image_max", c.objects_per_image_max);
    get("d_v", c.d_v);
    get("latent_scale", c.latent_scale);
    get("feature_noise_sigma", c.feature_noise_sigma);
    get("grounding_jitter", c.grounding_jitter);
    get("n_candidates", c.n_candidates);
    get("seed", c.seed);
    get("domain_tag", c.domain_tag);
    get("doc_prefix", c.doc_prefix);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  return c;
}

namespace detail {

template <typename T>
T uniform_int(Rng& rng, T lo, T hi) {
  return std::uniform_int_distribution<T>(lo, hi)(rng);
}
inline Real uniform_real(Rng& rng, Real lo, Real hi) { return std::uniform_real_distribution<Real>(lo, hi)(rng); }

inline BoundingBox random_box(Rng& rng) {
  const Real w = uniform_real(rng, Real(0.25), Real(0.5));
  const Real h = uniform_real(rng, Real(0.25), Real(0.5));
  const Real x1 = uniform_real(rng, 0, 1 - w);
  const Real y1 = uniform_real(rng, 0, 1 - h);
  return {x1, y1, x1 + w, y1 + h};
}

inline BoundingBox jitter_box(const BoundingBox& b, Real jitter, Rng& rng) {
  if (jitter == 0) return b;
  auto j = [&](Real v) { return std::clamp(v + uniform_real(rng, -jitter, jitter), Real(0), Real(1)); };
  BoundingBox out{j(b.x1), j(b.y1), j(b.x2), j(b.y2)};
  if (!(out.x1 < out.x2)) out = {b.x1, out.y1, b.x2, out.y2};
  if (!(out.y1 < out.y2)) out = {out.x1, b.y1, out.x2, b.y2};
  return out;
}

inline std::vector<Real> gaussian_vector(Rng& rng, std::size_t d, Real sigma) {
  std::normal_distribution<Real> n(0, 1);
  std::vector<Real> v(d);
  for (auto& x : v) x = sigma * n(rng);
  return v;
}

}  // namespace detail

inline std::vector<std::vector<Real>> entity_latents(const SyntheticConfig& c) {
  Rng rng = derive_stream(c.seed, "entity-latents");
  std::vector<std::vector<Real>> latents;
  for (std::size_t e = 0; e < c.entity_vocab_size; ++e) latents.push_back(detail::gaussian_vector(rng, c.d_v, c.latent_scale));
  return latents;
}

inline std::string entity_name(std::size_t e) { return "e" + std::to_string(e); }

inline std::string doc_name(const SyntheticConfig& c, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%04zu", i);
  return c.doc_prefix + buf;
}

// One document from its own named stream.
inline PmdDocument generate_document(const SyntheticConfig& c, std::size_t doc_number,
                                     const std::vector<std::vector<Real>>& latents) {
  using detail::uniform_int;
  using detail::uniform_real;
  PmdDocument doc;
  doc.doc_id = doc_name(c, doc_number);
  doc.domain_tag = c.domain_tag;
  Rng rng = derive_stream(c.seed, "document", doc.doc_id);

  const std::size_t n_steps = uniform_int(rng, c.steps_min, c.steps_max);

  std::vector<std::size_t> all_entities(c.entity_vocab_size);
  std::iota(all_entities.begin(), all_entities.end(), std::size_t{0});
  std::shuffle(all_entities.begin(), all_entities.end(), rng);
  std::vector<std::size_t> cast(all_entities.begin(), all_entities.begin() + c.entities_per_doc);

  // mentions[t] = entities mentioned in step t
  std::vector<std::vector<std::size_t>> mentions(n_steps);
  for (auto& m : mentions) {
    const std::size_t k = uniform_int(rng, c.mentions_per_step_min, c.mentions_per_step_max);
    std::vector<std::size_t> pick = cast;
    std::shuffle(pick.begin(), pick.end(), rng);
    m.assign(pick.begin(), pick.begin() + k);
  }
  // Repair: at least half of the mentioned entities recur in >= 2 steps.
  auto step_count = [&](std::size_t e) {
    std::size_t n = 0;
    for (const auto& m : mentions) n += std::count(m.begin(), m.end(), e);
    return n;
  };
  for (;;) {
    std::vector<std::size_t> mentioned, single;
    for (std::size_t e : cast) {
      const std::size_t n = step_count(e);
      if (n > 0) mentioned.push_back(e);
      if (n == 1) single.push_back(e);
    }
    if (2 * (mentioned.size() - single.size()) >= mentioned.size() || single.empty()) break;
    const std::size_t e = single.front();
    std::vector<std::size_t> targets;
    for (std::size_t t = 0; t < n_steps; ++t)
      if (std::count(mentions[t].begin(), mentions[t].end(), e) == 0 &&
          mentions[t].size() <= c.mentions_per_step_max)
        targets.push_back(t);
    if (targets.empty()) break;
    mentions[targets[uniform_int<std::size_t>(rng, 0, targets.size() - 1)]].push_back(e);
  }

  for (std::size_t t = 0; t < n_steps; ++t) {
    Step step;
    step.index = static_cast<int>(t) + 1;

    // phrases: optional modifier + head token
    std::vector<std::vector<std::string>> phrases;
    std::size_t phrase_tokens = 0;
    for (std::size_t e : mentions[t]) {
      std::vector<std::string> p;
      if (uniform_int(rng, 0, 1) == 1) p.push_back("m" + std::to_string(uniform_int<std::size_t>(rng, 0, 7)));
      p.push_back(entity_name(e));
      phrase_tokens += p.size();
      phrases.push_back(std::move(p));
    }
    const std::size_t n_tokens = std::max(phrase_tokens, uniform_int(rng, c.tokens_per_step_min, c.tokens_per_step_max));
    std::vector<std::size_t> gap_fill(phrases.size() + 1, 0);
    for (std::size_t f = 0; f < n_tokens - phrase_tokens; ++f)
      ++gap_fill[uniform_int<std::size_t>(rng, 0, gap_fill.size() - 1)];
    std::vector<std::size_t> phrase_start(phrases.size());
    for (std::size_t g = 0; g < gap_fill.size(); ++g) {
      for (std::size_t f = 0; f < gap_fill[g]; ++f)
        step.tokens.push_back("w" + std::to_string(uniform_int<std::size_t>(rng, 0, c.token_vocab_size - 1)));
      if (g < phrases.size()) {
        phrase_start[g] = step.tokens.size();
        step.tokens.insert(step.tokens.end(), phrases[g].begin(), phrases[g].end());
      }
    }

    const std::size_t n_images = uniform_int(rng, c.images_per_step_min, c.images_per_step_max);
    // object index within each image for each mentioned entity
    std::vector<std::vector<std::size_t>> entity_object(n_images);
    for (std::size_t i = 0; i < n_images; ++i) {
      StepImage img;
      img.image_id = doc.doc_id + "/s" + std::to_string(t + 1) + "/i" + std::to_string(i);
      const std::size_t n_objects =
          std::max(mentions[t].size(), uniform_int(rng, c.objects_per_image_min, c.objects_per_image_max));
      std::vector<ObjectFeature> objs;
      for (std::size_t e : mentions[t]) {
        ObjectFeature o;
        o.feature = latents[e];
        if (c.feature_noise_sigma > 0) {
          auto noise = detail::gaussian_vector(rng, c.d_v, c.feature_noise_sigma);
          for (std::size_t d = 0; d < c.d_v; ++d) o.feature[d] += noise[d];
        }
        o.box = detail::random_box(rng);
        o.confidence = uniform_real(rng, Real(0.5), Real(1));
        objs.push_back(std::move(o));
      }
      while (objs.size() < n_objects) {
        ObjectFeature o;
        o.feature = detail::gaussian_vector(rng, c.d_v, c.latent_scale);
        o.box = detail::random_box(rng);
        o.confidence = uniform_real(rng, Real(0.5), Real(1));
        objs.push_back(std::move(o));
      }
      std::vector<std::size_t> order(objs.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      entity_object[i].resize(mentions[t].size());
      for (std::size_t pos = 0; pos < order.size(); ++pos) {
        img.objects.push_back(objs[order[pos]]);
        if (order[pos] < mentions[t].size()) entity_object[i][order[pos]] = pos;
      }
      step.images.push_back(std::move(img));
    }

    for (std::size_t k = 0; k < mentions[t].size(); ++k) {
      NounPhrase np;
      np.span = {phrase_start[k], phrase_start[k] + phrases[k].size()};
      np.entity_id = entity_name(mentions[t][k]);
      for (std::size_t i = 0; i < n_images; ++i) {
        const StepImage& img = step.images[i];
        np.grounding_boxes[img.image_id] =
            detail::jitter_box(img.objects[entity_object[i][k]].box, c.grounding_jitter, rng);
      }
      step.noun_phrases.push_back(std::move(np));
    }
    doc.steps.push_back(std::move(step));
  }
  return doc;
}

inline Corpus generate_synthetic_corpus(const SyntheticConfig& c) {
  validate(c);
  const auto latents = entity_latents(c);
  Corpus corpus;
  corpus.d_v = c.d_v;
  for (std::size_t i = 0; i < c.num_docs; ++i) corpus.documents.push_back(generate_document(c, i, latents));
  validate_corpus(corpus);
  return corpus;
}

}  // namespace tmeg
