#pragma once

// Seeded small annotated inputs for graph construction, at most 12 nodes.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "tmeg/graph.hpp"

namespace random_graphs {

using namespace tmeg;

struct RandomInput {
  std::vector<Step> steps;
  std::vector<StepImage> images;
  std::vector<int> image_steps;

  std::vector<const Step*> step_ptrs() const {
    std::vector<const Step*> out;
    for (const auto& s : steps) out.push_back(&s);
    return out;
  }
  CandidateSequence candidate() const {
    CandidateSequence c;
    for (const auto& i : images) c.images.push_back(&i);
    c.position_steps = image_steps;
    return c;
  }
};

// Boxes on a coarse grid so IoU ties and exact 0.5 overlaps occur.
inline BoundingBox grid_box(Rng& rng) {
  std::uniform_int_distribution<int> cell(0, 3);
  const int x = cell(rng), y = cell(rng);
  const int w = std::uniform_int_distribution<int>(1, 4 - x)(rng);
  const int h = std::uniform_int_distribution<int>(1, 4 - y)(rng);
  return {x * 0.25, y * 0.25, (x + w) * 0.25, (y + h) * 0.25};
}

// At most 12 nodes: steps contribute tokens + 2, images objects + 1.
inline RandomInput random_input(std::uint64_t seed, Real lambda_t) {
  Rng rng = derive_stream_n(seed, "oracle-input", 0);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  RandomInput in;
  int budget = 12;
  const int n_images = pick(0, 2);
  budget -= n_images * 2;
  const int n_steps = std::max(1, std::min(pick(1, 3), budget / 3));
  const std::vector<std::string> entities{"e0", "e1", "e2"};

  for (int p = 0; p < n_images; ++p) {
    StepImage img;
    img.image_id = "img" + std::to_string(p);
    in.images.push_back(img);
    in.image_steps.push_back(pick(1, n_steps));
  }
  for (int s = 0; s < n_steps; ++s) {
    Step step;
    step.index = s + 1;
    const int remaining_steps = n_steps - s;
    const int max_tokens = std::max(1, std::min(4, (budget - 2 * remaining_steps) - (remaining_steps - 1)));
    const int n_tok = pick(1, max_tokens);
    budget -= n_tok + 2;
    for (int t = 0; t < n_tok; ++t) step.tokens.push_back("w" + std::to_string(pick(0, 5)));
    std::size_t pos = 0;
    while (pos < step.tokens.size()) {
      if (pick(0, 2) == 0) {
        ++pos;
        continue;
      }
      const std::size_t len = std::min<std::size_t>(step.tokens.size() - pos, pick(1, 2));
      NounPhrase np{{pos, pos + len}, entities[pick(0, 2)], {}};
      for (const auto& img : in.images)
        if (pick(0, 1) == 0) np.grounding_boxes[img.image_id] = grid_box(rng);
      step.noun_phrases.push_back(np);
      pos += len;
    }
    in.steps.push_back(step);
  }
  // spend what is left on objects, at least one per image
  for (auto& img : in.images) {
    const int n_obj = std::max(1, std::min(3, budget + 1));
    budget -= n_obj - 1;
    for (int o = 0; o < n_obj; ++o) {
      ObjectFeature f;
      // integer coordinates so distances can land exactly on lambda_t
      f.feature = {Real(pick(0, 2)) * lambda_t / 2, Real(pick(0, 1)) * lambda_t};
      f.box = grid_box(rng);
      img.objects.push_back(f);
    }
  }
  return in;
}

}  // namespace random_graphs
