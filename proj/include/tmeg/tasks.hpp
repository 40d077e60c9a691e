#pragma once

// Task-instance construction: cloze, coherence, and ordering questions with
// nearest-neighbour distractors in mean-pooled object-feature space.

#include <algorithm>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "tmeg/geometry.hpp"
#include "tmeg/pmd.hpp"

namespace tmeg {

// Questions over cloze and coherence always show four images.
inline constexpr std::size_t kSequenceLength = 4;

inline std::vector<Real> mean_pool_image(const StepImage& image) {
  if (image.objects.empty()) throw DataError("mean_pool_image: image '" + image.image_id + "' has no objects");
  std::vector<Real> out(image.objects.front().feature.size(), 0);
  for (const auto& obj : image.objects) {
    if (obj.feature.size() != out.size()) throw ShapeError("mean_pool_image: ragged feature dimensions");
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += obj.feature[d];
  }
  for (auto& v : out) v /= static_cast<Real>(image.objects.size());
  return out;
}

// The n pool images nearest to the gold image by pooled-feature distance,
// ordered by (distance, image_id).
inline std::vector<const StepImage*> sample_distractors(const StepImage& gold, std::span<const StepImage* const> pool,
                                                        std::size_t n) {
  if (pool.size() < n)
    throw DataError("sample_distractors: pool of " + std::to_string(pool.size()) + " cannot supply " +
                    std::to_string(n) + " distractors");
  const auto g = mean_pool_image(gold);
  std::vector<std::pair<Real, const StepImage*>> scored;
  scored.reserve(pool.size());
  for (const StepImage* img : pool) {
    if (img->image_id == gold.image_id) throw DataError("sample_distractors: pool contains the gold image");
    scored.emplace_back(euclidean(g, mean_pool_image(*img)), img);
  }
  auto less = [](const auto& a, const auto& b) {
    return std::tie(a.first, a.second->image_id) < std::tie(b.first, b.second->image_id);
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), less);
  std::vector<const StepImage*> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(scored[i].second);
  return out;
}

namespace detail {

inline const StepImage& step_image(const PmdDocument& doc, int step) {
  const Step& s = doc.step(step);
  if (s.images.empty()) throw DataError("doc '" + doc.doc_id + "' step " + std::to_string(step) + " has no image");
  return s.images.front();
}

// Every corpus image outside the question window of `doc`.
inline std::vector<const StepImage*> distractor_pool(const Corpus& corpus, const PmdDocument& doc,
                                                     const std::vector<int>& window) {
  std::vector<const StepImage*> pool;
  for (const auto& d : corpus.documents)
    for (const auto& s : d.steps) {
      if (d.doc_id == doc.doc_id && std::find(window.begin(), window.end(), s.index) != window.end()) continue;
      for (const auto& img : s.images) pool.push_back(&img);
    }
  return pool;
}

inline TaskInstance make_instance(TaskKind kind, const PmdDocument& doc, std::vector<int> window,
                                  std::vector<std::vector<std::string>> distractors, std::vector<std::string> gold,
                                  Rng& rng) {
  TaskInstance inst;
  inst.task_kind = kind;
  inst.doc_id = doc.doc_id;
  for (const auto& s : doc.steps) inst.context_steps.push_back(s.index);
  inst.position_steps = std::move(window);
  inst.gold_index = std::uniform_int_distribution<std::size_t>(0, distractors.size())(rng);
  inst.candidates = std::move(distractors);
  inst.candidates.insert(inst.candidates.begin() + static_cast<std::ptrdiff_t>(inst.gold_index), std::move(gold));
  return inst;
}

}  // namespace detail

// Builds the instances of one kind for one document. Cloze yields one
// instance per blank position of a random four-step window; coherence and
// ordering yield one instance per document.
inline std::vector<TaskInstance> build_task_instances(const Corpus& corpus, const PmdDocument& doc, TaskKind kind,
                                                      std::size_t n_candidates, Rng& rng) {
  if (n_candidates < 2) throw ConfigError("n_candidates must be >= 2");
  const std::size_t n_steps = doc.steps.size();
  const std::size_t n_a = kind == TaskKind::Ordering ? std::min(kSequenceLength, n_steps) : kSequenceLength;
  if (n_steps < n_a || n_a < 2)
    throw DataError("doc '" + doc.doc_id + "': " + std::to_string(n_steps) + " step images are insufficient for " +
                    to_string(kind));
  const int start = std::uniform_int_distribution<int>(1, static_cast<int>(n_steps - n_a) + 1)(rng);
  std::vector<int> window(n_a);
  std::iota(window.begin(), window.end(), start);
  std::vector<std::string> truth;
  for (int s : window) truth.push_back(detail::step_image(doc, s).image_id);

  std::vector<TaskInstance> out;
  const std::size_t n_distractors = n_candidates - 1;

  if (kind == TaskKind::Cloze) {
    const auto pool = detail::distractor_pool(corpus, doc, window);
    for (std::size_t blank = 0; blank < n_a; ++blank) {
      const StepImage& gold = detail::step_image(doc, window[blank]);
      std::vector<std::vector<std::string>> distractors;
      for (const StepImage* d : sample_distractors(gold, pool, n_distractors)) {
        auto seq = truth;
        seq[blank] = d->image_id;
        distractors.push_back(std::move(seq));
      }
      out.push_back(detail::make_instance(kind, doc, window, std::move(distractors), truth, rng));
    }
  } else if (kind == TaskKind::Coherence) {
    const auto pool = detail::distractor_pool(corpus, doc, window);
    std::vector<std::vector<const StepImage*>> neighbours(n_a);
    std::vector<std::size_t> used(n_a, 0);
    std::vector<std::vector<std::string>> distractors;
    for (std::size_t k = 0; k < n_distractors; ++k) {
      const std::size_t pos = std::uniform_int_distribution<std::size_t>(0, n_a - 1)(rng);
      if (neighbours[pos].empty())
        neighbours[pos] = sample_distractors(detail::step_image(doc, window[pos]), pool, n_distractors);
      auto seq = truth;
      seq[pos] = neighbours[pos][used[pos]++]->image_id;
      distractors.push_back(std::move(seq));
    }
    out.push_back(detail::make_instance(kind, doc, window, std::move(distractors), truth, rng));
  } else {
    std::vector<std::size_t> perm(n_a);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::vector<std::vector<std::size_t>> perms;
    while (std::next_permutation(perm.begin(), perm.end())) perms.push_back(perm);  // excludes identity
    if (n_distractors > perms.size())
      throw DataError("doc '" + doc.doc_id + "': ordering over " + std::to_string(n_a) + " images has only " +
                      std::to_string(perms.size()) + " distinct distractor permutations, need " +
                      std::to_string(n_distractors));
    std::shuffle(perms.begin(), perms.end(), rng);
    std::vector<std::vector<std::string>> distractors;
    for (std::size_t k = 0; k < n_distractors; ++k) {
      std::vector<std::string> seq;
      for (std::size_t p : perms[k]) seq.push_back(truth[p]);
      distractors.push_back(std::move(seq));
    }
    out.push_back(detail::make_instance(kind, doc, window, std::move(distractors), truth, rng));
  }
  return out;
}

// Instances for every document, each document on its own seeded stream.
inline std::vector<TaskInstance> make_tasks(const Corpus& corpus, TaskKind kind, std::size_t n_candidates,
                                            std::uint64_t seed) {
  std::vector<TaskInstance> out;
  for (const auto& doc : corpus.documents) {
    Rng rng = derive_stream(seed, "tasks", to_string(kind), doc.doc_id);
    auto part = build_task_instances(corpus, doc, kind, n_candidates, rng);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

}  // namespace tmeg
