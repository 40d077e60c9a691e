#pragma once

// Procedural multimodal document model: documents of ordered steps, each
// step with tokens, annotated noun phrases, and images of detected objects.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tmeg/common.hpp"

namespace tmeg {

inline constexpr std::size_t kMaxObjectsPerImage = 36;

struct BoundingBox {
  Real x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  Real width() const { return x2 - x1; }
  Real height() const { return y2 - y1; }
  Real area() const { return width() * height(); }
  bool valid() const { return 0 <= x1 && x1 < x2 && x2 <= 1 && 0 <= y1 && y1 < y2 && y2 <= 1; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ObjectFeature {
  std::vector<Real> feature;
  BoundingBox box;
  Real confidence = 1;

  friend bool operator==(const ObjectFeature&, const ObjectFeature&) = default;
};

struct StepImage {
  std::string image_id;
  std::vector<ObjectFeature> objects;

  friend bool operator==(const StepImage&, const StepImage&) = default;
};

struct TokenSpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive

  bool contains(std::size_t i) const { return start <= i && i < end; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct NounPhrase {
  TokenSpan span;
  std::string entity_id;
  std::map<std::string, BoundingBox> grounding_boxes;  // image_id -> predicted box

  friend bool operator==(const NounPhrase&, const NounPhrase&) = default;
};

struct Step {
  int index = 1;  // 1-based
  std::vector<std::string> tokens;
  std::vector<NounPhrase> noun_phrases;
  std::vector<StepImage> images;

  friend bool operator==(const Step&, const Step&) = default;
};

struct PmdDocument {
  std::string doc_id;
  std::string domain_tag;
  std::vector<Step> steps;

  const Step& step(int index) const {
    if (index < 1 || static_cast<std::size_t>(index) > steps.size())
      throw DataError("document " + doc_id + ": no step " + std::to_string(index));
    return steps[static_cast<std::size_t>(index) - 1];
  }

  friend bool operator==(const PmdDocument&, const PmdDocument&) = default;
};

struct Corpus {
  std::size_t d_v = 0;
  std::vector<PmdDocument> documents;

  const PmdDocument& document(const std::string& doc_id) const {
    for (const auto& d : documents)
      if (d.doc_id == doc_id) return d;
    throw DataError("unknown doc_id: " + doc_id);
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// Checks every type invariant; throws DataError naming the offending item.
inline void validate_corpus(const Corpus& corpus) {
  if (corpus.d_v == 0) throw DataError("corpus: d_v must be positive");
  std::set<std::string> doc_ids, image_ids;
  for (const PmdDocument& doc : corpus.documents) {
    const std::string where_doc = "doc '" + doc.doc_id + "'";
    if (doc.doc_id.empty()) throw DataError("document with empty doc_id");
    if (!doc_ids.insert(doc.doc_id).second) throw DataError(where_doc + ": duplicate doc_id");
    if (doc.steps.empty()) throw DataError(where_doc + ": no steps");
    for (std::size_t s = 0; s < doc.steps.size(); ++s) {
      const Step& step = doc.steps[s];
      const std::string where = where_doc + " step " + std::to_string(step.index);
      if (step.index != static_cast<int>(s) + 1)
        throw DataError(where_doc + ": step indices must be 1..N contiguous (found " + std::to_string(step.index) +
                        " at position " + std::to_string(s + 1) + ")");
      if (step.tokens.empty()) throw DataError(where + ": empty token list");
      std::vector<TokenSpan> spans;
      for (const NounPhrase& np : step.noun_phrases) {
        if (np.entity_id.empty()) throw DataError(where + ": noun phrase with empty entity_id");
        if (np.span.start >= np.span.end)
          throw DataError(where + ": noun phrase span [" + std::to_string(np.span.start) + "," +
                          std::to_string(np.span.end) + ") is empty or reversed");
        if (np.span.end > step.tokens.size())
          throw DataError(where + ": noun phrase span end " + std::to_string(np.span.end) + " exceeds token count " +
                          std::to_string(step.tokens.size()));
        for (const auto& [image_id, box] : np.grounding_boxes)
          if (!box.valid()) throw DataError(where + ": invalid grounding box for image " + image_id);
        spans.push_back(np.span);
      }
      std::sort(spans.begin(), spans.end(), [](auto& a, auto& b) { return a.start < b.start; });
      for (std::size_t i = 1; i < spans.size(); ++i)
        if (spans[i].start < spans[i - 1].end) throw DataError(where + ": overlapping noun phrase spans");
      for (const StepImage& img : step.images) {
        const std::string where_img = where + " image '" + img.image_id + "'";
        if (img.image_id.empty()) throw DataError(where + ": image with empty image_id");
        if (!image_ids.insert(img.image_id).second) throw DataError(where_img + ": duplicate image_id");
        if (img.objects.empty() || img.objects.size() > kMaxObjectsPerImage)
          throw DataError(where_img + ": object count " + std::to_string(img.objects.size()) + " outside [1,36]");
        for (std::size_t o = 0; o < img.objects.size(); ++o) {
          const ObjectFeature& obj = img.objects[o];
          const std::string where_obj = where_img + " object " + std::to_string(o);
          if (obj.feature.size() != corpus.d_v)
            throw DataError(where_obj + ": feature dimension " + std::to_string(obj.feature.size()) +
                            " != d_v " + std::to_string(corpus.d_v));
          if (!obj.box.valid()) throw DataError(where_obj + ": invalid box");
          if (!(obj.confidence >= 0 && obj.confidence <= 1)) throw DataError(where_obj + ": confidence outside [0,1]");
        }
      }
    }
  }
}

enum class TaskKind { Cloze, Coherence, Ordering };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Cloze: return "cloze";
    case TaskKind::Coherence: return "coherence";
    case TaskKind::Ordering: return "ordering";
  }
  return "?";
}

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "cloze") return TaskKind::Cloze;
  if (s == "coherence") return TaskKind::Coherence;
  if (s == "ordering") return TaskKind::Ordering;
  throw ConfigError("unknown task kind: " + s);
}

// One multiple-choice question over a document. Candidate sequences are lists
// of image ids; position p of every candidate stands for step position_steps[p].
struct TaskInstance {
  TaskKind task_kind = TaskKind::Cloze;
  std::string doc_id;
  std::vector<int> context_steps;
  std::vector<int> position_steps;
  std::vector<std::vector<std::string>> candidates;
  std::size_t gold_index = 0;

  std::size_t sequence_length() const { return candidates.empty() ? 0 : candidates.front().size(); }

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

// image_id -> image, for resolving candidate references.
class ImageIndex {
 public:
  explicit ImageIndex(const Corpus& corpus) {
    for (const auto& doc : corpus.documents)
      for (const auto& step : doc.steps)
        for (const auto& img : step.images) images_[img.image_id] = Entry{&img, &doc, step.index};
  }

  const StepImage& image(const std::string& id) const { return entry(id).image; }
  const PmdDocument& document_of(const std::string& id) const { return *entry(id).doc; }
  int step_of(const std::string& id) const { return entry(id).step; }
  bool contains(const std::string& id) const { return images_.count(id) != 0; }

  // All images in corpus order.
  template <typename F>
  void for_each(const Corpus& corpus, F&& f) const {
    for (const auto& doc : corpus.documents)
      for (const auto& step : doc.steps)
        for (const auto& img : step.images) f(doc, step, img);
  }

 private:
  struct Entry {
    const StepImage* img = nullptr;
    const PmdDocument* doc = nullptr;
    int step = 0;
  };
  struct Resolved {
    const StepImage& image;
    const PmdDocument* doc;
    int step;
  };
  Resolved entry(const std::string& id) const {
    auto it = images_.find(id);
    if (it == images_.end()) throw DataError("unknown image_id: " + id);
    return Resolved{*it->second.img, it->second.doc, it->second.step};
  }
  std::map<std::string, Entry> images_;
};

inline void validate_instance(const TaskInstance& inst, const Corpus& corpus, const ImageIndex& index) {
  const PmdDocument& doc = corpus.document(inst.doc_id);
  const std::string where = "instance for doc '" + inst.doc_id + "'";
  if (inst.candidates.size() < 2) throw DataError(where + ": fewer than 2 candidates");
  if (inst.gold_index >= inst.candidates.size()) throw DataError(where + ": gold_index out of range");
  const std::size_t n_a = inst.candidates.front().size();
  if (n_a == 0) throw DataError(where + ": empty candidate");
  if (inst.position_steps.size() != n_a) throw DataError(where + ": position_steps length != candidate length");
  for (const auto& cand : inst.candidates) {
    if (cand.size() != n_a) throw DataError(where + ": candidates of unequal length");
    for (const auto& id : cand)
      if (!index.contains(id)) throw DataError(where + ": candidate image '" + id + "' not in corpus");
  }
  for (int s : inst.context_steps) doc.step(s);
}

}  // namespace tmeg
