#pragma once

// JSON interchange for corpora and JSON-lines task instance files.

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "tmeg/pmd.hpp"

namespace tmeg {

using Json = nlohmann::json;

namespace detail {

inline const Json& field(const Json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw DataError(where + ": expected a JSON object");
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(where + ": missing field '" + key + "'");
  return *it;
}

template <typename T>
T as(const Json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const Json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
}

inline BoundingBox box_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw DataError(where + ": box must be [x1,y1,x2,y2]");
  BoundingBox b{as<Real>(j[0], where), as<Real>(j[1], where), as<Real>(j[2], where), as<Real>(j[3], where)};
  return b;
}

inline Json box_to_json(const BoundingBox& b) { return Json::array({b.x1, b.y1, b.x2, b.y2}); }

}  // namespace detail

inline Json corpus_to_json(const Corpus& corpus) {
  Json docs = Json::array();
  for (const auto& doc : corpus.documents) {
    Json steps = Json::array();
    for (const auto& step : doc.steps) {
      Json nps = Json::array();
      for (const auto& np : step.noun_phrases) {
        Json gb = Json::object();
        for (const auto& [id, box] : np.grounding_boxes) gb[id] = detail::box_to_json(box);
        nps.push_back({{"span", {np.span.start, np.span.end}}, {"entity_id", np.entity_id}, {"grounding_boxes", gb}});
      }
      Json images = Json::array();
      for (const auto& img : step.images) {
        Json objs = Json::array();
        for (const auto& o : img.objects)
          objs.push_back({{"feature", o.feature}, {"box", detail::box_to_json(o.box)}, {"confidence", o.confidence}});
        images.push_back({{"image_id", img.image_id}, {"objects", objs}});
      }
      steps.push_back({{"index", step.index}, {"tokens", step.tokens}, {"noun_phrases", nps}, {"images", images}});
    }
    docs.push_back({{"doc_id", doc.doc_id}, {"domain_tag", doc.domain_tag}, {"steps", steps}});
  }
  return Json{{"d_v", corpus.d_v}, {"documents", docs}};
}

inline Corpus corpus_from_json(const Json& j) {
  using detail::as;
  using detail::field;
  Corpus corpus;
  corpus.d_v = as<std::size_t>(field(j, "d_v", "corpus"), "corpus.d_v");
  const Json& docs = field(j, "documents", "corpus");
  if (!docs.is_array()) throw DataError("corpus.documents: expected an array");
  for (std::size_t di = 0; di < docs.size(); ++di) {
    const Json& jd = docs[di];
    PmdDocument doc;
    const std::string wd = "documents[" + std::to_string(di) + "]";
    doc.doc_id = as<std::string>(field(jd, "doc_id", wd), wd + ".doc_id");
    const std::string where_doc = "doc '" + doc.doc_id + "'";
    doc.domain_tag = as<std::string>(field(jd, "domain_tag", where_doc), where_doc + ".domain_tag");
    const Json& steps = field(jd, "steps", where_doc);
    if (!steps.is_array()) throw DataError(where_doc + ".steps: expected an array");
    for (std::size_t si = 0; si < steps.size(); ++si) {
      const Json& js = steps[si];
      const std::string ws = where_doc + " steps[" + std::to_string(si) + "]";
      Step step;
      step.index = as<int>(field(js, "index", ws), ws + ".index");
      step.tokens = as<std::vector<std::string>>(field(js, "tokens", ws), ws + ".tokens");
      const Json& nps = field(js, "noun_phrases", ws);
      for (std::size_t ni = 0; ni < nps.size(); ++ni) {
        const std::string wn = ws + ".noun_phrases[" + std::to_string(ni) + "]";
        const Json& jn = nps[ni];
        NounPhrase np;
        auto span = as<std::vector<std::size_t>>(field(jn, "span", wn), wn + ".span");
        if (span.size() != 2) throw DataError(wn + ".span: expected [start,end]");
        np.span = {span[0], span[1]};
        np.entity_id = as<std::string>(field(jn, "entity_id", wn), wn + ".entity_id");
        if (auto it = jn.find("grounding_boxes"); it != jn.end() && !it->is_null()) {
          if (!it->is_object()) throw DataError(wn + ".grounding_boxes: expected an object");
          for (const auto& [id, jb] : it->items()) np.grounding_boxes[id] = detail::box_from_json(jb, wn + ".grounding_boxes");
        }
        step.noun_phrases.push_back(std::move(np));
      }
      const Json& images = field(js, "images", ws);
      for (std::size_t ii = 0; ii < images.size(); ++ii) {
        const std::string wi = ws + ".images[" + std::to_string(ii) + "]";
        const Json& ji = images[ii];
        StepImage img;
        img.image_id = as<std::string>(field(ji, "image_id", wi), wi + ".image_id");
        const Json& objs = field(ji, "objects", wi);
        for (std::size_t oi = 0; oi < objs.size(); ++oi) {
          const std::string wo = wi + ".objects[" + std::to_string(oi) + "]";
          ObjectFeature o;
          o.feature = as<std::vector<Real>>(field(objs[oi], "feature", wo), wo + ".feature");
          o.box = detail::box_from_json(field(objs[oi], "box", wo), wo + ".box");
          o.confidence = as<Real>(field(objs[oi], "confidence", wo), wo + ".confidence");
          img.objects.push_back(std::move(o));
        }
        step.images.push_back(std::move(img));
      }
      doc.steps.push_back(std::move(step));
    }
    corpus.documents.push_back(std::move(doc));
  }
  validate_corpus(corpus);
  return corpus;
}

inline Json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw DataError(source + ": JSON parse error: " + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open file for writing: " + path);
  os << text;
  if (!os) throw DataError("failed writing: " + path);
}

inline std::string serialize_corpus(const Corpus& corpus) { return corpus_to_json(corpus).dump() + "\n"; }

inline Corpus load_corpus(const std::string& path) {
  return corpus_from_json(parse_json_text(read_text_file(path), path));
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  write_text_file(path, serialize_corpus(corpus));
}

// ---------------------------------------------------------------------------
// Task instances, one JSON object per line.

inline Json instance_to_json(const TaskInstance& inst) {
  return Json{{"task_kind", to_string(inst.task_kind)}, {"doc_id", inst.doc_id},
              {"context_steps", inst.context_steps},   {"position_steps", inst.position_steps},
              {"candidates", inst.candidates},         {"gold_index", inst.gold_index}};
}

inline TaskInstance instance_from_json(const Json& j, const std::string& where) {
  using detail::as;
  using detail::field;
  TaskInstance inst;
  inst.task_kind = parse_task_kind(as<std::string>(field(j, "task_kind", where), where + ".task_kind"));
  inst.doc_id = as<std::string>(field(j, "doc_id", where), where + ".doc_id");
  inst.context_steps = as<std::vector<int>>(field(j, "context_steps", where), where + ".context_steps");
  inst.position_steps = as<std::vector<int>>(field(j, "position_steps", where), where + ".position_steps");
  inst.candidates = as<std::vector<std::vector<std::string>>>(field(j, "candidates", where), where + ".candidates");
  inst.gold_index = as<std::size_t>(field(j, "gold_index", where), where + ".gold_index");
  return inst;
}

inline std::string serialize_instances(const std::vector<TaskInstance>& instances) {
  std::string out;
  for (const auto& inst : instances) out += instance_to_json(inst).dump() + "\n";
  return out;
}

inline std::vector<TaskInstance> parse_instances(const std::string& text, const std::string& source) {
  std::vector<TaskInstance> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    out.push_back(instance_from_json(parse_json_text(line, where), where));
  }
  return out;
}

inline std::vector<TaskInstance> load_instances(const std::string& path) {
  return parse_instances(read_text_file(path), path);
}

}  // namespace tmeg
