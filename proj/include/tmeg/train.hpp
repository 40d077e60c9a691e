#pragma once

// Training with early stopping, evaluation, ablations, transfer and the
// balance-parameter sweep.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tmeg/checkpoint.hpp"
#include "tmeg/corpus_io.hpp"
#include "tmeg/model.hpp"
#include "tmeg/tasks.hpp"

namespace tmeg {

enum class Ablation { None, NoTemporal, NoModal, NoBoth, NoCoherence };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoTemporal: return "no_temporal";
    case Ablation::NoModal: return "no_modal";
    case Ablation::NoBoth: return "no_both";
    case Ablation::NoCoherence: return "no_coherence";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::None, Ablation::NoTemporal, Ablation::NoModal, Ablation::NoBoth, Ablation::NoCoherence})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown ablation '" + s + "' (expected none, no_temporal, no_modal, no_both, no_coherence)");
}

inline void apply_ablation(TmegGraph& g, Ablation a) {
  if (a == Ablation::NoTemporal || a == Ablation::NoBoth) g.phi_t = CodeGrid(g.size());
  if (a == Ablation::NoModal || a == Ablation::NoBoth) g.phi_m = CodeGrid(g.size());
}

inline Real effective_lambda_b(Real lambda_b, Ablation a) { return a == Ablation::NoCoherence ? Real(0) : lambda_b; }

struct RunConfig {
  ModelConfig model;
  std::string train_path, valid_path, test_path;
  std::vector<TaskKind> tasks{TaskKind::Cloze};
  std::size_t n_candidates = 4;
  std::size_t batch_size = 16;
  Real learning_rate = Real(5e-5);
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  Ablation ablation = Ablation::None;
  std::uint64_t seed = 0;
  std::string checkpoint_path;
  std::string metrics_path;
  bool record_wall_clock = false;

  Real lambda_b() const { return effective_lambda_b(model.lambda_b, ablation); }
};

inline void validate(const RunConfig& c) {
  validate(c.model);
  if (c.patience < 1) throw ConfigError("patience must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.n_candidates < 2) throw ConfigError("n_candidates must be >= 2");
  if (c.tasks.empty()) throw ConfigError("at least one task must be enabled");
  if (!(c.learning_rate > 0)) throw ConfigError("learning_rate must be positive");
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json model = model_config_to_json(c.model);
  model.erase("vocabulary");
  nlohmann::json tasks = nlohmann::json::array();
  for (TaskKind k : c.tasks) tasks.push_back(to_string(k));
  return {{"model", model},
          {"data", {{"train", c.train_path}, {"valid", c.valid_path}, {"test", c.test_path}}},
          {"tasks", tasks},
          {"n_candidates", c.n_candidates},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"ablation", to_string(c.ablation)},
          {"lambda_b", c.model.lambda_b},
          {"effective_lambda_b", c.lambda_b()},
          {"seed", c.seed}};
}

// Relative data and output paths resolve against `base_dir`.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  auto resolve = [&](const std::string& p) -> std::string {
    if (p.empty()) return p;
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? p : (base_dir / path).lexically_normal().string();
  };
  try {
    if (auto it = j.find("model"); it != j.end()) c.model = model_config_from_json(*it);
    if (auto it = j.find("data"); it != j.end()) {
      c.train_path = resolve(it->value("train", ""));
      c.valid_path = resolve(it->value("valid", ""));
      c.test_path = resolve(it->value("test", ""));
    }
    if (auto it = j.find("tasks"); it != j.end()) {
      c.tasks.clear();
      for (const auto& t : *it) c.tasks.push_back(parse_task_kind(t.get<std::string>()));
    }
    c.n_candidates = j.value("n_candidates", c.n_candidates);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.ablation = parse_ablation(j.value("ablation", std::string("none")));
    c.model.lambda_b = j.value("lambda_b", c.model.lambda_b);
    c.seed = j.value("seed", c.seed);
    c.record_wall_clock = j.value("record_wall_clock", false);
    if (auto it = j.find("output"); it != j.end()) {
      c.checkpoint_path = resolve(it->value("checkpoint", ""));
      c.metrics_path = resolve(it->value("metrics", ""));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  validate(c);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(parse_json_text(read_text_file(path), path),
                              std::filesystem::path(path).parent_path());
}

// Stops once the monitored value has not improved for `patience` consecutive updates.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {
    if (patience < 1) throw ConfigError("patience must be >= 1");
  }

  // Returns true when `value` is a new best.
  bool update(Real value) {
    ++epoch_;
    if (!best_ || value > *best_) {
      best_ = value;
      best_epoch_ = epoch_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }
  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::optional<Real> best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  std::optional<Real> best_;
};

inline std::vector<PreparedInstance> prepare_instances(const Corpus& corpus,
                                                       const std::vector<TaskInstance>& instances,
                                                       const ModelConfig& model, Ablation ablation) {
  const ImageIndex index(corpus);
  std::vector<PreparedInstance> out;
  out.reserve(instances.size());
  for (const TaskInstance& inst : instances) {
    validate_instance(inst, corpus, index);
    PreparedInstance p;
    p.doc_id = inst.doc_id;
    p.task_kind = inst.task_kind;
    p.gold_index = inst.gold_index;
    for (std::size_t j = 0; j < inst.candidates.size(); ++j) {
      TmegGraph g = assemble_instance_graph(inst, j, corpus, index, model.lambda_t, model.lambda_m);
      apply_ablation(g, ablation);
      p.graphs.push_back(std::move(g));
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct Prediction {
  std::string doc_id;
  TaskKind task_kind = TaskKind::Cloze;
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::vector<Real> scores;
};

struct EvalResult {
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // task -> (correct, total)
  std::vector<Prediction> predictions;

  std::map<std::string, Real> accuracy() const {
    std::map<std::string, Real> out;
    for (const auto& [task, c] : counts) out[task] = static_cast<Real>(c.first) / static_cast<Real>(c.second);
    return out;
  }
  Real average() const {
    const auto acc = accuracy();
    Real s = 0;
    for (const auto& [_, a] : acc) s += a;
    return acc.empty() ? Real(0) : s / static_cast<Real>(acc.size());
  }
};

// Lowest index among the maxima.
inline std::size_t argmax_lowest(const std::vector<Real>& scores) {
  if (scores.empty()) throw ShapeError("argmax over no scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

inline std::vector<Real> score_instance(TmegModel& model, const PreparedInstance& inst) {
  std::vector<Real> scores;
  for (const TmegGraph& g : inst.graphs) {
    ad::Tape t(false);
    scores.push_back(model.forward_candidate(t, g).score.value()[0]);
  }
  return scores;
}

inline EvalResult evaluate(TmegModel& model, const std::vector<PreparedInstance>& instances) {
  if (instances.empty()) throw DataError("evaluate: no instances to evaluate");
  EvalResult out;
  for (const PreparedInstance& inst : instances) {
    Prediction p{inst.doc_id, inst.task_kind, inst.gold_index, 0, score_instance(model, inst)};
    p.predicted = argmax_lowest(p.scores);
    auto& c = out.counts[to_string(inst.task_kind)];
    c.first += p.predicted == p.gold;
    ++c.second;
    out.predictions.push_back(std::move(p));
  }
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;
  Real train_loss = 0;
  Real valid_accuracy = 0;
};

struct MetricsReport {
  std::map<std::string, Real> task_accuracy;
  Real average = 0;
  std::string eval_split;
  std::vector<EpochRecord> curves;
  std::size_t best_epoch = 0;
  std::optional<Real> best_valid_accuracy;
  nlohmann::json config_echo;
  std::uint64_t seed = 0;
  std::optional<double> wall_clock_seconds;
  nlohmann::json extra = nlohmann::json::object();
};

inline nlohmann::json metrics_to_json(const MetricsReport& m) {
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& e : m.curves)
    curves.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"valid_accuracy", e.valid_accuracy}});
  nlohmann::json j = {{"task_accuracy", m.task_accuracy},
                      {"average_accuracy", m.average},
                      {"eval_split", m.eval_split},
                      {"curves", curves},
                      {"epochs_run", m.curves.size()},
                      {"best_epoch", m.best_epoch},
                      {"config", m.config_echo},
                      {"seed", m.seed}};
  if (m.best_valid_accuracy) j["best_valid_accuracy"] = *m.best_valid_accuracy;
  if (m.wall_clock_seconds) j["wall_clock_seconds"] = *m.wall_clock_seconds;
  for (const auto& [k, v] : m.extra.items()) j[k] = v;
  return j;
}

struct Datasets {
  Corpus train;
  Corpus valid;
  std::optional<Corpus> test;
};

inline std::vector<TaskInstance> make_all_tasks(const Corpus& corpus, const RunConfig& c) {
  std::vector<TaskInstance> out;
  for (TaskKind k : c.tasks) {
    auto part = make_tasks(corpus, k, c.n_candidates, c.seed);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

struct TrainResult {
  TmegModel model;
  MetricsReport report;
};

using EpochLogger = std::function<void(const EpochRecord&)>;

// Mini-batch Adam on the combined objective. Keeps the parameters of the
// epoch with the best validation accuracy.
inline TrainResult train(const RunConfig& cfg, const Datasets& data, const EpochLogger& log = {}) {
  validate(cfg);
  const auto start = std::chrono::steady_clock::now();
  ModelConfig mc = cfg.model;
  mc.vocabulary = TokenVocabulary::from_corpus(data.train);
  mc.d_v = data.train.d_v;
  TmegModel model(mc, cfg.seed);

  const auto train_set = prepare_instances(data.train, make_all_tasks(data.train, cfg), mc, cfg.ablation);
  const auto valid_set = prepare_instances(data.valid, make_all_tasks(data.valid, cfg), mc, cfg.ablation);
  if (train_set.empty()) throw DataError("train: no training instances");

  const AdamOptions adam{cfg.learning_rate};
  const Real lambda_b = cfg.lambda_b();
  EarlyStopper stopper(cfg.patience);
  ParamStore best = model.store();
  MetricsReport report;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = derive_stream_n(cfg.seed, "epoch", epoch);
    std::shuffle(order.begin(), order.end(), rng);

    Real loss_sum = 0;
    for (std::size_t b0 = 0, batch_no = 0; b0 < order.size(); b0 += cfg.batch_size, ++batch_no) {
      std::vector<const PreparedInstance*> batch;
      for (std::size_t k = b0; k < std::min(order.size(), b0 + cfg.batch_size); ++k)
        batch.push_back(&train_set[order[k]]);
      const std::uint64_t neg_seed = Fnv1a().u64(cfg.seed).str("negatives").u64(epoch).u64(batch_no).value();
      ad::Tape tape;
      try {
        BatchLoss bl = batch_loss(model, tape, batch, lambda_b, neg_seed);
        tape.backward(bl.loss);
        loss_sum += bl.loss.value()[0] * static_cast<Real>(batch.size());
      } catch (const NumericError& e) {
        throw NumericError("train: epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_no) + ": " +
                           e.what());
      }
      model.store().adam_step(adam);
    }

    EpochRecord rec{epoch, loss_sum / static_cast<Real>(train_set.size()), 0};
    rec.valid_accuracy = valid_set.empty() ? Real(0) : evaluate(model, valid_set).average();
    report.curves.push_back(rec);
    if (log) log(rec);
    if (stopper.update(rec.valid_accuracy)) best = model.store();
    if (stopper.should_stop()) break;
  }
  model.store() = best;
  report.best_epoch = stopper.best_epoch();
  report.best_valid_accuracy = stopper.best();

  const Corpus& eval_corpus = data.test ? *data.test : data.valid;
  report.eval_split = data.test ? "test" : "valid";
  const auto eval_set = prepare_instances(eval_corpus, make_all_tasks(eval_corpus, cfg), mc, cfg.ablation);
  const EvalResult er = evaluate(model, eval_set);
  report.task_accuracy = er.accuracy();
  report.average = er.average();
  report.config_echo = run_config_to_json(cfg);
  report.seed = cfg.seed;
  if (cfg.record_wall_clock)
    report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(model), std::move(report)};
}

inline void save_model(const std::string& path, const TmegModel& model) {
  save_checkpoint(path, model.store(), model_config_text(model.config()));
}

inline TmegModel load_model(const std::string& path) {
  const std::string text = read_checkpoint_config_file(path);
  TmegModel model(model_config_from_json(parse_json_text(text, path)));
  load_checkpoint(path, model.store(), model_config_text(model.config()));
  return model;
}

// First `1 - valid_fraction` of the documents train, the rest validate.
inline std::pair<Corpus, Corpus> split_corpus(const Corpus& c, Real valid_fraction) {
  if (c.documents.size() < 2) throw DataError("split_corpus: need at least two documents");
  auto n_valid = static_cast<std::size_t>(std::lround(valid_fraction * static_cast<Real>(c.documents.size())));
  n_valid = std::clamp<std::size_t>(n_valid, 1, c.documents.size() - 1);
  Corpus a{c.d_v, {}}, b{c.d_v, {}};
  const std::size_t n_train = c.documents.size() - n_valid;
  a.documents.assign(c.documents.begin(), c.documents.begin() + static_cast<std::ptrdiff_t>(n_train));
  b.documents.assign(c.documents.begin() + static_cast<std::ptrdiff_t>(n_train), c.documents.end());
  return {std::move(a), std::move(b)};
}

inline std::string domain_of(const Corpus& c) {
  return c.documents.empty() ? std::string() : c.documents.front().domain_tag;
}

// Train on A (with a held-out slice of A for early stopping), evaluate on B.
inline TrainResult transfer(const Corpus& a, const Corpus& b, const RunConfig& cfg, const EpochLogger& log = {}) {
  auto [train_part, valid_part] = split_corpus(a, Real(0.2));
  TrainResult r = train(cfg, Datasets{std::move(train_part), std::move(valid_part), b}, log);
  r.report.extra["domains"] = {{"train", domain_of(a)}, {"eval", domain_of(b)}};
  r.report.extra["label"] = domain_of(a) + "->" + domain_of(b);
  return r;
}

inline std::vector<MetricsReport> sweep_lambda_b(const RunConfig& cfg, const Datasets& data, std::vector<Real> values,
                                                 const EpochLogger& log = {}) {
  if (values.empty()) throw ConfigError("sweep_lambda_b: no values");
  std::sort(values.begin(), values.end());
  std::vector<MetricsReport> out;
  for (Real v : values) {
    RunConfig c = cfg;
    c.model.lambda_b = v;
    out.push_back(train(c, data, log).report);
  }
  return out;
}

inline Datasets load_datasets(const RunConfig& c) {
  if (c.train_path.empty() || c.valid_path.empty()) throw ConfigError("run config needs data.train and data.valid");
  Datasets d{load_corpus(c.train_path), load_corpus(c.valid_path), std::nullopt};
  if (!c.test_path.empty()) d.test = load_corpus(c.test_path);
  return d;
}

}  // namespace tmeg
