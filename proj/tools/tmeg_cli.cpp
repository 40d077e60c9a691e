#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tmeg/fixtures.hpp"
#include "tmeg/tmeg.hpp"

using namespace tmeg;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string dump_graphs;
  std::string metrics_out;
};

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

void emit_metrics(const Globals& g, const std::string& fallback_path, const nlohmann::json& metrics) {
  const std::string text = metrics.dump(2) + "\n";
  const std::string& path = g.metrics_out.empty() ? fallback_path : g.metrics_out;
  if (path.empty()) {
    std::cout << text;
  } else {
    write_text_file(path, text);
    log_line("metrics written to " + path);
  }
}

void dump_graphs(const Globals& g, const std::vector<PreparedInstance>& prepared) {
  if (g.dump_graphs.empty()) return;
  std::string out;
  for (const auto& p : prepared)
    for (const auto& graph : p.graphs)
      out += nlohmann::json{{"doc_id", p.doc_id}, {"task_kind", to_string(p.task_kind)}, {"graph", graph_to_json(graph)}}
                 .dump() +
             "\n";
  write_text_file(g.dump_graphs, out);
  log_line("graphs written to " + g.dump_graphs);
}

EpochLogger epoch_logger() {
  return [](const EpochRecord& e) {
    std::ostringstream ss;
    ss << "epoch " << e.epoch << " train_loss " << e.train_loss << " valid_accuracy " << e.valid_accuracy;
    log_line(ss.str());
  };
}

RunConfig run_config(const std::string& path, const Globals& g) {
  RunConfig c = load_run_config(path);
  if (g.seed) c.seed = *g.seed;
  return c;
}

std::vector<Real> parse_values(const std::string& text) {
  std::vector<Real> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("--values: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--values: no values given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tmeg: temporal-modal entity graph training and evaluation"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_flag = 0;
  auto* seed_opt = app.add_option("--seed", seed_flag, "Master seed (overrides config)");
  app.add_option("--dump-graphs", g.dump_graphs, "Write the constructed graphs as JSON lines to this path");
  app.add_option("--metrics-out", g.metrics_out, "Write the metrics JSON to this path");

  std::string config_path, out_path, corpus_path, task_name = "cloze", checkpoint_path, tasks_path;
  std::string train_path, eval_path, values_text;
  std::size_t n_candidates = 4;
  std::string ablation_name = "none";

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen->add_option("--config", config_path, "Synthetic corpus config (JSON)")->required();
  gen->add_option("--out", out_path, "Output corpus path")->required();

  auto* tasks = app.add_subcommand("make-tasks", "Build task instances (JSON lines) from a corpus");
  tasks->add_option("--corpus", corpus_path)->required();
  tasks->add_option("--task", task_name)->check(CLI::IsMember({"cloze", "coherence", "ordering"}));
  tasks->add_option("--n-candidates", n_candidates);
  tasks->add_option("--seed", seed_flag, "Task seed");
  tasks->add_option("--out", out_path, "Output path (default: stdout)");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint output (overrides config)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on task instances");
  eval->add_option("--checkpoint", checkpoint_path)->required();
  eval->add_option("--tasks", tasks_path)->required();
  eval->add_option("--corpus", corpus_path, "Corpus the instances refer to")->required();
  eval->add_option("--ablation", ablation_name);

  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the full loss on a tiny instance");
  grad->add_option("--config", config_path, "Grad-check options (JSON)");

  auto* transfer_cmd = app.add_subcommand("transfer", "Train on one corpus, evaluate on another");
  transfer_cmd->add_option("--train", train_path)->required();
  transfer_cmd->add_option("--eval", eval_path)->required();
  transfer_cmd->add_option("--config", config_path)->required();

  auto* sweep = app.add_subcommand("sweep-lambda", "Train and evaluate once per balance value");
  sweep->add_option("--values", values_text)->required();
  sweep->add_option("--config", config_path)->required();

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0 || tasks->get_option("--seed")->count() > 0) g.seed = seed_flag;

  try {
    if (*gen) {
      SyntheticConfig sc = synthetic_config_from_json(parse_json_text(read_text_file(config_path), config_path));
      if (g.seed) sc.seed = *g.seed;
      const Corpus corpus = generate_synthetic_corpus(sc);
      save_corpus(corpus, out_path);
      log_line("wrote " + std::to_string(corpus.documents.size()) + " documents to " + out_path);
    } else if (*tasks) {
      const Corpus corpus = load_corpus(corpus_path);
      const auto instances = make_tasks(corpus, parse_task_kind(task_name), n_candidates, g.seed.value_or(0));
      const std::string text = serialize_instances(instances);
      if (out_path.empty()) std::cout << text;
      else write_text_file(out_path, text);
      log_line("built " + std::to_string(instances.size()) + " " + task_name + " instances");
    } else if (*train_cmd) {
      RunConfig rc = run_config(config_path, g);
      if (!checkpoint_path.empty()) rc.checkpoint_path = checkpoint_path;
      const Datasets data = load_datasets(rc);
      if (!g.dump_graphs.empty()) {
        ModelConfig mc = rc.model;
        mc.vocabulary = TokenVocabulary::from_corpus(data.train);
        dump_graphs(g, prepare_instances(data.train, make_all_tasks(data.train, rc), mc, rc.ablation));
      }
      TrainResult r = train(rc, data, epoch_logger());
      if (!rc.checkpoint_path.empty()) {
        save_model(rc.checkpoint_path, r.model);
        log_line("checkpoint written to " + rc.checkpoint_path);
      }
      emit_metrics(g, rc.metrics_path, metrics_to_json(r.report));
    } else if (*eval) {
      TmegModel model = load_model(checkpoint_path);
      const Corpus corpus = load_corpus(corpus_path);
      const auto prepared = prepare_instances(corpus, load_instances(tasks_path), model.config(),
                                              parse_ablation(ablation_name));
      dump_graphs(g, prepared);
      const EvalResult er = evaluate(model, prepared);
      nlohmann::json preds = nlohmann::json::array();
      for (const auto& p : er.predictions)
        preds.push_back({{"doc_id", p.doc_id},
                         {"task_kind", to_string(p.task_kind)},
                         {"gold", p.gold},
                         {"predicted", p.predicted},
                         {"scores", p.scores}});
      emit_metrics(g, "",
                   {{"task_accuracy", er.accuracy()},
                    {"average_accuracy", er.average()},
                    {"instances", er.predictions.size()},
                    {"checkpoint", checkpoint_path},
                    {"predictions", preds}});
    } else if (*grad) {
      fixtures::GradCheckOptions o;
      if (!config_path.empty())
        o = fixtures::grad_check_options_from_json(parse_json_text(read_text_file(config_path), config_path));
      if (g.seed) o.seed = *g.seed;
      const GradCheckReport r = fixtures::tiny_grad_check(o);
      const bool pass = r.max_relative_error < Real(1e-4);
      emit_metrics(g, "",
                   {{"max_relative_error", r.max_relative_error},
                    {"worst_parameter", r.worst_parameter},
                    {"worst_index", r.worst_index},
                    {"worst_analytic", r.worst_analytic},
                    {"worst_numeric", r.worst_numeric},
                    {"coordinates_checked", r.coordinates_checked},
                    {"threshold", 1e-4},
                    {"pass", pass}});
      return pass ? 0 : 1;
    } else if (*transfer_cmd) {
      const RunConfig rc = run_config(config_path, g);
      TrainResult r = transfer(load_corpus(train_path), load_corpus(eval_path), rc, epoch_logger());
      if (!rc.checkpoint_path.empty()) save_model(rc.checkpoint_path, r.model);
      emit_metrics(g, rc.metrics_path, metrics_to_json(r.report));
    } else if (*sweep) {
      const RunConfig rc = run_config(config_path, g);
      const auto reports = sweep_lambda_b(rc, load_datasets(rc), parse_values(values_text), epoch_logger());
      nlohmann::json all = nlohmann::json::array();
      for (const auto& r : reports) all.push_back(metrics_to_json(r));
      emit_metrics(g, rc.metrics_path, {{"sweep", all}});
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
