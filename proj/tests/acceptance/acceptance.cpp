// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>

#include "graph_oracle.hpp"
#include "model_reference.hpp"
#include "random_graphs.hpp"
#include "tmeg/fixtures.hpp"
#include "tmeg/tmeg.hpp"

using namespace tmeg;

namespace {

constexpr Real kGradTol = 1e-4;
constexpr double kGradSeconds = 60;
constexpr Real kReferenceTol = 1e-12;
constexpr Real kLossTol = 1e-9;
constexpr Real kTrainAccuracy = 0.95;
constexpr Real kValidAccuracy = 0.80;
constexpr double kLearnSeconds = 15 * 60;
constexpr Real kTrendGap = 0.05;
constexpr Real kZ99 = 2.5758293035489;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  char secs[32];
  std::snprintf(secs, sizeof secs, "%.1fs", seconds_since(t0));
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << o.detail << " (" << secs
            << ")" << std::endl;
  if (!o.pass) ++failures;
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

// Model sized for the random small graphs (tokens w0..w5, 2-d features, <= 3 steps).
ModelConfig small_graph_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 2;
  c.ffn_multiplier = 2;
  c.scorer_layers = 1;
  c.scorer_heads = 2;
  c.d_v = 2;
  c.max_steps = 3;
  c.max_positions = 16;
  c.init_std = 0.3;
  std::vector<std::string> tokens{"[UNK]", "[CLS]", "[SEP]"};
  for (int i = 0; i < 6; ++i) tokens.push_back("w" + std::to_string(i));
  c.vocabulary = TokenVocabulary(tokens);
  return c;
}

TmegGraph random_graph(std::uint64_t seed) {
  const auto in = random_graphs::random_input(seed, 2);
  return assemble_graph(in.step_ptrs(), in.candidate(), 2, 0.5);
}

// ---- learnability corpus ----

SyntheticConfig learn_corpus(std::size_t docs, const std::string& prefix) {
  SyntheticConfig c;
  c.num_docs = docs;
  c.steps_min = c.steps_max = 4;
  c.tokens_per_step_min = 6;
  c.tokens_per_step_max = 8;
  c.entity_vocab_size = 200;
  c.entities_per_doc = 2;
  c.mentions_per_step_min = 1;
  c.mentions_per_step_max = 2;
  c.objects_per_image_min = 2;
  c.objects_per_image_max = 4;
  // most grounding boxes miss the IoU threshold
  c.grounding_jitter = 0.3;
  c.seed = 7;
  c.doc_prefix = prefix;
  return c;
}

Datasets learn_data() {
  return {generate_synthetic_corpus(learn_corpus(64, "train")), generate_synthetic_corpus(learn_corpus(16, "valid")),
          std::nullopt};
}

RunConfig learn_run(std::uint64_t seed, Ablation ablation) {
  RunConfig c;
  c.model.d_model = 32;
  c.model.n_heads = 4;
  c.model.n_layers = 2;
  c.model.scorer_layers = 1;
  c.model.scorer_heads = 4;
  c.model.max_positions = 64;
  c.model.max_steps = 8;
  c.model.edge_bias_lr_scale = 100;
  c.learning_rate = 1e-3;
  c.batch_size = 8;
  c.max_epochs = 50;
  c.patience = 50;
  c.ablation = ablation;
  c.seed = seed;
  return c;
}

Real accuracy_on(TmegModel& m, const Corpus& c, const RunConfig& rc) {
  return evaluate(m, prepare_instances(c, make_all_tasks(c, rc), m.config(), rc.ablation)).average();
}

// Full-model seed-0 run, shared between criteria 6 and 7.
struct LearnRun {
  Real train_accuracy = 0;
  Real valid_accuracy = 0;
  std::size_t epochs = 0;
  double seconds = 0;
};
std::optional<LearnRun> full_seed0;

LearnRun run_learn(const Datasets& d, std::uint64_t seed, Ablation a) {
  const auto t0 = Clock::now();
  const RunConfig rc = learn_run(seed, a);
  TrainResult r = train(rc, d, [&](const EpochRecord& e) {
    std::cerr << "  [" << to_string(a) << " seed " << seed << "] epoch " << e.epoch << " loss " << e.train_loss
              << " valid " << e.valid_accuracy << "\n";
  });
  LearnRun out;
  out.train_accuracy = accuracy_on(r.model, d.train, rc);
  out.valid_accuracy = r.report.average;
  out.epochs = r.report.curves.size();
  out.seconds = seconds_since(t0);
  return out;
}

// ---- criteria ----

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  fixtures::GradCheckOptions o;
  o.coords_per_param = std::numeric_limits<std::size_t>::max();
  const GradCheckReport r = fixtures::tiny_grad_check(o);
  const double secs = seconds_since(t0);

  const Corpus corpus = fixtures::tiny_corpus();
  const ModelConfig mc = fixtures::tiny_model_config(corpus);
  const bool shape = mc.d_model == 8 && mc.n_layers == 2 && mc.n_heads == 2 && mc.negatives == 2;
  TmegModel m(mc, 0);
  const bool has_tables = m.store().contains("fusion.0.temporal_bias") && m.store().contains("fusion.0.modal_bias");
  return {r.max_relative_error < kGradTol && secs < kGradSeconds && shape && has_tables,
          "max rel err " + fmt(r.max_relative_error) + " over " + std::to_string(r.coordinates_checked) +
              " coordinates (worst " + r.worst_parameter + ")"};
}

Outcome zero_bias_equivalence() {
  const ModelConfig mc = small_graph_config();
  Real worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TmegModel m(mc, seed);
    fixtures::perturb_parameters(m.store(), seed, 0.3);
    for (std::size_t l = 0; l < mc.n_layers; ++l) {
      m.param("fusion." + std::to_string(l) + ".temporal_bias").value.fill(0);
      m.param("fusion." + std::to_string(l) + ".modal_bias").value.fill(0);
    }
    const TmegGraph g = random_graph(seed);
    const GraphCodes codes(g);
    ad::Tape t(false);
    ad::Var h = m.project_modalities(t, m.encode_nodes(t, g), g);
    for (std::size_t l = 0; l < mc.n_layers; ++l) {
      const std::string prefix = "fusion." + std::to_string(l);
      const DenseArray expect = reference::plain_layer(m.store(), prefix, h.value(), mc.n_heads);
      h = m.fusion_layer(t, h, l, &codes);
      worst = std::max(worst, max_abs_diff(h.value(), expect));
    }
  }
  return {worst <= kReferenceTol, "max |biased - reference| " + fmt(worst) + " over 100 seeds"};
}

Outcome ablation_locality() {
  const ModelConfig mc = small_graph_config();
  std::size_t coded = 0, changed = 0, off_code_diffs = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TmegModel m(mc, seed);
    fixtures::perturb_parameters(m.store(), seed, 0.3);
    const TmegGraph g = random_graph(seed + 5000);
    TmegGraph ablated = g;
    apply_ablation(ablated, Ablation::NoTemporal);
    EncoderTrace a, b;
    ad::Tape t1(false), t2(false);
    m.run_encoder(t1, g, &a);
    m.run_encoder(t2, ablated, &b);
    for (std::size_t h = 0; h < mc.n_heads; ++h) {
      const DenseArray& x = a.logits_at(0, h);
      const DenseArray& y = b.logits_at(0, h);
      for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (g.phi_t.at(i, j) == 0) {
            off_code_diffs += x(i, j) != y(i, j);
          } else {
            ++coded;
            changed += x(i, j) != y(i, j);
          }
        }
    }
  }
  return {off_code_diffs == 0 && coded > 0,
          std::to_string(off_code_diffs) + " differing entries where phi_t is none; " + std::to_string(changed) + "/" +
              std::to_string(coded) + " temporal entries changed"};
}

Outcome graph_oracle() {
  std::size_t mismatched = 0, nodes = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto in = random_graphs::random_input(seed, 2);
    const TmegGraph g = assemble_graph(in.step_ptrs(), in.candidate(), 2, 0.5);
    const auto o = oracle::label(in.steps, in.images, in.image_steps, 2, 0.5);
    nodes = std::max(nodes, g.size());
    bool same = o.n == g.size();
    for (std::size_t k = 0; same && k < o.phi_t.size(); ++k)
      same = g.phi_t.codes[k] == o.phi_t[k] && g.phi_m.codes[k] == o.phi_m[k];
    mismatched += !same;
  }
  return {mismatched == 0 && nodes <= 12,
          std::to_string(mismatched) + "/1000 inputs disagree; largest graph " + std::to_string(nodes) + " nodes"};
}

Outcome analytic_losses() {
  ad::Tape t(false);
  const DenseArray text = DenseArray::from_rows({{1, 0, 0}});
  DenseArray negs(8, 3);
  for (std::size_t k = 0; k < 8; ++k) negs(k, 1) = 1;
  // every candidate orthogonal to the text row: uniform similarity
  const DenseArray pos = DenseArray::from_rows({{0, 0, 1}});
  const Real coh = coherence_loss(t.constant(text), t.constant(pos), t.constant(negs), 0.07).value()[0];
  const Real pred = prediction_loss(t.constant(DenseArray::from_rows({{0.3, 0.3, 0.3, 0.3}})), 2).value()[0];
  const bool ok = std::abs(coh - 2.197225) < 5e-7 && std::abs(coh - std::log(9.0)) < kLossTol &&
                  std::abs(pred - 1.386294) < 5e-7 && std::abs(pred - std::log(4.0)) < kLossTol;
  return {ok, "coherence " + fmt(coh, 10) + ", prediction " + fmt(pred, 10)};
}

Outcome learnability(const Datasets& d) {
  const RunConfig rc = learn_run(0, Ablation::None);
  ModelConfig mc = rc.model;
  mc.vocabulary = TokenVocabulary::from_corpus(d.train);
  mc.d_v = d.train.d_v;
  TmegModel untrained(mc, rc.seed);
  const auto insts_train = prepare_instances(d.train, make_all_tasks(d.train, rc), mc, rc.ablation);
  const auto insts_valid = prepare_instances(d.valid, make_all_tasks(d.valid, rc), mc, rc.ablation);
  std::size_t hits = 0, total = 0;
  for (const auto* set : {&insts_train, &insts_valid}) {
    const EvalResult r = evaluate(untrained, *set);
    for (const auto& p : r.predictions) hits += p.predicted == p.gold;
    total += r.predictions.size();
  }
  const Real chance = 1.0 / static_cast<Real>(rc.n_candidates);
  const Real untrained_acc = static_cast<Real>(hits) / static_cast<Real>(total);
  const Real band = kZ99 * std::sqrt(chance * (1 - chance) / static_cast<Real>(total));

  full_seed0 = run_learn(d, 0, Ablation::None);
  const LearnRun& r = *full_seed0;
  const bool ok = r.train_accuracy >= kTrainAccuracy && r.valid_accuracy >= kValidAccuracy && r.epochs <= 50 &&
                  std::abs(untrained_acc - chance) <= band && r.seconds < kLearnSeconds;
  return {ok, "train " + fmt(r.train_accuracy, 4) + ", valid " + fmt(r.valid_accuracy, 4) + " after " +
                  std::to_string(r.epochs) + " epochs; untrained " + fmt(untrained_acc, 4) + " on " +
                  std::to_string(total) + " (chance " + fmt(chance, 3) + " +/- " + fmt(band, 3) + ")"};
}

Outcome ablation_trend(const Datasets& d) {
  Real full = 0, no_t = 0, no_b = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    full += (seed == 0 && full_seed0 ? *full_seed0 : run_learn(d, seed, Ablation::None)).valid_accuracy;
    no_t += run_learn(d, seed, Ablation::NoTemporal).valid_accuracy;
    no_b += run_learn(d, seed, Ablation::NoBoth).valid_accuracy;
  }
  full /= 3, no_t /= 3, no_b /= 3;
  const bool ok = full >= no_t && full >= no_b && full - no_b >= kTrendGap;
  return {ok, "mean valid full " + fmt(full, 4) + ", no_temporal " + fmt(no_t, 4) + ", no_both " + fmt(no_b, 4)};
}

Outcome distractors() {
  std::size_t bad = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng = derive_stream_n(seed, "acceptance-pool", 0);
    std::uniform_int_distribution<int> size(3, 30), coord(-4, 4), objs(1, 3);
    auto make = [&](const std::string& id) {
      StepImage img{id, {}};
      for (int o = objs(rng); o > 0; --o)
        img.objects.push_back({{Real(coord(rng)), Real(coord(rng)), Real(coord(rng))}, {0, 0, 1, 1}, 1});
      return img;
    };
    const StepImage gold = make("gold");
    std::vector<StepImage> pool_images;
    for (int i = size(rng); i > 0; --i) pool_images.push_back(make("p" + std::to_string(pool_images.size())));
    std::vector<const StepImage*> pool;
    for (const auto& p : pool_images) pool.push_back(&p);
    const std::size_t n = std::min<std::size_t>(pool.size(), 1 + seed % 5);

    // brute force: full sort by (distance, id)
    auto pooled = [](const StepImage& img) {
      std::vector<Real> m(3, 0);
      for (const auto& o : img.objects)
        for (int k = 0; k < 3; ++k) m[k] += o.feature[k];
      for (auto& v : m) v /= static_cast<Real>(img.objects.size());
      return m;
    };
    const auto g = pooled(gold);
    std::vector<std::pair<Real, std::string>> all;
    for (const auto& p : pool_images) {
      const auto v = pooled(p);
      Real s = 0;
      for (int k = 0; k < 3; ++k) s += (v[k] - g[k]) * (v[k] - g[k]);
      all.emplace_back(std::sqrt(s), p.image_id);
    }
    std::sort(all.begin(), all.end());
    const auto got = sample_distractors(gold, pool, n);
    bool same = got.size() == n;
    for (std::size_t k = 0; same && k < n; ++k) same = got[k]->image_id == all[k].second;
    bad += !same;
  }
  return {bad == 0, std::to_string(bad) + "/1000 pools disagree with the full sort"};
}

std::string file_bytes(const std::string& path) { return read_text_file(path); }

Outcome determinism(const Datasets& d) {
  const auto dir = std::filesystem::temp_directory_path() / "tmeg_acceptance_det";
  std::filesystem::create_directories(dir);
  RunConfig rc = learn_run(3, Ablation::None);
  rc.max_epochs = 3;
  std::string metrics[2], ckpt[2];
  for (int k = 0; k < 2; ++k) {
    const std::string m = (dir / ("metrics" + std::to_string(k) + ".json")).string();
    const std::string c = (dir / ("model" + std::to_string(k) + ".ckpt")).string();
    TrainResult r = train(rc, d);
    write_text_file(m, metrics_to_json(r.report).dump(2) + "\n");
    save_model(c, r.model);
    metrics[k] = file_bytes(m);
    ckpt[k] = file_bytes(c);
  }
  std::filesystem::remove_all(dir);
  const bool ok = metrics[0] == metrics[1] && ckpt[0] == ckpt[1] && !ckpt[0].empty();
  return {ok, "metrics " + std::string(metrics[0] == metrics[1] ? "identical" : "differ") + " (" +
                  std::to_string(metrics[0].size()) + " bytes), checkpoint " +
                  (ckpt[0] == ckpt[1] ? "identical" : "differs") + " (" + std::to_string(ckpt[0].size()) + " bytes)"};
}

}  // namespace

int main() {
  report(1, "gradient fidelity", gradient_fidelity);
  report(2, "zero-bias layer equivalence", zero_bias_equivalence);
  report(3, "no_temporal logit locality", ablation_locality);
  report(4, "graph oracle equivalence", graph_oracle);
  report(5, "analytic loss values", analytic_losses);
  const Datasets d = learn_data();
  report(6, "synthetic learnability", [&] { return learnability(d); });
  report(7, "ablation trend", [&] { return ablation_trend(d); });
  report(8, "distractor correctness", distractors);
  report(9, "determinism", [&] { return determinism(d); });
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
