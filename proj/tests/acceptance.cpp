// Acceptance suite: one PASS/FAIL/SKIP line per criterion. Pass criterion
// numbers as arguments to run a subset. Exit status is nonzero if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "dsp/dsp.hpp"
#include "support/random_trees.hpp"

using namespace dsp;
namespace fs = std::filesystem;
namespace oracle = dsp::fixtures::oracle;

namespace {

// Pinned tolerances and budgets.
constexpr double kRoundTripSeconds = 5.0;
constexpr double kDistributionTol = 1e-6;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kOverfitAccuracy = 0.99;
constexpr std::size_t kOverfitEpochs = 150;
constexpr double kOverfitSeconds = 600.0;
constexpr double kGeneralizationAccuracy = 0.85;
constexpr double kBeamGap = 0.02;

struct Outcome {
  enum Status { Pass, Fail, Skip } status;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// --- 1. linearization round trip -----------------------------------------------

Outcome round_trip() {
  Rng rng(1001);
  std::vector<SemanticTree> trees;
  for (int i = 0; i < 1000; ++i) trees.push_back(fixtures::random_decoupled_tree(rng, {.p_ref = 0.3}));
  auto t0 = Clock::now();
  std::size_t failures = 0;
  for (const auto& t : trees)
    if (from_linear(to_linear(t)) != t) ++failures;
  double secs = seconds_since(t0);
  bool ok = failures == 0 && secs < kRoundTripSeconds;
  return {ok ? Outcome::Pass : Outcome::Fail,
          std::to_string(failures) + "/1000 failures, " + fmt("%.3f s", secs)};
}

// --- 2. decouple/recouple reversibility ------------------------------------------

Outcome reversibility() {
  Rng rng(1002);
  std::size_t failures = 0;
  for (int i = 0; i < 1000; ++i) {
    auto t = fixtures::random_compositional_tree(rng);
    try {
      if (recouple(decouple(t), leaves(t)) != t) ++failures;
    } catch (const Error&) {
      ++failures;
    }
  }
  bool alarm_rejected = false;
  try {
    recouple(from_linear("[IN:CREATE_ALARM [SL:DATE_TIME 8am on Monday ] ]"), tokenize("On Monday set an alarm for 8am"));
  } catch (const Error& e) {
    alarm_rejected = e.code() == Errc::NotRecoverable;
  }
  bool ok = failures == 0 && alarm_rejected;
  return {ok ? Outcome::Pass : Outcome::Fail, std::to_string(failures) + "/1000 failures, long-distance example " +
                                                  (alarm_rejected ? "NotRecoverable" : "not rejected")};
}

// --- shared corpora ------------------------------------------------------------

std::vector<nn::Example> synthetic_examples(std::uint64_t seed, std::size_t sessions, bool heldout = false) {
  auto g = data::default_grammar();
  g.seed = seed;
  return data::make_examples(data::generate_synthetic(g, sessions, {heldout, "acc"}));
}

// --- 3. distribution invariants ------------------------------------------------

Outcome distributions() {
  auto examples = synthetic_examples(1003, 100);
  auto vocab = nn::Vocabulary::build(examples);
  Rng rng(1003);
  double worst = 0;
  std::size_t steps = 0, identity_breaks = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    nn::ModelConfig cfg;
    cfg.init_scale = 0.05 + 0.25 * rng.uniform();
    nn::PointerGenerator<double> model(cfg, vocab, 5000 + seed);
    const auto& ex = examples[rng.below(examples.size())];
    nn::Graph<double> g(model.params().size());
    auto enc = model.encode(g, ex.source);
    auto state = enc.init;
    nn::Var prev = model.bos_embedding(g);
    for (std::size_t t = 0; t < std::min<std::size_t>(ex.target.size(), 8); ++t) {
      auto step = model.decode_step(g, enc, prev, state);
      const auto& pg = g.value(step.p_gen);
      const auto& pc = g.value(step.p_copy);
      const auto& pt = g.value(step.p_ext);
      const double a = g.scalar(step.p_gate);
      worst = std::max({worst, std::abs(pg.sum() - 1), std::abs(pc.sum() - 1), std::abs(pt.sum() - 1)});
      for (Eigen::Index j = 0; j < pg.rows(); ++j) identity_breaks += pt(j, 0) != a * pg(j, 0);
      for (Eigen::Index j = 0; j < pc.rows(); ++j) identity_breaks += pt(pg.rows() + j, 0) != (1 - a) * pc(j, 0);
      ++steps;
      state = step.state;
      prev = model.output_embedding(g, ex.target[t]);
    }
  }
  bool ok = worst <= kDistributionTol && identity_breaks == 0;
  return {ok ? Outcome::Pass : Outcome::Fail, std::to_string(steps) + " steps, max |sum - 1| " + fmt("%.2e", worst) +
                                                  ", mixture identity breaks " + std::to_string(identity_breaks)};
}

// --- 4. gradient check ---------------------------------------------------------

Outcome gradients() {
  auto examples = synthetic_examples(1004, 6);
  // An example with an explicit reference exercises copy from prior turns.
  const nn::Example* chosen = &examples.front();
  for (const auto& ex : examples)
    if (std::find(ex.target.begin(), ex.target.end(), std::string(kSeparator)) != ex.target.end()) chosen = &ex;
  nn::ModelConfig cfg;
  cfg.embed_dim = 16;
  cfg.hidden = 24;
  cfg.heads = 4;
  // At small init scales attention is near uniform and its gradients sit at
  // the finite-difference noise floor; larger weights make every path measurable.
  cfg.init_scale = 0.5;
  nn::PointerGenerator<double> model(cfg, nn::Vocabulary::build(examples), 1004);
  auto t0 = Clock::now();
  auto r = nn::grad_check(model, {*chosen}, {.samples_per_param = 8});
  double secs = seconds_since(t0);
  std::string groups;
  for (const auto& [g, e] : r.per_group) groups += " " + g + "=" + fmt("%.1e", e);
  bool ok = r.max_rel_error < kGradTol && secs < kGradSeconds && r.per_group.size() == 8;
  return {ok ? Outcome::Pass : Outcome::Fail, "max rel error " + fmt("%.2e", r.max_rel_error) + " over " +
                                                  std::to_string(r.entries.size()) + " coords in " +
                                                  fmt("%.1f s", secs) + ";" + groups};
}

// --- 5. overfit ----------------------------------------------------------------

Outcome overfit() {
  auto all = synthetic_examples(1005, 150);
  if (all.size() < 200) return {Outcome::Fail, "generator gave only " + std::to_string(all.size()) + " examples"};
  std::vector<nn::Example> train(all.begin(), all.begin() + 200);
  nn::TrainConfig cfg;
  cfg.model.embed_dim = 64;
  cfg.model.hidden = 128;
  cfg.epochs = kOverfitEpochs;
  cfg.stop_at_accuracy = kOverfitAccuracy;
  cfg.seed = 1005;
  auto t0 = Clock::now();
  auto r = nn::train(train, train, cfg);
  double secs = seconds_since(t0);
  double acc = nn::greedy_frame_accuracy(r.model, train);
  bool ok = acc >= kOverfitAccuracy && r.history.size() <= kOverfitEpochs && secs < kOverfitSeconds;
  return {ok ? Outcome::Pass : Outcome::Fail, "train FA " + fmt("%.4f", acc) + " after " +
                                                  std::to_string(r.history.size()) + " epochs, " +
                                                  fmt("%.0f s", secs)};
}

// --- 6. generalization -----------------------------------------------------------

Outcome generalization() {
  auto g = data::default_grammar();
  g.seed = 1006;
  auto train = data::make_examples(data::generate_synthetic(g, 2000, {false, "train"}));
  g.seed = 2006;
  auto valid = data::make_examples(data::generate_synthetic(g, 200, {true, "valid"}));
  nn::TrainConfig cfg;
  cfg.model.embed_dim = 64;
  cfg.model.hidden = 128;
  cfg.epochs = 20;
  cfg.learning_rate = 0.002;
  cfg.word_dropout = 0.3;
  cfg.seed = 1006;
  auto t0 = Clock::now();
  auto r = nn::train(train, {}, cfg);
  BeamList beams;
  std::vector<SemanticTree> golds;
  for (const auto& ex : valid) {
    beams.push_back(nn::predict_beam(r.model, ex.source, 5));
    golds.push_back(*nn::to_prediction(ex.target));
  }
  double at1 = oracle_at_beam(beams, golds, 1), at5 = oracle_at_beam(beams, golds, 5);
  bool ok = at1 >= kGeneralizationAccuracy && at5 >= at1 + kBeamGap;
  return {ok ? Outcome::Pass : Outcome::Fail,
          std::to_string(train.size()) + " train / " + std::to_string(valid.size()) + " held-out examples, FA " +
              fmt("%.4f", at1) + ", oracle@5 " + fmt("%.4f", at5) + ", " + fmt("%.0f s", seconds_since(t0))};
}

// --- 7. metric oracles ---------------------------------------------------------

Outcome metric_oracles() {
  Rng rng(1007);
  std::size_t disagreements = 0;
  for (int c = 0; c < 500; ++c) {
    std::vector<SemanticTree> golds;
    std::vector<Prediction> preds;
    BeamList beams;
    std::size_t n = 1 + rng.below(30);
    for (std::size_t i = 0; i < n; ++i) {
      auto gold = fixtures::random_decoupled_tree(rng, {.max_depth = 3, .intent_names = 2, .slot_names = 3,
                                                        .value_words = 3, .p_ref = 0.3});
      std::vector<Prediction> beam;
      for (std::size_t k = 1 + rng.below(6); k > 0; --k) beam.push_back(fixtures::perturb(rng, gold));
      preds.push_back(beam.front());
      beams.push_back(std::move(beam));
      golds.push_back(std::move(gold));
    }
    disagreements += frame_accuracy(preds, golds) != oracle::frame_accuracy(preds, golds);
    disagreements += ref_only_fa(preds, golds) != oracle::frame_accuracy(preds, golds, {.collapse_refs = true});
    disagreements += intent_accuracy(preds, golds) != oracle::intent_accuracy(preds, golds);
    disagreements += inner_parse_accuracy(preds, golds) != oracle::frame_accuracy(preds, golds, {.ignore_root = true});
    for (std::size_t k : {1, 3, 5}) disagreements += oracle_at_beam(beams, golds, k) != oracle::oracle_at(beams, golds, k);

    std::vector<Session> sessions;
    std::vector<std::vector<Prediction>> session_preds;
    for (int s = 0; s < 3; ++s) {
      sessions.push_back(fixtures::random_session(rng, 1 + rng.below(5), {.slot_names = 3, .value_words = 3}));
      session_preds.emplace_back();
      for (auto i : sessions.back().user_turn_indices())
        session_preds.back().push_back(fixtures::perturb(rng, *sessions.back().turns[i].gold));
    }
    auto report = carryover_report(session_preds, sessions);
    auto ref = oracle::carryover(session_preds, sessions);
    for (std::size_t b = 0; b < kCarryoverBuckets; ++b)
      disagreements += report.buckets[b].correct != ref.correct[b] || report.buckets[b].total != ref.total[b];
  }
  return {disagreements == 0 ? Outcome::Pass : Outcome::Fail,
          "500 corpora, " + std::to_string(disagreements) + " disagreements"};
}

// --- 8. carryover harness --------------------------------------------------------

// Copy of `node` without the slot nodes at `drop` (paths relative to the root).
Node without_paths(const Node& node, const std::set<NodePath>& drop, NodePath& path) {
  if (node.is_token() || node.is_separator()) return node;
  std::vector<Node> kept;
  for (std::size_t i = 0; i < node.children().size(); ++i) {
    path.push_back(i);
    if (!drop.count(path)) kept.push_back(without_paths(node.children()[i], drop, path));
    path.pop_back();
  }
  return Node::labeled(node.label(), std::move(kept));
}

Outcome carryover() {
  auto g = data::default_grammar();
  g.seed = 1008;
  g.max_turns = 6;
  g.p_assistant = 0.3;
  auto sessions = data::generate_synthetic(g, 400);
  std::vector<std::vector<Prediction>> oracle_preds, deleted;
  for (const auto& s : sessions) {
    oracle_preds.emplace_back();
    deleted.emplace_back();
    std::set<std::pair<std::string, std::string>> seen;
    for (std::size_t i : s.user_turn_indices()) {
      const SemanticTree& gold = *s.turns[i].gold;
      oracle_preds.back().push_back(gold);
      std::set<NodePath> carried;
      auto slots = collect_slots(gold);
      for (const auto& e : slots)
        if (seen.count({e.label, to_lower(join(e.value))})) carried.insert(e.path);
      for (const auto& e : slots) seen.insert({e.label, to_lower(join(e.value))});
      NodePath root;
      deleted.back().push_back(SemanticTree{without_paths(gold.root, carried, root), gold.form});
    }
  }
  auto full = carryover_report(oracle_preds, sessions);
  auto cut = carryover_report(deleted, sessions);
  bool ok = true;
  std::ostringstream d;
  d << "oracle";
  for (std::size_t b = 0; b < kCarryoverBuckets; ++b) {
    ok = ok && full.buckets[b].total > 0 && full.buckets[b].correct == full.buckets[b].total;
    d << ' ' << full.buckets[b].correct << '/' << full.buckets[b].total;
  }
  d << "; carried slots deleted";
  for (std::size_t b = 0; b < kCarryoverBuckets; ++b) {
    ok = ok && (b == 0 ? cut.buckets[0].correct == full.buckets[0].correct : cut.buckets[b].correct == 0);
    d << ' ' << cut.buckets[b].correct << '/' << cut.buckets[b].total;
  }
  return {ok ? Outcome::Pass : Outcome::Fail, d.str()};
}

// --- 9. constrained decoding soundness -------------------------------------------

Outcome decoding_soundness() {
  auto examples = synthetic_examples(1009, 300);
  auto vocab = nn::Vocabulary::build(examples);
  Rng rng(1009);
  std::size_t decodes = 0, unparsable = 0, hypotheses = 0;
  auto t0 = Clock::now();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    nn::ModelConfig cfg;
    cfg.init_scale = 0.1 + 0.2 * static_cast<double>(seed % 3);
    nn::PointerGenerator<float> model(cfg, vocab, 9000 + seed);
    for (int i = 0; i < 100; ++i) {
      const auto& ex = examples[rng.below(examples.size())];
      auto hyps = nn::beam_search(model, ex.source, {.k = 1 + rng.below(3)});
      ++decodes;
      if (hyps.empty()) ++unparsable;
      for (const auto& h : hyps) {
        ++hypotheses;
        if (!nn::to_prediction(h.tokens)) ++unparsable;
      }
    }
  }
  return {unparsable == 0 ? Outcome::Pass : Outcome::Fail,
          std::to_string(decodes) + " decodes, " + std::to_string(hypotheses) + " hypotheses, " +
              std::to_string(unparsable) + " unparsable, " + fmt("%.1f s", seconds_since(t0))};
}

// --- 10. released dataset statistics -----------------------------------------------

Outcome dataset_stats() {
  const char* root = std::getenv("DSP_DATA_DIR");
  if (!root || !fs::is_directory(fs::path(root) / "sbtop"))
    return {Outcome::Skip, "DSP_DATA_DIR/sbtop not present"};
  const fs::path dir = fs::path(root) / "sbtop";
  auto find = [&](std::initializer_list<const char*> stems) -> std::optional<fs::path> {
    for (const char* stem : stems)
      for (const char* ext : {".tsv", ".jsonl", ".json", ".txt"})
        if (fs::exists(dir / (std::string(stem) + ext))) return dir / (std::string(stem) + ext);
    return std::nullopt;
  };
  auto load = [](const fs::path& p) {
    return data::load_dataset({data::sniff_format(p.string()), p.string(), data::Split::Train}).stats;
  };
  auto train = find({"train"});
  auto test = find({"test", "eval"});
  if (!train || !test) return {Outcome::Fail, "expected train and test files under " + dir.string()};
  auto tr = load(*train);
  auto te = load(*test);
  std::ostringstream d;
  d << "train size " << tr.size << ", ref tags " << tr.ref_tags << ", test size " << te.size;
  if (auto valid = find({"valid", "dev"})) {
    auto va = load(*valid);
    d << ", valid avg session length " << fmt("%.3f", va.avg_session_length);
    if (std::abs(va.avg_session_length - 4.024) > 0.001) d << " (warning: expected 4.024)";
  }
  bool ok = tr.size == 62807 && tr.ref_tags == 2900 && te.size == 1004;
  return {ok ? Outcome::Pass : Outcome::Fail, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"linearization round trip", round_trip},
      {"decouple/recouple reversibility", reversibility},
      {"output distribution invariants", distributions},
      {"gradient check", gradients},
      {"overfit 200 examples", overfit},
      {"held-out generalization", generalization},
      {"metrics match reference implementations", metric_oracles},
      {"carryover harness", carryover},
      {"constrained decoding soundness", decoding_soundness},
      {"released dataset statistics", dataset_stats},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Outcome::Fail, std::string("exception: ") + e.what()};
    }
    const char* status = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Fail ? "FAIL" : "SKIP";
    if (o.status == Outcome::Fail) ++failures;
    std::cout << "criterion " << number << " " << status << "  " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
