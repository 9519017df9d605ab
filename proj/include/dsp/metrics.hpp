#pragma once

#include <array>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsp/error.hpp"
#include "dsp/linearize.hpp"
#include "dsp/session.hpp"
#include "dsp/tree.hpp"

namespace dsp {

/// A model output: empty when the decoded sequence did not parse.
using Prediction = std::optional<SemanticTree>;

/// (correct, total) pair; merging is associative so corpora can be folded in
/// any grouping.
struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;

  void add(bool ok) {
    correct += ok ? 1 : 0;
    ++total;
  }
  Tally& merge(const Tally& other) {
    correct += other.correct;
    total += other.total;
    return *this;
  }
  double rate() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Predictions that fail validation are wrong under every tree metric.
inline bool scorable(const Prediction& pred) {
  return pred.has_value() && validate(*pred).ok();
}

inline bool frame_match(const Prediction& pred, const SemanticTree& gold, const CanonPolicy& policy) {
  if (!scorable(pred)) return false;
  return canonical_string(*pred, policy) == canonical_string(gold, policy);
}

inline bool intent_match(const Prediction& pred, const SemanticTree& gold) {
  if (!scorable(pred)) return false;
  return pred->root.label().name == gold.root.label().name;
}

namespace detail {

inline void check_aligned(std::size_t preds, std::size_t golds) {
  if (preds != golds)
    throw Error(Errc::LengthMismatch,
                std::to_string(preds) + " predictions vs " + std::to_string(golds) + " golds");
  if (golds == 0) throw Error(Errc::LengthMismatch, "empty corpus");
}

inline CanonPolicy with_collapsed_refs(CanonPolicy p) {
  p.collapse_ref_kinds = true;
  return p;
}

inline CanonPolicy with_stripped_root(CanonPolicy p) {
  p.strip_root_intent = true;
  return p;
}

}  // namespace detail

inline double frame_accuracy(const std::vector<Prediction>& preds, const std::vector<SemanticTree>& golds,
                             const CanonPolicy& policy = {}) {
  detail::check_aligned(preds.size(), golds.size());
  Tally t;
  for (std::size_t i = 0; i < golds.size(); ++i) t.add(frame_match(preds[i], golds[i], policy));
  return t.rate();
}

/// Frame accuracy that does not distinguish explicit from implicit refs.
inline double ref_only_fa(const std::vector<Prediction>& preds, const std::vector<SemanticTree>& golds,
                          const CanonPolicy& base = {}) {
  return frame_accuracy(preds, golds, detail::with_collapsed_refs(base));
}

/// Accuracy over top-level intents.
inline double intent_accuracy(const std::vector<Prediction>& preds, const std::vector<SemanticTree>& golds) {
  detail::check_aligned(preds.size(), golds.size());
  Tally t;
  for (std::size_t i = 0; i < golds.size(); ++i) t.add(intent_match(preds[i], golds[i]));
  return t.rate();
}

/// Frame accuracy ignoring the top-level intent name.
inline double inner_parse_accuracy(const std::vector<Prediction>& preds,
                                   const std::vector<SemanticTree>& golds, const CanonPolicy& base = {}) {
  return frame_accuracy(preds, golds, detail::with_stripped_root(base));
}

/// Per-example beams, each sorted by descending log-probability.
using BeamList = std::vector<std::vector<Prediction>>;

inline double oracle_at_beam(const BeamList& beams, const std::vector<SemanticTree>& golds, std::size_t k,
                             const CanonPolicy& policy = {}) {
  detail::check_aligned(beams.size(), golds.size());
  Tally t;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (beams[i].empty()) throw Error(Errc::EmptyBeam, "example " + std::to_string(i));
    bool hit = false;
    for (std::size_t r = 0; r < std::min(k, beams[i].size()) && !hit; ++r)
      hit = frame_match(beams[i][r], golds[i], policy);
    t.add(hit);
  }
  return t.rate();
}

struct EvalReport {
  double frame_acc = 0;
  double ref_only_fa = 0;
  double intent_acc = 0;
  double inner_parse_acc = 0;
  std::size_t n = 0;
  std::size_t beam = 1;
};

/// All four tree metrics, each counting an example correct when any of its
/// top-k hypotheses matches under that metric. k = 1 gives the plain metrics.
inline EvalReport evaluate_beams(const BeamList& beams, const std::vector<SemanticTree>& golds, std::size_t k,
                                 const CanonPolicy& policy = {}) {
  detail::check_aligned(beams.size(), golds.size());
  Tally fa, ref, in, inner;
  CanonPolicy ref_policy = detail::with_collapsed_refs(policy);
  CanonPolicy inner_policy = detail::with_stripped_root(policy);
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (beams[i].empty()) throw Error(Errc::EmptyBeam, "example " + std::to_string(i));
    bool a = false, b = false, c = false, d = false;
    for (std::size_t r = 0; r < std::min(k, beams[i].size()); ++r) {
      const Prediction& p = beams[i][r];
      a = a || frame_match(p, golds[i], policy);
      b = b || frame_match(p, golds[i], ref_policy);
      c = c || intent_match(p, golds[i]);
      d = d || frame_match(p, golds[i], inner_policy);
    }
    fa.add(a);
    ref.add(b);
    in.add(c);
    inner.add(d);
  }
  return {fa.rate(), ref.rate(), in.rate(), inner.rate(), golds.size(), k};
}

inline EvalReport evaluate(const std::vector<Prediction>& preds, const std::vector<SemanticTree>& golds,
                           const CanonPolicy& policy = {}) {
  detail::check_aligned(preds.size(), golds.size());
  BeamList beams;
  beams.reserve(preds.size());
  for (const auto& p : preds) beams.push_back({p});
  return evaluate_beams(beams, golds, 1, policy);
}

/// Slot-distance buckets 0, 1, 2 and >=3.
inline constexpr std::size_t kCarryoverBuckets = 4;

inline std::size_t distance_bucket(std::size_t distance) {
  return distance >= kCarryoverBuckets - 1 ? kCarryoverBuckets - 1 : distance;
}

struct CarryoverReport {
  std::array<Tally, kCarryoverBuckets> buckets{};
  double frame_acc_all_turns = 0;
  double frame_acc_final_turns = 0;
  std::size_t facts = 0;
};

struct CarryoverEvalOptions {
  CarryoverOptions counting;
  CanonPolicy policy;
};

inline bool prediction_has_slot(const Prediction& pred, const std::string& label, const Tokens& value) {
  if (!scorable(pred)) return false;
  auto key = carryover_key(label, value);
  for (const auto& s : collect_slots(*pred))
    if (carryover_key(s.label, s.value) == key) return true;
  return false;
}

/// `preds[s][u]` is the prediction for the u-th user turn of session s.
inline CarryoverReport carryover_report(const std::vector<std::vector<Prediction>>& preds,
                                        const std::vector<Session>& golds,
                                        const CarryoverEvalOptions& options = {}) {
  if (preds.size() != golds.size())
    throw Error(Errc::AlignmentError, std::to_string(preds.size()) + " prediction sessions vs " +
                                          std::to_string(golds.size()) + " gold sessions");
  CarryoverReport report;
  Tally all, final_turns;
  for (std::size_t s = 0; s < golds.size(); ++s) {
    auto user = golds[s].user_turn_indices();
    if (preds[s].size() != user.size())
      throw Error(Errc::AlignmentError, "session '" + golds[s].id + "': " + std::to_string(preds[s].size()) +
                                            " predictions for " + std::to_string(user.size()) + " user turns");
    for (const auto& fact : extract_carryover(golds[s], options.counting)) {
      bool ok = prediction_has_slot(preds[s][fact.user_turn], fact.label, fact.value);
      report.buckets[distance_bucket(fact.distance)].add(ok);
      ++report.facts;
    }
    for (std::size_t u = 0; u < user.size(); ++u) {
      bool ok = frame_match(preds[s][u], *golds[s].turns[user[u]].gold, options.policy);
      all.add(ok);
      if (u + 1 == user.size()) final_turns.add(ok);
    }
  }
  report.frame_acc_all_turns = all.rate();
  report.frame_acc_final_turns = final_turns.rate();
  return report;
}

// --- reporting ---------------------------------------------------------------

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["beam"] = r.beam;
  j["n"] = r.n;
  j["frame_acc"] = r.frame_acc;
  j["ref_only_fa"] = r.ref_only_fa;
  j["intent_acc"] = r.intent_acc;
  j["inner_parse_acc"] = r.inner_parse_acc;
  return j;
}

inline nlohmann::ordered_json to_json(const CarryoverReport& r) {
  static constexpr std::array<const char*, kCarryoverBuckets> names{"0", "1", "2", ">=3"};
  nlohmann::ordered_json j;
  j["frame_acc_all_turns"] = r.frame_acc_all_turns;
  j["frame_acc_final_turns"] = r.frame_acc_final_turns;
  j["facts"] = r.facts;
  j["buckets"] = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < kCarryoverBuckets; ++b) {
    nlohmann::ordered_json jb;
    jb["distance"] = names[b];
    jb["correct"] = r.buckets[b].correct;
    jb["total"] = r.buckets[b].total;
    jb["accuracy"] = r.buckets[b].rate();
    j["buckets"].push_back(std::move(jb));
  }
  return j;
}

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v);
  return buf;
}

inline std::string format_eval_table(const std::string& model, const std::vector<EvalReport>& rows) {
  std::string out = "Model                 Oracle@Beam      FA  Ref-only FA  Intent Acc.  Inner Parse Acc.\n";
  bool first = true;
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%-22s %11zu  %s       %s       %s            %s\n",
                  first ? model.c_str() : "", r.beam, percent(r.frame_acc).c_str(),
                  percent(r.ref_only_fa).c_str(), percent(r.intent_acc).c_str(),
                  percent(r.inner_parse_acc).c_str());
    out += line;
    first = false;
  }
  return out;
}

inline std::string format_carryover_table(const std::string& model, const CarryoverReport& r) {
  std::string out = "Model                 Accuracy(all)  Accuracy(final)       0       1       2     >=3\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %13s  %15s  %s  %s  %s  %s\n", model.c_str(),
                percent(r.frame_acc_all_turns).c_str(), percent(r.frame_acc_final_turns).c_str(),
                r.buckets[0].total ? percent(r.buckets[0].rate()).c_str() : "   n/a",
                r.buckets[1].total ? percent(r.buckets[1].rate()).c_str() : "   n/a",
                r.buckets[2].total ? percent(r.buckets[2].rate()).c_str() : "   n/a",
                r.buckets[3].total ? percent(r.buckets[3].rate()).c_str() : "   n/a");
  out += line;
  return out;
}

}  // namespace dsp
