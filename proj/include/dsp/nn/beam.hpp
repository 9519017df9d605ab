#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsp/linearize.hpp"
#include "dsp/metrics.hpp"
#include "dsp/nn/model.hpp"

namespace dsp::nn {

/// Incremental checker for the decoupled target grammar. It accepts exactly
/// the token sequences that from_linear parses into a valid decoupled tree
/// of bounded depth, and knows the shortest way to finish any prefix.
class DecodeGrammar {
 public:
  explicit DecodeGrammar(int max_depth = 10) : max_depth_(max_depth) {}

  enum class Kind { Token, Open, Close, Separator, End };

  struct Frame {
    LabelKind kind = LabelKind::Intent;
    bool explicit_ref = false;
    int children = 0;
    int tokens = 0;
    bool labeled_child = false;
    bool saw_separator = false;
    int trigger = 0;
  };

  bool started() const { return started_; }
  bool finished() const { return started_ && stack_.empty(); }
  int open_brackets() const { return static_cast<int>(stack_.size()); }

  /// Whether `token` (of kind `kind`, label `label` for openers) may follow.
  bool allows(Kind kind, const Label* label = nullptr) const {
    if (!started_) return kind == Kind::Open && label && label->kind == LabelKind::Intent && max_depth_ >= 2;
    if (stack_.empty()) return kind == Kind::End;
    const Frame& top = stack_.back();
    const int depth = static_cast<int>(stack_.size());
    switch (top.kind) {
      case LabelKind::Intent:
        if (kind == Kind::Open) return label->kind == LabelKind::Slot && depth + 1 <= max_depth_;
        return kind == Kind::Close && top.children > 0;
      case LabelKind::Slot:
        if (top.labeled_child) return kind == Kind::Close;
        if (kind == Kind::Token) return true;
        if (kind == Kind::Close) return top.tokens > 0;
        if (kind == Kind::Open && top.children == 0) {
          if (label->kind == LabelKind::Intent) return depth + 2 <= max_depth_;
          if (label->kind == LabelKind::Ref) return depth + 1 <= max_depth_;
        }
        return false;
      case LabelKind::Ref:
        if (kind == Kind::Token) return true;
        if (kind == Kind::Separator) return top.explicit_ref && top.tokens > 0 && !top.saw_separator;
        if (kind == Kind::Close) return top.tokens > 0 && (!top.saw_separator || top.trigger > 0);
        return false;
    }
    return false;
  }

  void apply(Kind kind, const Label* label = nullptr) {
    switch (kind) {
      case Kind::Open: {
        started_ = true;
        if (!stack_.empty()) {
          ++stack_.back().children;
          stack_.back().labeled_child = true;
        }
        Frame f;
        f.kind = label->kind;
        f.explicit_ref = label->kind == LabelKind::Ref && label->name == kRefExplicit;
        stack_.push_back(f);
        break;
      }
      case Kind::Close:
        stack_.pop_back();
        break;
      case Kind::Token: {
        Frame& top = stack_.back();
        ++top.children;
        if (top.saw_separator) ++top.trigger;
        else ++top.tokens;
        break;
      }
      case Kind::Separator:
        stack_.back().saw_separator = true;
        break;
      case Kind::End:
        break;
    }
  }

  /// Fewest tokens (excluding the end marker) that close every open bracket.
  int completion_cost() const {
    if (!started_) return 5;  // [IN [SL w ] ]
    int cost = 0;
    for (std::size_t i = 0; i < stack_.size(); ++i) {
      const Frame& f = stack_[i];
      if (i + 1 < stack_.size()) {
        ++cost;
        continue;
      }
      switch (f.kind) {
        case LabelKind::Intent: cost += f.children > 0 ? 1 : 4; break;
        case LabelKind::Slot: cost += f.children > 0 ? 1 : 2; break;
        case LabelKind::Ref:
          cost += (f.tokens == 0 || (f.saw_separator && f.trigger == 0)) ? 2 : 1;
          break;
      }
    }
    return cost;
  }

 private:
  int max_depth_;
  bool started_ = false;
  std::vector<Frame> stack_;
};

struct BeamOptions {
  std::size_t k = 1;
  bool constrain = true;
  int max_depth = 0;         // 0: model config
  std::size_t max_len = 0;   // 0: 2 * source length + 32
};

struct BeamHypothesis {
  LinearSeq tokens;
  double logprob = 0;
  int open_brackets = 0;
  bool finished = false;
};

/// Beam search over the extended distribution. Copy mass for repeated source
/// tokens is merged, so each hypothesis extension is a distinct output
/// string. With `constrain`, extensions that would break the decoupled
/// grammar, exceed the depth bound, or leave too little room to close all
/// brackets within the length budget are masked. Returns finished
/// hypotheses sorted by descending log-probability; unconstrained search
/// falls back to unfinished ones when nothing ends in time. Empty only when
/// the source offers no copyable token under constraints.
template <typename Real>
std::vector<BeamHypothesis> beam_search(const PointerGenerator<Real>& model, const Tokens& source,
                                        const BeamOptions& options = {}) {
  using Kind = DecodeGrammar::Kind;
  const Vocabulary& vocab = model.vocab();
  const std::size_t k = std::max<std::size_t>(1, options.k);
  const int max_depth = options.max_depth > 0 ? options.max_depth : model.config().max_depth;
  const std::size_t max_len = options.max_len > 0 ? options.max_len : 2 * source.size() + 32;

  struct SymbolInfo {
    Kind kind;
    std::optional<Label> label;
  };
  std::vector<SymbolInfo> symbols;
  for (int j = 0; j < vocab.ontology_size(); ++j) {
    const std::string& s = vocab.symbol_name(j);
    if (j == vocab.eos()) symbols.push_back({Kind::End, std::nullopt});
    else if (s == kClose) symbols.push_back({Kind::Close, std::nullopt});
    else if (s == kSeparator) symbols.push_back({Kind::Separator, std::nullopt});
    else {
      Label label;
      if (!parse_opening_symbol(s, label)) throw Error(Errc::UnknownSymbol, s);
      symbols.push_back({Kind::Open, label});
    }
  }

  // Distinct copyable source strings and their positions.
  std::vector<std::string> copy_strings;
  std::vector<std::vector<Eigen::Index>> copy_rows;
  {
    std::map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < source.size(); ++i) {
      if (!vocab.copyable(source[i])) continue;
      auto [it, fresh] = seen.emplace(source[i], copy_strings.size());
      if (fresh) {
        copy_strings.push_back(source[i]);
        copy_rows.emplace_back();
      }
      copy_rows[it->second].push_back(vocab.ontology_size() + static_cast<Eigen::Index>(i));
    }
  }

  Graph<Real> g(model.params().size());
  auto enc = model.encode(g, source);

  struct Live {
    BeamHypothesis hyp;
    DecodeGrammar grammar;
    typename PointerGenerator<Real>::DecoderState state;
    Var prev;
  };
  struct Candidate {
    std::size_t parent;
    int symbol;       // ontology index, or -1 for a copy
    std::size_t copy; // index into copy_strings
    double logprob;
  };

  std::vector<Live> live;
  live.push_back({{}, DecodeGrammar(max_depth), enc.init, model.bos_embedding(g)});
  std::vector<BeamHypothesis> done;
  const double floor_logp = std::log(static_cast<double>(std::numeric_limits<Real>::min()));
  auto logp = [&](double p) { return p > 0 ? std::max(std::log(p), floor_logp) : floor_logp; };

  auto fits = [&](const Live& h, Kind kind, const Label* label) {
    if (!options.constrain) return true;
    if (!h.grammar.allows(kind, label)) return false;
    if (kind == Kind::End) return true;
    DecodeGrammar next = h.grammar;
    next.apply(kind, label);
    return h.hyp.tokens.size() + 1 + static_cast<std::size_t>(next.completion_cost()) <= max_len;
  };

  for (std::size_t step = 0; step <= max_len && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    std::vector<typename PointerGenerator<Real>::Step> steps;
    steps.reserve(live.size());
    for (std::size_t h = 0; h < live.size(); ++h) {
      steps.push_back(model.decode_step(g, enc, live[h].prev, live[h].state));
      const auto& pt = g.value(steps.back().p_ext);
      const double base = live[h].hyp.logprob;
      const bool must_end = !options.constrain && live[h].hyp.tokens.size() >= max_len;
      for (int j = 0; j < vocab.ontology_size(); ++j) {
        const auto& info = symbols[static_cast<std::size_t>(j)];
        if (must_end && info.kind != Kind::End) continue;
        if (!fits(live[h], info.kind, info.label ? &*info.label : nullptr)) continue;
        cands.push_back({h, j, 0, base + logp(static_cast<double>(pt(j, 0)))});
      }
      if (must_end || !fits(live[h], Kind::Token, nullptr)) continue;
      for (std::size_t c = 0; c < copy_strings.size(); ++c) {
        double p = 0;
        for (auto r : copy_rows[c]) p += static_cast<double>(pt(r, 0));
        // A copyable string that is also an ontology symbol never occurs.
        cands.push_back({h, -1, c, base + logp(p)});
      }
    }
    if (cands.empty()) break;
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.logprob > b.logprob; });

    std::vector<Live> next;
    for (const auto& c : cands) {
      if (next.size() == k) break;
      const Live& parent = live[c.parent];
      if (c.symbol >= 0 && symbols[static_cast<std::size_t>(c.symbol)].kind == Kind::End) {
        BeamHypothesis fin = parent.hyp;
        fin.logprob = c.logprob;
        fin.finished = true;
        done.push_back(std::move(fin));
        continue;
      }
      Live child{parent.hyp, parent.grammar, steps[c.parent].state, {}};
      child.hyp.logprob = c.logprob;
      if (c.symbol >= 0) {
        const auto& info = symbols[static_cast<std::size_t>(c.symbol)];
        const std::string& tok = vocab.symbol_name(c.symbol);
        child.grammar.apply(info.kind, info.label ? &*info.label : nullptr);
        child.hyp.tokens.push_back(tok);
        child.prev = model.output_embedding(g, tok);
      } else {
        const std::string& tok = copy_strings[c.copy];
        child.grammar.apply(Kind::Token);
        child.hyp.tokens.push_back(tok);
        child.prev = model.output_embedding(g, tok);
      }
      if (!options.constrain) {
        int open = child.hyp.open_brackets;
        if (c.symbol >= 0 && symbols[static_cast<std::size_t>(c.symbol)].kind == Kind::Open) ++open;
        if (c.symbol >= 0 && symbols[static_cast<std::size_t>(c.symbol)].kind == Kind::Close) open = std::max(0, open - 1);
        child.hyp.open_brackets = open;
      } else {
        child.hyp.open_brackets = child.grammar.open_brackets();
      }
      next.push_back(std::move(child));
    }
    live = std::move(next);
    if (done.size() >= k) {
      // Log-probabilities only fall as hypotheses grow.
      std::stable_sort(done.begin(), done.end(),
                       [](const BeamHypothesis& a, const BeamHypothesis& b) { return a.logprob > b.logprob; });
      double kth = done[k - 1].logprob;
      bool improvable = false;
      for (const auto& h : live) improvable = improvable || h.hyp.logprob > kth;
      if (!improvable) break;
    }
  }

  if (done.empty() && !options.constrain)
    for (auto& h : live) done.push_back(std::move(h.hyp));
  std::stable_sort(done.begin(), done.end(),
                   [](const BeamHypothesis& a, const BeamHypothesis& b) { return a.logprob > b.logprob; });
  if (done.size() > k) done.resize(k);
  return done;
}

/// Parses a hypothesis; empty when it is malformed or invalid.
inline Prediction to_prediction(const LinearSeq& tokens) {
  try {
    SemanticTree t = from_linear(tokens, {TreeForm::Decoupled});
    if (!validate(t).ok()) return std::nullopt;
    return t;
  } catch (const Error&) {
    return std::nullopt;
  }
}

/// Top-k parses for one source, best first.
template <typename Real>
std::vector<Prediction> predict_beam(const PointerGenerator<Real>& model, const Tokens& source,
                                     std::size_t k, bool constrain = true) {
  std::vector<Prediction> out;
  for (const auto& h : beam_search(model, source, {k, constrain, 0, 0})) out.push_back(to_prediction(h.tokens));
  if (out.empty()) out.push_back(std::nullopt);
  return out;
}

}  // namespace dsp::nn
