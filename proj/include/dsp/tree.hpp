#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsp/text.hpp"

namespace dsp {

enum class LabelKind { Intent, Slot, Ref };

struct Label {
  LabelKind kind = LabelKind::Intent;
  std::string name;

  friend bool operator==(const Label&, const Label&) = default;
};

inline constexpr std::string_view kRefExplicit = "EXPLICIT";
inline constexpr std::string_view kRefImplicit = "IMPLICIT";

inline Label intent(std::string name) { return {LabelKind::Intent, std::move(name)}; }
inline Label slot(std::string name) { return {LabelKind::Slot, std::move(name)}; }
inline Label ref(std::string name) { return {LabelKind::Ref, std::move(name)}; }

inline std::string_view kind_prefix(LabelKind kind) {
  switch (kind) {
    case LabelKind::Intent: return "IN:";
    case LabelKind::Slot: return "SL:";
    case LabelKind::Ref: return "REF:";
  }
  return "";
}

enum class TokenSource { CurrentTurn, PriorTurn, TriggerSeparator };

/// A labeled node (intent, slot, ref) with ordered children, or an utterance
/// token leaf. Immutable once built.
class Node {
 public:
  static Node labeled(Label label, std::vector<Node> children) {
    Node n;
    n.label_ = std::move(label);
    n.children_ = std::move(children);
    return n;
  }

  static Node token(std::string text, TokenSource source = TokenSource::CurrentTurn) {
    Node n;
    n.is_token_ = true;
    n.text_ = std::move(text);
    n.source_ = source;
    return n;
  }

  static Node separator() { return token(";", TokenSource::TriggerSeparator); }

  bool is_token() const noexcept { return is_token_; }
  bool is_separator() const noexcept {
    return is_token_ && source_ == TokenSource::TriggerSeparator;
  }
  bool is(LabelKind kind) const noexcept { return !is_token_ && label_.kind == kind; }

  const Label& label() const {
    if (is_token_) throw std::logic_error("token node has no label");
    return label_;
  }
  const std::string& text() const {
    if (!is_token_) throw std::logic_error("labeled node has no token text");
    return text_;
  }
  TokenSource source() const noexcept { return source_; }
  const std::vector<Node>& children() const noexcept { return children_; }

  friend bool operator==(const Node& a, const Node& b) {
    if (a.is_token_ != b.is_token_) return false;
    if (a.is_token_) return a.text_ == b.text_ && a.source_ == b.source_;
    return a.label_ == b.label_ && a.children_ == b.children_;
  }

 private:
  bool is_token_ = false;
  Label label_;
  std::string text_;
  TokenSource source_ = TokenSource::CurrentTurn;
  std::vector<Node> children_;
};

enum class TreeForm { Compositional, Decoupled };

struct SemanticTree {
  Node root;
  TreeForm form = TreeForm::Decoupled;

  friend bool operator==(const SemanticTree&, const SemanticTree&) = default;
};

/// Child-index list from the root.
using NodePath = std::vector<std::size_t>;

inline std::string path_string(const NodePath& path) {
  std::string out = "/";
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i) out += '/';
    out += std::to_string(path[i]);
  }
  return out;
}

struct Violation {
  NodePath path;
  std::string rule;
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }
  bool has(std::string_view rule) const {
    for (const auto& v : violations)
      if (v.rule == rule) return true;
    return false;
  }
  std::string summary() const {
    std::string out;
    for (const auto& v : violations) {
      if (!out.empty()) out += "; ";
      out += path_string(v.path) + " " + v.rule + ": " + v.message;
    }
    return out;
  }
};

struct ValidateOptions {
  /// Intent nodes may have no children (flat/state conversions of slotless
  /// frames).
  bool allow_leaf_intent = false;
};

namespace detail {

inline void check_label(const Node& node, const NodePath& path, ValidationReport& report) {
  const Label& label = node.label();
  if (label.name.empty())
    report.violations.push_back({path, "empty-name", "label name is empty"});
  if (label.kind == LabelKind::Ref && label.name != kRefExplicit && label.name != kRefImplicit)
    report.violations.push_back(
        {path, "ref-name-invalid", "REF label must be EXPLICIT or IMPLICIT, got " + label.name});
}

inline void collect_leaves(const Node& node, Tokens& out) {
  if (node.is_token()) {
    out.push_back(node.text());
    return;
  }
  for (const auto& child : node.children()) collect_leaves(child, out);
}

inline void validate_compositional_node(const Node& node, NodePath& path,
                                        const ValidateOptions& options,
                                        ValidationReport& report) {
  if (node.is_token()) {
    if (node.source() != TokenSource::CurrentTurn)
      report.violations.push_back(
          {path, "separator-misplaced", "compositional trees hold utterance tokens only"});
    return;
  }
  check_label(node, path, report);
  const Label& label = node.label();
  const auto& children = node.children();
  if (children.empty() && !(label.kind == LabelKind::Intent && options.allow_leaf_intent))
    report.violations.push_back({path, "empty-node", "labeled node has no children"});

  switch (label.kind) {
    case LabelKind::Ref:
      report.violations.push_back(
          {path, "ref-in-compositional", "REF labels exist only in the decoupled form"});
      break;
    case LabelKind::Intent:
      for (std::size_t i = 0; i < children.size(); ++i) {
        if (children[i].is(LabelKind::Intent)) {
          path.push_back(i);
          report.violations.push_back(
              {path, "intent-under-intent", "intent children must be tokens or slots"});
          path.pop_back();
        }
      }
      break;
    case LabelKind::Slot: {
      std::size_t intents = 0;
      for (const auto& c : children) intents += c.is(LabelKind::Intent) ? 1 : 0;
      if (intents > 1)
        report.violations.push_back(
            {path, "slot-multiple-intents", "a slot may hold at most one nested intent"});
      break;
    }
  }
  for (std::size_t i = 0; i < children.size(); ++i) {
    path.push_back(i);
    validate_compositional_node(children[i], path, options, report);
    path.pop_back();
  }
}

inline void validate_decoupled_node(const Node& node, NodePath& path,
                                    const ValidateOptions& options,
                                    ValidationReport& report) {
  // Token placement is checked by the parent.
  if (node.is_token()) return;
  check_label(node, path, report);
  const Label& label = node.label();
  const auto& children = node.children();
  if (children.empty() && !(label.kind == LabelKind::Intent && options.allow_leaf_intent))
    report.violations.push_back({path, "empty-node", "labeled node has no children"});

  auto at = [&](std::size_t i) {
    NodePath p = path;
    p.push_back(i);
    return p;
  };

  switch (label.kind) {
    case LabelKind::Intent:
      for (std::size_t i = 0; i < children.size(); ++i) {
        const Node& c = children[i];
        if (c.is_token())
          report.violations.push_back(
              {at(i), "token-outside-slot", "token outside slot: '" + c.text() + "'"});
        else if (!c.is(LabelKind::Slot))
          report.violations.push_back(
              {at(i), "intent-child-not-slot", "intent children must be slots"});
      }
      break;
    case LabelKind::Slot: {
      std::size_t tokens = 0, intents = 0, refs = 0;
      for (std::size_t i = 0; i < children.size(); ++i) {
        const Node& c = children[i];
        if (c.is_token()) {
          ++tokens;
          if (c.is_separator())
            report.violations.push_back(
                {at(i), "separator-misplaced", "';' separator only allowed inside REF"});
        } else if (c.is(LabelKind::Intent)) {
          ++intents;
        } else if (c.is(LabelKind::Ref)) {
          ++refs;
        } else {
          report.violations.push_back(
              {at(i), "slot-under-slot", "slot children must be tokens, one intent or one ref"});
        }
      }
      if (intents > 1)
        report.violations.push_back(
            {path, "slot-multiple-intents", "a slot may hold at most one nested intent"});
      if (refs > 1)
        report.violations.push_back({path, "slot-multiple-refs", "a slot may hold one ref"});
      if ((intents + refs > 0) && (tokens > 0 || intents + refs > 1))
        report.violations.push_back(
            {path, "slot-mixed-children",
             "a slot holds tokens only, or exactly one intent, or exactly one ref"});
      break;
    }
    case LabelKind::Ref: {
      bool seen_sep = false;
      std::size_t antecedent = 0, trigger = 0;
      for (std::size_t i = 0; i < children.size(); ++i) {
        const Node& c = children[i];
        if (!c.is_token()) {
          report.violations.push_back(
              {at(i), "ref-child-invalid", "REF children must be tokens"});
          continue;
        }
        if (c.is_separator()) {
          if (seen_sep)
            report.violations.push_back(
                {at(i), "separator-misplaced", "REF holds at most one ';' separator"});
          if (label.name == kRefImplicit)
            report.violations.push_back(
                {at(i), "implicit-ref-trigger", "REF:IMPLICIT cannot carry a trigger"});
          seen_sep = true;
        } else if (seen_sep) {
          ++trigger;
        } else {
          ++antecedent;
        }
      }
      if (antecedent == 0 && !children.empty())
        report.violations.push_back(
            {path, "ref-missing-antecedent", "REF needs antecedent tokens before ';'"});
      if (seen_sep && trigger == 0)
        report.violations.push_back(
            {path, "ref-missing-trigger", "';' must be followed by trigger tokens"});
      break;
    }
  }
  for (std::size_t i = 0; i < children.size(); ++i) {
    path.push_back(i);
    validate_decoupled_node(children[i], path, options, report);
    path.pop_back();
  }
}

inline void check_root(const SemanticTree& tree, ValidationReport& report) {
  if (!tree.root.is(LabelKind::Intent))
    report.violations.push_back({{}, "root-not-intent", "root must be an intent"});
}

}  // namespace detail

/// In-order token leaves of the tree (separators included).
inline Tokens leaves(const SemanticTree& tree) {
  Tokens out;
  detail::collect_leaves(tree.root, out);
  return out;
}

inline ValidationReport validate_compositional(const SemanticTree& tree, const Tokens& utterance,
                                               const ValidateOptions& options = {}) {
  ValidationReport report;
  if (tree.form != TreeForm::Compositional)
    report.violations.push_back({{}, "form-mismatch", "tree is not in compositional form"});
  detail::check_root(tree, report);
  NodePath path;
  detail::validate_compositional_node(tree.root, path, options, report);
  Tokens actual = leaves(tree);
  if (actual != utterance)
    report.violations.push_back(
        {{}, "leaf-utterance-mismatch",
         "leaf/utterance mismatch: leaves '" + join(actual) + "' vs utterance '" +
             join(utterance) + "'"});
  return report;
}

inline ValidationReport validate_decoupled(const SemanticTree& tree,
                                           const ValidateOptions& options = {}) {
  ValidationReport report;
  if (tree.form != TreeForm::Decoupled)
    report.violations.push_back({{}, "form-mismatch", "tree is not in decoupled form"});
  detail::check_root(tree, report);
  NodePath path;
  detail::validate_decoupled_node(tree.root, path, options, report);
  return report;
}

/// Validates against whichever form the tree declares. Compositional trees
/// are checked against their own leaves.
inline ValidationReport validate(const SemanticTree& tree, const ValidateOptions& options = {}) {
  if (tree.form == TreeForm::Compositional)
    return validate_compositional(tree, leaves(tree), options);
  return validate_decoupled(tree, options);
}

struct SlotEntry {
  NodePath path;
  std::string label;
  Tokens value;

  friend bool operator==(const SlotEntry&, const SlotEntry&) = default;
};

namespace detail {

inline void slot_value(const Node& node, Tokens& out) {
  if (node.is_token()) {
    out.push_back(node.text());
    return;
  }
  for (const auto& c : node.children()) {
    // Trigger segment of an explicit ref: stop at the separator.
    if (c.is_separator()) break;
    slot_value(c, out);
  }
}

inline void collect_slots(const Node& node, NodePath& path, std::vector<SlotEntry>& out) {
  if (node.is_token()) return;
  if (node.is(LabelKind::Slot)) {
    SlotEntry entry{path, node.label().name, {}};
    slot_value(node, entry.value);
    out.push_back(std::move(entry));
  }
  for (std::size_t i = 0; i < node.children().size(); ++i) {
    path.push_back(i);
    collect_slots(node.children()[i], path, out);
    path.pop_back();
  }
}

}  // namespace detail

/// Every slot in depth-first pre-order with its token value; trigger tokens
/// after a REF separator are excluded.
inline std::vector<SlotEntry> collect_slots(const SemanticTree& tree) {
  std::vector<SlotEntry> out;
  NodePath path;
  detail::collect_slots(tree.root, path, out);
  return out;
}

/// Number of intent nodes in the tree.
inline std::size_t count_intents(const Node& node) {
  if (node.is_token()) return 0;
  std::size_t n = node.is(LabelKind::Intent) ? 1 : 0;
  for (const auto& c : node.children()) n += count_intents(c);
  return n;
}

inline std::size_t count_refs(const Node& node) {
  if (node.is_token()) return 0;
  std::size_t n = node.is(LabelKind::Ref) ? 1 : 0;
  for (const auto& c : node.children()) n += count_refs(c);
  return n;
}

inline std::size_t depth(const Node& node) {
  if (node.is_token()) return 0;
  std::size_t d = 0;
  for (const auto& c : node.children()) d = std::max(d, depth(c));
  return d + 1;
}

}  // namespace dsp
