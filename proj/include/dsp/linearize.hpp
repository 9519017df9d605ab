#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "dsp/error.hpp"
#include "dsp/text.hpp"
#include "dsp/tree.hpp"

namespace dsp {

/// Bracketed target-side serialization: `[IN:NAME`, `[SL:NAME`,
/// `[REF:EXPLICIT`, `[REF:IMPLICIT`, `]`, `;` and utterance tokens.
using LinearSeq = Tokens;

inline constexpr std::string_view kClose = "]";
inline constexpr std::string_view kSeparator = ";";

inline std::string opening_symbol(const Label& label) {
  return "[" + std::string(kind_prefix(label.kind)) + label.name;
}

inline bool is_opening_symbol(std::string_view token) {
  return token.size() > 1 && token.front() == '[';
}

/// Parses `[IN:NAME` style symbols; returns false for anything else.
inline bool parse_opening_symbol(std::string_view token, Label& out) {
  if (!is_opening_symbol(token)) return false;
  std::string_view body = token.substr(1);
  for (LabelKind kind : {LabelKind::Intent, LabelKind::Slot, LabelKind::Ref}) {
    std::string_view prefix = kind_prefix(kind);
    if (body.substr(0, prefix.size()) == prefix && body.size() > prefix.size()) {
      out = {kind, std::string(body.substr(prefix.size()))};
      return true;
    }
  }
  return false;
}

namespace detail {

inline void emit(const Node& node, LinearSeq& out) {
  if (node.is_token()) {
    out.push_back(node.is_separator() ? std::string(kSeparator) : node.text());
    return;
  }
  out.push_back(opening_symbol(node.label()));
  for (const auto& c : node.children()) emit(c, out);
  out.emplace_back(kClose);
}

}  // namespace detail

/// Depth-first emission without validation. Used for canonical keys, where
/// collapsed labels are deliberately outside the ontology.
inline LinearSeq render(const SemanticTree& tree) {
  LinearSeq out;
  detail::emit(tree.root, out);
  return out;
}

inline LinearSeq to_linear(const SemanticTree& tree, const ValidateOptions& options = {}) {
  ValidationReport report = validate(tree, options);
  if (!report.ok()) throw Error(Errc::InvalidTree, report.summary());
  return render(tree);
}

struct FromLinearOptions {
  TreeForm form = TreeForm::Decoupled;
  bool allow_leaf_intent = false;
};

/// Inverse of to_linear. Only bracket structure is checked here; callers
/// validate the resulting tree for form-specific rules.
inline SemanticTree from_linear(const LinearSeq& seq, const FromLinearOptions& options = {}) {
  struct Frame {
    Label label;
    std::vector<Node> children;
    bool seen_separator = false;
  };
  std::vector<Frame> stack;
  std::optional<Node> root;
  auto where = [](std::size_t i) { return " at position " + std::to_string(i); };

  if (seq.empty()) throw Error(Errc::EmptyNode, "empty sequence has no root" + where(0));

  for (std::size_t i = 0; i < seq.size(); ++i) {
    const std::string& tok = seq[i];
    if (tok == kClose) {
      if (stack.empty()) throw Error(Errc::UnbalancedBrackets, "unmatched ']'" + where(i));
      Frame frame = std::move(stack.back());
      stack.pop_back();
      if (frame.children.empty() &&
          !(frame.label.kind == LabelKind::Intent && options.allow_leaf_intent))
        throw Error(Errc::EmptyNode, "'" + opening_symbol(frame.label) + "' closed empty" + where(i));
      Node node = Node::labeled(std::move(frame.label), std::move(frame.children));
      if (stack.empty())
        root = std::move(node);
      else
        stack.back().children.push_back(std::move(node));
      continue;
    }
    if (is_opening_symbol(tok)) {
      Label label;
      if (!parse_opening_symbol(tok, label))
        throw Error(Errc::UnknownSymbol, "unknown symbol '" + tok + "'" + where(i));
      if (label.kind == LabelKind::Ref && label.name != kRefExplicit && label.name != kRefImplicit)
        throw Error(Errc::UnknownSymbol, "unknown ref kind '" + tok + "'" + where(i));
      if (stack.empty() && root)
        throw Error(Errc::TrailingTokens, "'" + tok + "' after the root closed" + where(i));
      stack.push_back({std::move(label), {}, false});
      continue;
    }
    if (stack.empty()) {
      if (root) throw Error(Errc::TrailingTokens, "'" + tok + "' after the root closed" + where(i));
      throw Error(Errc::TokenOutsideNode, "'" + tok + "' outside any node" + where(i));
    }
    Frame& top = stack.back();
    if (tok == kSeparator) {
      top.children.push_back(Node::separator());
      top.seen_separator = true;
    } else if (top.label.kind == LabelKind::Ref && !top.seen_separator) {
      top.children.push_back(Node::token(tok, TokenSource::PriorTurn));
    } else {
      top.children.push_back(Node::token(tok, TokenSource::CurrentTurn));
    }
  }
  if (!stack.empty())
    throw Error(Errc::UnbalancedBrackets,
                std::to_string(stack.size()) + " unclosed bracket(s)" + where(seq.size()));
  return SemanticTree{std::move(*root), options.form};
}

inline SemanticTree from_linear(std::string_view text, const FromLinearOptions& options = {}) {
  return from_linear(split_ws(text), options);
}

inline std::string to_linear_string(const SemanticTree& tree, const ValidateOptions& options = {}) {
  return join(to_linear(tree, options));
}

struct CanonPolicy {
  bool collapse_ref_kinds = false;
  bool strip_root_intent = false;
  bool sort_sibling_slots = false;
};

/// Unified ref label used once EXPLICIT/IMPLICIT are collapsed.
inline constexpr std::string_view kCollapsedRef = "ANY";
inline constexpr std::string_view kRootPlaceholder = "__ROOT__";

namespace detail {

inline Tokens plain_value(const Node& node) {
  Tokens value;
  slot_value(node, value);
  return value;
}

inline Node canonical_node(const Node& node, const CanonPolicy& policy) {
  if (node.is_token()) return node;
  const Label& label = node.label();
  std::vector<Node> children;
  children.reserve(node.children().size());
  if (label.kind == LabelKind::Ref && policy.collapse_ref_kinds) {
    for (const auto& c : node.children()) {
      if (c.is_separator()) break;
      children.push_back(c);
    }
    return Node::labeled(ref(std::string(kCollapsedRef)), std::move(children));
  }
  for (const auto& c : node.children()) children.push_back(canonical_node(c, policy));
  if (label.kind == LabelKind::Intent && policy.sort_sibling_slots) {
    // Slots are permuted among the positions slots occupy; tokens stay put.
    std::vector<std::size_t> positions;
    std::vector<Node> slots;
    for (std::size_t i = 0; i < children.size(); ++i) {
      if (children[i].is(LabelKind::Slot)) {
        positions.push_back(i);
        slots.push_back(children[i]);
      }
    }
    std::stable_sort(slots.begin(), slots.end(), [](const Node& a, const Node& b) {
      if (a.label().name != b.label().name) return a.label().name < b.label().name;
      Tokens va = plain_value(a), vb = plain_value(b);
      if (va != vb) return va < vb;
      LinearSeq ra, rb;
      emit(a, ra);
      emit(b, rb);
      return ra < rb;
    });
    for (std::size_t k = 0; k < positions.size(); ++k) children[positions[k]] = std::move(slots[k]);
  }
  return Node::labeled(label, std::move(children));
}

}  // namespace detail

inline SemanticTree canonicalize(const SemanticTree& tree, const CanonPolicy& policy) {
  Node root = detail::canonical_node(tree.root, policy);
  if (policy.strip_root_intent && root.is(LabelKind::Intent))
    root = Node::labeled(intent(std::string(kRootPlaceholder)), root.children());
  return SemanticTree{std::move(root), tree.form};
}

/// Exact-match key: canonical tree rendered as single-space-joined tokens.
inline std::string canonical_string(const SemanticTree& tree, const CanonPolicy& policy) {
  return join(render(canonicalize(tree, policy)));
}

}  // namespace dsp
