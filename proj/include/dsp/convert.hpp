#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsp/error.hpp"
#include "dsp/linearize.hpp"
#include "dsp/text.hpp"
#include "dsp/tree.hpp"

namespace dsp {

namespace detail {

inline bool all_tokens(const Node& node) {
  for (const auto& c : node.children())
    if (!c.is_token()) return false;
  return true;
}

// Keeps only the text of leaf slots (slots whose children are all tokens).
inline Node strip_to_leaf_slots(const Node& node) {
  if (node.is(LabelKind::Slot) && all_tokens(node)) return node;
  std::vector<Node> children;
  for (const auto& c : node.children())
    if (!c.is_token()) children.push_back(strip_to_leaf_slots(c));
  return Node::labeled(node.label(), std::move(children));
}

}  // namespace detail

/// Compositional -> decoupled: every token that is not inside a leaf slot is
/// dropped, labels and the remaining token order are kept.
inline SemanticTree decouple(const SemanticTree& tree) {
  ValidationReport in = validate_compositional(tree, leaves(tree));
  if (!in.ok()) throw Error(Errc::InvalidInput, in.summary());
  SemanticTree out{detail::strip_to_leaf_slots(tree.root), TreeForm::Decoupled};
  ValidationReport check = validate_decoupled(out);
  if (!check.ok())
    throw Error(Errc::InvalidInput, "tree has no decoupled form: " + check.summary());
  return out;
}

namespace detail {

struct LeafSpan {
  NodePath path;
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline void find_leaf_slots(const Node& node, NodePath& path, std::vector<NodePath>& out) {
  if (node.is_token()) return;
  if (node.is(LabelKind::Ref))
    throw Error(Errc::NotRecoverable, "REF at " + path_string(path) +
                                          " holds context from another turn");
  if (node.is(LabelKind::Slot) && all_tokens(node)) {
    out.push_back(path);
    return;
  }
  for (std::size_t i = 0; i < node.children().size(); ++i) {
    path.push_back(i);
    find_leaf_slots(node.children()[i], path, out);
    path.pop_back();
  }
}

inline const Node& node_at(const Node& root, const NodePath& path) {
  const Node* n = &root;
  for (std::size_t i : path) n = &n->children()[i];
  return *n;
}

inline std::optional<std::size_t> find_subsequence(const Tokens& haystack, const Tokens& needle,
                                                   std::size_t from) {
  if (needle.empty() || needle.size() > haystack.size()) return std::nullopt;
  for (std::size_t i = from; i + needle.size() <= haystack.size(); ++i)
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + static_cast<std::ptrdiff_t>(i)))
      return i;
  return std::nullopt;
}

struct Rebuilt {
  Node node;
  std::size_t first;
};

inline Rebuilt rebuild(const Node& node, NodePath& path, const std::vector<LeafSpan>& spans,
                       const std::map<NodePath, std::vector<std::size_t>>& gaps,
                       const Tokens& utterance) {
  if (node.is(LabelKind::Slot) && all_tokens(node)) {
    for (const auto& s : spans)
      if (s.path == path) return {node, s.begin};
  }
  std::vector<Rebuilt> parts;
  for (std::size_t i = 0; i < node.children().size(); ++i) {
    path.push_back(i);
    parts.push_back(rebuild(node.children()[i], path, spans, gaps, utterance));
    path.pop_back();
  }
  if (auto it = gaps.find(path); it != gaps.end())
    for (std::size_t pos : it->second) parts.push_back({Node::token(utterance[pos]), pos});
  std::stable_sort(parts.begin(), parts.end(),
                   [](const Rebuilt& a, const Rebuilt& b) { return a.first < b.first; });
  std::vector<Node> children;
  std::size_t first = utterance.size();
  for (auto& p : parts) {
    first = std::min(first, p.first);
    children.push_back(std::move(p.node));
  }
  return {Node::labeled(node.label(), std::move(children)), first};
}

}  // namespace detail

/// Decoupled -> compositional. Tokens that fall between two slots are
/// attached to the deepest node dominating both neighbouring slots; leading
/// and trailing tokens attach to the root. Duplicate slot values bind to the
/// first occurrence after the previous slot; such bindings are reported in
/// `warnings` when given.
inline SemanticTree recouple(const SemanticTree& tree, const Tokens& utterance,
                             std::vector<std::string>* warnings = nullptr) {
  ValidationReport in = validate_decoupled(tree);
  if (!in.ok()) throw Error(Errc::InvalidInput, in.summary());

  std::vector<NodePath> slot_paths;
  NodePath path;
  detail::find_leaf_slots(tree.root, path, slot_paths);

  std::vector<detail::LeafSpan> spans;
  std::vector<bool> covered(utterance.size(), false);
  std::size_t cursor = 0;
  for (const auto& p : slot_paths) {
    Tokens value;
    detail::slot_value(detail::node_at(tree.root, p), value);
    auto at = detail::find_subsequence(utterance, value, cursor);
    if (!at) {
      bool anywhere = detail::find_subsequence(utterance, value, 0).has_value();
      throw Error(Errc::NotRecoverable,
                  "slot " + path_string(p) + " value '" + join(value) + "' " +
                      (anywhere ? "is out of utterance order" : "is not a contiguous span of the utterance"));
    }
    if (warnings && detail::find_subsequence(utterance, value, *at + 1))
      warnings->push_back("slot " + path_string(p) + " value '" + join(value) +
                          "' occurs more than once; bound to position " + std::to_string(*at));
    spans.push_back({p, *at, *at + value.size()});
    for (std::size_t k = *at; k < *at + value.size(); ++k) covered[k] = true;
    cursor = *at + value.size();
  }

  std::map<NodePath, std::vector<std::size_t>> gaps;
  std::size_t next_slot = 0;
  for (std::size_t pos = 0; pos < utterance.size(); ++pos) {
    while (next_slot < spans.size() && spans[next_slot].end <= pos) ++next_slot;
    if (covered[pos]) continue;
    // spans[next_slot - 1] ends before pos, spans[next_slot] starts after it.
    NodePath owner;
    if (next_slot > 0 && next_slot < spans.size()) {
      const NodePath& a = spans[next_slot - 1].path;
      const NodePath& b = spans[next_slot].path;
      std::size_t k = 0;
      while (k < a.size() && k < b.size() && a[k] == b[k]) ++k;
      owner.assign(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(k));
    }
    gaps[owner].push_back(pos);
  }

  NodePath root_path;
  detail::Rebuilt rebuilt = detail::rebuild(tree.root, root_path, spans, gaps, utterance);
  SemanticTree out{std::move(rebuilt.node), TreeForm::Compositional};
  ValidationReport check = validate_compositional(out, utterance);
  if (!check.ok()) throw Error(Errc::NotRecoverable, check.summary());
  return out;
}

struct FlatSlot {
  std::string label;
  std::size_t begin = 0;  // token offset, inclusive
  std::size_t end = 0;    // token offset, exclusive

  friend bool operator==(const FlatSlot&, const FlatSlot&) = default;
};

/// A single intent with non-overlapping token spans.
struct FlatFrame {
  std::string intent;
  std::vector<FlatSlot> slots;
};

inline SemanticTree flat_to_decoupled(const FlatFrame& frame, const Tokens& utterance) {
  std::vector<FlatSlot> slots = frame.slots;
  for (const auto& s : slots) {
    if (s.begin >= s.end || s.end > utterance.size())
      throw Error(Errc::SpanOutOfBounds, s.label + ":" + std::to_string(s.begin) + ":" +
                                             std::to_string(s.end) + " outside utterance of " +
                                             std::to_string(utterance.size()) + " tokens");
  }
  std::stable_sort(slots.begin(), slots.end(),
                   [](const FlatSlot& a, const FlatSlot& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < slots.size(); ++i)
    if (slots[i].begin < slots[i - 1].end)
      throw Error(Errc::OverlappingSpans, slots[i - 1].label + " overlaps " + slots[i].label);

  std::vector<Node> children;
  for (const auto& s : slots) {
    std::vector<Node> tokens;
    for (std::size_t k = s.begin; k < s.end; ++k) tokens.push_back(Node::token(utterance[k]));
    children.push_back(Node::labeled(slot(s.label), std::move(tokens)));
  }
  return SemanticTree{Node::labeled(intent(frame.intent), std::move(children)),
                      TreeForm::Decoupled};
}

/// Parses `intent TAB utterance TAB slot:start:end[,slot:start:end...]`.
inline std::pair<FlatFrame, Tokens> parse_flat_line(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  if (cols.size() < 2 || cols.size() > 3)
    throw Error(Errc::ParseError, "expected 'intent<TAB>utterance<TAB>slots'");
  FlatFrame frame;
  frame.intent = std::string(cols[0]);
  if (frame.intent.empty()) throw Error(Errc::ParseError, "empty intent");
  Tokens utterance = tokenize(cols[1]);
  if (cols.size() == 3) {
    std::string_view specs = cols[2];
    std::size_t pos = 0;
    while (pos < specs.size()) {
      std::size_t comma = specs.find(',', pos);
      std::string_view item = specs.substr(pos, comma == std::string_view::npos ? comma : comma - pos);
      pos = comma == std::string_view::npos ? specs.size() : comma + 1;
      if (item.empty()) continue;
      std::size_t c2 = item.rfind(':');
      std::size_t c1 = c2 == std::string_view::npos || c2 == 0 ? std::string_view::npos
                                                              : item.rfind(':', c2 - 1);
      if (c1 == std::string_view::npos || c1 == 0)
        throw Error(Errc::ParseError, "bad slot spec '" + std::string(item) + "'");
      FlatSlot s;
      s.label = std::string(item.substr(0, c1));
      try {
        s.begin = std::stoul(std::string(item.substr(c1 + 1, c2 - c1 - 1)));
        s.end = std::stoul(std::string(item.substr(c2 + 1)));
      } catch (const std::exception&) {
        throw Error(Errc::ParseError, "bad slot offsets '" + std::string(item) + "'");
      }
      frame.slots.push_back(std::move(s));
    }
  }
  return {std::move(frame), std::move(utterance)};
}

/// Dialogue-state annotation: an intent plus a set of slot constraints.
struct DialogueState {
  std::string intent;
  std::vector<std::pair<std::string, Tokens>> constraints;
};

/// One slot per constraint, siblings sorted by slot name.
inline SemanticTree state_to_tree(const DialogueState& state) {
  auto constraints = state.constraints;
  std::stable_sort(constraints.begin(), constraints.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < constraints.size(); ++i)
    if (constraints[i].first == constraints[i - 1].first)
      throw Error(Errc::DuplicateSlotName, constraints[i].first);
  std::vector<Node> children;
  for (const auto& [name, value] : constraints) {
    if (value.empty()) throw Error(Errc::InvalidInput, "slot " + name + " has an empty value");
    std::vector<Node> tokens;
    for (const auto& t : value) tokens.push_back(Node::token(t));
    children.push_back(Node::labeled(slot(name), std::move(tokens)));
  }
  return SemanticTree{Node::labeled(intent(state.intent), std::move(children)),
                      TreeForm::Decoupled};
}

}  // namespace dsp
