#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dsp/error.hpp"
#include "dsp/linearize.hpp"
#include "dsp/text.hpp"
#include "dsp/tree.hpp"

namespace dsp {

enum class Role { User, Assistant };

struct Turn {
  Role role = Role::User;
  Tokens tokens;
  std::optional<SemanticTree> gold;  // user turns only

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Session {
  std::string id;
  std::vector<Turn> turns;

  friend bool operator==(const Session&, const Session&) = default;

  std::vector<std::size_t> user_turn_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < turns.size(); ++i)
      if (turns[i].role == Role::User) out.push_back(i);
    return out;
  }
};

/// Checks the structural invariants of a session; throws InvalidInput.
inline void check_session(const Session& session) {
  if (session.turns.empty()) throw Error(Errc::InvalidInput, "session '" + session.id + "' has no turns");
  bool any_user = false;
  for (std::size_t i = 0; i < session.turns.size(); ++i) {
    const Turn& t = session.turns[i];
    if (t.role == Role::User) any_user = true;
    if (t.role == Role::Assistant && t.gold)
      throw Error(Errc::InvalidInput,
                  "session '" + session.id + "' turn " + std::to_string(i) + ": assistant turn carries a parse");
  }
  if (!any_user) throw Error(Errc::InvalidInput, "session '" + session.id + "' has no user turn");
}

/// Where each encoder position came from. `turn` is -1 for separators.
struct TokenOrigin {
  int turn = -1;
  int offset = -1;

  friend bool operator==(const TokenOrigin&, const TokenOrigin&) = default;
};

struct EncoderInput {
  Tokens tokens;
  std::vector<TokenOrigin> origins;
};

struct EncoderInputOptions {
  std::string separator = std::string(kTurnSeparator);
  bool include_assistant = true;
};

/// Concatenates turns 0..upto with one separator between consecutive turns.
inline EncoderInput build_encoder_input(const Session& session, std::size_t upto,
                                        const EncoderInputOptions& options = {}) {
  if (upto >= session.turns.size())
    throw Error(Errc::IndexOutOfRange,
                "turn " + std::to_string(upto) + " of " + std::to_string(session.turns.size()));
  if (session.turns[upto].role != Role::User)
    throw Error(Errc::InvalidInput, "turn " + std::to_string(upto) + " is not a user turn");
  EncoderInput out;
  bool first = true;
  for (std::size_t i = 0; i <= upto; ++i) {
    const Turn& turn = session.turns[i];
    if (turn.role == Role::Assistant && !options.include_assistant) continue;
    if (!first) {
      out.tokens.push_back(options.separator);
      out.origins.push_back({-1, -1});
    }
    first = false;
    for (std::size_t k = 0; k < turn.tokens.size(); ++k) {
      out.tokens.push_back(turn.tokens[k]);
      out.origins.push_back({static_cast<int>(i), static_cast<int>(k)});
    }
  }
  return out;
}

struct RefMatch {
  NodePath path;          // REF node in the input tree
  std::size_t turn = 0;   // earliest prior tree holding the antecedent
};

struct ResolvedTree {
  SemanticTree tree;
  std::vector<RefMatch> matches;
};

namespace detail {

inline Node resolve_node(const Node& node, NodePath& path,
                         const std::vector<std::vector<SlotEntry>>& prior_slots,
                         std::vector<RefMatch>& matches) {
  if (node.is_token()) return node;
  std::vector<Node> children;
  for (std::size_t i = 0; i < node.children().size(); ++i) {
    const Node& c = node.children()[i];
    path.push_back(i);
    if (c.is(LabelKind::Ref)) {
      Tokens antecedent;
      for (const auto& t : c.children()) {
        if (t.is_separator()) break;
        antecedent.push_back(t.text());
        children.push_back(Node::token(t.text(), TokenSource::PriorTurn));
      }
      Tokens key = to_lower(antecedent);
      std::optional<std::size_t> found;
      for (std::size_t turn = 0; turn < prior_slots.size() && !found; ++turn)
        for (const auto& s : prior_slots[turn])
          if (to_lower(s.value) == key) {
            found = turn;
            break;
          }
      if (!found)
        throw Error(Errc::UnresolvedRef, "REF at " + path_string(path) + " ('" + join(antecedent) +
                                             "') matches no prior slot value");
      matches.push_back({path, *found});
    } else {
      children.push_back(resolve_node(c, path, prior_slots, matches));
    }
    path.pop_back();
  }
  return Node::labeled(node.label(), std::move(children));
}

}  // namespace detail

/// Replaces every REF by its antecedent tokens, giving the informationally
/// complete parse, and records which prior turn first held each antecedent.
inline ResolvedTree resolve_refs(const SemanticTree& tree, const std::vector<SemanticTree>& prior_gold) {
  ValidationReport report = validate_decoupled(tree);
  if (!report.ok()) throw Error(Errc::InvalidTree, report.summary());
  std::vector<std::vector<SlotEntry>> prior_slots;
  for (const auto& t : prior_gold) prior_slots.push_back(collect_slots(t));
  ResolvedTree out;
  NodePath path;
  out.tree = SemanticTree{detail::resolve_node(tree.root, path, prior_slots, out.matches), tree.form};
  return out;
}

struct CarryoverFact {
  std::size_t turn_index = 0;  // in the chosen turn counting
  std::size_t user_turn = 0;   // ordinal among annotated user turns
  std::string label;
  Tokens value;
  std::size_t distance = 0;

  friend bool operator==(const CarryoverFact&, const CarryoverFact&) = default;
};

inline std::pair<std::string, Tokens> carryover_key(const std::string& label, const Tokens& value) {
  return {label, to_lower(value)};
}

/// One fact per slot instance; distance counts back to the first turn in
/// which the same (label, value) appeared. `turn_numbers[i]` is the turn
/// index assigned to trees[i]; when empty, list positions are used.
inline std::vector<CarryoverFact> extract_carryover(const std::vector<SemanticTree>& trees,
                                                    const std::vector<std::size_t>& turn_numbers = {}) {
  if (!turn_numbers.empty() && turn_numbers.size() != trees.size())
    throw Error(Errc::LengthMismatch, "turn numbers do not align with trees");
  std::map<std::pair<std::string, Tokens>, std::size_t> first_seen;
  std::vector<CarryoverFact> facts;
  for (std::size_t u = 0; u < trees.size(); ++u) {
    std::size_t turn = turn_numbers.empty() ? u : turn_numbers[u];
    for (const auto& s : collect_slots(trees[u])) {
      auto key = carryover_key(s.label, s.value);
      auto [it, inserted] = first_seen.emplace(key, turn);
      facts.push_back({turn, u, s.label, s.value, turn - it->second});
    }
  }
  return facts;
}

struct CarryoverOptions {
  /// Count assistant turns when measuring distance (default: user turns only).
  bool count_all_turns = false;
};

inline std::vector<CarryoverFact> extract_carryover(const Session& session,
                                                    const CarryoverOptions& options = {}) {
  std::vector<SemanticTree> trees;
  std::vector<std::size_t> numbers;
  std::size_t user_ordinal = 0;
  for (std::size_t i = 0; i < session.turns.size(); ++i) {
    const Turn& t = session.turns[i];
    if (t.role != Role::User) continue;
    if (!t.gold)
      throw Error(Errc::AlignmentError,
                  "session '" + session.id + "' user turn " + std::to_string(i) + " has no parse");
    trees.push_back(*t.gold);
    numbers.push_back(options.count_all_turns ? i : user_ordinal);
    ++user_ordinal;
  }
  return extract_carryover(trees, numbers);
}

// --- JSON-lines session format -------------------------------------------

inline std::string role_name(Role role) { return role == Role::User ? "user" : "assistant"; }

inline Role parse_role(const std::string& name) {
  if (name == "user") return Role::User;
  if (name == "assistant" || name == "system") return Role::Assistant;
  throw Error(Errc::ParseError, "unknown role '" + name + "'");
}

inline nlohmann::ordered_json session_to_json(const Session& session) {
  nlohmann::ordered_json j;
  j["id"] = session.id;
  j["turns"] = nlohmann::ordered_json::array();
  for (const auto& t : session.turns) {
    nlohmann::ordered_json turn;
    turn["role"] = role_name(t.role);
    turn["text"] = join(t.tokens);
    if (t.gold) turn["parse"] = join(render(*t.gold));
    j["turns"].push_back(std::move(turn));
  }
  return j;
}

/// Parses one session line. Parses are read as decoupled trees and must
/// validate.
inline Session session_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("turns") || !j["turns"].is_array())
    throw Error(Errc::ParseError, "session must be an object with a 'turns' array");
  Session s;
  if (j.contains("id")) s.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
  for (const auto& jt : j["turns"]) {
    Turn t;
    t.role = parse_role(jt.value("role", std::string("user")));
    t.tokens = tokenize(jt.value("text", std::string()));
    if (jt.contains("parse") && !jt["parse"].is_null()) {
      SemanticTree tree = from_linear(jt["parse"].get<std::string>());
      ValidationReport report = validate_decoupled(tree);
      if (!report.ok()) throw Error(Errc::ValidationError, report.summary());
      t.gold = std::move(tree);
    }
    s.turns.push_back(std::move(t));
  }
  check_session(s);
  return s;
}

inline std::string session_to_line(const Session& session) { return session_to_json(session).dump(); }

inline Session session_from_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
  return session_from_json(j);
}

}  // namespace dsp
