#pragma once

#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsp/convert.hpp"
#include "dsp/error.hpp"
#include "dsp/linearize.hpp"
#include "dsp/nn/model.hpp"
#include "dsp/session.hpp"
#include "dsp/text.hpp"
#include "dsp/tree.hpp"

namespace dsp::data {

enum class Format { TopTsv, SessionJsonl, FlatTsv, DialogueStateJsonl };
enum class Split { Train, Valid, Test };

struct DatasetSpec {
  Format format = Format::SessionJsonl;
  std::string path;
  Split split = Split::Train;
};

inline std::string format_name(Format f) {
  switch (f) {
    case Format::TopTsv: return "top";
    case Format::SessionJsonl: return "session";
    case Format::FlatTsv: return "flat";
    case Format::DialogueStateJsonl: return "state";
  }
  return "?";
}

inline Format parse_format(const std::string& name) {
  if (name == "top" || name == "compositional") return Format::TopTsv;
  if (name == "session" || name == "decoupled") return Format::SessionJsonl;
  if (name == "flat") return Format::FlatTsv;
  if (name == "state") return Format::DialogueStateJsonl;
  throw Error(Errc::ConfigError, "unknown format '" + name + "'");
}

struct DatasetStats {
  std::size_t size = 0;  // annotated user turns
  std::size_t sessions = 0;
  std::size_t ref_tags = 0;
  double avg_session_length = 0;    // turns per session, all roles
  double avg_utterance_length = 0;  // tokens per annotated turn
  double avg_intents = 0;           // intents per annotated tree
};

struct Dataset {
  std::vector<Session> sessions;
  DatasetStats stats;
  /// Lines that were readable but could not be turned into a valid
  /// decoupled tree (for example slot-free intents in compositional data).
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

inline DatasetStats compute_stats(const std::vector<Session>& sessions) {
  DatasetStats s;
  s.sessions = sessions.size();
  std::size_t turns = 0, tokens = 0, intents = 0;
  for (const auto& session : sessions) {
    turns += session.turns.size();
    for (const auto& t : session.turns) {
      if (t.role != Role::User || !t.gold) continue;
      ++s.size;
      tokens += t.tokens.size();
      s.ref_tags += count_refs(t.gold->root);
      intents += count_intents(t.gold->root);
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  s.avg_session_length = ratio(turns, s.sessions);
  s.avg_utterance_length = ratio(tokens, s.size);
  s.avg_intents = ratio(intents, s.size);
  return s;
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::stringstream ss(line);
  std::string col;
  while (std::getline(ss, col, '\t')) cols.push_back(col);
  if (!line.empty() && line.back() == '\t') cols.emplace_back();
  return cols;
}

inline bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

inline Session single_turn(std::string id, Tokens tokens, SemanticTree tree) {
  Session s;
  s.id = std::move(id);
  s.turns.push_back({Role::User, std::move(tokens), std::move(tree)});
  return s;
}

// `utterance TAB tree` or `raw TAB tokenized TAB tree`. A tree whose leaves
// spell the utterance is compositional and gets decoupled; anything else
// must already be a valid decoupled tree.
inline Session read_top_line(const std::string& line, const std::string& id) {
  auto cols = split_tabs(line);
  if (cols.size() < 2 || cols.size() > 3) throw Error(Errc::ParseError, "expected 2 or 3 tab-separated columns");
  const std::string& tree_text = cols.back();
  Tokens utterance = cols.size() == 3 ? split_ws(cols[1]) : tokenize(cols[0]);
  SemanticTree tree = from_linear(tree_text, {TreeForm::Compositional});
  Tokens tree_leaves = leaves(tree);
  if (cols.size() == 2 && tree_leaves != utterance && tree_leaves == split_ws(cols[0])) utterance = tree_leaves;
  if (tree_leaves == utterance) return single_turn(id, utterance, decouple(tree));
  SemanticTree dec = from_linear(tree_text, {TreeForm::Decoupled});
  ValidationReport report = validate_decoupled(dec);
  if (!report.ok()) throw Error(Errc::ValidationError, report.summary());
  return single_turn(id, std::move(utterance), std::move(dec));
}

inline Session read_flat_line(const std::string& line, const std::string& id) {
  auto [frame, utterance] = parse_flat_line(line);
  SemanticTree tree = flat_to_decoupled(frame, utterance);
  ValidationReport report = validate_decoupled(tree);
  if (!report.ok()) throw Error(Errc::ValidationError, report.summary());
  return single_turn(id, std::move(utterance), std::move(tree));
}

// {"id", "turns": [{"role", "text", "state": {"intent", "constraints": [[slot, value], ...]}}]}
inline Session read_state_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
  if (!j.is_object() || !j.contains("turns") || !j["turns"].is_array())
    throw Error(Errc::ParseError, "session must be an object with a 'turns' array");
  Session s;
  if (j.contains("id")) s.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
  for (const auto& jt : j["turns"]) {
    Turn t;
    t.role = parse_role(jt.value("role", std::string("user")));
    t.tokens = tokenize(jt.value("text", std::string()));
    if (jt.contains("state") && !jt["state"].is_null()) {
      DialogueState state;
      state.intent = jt["state"].at("intent").get<std::string>();
      for (const auto& c : jt["state"].value("constraints", nlohmann::json::array()))
        state.constraints.emplace_back(c.at(0).get<std::string>(), tokenize(c.at(1).get<std::string>()));
      SemanticTree tree = state_to_tree(state);
      ValidationReport report = validate_decoupled(tree);
      if (!report.ok()) throw Error(Errc::ValidationError, report.summary());
      t.gold = std::move(tree);
    }
    s.turns.push_back(std::move(t));
  }
  check_session(s);
  return s;
}

}  // namespace detail

/// Guesses the format from the first non-blank line.
inline Format sniff_format(std::istream& in) {
  std::string line;
  while (std::getline(in, line))
    if (!detail::blank(line)) break;
  if (detail::blank(line)) throw Error(Errc::ParseError, "empty input");
  if (line.find_first_not_of(" \t") != std::string::npos && line[line.find_first_not_of(" \t")] == '{')
    return line.find("\"state\"") != std::string::npos ? Format::DialogueStateJsonl : Format::SessionJsonl;
  auto cols = detail::split_tabs(line);
  if (!cols.empty() && cols.back().rfind("[", 0) == 0) return Format::TopTsv;
  return Format::FlatTsv;
}

inline Format sniff_format(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  return sniff_format(in);
}

/// Reads every line; errors are rethrown with `name:line` in front. Lines of
/// compositional data whose decoupled form is not valid are skipped and
/// counted rather than fatal.
inline Dataset read_dataset(std::istream& in, Format format, const std::string& name = "<input>") {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::blank(line)) continue;
    const std::string id = name + ":" + std::to_string(lineno);
    try {
      switch (format) {
        case Format::SessionJsonl: ds.sessions.push_back(session_from_line(line)); break;
        case Format::DialogueStateJsonl: ds.sessions.push_back(detail::read_state_line(line)); break;
        case Format::FlatTsv: ds.sessions.push_back(detail::read_flat_line(line, id)); break;
        case Format::TopTsv:
          try {
            ds.sessions.push_back(detail::read_top_line(line, id));
          } catch (const Error& e) {
            if (e.code() != Errc::InvalidInput) throw;
            ++ds.skipped;
          }
          break;
      }
    } catch (const Error& e) {
      throw Error(e.code(), name + ":" + std::to_string(lineno) + ": " + e.detail());
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (lineno == 0 || (ds.sessions.empty() && ds.skipped == 0)) throw Error(Errc::ParseError, name + ": empty input");
  if (ds.skipped)
    ds.warnings.push_back(std::to_string(ds.skipped) + " lines have no valid decoupled form and were skipped");
  ds.stats = compute_stats(ds.sessions);
  return ds;
}

inline Dataset load_dataset(const DatasetSpec& spec) {
  std::ifstream in(spec.path);
  if (!in) throw Error(Errc::IoError, "cannot read " + spec.path);
  return read_dataset(in, spec.format, spec.path);
}

inline void write_sessions(std::ostream& out, const std::vector<Session>& sessions) {
  for (const auto& s : sessions) out << session_to_line(s) << '\n';
}

/// One training example per annotated user turn: the session history up to
/// that turn as source, the gold linearization as target.
inline std::vector<nn::Example> make_examples(const std::vector<Session>& sessions,
                                              const EncoderInputOptions& options = {}) {
  std::vector<nn::Example> out;
  for (const auto& s : sessions)
    for (std::size_t i : s.user_turn_indices())
      if (s.turns[i].gold) out.push_back({build_encoder_input(s, i, options).tokens, render(*s.turns[i].gold)});
  return out;
}

/// Whether every utterance token of the target occurs in the source.
inline bool copy_reachable(const nn::Example& ex) {
  for (const auto& t : ex.target) {
    if (t == kClose || t == kSeparator || is_opening_symbol(t)) continue;
    if (std::find(ex.source.begin(), ex.source.end(), t) == ex.source.end()) return false;
  }
  return true;
}

}  // namespace dsp::data
