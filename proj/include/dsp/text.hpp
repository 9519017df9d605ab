#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace dsp {

using Tokens = std::vector<std::string>;

/// Reserved spelling of an utterance token that literally reads `;`.
inline constexpr std::string_view kEscapedSemicolon = "<semi>";
/// Separator inserted between turns of a session.
inline constexpr std::string_view kTurnSeparator = "<sep>";

inline bool is_edge_punct(char c) {
  switch (c) {
    case ',': case '.': case '?': case '!': case ';': case ':':
    case '"': case '(': case ')':
      return true;
    default:
      return false;
  }
}

inline std::string escape_token(std::string token) {
  if (token == ";") return std::string(kEscapedSemicolon);
  return token;
}

/// Whitespace split; punctuation glued to either end of a word becomes its
/// own token. Case is preserved.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      std::string_view word = text.substr(i, j - i);
      std::size_t lead = 0;
      while (lead < word.size() && is_edge_punct(word[lead])) ++lead;
      std::size_t trail = word.size();
      while (trail > lead && is_edge_punct(word[trail - 1])) --trail;
      for (std::size_t k = 0; k < lead; ++k) out.push_back(escape_token(std::string(1, word[k])));
      if (trail > lead) out.emplace_back(word.substr(lead, trail - lead));
      for (std::size_t k = trail; k < word.size(); ++k)
        out.push_back(escape_token(std::string(1, word[k])));
    }
    i = j;
  }
  return out;
}

/// Plain whitespace split, used for already tokenized text such as
/// linearized trees.
inline Tokens split_ws(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join(const Tokens& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline Tokens to_lower(const Tokens& tokens) {
  Tokens out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(to_lower(t));
  return out;
}

}  // namespace dsp
