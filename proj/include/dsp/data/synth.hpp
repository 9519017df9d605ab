#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsp/error.hpp"
#include "dsp/random.hpp"
#include "dsp/session.hpp"
#include "dsp/text.hpp"
#include "dsp/tree.hpp"

namespace dsp::data {

/// A slot occurrence inside an intent template: optional carrier words
/// ("in") followed by the filler; an implicit reference drops both. Required slots (presence 1) are the ones
/// that a later turn may leave unspoken and carry over implicitly.
struct SlotPart {
  std::string slot;
  std::string carrier;
  double presence = 1.0;

  bool required() const { return presence >= 1.0; }
};

/// Template element: literal words or a slot part.
struct TemplatePart {
  std::string words;
  std::optional<SlotPart> slot;
};

struct SynthIntent {
  std::string name;
  std::vector<std::vector<TemplatePart>> templates;
  bool top_level = true;  // false: only reachable as a nested intent
};

struct SynthSlot {
  std::string name;
  std::vector<std::string> fillers;
  std::vector<std::string> heldout_fillers;
  std::vector<std::string> pronouns;        // explicit reference triggers
  std::vector<std::string> nested_intents;  // intents that may fill this slot
};

struct SynthGrammar {
  std::vector<SynthIntent> intents;
  std::vector<SynthSlot> slots;
  double p_explicit = 0.2;
  double p_implicit = 0.2;
  double p_nested = 0.3;
  std::size_t min_turns = 1;
  std::size_t max_turns = 3;
  double p_assistant = 0.0;  // chance of an assistant turn before each later user turn
  std::vector<std::string> assistant_lines{"ok", "anything else ?", "sure , what else ?"};
  std::uint64_t seed = 7;

  const SynthSlot& slot(const std::string& name) const {
    for (const auto& s : slots)
      if (s.name == name) return s;
    throw Error(Errc::ConfigError, "grammar has no slot " + name);
  }
  const SynthIntent& intent(const std::string& name) const {
    for (const auto& i : intents)
      if (i.name == name) return i;
    throw Error(Errc::ConfigError, "grammar has no intent " + name);
  }

  void check() const {
    for (double p : {p_explicit, p_implicit, p_nested, p_assistant})
      if (p < 0 || p > 1) throw Error(Errc::ConfigError, "probabilities must be in [0, 1]");
    if (p_explicit + p_implicit > 1) throw Error(Errc::ConfigError, "p_explicit + p_implicit exceeds 1");
    if (min_turns == 0 || max_turns < min_turns) throw Error(Errc::ConfigError, "bad turn range");
    bool any_top = false;
    for (const auto& i : intents) {
      any_top = any_top || i.top_level;
      if (i.templates.empty()) throw Error(Errc::ConfigError, "intent " + i.name + " has no template");
      for (const auto& t : i.templates) {
        bool has_slot = false;
        for (const auto& part : t)
          if (part.slot) {
            has_slot = true;
            const SynthSlot& s = slot(part.slot->slot);
            if (s.fillers.empty() && s.nested_intents.empty())
              throw Error(Errc::ConfigError, "slot " + s.name + " has no fillers");
          }
        if (!has_slot) throw Error(Errc::ConfigError, "every template of " + i.name + " needs a slot");
      }
    }
    if (!any_top) throw Error(Errc::ConfigError, "grammar has no top-level intent");
  }
};

/// A small assistant domain: weather, events, reminders, calls, messages,
/// directions and traffic, with nested location and call intents.
inline SynthGrammar default_grammar() {
  auto w = [](std::string words) { return TemplatePart{std::move(words), std::nullopt}; };
  auto s = [](std::string slot, std::string carrier = "", double presence = 1.0) {
    return TemplatePart{"", SlotPart{std::move(slot), std::move(carrier), presence}};
  };
  SynthGrammar g;
  g.intents = {
      {"GET_WEATHER",
       {{w("what is the weather"), s("LOCATION", "in"), s("DATE_TIME", "", 0.5)},
        {w("will it rain"), s("DATE_TIME", "", 0.6), s("LOCATION", "in")},
        {w("weather forecast for"), s("LOCATION")}}},
      {"GET_EVENT",
       {{w("what events are happening"), s("LOCATION", "in"), s("DATE_TIME", "", 0.6)},
        {w("find"), s("CATEGORY_EVENT"), s("LOCATION", "in"), s("DATE_TIME", "", 0.5)}}},
      {"CREATE_REMINDER",
       {{w("remind me"), s("TODO", "to"), s("DATE_TIME")},
        {w("set a reminder"), s("DATE_TIME"), s("TODO", "to")}}},
      {"CREATE_CALL", {{w("call"), s("CONTACT")}, {w("give"), s("CONTACT"), w("a call")}}},
      {"SEND_MESSAGE",
       {{w("text"), s("CONTACT"), s("CONTENT", "saying")},
        {w("send a message"), s("CONTACT", "to"), s("CONTENT", "that")}}},
      {"GET_DIRECTIONS",
       {{w("how do i get"), s("DESTINATION", "to"), s("DATE_TIME", "", 0.3)},
        {w("directions"), s("DESTINATION", "to"), s("SOURCE", "from", 0.5)}}},
      {"GET_INFO_TRAFFIC",
       {{w("how is traffic"), s("DESTINATION", "to"), s("DATE_TIME", "", 0.6)},
        {w("is there traffic"), s("LOCATION", "in"), s("DATE_TIME", "", 0.5)}}},
      {"GET_LOCATION", {{w("the nearest"), s("CATEGORY_LOCATION")}, {w("a good"), s("CATEGORY_LOCATION"), w("nearby")}},
       false},
  };
  // Every held-out filler has a word found nowhere else in the grammar.
  g.slots = {
      {"LOCATION",
       {"boston", "seattle", "san jose", "new york", "chicago", "denver", "austin", "portland", "atlanta",
        "san diego", "phoenix", "orlando", "nashville", "detroit", "las vegas", "salt lake city"},
       {"tokyo", "berlin", "madrid", "oslo", "lima", "cairo", "hanoi", "sao paulo", "buenos aires", "cape town",
        "kuala lumpur", "vienna"},
       {"there", "that city"},
       {}},
      {"DATE_TIME",
       {"tomorrow", "tonight", "today", "this weekend", "on friday", "on monday", "next week", "at noon",
        "this evening", "on sunday morning", "at 5 pm", "in an hour"},
       {"on tuesday", "next month", "at 8 am", "on saturday night", "at midnight", "in two hours"},
       {"then", "that day"},
       {}},
      {"CATEGORY_EVENT",
       {"concerts", "festivals", "art shows", "comedy shows", "food fairs", "book readings"},
       {"theater plays", "jazz nights", "craft markets", "poetry slams"},
       {},
       {}},
      {"TODO",
       {"buy milk", "pay rent", "water the plants", "pick up the kids", "walk the dog", "book a table",
        "renew my passport", "take out the trash"},
       {"feed the cat", "wash the car", "visit the bank", "mail the package"},
       {},
       {"CREATE_CALL"}},
      {"CONTACT",
       {"john", "mary", "mom", "dad", "alex", "sarah", "david", "emma", "my boss", "lisa"},
       {"kevin", "olivia", "grandma", "noah", "uncle joe", "jessica", "brian", "aunt rita"},
       {"him", "her"},
       {}},
      {"CONTENT",
       {"i am running late", "see you soon", "call me back", "happy birthday", "dinner is ready",
        "on my way"},
       {"drive safely", "meet me outside", "thanks again", "congrats"},
       {},
       {}},
      {"DESTINATION",
       {"the airport", "downtown", "the mall", "work", "the stadium", "central park", "the library"},
       {"the beach", "the museum", "the zoo", "the harbor"},
       {"there"},
       {"GET_LOCATION"}},
      {"SOURCE", {"home", "work", "the office", "the hotel"}, {"school", "the gym"}, {}, {}},
      {"CATEGORY_LOCATION",
       {"gas station", "coffee shop", "pharmacy", "grocery store", "parking garage", "pizza place"},
       {"bakery", "bookstore", "hardware store"},
       {},
       {}},
  };
  return g;
}

namespace detail {

struct Rendered {
  Tokens words;
  Node node;
};

struct SynthContext {
  const SynthGrammar& grammar;
  Rng& rng;
  bool heldout;
  // Slot values of earlier turns, by slot name, in first-seen order.
  std::map<std::string, std::vector<Tokens>> prior_values;
};

inline Tokens words_of(const std::string& text) { return split_ws(text); }

inline std::vector<Node> token_nodes(const Tokens& words) {
  std::vector<Node> out;
  for (const auto& w : words) out.push_back(Node::token(w));
  return out;
}

inline const std::vector<std::string>& lexicon(const SynthSlot& slot, bool heldout) {
  return heldout && !slot.heldout_fillers.empty() ? slot.heldout_fillers : slot.fillers;
}

inline Rendered render_intent(SynthContext& ctx, const SynthIntent& intent, std::size_t depth, bool allow_refs);

inline std::optional<Rendered> render_slot(SynthContext& ctx, const SlotPart& part, std::size_t depth,
                                           bool allow_refs) {
  const SynthSlot& slot = ctx.grammar.slot(part.slot);
  Tokens carrier = words_of(part.carrier);
  auto prior = ctx.prior_values.find(slot.name);
  const bool has_prior = prior != ctx.prior_values.end() && !prior->second.empty();
  if (allow_refs && has_prior) {
    double u = ctx.rng.uniform();
    const Tokens& antecedent = prior->second.back();
    const double p_implicit = part.required() ? ctx.grammar.p_implicit : 0.0;
    if (u < p_implicit) {
      std::vector<Node> inner = token_nodes(antecedent);
      return Rendered{{}, Node::labeled(dsp::slot(slot.name), {Node::labeled(ref(std::string(kRefImplicit)), inner)})};
    }
    if (u < p_implicit + ctx.grammar.p_explicit && !slot.pronouns.empty()) {
      Tokens trigger = words_of(ctx.rng.pick(slot.pronouns));
      std::vector<Node> inner = token_nodes(antecedent);
      inner.push_back(Node::separator());
      for (auto& n : token_nodes(trigger)) inner.push_back(std::move(n));
      // "there" and "then" stand in for the whole phrase, carrier included.
      const bool adverb = trigger.size() == 1 && (trigger[0] == "there" || trigger[0] == "then");
      Tokens words = adverb ? Tokens{} : carrier;
      words.insert(words.end(), trigger.begin(), trigger.end());
      return Rendered{words,
                      Node::labeled(dsp::slot(slot.name), {Node::labeled(ref(std::string(kRefExplicit)), inner)})};
    }
  }
  const auto& lex = lexicon(slot, ctx.heldout);
  bool nest = !slot.nested_intents.empty() && depth + 2 < 10 && (lex.empty() || ctx.rng.bernoulli(ctx.grammar.p_nested));
  if (nest) {
    const SynthIntent& inner = ctx.grammar.intent(ctx.rng.pick(slot.nested_intents));
    Rendered r = render_intent(ctx, inner, depth + 1, false);
    Tokens words = carrier;
    words.insert(words.end(), r.words.begin(), r.words.end());
    return Rendered{words, Node::labeled(dsp::slot(slot.name), {std::move(r.node)})};
  }
  // A fresh filler differs from the values this slot already had.
  Tokens value = words_of(ctx.rng.pick(lex));
  for (int attempt = 0; attempt < 8 && has_prior; ++attempt) {
    if (std::find(prior->second.begin(), prior->second.end(), value) == prior->second.end()) break;
    value = words_of(ctx.rng.pick(lex));
  }
  Tokens words = carrier;
  words.insert(words.end(), value.begin(), value.end());
  return Rendered{words, Node::labeled(dsp::slot(slot.name), token_nodes(value))};
}

inline bool carries(const SynthContext& ctx, const TemplatePart& part) {
  if (!part.slot) return false;
  auto it = ctx.prior_values.find(part.slot->slot);
  return it != ctx.prior_values.end() && !it->second.empty();
}

inline bool carries_required(const SynthContext& ctx, const TemplatePart& part) {
  return carries(ctx, part) && part.slot->required();
}

inline Rendered render_intent(SynthContext& ctx, const SynthIntent& intent, std::size_t depth, bool allow_refs) {
  // With references allowed, prefer a template whose required slots can
  // carry a prior value, then one with any slot that can, and keep at least
  // one such slot.
  std::vector<const std::vector<TemplatePart>*> linked;
  if (allow_refs) {
    for (auto test : {carries_required, carries}) {
      for (const auto& t : intent.templates)
        if (std::any_of(t.begin(), t.end(), [&](const TemplatePart& p) { return test(ctx, p); }))
          linked.push_back(&t);
      if (!linked.empty()) break;
    }
  }
  const auto& tmpl = linked.empty() ? ctx.rng.pick(intent.templates) : *ctx.rng.pick(linked);
  std::vector<std::size_t> slot_positions, carry_positions;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i].slot) slot_positions.push_back(i);
    if (!linked.empty() && carries(ctx, tmpl[i])) carry_positions.push_back(i);
  }
  // Optional slots are dropped independently, but at least one stays.
  std::vector<bool> keep(tmpl.size(), true);
  bool any = false, any_carry = false;
  for (std::size_t i : slot_positions) {
    keep[i] = ctx.rng.bernoulli(tmpl[i].slot->presence);
    any = any || keep[i];
  }
  for (std::size_t i : carry_positions) any_carry = any_carry || keep[i];
  if (!carry_positions.empty() && !any_carry) keep[ctx.rng.pick(carry_positions)] = true;
  else if (!any) keep[ctx.rng.pick(slot_positions)] = true;

  std::vector<Node> children;
  Tokens words;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const auto& part = tmpl[i];
    if (!part.slot) {
      for (auto& t : words_of(part.words)) words.push_back(t);
      continue;
    }
    if (!keep[i]) continue;
    auto r = render_slot(ctx, *part.slot, depth, allow_refs);
    words.insert(words.end(), r->words.begin(), r->words.end());
    children.push_back(std::move(r->node));
  }
  return {std::move(words), Node::labeled(dsp::intent(intent.name), std::move(children))};
}

inline void remember_values(SynthContext& ctx, const SemanticTree& tree) {
  for (const auto& entry : collect_slots(tree)) {
    const Node* n = &tree.root;
    for (std::size_t i : entry.path) n = &n->children()[i];
    // References repeat earlier values; nested intents count by their leaves.
    bool is_ref = n->children().size() == 1 && !n->children()[0].is_token() &&
                  n->children()[0].label().kind == LabelKind::Ref;
    if (is_ref || entry.value.empty()) continue;
    auto& values = ctx.prior_values[entry.label];
    if (std::find(values.begin(), values.end(), entry.value) == values.end()) values.push_back(entry.value);
  }
}

inline bool shares_required_slot(const SynthIntent& intent,
                                 const std::map<std::string, std::vector<Tokens>>& prior) {
  for (const auto& t : intent.templates)
    for (const auto& part : t)
      if (part.slot && part.slot->required() && prior.count(part.slot->slot)) return true;
  return false;
}

}  // namespace detail

struct SynthOptions {
  bool heldout_fillers = false;
  std::string id_prefix = "synth";
};

/// Generates `n_sessions` annotated sessions. Later turns pick intents with
/// a required slot seen in earlier turns, so references have antecedents.
/// A required slot with a prior value becomes an implicit reference (left
/// out of the utterance) with probability p_implicit; any slot with a prior
/// value becomes an explicit one (pronoun in the utterance) with probability
/// p_explicit; otherwise it gets a fresh filler. The antecedent is the
/// slot's most recent earlier value.
inline std::vector<Session> generate_synthetic(const SynthGrammar& grammar, std::size_t n_sessions,
                                               const SynthOptions& options = {}) {
  grammar.check();
  Rng rng(grammar.seed);
  std::vector<const SynthIntent*> top;
  for (const auto& i : grammar.intents)
    if (i.top_level) top.push_back(&i);

  std::vector<Session> out;
  out.reserve(n_sessions);
  for (std::size_t n = 0; n < n_sessions; ++n) {
    Session session;
    session.id = options.id_prefix + "-" + std::to_string(n);
    detail::SynthContext ctx{grammar, rng, options.heldout_fillers, {}};
    std::size_t turns = grammar.min_turns + rng.below(grammar.max_turns - grammar.min_turns + 1);
    const SynthIntent* previous = nullptr;
    for (std::size_t t = 0; t < turns; ++t) {
      const SynthIntent* chosen = nullptr;
      if (t == 0) {
        chosen = rng.pick(top);
      } else {
        std::vector<const SynthIntent*> linked;
        for (const auto* i : top)
          if (detail::shares_required_slot(*i, ctx.prior_values)) linked.push_back(i);
        chosen = linked.empty() ? previous : rng.pick(linked);
        if (grammar.p_assistant > 0 && rng.bernoulli(grammar.p_assistant))
          session.turns.push_back({Role::Assistant, tokenize(rng.pick(grammar.assistant_lines)), std::nullopt});
      }
      auto r = detail::render_intent(ctx, *chosen, 1, t > 0);
      SemanticTree tree{std::move(r.node), TreeForm::Decoupled};
      ValidationReport report = validate_decoupled(tree);
      if (!report.ok()) throw Error(Errc::ValidationError, "generated tree: " + report.summary());
      detail::remember_values(ctx, tree);
      session.turns.push_back({Role::User, std::move(r.words), std::move(tree)});
      previous = chosen;
    }
    out.push_back(std::move(session));
  }
  return out;
}

}  // namespace dsp::data
