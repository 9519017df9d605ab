#include <gtest/gtest.h>

#include <map>

#include "support/examples.hpp"
#include "support/random_trees.hpp"

using namespace dsp;
using namespace dsp::fixtures;

TEST(EncoderInput, JoinsTurnsWithSeparator) {
  auto in = build_encoder_input(weather_session(), 1);
  EXPECT_EQ(in.tokens, (Tokens{"Weather", "in", "San", "Francisco", "<sep>", "Traffic", "there"}));
  EXPECT_EQ(in.origins[2], (TokenOrigin{0, 2}));
  EXPECT_EQ(in.origins[4], (TokenOrigin{-1, -1}));
  EXPECT_EQ(in.origins[6], (TokenOrigin{1, 1}));
}

TEST(EncoderInput, SingleTurnUnchanged) {
  Session s{"one", {{Role::User, {"a", "b"}, std::nullopt}}};
  EXPECT_EQ(build_encoder_input(s, 0).tokens, (Tokens{"a", "b"}));
}

TEST(EncoderInput, LengthArithmeticOnRandomSessions) {
  Rng rng(61);
  for (int i = 0; i < 100; ++i) {
    Session s;
    std::size_t total = 0;
    for (int t = 0; t < 4; ++t) {
      Tokens words;
      std::size_t n = 1 + rng.below(6);
      for (std::size_t k = 0; k < n; ++k) words.push_back("x" + std::to_string(rng.below(9)));
      total += n;
      s.turns.push_back({Role::User, words, std::nullopt});
    }
    auto in = build_encoder_input(s, 3);
    EXPECT_EQ(std::count(in.tokens.begin(), in.tokens.end(), "<sep>"), 3);
    EXPECT_EQ(in.tokens.size(), total + 3);
  }
}

TEST(EncoderInput, AssistantTurnsAreOptional) {
  auto s = restaurant_session();
  auto with = build_encoder_input(s, 2);
  auto without = build_encoder_input(s, 2, {.include_assistant = false});
  EXPECT_EQ(std::count(with.tokens.begin(), with.tokens.end(), "<sep>"), 2);
  EXPECT_EQ(std::count(without.tokens.begin(), without.tokens.end(), "<sep>"), 1);
  EXPECT_EQ(with.tokens.size(), s.turns[0].tokens.size() + s.turns[1].tokens.size() + s.turns[2].tokens.size() + 2);
}

TEST(EncoderInput, Errors) {
  auto s = restaurant_session();
  try {
    build_encoder_input(s, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IndexOutOfRange);
  }
  EXPECT_THROW(build_encoder_input(s, 1), Error);  // assistant turn
}

TEST(ResolveRefs, ExplicitRefResolvesToAntecedent) {
  auto r = resolve_refs(traffic_there(), {weather_in_sf()});
  EXPECT_EQ(join(render(r.tree)), "[IN:GET_TRAFFIC [SL:LOCATION San Francisco ] ]");
  ASSERT_EQ(r.matches.size(), 1u);
  EXPECT_EQ(r.matches[0].turn, 0u);
  EXPECT_EQ(r.matches[0].path, (NodePath{0, 0}));
}

TEST(ResolveRefs, ImplicitRefFindsFirstAppearance) {
  auto r = resolve_refs(events_implicit(), {weather_in_sf(), traffic_there()});
  EXPECT_EQ(join(render(r.tree)), "[IN:GET_EVENT [SL:LOCATION San Francisco ] ]");
  EXPECT_EQ(r.matches.at(0).turn, 0u);
}

TEST(ResolveRefs, IdentityWithoutRefsAndIdempotent) {
  auto r = resolve_refs(reminder_decoupled(), {});
  EXPECT_EQ(r.tree, reminder_decoupled());
  auto once = resolve_refs(traffic_there(), {weather_in_sf()}).tree;
  EXPECT_EQ(count_refs(once.root), 0u);
  EXPECT_EQ(resolve_refs(once, {weather_in_sf()}).tree, once);
}

TEST(ResolveRefs, UnresolvedAntecedent) {
  try {
    resolve_refs(traffic_there(), {restaurant_first()});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnresolvedRef);
  }
}

TEST(ExtractCarryover, RestaurantSession) {
  auto facts = extract_carryover(restaurant_session());
  ASSERT_EQ(facts.size(), 4u);
  EXPECT_EQ(facts[2].label, "AREA");
  EXPECT_EQ(facts[2].distance, 1u);
  EXPECT_EQ(facts[3].label, "FOOD");
  EXPECT_EQ(facts[3].value, (Tokens{"modern", "european"}));
  EXPECT_EQ(facts[3].distance, 0u);
  // Counting every turn puts the assistant turn in between.
  auto all = extract_carryover(restaurant_session(), {.count_all_turns = true});
  EXPECT_EQ(all[2].distance, 2u);
  EXPECT_EQ(all[2].turn_index, 2u);
}

TEST(ExtractCarryover, SingleTurnDistancesAreZero) {
  for (const auto& f : extract_carryover(std::vector<SemanticTree>{reminder_decoupled()})) EXPECT_EQ(f.distance, 0u);
}

TEST(ExtractCarryover, MatchesQuadraticScan) {
  Rng rng(67);
  for (int i = 0; i < 200; ++i) {
    Session s = random_session(rng, 1 + rng.below(6));
    std::vector<SemanticTree> trees;
    for (const auto& t : s.turns)
      if (t.gold) trees.push_back(*t.gold);
    auto facts = extract_carryover(trees);
    std::size_t k = 0;
    std::array<std::size_t, 4> buckets{};
    for (std::size_t u = 0; u < trees.size(); ++u) {
      for (const auto& slot : collect_slots(trees[u])) {
        std::size_t first = u;
        for (std::size_t e = 0; e < u && first == u; ++e)
          for (const auto& x : collect_slots(trees[e]))
            if (x.label == slot.label && to_lower(x.value) == to_lower(slot.value)) first = e;
        ASSERT_LT(k, facts.size());
        EXPECT_EQ(facts[k].distance, u - first);
        EXPECT_LE(facts[k].distance, facts[k].turn_index);
        ++buckets[distance_bucket(facts[k].distance)];
        ++k;
      }
    }
    EXPECT_EQ(k, facts.size());
    EXPECT_EQ(buckets[0] + buckets[1] + buckets[2] + buckets[3], facts.size());
  }
}

TEST(SessionJson, RoundTrip) {
  Rng rng(71);
  for (int i = 0; i < 50; ++i) {
    Session s = random_session(rng, 1 + rng.below(4));
    std::string line = session_to_line(s);
    Session back = session_from_line(line);
    EXPECT_EQ(session_to_line(back), line);
    EXPECT_EQ(back.turns.size(), s.turns.size());
  }
}

TEST(SessionJson, Errors) {
  EXPECT_THROW(session_from_line("{"), Error);
  EXPECT_THROW(session_from_line(R"({"id":"x","turns":[]})"), Error);
  EXPECT_THROW(session_from_line(R"({"turns":[{"role":"assistant","text":"hi","parse":"[IN:X [SL:Y hi ] ]"}]})"), Error);
  EXPECT_THROW(session_from_line(R"({"turns":[{"role":"user","text":"hi","parse":"[IN:X hi ]"}]})"), Error);
}
