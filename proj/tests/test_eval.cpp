#include "lava/eval.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace lava;
using corpus::Tokens;
using corpus::tokenize;

namespace {

corpus::EntityDatabase hotel_db() {
    corpus::EntityDatabase db;
    db.schemas["hotel"] = {{"area", "price"}, {"phone", "postcode"}};
    db.schemas["taxi"] = {{"destination"}, {"car"}};
    db.entities["hotel"] = {
        {{"name", "alpha"}, {"area", "north"}, {"price", "cheap"}, {"phone", "1"}, {"postcode", "a1"}},
        {{"name", "beta"}, {"area", "north"}, {"price", "expensive"}, {"phone", "2"}, {"postcode", "b2"}},
        {{"name", "gamma"}, {"area", "south"}, {"price", "cheap"}, {"phone", "3"}, {"postcode", "c3"}},
    };
    db.entities["taxi"] = {{{"name", "t1"}, {"destination", "station"}, {"car", "red"}}};
    return db;
}

eval::DialogueRun hotel_run(std::vector<std::string> responses, std::map<std::string, std::string> state,
                            std::vector<std::string> requestable = {"phone"}) {
    eval::DialogueRun run;
    run.id = "d1";
    run.goal["hotel"] = {{{"area", "north"}, {"price", "cheap"}}, std::move(requestable)};
    for (const auto& r : responses) {
        run.responses.push_back(tokenize(r));
        run.turn_states.push_back({{"hotel", state}});
    }
    return run;
}

const std::map<std::string, std::string> kFullState{{"area", "north"}, {"price", "cheap"}};

}  // namespace

TEST(Bleu, MatchesReferenceImplementationOnToySet) {
    // Reference value from an independent corpus-BLEU implementation (no smoothing).
    const std::vector<Tokens> hyps{tokenize("the hotel is in the north ."), tokenize("i have booked it for you"),
                                   tokenize("the phone number is [hotel_phone] .")};
    const std::vector<Tokens> refs{tokenize("the hotel is in the centre ."), tokenize("i have booked it for you ."),
                                   tokenize("the phone is [hotel_phone] .")};
    EXPECT_NEAR(eval::corpus_bleu(hyps, refs), 0.674090653767271, 1e-6);
}

TEST(Bleu, IdenticalIsOneAndEmptyIsZero) {
    const std::vector<Tokens> refs{tokenize("the hotel is in the centre ."), tokenize("i have booked it for you .")};
    EXPECT_DOUBLE_EQ(eval::corpus_bleu(refs, refs), 1.0);
    const std::vector<Tokens> empty{Tokens{}, Tokens{}};
    EXPECT_EQ(eval::corpus_bleu(empty, refs), 0.0);
    EXPECT_EQ(eval::corpus_bleu(std::vector<Tokens>{}, std::vector<Tokens>{}), 0.0);
}

TEST(Bleu, ZeroHigherOrderPrecisionGivesZero) {
    const std::vector<Tokens> hyps{tokenize("north the hotel")};
    const std::vector<Tokens> refs{tokenize("the hotel north")};
    EXPECT_EQ(eval::corpus_bleu(hyps, refs), 0.0);
}

TEST(Bleu, LengthMismatchIsAnError) {
    const std::vector<Tokens> a{tokenize("a b")};
    const std::vector<Tokens> b{tokenize("a b"), tokenize("c d")};
    EXPECT_THROW(eval::corpus_bleu(a, b), eval::EvalError);
}

TEST(Bleu, InvariantUnderDialogueOrder) {
    Rng rng(3);
    const std::vector<std::string> words{"the", "hotel", "is", "."};
    std::vector<Tokens> hyps, refs;
    for (int i = 0; i < 30; ++i) {
        Tokens h, r;
        const int lh = 6 + static_cast<int>(rng.below(8));
        const int lr = 6 + static_cast<int>(rng.below(8));
        for (int k = 0; k < lh; ++k) h.push_back(rng.pick(words));
        for (int k = 0; k < lr; ++k) r.push_back(rng.pick(words));
        hyps.push_back(h);
        refs.push_back(r);
    }
    const double base = eval::corpus_bleu(hyps, refs);
    ASSERT_GT(base, 0.0);
    std::vector<std::size_t> order(hyps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int trial = 0; trial < 5; ++trial) {
        rng.shuffle(order);
        std::vector<Tokens> h2, r2;
        for (std::size_t i : order) {
            h2.push_back(hyps[i]);
            r2.push_back(refs[i]);
        }
        EXPECT_NEAR(eval::corpus_bleu(h2, r2), base, 1e-12);
    }
}

TEST(Judge, OfferUnderGoalConstraintsMatches) {
    const auto db = hotel_db();
    const auto run = hotel_run({"[hotel_name] is in the [value_area] .", "the phone is [hotel_phone] ."}, kFullState);
    const auto v = eval::judge_match(run, db);
    EXPECT_TRUE(v.overall);
    EXPECT_TRUE(v.per_domain.at("hotel"));
    EXPECT_TRUE(eval::judge_success(run, db));
}

TEST(Judge, NoOfferMeansNoMatch) {
    const auto db = hotel_db();
    const auto run = hotel_run({"what area would you like ?", "the phone is [hotel_phone] ."}, kFullState);
    EXPECT_FALSE(eval::judge_match(run, db).overall);
    EXPECT_FALSE(eval::judge_success(run, db));
}

TEST(Judge, OfferWithUnsatisfiableConstraintsDoesNotMatch) {
    const auto db = hotel_db();
    const auto run = hotel_run({"[hotel_name] is available ."}, {{"area", "south"}, {"price", "expensive"}});
    EXPECT_FALSE(eval::judge_match(run, db).overall);
}

TEST(Judge, OfferBeforeConstraintsAreKnownDoesNotMatch) {
    // With only the area known, the offered set includes an expensive hotel outside the goal.
    const auto db = hotel_db();
    const auto run = hotel_run({"[hotel_name] is available ."}, {{"area", "north"}});
    EXPECT_FALSE(eval::judge_match(run, db).overall);
}

TEST(Judge, MissingRequestedSlotFailsSuccessOnly) {
    const auto db = hotel_db();
    const auto run = hotel_run({"[hotel_name] is available .", "the postcode is [hotel_postcode] ."}, kFullState,
                               {"phone", "postcode"});
    EXPECT_TRUE(eval::judge_match(run, db).overall);
    EXPECT_FALSE(eval::judge_success(run, db));
}

TEST(Judge, PlaceholderOfAnotherDomainDoesNotAnswer) {
    const auto db = hotel_db();
    const auto run = hotel_run({"[hotel_name] is available .", "the car is [taxi_car] , call [taxi_phone] ."},
                               kFullState);
    EXPECT_FALSE(eval::judge_success(run, db));
}

TEST(Judge, EmptyRequestableSetSucceedsOnMatch) {
    const auto db = hotel_db();
    const auto run = hotel_run({"[hotel_name] is available ."}, kFullState, {});
    EXPECT_TRUE(eval::judge_success(run, db));
}

TEST(Judge, EveryGoalDomainMustMatch) {
    const auto db = hotel_db();
    auto run = hotel_run({"[hotel_name] is available ."}, kFullState, {});
    run.goal["taxi"] = {{{"destination", "station"}}, {}};
    run.turn_states[0]["taxi"] = {{"destination", "station"}};
    const auto v = eval::judge_match(run, db);
    EXPECT_TRUE(v.per_domain.at("hotel"));
    EXPECT_FALSE(v.per_domain.at("taxi"));
    EXPECT_FALSE(v.overall);
}

TEST(Judge, UnknownDomainIsAnError) {
    const auto db = hotel_db();
    auto run = hotel_run({"[hotel_name] is available ."}, kFullState);
    run.goal["train"] = {};
    EXPECT_THROW(eval::judge_match(run, db), eval::EvalError);
    EXPECT_THROW(eval::judge_success(run, db), eval::EvalError);
}

TEST(Judge, SuccessImpliesMatchOnRandomRuns) {
    const auto c = test::small_corpus(40, 5);
    const corpus::StateLayout layout(c.db);
    Rng rng(11);
    std::vector<Tokens> pool;
    for (const auto& d : c.dialogues)
        for (const auto& t : d.turns) pool.push_back(t.system);
    int successes = 0;
    for (const auto& d : c.dialogues) {
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<Tokens> responses;
            for (const auto& turn : d.turns) responses.push_back(rng.bernoulli(0.2) ? rng.pick(pool) : turn.system);
            const auto run = eval::make_run(d, responses, layout);
            const bool s = eval::judge_success(run, c.db);
            successes += s;
            if (s) { EXPECT_TRUE(eval::judge_match(run, c.db).overall) << d.id; }
        }
    }
    EXPECT_GT(successes, 0);
    EXPECT_LT(successes, 200);
}

TEST(MakeRun, ResponseCountMustMatchTurns) {
    const auto c = test::small_corpus(3, 5);
    const corpus::StateLayout layout(c.db);
    EXPECT_THROW(eval::make_run(c.dialogues[0], {}, layout), eval::EvalError);
}

TEST(Evaluate, GoldResponsesScorePerfectly) {
    const auto c = test::small_corpus(30, 9);
    const auto report = eval::evaluate(eval::gold_responder(), c.dialogues, c.db);
    EXPECT_EQ(report.match, 100.0);
    EXPECT_EQ(report.success, 100.0);
    EXPECT_DOUBLE_EQ(report.bleu, 1.0);
    EXPECT_EQ(report.n_dialogues, c.dialogues.size());
    EXPECT_EQ(report.per_dialogue.size(), c.dialogues.size());
}

TEST(Evaluate, RatesArePercentagesOfVerdicts) {
    const auto c = test::small_corpus(30, 9);
    // Drop every response in odd dialogues: no offer, so no match.
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < c.dialogues.size(); ++i) index[c.dialogues[i].id] = static_cast<int>(i);
    const eval::Responder responder = [&](const corpus::Dialogue& d, std::size_t t, std::span<const Tokens>) {
        return index.at(d.id) % 2 == 1 ? tokenize("how can i help ?") : d.turns[t].system;
    };
    const auto report = eval::evaluate(responder, c.dialogues, c.db);
    int matches = 0, successes = 0;
    for (const auto& v : report.per_dialogue) {
        matches += v.match;
        successes += v.success;
        if (v.success) { EXPECT_TRUE(v.match) << v.id; }
    }
    EXPECT_DOUBLE_EQ(report.match, 100.0 * matches / static_cast<double>(c.dialogues.size()));
    EXPECT_DOUBLE_EQ(report.success, 100.0 * successes / static_cast<double>(c.dialogues.size()));
    EXPECT_EQ(matches, 15);
    EXPECT_LE(report.success, report.match);
}

TEST(Evaluate, HistoryPassedToResponderIsGeneratedSoFar) {
    const auto c = test::small_corpus(5, 9);
    const eval::Responder responder = [](const corpus::Dialogue& d, std::size_t t, std::span<const Tokens> history) {
        EXPECT_EQ(history.size(), t);
        for (std::size_t k = 0; k < history.size(); ++k) EXPECT_EQ(history[k], tokenize("turn " + std::to_string(k)));
        (void)d;
        return tokenize("turn " + std::to_string(t));
    };
    eval::evaluate(responder, c.dialogues, c.db);
}

TEST(Evaluate, ReportJsonRoundTrips) {
    const auto c = test::small_corpus(10, 9);
    const auto report = eval::evaluate(eval::gold_responder(), c.dialogues, c.db);
    const auto j = report.to_json();
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.push_back(k);
    EXPECT_EQ(keys, (std::vector<std::string>{"match", "success", "bleu", "n_dialogues", "per_dialogue"}));
    const auto back = eval::EvaluationReport::from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(back.to_json(), j);
}

TEST(Evaluate, ModelEvaluationIsDeterministicAndConsistent) {
    const auto c = test::small_corpus(8, 9);
    nn::ModelConfig cfg = test::toy_config(c);
    const nn::Model m(cfg, test::toy_vocab(c, 40), 5);
    const auto a = eval::evaluate_model(m, c.dialogues, c.db);
    const auto b = eval::evaluate_model(m, c.dialogues, c.db);
    EXPECT_EQ(a.to_json(), b.to_json());
    EXPECT_LE(a.success, a.match);
    EXPECT_GE(a.bleu, 0.0);
    EXPECT_LE(a.bleu, 1.0);
}
