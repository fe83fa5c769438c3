#include "lava/corpus.hpp"
#include "lava/eval.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include "json.hpp"

#include <fstream>
#include <set>
#include <sstream>

using namespace lava;
using namespace lava::corpus;

namespace {

Dialogue handmade_dialogue(int turns) {
    Dialogue d;
    d.id = "hand";
    d.goal["hotel"].informable["area"] = "north";
    for (int t = 0; t < turns; ++t) {
        Turn turn;
        const std::string n = std::to_string(t);
        turn.user = {"u" + n, "x" + n};
        turn.system = {"s" + n};
        turn.state_vector = {t % 2, 1};
        turn.db_pointer = {1, 0};
        turn.domain = "hotel";
        turn.actions = {"hotel-inform"};
        d.turns.push_back(turn);
    }
    return d;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Synthetic, SameSeedSameCorpus) {
    const Corpus a = test::small_corpus(20, 7);
    const Corpus b = test::small_corpus(20, 7);
    EXPECT_EQ(a, b);
    EXPECT_EQ(to_native_json(a), to_native_json(b));
    EXPECT_NE(to_native_json(a), to_native_json(test::small_corpus(20, 8)));
}

TEST(Synthetic, FiveHundredDialoguesSplitEightyTenTen) {
    const Corpus c = test::small_corpus(500, 7);
    ASSERT_EQ(c.dialogues.size(), 500u);
    const auto splits = assign_splits(c);
    std::map<Split, int> counts;
    for (const auto& [id, s] : splits) ++counts[s];
    EXPECT_EQ(counts[Split::train], 400);
    EXPECT_EQ(counts[Split::valid], 50);
    EXPECT_EQ(counts[Split::test], 50);
    EXPECT_EQ(select_split(c, Split::valid).size(), 50u);
    EXPECT_EQ(assign_splits(c), splits);
}

TEST(Synthetic, InvariantsHold) {
    const Corpus c = test::small_corpus(100, 3);
    EXPECT_NO_THROW(validate(c));
    const StateLayout layout(c.db);
    std::set<std::string> ids;
    static const std::set<std::string> acts = {"inform", "request", "offer", "book", "answer"};
    for (const auto& d : c.dialogues) {
        EXPECT_TRUE(ids.insert(d.id).second);
        ASSERT_FALSE(d.turns.empty());
        ASSERT_FALSE(d.goal.empty());
        for (const auto& t : d.turns) {
            EXPECT_EQ(t.state_vector.size(), layout.state_size());
            EXPECT_EQ(t.db_pointer.size(), layout.db_size());
            EXPECT_TRUE(c.db.has_domain(t.domain));
            for (const auto& a : t.actions) {
                const auto dash = a.find('-');
                ASSERT_NE(dash, std::string::npos) << a;
                EXPECT_TRUE(acts.contains(a.substr(0, dash))) << a;
                EXPECT_TRUE(c.db.has_domain(a.substr(dash + 1))) << a;
            }
        }
    }
}

TEST(Synthetic, GoldResponsesAchieveFullMatchAndSuccess) {
    const Corpus c = test::small_corpus(200, 11);
    const auto report = eval::evaluate(eval::gold_responder(), c.dialogues, c.db);
    EXPECT_EQ(report.n_dialogues, 200u);
    EXPECT_DOUBLE_EQ(report.match, 100.0);
    EXPECT_DOUBLE_EQ(report.success, 100.0);
    EXPECT_NEAR(report.bleu, 1.0, 1e-12);
}

TEST(Synthetic, RejectsSingleDomainWorld) {
    WorldSpec w = default_world();
    w.domains.resize(1);
    EXPECT_THROW(generate_synthetic_corpus(w, 1), CorpusError);
    WorldSpec bad = default_world();
    bad.domains[0].requestable.clear();
    EXPECT_THROW(generate_synthetic_corpus(bad, 1), CorpusError);
}

TEST(NativeJson, SaveLoadRoundTripIsByteIdentical) {
    const Corpus c = test::small_corpus(30, 5);
    const auto dir = test::scratch_dir("corpus_roundtrip");
    save_corpus(c, dir / "a.json");
    const Corpus loaded = load_corpus(dir / "a.json", Format::native_json);
    EXPECT_EQ(loaded, c);
    save_corpus(loaded, dir / "b.json");
    EXPECT_EQ(read_file(dir / "a.json"), read_file(dir / "b.json"));
    std::filesystem::remove_all(dir);
}

TEST(NativeJson, TwoDialoguesLoadInIdOrder) {
    Corpus c = test::small_corpus(2, 5);
    ASSERT_EQ(c.dialogues.size(), 2u);
    auto j = nlohmann::json::parse(to_native_json(c));
    std::swap(j["dialogues"][0], j["dialogues"][1]);
    const Corpus loaded = parse_native_json(j.dump());
    ASSERT_EQ(loaded.dialogues.size(), 2u);
    EXPECT_LT(loaded.dialogues[0].id, loaded.dialogues[1].id);
}

TEST(NativeJson, InconsistentVectorLengthIsSchemaError) {
    const Corpus c = test::small_corpus(3, 5);
    auto j = nlohmann::json::parse(to_native_json(c));
    j["dialogues"][1]["turns"][0]["state_vector"].push_back(0);
    try {
        parse_native_json(j.dump());
        FAIL() << "expected a schema error";
    } catch (const CorpusError& e) {
        EXPECT_NE(std::string(e.what()).find(j["dialogues"][1]["id"].get<std::string>()), std::string::npos)
            << e.what();
    }
}

TEST(NativeJson, MalformedInputIsRejected) {
    EXPECT_THROW(parse_native_json("{not json"), CorpusError);
    EXPECT_THROW(parse_native_json(R"({"schema_version":1,"database":{},"dialogues":[{"id":"x"}]})"), CorpusError);
    EXPECT_THROW(load_corpus("/nonexistent/corpus.json", Format::native_json), CorpusError);
}

TEST(Vocabulary, ThreeTokensGiveSizeSeven) {
    Dialogue d = handmade_dialogue(1);
    d.turns[0].user = {"a", "b"};
    d.turns[0].system = {"c", "a"};
    const std::vector<Dialogue> ds = {d};
    const Vocabulary v = build_vocabulary(ds, 1000);
    EXPECT_EQ(v.size(), 7u);
    EXPECT_EQ(v.decode(Vocabulary::kPad), "<pad>");
    EXPECT_EQ(v.decode(Vocabulary::kEos), "<eos>");
    EXPECT_EQ(v.encode("a"), 4);
}

TEST(Vocabulary, TiesBrokenLexicographically) {
    Dialogue d = handmade_dialogue(1);
    d.turns[0].user = {"zeta", "alpha", "mid"};
    d.turns[0].system = {"mid"};
    const std::vector<Dialogue> ds = {d};
    const Vocabulary v = build_vocabulary(ds, 1000);
    EXPECT_EQ(v.encode("mid"), 4);
    EXPECT_LT(v.encode("alpha"), v.encode("zeta"));
    const Vocabulary capped = build_vocabulary(ds, 6);
    EXPECT_EQ(capped.size(), 6u);
    EXPECT_TRUE(capped.contains("alpha"));
    EXPECT_FALSE(capped.contains("zeta"));
}

TEST(Vocabulary, DefaultSizeAndBijection) {
    EXPECT_EQ(Vocabulary::kDefaultMaxSize, 1000u);
    const Corpus c = test::small_corpus(50, 2);
    const Vocabulary v = build_vocabulary(c);
    EXPECT_LE(v.size(), 1000u);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.encode(v.decode(static_cast<int>(i))), static_cast<int>(i));
    const Tokens sentence = c.dialogues[0].turns[0].system;
    EXPECT_EQ(v.decode(v.encode(sentence)), sentence);
    EXPECT_EQ(v.encode("never-seen-token"), Vocabulary::kUnk);
    EXPECT_THROW(build_vocabulary(c, 4), CorpusError);
}

TEST(Context, FirstTurnIsUserOnly) {
    const Dialogue d = handmade_dialogue(4);
    const auto ctx = make_context(d, 0, TaskMode::context_to_response, 2);
    EXPECT_EQ(ctx.tokens, d.turns[0].user);
    ASSERT_TRUE(ctx.state_vector.has_value());
    EXPECT_EQ(*ctx.state_vector, d.turns[0].state_vector);
    EXPECT_EQ(*ctx.db_pointer, d.turns[0].db_pointer);
}

TEST(Context, WindowTwoKeepsLastTwoTurns) {
    const Dialogue d = handmade_dialogue(5);
    const auto ctx = make_context(d, 3, TaskMode::context_to_response, 2);
    const Tokens expected = {"u1", "x1", "<eos>", "s1", "<eos>", "u2", "x2", "<eos>", "s2", "<eos>", "u3", "x3"};
    EXPECT_EQ(ctx.tokens, expected);
    EXPECT_EQ(*ctx.state_vector, d.turns[3].state_vector);
}

TEST(Context, EndToEndCarriesNoVectors) {
    const Dialogue d = handmade_dialogue(6);
    const auto ctx = make_context(d, 5, TaskMode::end_to_end, 4);
    EXPECT_FALSE(ctx.state_vector.has_value());
    EXPECT_FALSE(ctx.db_pointer.has_value());
    EXPECT_EQ(ctx.tokens.front(), "u1");
    EXPECT_EQ(default_window(TaskMode::end_to_end), 4);
    EXPECT_EQ(default_window(TaskMode::context_to_response), 2);
}

TEST(Context, SuppliedSystemHistoryReplacesCorpusResponses) {
    const Dialogue d = handmade_dialogue(3);
    const std::vector<Tokens> history = {{"g0"}, {"g1"}};
    const auto ctx = make_context(d, 2, TaskMode::context_to_response, 2, history);
    const Tokens expected = {"u0", "x0", "<eos>", "g0", "<eos>", "u1", "x1", "<eos>", "g1", "<eos>", "u2", "x2"};
    EXPECT_EQ(ctx.tokens, expected);
}

TEST(Context, RejectsBadArguments) {
    const Dialogue d = handmade_dialogue(2);
    EXPECT_THROW(make_context(d, 2, TaskMode::context_to_response, 2), CorpusError);
    EXPECT_THROW(make_context(d, 0, TaskMode::context_to_response, 0), CorpusError);
}

TEST(Context, LengthBound) {
    const Corpus c = test::small_corpus(60, 9);
    for (int window : {1, 2, 4}) {
        for (const auto& d : c.dialogues) {
            std::size_t longest = 0;
            for (const auto& t : d.turns) longest = std::max({longest, t.user.size(), t.system.size()});
            for (std::size_t i = 0; i < d.turns.size(); ++i) {
                const auto ctx = make_context(d, i, TaskMode::end_to_end, window);
                EXPECT_LE(ctx.tokens.size(), static_cast<std::size_t>(window) * (longest * 2 + 2) + d.turns[i].user.size());
            }
        }
    }
}

namespace {

EntityDatabase tiny_db() {
    EntityDatabase db;
    db.schemas["hotel"] = {{"area", "pricerange"}, {"phone"}};
    db.schemas["city"] = {{"place", "region"}, {"code"}};
    db.entities["hotel"] = {{{"area", "north"}, {"pricerange", "moderate"}, {"phone", "01223"}},
                            {{"area", "south"}, {"pricerange", "expensive"}, {"phone", "01224"}}};
    db.entities["city"] = {{{"place", "new york"}, {"region", "york"}, {"code", "york city centre"}},
                           {{"place", "york"}, {"region", "new"}, {"code", "ny"}}};
    return db;
}

// Brute force: among all segmentations of `u` into known values and single
// tokens, leftmost-longest matching yields the one whose span-length sequence
// is lexicographically greatest.
Tokens brute_force_delex(const Tokens& u, const EntityDatabase& db, const std::string& domain) {
    std::map<Tokens, std::string> table;
    const auto& inf = db.schemas.at(domain).informable;
    for (const auto& e : db.entities.at(domain))
        for (const auto& [slot, value] : e) {
            const bool is_inf = std::find(inf.begin(), inf.end(), slot) != inf.end();
            table.try_emplace(tokenize(value), is_inf ? value_placeholder(slot) : entity_placeholder(domain, slot));
        }
    std::vector<std::size_t> best_lengths;
    Tokens best;
    std::function<void(std::size_t, std::vector<std::size_t>&, Tokens&)> rec = [&](std::size_t i,
                                                                                   std::vector<std::size_t>& lens,
                                                                                   Tokens& out) {
        if (i == u.size()) {
            if (best_lengths.empty() || lens > best_lengths) {
                best_lengths = lens;
                best = out;
            }
            return;
        }
        for (std::size_t len = 1; i + len <= u.size(); ++len) {
            const Tokens span(u.begin() + static_cast<std::ptrdiff_t>(i), u.begin() + static_cast<std::ptrdiff_t>(i + len));
            const auto f = table.find(span);
            if (f == table.end() && len > 1) continue;
            lens.push_back(len);
            out.push_back(f == table.end() ? u[i] : f->second);
            rec(i + len, lens, out);
            lens.pop_back();
            out.pop_back();
        }
    };
    std::vector<std::size_t> lens;
    Tokens out;
    rec(0, lens, out);
    return best;
}

}  // namespace

TEST(Delexicalize, SingleSubstitution) {
    const auto db = tiny_db();
    EXPECT_EQ(delexicalize(tokenize("cheap hotel in north"), db, "hotel"), tokenize("cheap hotel in [value_area]"));
    EXPECT_EQ(delexicalize(tokenize("call 01223 now"), db, "hotel"), tokenize("call [hotel_phone] now"));
}

TEST(Delexicalize, NoValuesMeansUnchanged) {
    const auto db = tiny_db();
    const Tokens u = tokenize("i would like a room please");
    EXPECT_EQ(delexicalize(u, db, "hotel"), u);
    EXPECT_THROW(delexicalize(u, db, "train"), CorpusError);
}

TEST(Delexicalize, LongestMatchWins) {
    const auto db = tiny_db();
    EXPECT_EQ(delexicalize(tokenize("go to new york now"), db, "city"), tokenize("go to [value_place] now"));
}

TEST(Delexicalize, AgreesWithBruteForceOnFiveTokenUtterances) {
    const auto db = tiny_db();
    const Tokens alphabet = {"new", "york", "city", "centre", "ny", "go"};
    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        Tokens u;
        for (int i = 0; i < 5; ++i) u.push_back(rng.pick(alphabet));
        EXPECT_EQ(delexicalize(u, db, "city"), brute_force_delex(u, db, "city")) << join(u);
    }
}

TEST(StateLayout, DatabaseBuckets) {
    EXPECT_EQ(StateLayout::count_bucket(0), 0);
    EXPECT_EQ(StateLayout::count_bucket(1), 1);
    EXPECT_EQ(StateLayout::count_bucket(2), 2);
    EXPECT_EQ(StateLayout::count_bucket(4), 2);
    EXPECT_EQ(StateLayout::count_bucket(5), 3);
    const Corpus c = test::small_corpus(4, 1);
    const StateLayout layout(c.db);
    Constraints cons;
    const auto& d = c.dialogues[0];
    for (const auto& [domain, g] : d.goal) cons[domain] = g.informable;
    EXPECT_EQ(layout.decode_state(layout.encode_state(cons)), cons);
    const auto ptr = layout.encode_db(c.db, cons);
    EXPECT_EQ(ptr.size(), layout.db_size());
    int ones = 0;
    for (int b : ptr) ones += b;
    EXPECT_EQ(ones, static_cast<int>(c.db.domains().size()));
}
