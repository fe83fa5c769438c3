#include "lava/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace lava::corpus {

WorldSpec default_world() {
    WorldSpec w;
    w.domains = {
        DomainSpec{"hotel",
                   {SlotSpec{"area", {"centre", "east", "north", "south", "west"}},
                    SlotSpec{"pricerange", {"cheap", "expensive", "moderate"}},
                    SlotSpec{"stars", {"2", "3", "4", "5"}}},
                   {"phone", "address", "postcode"}},
        DomainSpec{"restaurant",
                   {SlotSpec{"area", {"centre", "east", "north", "south", "west"}},
                    SlotSpec{"food", {"chinese", "indian", "italian", "british"}},
                    SlotSpec{"pricerange", {"cheap", "expensive", "moderate"}}},
                   {"phone", "address", "postcode"}},
    };
    return w;
}

namespace {

class Script {
public:
    Script(const WorldSpec& world, const EntityDatabase& db, const StateLayout& layout, Rng& rng)
        : world_(world), db_(db), layout_(layout), rng_(rng) {}

    Dialogue run(const std::string& id) {
        Dialogue d;
        d.id = id;
        std::vector<std::size_t> order(world_.domains.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng_.shuffle(order);
        const std::size_t n_domains = rng_.bernoulli(world_.multi_domain_rate) ? 2 : 1;
        state_.clear();
        turns_.clear();
        for (std::size_t k = 0; k < n_domains; ++k) {
            const DomainSpec& spec = world_.domains[order[k]];
            segment(spec, k > 0, d.goal);
        }
        const std::string& last = world_.domains[order[n_domains - 1]].name;
        add_turn(rng_.pick(std::vector<std::string>{"thank you , that is all i need .", "thanks , goodbye ."}),
                 "you are welcome . goodbye .", last, {"inform-" + last});
        d.turns = std::move(turns_);
        return d;
    }

private:
    static std::string phrase(const std::string& slot) {
        if (slot == "area") return "in the " + value_placeholder(slot);
        if (slot == "pricerange") return "that is " + value_placeholder(slot);
        if (slot == "stars") return "with " + value_placeholder(slot) + " stars";
        if (slot == "food") return "serving " + value_placeholder(slot) + " food";
        return "with " + value_placeholder(slot) + " " + slot;
    }

    static std::string phrases(const std::vector<std::string>& slots) {
        std::string out;
        for (const auto& s : slots) {
            if (!out.empty()) out += " ";
            out += phrase(s);
        }
        return out;
    }

    void add_turn(const std::string& user, const std::string& system, const std::string& domain,
                  std::vector<std::string> actions) {
        Turn t;
        t.user = tokenize(user);
        t.system = tokenize(system);
        t.state_vector = layout_.encode_state(state_);
        t.db_pointer = layout_.encode_db(db_, state_);
        t.domain = domain;
        std::sort(actions.begin(), actions.end());
        t.actions = std::move(actions);
        turns_.push_back(std::move(t));
    }

    void segment(const DomainSpec& spec, bool follow_up, Goal& goal) {
        const std::string& dom = spec.name;
        const auto& ents = db_.entities.at(dom);
        const Entity& target = ents[rng_.below(ents.size())];
        DomainGoal g;
        std::vector<std::string> slots;
        for (const auto& s : spec.informable) {
            g.informable[s.name] = target.at(s.name);
            slots.push_back(s.name);
        }
        std::vector<std::string> req = spec.requestable;
        rng_.shuffle(req);
        const std::size_t n_req = (req.size() >= 2 && rng_.bernoulli(world_.two_request_rate)) ? 2 : 1;
        req.resize(n_req);
        g.requestable = req;
        goal[dom] = g;

        const std::string opener =
            follow_up ? rng_.pick(std::vector<std::string>{"i also need a", "i am also looking for a"})
                      : rng_.pick(std::vector<std::string>{"i am looking for a", "i need a", "can you help me find a"});

        // Inform phase: either all constraints at once, or a subset followed by a system request.
        std::vector<std::string> first = slots;
        std::vector<std::string> rest;
        if (slots.size() >= 2 && rng_.bernoulli(world_.split_inform_rate)) {
            std::vector<std::string> shuffled = slots;
            rng_.shuffle(shuffled);
            const std::size_t k = 1 + rng_.below(slots.size() - 1);
            std::set<std::string> chosen(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k));
            first.clear();
            for (const auto& s : slots) (chosen.contains(s) ? first : rest).push_back(s);
        }
        for (const auto& s : first) state_[dom][s] = g.informable[s];
        const std::string name = entity_placeholder(dom, "name");
        const auto offer = [&]() -> std::pair<std::string, std::vector<std::string>> {
            if (rng_.bernoulli(0.5)) return {name + " fits your criteria .", {"offer-" + dom}};
            return {name + " is available . shall i book it ?", {"offer-" + dom, "book-" + dom}};
        };
        const std::string open_user = opener + " " + dom + " " + phrases(first) + " .";
        if (rest.empty()) {
            auto [sys, acts] = offer();
            add_turn(open_user, sys, dom, acts);
        } else {
            add_turn(open_user, "what " + rest.front() + " would you like ?", dom, {"request-" + dom});
            for (const auto& s : rest) state_[dom][s] = g.informable[s];
            auto [sys, acts] = offer();
            add_turn(phrases(rest) + " please .", sys, dom, acts);
        }

        if (rng_.bernoulli(world_.booking_rate)) {
            add_turn("yes please book it for [value_people] people .",
                     "done . your reference number is " + entity_placeholder(dom, "reference") + " .", dom,
                     {"book-" + dom});
        }

        const std::string ask = rng_.pick(std::vector<std::string>{"can you give me the", "what is the"});
        const auto answer = [&](const std::string& slot) {
            return "the " + slot + " is " + entity_placeholder(dom, slot);
        };
        if (n_req == 1) {
            add_turn(ask + " " + req[0] + " ?", answer(req[0]) + " .", dom, {"answer-" + dom});
        } else if (!rng_.bernoulli(world_.partial_answer_rate)) {
            add_turn(ask + " " + req[0] + " and " + req[1] + " ?", answer(req[0]) + " and " + answer(req[1]) + " .",
                     dom, {"answer-" + dom});
        } else {
            add_turn(ask + " " + req[0] + " and " + req[1] + " ?", answer(req[0]) + " .", dom, {"answer-" + dom});
            add_turn(rng_.pick(std::vector<std::string>{"and the", "what about the"}) + " " + req[1] + " ?",
                     answer(req[1]) + " .", dom, {"answer-" + dom});
        }
    }

    const WorldSpec& world_;
    const EntityDatabase& db_;
    const StateLayout& layout_;
    Rng& rng_;
    Constraints state_;
    std::vector<Turn> turns_;
};

void check_world(const WorldSpec& w) {
    if (w.domains.size() < 2) throw CorpusError("world spec needs at least 2 domains");
    std::set<std::string> names;
    for (const auto& d : w.domains) {
        if (!names.insert(d.name).second) throw CorpusError("duplicate domain '" + d.name + "'");
        if (d.informable.size() < 2)
            throw CorpusError("domain '" + d.name + "' needs at least 2 informable slots");
        if (d.requestable.empty()) throw CorpusError("domain '" + d.name + "' needs at least 1 requestable slot");
        for (const auto& s : d.informable)
            if (s.values.empty())
                throw CorpusError("generation error: slot '" + s.name + "' of '" + d.name + "' has no values");
    }
    if (w.entities_per_domain < 1) throw CorpusError("generation error: no entities, so no goal is satisfiable");
    if (w.dialogue_count < 0) throw CorpusError("dialogue count must be non-negative");
    if (w.max_turns < 3 || w.min_turns > w.max_turns)
        throw CorpusError("generation error: turns range admits no scripted dialogue");
}

}  // namespace

Corpus generate_synthetic_corpus(const WorldSpec& world, std::uint64_t seed) {
    check_world(world);
    Rng rng(mix_seed(seed, 0x5e7));
    Corpus c;
    for (const auto& d : world.domains) {
        DomainSchema schema;
        for (const auto& s : d.informable) schema.informable.push_back(s.name);
        schema.requestable = d.requestable;
        c.db.schemas[d.name] = schema;
        auto& list = c.db.entities[d.name];
        for (int i = 0; i < world.entities_per_domain; ++i) {
            Entity e;
            e["name"] = d.name + " " + std::to_string(i);
            for (const auto& s : d.informable) e[s.name] = rng.pick(s.values);
            char buf[32];
            std::snprintf(buf, sizeof buf, "01223 %06llu", static_cast<unsigned long long>(rng.below(1000000)));
            for (const auto& r : d.requestable) {
                if (r == "phone") e[r] = buf;
                else if (r == "address") e[r] = std::to_string(1 + rng.below(99)) + " " + d.name + " street";
                else if (r == "postcode") e[r] = "cb" + std::to_string(1 + rng.below(9)) + " " + std::to_string(rng.below(10));
                else e[r] = r + " of " + d.name + " " + std::to_string(i);
            }
            list.push_back(std::move(e));
        }
    }
    const StateLayout layout(c.db);
    Script script(world, c.db, layout, rng);
    const int width = 5;
    for (int n = 0; n < world.dialogue_count; ++n) {
        char id[32];
        std::snprintf(id, sizeof id, "syn-%0*d", width, n);
        bool done = false;
        for (int attempt = 0; attempt < 200 && !done; ++attempt) {
            Dialogue d = script.run(id);
            const int len = static_cast<int>(d.turns.size());
            if (len >= world.min_turns && len <= world.max_turns) {
                c.dialogues.push_back(std::move(d));
                done = true;
            }
        }
        if (!done) throw CorpusError("generation error: no script fits the turns range");
    }
    c.has_action_labels = true;
    validate(c);
    return c;
}

}  // namespace lava::corpus
