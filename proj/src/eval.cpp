#include "lava/eval.hpp"

#include <algorithm>
#include <cmath>

namespace lava::eval {

DialogueRun make_run(const corpus::Dialogue& source, std::vector<Tokens> responses,
                     const corpus::StateLayout& layout) {
    if (responses.size() != source.turns.size())
        throw EvalError("dialogue '" + source.id + "': " + std::to_string(responses.size()) +
                        " responses for " + std::to_string(source.turns.size()) + " system turns");
    DialogueRun run;
    run.id = source.id;
    run.goal = source.goal;
    run.responses = std::move(responses);
    corpus::Constraints goal_constraints;
    for (const auto& [domain, g] : source.goal) goal_constraints[domain] = g.informable;
    for (const auto& turn : source.turns) {
        if (turn.state_vector.size() == layout.state_size() && layout.state_size() > 0)
            run.turn_states.push_back(layout.decode_state(turn.state_vector));
        else
            run.turn_states.push_back(goal_constraints);
    }
    return run;
}

namespace {

bool contains(const Tokens& tokens, const std::string& tok) {
    return std::find(tokens.begin(), tokens.end(), tok) != tokens.end();
}

bool subset(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace

MatchVerdict judge_match(const DialogueRun& run, const corpus::EntityDatabase& db) {
    MatchVerdict v;
    v.overall = !run.goal.empty();
    for (const auto& [domain, g] : run.goal) {
        if (!db.has_domain(domain)) throw EvalError("unknown domain '" + domain + "' in dialogue '" + run.id + "'");
        const auto goal_entities = db.query(domain, g.informable);
        const std::string offer = corpus::entity_placeholder(domain, "name");
        bool matched = false;
        for (std::size_t t = 0; t < run.responses.size() && !matched; ++t) {
            if (!contains(run.responses[t], offer)) continue;
            std::map<std::string, std::string> state;
            if (t < run.turn_states.size()) {
                const auto it = run.turn_states[t].find(domain);
                if (it != run.turn_states[t].end()) state = it->second;
            }
            const auto offered = db.query(domain, state);
            matched = !offered.empty() && subset(offered, goal_entities);
        }
        v.per_domain[domain] = matched;
        v.overall = v.overall && matched;
    }
    return v;
}

bool judge_success(const DialogueRun& run, const corpus::EntityDatabase& db) {
    if (!judge_match(run, db).overall) return false;
    for (const auto& [domain, g] : run.goal) {
        for (const auto& slot : g.requestable) {
            const std::string ph = corpus::entity_placeholder(domain, slot);
            const bool provided = std::any_of(run.responses.begin(), run.responses.end(),
                                              [&](const Tokens& r) { return contains(r, ph); });
            if (!provided) return false;
        }
    }
    return true;
}

double corpus_bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references) {
    if (hypotheses.size() != references.size())
        throw EvalError("BLEU needs one reference per hypothesis (" + std::to_string(hypotheses.size()) + " vs " +
                        std::to_string(references.size()) + ")");
    constexpr int kOrder = 4;
    double matched[kOrder] = {0, 0, 0, 0};
    double total[kOrder] = {0, 0, 0, 0};
    double hyp_len = 0.0;
    double ref_len = 0.0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const Tokens& h = hypotheses[i];
        const Tokens& r = references[i];
        hyp_len += static_cast<double>(h.size());
        ref_len += static_cast<double>(r.size());
        for (int n = 1; n <= kOrder; ++n) {
            std::map<std::vector<std::string>, int> ref_counts;
            for (std::size_t k = 0; k + n <= r.size(); ++k) ++ref_counts[{r.begin() + k, r.begin() + k + n}];
            std::map<std::vector<std::string>, int> hyp_counts;
            for (std::size_t k = 0; k + n <= h.size(); ++k) ++hyp_counts[{h.begin() + k, h.begin() + k + n}];
            for (const auto& [gram, c] : hyp_counts) {
                const auto f = ref_counts.find(gram);
                if (f != ref_counts.end()) matched[n - 1] += std::min(c, f->second);
                total[n - 1] += c;
            }
        }
    }
    if (hyp_len == 0.0) return 0.0;
    double log_sum = 0.0;
    for (int n = 0; n < kOrder; ++n) {
        if (total[n] == 0.0 || matched[n] == 0.0) return 0.0;
        log_sum += std::log(matched[n] / total[n]) / kOrder;
    }
    const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
    return bp * std::exp(log_sum);
}

nlohmann::ordered_json EvaluationReport::to_json() const {
    nlohmann::ordered_json j;
    j["match"] = match;
    j["success"] = success;
    j["bleu"] = bleu;
    j["n_dialogues"] = n_dialogues;
    auto per = nlohmann::ordered_json::array();
    for (const auto& v : per_dialogue) per.push_back({{"id", v.id}, {"match", v.match}, {"success", v.success}});
    j["per_dialogue"] = std::move(per);
    return j;
}

EvaluationReport EvaluationReport::from_json(const nlohmann::json& j) {
    EvaluationReport r;
    r.match = j.at("match").get<double>();
    r.success = j.at("success").get<double>();
    r.bleu = j.at("bleu").get<double>();
    r.n_dialogues = j.at("n_dialogues").get<std::size_t>();
    for (const auto& v : j.at("per_dialogue"))
        r.per_dialogue.push_back({v.at("id").get<std::string>(), v.at("match").get<bool>(), v.at("success").get<bool>()});
    return r;
}

Responder gold_responder() {
    return [](const corpus::Dialogue& d, std::size_t t, std::span<const Tokens>) { return d.turns[t].system; };
}

EvaluationReport evaluate(const Responder& responder, std::span<const corpus::Dialogue> dialogues,
                          const corpus::EntityDatabase& db) {
    const corpus::StateLayout layout(db);
    EvaluationReport report;
    std::vector<Tokens> hyps;
    std::vector<Tokens> refs;
    std::size_t n_match = 0;
    std::size_t n_success = 0;
    for (const auto& d : dialogues) {
        std::vector<Tokens> generated;
        for (std::size_t t = 0; t < d.turns.size(); ++t) {
            generated.push_back(responder(d, t, generated));
            hyps.push_back(generated.back());
            refs.push_back(d.turns[t].system);
        }
        const DialogueRun run = make_run(d, std::move(generated), layout);
        const bool match = judge_match(run, db).overall;
        const bool success = judge_success(run, db);
        n_match += match;
        n_success += success;
        report.per_dialogue.push_back({d.id, match, success});
    }
    report.n_dialogues = dialogues.size();
    if (!dialogues.empty()) {
        report.match = 100.0 * static_cast<double>(n_match) / static_cast<double>(dialogues.size());
        report.success = 100.0 * static_cast<double>(n_success) / static_cast<double>(dialogues.size());
    }
    report.bleu = corpus_bleu(hyps, refs);
    return report;
}

Responder model_responder(const nn::Model& model) {
    return [&model](const corpus::Dialogue& d, std::size_t t, std::span<const Tokens> history) {
        const auto ctx = corpus::make_context(d, t, model.config().mode, model.config().window, history);
        return nn::respond_greedy(model, ctx);
    };
}

EvaluationReport evaluate_model(const nn::Model& model, std::span<const corpus::Dialogue> dialogues,
                                const corpus::EntityDatabase& db) {
    return evaluate(model_responder(model), dialogues, db);
}

}  // namespace lava::eval
