#pragma once

// Dialogue-level match/success judging against the entity database, corpus
// BLEU, and full rollout evaluation of a response policy.

#include "lava/corpus.hpp"
#include "lava/model.hpp"

#include "json.hpp"

#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lava::eval {

using corpus::Tokens;

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DialogueRun {
    std::string id;
    std::vector<Tokens> responses;
    corpus::Goal goal;
    /// Accumulated informable constraints at each turn.
    std::vector<corpus::Constraints> turn_states;
};

/// Pairs generated responses with the source dialogue's goal and per-turn
/// oracle state. When the state vectors do not fit `layout`, the goal's own
/// constraints stand in for every turn.
DialogueRun make_run(const corpus::Dialogue& source, std::vector<Tokens> responses,
                     const corpus::StateLayout& layout);

struct MatchVerdict {
    std::map<std::string, bool> per_domain;
    bool overall = false;
};

MatchVerdict judge_match(const DialogueRun& run, const corpus::EntityDatabase& db);
bool judge_success(const DialogueRun& run, const corpus::EntityDatabase& db);

/// Corpus-level 4-gram BLEU with brevity penalty, in [0, 1].
double corpus_bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references);

struct DialogueVerdict {
    std::string id;
    bool match = false;
    bool success = false;
};

struct EvaluationReport {
    double match = 0.0;    // percent
    double success = 0.0;  // percent
    double bleu = 0.0;
    std::size_t n_dialogues = 0;
    std::vector<DialogueVerdict> per_dialogue;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    static EvaluationReport from_json(const nlohmann::json& j);
};

/// Produces the system response at `turn_index` given the responses already
/// generated for earlier turns of the same dialogue.
using Responder =
    std::function<Tokens(const corpus::Dialogue& dialogue, std::size_t turn_index, std::span<const Tokens> history)>;

/// Echoes the corpus responses.
Responder gold_responder();

/// Rolls out every dialogue with corpus-replayed user turns and aggregates
/// match, success and BLEU over generated-vs-gold responses.
EvaluationReport evaluate(const Responder& responder, std::span<const corpus::Dialogue> dialogues,
                          const corpus::EntityDatabase& db);

/// Greedy latent, greedy words, generated system history in later contexts.
Responder model_responder(const nn::Model& model);
EvaluationReport evaluate_model(const nn::Model& model, std::span<const corpus::Dialogue> dialogues,
                                const corpus::EntityDatabase& db);

}  // namespace lava::eval
