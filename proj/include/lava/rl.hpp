#pragma once

// REINFORCE over latent actions (or over words) with corpus-replayed user
// turns and a terminal dialogue-success reward.

#include "lava/corpus.hpp"
#include "lava/eval.hpp"
#include "lava/model.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lava::rl {

class RLError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Trajectory produced under different parameters than the current model.
class StaleTrajectory : public RLError {
public:
    using RLError::RLError;
};

enum class Mode { latent, word };
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct TurnRecord {
    corpus::ContextWindow context;
    latent::LatentSample z;
    double latent_logprob = 0.0;
    corpus::Tokens response;
    /// Word mode: sampled token ids, EOS included when emitted.
    std::vector<int> token_ids;
    std::vector<double> token_logprobs;
};

struct Trajectory {
    std::string dialogue_id;
    Mode mode = Mode::latent;
    std::vector<TurnRecord> turns;
    double reward = 0.0;
    double gamma = 0.99;
    /// Model version the episode was generated with.
    std::uint64_t version = 0;

    [[nodiscard]] std::vector<corpus::Tokens> responses() const;
};

/// Terminal reward of a finished episode.
using Reward = std::function<double(const corpus::Dialogue&, const Trajectory&)>;

/// 1 when the generated dialogue is judged successful, else 0.
Reward success_reward(const corpus::EntityDatabase& db);

/// R_t = sum_{k>=t} gamma^(k-t) r_k.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

/// Latent mode samples z_t ~ p(z|c_t) and decodes greedily; word mode keeps
/// the greedy latent and samples every word. User turns come from the corpus,
/// system history from the episode itself.
Trajectory run_episode(const corpus::Dialogue& dialogue, const nn::Model& model, const Reward& reward, Mode mode,
                       std::uint64_t seed, double gamma = 0.99);

struct PolicyGradient {
    /// Gradient of the surrogate objective sum_t R_t log p(action_t).
    nn::Gradients grads;
    double objective = 0.0;
};

/// Per-action returns: one per turn (latent) or one per emitted token across
/// the whole episode (word), with the reward on the final action.
std::vector<double> action_returns(const Trajectory& trajectory);

PolicyGradient policy_gradient(const nn::Model& model, const Trajectory& trajectory);

/// Plain gradient ascent with norm clipping. Rejects stale trajectories.
/// Returns the surrogate objective.
double policy_gradient_step(nn::Model& model, const Trajectory& trajectory, double lr, double clip = 5.0);

struct RLConfig {
    double gamma = 0.99;
    double learning_rate = 0.01;
    double clip = 5.0;
    int episodes = 2000;
    int eval_interval = 100;
    Mode mode = Mode::latent;
    std::uint64_t seed = 0;

    void validate() const;
};

struct CurvePoint {
    int episode = 0;
    double train_reward_mean = 0.0;
    double valid_match = 0.0;
    double valid_success = 0.0;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct RLResult {
    nn::Model model;
    std::vector<CurvePoint> curve;
    int best_episode = 0;
};

/// Samples training dialogues uniformly, one update per episode, and evaluates
/// on the validation split every `eval_interval` episodes (and once before the
/// first update). Keeps the best-success model; with `run_dir`, appends the
/// curve to curve.jsonl and saves the best model as rl_best_ep{N}.
RLResult train_rl(const RLConfig& config, const nn::Model& init, const corpus::Corpus& corpus,
                  const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                  const std::function<void(const CurvePoint&)>& on_eval = {});

}  // namespace lava::rl
