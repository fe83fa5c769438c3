#include "lava/rl.hpp"

#include "lava/objectives.hpp"

#include <cmath>
#include <fstream>

namespace lava::rl {

using nn::Binder;
using nn::Model;
using nn::Tape;
using nn::Var;

std::string to_string(Mode m) { return m == Mode::latent ? "latent" : "word"; }

Mode mode_from_string(const std::string& s) {
    if (s == "latent") return Mode::latent;
    if (s == "word" || s == "word-level") return Mode::word;
    throw RLError("unknown rl mode '" + s + "'");
}

std::vector<corpus::Tokens> Trajectory::responses() const {
    std::vector<corpus::Tokens> out;
    out.reserve(turns.size());
    for (const auto& t : turns) out.push_back(t.response);
    return out;
}

Reward success_reward(const corpus::EntityDatabase& db) {
    const corpus::StateLayout layout(db);
    return [&db, layout](const corpus::Dialogue& d, const Trajectory& tr) {
        const auto run = eval::make_run(d, tr.responses(), layout);
        return eval::judge_success(run, db) ? 1.0 : 0.0;
    };
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw RLError("discount must lie in [0, 1]");
    std::vector<double> out(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    return out;
}

namespace {

struct Encoded {
    nn::EncodedVars enc;
    nn::LatentVars lv;
};

Encoded encode(Binder& b, const corpus::ContextWindow& ctx) {
    const Model& m = b.model;
    if (!m.context_encoder()) throw RLError("policy needs a context encoder");
    const auto ids = m.vocab().encode(ctx.tokens);
    Encoded e;
    e.enc = nn::encode_vars(b, *m.context_encoder(), ids, ctx.state_vector ? &*ctx.state_vector : nullptr,
                            ctx.db_pointer ? &*ctx.db_pointer : nullptr);
    e.lv = nn::project_vars(b, m.projection(), m.config().latent, e.enc.summary);
    return e;
}

}  // namespace

Trajectory run_episode(const corpus::Dialogue& dialogue, const Model& model, const Reward& reward, Mode mode,
                       std::uint64_t seed, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw RLError("discount must lie in [0, 1]");
    Trajectory tr;
    tr.dialogue_id = dialogue.id;
    tr.mode = mode;
    tr.gamma = gamma;
    tr.version = model.version;
    Rng rng(seed);
    const auto& cfg = model.config();
    std::vector<corpus::Tokens> history;
    for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
        TurnRecord rec;
        rec.context = corpus::make_context(dialogue, t, cfg.mode, cfg.window, history);
        Tape tape;
        Binder b(tape, model, {});
        const Encoded e = encode(b, rec.context);
        const auto params = nn::to_params(tape, cfg.latent, e.lv);
        if (!params.finite()) throw train::NumericError("non-finite latent parameters during rollout");
        const auto zmode = mode == Mode::latent ? latent::SampleMode::stochastic : latent::SampleMode::greedy;
        rec.z = latent::sample(params, zmode, cfg.temperature, rng);
        rec.latent_logprob = latent::log_prob(params, rec.z);
        const nn::DecoderStart start = nn::decoder_state(b, nn::latent_constant(tape, rec.z));
        const auto choice = mode == Mode::latent ? nn::TokenChoice::greedy : nn::TokenChoice::sample;
        const nn::DecodeTrace trace = nn::decode_trace(b, start, e.enc.memory, choice, &rng, cfg.decoder.max_length);
        rec.response = model.vocab().decode(trace.tokens);
        if (mode == Mode::word) {
            rec.token_ids = trace.chosen;
            rec.token_logprobs = trace.token_logprobs;
        }
        history.push_back(rec.response);
        tr.turns.push_back(std::move(rec));
    }
    tr.reward = reward(dialogue, tr);
    return tr;
}

std::vector<double> action_returns(const Trajectory& tr) {
    std::vector<double> rewards;
    if (tr.mode == Mode::latent) {
        rewards.assign(tr.turns.size(), 0.0);
    } else {
        for (const auto& t : tr.turns) rewards.insert(rewards.end(), t.token_ids.size(), 0.0);
    }
    if (!rewards.empty()) rewards.back() = tr.reward;
    return discounted_returns(rewards, tr.gamma);
}

PolicyGradient policy_gradient(const Model& model, const Trajectory& tr) {
    PolicyGradient pg;
    pg.grads = model.params().zeros();
    const std::vector<double> returns = action_returns(tr);
    const auto& cfg = model.config();
    std::size_t k = 0;
    for (const auto& rec : tr.turns) {
        Tape tape;
        Binder b(tape, model, nn::ComponentSet::all());
        std::vector<Var> terms;
        std::vector<double> weights;
        if (tr.mode == Mode::latent) {
            const double R = returns[k++];
            if (R == 0.0) continue;
            const Encoded e = encode(b, rec.context);
            terms.push_back(nn::log_prob_var(tape, cfg.latent, e.lv, rec.z));
            weights.push_back(R);
        } else {
            const std::size_t n = rec.token_ids.size();
            bool any = false;
            for (std::size_t j = 0; j < n; ++j) any = any || returns[k + j] != 0.0;
            if (!any || n == 0) {
                k += n;
                continue;
            }
            const Encoded e = encode(b, rec.context);
            const nn::DecoderStart start = nn::decoder_state(b, nn::latent_constant(tape, rec.z));
            const auto steps = nn::teacher_forced_steps(b, start, e.enc.memory, rec.token_ids, false);
            for (std::size_t j = 0; j < n; ++j) {
                terms.push_back(steps[j]);
                weights.push_back(returns[k + j]);
            }
            k += n;
        }
        const Var obj = ad::weighted_sum(tape, terms, weights);
        pg.objective += tape.scalar(obj);
        tape.backward(obj);
        tape.accumulate_param_grads(pg.grads);
    }
    return pg;
}

double policy_gradient_step(Model& model, const Trajectory& tr, double lr, double clip) {
    if (tr.version != model.version)
        throw StaleTrajectory("trajectory from model version " + std::to_string(tr.version) +
                              " applied to version " + std::to_string(model.version));
    PolicyGradient pg = policy_gradient(model, tr);
    const double norm = train::clip_gradients(pg.grads, clip);
    if (!std::isfinite(norm) || !std::isfinite(pg.objective))
        throw train::NumericError("non-finite policy gradient on dialogue '" + tr.dialogue_id + "'");
    if (norm > 0.0) {
        for (std::size_t i = 0; i < model.params().size(); ++i) {
            nn::Parameter& p = model.params()[i];
            if (model.frozen.contains(p.component)) continue;
            p.value += lr * pg.grads[i];
            for (Eigen::Index j = 0; j < p.value.size(); ++j)
                p.value.data()[j] = static_cast<double>(static_cast<float>(p.value.data()[j]));
        }
    }
    ++model.version;
    ++model.step;
    return pg.objective;
}

void RLConfig::validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw RLError("discount must lie in [0, 1]");
    if (!(learning_rate > 0.0)) throw RLError("learning rate must be positive");
    if (!(clip > 0.0)) throw RLError("gradient clip must be positive");
    if (episodes < 0) throw RLError("episode budget must be >= 0");
    if (eval_interval < 1) throw RLError("evaluation interval must be >= 1");
}

nlohmann::ordered_json CurvePoint::to_json() const {
    nlohmann::ordered_json j;
    j["episode"] = episode;
    j["train_reward_mean"] = train_reward_mean;
    j["valid_match"] = valid_match;
    j["valid_success"] = valid_success;
    return j;
}

RLResult train_rl(const RLConfig& config, const Model& init, const corpus::Corpus& corpus,
                  const std::optional<std::filesystem::path>& run_dir,
                  const std::function<void(const CurvePoint&)>& on_eval) {
    config.validate();
    const auto train = corpus::select_split(corpus, corpus::Split::train);
    const auto valid = corpus::select_split(corpus, corpus::Split::valid);
    if (train.empty()) throw RLError("training split is empty");
    Model model = init;
    RLResult result{model, {}, 0};
    const Reward reward = success_reward(corpus.db);

    std::ofstream curve;
    std::optional<std::filesystem::path> best_path;
    if (run_dir) {
        std::filesystem::create_directories(*run_dir);
        curve.open(*run_dir / "curve.jsonl", std::ios::app);
        if (!curve) throw RLError("cannot write learning curve in " + run_dir->string());
    }
    double best_success = -1.0;
    double reward_sum = 0.0;
    int reward_n = 0;
    const auto evaluate = [&](int episode) {
        const auto report = eval::evaluate_model(model, valid, corpus.db);
        CurvePoint p{episode, reward_n > 0 ? reward_sum / reward_n : 0.0, report.match, report.success};
        reward_sum = 0.0;
        reward_n = 0;
        result.curve.push_back(p);
        if (curve) {
            curve << p.to_json().dump() << "\n";
            curve.flush();
        }
        if (report.success > best_success) {
            best_success = report.success;
            result.model = model;
            result.best_episode = episode;
            if (run_dir) {
                if (best_path) std::filesystem::remove(*best_path);
                best_path = *run_dir / ("rl_best_ep" + std::to_string(episode));
                nn::save_checkpoint(model, *best_path);
            }
        }
        if (on_eval) on_eval(p);
    };
    evaluate(0);
    Rng pick(mix_seed(config.seed, 0xd1a1));
    for (int ep = 1; ep <= config.episodes; ++ep) {
        const auto& d = train[pick.below(train.size())];
        const Trajectory tr = run_episode(d, model, reward, config.mode, mix_seed(config.seed, 0xe9150000ULL + ep),
                                          config.gamma);
        reward_sum += tr.reward;
        ++reward_n;
        policy_gradient_step(model, tr, config.learning_rate, config.clip);
        if (ep % config.eval_interval == 0 || ep == config.episodes) evaluate(ep);
    }
    return result;
}

}  // namespace lava::rl
