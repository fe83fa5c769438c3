#include "lava/objectives.hpp"

#include <cmath>

namespace lava::train {

using nn::Binder;
using nn::Component;
using nn::ComponentSet;
using nn::LatentVars;
using nn::Model;
using nn::Tape;
using nn::Var;

std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::mle: return "mle";
        case Scheme::lite: return "lite";
        case Scheme::full: return "full";
        case Scheme::vae: return "vae";
        case Scheme::pt_all: return "pt_all";
        case Scheme::pt_selective: return "pt_selective";
        case Scheme::kl_prior: return "kl_prior";
        case Scheme::multitask: return "multitask";
    }
    return "?";
}

Scheme scheme_from_string(const std::string& s) {
    for (Scheme x : {Scheme::mle, Scheme::lite, Scheme::full, Scheme::vae, Scheme::pt_all, Scheme::pt_selective,
                     Scheme::kl_prior, Scheme::multitask})
        if (to_string(x) == s) return x;
    throw TrainError("unknown scheme '" + s + "'");
}

double default_beta(Scheme s) { return s == Scheme::kl_prior ? 0.1 : 0.01; }

bool needs_init(Scheme s) { return s == Scheme::pt_all || s == Scheme::pt_selective || s == Scheme::kl_prior; }

std::string to_string(Task t) { return t == Task::rg ? "RG" : "AE"; }

std::vector<Example> make_examples(std::span<const corpus::Dialogue> dialogues, corpus::TaskMode mode, int window) {
    std::vector<Example> out;
    for (const auto& d : dialogues) {
        for (std::size_t t = 0; t < d.turns.size(); ++t)
            out.push_back({d.id, t, corpus::make_context(d, t, mode, window), d.turns[t].system});
    }
    return out;
}

Prior default_prior(const latent::LatentSpec& spec) {
    return spec.kind == latent::Kind::categorical ? Prior::uniform : Prior::standard_normal;
}

namespace {

struct Terms {
    Var nll;
    std::optional<Var> kl;
};

/// Assembles the batch mean of nll + beta * kl on one tape and backpropagates.
template <class PerExample>
LossBreakdown run_batch(const Model& model, std::span<const Example> batch, double beta, ComponentSet trainable,
                        const LossOptions& options, PerExample&& per_example) {
    if (batch.empty()) throw TrainError("empty batch");
    Tape t;
    Binder b(t, model, options.grads ? trainable : ComponentSet{});
    std::vector<Var> terms;
    std::vector<double> weights;
    const double inv = 1.0 / static_cast<double>(batch.size());
    double nll = 0.0;
    double kl = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng rng(mix_seed(options.noise_seed, i));
        const Terms r = per_example(b, batch[i], rng);
        nll += t.scalar(r.nll);
        terms.push_back(r.nll);
        weights.push_back(inv);
        if (r.kl) {
            kl += t.scalar(*r.kl);
            terms.push_back(*r.kl);
            weights.push_back(beta * inv);
        }
    }
    LossBreakdown lb;
    lb.nll = nll * inv;
    lb.kl = kl * inv;
    lb.beta = beta;
    lb.total = lb.nll + beta * lb.kl;
    if (!std::isfinite(lb.total))
        throw NumericError("non-finite loss (nll=" + std::to_string(lb.nll) + ", kl=" + std::to_string(lb.kl) + ")");
    if (options.grads) {
        const Var total = ad::weighted_sum(t, terms, weights);
        t.backward(total);
        t.accumulate_param_grads(*options.grads);
    }
    return lb;
}

std::vector<int> ids(const Model& m, const corpus::Tokens& tokens) { return m.vocab().encode(tokens); }

nn::EncodedVars encode_context_vars(Binder& b, const Example& ex) {
    const Model& m = b.model;
    if (!m.context_encoder()) throw TrainError("model has no context encoder");
    const auto tok = ids(m, ex.context.tokens);
    return nn::encode_vars(b, *m.context_encoder(), tok, ex.context.state_vector ? &*ex.context.state_vector : nullptr,
                           ex.context.db_pointer ? &*ex.context.db_pointer : nullptr);
}

nn::EncodedVars encode_response_vars(Binder& b, const Example& ex) {
    const Model& m = b.model;
    if (!m.response_encoder()) throw TrainError("model has no response encoder");
    const auto tok = ids(m, ex.response);
    return nn::encode_vars(b, *m.response_encoder(), tok);
}

/// Samples z from the distribution held in `lv` and returns the decoder input.
Var draw(Binder& b, const LatentVars& lv, latent::SampleMode mode, Rng& rng, const LossOptions& options) {
    const Model& m = b.model;
    const auto params = nn::to_params(b.tape, m.config().latent, lv);
    if (!params.finite()) throw NumericError("non-finite latent parameters");
    const auto s = latent::sample(params, mode, m.config().temperature, rng);
    return nn::latent_input(b.tape, m.config().latent, lv, s, m.config().temperature, options.relaxed_forward);
}

Var reconstruction_nll(Binder& b, Var latent_in, std::optional<Var> memory, const Example& ex) {
    const nn::DecoderStart start = nn::decoder_state(b, latent_in);
    const auto target = ids(b.model, ex.response);
    const auto steps = nn::teacher_forced_steps(b, start, memory, target);
    const std::vector<double> w(steps.size(), -1.0);
    return ad::weighted_sum(b.tape, steps, w);
}

Var prior_kl(Binder& b, const LatentVars& lv, Prior prior) {
    const auto& spec = b.model.config().latent;
    if (default_prior(spec) != prior) throw TrainError("prior does not match the latent kind");
    return nn::kl_vars(b.tape, spec, lv, nullptr);
}

ComponentSet rg_components() { return {Component::rg_encoder, Component::latent_projection, Component::decoder}; }
ComponentSet ae_components() { return {Component::ae_encoder, Component::latent_projection, Component::decoder}; }

LossBreakdown lite_impl(const Model& model, std::span<const Example> batch, double beta, const LossOptions& options,
                        Prior prior, ComponentSet trainable) {
    return run_batch(model, batch, beta, trainable, options, [&](Binder& b, const Example& ex, Rng& rng) {
        const auto enc = encode_context_vars(b, ex);
        const auto lv = nn::project_vars(b, model.projection(), model.config().latent, enc.summary);
        const Var z = draw(b, lv, latent::SampleMode::stochastic, rng, options);
        return Terms{reconstruction_nll(b, z, enc.memory, ex), prior_kl(b, lv, prior)};
    });
}

LossBreakdown vae_impl(const Model& model, std::span<const Example> batch, double beta, const LossOptions& options,
                       ComponentSet trainable) {
    return run_batch(model, batch, beta, trainable, options, [&](Binder& b, const Example& ex, Rng& rng) {
        const auto enc = encode_response_vars(b, ex);
        const auto lv = nn::project_vars(b, model.projection(), model.config().latent, enc.summary);
        const Var z = draw(b, lv, latent::SampleMode::stochastic, rng, options);
        return Terms{reconstruction_nll(b, z, std::nullopt, ex), prior_kl(b, lv, default_prior(model.config().latent))};
    });
}

}  // namespace

LossBreakdown loss_mle(const Model& model, std::span<const Example> batch, const LossOptions& options) {
    return run_batch(model, batch, 0.0, ComponentSet::all(), options, [&](Binder& b, const Example& ex, Rng& rng) {
        const auto enc = encode_context_vars(b, ex);
        const auto lv = nn::project_vars(b, model.projection(), model.config().latent, enc.summary);
        const Var z = draw(b, lv, latent::SampleMode::greedy, rng, options);
        return Terms{reconstruction_nll(b, z, enc.memory, ex), std::nullopt};
    });
}

LossBreakdown loss_elbo_lite(const Model& model, std::span<const Example> batch, double beta,
                             const LossOptions& options, std::optional<Prior> prior) {
    return lite_impl(model, batch, beta, options, prior.value_or(default_prior(model.config().latent)),
                     ComponentSet::all());
}

LossBreakdown loss_elbo_full(const Model& model, std::span<const Example> batch, const LossOptions& options) {
    if (!model.posterior_projection() || !model.response_encoder() || !model.context_encoder())
        throw TrainError("full ELBO needs a posterior encoder");
    return run_batch(model, batch, 1.0, ComponentSet::all(), options, [&](Binder& b, const Example& ex, Rng& rng) {
        const auto& spec = model.config().latent;
        const auto ctx = encode_context_vars(b, ex);
        const auto resp = encode_response_vars(b, ex);
        const std::array<Var, 2> parts{resp.summary, ctx.summary};
        const Var joint = ad::concat(b.tape, parts);
        const auto q = nn::project_vars(b, *model.posterior_projection(), spec, joint);
        const auto p = nn::project_vars(b, model.projection(), spec, ctx.summary);
        const Var z = draw(b, q, latent::SampleMode::stochastic, rng, options);
        return Terms{reconstruction_nll(b, z, ctx.memory, ex), nn::kl_vars(b.tape, spec, q, &p)};
    });
}

LossBreakdown loss_vae(const Model& model, std::span<const Example> batch, double beta, const LossOptions& options) {
    return vae_impl(model, batch, beta, options, ComponentSet::all());
}

LossBreakdown loss_lava_kl(const Model& model, std::span<const Example> batch, double beta,
                           const LossOptions& options) {
    if (!model.response_encoder() || !model.prior_projection())
        throw TrainError("informed-prior loss needs a frozen VAE encoder");
    ComponentSet trainable = ComponentSet::all();
    trainable.erase(Component::ae_encoder);
    return run_batch(model, batch, beta, trainable, options, [&](Binder& b, const Example& ex, Rng& rng) {
        const auto& spec = model.config().latent;
        const auto ctx = encode_context_vars(b, ex);
        const auto p = nn::project_vars(b, model.projection(), spec, ctx.summary);
        const auto resp = encode_response_vars(b, ex);
        const auto q_raw = nn::project_vars(b, *model.prior_projection(), spec, resp.summary);
        LatentVars q;
        if (spec.kind == latent::Kind::categorical) {
            q.logits = ad::stop_gradient(b.tape, q_raw.logits);
        } else {
            q.mean = ad::stop_gradient(b.tape, q_raw.mean);
            q.logvar = ad::stop_gradient(b.tape, q_raw.logvar);
        }
        const Var z = draw(b, p, latent::SampleMode::stochastic, rng, options);
        return Terms{reconstruction_nll(b, z, ctx.memory, ex), nn::kl_vars(b.tape, spec, p, &q)};
    });
}

Task multitask_schedule(std::uint64_t step, int a, int b) {
    if (a < 1 || b < 1) throw TrainError("multitask ratio terms must be >= 1");
    const auto period = static_cast<std::uint64_t>(a) + static_cast<std::uint64_t>(b);
    return step % period < static_cast<std::uint64_t>(a) ? Task::rg : Task::ae;
}

LossBreakdown loss_multitask_rg(const Model& model, std::span<const Example> batch, double beta,
                                const LossOptions& options) {
    return lite_impl(model, batch, beta, options, default_prior(model.config().latent), rg_components());
}

LossBreakdown loss_multitask_ae(const Model& model, std::span<const Example> batch, double beta,
                                const LossOptions& options) {
    return vae_impl(model, batch, beta, options, ae_components());
}

ComponentSet updated_components(Scheme s, std::uint64_t step, int a, int b) {
    switch (s) {
        case Scheme::multitask: return multitask_schedule(step, a, b) == Task::rg ? rg_components() : ae_components();
        case Scheme::kl_prior: {
            ComponentSet c = ComponentSet::all();
            c.erase(Component::ae_encoder);
            return c;
        }
        case Scheme::pt_selective: return {Component::rg_encoder};
        default: return ComponentSet::all();
    }
}

LossBreakdown scheme_loss(Scheme scheme, const Model& model, std::span<const Example> batch, double beta,
                          std::uint64_t step, int a, int b, const LossOptions& options) {
    switch (scheme) {
        case Scheme::mle: return loss_mle(model, batch, options);
        case Scheme::lite:
        case Scheme::pt_all:
        case Scheme::pt_selective: return loss_elbo_lite(model, batch, beta, options);
        case Scheme::full: return loss_elbo_full(model, batch, options);
        case Scheme::vae: return loss_vae(model, batch, beta, options);
        case Scheme::kl_prior: return loss_lava_kl(model, batch, beta, options);
        case Scheme::multitask:
            return multitask_schedule(step, a, b) == Task::rg ? loss_multitask_rg(model, batch, beta, options)
                                                              : loss_multitask_ae(model, batch, beta, options);
    }
    throw TrainError("unknown scheme");
}

// ---------------------------------------------------------------------------

double clip_gradients(nn::Gradients& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& g : grads) g *= s;
    }
    return norm;
}

void Adam::step(Model& model, const nn::Gradients& grads, ComponentSet components) {
    auto& params = model.params();
    if (grads.size() != params.size()) throw TrainError("gradient buffer does not match the parameters");
    if (m_.size() != params.size()) {
        m_ = params.zeros();
        v_ = params.zeros();
        t_.assign(params.size(), 0);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        nn::Parameter& p = params[i];
        if (!components.contains(p.component) || model.frozen.contains(p.component)) continue;
        const auto& g = grads[i];
        ++t_[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_[i]));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_[i]));
        p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
        for (Eigen::Index k = 0; k < p.value.size(); ++k)
            p.value.data()[k] = static_cast<double>(static_cast<float>(p.value.data()[k]));
    }
}

}  // namespace lava::train
