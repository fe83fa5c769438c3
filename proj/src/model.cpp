#include "lava/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lava::nn {

std::string to_string(Component c) {
    switch (c) {
        case Component::rg_encoder: return "rg_encoder";
        case Component::ae_encoder: return "ae_encoder";
        case Component::latent_projection: return "latent_projection";
        case Component::decoder: return "decoder";
    }
    return "?";
}

Component component_from_string(const std::string& s) {
    for (Component c : kComponents)
        if (to_string(c) == s) return c;
    throw ModelError("unknown component '" + s + "'");
}

std::size_t ParamStore::add(const std::string& name, Component component, Eigen::Index rows, Eigen::Index cols) {
    if (by_name_.contains(name)) throw ModelError("duplicate parameter '" + name + "'");
    params_.push_back({name, component, Matrix::Zero(rows, cols)});
    by_name_[name] = params_.size() - 1;
    return params_.size() - 1;
}

std::size_t ParamStore::index(const std::string& name) const {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ModelError("no parameter named '" + name + "'");
    return it->second;
}

std::vector<Matrix> ParamStore::zeros() const {
    std::vector<Matrix> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    return out;
}

DecoderConfig DecoderConfig::for_latent(latent::Kind kind) {
    DecoderConfig d;
    if (kind == latent::Kind::gaussian) {
        d.hidden = 300;
        d.attention = false;
    }
    return d;
}

namespace {

bool is_bias(const std::string& name) {
    const auto dot = name.rfind('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    return leaf == "b" || leaf == "bx" || leaf == "bh";
}

int latent_embed_size(const ModelConfig& c) {
    return c.latent.kind == latent::Kind::categorical ? c.latent.M * c.decoder.latent_embed : c.decoder.latent_embed;
}

void check_config(const ModelConfig& c, std::size_t vocab) {
    c.latent.validate();
    if (c.encoder.hidden <= 0 || c.encoder.embed <= 0) throw ModelError("encoder sizes must be positive");
    if (c.decoder.hidden <= 0 || c.decoder.embed <= 0) throw ModelError("decoder hidden size must be positive");
    if (c.decoder.max_length <= 0) throw ModelError("max decode length must be positive");
    if (c.decoder.latent_embed <= 0) throw ModelError("latent embedding size must be positive");
    if (c.encoder.state_size < 0 || c.encoder.db_size < 0) throw ModelError("conditioning sizes must be >= 0");
    if (!(c.temperature > 0.0)) throw ModelError("temperature must be positive");
    if (!c.has_context_encoder && !c.has_response_encoder) throw ModelError("model needs at least one encoder");
    if (c.has_posterior && !(c.has_context_encoder && c.has_response_encoder))
        throw ModelError("posterior projection needs both encoders");
    if (c.has_prior_projection && !c.has_response_encoder)
        throw ModelError("prior projection needs a response encoder");
    if (vocab <= static_cast<std::size_t>(corpus::Vocabulary::kReserved)) throw ModelError("vocabulary is empty");
}

}  // namespace

Model::Model(ModelConfig config, corpus::Vocabulary vocab, std::uint64_t seed_)
    : seed(seed_), config_(std::move(config)), vocab_(std::move(vocab)) {
    check_config(config_, vocab_.size());
    const int V = static_cast<int>(vocab_.size());
    const int S = config_.encoder.summary_size();
    const int P = config_.latent.param_size();
    if (config_.has_context_encoder) rg_ = add_encoder("rg_encoder", Component::rg_encoder, true);
    if (config_.has_response_encoder) ae_ = add_encoder("ae_encoder", Component::ae_encoder, false);
    proj_.w = params_.add("latent_projection.w", Component::latent_projection, P, S);
    proj_.b = params_.add("latent_projection.b", Component::latent_projection, P, 1);
    if (config_.has_posterior) {
        post_ = ProjectionParams{params_.add("latent_projection.posterior.w", Component::latent_projection, P, 2 * S),
                                 params_.add("latent_projection.posterior.b", Component::latent_projection, P, 1)};
    }
    if (config_.has_prior_projection) {
        prior_ = ProjectionParams{params_.add("ae_encoder.projection.w", Component::ae_encoder, P, S),
                                  params_.add("ae_encoder.projection.b", Component::ae_encoder, P, 1)};
    }
    const auto& dc = config_.decoder;
    const int L = latent_embed_size(config_);
    dec_.embedding = params_.add("decoder.embedding", Component::decoder, dc.embed, V);
    if (config_.latent.kind == latent::Kind::categorical)
        dec_.latent_table = params_.add("decoder.latent_table", Component::decoder, L, config_.latent.K);
    else
        dec_.latent_table = params_.add("decoder.latent_table", Component::decoder, L, config_.latent.M);
    dec_.init_w = params_.add("decoder.init.w", Component::decoder, dc.hidden, L);
    dec_.init_b = params_.add("decoder.init.b", Component::decoder, dc.hidden, 1);
    dec_.cell = add_gru("decoder.gru", Component::decoder, dc.embed + L, dc.hidden);
    const int out_in = dc.attention ? dc.hidden + S : dc.hidden;
    if (dc.attention) dec_.attention = params_.add("decoder.attention.w", Component::decoder, S, dc.hidden);
    dec_.out_w = params_.add("decoder.out.w", Component::decoder, V, out_in);
    dec_.out_b = params_.add("decoder.out.b", Component::decoder, V, 1);

    Rng rng(mix_seed(seed, 0x1417));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = params_[i];
        if (is_bias(p.name)) continue;
        for (Eigen::Index c = 0; c < p.value.cols(); ++c)
            for (Eigen::Index r = 0; r < p.value.rows(); ++r) p.value(r, c) = rng.uniform(-0.1, 0.1);
    }
    round_to_float();
}

GruParams Model::add_gru(const std::string& prefix, Component c, int in, int hidden) {
    GruParams g;
    g.wx = params_.add(prefix + ".wx", c, 3 * hidden, in);
    g.wh = params_.add(prefix + ".wh", c, 3 * hidden, hidden);
    g.bx = params_.add(prefix + ".bx", c, 3 * hidden, 1);
    g.bh = params_.add(prefix + ".bh", c, 3 * hidden, 1);
    return g;
}

EncoderParams Model::add_encoder(const std::string& prefix, Component c, bool conditioning) {
    const auto& ec = config_.encoder;
    EncoderParams e;
    e.embedding = params_.add(prefix + ".embedding", c, ec.embed, static_cast<Eigen::Index>(vocab_.size()));
    e.fwd = add_gru(prefix + ".fwd", c, ec.embed, ec.hidden);
    if (ec.bidirectional) e.bwd = add_gru(prefix + ".bwd", c, ec.embed, ec.hidden);
    if (conditioning && ec.state_size > 0)
        e.state_proj = params_.add(prefix + ".state_proj.w", c, ec.summary_size(), ec.state_size);
    if (conditioning && ec.db_size > 0)
        e.db_proj = params_.add(prefix + ".db_proj.w", c, ec.summary_size(), ec.db_size);
    return e;
}

void Model::copy_from(const Model& other, ComponentSet components) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = params_[i];
        if (!components.contains(p.component) || !other.params_.contains(p.name)) continue;
        const Parameter& q = other.params_[other.params_.index(p.name)];
        if (q.value.rows() != p.value.rows() || q.value.cols() != p.value.cols())
            throw ModelError("shape mismatch copying '" + p.name + "'");
        p.value = q.value;
    }
}

void Model::round_to_float() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Matrix& v = params_[i].value;
        for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = static_cast<double>(static_cast<float>(v.data()[k]));
    }
}

// ---------------------------------------------------------------------------

Binder::Binder(Tape& t, const Model& m, ComponentSet trainable) : tape(t), model(m), trainable_(trainable) {}

Var Binder::operator()(std::size_t index) {
    const Parameter& p = model.params()[index];
    const bool train = trainable_.contains(p.component) && !model.frozen.contains(p.component);
    return tape.param(index, p.value, train);
}

namespace {

Var embed(Binder& b, std::size_t table, int token) { return ad::column(b.tape, b(table), token); }

Var gru(Binder& b, const GruParams& g, Var x, Var h) {
    return ad::gru_step(b.tape, x, h, b(g.wx), b(g.wh), b(g.bx), b(g.bh));
}

Var attend(Binder& b, Var memory, Var h) {
    Tape& t = b.tape;
    const Var q = ad::matmul(t, b(b.model.decoder().attention), h);
    const Var scores = ad::matmul_tn(t, memory, q);
    const Var alpha = ad::softmax(t, scores);
    return ad::matmul(t, memory, alpha);
}

Var step_logits(Binder& b, Var h, const std::optional<Var>& memory) {
    Tape& t = b.tape;
    const auto& dec = b.model.decoder();
    const auto& cfg = b.model.config();
    Var features = h;
    if (cfg.decoder.attention) {
        Var ctx;
        if (memory) {
            ctx = attend(b, *memory, h);
        } else {
            ctx = t.constant(Matrix::Zero(cfg.encoder.summary_size(), 1));
        }
        const std::array<Var, 2> parts{h, ctx};
        features = ad::concat(t, parts);
    }
    return ad::affine(t, b(dec.out_w), features, b(dec.out_b));
}

Var step_input(Binder& b, int token, Var latent) {
    const std::array<Var, 2> parts{embed(b, b.model.decoder().embedding, token), latent};
    return ad::concat(b.tape, parts);
}

void check_tokens(const Model& model, std::span<const int> tokens) {
    if (tokens.empty()) throw ModelError("empty token sequence");
    const int V = static_cast<int>(model.vocab().size());
    for (int tok : tokens)
        if (tok < 0 || tok >= V) throw ModelError("token index " + std::to_string(tok) + " outside vocabulary");
}

}  // namespace

EncodedVars encode_vars(Binder& b, const EncoderParams& enc, std::span<const int> tokens, const std::vector<int>* state,
                        const std::vector<int>* db) {
    check_tokens(b.model, tokens);
    Tape& t = b.tape;
    const auto& ec = b.model.config().encoder;
    const int T = static_cast<int>(tokens.size());
    std::vector<Var> xs;
    xs.reserve(tokens.size());
    for (int tok : tokens) xs.push_back(embed(b, enc.embedding, tok));
    std::vector<Var> fwd(T), bwd(T);
    Var h = t.constant(Matrix::Zero(ec.hidden, 1));
    for (int i = 0; i < T; ++i) h = fwd[i] = gru(b, enc.fwd, xs[i], h);
    Var summary = fwd[T - 1];
    std::vector<Var> cols;
    cols.reserve(tokens.size());
    if (ec.bidirectional) {
        Var hb = t.constant(Matrix::Zero(ec.hidden, 1));
        for (int i = T - 1; i >= 0; --i) hb = bwd[i] = gru(b, enc.bwd, xs[i], hb);
        const std::array<Var, 2> parts{fwd[T - 1], bwd[0]};
        summary = ad::concat(t, parts);
        for (int i = 0; i < T; ++i) {
            const std::array<Var, 2> both{fwd[i], bwd[i]};
            cols.push_back(ad::concat(t, both));
        }
    } else {
        cols = fwd;
    }
    const auto condition = [&](const std::optional<std::size_t>& proj, const std::vector<int>* vec, int size,
                               const char* what) {
        if (!proj || vec == nullptr) return;
        if (static_cast<int>(vec->size()) != size)
            throw ModelError(std::string(what) + " has " + std::to_string(vec->size()) + " entries, expected " +
                             std::to_string(size));
        Matrix v(size, 1);
        for (int i = 0; i < size; ++i) v(i, 0) = (*vec)[static_cast<std::size_t>(i)];
        summary = ad::add(t, summary, ad::matmul(t, b(*proj), t.constant(std::move(v))));
    };
    condition(enc.state_proj, state, ec.state_size, "state vector");
    condition(enc.db_proj, db, ec.db_size, "db pointer");
    return {summary, ad::hstack(t, cols)};
}

LatentVars project_vars(Binder& b, const ProjectionParams& proj, const latent::LatentSpec& spec, Var summary) {
    Tape& t = b.tape;
    const Var w = b(proj.w);
    if (t.value(w).cols() != t.value(summary).rows())
        throw ModelError("summary size " + std::to_string(t.value(summary).rows()) + " does not match projection input " +
                         std::to_string(t.value(w).cols()));
    const Var out = ad::affine(t, w, summary, b(proj.b));
    LatentVars v;
    if (spec.kind == latent::Kind::categorical) {
        v.logits = ad::reshape_rows(t, out, spec.M, spec.K);
    } else {
        v.mean = ad::slice(t, out, 0, spec.M);
        v.logvar = ad::slice(t, out, spec.M, spec.M);
    }
    return v;
}

latent::DistributionParams to_params(const Tape& t, const latent::LatentSpec& spec, const LatentVars& v) {
    if (spec.kind == latent::Kind::categorical) return latent::DistributionParams::categorical(t.value(v.logits));
    return latent::DistributionParams::gaussian(t.value(v.mean).col(0), t.value(v.logvar).col(0));
}

Var latent_input(Tape& t, const latent::LatentSpec& spec, const LatentVars& v, const latent::LatentSample& s,
                 double temperature, bool relaxed_forward) {
    if (!(s.spec == spec)) throw ModelError("latent sample does not match the latent spec");
    if (spec.kind == latent::Kind::gaussian) {
        // z = mean + exp(logvar / 2) * eps
        const Matrix eps = s.noise;
        const Var std_dev = ad::exp(t, ad::scale(t, v.logvar, 0.5));
        return ad::add(t, v.mean, ad::mul(t, std_dev, t.constant(eps)));
    }
    const Matrix perturbed = t.value(v.logits) + s.noise;
    Matrix relaxed = latent::softmax_rows(perturbed / temperature);
    Matrix value = relaxed_forward ? relaxed : latent::one_hot(s.indices, spec.K);
    const Var logits = v.logits;
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(value), t.needs_grad(logits),
                  [logits, out, relaxed = std::move(relaxed), temperature](Tape& tp) {
                      const Matrix& g = tp.grad(out);
                      Matrix& gl = tp.grad(logits);
                      for (Eigen::Index m = 0; m < g.rows(); ++m) {
                          const double dot = relaxed.row(m).dot(g.row(m));
                          gl.row(m).array() += relaxed.row(m).array() * (g.row(m).array() - dot) / temperature;
                      }
                  });
}

Var latent_constant(Tape& t, const latent::LatentSample& s) {
    if (s.spec.kind == latent::Kind::categorical) return t.constant(s.weights);
    return t.constant(s.z);
}

Var categorical_kl(Tape& t, Var p_logits, Var q_logits) {
    const auto p = latent::DistributionParams::categorical(t.value(p_logits));
    const auto q = latent::DistributionParams::categorical(t.value(q_logits));
    Matrix v(1, 1);
    v(0, 0) = latent::kl_divergence(p, q);
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ad::any_grad(t, {p_logits, q_logits}), [p_logits, q_logits, out](Tape& tp) {
        const double g = tp.grad(out)(0, 0);
        const Matrix lp = latent::log_softmax_rows(tp.value(p_logits));
        const Matrix lq = latent::log_softmax_rows(tp.value(q_logits));
        const Matrix pp = lp.array().exp().matrix();
        const Matrix qq = lq.array().exp().matrix();
        if (tp.needs_grad(p_logits)) {
            const Matrix d = lp - lq;
            for (Eigen::Index m = 0; m < d.rows(); ++m) {
                const double row_kl = pp.row(m).dot(d.row(m));
                tp.grad(p_logits).row(m).array() += g * pp.row(m).array() * (d.row(m).array() - row_kl);
            }
        }
        if (tp.needs_grad(q_logits)) tp.grad(q_logits) += g * (qq - pp);
    });
}

Var categorical_kl_uniform(Tape& t, Var p_logits) {
    const auto p = latent::DistributionParams::categorical(t.value(p_logits));
    Matrix v(1, 1);
    v(0, 0) = latent::kl_to_uniform(p);
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), t.needs_grad(p_logits), [p_logits, out](Tape& tp) {
        const double g = tp.grad(out)(0, 0);
        const Matrix lp = latent::log_softmax_rows(tp.value(p_logits));
        const double logK = std::log(static_cast<double>(lp.cols()));
        for (Eigen::Index m = 0; m < lp.rows(); ++m) {
            const Eigen::ArrayXd pr = lp.row(m).array().exp().transpose();
            const Eigen::ArrayXd d = lp.row(m).array().transpose() + logK;
            const double row_kl = (pr * d).sum();
            tp.grad(p_logits).row(m).array() += (g * pr * (d - row_kl)).transpose();
        }
    });
}

Var gaussian_kl(Tape& t, Var p_mean, Var p_logvar, Var q_mean, Var q_logvar) {
    const auto p = latent::DistributionParams::gaussian(t.value(p_mean).col(0), t.value(p_logvar).col(0));
    const auto q = latent::DistributionParams::gaussian(t.value(q_mean).col(0), t.value(q_logvar).col(0));
    Matrix v(1, 1);
    v(0, 0) = latent::kl_divergence(p, q);
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ad::any_grad(t, {p_mean, p_logvar, q_mean, q_logvar}),
                  [p_mean, p_logvar, q_mean, q_logvar, out](Tape& tp) {
                      const double g = tp.grad(out)(0, 0);
                      const Eigen::ArrayXd vp = tp.value(p_logvar).array().exp();
                      const Eigen::ArrayXd vq = tp.value(q_logvar).array().exp();
                      const Eigen::ArrayXd d = (tp.value(p_mean) - tp.value(q_mean)).array();
                      if (tp.needs_grad(p_mean)) tp.grad(p_mean).array() += g * d / vq;
                      if (tp.needs_grad(q_mean)) tp.grad(q_mean).array() -= g * d / vq;
                      if (tp.needs_grad(p_logvar)) tp.grad(p_logvar).array() += g * 0.5 * (vp / vq - 1.0);
                      if (tp.needs_grad(q_logvar)) tp.grad(q_logvar).array() += g * 0.5 * (1.0 - (vp + d * d) / vq);
                  });
}

Var gaussian_kl_standard(Tape& t, Var p_mean, Var p_logvar) {
    const auto p = latent::DistributionParams::gaussian(t.value(p_mean).col(0), t.value(p_logvar).col(0));
    Matrix v(1, 1);
    v(0, 0) = latent::kl_to_standard_normal(p);
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ad::any_grad(t, {p_mean, p_logvar}), [p_mean, p_logvar, out](Tape& tp) {
        const double g = tp.grad(out)(0, 0);
        if (tp.needs_grad(p_mean)) tp.grad(p_mean) += g * tp.value(p_mean);
        if (tp.needs_grad(p_logvar)) tp.grad(p_logvar).array() += g * 0.5 * (tp.value(p_logvar).array().exp() - 1.0);
    });
}

Var kl_vars(Tape& t, const latent::LatentSpec& spec, const LatentVars& p, const LatentVars* q) {
    if (spec.kind == latent::Kind::categorical)
        return q ? categorical_kl(t, p.logits, q->logits) : categorical_kl_uniform(t, p.logits);
    return q ? gaussian_kl(t, p.mean, p.logvar, q->mean, q->logvar) : gaussian_kl_standard(t, p.mean, p.logvar);
}

Var log_prob_var(Tape& t, const latent::LatentSpec& spec, const LatentVars& v, const latent::LatentSample& s) {
    const auto params = to_params(t, spec, v);
    Matrix value(1, 1);
    value(0, 0) = latent::log_prob(params, s);
    Var out{static_cast<int>(t.size())};
    if (spec.kind == latent::Kind::categorical) {
        const Var logits = v.logits;
        std::vector<int> idx = s.indices;
        return t.push(std::move(value), t.needs_grad(logits), [logits, idx = std::move(idx), out](Tape& tp) {
            const double g = tp.grad(out)(0, 0);
            Matrix d = -latent::softmax_rows(tp.value(logits));
            for (std::size_t m = 0; m < idx.size(); ++m) d(static_cast<Eigen::Index>(m), idx[m]) += 1.0;
            tp.grad(logits) += g * d;
        });
    }
    const Var mean = v.mean;
    const Var logvar = v.logvar;
    Vector z = s.z;
    return t.push(std::move(value), ad::any_grad(t, {mean, logvar}), [mean, logvar, z = std::move(z), out](Tape& tp) {
        const double g = tp.grad(out)(0, 0);
        const Eigen::ArrayXd prec = (-tp.value(logvar).array()).exp();
        const Eigen::ArrayXd d = z.array() - tp.value(mean).col(0).array();
        if (tp.needs_grad(mean)) tp.grad(mean).col(0).array() += g * d * prec;
        if (tp.needs_grad(logvar)) tp.grad(logvar).col(0).array() += g * -0.5 * (1.0 - d * d * prec);
    });
}

namespace {

/// Categorical: per-variable embedding tables weighted by the M x K input,
/// concatenated. Gaussian: linear map of z.
Var latent_embedding(Binder& b, Var latent_in) {
    Tape& t = b.tape;
    const auto& spec = b.model.config().latent;
    const Var table = b(b.model.decoder().latent_table);
    if (spec.kind == latent::Kind::gaussian) return ad::matmul(t, table, latent_in);
    const int L = b.model.config().decoder.latent_embed;
    const Matrix& T = t.value(table);
    const Matrix& w = t.value(latent_in);
    if (w.rows() != spec.M || w.cols() != spec.K) throw ModelError("latent input has the wrong shape");
    Matrix v(spec.M * L, 1);
    for (int m = 0; m < spec.M; ++m) v.middleRows(m * L, L) = T.middleRows(m * L, L) * w.row(m).transpose();
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ad::any_grad(t, {table, latent_in}), [table, latent_in, L, out](Tape& tp) {
        const Matrix& g = tp.grad(out);
        const Matrix& Tv = tp.value(table);
        const Matrix& wv = tp.value(latent_in);
        for (Eigen::Index m = 0; m < wv.rows(); ++m) {
            const auto gm = g.middleRows(m * L, L);
            if (tp.needs_grad(table)) tp.grad(table).middleRows(m * L, L).noalias() += gm * wv.row(m);
            if (tp.needs_grad(latent_in))
                tp.grad(latent_in).row(m).noalias() += (Tv.middleRows(m * L, L).transpose() * gm).transpose();
        }
    });
}

}  // namespace

DecoderStart decoder_state(Binder& b, Var latent_in) {
    const auto& dec = b.model.decoder();
    const Var e = latent_embedding(b, latent_in);
    return {ad::tanh(b.tape, ad::affine(b.tape, b(dec.init_w), e, b(dec.init_b))), e};
}

std::vector<Var> teacher_forced_steps(Binder& b, const DecoderStart& start, std::optional<Var> memory, std::span<const int> target,
                                      bool append_eos, std::vector<Vector>* log_distributions) {
    const auto& dec = b.model.decoder();
    const bool use_memory = b.model.config().decoder.attention && memory.has_value();
    if (!use_memory) memory.reset();
    std::vector<int> inputs{corpus::Vocabulary::kBos};
    std::vector<int> outputs(target.begin(), target.end());
    if (append_eos) outputs.push_back(corpus::Vocabulary::kEos);
    if (outputs.empty()) return {};
    inputs.insert(inputs.end(), outputs.begin(), outputs.end() - 1);
    check_tokens(b.model, outputs);
    std::vector<Var> steps;
    steps.reserve(outputs.size());
    Var h = start.h0;
    for (std::size_t j = 0; j < outputs.size(); ++j) {
        h = gru(b, dec.cell, step_input(b, inputs[j], start.latent), h);
        const Var logits = step_logits(b, h, memory);
        if (log_distributions != nullptr) {
            const Matrix& x = b.tape.value(logits);
            const double mx = x.maxCoeff();
            const double lse = mx + std::log((x.array() - mx).exp().sum());
            log_distributions->push_back((x.col(0).array() - lse).matrix());
        }
        steps.push_back(ad::log_softmax_pick(b.tape, logits, outputs[j]));
    }
    return steps;
}

DecodeTrace decode_trace(Binder& b, const DecoderStart& start, std::optional<Var> memory, TokenChoice choice, Rng* rng, int max_length) {
    if (choice == TokenChoice::sample && rng == nullptr) throw ModelError("sampled decoding needs an Rng");
    const auto& dec = b.model.decoder();
    if (!b.model.config().decoder.attention) memory.reset();
    DecodeTrace trace;
    Var h = start.h0;
    int prev = corpus::Vocabulary::kBos;
    for (int step = 0; step < max_length; ++step) {
        h = gru(b, dec.cell, step_input(b, prev, start.latent), h);
        const Matrix& logits = b.tape.value(step_logits(b, h, memory));
        const double mx = logits.maxCoeff();
        const double lse = mx + std::log((logits.array() - mx).exp().sum());
        Vector logp = (logits.col(0).array() - lse).matrix();
        int tok = 0;
        if (choice == TokenChoice::greedy) {
            Eigen::Index best = 0;
            logp.maxCoeff(&best);
            tok = static_cast<int>(best);
        } else {
            double u = rng->uniform();
            tok = static_cast<int>(logp.size()) - 1;
            for (Eigen::Index k = 0; k < logp.size(); ++k) {
                u -= std::exp(logp(k));
                if (u < 0.0) {
                    tok = static_cast<int>(k);
                    break;
                }
            }
        }
        trace.chosen.push_back(tok);
        trace.token_logprobs.push_back(logp(tok));
        trace.log_distributions.push_back(std::move(logp));
        if (tok == corpus::Vocabulary::kEos) {
            trace.ended_with_eos = true;
            break;
        }
        trace.tokens.push_back(tok);
        prev = tok;
    }
    return trace;
}

// ---------------------------------------------------------------------------

std::vector<int> encode_tokens(const Model& model, const corpus::Tokens& tokens) { return model.vocab().encode(tokens); }

namespace {

Matrix to_rows(const Matrix& memory_cols) { return memory_cols.transpose(); }

}  // namespace

EncodedContext encode_context(const Model& model, const corpus::ContextWindow& window) {
    if (!model.context_encoder()) throw ModelError("model has no context encoder");
    Tape t;
    Binder b(t, model, {});
    const auto ids = encode_tokens(model, window.tokens);
    const auto ev = encode_vars(b, *model.context_encoder(), ids, window.state_vector ? &*window.state_vector : nullptr,
                                window.db_pointer ? &*window.db_pointer : nullptr);
    return {t.value(ev.summary).col(0), to_rows(t.value(ev.memory))};
}

Vector encode_response(const Model& model, const corpus::Tokens& tokens) {
    if (!model.response_encoder()) throw ModelError("model has no response encoder");
    Tape t;
    Binder b(t, model, {});
    const auto ids = encode_tokens(model, tokens);
    return t.value(encode_vars(b, *model.response_encoder(), ids).summary).col(0);
}

latent::DistributionParams project_to_latent(const Model& model, const Vector& summary, Path path) {
    const ProjectionParams& proj =
        (path == Path::response && model.prior_projection()) ? *model.prior_projection() : model.projection();
    Tape t;
    Binder b(t, model, {});
    const auto v = project_vars(b, proj, model.config().latent, t.constant(summary));
    auto params = to_params(t, model.config().latent, v);
    if (!params.finite()) throw ModelError("latent projection produced non-finite values");
    return params;
}

DecodeOutput decode(const Model& model, const latent::LatentSample& latent, const Matrix* memory,
                    const corpus::Tokens* target) {
    if (!(latent.spec == model.config().latent)) throw ModelError("latent sample does not match the model's latent spec");
    Tape t;
    Binder b(t, model, {});
    const DecoderStart start = decoder_state(b, latent_constant(t, latent));
    std::optional<Var> mem;
    if (memory != nullptr && memory->rows() > 0) {
        if (memory->cols() != model.config().encoder.summary_size()) throw ModelError("memory width mismatch");
        mem = t.constant(memory->transpose());
    }
    DecodeOutput out;
    if (target != nullptr) {
        const auto ids = encode_tokens(model, *target);
        const auto steps = teacher_forced_steps(b, start, mem, ids, true, &out.log_distributions);
        for (const Var s : steps) {
            out.step_logprobs.push_back(t.scalar(s));
            out.log_likelihood += t.scalar(s);
        }
        out.tokens = *target;
        return out;
    }
    DecodeTrace trace = decode_trace(b, start, mem, TokenChoice::greedy, nullptr, model.config().decoder.max_length);
    out.tokens = model.vocab().decode(trace.tokens);
    out.log_distributions = std::move(trace.log_distributions);
    out.step_logprobs = std::move(trace.token_logprobs);
    return out;
}

latent::DistributionParams context_distribution(const Model& model, const corpus::ContextWindow& window,
                                                EncodedContext* encoded) {
    EncodedContext enc = encode_context(model, window);
    auto params = project_to_latent(model, enc.summary, Path::context);
    if (encoded != nullptr) *encoded = std::move(enc);
    return params;
}

corpus::Tokens respond_greedy(const Model& model, const corpus::ContextWindow& window) {
    EncodedContext enc;
    const auto params = context_distribution(model, window, &enc);
    const auto z = latent::sample(params, latent::SampleMode::greedy, model.config().temperature, 0);
    return decode(model, z, &enc.memory).tokens;
}

// ---------------------------------------------------------------------------

GradientCheckResult gradient_check(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                                   std::span<const double> analytic, double epsilon, std::size_t coordinates,
                                   std::uint64_t seed, double floor) {
    if (!(epsilon > 0.0)) throw ModelError("epsilon must be positive");
    if (x.size() != analytic.size()) throw ModelError("analytic gradient has the wrong length");
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > coordinates) {
        Rng rng(seed);
        rng.shuffle(idx);
        idx.resize(coordinates);
    }
    std::vector<double> point(x.begin(), x.end());
    GradientCheckResult r;
    for (std::size_t i : idx) {
        const double orig = point[i];
        point[i] = orig + epsilon;
        const double up = f(point);
        point[i] = orig - epsilon;
        const double down = f(point);
        point[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) throw ModelError("non-finite function value in gradient check");
        const double numeric = (up - down) / (2.0 * epsilon);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), floor});
        r.max_relative_error = std::max(r.max_relative_error, std::abs(a - numeric) / denom);
        ++r.coordinates;
    }
    return r;
}

GradientCheckResult gradient_check(Model& model, const std::function<double(const Model&, Gradients*)>& loss,
                                   double epsilon, std::size_t coordinates, std::uint64_t seed, double floor) {
    Gradients grads = model.params().zeros();
    const double base = loss(model, &grads);
    if (!std::isfinite(base)) throw ModelError("non-finite function value in gradient check");
    // Flat view over the non-frozen parameters.
    std::vector<std::pair<std::size_t, Eigen::Index>> where;
    std::vector<double> x, analytic;
    for (std::size_t p = 0; p < model.params().size(); ++p) {
        const Parameter& par = model.params()[p];
        if (model.frozen.contains(par.component)) continue;
        for (Eigen::Index k = 0; k < par.value.size(); ++k) {
            where.emplace_back(p, k);
            x.push_back(par.value.data()[k]);
            analytic.push_back(grads[p].data()[k]);
        }
    }
    const auto f = [&](std::span<const double> point) {
        for (std::size_t i = 0; i < where.size(); ++i)
            model.params()[where[i].first].value.data()[where[i].second] = point[i];
        const double v = loss(model, nullptr);
        return v;
    };
    GradientCheckResult r;
    try {
        r = gradient_check(f, x, analytic, epsilon, coordinates, seed, floor);
    } catch (...) {
        f(x);
        throw;
    }
    f(x);
    return r;
}

}  // namespace lava::nn
