#pragma once

// Recurrent encoders, latent projection, latent-conditioned decoder with
// optional dot-product attention, and the parameter store they share.

#include "lava/ad.hpp"
#include "lava/corpus.hpp"
#include "lava/latent.hpp"
#include "lava/rng.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace lava::nn {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using ad::Vector;

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Component { rg_encoder = 0, ae_encoder = 1, latent_projection = 2, decoder = 3 };
inline constexpr std::array<Component, 4> kComponents = {Component::rg_encoder, Component::ae_encoder,
                                                         Component::latent_projection, Component::decoder};
std::string to_string(Component c);
Component component_from_string(const std::string& s);

/// Set of components, e.g. a freeze mask or the components a step may update.
class ComponentSet {
public:
    ComponentSet() = default;
    ComponentSet(std::initializer_list<Component> cs) {
        for (Component c : cs) insert(c);
    }
    static ComponentSet all() { return {Component::rg_encoder, Component::ae_encoder, Component::latent_projection, Component::decoder}; }
    void insert(Component c) { bits_[static_cast<std::size_t>(c)] = true; }
    void erase(Component c) { bits_[static_cast<std::size_t>(c)] = false; }
    [[nodiscard]] bool contains(Component c) const { return bits_[static_cast<std::size_t>(c)]; }
    friend bool operator==(const ComponentSet&, const ComponentSet&) = default;

private:
    std::array<bool, 4> bits_{};
};

struct Parameter {
    std::string name;
    Component component;
    Matrix value;
};

class ParamStore {
public:
    std::size_t add(const std::string& name, Component component, Eigen::Index rows, Eigen::Index cols);
    [[nodiscard]] std::size_t index(const std::string& name) const;
    [[nodiscard]] bool contains(const std::string& name) const { return by_name_.contains(name); }
    [[nodiscard]] std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return params_[i]; }
    const Parameter& operator[](std::size_t i) const { return params_[i]; }
    [[nodiscard]] auto begin() const { return params_.begin(); }
    [[nodiscard]] auto end() const { return params_.end(); }

    /// Zero-filled gradient buffers shaped like the parameters.
    [[nodiscard]] std::vector<Matrix> zeros() const;

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> by_name_;
};

using Gradients = std::vector<Matrix>;

struct EncoderConfig {
    int embed = 100;
    int hidden = 300;
    bool bidirectional = true;
    /// Conditioning vector sizes; zero disables the projection.
    int state_size = 0;
    int db_size = 0;

    [[nodiscard]] int summary_size() const { return bidirectional ? 2 * hidden : hidden; }
    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct DecoderConfig {
    int embed = 100;
    int hidden = 150;
    bool attention = true;
    int max_length = 50;
    /// Per-variable embedding width (categorical) or embedding width (gaussian).
    int latent_embed = 32;

    static DecoderConfig for_latent(latent::Kind kind);
    friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

struct ModelConfig {
    latent::LatentSpec latent = latent::LatentSpec::categorical(10, 20);
    EncoderConfig encoder;
    DecoderConfig decoder;
    bool has_context_encoder = true;
    bool has_response_encoder = false;
    /// Response-and-context posterior projection for the full ELBO.
    bool has_posterior = false;
    /// Private, frozen projection for the response encoder (informed prior).
    bool has_prior_projection = false;
    double temperature = 1.0;
    corpus::TaskMode mode = corpus::TaskMode::context_to_response;
    int window = 2;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct GruParams {
    std::size_t wx = 0, wh = 0, bx = 0, bh = 0;
};

struct EncoderParams {
    std::size_t embedding = 0;
    GruParams fwd, bwd;
    std::optional<std::size_t> state_proj, db_proj;
};

struct ProjectionParams {
    std::size_t w = 0, b = 0;
};

struct DecoderParams {
    std::size_t embedding = 0, latent_table = 0, init_w = 0, init_b = 0, attention = 0, out_w = 0, out_b = 0;
    GruParams cell;
};

class Model {
public:
    /// Fresh model: weights uniform(-0.1, 0.1), zero biases, drawn from `seed`.
    Model(ModelConfig config, corpus::Vocabulary vocab, std::uint64_t seed);

    [[nodiscard]] const ModelConfig& config() const { return config_; }
    [[nodiscard]] const corpus::Vocabulary& vocab() const { return vocab_; }
    [[nodiscard]] ParamStore& params() { return params_; }
    [[nodiscard]] const ParamStore& params() const { return params_; }

    [[nodiscard]] const std::optional<EncoderParams>& context_encoder() const { return rg_; }
    [[nodiscard]] const std::optional<EncoderParams>& response_encoder() const { return ae_; }
    [[nodiscard]] const ProjectionParams& projection() const { return proj_; }
    [[nodiscard]] const std::optional<ProjectionParams>& posterior_projection() const { return post_; }
    [[nodiscard]] const std::optional<ProjectionParams>& prior_projection() const { return prior_; }
    [[nodiscard]] const DecoderParams& decoder() const { return dec_; }

    ComponentSet frozen;
    std::uint64_t seed = 0;
    /// Optimizer steps applied so far.
    std::uint64_t step = 0;
    /// Bumped on every parameter update; trajectories are stamped with it.
    std::uint64_t version = 0;

    /// Copies every same-named, same-shaped parameter of `other` belonging to `components`.
    void copy_from(const Model& other, ComponentSet components);
    /// Rounds every parameter to the nearest 32-bit float.
    void round_to_float();

private:
    EncoderParams add_encoder(const std::string& prefix, Component c, bool conditioning);
    GruParams add_gru(const std::string& prefix, Component c, int in, int hidden);

    ModelConfig config_;
    corpus::Vocabulary vocab_;
    ParamStore params_;
    std::optional<EncoderParams> rg_, ae_;
    ProjectionParams proj_;
    std::optional<ProjectionParams> post_, prior_;
    DecoderParams dec_;
};

// ---------------------------------------------------------------------------
// Tape-level forward pieces

/// Binds model parameters on a tape; only `trainable` minus the model's
/// frozen components receive gradients.
class Binder {
public:
    Binder(Tape& tape, const Model& model, ComponentSet trainable);
    Var operator()(std::size_t index);
    Tape& tape;
    const Model& model;

private:
    ComponentSet trainable_;
};

struct EncodedVars {
    Var summary;  // S x 1
    Var memory;   // S x T
};

EncodedVars encode_vars(Binder& b, const EncoderParams& enc, std::span<const int> tokens,
                        const std::vector<int>* state = nullptr, const std::vector<int>* db = nullptr);

struct LatentVars {
    Var logits;  // M x K (categorical)
    Var mean;    // M x 1 (gaussian)
    Var logvar;  // M x 1 (gaussian)
};

LatentVars project_vars(Binder& b, const ProjectionParams& proj, const latent::LatentSpec& spec, Var summary);
latent::DistributionParams to_params(const Tape& t, const latent::LatentSpec& spec, const LatentVars& v);

/// Decoder input on the differentiable path. Categorical stochastic samples
/// use the straight-through estimator: forward value is the hard one-hot,
/// backward flows through the tempered softmax of the perturbed logits. With
/// `relaxed_forward` the forward value is the relaxed softmax itself, which
/// makes the function smooth for finite-difference checks.
Var latent_input(Tape& t, const latent::LatentSpec& spec, const LatentVars& v, const latent::LatentSample& s,
                 double temperature, bool relaxed_forward = false);

/// Constant decoder input (greedy or interpolated points).
Var latent_constant(Tape& t, const latent::LatentSample& s);

// Latent math on the tape, delegating values to lava::latent.
Var categorical_kl(Tape& t, Var p_logits, Var q_logits);
Var categorical_kl_uniform(Tape& t, Var p_logits);
Var gaussian_kl(Tape& t, Var p_mean, Var p_logvar, Var q_mean, Var q_logvar);
Var gaussian_kl_standard(Tape& t, Var p_mean, Var p_logvar);
Var kl_vars(Tape& t, const latent::LatentSpec& spec, const LatentVars& p, const LatentVars* q);
Var log_prob_var(Tape& t, const latent::LatentSpec& spec, const LatentVars& v, const latent::LatentSample& s);

/// Initial hidden state plus the latent embedding, which is also fed to every decoder step.
struct DecoderStart {
    Var h0;
    Var latent;
};

DecoderStart decoder_state(Binder& b, Var latent_in);

/// Per-step log p(target_j | target_<j, z); EOS is appended as the final target.
/// `log_distributions`, when given, receives each step's full log-distribution.
std::vector<Var> teacher_forced_steps(Binder& b, const DecoderStart& start, std::optional<Var> memory, std::span<const int> target,
                                      bool append_eos = true, std::vector<Vector>* log_distributions = nullptr);

enum class TokenChoice { greedy, sample };

struct DecodeTrace {
    std::vector<int> tokens;               // without EOS
    std::vector<int> chosen;               // every emitted step, EOS included when produced
    std::vector<double> token_logprobs;    // aligned with `chosen`
    std::vector<Vector> log_distributions; // aligned with `chosen`
    bool ended_with_eos = false;
};

DecodeTrace decode_trace(Binder& b, const DecoderStart& start, std::optional<Var> memory, TokenChoice choice, Rng* rng, int max_length);

// ---------------------------------------------------------------------------
// Value-level operations

struct EncodedContext {
    Vector summary;
    Matrix memory;  // one row per input token
};

std::vector<int> encode_tokens(const Model& model, const corpus::Tokens& tokens);

EncodedContext encode_context(const Model& model, const corpus::ContextWindow& window);
Vector encode_response(const Model& model, const corpus::Tokens& tokens);

enum class Path { context, response };
latent::DistributionParams project_to_latent(const Model& model, const Vector& summary, Path path = Path::context);

struct DecodeOutput {
    corpus::Tokens tokens;
    std::vector<Vector> log_distributions;
    /// Teacher forcing only: sum of gold-token log-probabilities (EOS included).
    double log_likelihood = 0.0;
    std::vector<double> step_logprobs;
};

/// Greedy decode, or teacher forcing when `target` is given. `memory` is
/// attended to only when the decoder has attention enabled.
DecodeOutput decode(const Model& model, const latent::LatentSample& latent, const Matrix* memory = nullptr,
                    const corpus::Tokens* target = nullptr);

/// Context distribution p(z|c) together with the context encoding.
latent::DistributionParams context_distribution(const Model& model, const corpus::ContextWindow& window,
                                                EncodedContext* encoded = nullptr);

/// Greedy latent, greedy words.
corpus::Tokens respond_greedy(const Model& model, const corpus::ContextWindow& window);

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::string& bytes);

// ---------------------------------------------------------------------------
// Numerical gradient checking

struct GradientCheckResult {
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;
};

/// Central finite differences on `coordinates` randomly chosen entries of `x`,
/// compared with `analytic`. Relative error is |a - n| / max(|a|, |n|, floor).
GradientCheckResult gradient_check(const std::function<double(std::span<const double>)>& f,
                                   std::span<const double> x, std::span<const double> analytic, double epsilon,
                                   std::size_t coordinates = 32, std::uint64_t seed = 0, double floor = 1e-6);

/// Same check over a model's parameters. `loss` evaluates the scalar loss and,
/// when given a buffer, adds its gradient.
GradientCheckResult gradient_check(Model& model, const std::function<double(const Model&, Gradients*)>& loss,
                                   double epsilon, std::size_t coordinates = 32, std::uint64_t seed = 0,
                                   double floor = 1e-6);

}  // namespace lava::nn
