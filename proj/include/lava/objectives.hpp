#pragma once

// Supervised objectives (word-level likelihood, full and lite ELBO, response
// VAE, informed-prior KL, multitask alternation), the Adam optimizer and the
// supervised training loop for every scheme.

#include "lava/corpus.hpp"
#include "lava/eval.hpp"
#include "lava/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lava::train {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a loss or gradient stops being finite.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Scheme { mle, lite, full, vae, pt_all, pt_selective, kl_prior, multitask };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);
/// 0.1 for kl_prior, 0.01 otherwise.
double default_beta(Scheme s);
/// Schemes that start from a trained response VAE.
bool needs_init(Scheme s);

struct Example {
    std::string dialogue_id;
    std::size_t turn = 0;
    corpus::ContextWindow context;
    corpus::Tokens response;
};

/// One example per system turn, contexts built from gold history.
std::vector<Example> make_examples(std::span<const corpus::Dialogue> dialogues, corpus::TaskMode mode, int window);

struct LossBreakdown {
    double total = 0.0;
    double nll = 0.0;
    double kl = 0.0;
    double beta = 0.0;
};

struct LossOptions {
    /// Seeds the latent noise; example i of the batch uses mix_seed(noise_seed, i).
    std::uint64_t noise_seed = 0;
    /// Categorical samples feed the relaxed softmax forward instead of the
    /// hard one-hot (smooth objective for finite differences).
    bool relaxed_forward = false;
    /// When set, receives d(total)/d(parameter) for every trainable parameter.
    nn::Gradients* grads = nullptr;
};

enum class Prior { uniform, standard_normal };
Prior default_prior(const latent::LatentSpec& spec);

LossBreakdown loss_mle(const nn::Model& model, std::span<const Example> batch, const LossOptions& options = {});
LossBreakdown loss_elbo_lite(const nn::Model& model, std::span<const Example> batch, double beta,
                             const LossOptions& options = {}, std::optional<Prior> prior = std::nullopt);
LossBreakdown loss_elbo_full(const nn::Model& model, std::span<const Example> batch, const LossOptions& options = {});
LossBreakdown loss_vae(const nn::Model& model, std::span<const Example> batch, double beta,
                       const LossOptions& options = {});
LossBreakdown loss_lava_kl(const nn::Model& model, std::span<const Example> batch, double beta = 0.1,
                           const LossOptions& options = {});

enum class Task { rg, ae };
std::string to_string(Task t);

/// Cyclic schedule: `a` response-generation steps, then `b` auto-encoding steps.
Task multitask_schedule(std::uint64_t step, int a, int b);

/// Response-generation step of multitask training: lite ELBO that only
/// reaches the context encoder, latent projection and decoder.
LossBreakdown loss_multitask_rg(const nn::Model& model, std::span<const Example> batch, double beta,
                                const LossOptions& options = {});
/// Auto-encoding step: response VAE that only reaches the response encoder,
/// latent projection and decoder.
LossBreakdown loss_multitask_ae(const nn::Model& model, std::span<const Example> batch, double beta,
                                const LossOptions& options = {});

/// Components a scheme's step at `step` is allowed to update.
nn::ComponentSet updated_components(Scheme s, std::uint64_t step, int a, int b);

/// Loss for one optimizer step of `scheme`.
LossBreakdown scheme_loss(Scheme scheme, const nn::Model& model, std::span<const Example> batch, double beta,
                          std::uint64_t step, int a, int b, const LossOptions& options = {});

// ---------------------------------------------------------------------------

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_gradients(nn::Gradients& grads, double max_norm);

class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    /// Updates parameters in `components` that the model does not freeze.
    /// Updated arrays are rounded to 32-bit float precision.
    void step(nn::Model& model, const nn::Gradients& grads, nn::ComponentSet components);

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<Eigen::MatrixXd> m_, v_;
    std::vector<std::uint64_t> t_;
};

// ---------------------------------------------------------------------------

struct TrainingConfig {
    Scheme scheme = Scheme::lite;
    /// Unset means default_beta(scheme).
    std::optional<double> beta;
    /// Latent spec and network sizes; conditioning sizes are filled in from the corpus.
    nn::ModelConfig model;
    std::size_t batch_size = 128;
    int max_epochs = 50;
    double learning_rate = 1e-3;
    double clip = 5.0;
    int ratio_a = 10;
    int ratio_b = 1;
    std::uint64_t seed = 0;
    /// Epochs without validation improvement before stopping; 0 disables early stopping.
    int patience = 5;
    std::size_t vocab_size = corpus::Vocabulary::kDefaultMaxSize;

    [[nodiscard]] double effective_beta() const { return beta.value_or(default_beta(scheme)); }
    void validate() const;
};

/// Mini-batch optimization of one model under a scheme.
class Trainer {
public:
    Trainer(TrainingConfig config, nn::Model& model);
    /// One shuffled pass over `examples`; returns the example-weighted mean loss.
    LossBreakdown epoch(std::span<const Example> examples, int epoch_index);

private:
    TrainingConfig config_;
    nn::Model& model_;
    Adam adam_;
};

struct EpochMetrics {
    int epoch = 0;
    Scheme scheme = Scheme::lite;
    LossBreakdown loss;
    /// Dialogue-level validation metrics; absent for the response VAE.
    std::optional<double> valid_match, valid_success, valid_bleu;
    /// Validation loss (VAE model selection).
    double valid_loss = 0.0;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct TrainResult {
    nn::Model model;
    std::vector<EpochMetrics> log;
    int best_epoch = 0;
};

/// Builds the scheme's network (fresh or warm-started from `init`), trains with
/// shuffled mini-batches and returns the best-validation model. Success rate
/// selects the model for response generation schemes, validation loss for the
/// VAE. Each epoch's metrics line is appended to `metrics_path` when given.
TrainResult train_supervised(const TrainingConfig& config, const corpus::Corpus& corpus,
                             const nn::Model* init = nullptr,
                             const std::optional<std::filesystem::path>& metrics_path = std::nullopt,
                             const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Network for a scheme: fresh, or built on top of a response VAE.
nn::Model build_model(const TrainingConfig& config, const corpus::Corpus& corpus, const nn::Model* init);

/// Fraction of greedy reconstruction tokens (latent from the response encoder)
/// equal to the target, over max(target, output) positions.
double reconstruction_accuracy(const nn::Model& model, std::span<const corpus::Tokens> responses);
/// Fraction of teacher-forced steps (EOS included) whose argmax is the gold token,
/// with the greedy context latent.
double teacher_forced_accuracy(const nn::Model& model, std::span<const Example> examples);

}  // namespace lava::train
