#include "lava/objectives.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <tuple>

namespace lava::train {

using nn::Component;
using nn::ComponentSet;
using nn::Model;

void TrainingConfig::validate() const {
    if (effective_beta() < 0.0) throw TrainError("beta must be >= 0");
    if (ratio_a < 1 || ratio_b < 1) throw TrainError("multitask ratio terms must be >= 1");
    if (batch_size < 1) throw TrainError("batch size must be >= 1");
    if (max_epochs < 1) throw TrainError("max epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw TrainError("learning rate must be positive");
    if (!(clip > 0.0)) throw TrainError("gradient clip must be positive");
    if (patience < 0) throw TrainError("patience must be >= 0");
}

Model build_model(const TrainingConfig& config, const corpus::Corpus& corpus, const Model* init) {
    const Scheme s = config.scheme;
    if (needs_init(s) && init == nullptr)
        throw TrainError("scheme '" + to_string(s) + "' requires an init checkpoint of a trained vae");
    if (init != nullptr && !init->response_encoder())
        throw TrainError("init checkpoint has no response encoder (expected a trained vae)");
    nn::ModelConfig mc = config.model;
    if (init != nullptr) {
        const auto& ic = init->config();
        mc.latent = ic.latent;
        mc.decoder = ic.decoder;
        mc.encoder.embed = ic.encoder.embed;
        mc.encoder.hidden = ic.encoder.hidden;
        mc.encoder.bidirectional = ic.encoder.bidirectional;
        mc.temperature = ic.temperature;
    }
    const corpus::StateLayout layout(corpus.db);
    const bool c2r = mc.mode == corpus::TaskMode::context_to_response;
    mc.encoder.state_size = c2r ? static_cast<int>(layout.state_size()) : 0;
    mc.encoder.db_size = c2r ? static_cast<int>(layout.db_size()) : 0;
    mc.has_context_encoder = s != Scheme::vae;
    mc.has_response_encoder = s == Scheme::vae || s == Scheme::full || s == Scheme::kl_prior || s == Scheme::multitask;
    mc.has_posterior = s == Scheme::full;
    mc.has_prior_projection = s == Scheme::kl_prior;

    corpus::Vocabulary vocab;
    if (init != nullptr) {
        vocab = init->vocab();
    } else {
        const auto train = corpus::select_split(corpus, corpus::Split::train);
        vocab = corpus::build_vocabulary(train, config.vocab_size);
    }
    Model m(mc, std::move(vocab), mix_seed(config.seed, 0x3f1));
    if (init != nullptr) {
        if (s == Scheme::kl_prior) {
            m.copy_from(*init, {Component::ae_encoder, Component::latent_projection, Component::decoder});
            const auto& pp = *m.prior_projection();
            m.params()[pp.w].value = init->params()[init->projection().w].value;
            m.params()[pp.b].value = init->params()[init->projection().b].value;
            m.frozen = {Component::ae_encoder};
        } else {
            m.copy_from(*init, {Component::latent_projection, Component::decoder});
            if (s == Scheme::pt_selective) m.frozen = {Component::latent_projection, Component::decoder};
        }
    }
    return m;
}

Trainer::Trainer(TrainingConfig config, Model& model)
    : config_(std::move(config)), model_(model), adam_(config_.learning_rate) {
    config_.validate();
}

LossBreakdown Trainer::epoch(std::span<const Example> examples, int epoch_index) {
    if (examples.empty()) throw TrainError("no training examples");
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(config_.seed, 0xe90c0000ULL + static_cast<std::uint64_t>(epoch_index)));
    rng.shuffle(order);
    const double beta = config_.effective_beta();
    LossBreakdown sum;
    sum.beta = beta;
    std::vector<Example> batch;
    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
        batch.clear();
        for (std::size_t k = start; k < std::min(order.size(), start + config_.batch_size); ++k)
            batch.push_back(examples[order[k]]);
        nn::Gradients grads = model_.params().zeros();
        LossOptions opt;
        opt.noise_seed = mix_seed(config_.seed, 0x5a3d0000ULL + model_.step);
        opt.grads = &grads;
        const LossBreakdown lb = scheme_loss(config_.scheme, model_, batch, beta, model_.step, config_.ratio_a,
                                             config_.ratio_b, opt);
        const double norm = clip_gradients(grads, config_.clip);
        if (!std::isfinite(norm))
            throw NumericError("non-finite gradient at epoch " + std::to_string(epoch_index) + ", step " +
                               std::to_string(model_.step));
        adam_.step(model_, grads, updated_components(config_.scheme, model_.step, config_.ratio_a, config_.ratio_b));
        ++model_.step;
        ++model_.version;
        const double w = static_cast<double>(batch.size());
        sum.nll += w * lb.nll;
        sum.kl += w * lb.kl;
        sum.total += w * lb.total;
    }
    const double n = static_cast<double>(examples.size());
    sum.nll /= n;
    sum.kl /= n;
    sum.total /= n;
    return sum;
}

nlohmann::ordered_json EpochMetrics::to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["scheme"] = to_string(scheme);
    j["loss_total"] = loss.total;
    j["loss_nll"] = loss.nll;
    j["loss_kl"] = loss.kl;
    const auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    j["valid_match"] = opt(valid_match);
    j["valid_success"] = opt(valid_success);
    j["valid_bleu"] = opt(valid_bleu);
    return j;
}

namespace {

LossBreakdown evaluate_loss(const TrainingConfig& config, const Model& model, std::span<const Example> examples) {
    LossBreakdown sum;
    const double beta = config.effective_beta();
    for (std::size_t start = 0; start < examples.size(); start += config.batch_size) {
        const auto batch = examples.subspan(start, std::min(config.batch_size, examples.size() - start));
        LossOptions opt;
        opt.noise_seed = mix_seed(config.seed, 0x7a11d000ULL + start);
        const LossBreakdown lb = scheme_loss(config.scheme, model, batch, beta, 0, config.ratio_a, config.ratio_b, opt);
        const double w = static_cast<double>(batch.size());
        sum.nll += w * lb.nll;
        sum.kl += w * lb.kl;
        sum.total += w * lb.total;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, examples.size()));
    sum.nll /= n;
    sum.kl /= n;
    sum.total /= n;
    sum.beta = beta;
    return sum;
}

}  // namespace

TrainResult train_supervised(const TrainingConfig& config, const corpus::Corpus& corpus, const Model* init,
                             const std::optional<std::filesystem::path>& metrics_path,
                             const std::function<void(const EpochMetrics&)>& on_epoch) {
    config.validate();
    Model model = build_model(config, corpus, init);
    const auto train = corpus::select_split(corpus, corpus::Split::train);
    const auto valid = corpus::select_split(corpus, corpus::Split::valid);
    const auto& mc = model.config();
    const auto train_examples = make_examples(train, mc.mode, mc.window);
    const auto valid_examples = make_examples(valid, mc.mode, mc.window);
    if (train_examples.empty()) throw TrainError("training split is empty");

    std::ofstream metrics;
    if (metrics_path) {
        if (metrics_path->has_parent_path()) std::filesystem::create_directories(metrics_path->parent_path());
        metrics.open(*metrics_path, std::ios::app);
        if (!metrics) throw TrainError("cannot write metrics log " + metrics_path->string());
    }

    Trainer trainer(config, model);
    TrainResult result{model, {}, 0};
    const bool by_loss = config.scheme == Scheme::vae || valid.empty();
    std::tuple<double, double, double> best_score{-1.0, -1.0, -1.0};
    double best_loss = std::numeric_limits<double>::infinity();
    int since_best = 0;
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        EpochMetrics em;
        em.epoch = epoch;
        em.scheme = config.scheme;
        em.loss = trainer.epoch(train_examples, epoch);
        bool improved = false;
        if (by_loss) {
            em.valid_loss = evaluate_loss(config, model, valid_examples.empty() ? train_examples : valid_examples).total;
            improved = em.valid_loss < best_loss;
            if (improved) best_loss = em.valid_loss;
        } else {
            const auto report = eval::evaluate_model(model, valid, corpus.db);
            em.valid_match = report.match;
            em.valid_success = report.success;
            em.valid_bleu = report.bleu;
            const std::tuple<double, double, double> score{report.success, report.match, report.bleu};
            improved = score > best_score;
            if (improved) best_score = score;
        }
        if (improved) {
            result.model = model;
            result.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (metrics) {
            metrics << em.to_json().dump() << "\n";
            metrics.flush();
        }
        if (on_epoch) on_epoch(em);
        result.log.push_back(em);
        if (config.patience > 0 && since_best >= config.patience) break;
    }
    return result;
}

double reconstruction_accuracy(const Model& model, std::span<const corpus::Tokens> responses) {
    std::size_t correct = 0;
    std::size_t total = 0;
    for (const auto& r : responses) {
        const nn::Vector summary = nn::encode_response(model, r);
        const auto params = nn::project_to_latent(model, summary, nn::Path::response);
        const auto z = latent::sample(params, latent::SampleMode::greedy, model.config().temperature, 0);
        const auto out = nn::decode(model, z).tokens;
        for (std::size_t j = 0; j < std::min(out.size(), r.size()); ++j) correct += out[j] == r[j];
        total += std::max(out.size(), r.size());
    }
    return total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double teacher_forced_accuracy(const Model& model, std::span<const Example> examples) {
    std::size_t correct = 0;
    std::size_t total = 0;
    for (const auto& ex : examples) {
        nn::EncodedContext enc;
        const auto params = nn::context_distribution(model, ex.context, &enc);
        const auto z = latent::sample(params, latent::SampleMode::greedy, model.config().temperature, 0);
        const auto out = nn::decode(model, z, &enc.memory, &ex.response);
        auto gold = model.vocab().encode(ex.response);
        gold.push_back(corpus::Vocabulary::kEos);
        for (std::size_t j = 0; j < gold.size(); ++j) {
            Eigen::Index best = 0;
            out.log_distributions[j].maxCoeff(&best);
            correct += static_cast<int>(best) == gold[j];
        }
        total += gold.size();
    }
    return total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace lava::train
