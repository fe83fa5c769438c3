#include "lava/latent.hpp"

#include <cmath>
#include <numbers>

namespace lava::latent {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void require_same_spec(const LatentSpec& a, const LatentSpec& b) {
    if (!(a == b)) throw LatentError("latent spec mismatch");
}

}  // namespace

void LatentSpec::validate() const {
    if (M < 1) throw LatentError("latent spec requires M >= 1");
    if (kind == Kind::categorical && K < 2) throw LatentError("categorical latent requires K >= 2");
}

DistributionParams DistributionParams::categorical(Matrix logits) {
    DistributionParams p;
    p.spec = LatentSpec::categorical(static_cast<int>(logits.rows()), static_cast<int>(logits.cols()));
    p.logits = std::move(logits);
    return p;
}

DistributionParams DistributionParams::gaussian(Vector mean, Vector logvar) {
    if (mean.size() != logvar.size()) throw LatentError("mean/logvar length mismatch");
    DistributionParams p;
    p.spec = LatentSpec::gaussian(static_cast<int>(mean.size()));
    p.mean = std::move(mean);
    p.logvar = std::move(logvar);
    return p;
}

bool DistributionParams::finite() const {
    if (spec.kind == Kind::categorical) return logits.allFinite();
    return mean.allFinite() && logvar.allFinite();
}

Vector LatentSample::point() const {
    if (spec.kind == Kind::gaussian) return z;
    Vector out(weights.size());
    for (Eigen::Index r = 0; r < weights.rows(); ++r)
        for (Eigen::Index c = 0; c < weights.cols(); ++c) out(r * weights.cols() + c) = weights(r, c);
    return out;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        out.row(r) = (logits.row(r).array() - m).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

Matrix log_softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
        out.row(r) = (logits.row(r).array() - lse).matrix();
    }
    return out;
}

Matrix one_hot(const std::vector<int>& indices, int K) {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(indices.size()), K);
    for (std::size_t m = 0; m < indices.size(); ++m) out(static_cast<Eigen::Index>(m), indices[m]) = 1.0;
    return out;
}

LatentSample sample(const DistributionParams& params, SampleMode mode, double temperature, Rng& rng) {
    if (!(temperature > 0.0)) throw LatentError("temperature must be positive");
    if (!params.finite()) throw LatentError("non-finite distribution parameters");
    LatentSample s;
    s.spec = params.spec;
    s.mode = mode;
    const int M = params.spec.M;
    if (params.spec.kind == Kind::categorical) {
        const int K = params.spec.K;
        s.noise = Matrix::Zero(M, K);
        if (mode == SampleMode::stochastic) {
            for (int m = 0; m < M; ++m)
                for (int k = 0; k < K; ++k) s.noise(m, k) = rng.gumbel();
        }
        const Matrix perturbed = params.logits + s.noise;
        s.indices.resize(M);
        for (int m = 0; m < M; ++m) {
            Eigen::Index best = 0;
            perturbed.row(m).maxCoeff(&best);
            s.indices[m] = static_cast<int>(best);
        }
        s.weights = one_hot(s.indices, K);
        s.relaxed = softmax_rows(perturbed / temperature);
    } else {
        s.noise = Matrix::Zero(M, 1);
        if (mode == SampleMode::stochastic) {
            for (int m = 0; m < M; ++m) s.noise(m, 0) = rng.normal();
        }
        s.z = params.mean.array() + (0.5 * params.logvar.array()).exp() * s.noise.col(0).array();
    }
    return s;
}

LatentSample sample(const DistributionParams& params, SampleMode mode, double temperature,
                    std::uint64_t seed) {
    Rng rng(seed);
    return sample(params, mode, temperature, rng);
}

double log_prob(const DistributionParams& params, const LatentSample& s) {
    require_same_spec(params.spec, s.spec);
    if (params.spec.kind == Kind::categorical) {
        const Matrix lp = log_softmax_rows(params.logits);
        double total = 0.0;
        for (int m = 0; m < params.spec.M; ++m) total += lp(m, s.indices[static_cast<std::size_t>(m)]);
        return total;
    }
    const auto diff = (s.z - params.mean).array();
    return -0.5 * (kLog2Pi + params.logvar.array() + diff * diff * (-params.logvar.array()).exp()).sum();
}

double kl_divergence(const DistributionParams& p, const DistributionParams& q) {
    require_same_spec(p.spec, q.spec);
    if (p.spec.kind == Kind::categorical) {
        const Matrix lp = log_softmax_rows(p.logits);
        const Matrix lq = log_softmax_rows(q.logits);
        return (lp.array().exp() * (lp - lq).array()).sum();
    }
    const auto vp = p.logvar.array().exp();
    const auto vq = q.logvar.array().exp();
    const auto d = (p.mean - q.mean).array();
    return 0.5 * (q.logvar.array() - p.logvar.array() + (vp + d * d) / vq - 1.0).sum();
}

double kl_to_uniform(const DistributionParams& p) {
    if (p.spec.kind != Kind::categorical) throw LatentError("uniform prior requires a categorical latent");
    const Matrix lp = log_softmax_rows(p.logits);
    const double logK = std::log(static_cast<double>(p.spec.K));
    return (lp.array().exp() * (lp.array() + logK)).sum();
}

double kl_to_standard_normal(const DistributionParams& p) {
    if (p.spec.kind != Kind::gaussian) throw LatentError("standard normal prior requires a gaussian latent");
    const auto lv = p.logvar.array();
    const auto mu = p.mean.array();
    return 0.5 * (lv.exp() + mu * mu - 1.0 - lv).sum();
}

double kl_to_prior(const DistributionParams& p) {
    return p.spec.kind == Kind::categorical ? kl_to_uniform(p) : kl_to_standard_normal(p);
}

std::vector<LatentSample> interpolate(const LatentSample& a, const LatentSample& b, int steps) {
    require_same_spec(a.spec, b.spec);
    if (steps < 2) throw LatentError("interpolation requires at least 2 steps");
    std::vector<LatentSample> out;
    out.reserve(static_cast<std::size_t>(steps));
    out.push_back(a);
    for (int i = 1; i + 1 < steps; ++i) {
        const double lambda = static_cast<double>(i) / static_cast<double>(steps - 1);
        LatentSample s;
        s.spec = a.spec;
        s.mode = SampleMode::greedy;
        if (a.spec.kind == Kind::categorical) {
            // Coordinates where a and b agree are copied exactly.
            const Matrix mix = (1.0 - lambda) * a.weights + lambda * b.weights;
            s.weights = (a.weights.array() == b.weights.array()).select(a.weights, mix);
            s.relaxed = s.weights;
            s.noise = Matrix::Zero(a.spec.M, a.spec.K);
            s.indices.resize(static_cast<std::size_t>(a.spec.M));
            for (int m = 0; m < a.spec.M; ++m) {
                Eigen::Index best = 0;
                s.weights.row(m).maxCoeff(&best);
                s.indices[static_cast<std::size_t>(m)] = static_cast<int>(best);
            }
        } else {
            const Vector mix = (1.0 - lambda) * a.z + lambda * b.z;
            s.z = (a.z.array() == b.z.array()).select(a.z, mix);
            s.noise = Matrix::Zero(a.spec.M, 1);
        }
        out.push_back(std::move(s));
    }
    out.push_back(b);
    return out;
}

nlohmann::json to_json(const LatentSample& s) {
    if (s.spec.kind == Kind::categorical) return nlohmann::json(s.indices);
    return nlohmann::json(std::vector<double>(s.z.data(), s.z.data() + s.z.size()));
}

std::string to_string(Kind k) { return k == Kind::categorical ? "categorical" : "gaussian"; }

Kind kind_from_string(const std::string& s) {
    if (s == "categorical" || s == "cat") return Kind::categorical;
    if (s == "gaussian" || s == "gauss") return Kind::gaussian;
    throw LatentError("unknown latent kind: " + s);
}

}  // namespace lava::latent
