#pragma once

// Latent action spaces: M independent K-way categorical variables, or an
// M-dimensional diagonal Gaussian. Everything here is a pure function of its
// arguments; randomness comes in through an explicit Rng.

#include "lava/rng.hpp"

#include <Eigen/Dense>
#include "json.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace lava::latent {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Kind { categorical, gaussian };
enum class SampleMode { stochastic, greedy };

struct LatentSpec {
    Kind kind = Kind::categorical;
    int M = 10;
    int K = 20;

    static LatentSpec categorical(int m, int k) { return {Kind::categorical, m, k}; }
    static LatentSpec gaussian(int m) { return {Kind::gaussian, m, 0}; }

    /// Width of a flattened latent point (M*K or M).
    [[nodiscard]] int point_size() const { return kind == Kind::categorical ? M * K : M; }
    /// Number of reals the projection layer emits (M*K logits or mean+logvar).
    [[nodiscard]] int param_size() const { return kind == Kind::categorical ? M * K : 2 * M; }

    void validate() const;
    friend bool operator==(const LatentSpec&, const LatentSpec&) = default;
};

class LatentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DistributionParams {
    LatentSpec spec;
    Matrix logits;   // M x K, categorical only
    Vector mean;     // M, gaussian only
    Vector logvar;   // M, gaussian only

    static DistributionParams categorical(Matrix logits);
    static DistributionParams gaussian(Vector mean, Vector logvar);

    [[nodiscard]] bool finite() const;
};

struct LatentSample {
    LatentSpec spec;
    SampleMode mode = SampleMode::greedy;
    std::vector<int> indices;  // categorical: chosen category per variable
    Matrix weights;            // categorical: M x K decoder input (hard one-hot or mixture)
    Matrix relaxed;            // categorical: M x K tempered softmax of perturbed logits
    Matrix noise;              // Gumbel noise (M x K) or standard normal eps (M x 1)
    Vector z;                  // gaussian value

    /// Flattened decoder-input point: row-major weights, or z.
    [[nodiscard]] Vector point() const;
};

/// Row-wise softmax of an M x K logit matrix.
Matrix softmax_rows(const Matrix& logits);
Matrix log_softmax_rows(const Matrix& logits);

/// Hard one-hot M x K matrix from category indices.
Matrix one_hot(const std::vector<int>& indices, int K);

/// Draws (stochastic) or picks the mode of (greedy) the distribution. For a
/// categorical stochastic draw the forward value is the one-hot of
/// argmax(logits + Gumbel) and `relaxed` is softmax((logits + Gumbel) / temperature).
LatentSample sample(const DistributionParams& params, SampleMode mode, double temperature, Rng& rng);
LatentSample sample(const DistributionParams& params, SampleMode mode, double temperature,
                    std::uint64_t seed);

double log_prob(const DistributionParams& params, const LatentSample& sample);

/// D_KL[p || q] in nats, summed over independent variables/dimensions.
double kl_divergence(const DistributionParams& p, const DistributionParams& q);
/// D_KL[p || uniform] for categorical p.
double kl_to_uniform(const DistributionParams& p);
/// D_KL[p || N(0, I)] for gaussian p.
double kl_to_standard_normal(const DistributionParams& p);
/// KL against the fixed uninformed prior of p's kind.
double kl_to_prior(const DistributionParams& p);

/// Linear path from a to b with `steps` points, endpoints included.
std::vector<LatentSample> interpolate(const LatentSample& a, const LatentSample& b, int steps);

/// Categorical as an index list, gaussian as a real list.
nlohmann::json to_json(const LatentSample& s);

std::string to_string(Kind k);
Kind kind_from_string(const std::string& s);

}  // namespace lava::latent
