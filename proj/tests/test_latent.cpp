#include "lava/latent.hpp"
#include "lava/model.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <functional>
#include <cmath>
#include <limits>
#include <numbers>

using namespace lava;
using latent::DistributionParams;
using latent::LatentSpec;
using latent::Matrix;
using latent::SampleMode;
using latent::Vector;

namespace {

Matrix random_logits(Rng& rng, int m, int k, double scale = 2.0) {
    Matrix l(m, k);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) l(i, j) = rng.uniform(-scale, scale);
    return l;
}

}  // namespace

TEST(LatentSpec, RejectsDegenerateShapes) {
    EXPECT_THROW(LatentSpec::categorical(0, 3).validate(), latent::LatentError);
    EXPECT_THROW(LatentSpec::categorical(2, 1).validate(), latent::LatentError);
    EXPECT_THROW(LatentSpec::gaussian(0).validate(), latent::LatentError);
    EXPECT_NO_THROW(LatentSpec::categorical(10, 20).validate());
    EXPECT_EQ(LatentSpec::categorical(10, 20).point_size(), 200);
}

TEST(Sample, CategoricalGreedyPicksArgmax) {
    Matrix l(1, 2);
    l << 2.0, 0.1;
    const auto s = latent::sample(DistributionParams::categorical(l), SampleMode::greedy, 1.0, 1);
    ASSERT_EQ(s.indices.size(), 1u);
    EXPECT_EQ(s.indices[0], 0);
    EXPECT_EQ(s.weights(0, 0), 1.0);
    EXPECT_EQ(s.weights(0, 1), 0.0);
}

TEST(Sample, GaussianWithVanishingVarianceReturnsMean) {
    Vector mean(3);
    mean << 0.5, -1.0, 2.0;
    const Vector logvar = Vector::Constant(3, -20.0);
    const auto s = latent::sample(DistributionParams::gaussian(mean, logvar), SampleMode::stochastic, 1.0, 9);
    EXPECT_LT((s.z - mean).cwiseAbs().maxCoeff(), 1e-4);
    const auto g = latent::sample(DistributionParams::gaussian(mean, logvar), SampleMode::greedy, 1.0, 9);
    EXPECT_EQ(g.z, mean);
}

TEST(Sample, UniformCategoricalFrequenciesMatchSoftmax) {
    const auto p = DistributionParams::categorical(Matrix::Zero(1, 3));
    Rng rng(123);
    constexpr int n = 10000;
    std::array<int, 3> counts{};
    for (int i = 0; i < n; ++i) ++counts[latent::sample(p, SampleMode::stochastic, 1.0, rng).indices[0]];
    const double sigma = std::sqrt(n * (1.0 / 3) * (2.0 / 3));
    for (int c : counts) EXPECT_LT(std::abs(c - n / 3.0), 3 * sigma);
}

TEST(Sample, SameSeedSameSample) {
    Rng rng(4);
    const auto p = DistributionParams::categorical(random_logits(rng, 4, 5));
    const auto a = latent::sample(p, SampleMode::stochastic, 1.0, 77);
    const auto b = latent::sample(p, SampleMode::stochastic, 1.0, 77);
    EXPECT_EQ(a.indices, b.indices);
    EXPECT_EQ(a.relaxed, b.relaxed);
    const auto g = DistributionParams::gaussian(Vector::Zero(3), Vector::Zero(3));
    EXPECT_EQ(latent::sample(g, SampleMode::stochastic, 1.0, 5).z, latent::sample(g, SampleMode::stochastic, 1.0, 5).z);
}

TEST(Sample, RejectsNonFiniteParameters) {
    Matrix l = Matrix::Zero(1, 2);
    l(0, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(latent::sample(DistributionParams::categorical(l), SampleMode::greedy, 1.0, 1), latent::LatentError);
    EXPECT_THROW(latent::sample(DistributionParams::categorical(Matrix::Zero(1, 2)), SampleMode::greedy, 0.0, 1),
                 latent::LatentError);
}

TEST(Sample, StraightThroughForwardIsArgmaxOfPerturbedLogits) {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = DistributionParams::categorical(random_logits(rng, 3, 6));
        const auto s = latent::sample(p, SampleMode::stochastic, 1.0, rng);
        const Matrix perturbed = p.logits + s.noise;
        for (int m = 0; m < 3; ++m) {
            Eigen::Index best = 0;
            perturbed.row(m).maxCoeff(&best);
            EXPECT_EQ(s.indices[static_cast<std::size_t>(m)], best);
            EXPECT_EQ(s.weights.row(m).sum(), 1.0);
            EXPECT_EQ(s.weights(m, best), 1.0);
            EXPECT_NEAR(s.relaxed.row(m).sum(), 1.0, 1e-6);
        }
    }
}

TEST(Sample, RelaxedWeightsApproachOneHotAtLowTemperature) {
    // Row deviation is bounded by (K-1) exp(-gap / tau), gap being the margin
    // between the two largest perturbed logits; rows with gap >= 10 tau must
    // be within 1e-3 of the one-hot at tau = 0.01.
    Rng rng(10);
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto p = DistributionParams::categorical(random_logits(rng, 4, 5));
        const std::uint64_t seed = rng.next();
        const auto s = latent::sample(p, SampleMode::stochastic, 0.01, seed);
        const auto warm = latent::sample(p, SampleMode::stochastic, 1.0, seed);
        EXPECT_EQ(s.noise, warm.noise);
        EXPECT_EQ(s.weights, warm.weights);
        const Matrix perturbed = p.logits + s.noise;
        for (int m = 0; m < 4; ++m) {
            Eigen::RowVectorXd row = perturbed.row(m);
            std::sort(row.data(), row.data() + row.size(), std::greater<>());
            const double gap = row(0) - row(1);
            const double dev = (s.relaxed.row(m) - s.weights.row(m)).cwiseAbs().maxCoeff();
            EXPECT_LE(dev, 4 * std::exp(-gap / 0.01) + 1e-12);
            EXPECT_LE(dev, (warm.relaxed.row(m) - warm.weights.row(m)).cwiseAbs().maxCoeff() + 1e-12);
            if (gap >= 0.1) {
                EXPECT_LT(dev, 1e-3);
                ++checked;
            }
        }
    }
    EXPECT_GT(checked, 700);
}

TEST(LogProb, UniformCategorical) {
    const auto p = DistributionParams::categorical(Matrix::Zero(10, 20));
    const auto s = latent::sample(p, SampleMode::stochastic, 1.0, 3);
    EXPECT_NEAR(latent::log_prob(p, s), 10 * std::log(1.0 / 20), 1e-12);
    EXPECT_NEAR(latent::log_prob(p, s), -29.9573, 1e-4);
}

TEST(LogProb, StandardGaussianAtOrigin) {
    const auto p = DistributionParams::gaussian(Vector::Zero(2), Vector::Zero(2));
    latent::LatentSample s = latent::sample(p, SampleMode::greedy, 1.0, 0);
    EXPECT_NEAR(latent::log_prob(p, s), -std::log(2 * std::numbers::pi), 1e-12);
    EXPECT_NEAR(latent::log_prob(p, s), -1.8379, 1e-4);
}

TEST(LogProb, MatchesEnumeratedProductDistribution) {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix l = random_logits(rng, 2, 2, 3.0);
        const auto p = DistributionParams::categorical(l);
        // Joint table over the four outcomes, normalized explicitly.
        double joint[2][2];
        double total = 0.0;
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) total += joint[a][b] = std::exp(l(0, a) + l(1, b));
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                latent::LatentSample s;
                s.spec = p.spec;
                s.indices = {a, b};
                s.weights = latent::one_hot(s.indices, 2);
                EXPECT_NEAR(latent::log_prob(p, s), std::log(joint[a][b] / total), 1e-10);
            }
        }
    }
}

TEST(LogProb, GreedySampleIsLocalMaximum) {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = DistributionParams::categorical(random_logits(rng, 3, 4));
        const auto g = latent::sample(p, SampleMode::greedy, 1.0, 0);
        const double best = latent::log_prob(p, g);
        for (int m = 0; m < 3; ++m) {
            for (int k = 0; k < 4; ++k) {
                auto s = g;
                s.indices[static_cast<std::size_t>(m)] = k;
                s.weights = latent::one_hot(s.indices, 4);
                EXPECT_LE(latent::log_prob(p, s), best);
            }
        }
    }
}

TEST(KL, UniformAgainstUniformPriorIsZero) {
    EXPECT_NEAR(latent::kl_to_uniform(DistributionParams::categorical(Matrix::Zero(10, 20))), 0.0, 1e-12);
}

TEST(KL, DegenerateBinaryAgainstUniform) {
    Matrix l(1, 2);
    l << 0.0, -1000.0;
    EXPECT_NEAR(latent::kl_to_uniform(DistributionParams::categorical(l)), std::log(2.0), 1e-12);
    EXPECT_NEAR(latent::kl_to_prior(DistributionParams::categorical(l)), 0.6931, 1e-4);
}

TEST(KL, UnitMeanGaussianAgainstStandardNormal) {
    const auto p = DistributionParams::gaussian(Vector::Ones(1), Vector::Zero(1));
    EXPECT_NEAR(latent::kl_to_standard_normal(p), 0.5, 1e-12);
    EXPECT_NEAR(latent::kl_divergence(p, DistributionParams::gaussian(Vector::Zero(1), Vector::Zero(1))), 0.5, 1e-12);
}

TEST(KL, MatchesEnumeration) {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix lp = random_logits(rng, 2, 3, 3.0);
        const Matrix lq = random_logits(rng, 2, 3, 3.0);
        // Sum over the 9 joint outcomes of p ln(p/q).
        const Matrix pp = latent::softmax_rows(lp);
        const Matrix qq = latent::softmax_rows(lq);
        double expected = 0.0;
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                const double pj = pp(0, a) * pp(1, b);
                const double qj = qq(0, a) * qq(1, b);
                expected += pj * std::log(pj / qj);
            }
        }
        EXPECT_NEAR(latent::kl_divergence(DistributionParams::categorical(lp), DistributionParams::categorical(lq)),
                    expected, 1e-10);
    }
}

TEST(KL, NonNegativeAndZeroOnIdentity) {
    Rng rng(51);
    for (int trial = 0; trial < 1000; ++trial) {
        if (trial % 2 == 0) {
            const auto p = DistributionParams::categorical(random_logits(rng, 3, 4, 4.0));
            const auto q = DistributionParams::categorical(random_logits(rng, 3, 4, 4.0));
            EXPECT_GE(latent::kl_divergence(p, q), 0.0);
            EXPECT_NEAR(latent::kl_divergence(p, p), 0.0, 1e-9);
        } else {
            Vector m1(3), v1(3), m2(3), v2(3);
            for (int i = 0; i < 3; ++i) {
                m1(i) = rng.uniform(-2, 2);
                v1(i) = rng.uniform(-2, 2);
                m2(i) = rng.uniform(-2, 2);
                v2(i) = rng.uniform(-2, 2);
            }
            const auto p = DistributionParams::gaussian(m1, v1);
            const auto q = DistributionParams::gaussian(m2, v2);
            EXPECT_GE(latent::kl_divergence(p, q), 0.0);
            EXPECT_NEAR(latent::kl_divergence(p, p), 0.0, 1e-9);
        }
    }
}

TEST(KL, RejectsSpecMismatch) {
    const auto p = DistributionParams::categorical(Matrix::Zero(2, 3));
    const auto q = DistributionParams::categorical(Matrix::Zero(2, 4));
    EXPECT_THROW(latent::kl_divergence(p, q), latent::LatentError);
    EXPECT_THROW(latent::kl_divergence(p, DistributionParams::gaussian(Vector::Zero(2), Vector::Zero(2))),
                 latent::LatentError);
}

TEST(Interpolate, TwoStepsAreTheEndpoints) {
    Rng rng(61);
    const auto p = DistributionParams::categorical(random_logits(rng, 2, 4));
    const auto a = latent::sample(p, SampleMode::stochastic, 1.0, 1);
    const auto b = latent::sample(p, SampleMode::stochastic, 1.0, 2);
    const auto path = latent::interpolate(a, b, 2);
    ASSERT_EQ(path.size(), 2u);
    EXPECT_EQ(path[0].weights, a.weights);
    EXPECT_EQ(path[1].weights, b.weights);
}

TEST(Interpolate, GaussianMidpoint) {
    Vector za(2), zb(2);
    za << 1.0, -3.0;
    zb << 2.0, 5.0;
    latent::LatentSample a, b;
    a.spec = b.spec = LatentSpec::gaussian(2);
    a.z = za;
    b.z = zb;
    const auto path = latent::interpolate(a, b, 3);
    ASSERT_EQ(path.size(), 3u);
    EXPECT_TRUE(path[1].z.isApprox((za + zb) / 2, 1e-15));
    EXPECT_EQ(path[0].z, za);
    EXPECT_EQ(path[2].z, zb);
}

TEST(Interpolate, CategoricalMixturesAreDistributions) {
    latent::LatentSample a, b;
    a.spec = b.spec = LatentSpec::categorical(3, 5);
    a.indices = {0, 1, 2};
    b.indices = {4, 1, 0};
    a.weights = latent::one_hot(a.indices, 5);
    b.weights = latent::one_hot(b.indices, 5);
    const auto path = latent::interpolate(a, b, 7);
    ASSERT_EQ(path.size(), 7u);
    for (std::size_t i = 0; i < path.size(); ++i) {
        const double lambda = static_cast<double>(i) / 6.0;
        for (int m = 0; m < 3; ++m) EXPECT_NEAR(path[i].weights.row(m).sum(), 1.0, 1e-12);
        EXPECT_NEAR(path[i].weights(0, 4), lambda, 1e-12);
        EXPECT_EQ(path[i].weights(1, 1), 1.0);
    }
    EXPECT_EQ(path.front().weights, a.weights);
    EXPECT_EQ(path.back().weights, b.weights);
}

TEST(Interpolate, RejectsBadInput) {
    latent::LatentSample a, b;
    a.spec = LatentSpec::gaussian(2);
    b.spec = LatentSpec::gaussian(3);
    a.z = Vector::Zero(2);
    b.z = Vector::Zero(3);
    EXPECT_THROW(latent::interpolate(a, b, 3), latent::LatentError);
    EXPECT_THROW(latent::interpolate(a, a, 1), latent::LatentError);
}

TEST(Serialize, CategoricalAsIndicesGaussianAsReals) {
    latent::LatentSample c;
    c.spec = LatentSpec::categorical(3, 4);
    c.indices = {2, 0, 3};
    c.weights = latent::one_hot(c.indices, 4);
    EXPECT_EQ(latent::to_json(c), nlohmann::json::parse("[2,0,3]"));
    latent::LatentSample g;
    g.spec = LatentSpec::gaussian(2);
    g.z = Vector::Zero(2);
    g.z << 0.5, -1.25;
    EXPECT_EQ(latent::to_json(g), nlohmann::json::parse("[0.5,-1.25]"));
}

TEST(Reparameterization, GradientsMatchFiniteDifferences) {
    // z = mean + exp(logvar / 2) * eps: dz/dmean = 1 and dz/dlogvar = sigma * eps / 2.
    const LatentSpec spec = LatentSpec::gaussian(3);
    Vector mean(3), logvar(3);
    mean << 0.3, -0.7, 1.1;
    logvar << -0.4, 0.2, 0.9;
    const auto params = DistributionParams::gaussian(mean, logvar);
    const auto s = latent::sample(params, SampleMode::stochastic, 1.0, 99);
    const Vector eps = s.noise.col(0);
    for (int d = 0; d < 3; ++d) {
        nn::Tape t;
        nn::LatentVars v;
        v.mean = t.leaf(mean);
        v.logvar = t.leaf(logvar);
        const nn::Var z = nn::latent_input(t, spec, v, s, 1.0);
        t.backward(ad::element(t, z, d, 0));
        const auto value = [&](const Vector& m, const Vector& lv) { return m(d) + std::exp(0.5 * lv(d)) * eps(d); };
        const double h = 1e-6;
        for (int j = 0; j < 3; ++j) {
            Vector mp = mean, mm = mean, lp = logvar, lm = logvar;
            mp(j) += h;
            mm(j) -= h;
            lp(j) += h;
            lm(j) -= h;
            const double fd_mean = (value(mp, logvar) - value(mm, logvar)) / (2 * h);
            const double fd_logvar = (value(mean, lp) - value(mean, lm)) / (2 * h);
            const double an_mean = t.grad(v.mean)(j, 0);
            const double an_logvar = t.grad(v.logvar)(j, 0);
            EXPECT_NEAR(an_mean, fd_mean, 1e-4 * std::max(1.0, std::abs(fd_mean)));
            EXPECT_NEAR(an_logvar, fd_logvar, 1e-4 * std::max(1e-6, std::abs(fd_logvar)));
            if (j == d) {
                EXPECT_DOUBLE_EQ(an_mean, 1.0);
                EXPECT_NEAR(an_logvar, 0.5 * std::exp(0.5 * logvar(d)) * eps(d), 1e-12);
            }
        }
    }
}
