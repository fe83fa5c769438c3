#include "lava/analysis.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

using namespace lava;
using analysis::Matrix;

namespace {

/// Direct double sums over every point and coordinate.
double brute_force_ch(const Matrix& x, const std::vector<std::string>& labels) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = static_cast<std::size_t>(x.cols());
    std::vector<std::string> names(labels.begin(), labels.end());
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    std::vector<double> centre(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centre[j] += x(i, j) / static_cast<double>(n);
    double tb = 0.0, tw = 0.0;
    for (const auto& name : names) {
        std::vector<double> c(d, 0.0);
        double count = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] != name) continue;
            count += 1.0;
            for (std::size_t j = 0; j < d; ++j) c[j] += x(i, j);
        }
        for (auto& v : c) v /= count;
        for (std::size_t j = 0; j < d; ++j) tb += count * (c[j] - centre[j]) * (c[j] - centre[j]);
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] != name) continue;
            for (std::size_t j = 0; j < d; ++j) tw += (x(i, j) - c[j]) * (x(i, j) - c[j]);
        }
    }
    const double k = static_cast<double>(names.size());
    return tb / tw * (static_cast<double>(n) - k) / (k - 1.0);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(CalinskiHarabasz, HandCaseIs200) {
    Matrix x(4, 2);
    x << 0, 0, 0, 1, 10, 0, 10, 1;
    const std::vector<std::string> y{"A", "A", "B", "B"};
    const auto s = analysis::calinski_harabasz(x, y);
    EXPECT_NEAR(s.score, 200.0, 1e-9);
    EXPECT_EQ(s.k, 2u);
    EXPECT_EQ(s.n, 4u);
}

TEST(CalinskiHarabasz, MatchesIndependentLibraryValue) {
    // Value from scikit-learn's calinski_harabasz_score on the same data.
    Matrix x(10, 3);
    x << 0, 0, 1, 1, 0, 2, 0, 2, 1, 5, 5, 0, 6, 5, 1, 5, 7, 0, 9, 0, 3, 8, 1, 4, 10, 1, 3, 9, 2, 2;
    const std::vector<std::string> y{"a", "a", "a", "b", "b", "b", "c", "c", "c", "c"};
    EXPECT_NEAR(analysis::calinski_harabasz(x, y).score, 47.575000000000003, 1e-9);
}

TEST(CalinskiHarabasz, MatchesBruteForceOnRandomSets) {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(4));
        const int n = k + 1 + static_cast<int>(rng.below(30));
        const int d = 1 + static_cast<int>(rng.below(6));
        Matrix x(n, d);
        std::vector<std::string> y(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            // Every label appears at least once.
            const int label = i < k ? i : static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
            y[static_cast<std::size_t>(i)] = "c" + std::to_string(label);
            for (int j = 0; j < d; ++j) x(i, j) = rng.normal() + 2.0 * label;
        }
        const double expected = brute_force_ch(x, y);
        EXPECT_NEAR(analysis::calinski_harabasz(x, y).score, expected, 1e-9 * std::max(1.0, std::abs(expected)))
            << "trial " << trial;
    }
}

TEST(CalinskiHarabasz, InvariantUnderTranslation) {
    Rng rng(4);
    Matrix x(20, 3);
    std::vector<std::string> y;
    for (int i = 0; i < 20; ++i) {
        y.push_back(i % 3 == 0 ? "a" : (i % 3 == 1 ? "b" : "c"));
        for (int j = 0; j < 3; ++j) x(i, j) = rng.normal() + (i % 3);
    }
    const double base = analysis::calinski_harabasz(x, y).score;
    Eigen::RowVectorXd shift(3);
    shift << 100.0, -37.5, 4.25;
    const Matrix moved = x.rowwise() + shift;
    EXPECT_NEAR(analysis::calinski_harabasz(moved, y).score, base, 1e-9 * base);
}

TEST(CalinskiHarabasz, SingleLabelIsAnError) {
    Matrix x(3, 1);
    x << 0, 1, 2;
    const std::vector<std::string> y{"a", "a", "a"};
    EXPECT_THROW(analysis::calinski_harabasz(x, y), analysis::AnalysisError);
}

TEST(CalinskiHarabasz, TooFewPointsAndMismatchedLabelsAreErrors) {
    Matrix x(2, 1);
    x << 0, 1;
    const std::vector<std::string> y{"a", "b"};
    EXPECT_THROW(analysis::calinski_harabasz(x, y), analysis::AnalysisError);
    const std::vector<std::string> short_labels{"a"};
    EXPECT_THROW(analysis::calinski_harabasz(x, short_labels), analysis::AnalysisError);
}

TEST(CalinskiHarabasz, CollapsedClustersReportDegeneracy) {
    Matrix x(4, 2);
    x << 0, 0, 0, 0, 5, 5, 5, 5;
    const std::vector<std::string> y{"a", "a", "b", "b"};
    try {
        analysis::calinski_harabasz(x, y);
        FAIL() << "expected an error";
    } catch (const analysis::AnalysisError& e) {
        EXPECT_NE(std::string(e.what()).find("degenerate clusters"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("overfitting"), std::string::npos);
    }
}

TEST(ClusterReport, EmitsBothLabelSetsEvenWhenOneFails) {
    analysis::LabeledLatents l;
    l.points.resize(4, 2);
    l.points << 0, 0, 0, 1, 10, 0, 10, 1;
    l.ids = {"a", "a", "b", "b"};
    l.turns = {0, 1, 0, 1};
    l.domains = {"hotel", "hotel", "taxi", "taxi"};
    l.actions = {"inform-hotel", "inform-hotel", "inform-hotel", "inform-hotel"};
    const auto r = analysis::cluster_report(l);
    ASSERT_TRUE(r.domain.has_value());
    EXPECT_NEAR(r.domain->score, 200.0, 1e-9);
    EXPECT_FALSE(r.action.has_value());
    EXPECT_FALSE(r.action_error.empty());
    const auto j = r.to_json();
    EXPECT_TRUE(j.contains("domain"));
    EXPECT_TRUE(j.contains("action"));
    EXPECT_TRUE(j["action"]["ch"].is_null());
    const std::string table = r.table();
    EXPECT_NE(table.find("CH(domain)"), std::string::npos);
    EXPECT_NE(table.find("CH(action)"), std::string::npos);
    EXPECT_NE(table.find("200.00"), std::string::npos);
}

TEST(ActionLabel, SortsAndJoins) {
    EXPECT_EQ(analysis::action_label({"request-hotel", "inform-hotel"}), "inform-hotel+request-hotel");
    EXPECT_EQ(analysis::action_label({}), "");
}

TEST(PrincipalComponents, LineKeepsDistanceOrderAlongTopComponent) {
    Matrix x(6, 3);
    const Eigen::RowVector3d dir(1.0, 2.0, -0.5);
    const double ts[] = {-2.0, 0.5, 3.0, -0.7, 1.2, 4.4};
    for (int i = 0; i < 6; ++i) x.row(i) = Eigen::RowVector3d(1.0, 1.0, 1.0) + ts[i] * dir;
    const Matrix p = analysis::principal_components(x);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            for (int a = 0; a < 6; ++a) {
                for (int b = 0; b < 6; ++b) {
                    const bool closer = std::abs(ts[i] - ts[j]) < std::abs(ts[a] - ts[b]);
                    if (closer) { EXPECT_LT(std::abs(p(i, 0) - p(j, 0)), std::abs(p(a, 0) - p(b, 0)) + 1e-9); }
                }
            }
        }
        EXPECT_NEAR(p(i, 1), 0.0, 1e-9);
    }
    // Top component recovers the line parameter up to scale and sign convention.
    const double scale = dir.norm();
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(std::abs(p(i, 0) - p(0, 0)), scale * std::abs(ts[i] - ts[0]), 1e-9);
}

TEST(Export, WritesCsvPlotsAndIsByteStable) {
    analysis::LabeledLatents l;
    l.points.resize(5, 3);
    l.points << 0, 0, 1, 0, 1, 0, 1, 0, 0, 1, 1, 0, 0, 1, 1;
    l.ids = {"d1", "d1", "d2", "d2", "d3"};
    l.turns = {0, 1, 0, 1, 0};
    l.domains = {"hotel", "hotel", "taxi", "taxi", "hotel"};
    l.actions = {"inform-hotel", "request-hotel+inform-hotel", "book-taxi", "book-taxi", "inform-hotel"};
    const auto dir = test::scratch_dir("export");
    const auto files = analysis::export_projection(l, dir / "a");
    const std::string latents = slurp(files.latents_csv);
    EXPECT_EQ(line_count(latents), 6u);
    EXPECT_EQ(latents.substr(0, latents.find('\n')), "id,turn,domain,action,x_0,x_1,x_2");
    const std::string proj = slurp(files.projection_csv);
    EXPECT_EQ(line_count(proj), 6u);
    EXPECT_EQ(proj.substr(0, proj.find('\n')), "id,turn,domain,action,p0,p1");
    for (const auto& plot : {files.domain_plot, files.action_plot}) {
        const std::string img = slurp(plot);
        ASSERT_GE(img.size(), 15u);
        EXPECT_EQ(img.substr(0, 3), "P6\n");
    }
    const auto again = analysis::export_projection(l, dir / "b");
    EXPECT_EQ(slurp(again.latents_csv), latents);
    EXPECT_EQ(slurp(again.projection_csv), proj);
    EXPECT_EQ(slurp(again.domain_plot), slurp(files.domain_plot));
    EXPECT_EQ(slurp(again.action_plot), slurp(files.action_plot));
    std::filesystem::remove_all(dir);
}

TEST(Export, UnwritablePathIsAnError) {
    analysis::LabeledLatents l;
    l.points.resize(0, 2);
    const auto dir = test::scratch_dir("export_bad");
    const auto blocker = dir / "file";
    std::ofstream(blocker) << "x";
    EXPECT_THROW(analysis::export_projection(l, blocker / "sub"), analysis::AnalysisError);
    std::filesystem::remove_all(dir);
}

TEST(CollectLatents, OnePointPerSystemTurnWithLabels) {
    const auto c = test::small_corpus(12, 7);
    nn::ModelConfig cfg = test::toy_config(c);
    const nn::Model m(cfg, test::toy_vocab(c, 40), 3);
    const auto l = analysis::collect_latents(m, c.dialogues);
    std::size_t turns = 0;
    for (const auto& d : c.dialogues) turns += d.turns.size();
    EXPECT_EQ(l.size(), turns);
    EXPECT_EQ(static_cast<std::size_t>(l.points.rows()), turns);
    EXPECT_EQ(l.points.cols(), 6);
    EXPECT_EQ(l.domains.size(), turns);
    EXPECT_EQ(l.actions.size(), turns);
    // Categorical points are hard one-hots: each variable row sums to one.
    for (Eigen::Index i = 0; i < l.points.rows(); ++i) EXPECT_DOUBLE_EQ(l.points.row(i).sum(), 2.0);
    const auto again = analysis::collect_latents(m, c.dialogues);
    EXPECT_EQ(again.points, l.points);
}

TEST(CollectLatents, DefaultLatentGives200Dimensions) {
    const auto c = test::small_corpus(3, 7);
    nn::ModelConfig cfg = test::toy_config(c, latent::LatentSpec::categorical(10, 20));
    const nn::Model m(cfg, test::toy_vocab(c, 40), 3);
    EXPECT_EQ(analysis::collect_latents(m, c.dialogues).points.cols(), 200);
}

TEST(CollectLatents, IdenticalContextsGiveIdenticalPoints) {
    const auto c = test::small_corpus(4, 7);
    std::vector<corpus::Dialogue> twice{c.dialogues[0], c.dialogues[0]};
    twice[1].id = "copy";
    nn::ModelConfig cfg = test::toy_config(c);
    const nn::Model m(cfg, test::toy_vocab(c, 40), 3);
    const auto l = analysis::collect_latents(m, twice);
    const Eigen::Index half = l.points.rows() / 2;
    EXPECT_EQ(l.points.topRows(half), l.points.bottomRows(half));
}

TEST(CollectLatents, CorpusWithoutLabelsIsAnError) {
    auto c = test::small_corpus(4, 7);
    c.has_action_labels = false;
    nn::ModelConfig cfg = test::toy_config(c);
    const nn::Model m(cfg, test::toy_vocab(c, 40), 3);
    EXPECT_THROW(analysis::collect_latents(m, c, corpus::Split::train), analysis::AnalysisError);
}

TEST(Traverse, StepsEndpointsAndIdenticalInputs) {
    const auto c = test::small_corpus(6, 7);
    nn::ModelConfig cfg = test::toy_config(c);
    cfg.has_response_encoder = true;
    const nn::Model m(cfg, test::toy_vocab(c, 40), 3);
    const auto a = c.dialogues[0].turns[0].system;
    const auto b = c.dialogues[1].turns.back().system;
    const auto two = analysis::traverse(m, a, b, 2);
    ASSERT_EQ(two.size(), 2u);
    const auto za = latent::sample(nn::project_to_latent(m, nn::encode_response(m, a), nn::Path::response),
                                   latent::SampleMode::greedy, 1.0, 0);
    const auto zb = latent::sample(nn::project_to_latent(m, nn::encode_response(m, b), nn::Path::response),
                                   latent::SampleMode::greedy, 1.0, 0);
    EXPECT_EQ(two[0].response, nn::decode(m, za).tokens);
    EXPECT_EQ(two[1].response, nn::decode(m, zb).tokens);
    EXPECT_EQ(two[0].alpha, 0.0);
    EXPECT_EQ(two[1].alpha, 1.0);

    const auto seven = analysis::traverse(m, a, b, 7);
    ASSERT_EQ(seven.size(), 7u);
    for (int i = 0; i < 7; ++i) EXPECT_EQ(seven[static_cast<std::size_t>(i)].step, i + 1);
    EXPECT_EQ(line_count(analysis::render_traversal(seven)), 8u);
    EXPECT_EQ(analysis::traversal_json(seven).size(), 7u);

    const auto same = analysis::traverse(m, a, a, 5);
    for (const auto& r : same) EXPECT_EQ(r.response, same[0].response);
    EXPECT_THROW(analysis::traverse(m, a, b, 1), analysis::AnalysisError);
}

TEST(Traverse, FallsBackToContextsWithWarning) {
    const auto c = test::small_corpus(6, 7);
    nn::ModelConfig cfg = test::toy_config(c);
    cfg.has_response_encoder = false;
    const nn::Model m(cfg, test::toy_vocab(c, 40), 3);
    const auto a = c.dialogues[0].turns[0].system;
    const auto b = c.dialogues[1].turns[0].system;
    EXPECT_THROW(analysis::traverse(m, a, b, 3), analysis::AnalysisError);
    const auto ca = corpus::make_context(c.dialogues[0], 0, cfg.mode, cfg.window);
    const auto cb = corpus::make_context(c.dialogues[1], 0, cfg.mode, cfg.window);
    std::vector<std::string> warnings;
    const auto rows = analysis::traverse(m, a, b, 3, &ca, &cb, [&](const std::string& w) { warnings.push_back(w); });
    EXPECT_EQ(rows.size(), 3u);
    EXPECT_EQ(warnings.size(), 1u);
}
