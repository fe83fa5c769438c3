#pragma once

// Latent-space diagnostics: labeled latent collection, the Calinski-Harabasz
// index, CSV/PCA/scatter exports and latent traversals.

#include "lava/corpus.hpp"
#include "lava/model.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lava::analysis {

using Matrix = Eigen::MatrixXd;

class AnalysisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LabeledLatents {
    std::vector<std::string> ids;
    std::vector<std::size_t> turns;
    /// n x d; categorical points are flattened hard one-hots, gaussian points the mean.
    Matrix points;
    std::vector<std::string> domains;
    std::vector<std::string> actions;

    [[nodiscard]] std::size_t size() const { return ids.size(); }
};

/// Sorted action identifiers joined with '+'.
std::string action_label(std::vector<std::string> actions);

/// One greedy context latent per system turn (gold history).
LabeledLatents collect_latents(const nn::Model& model, std::span<const corpus::Dialogue> dialogues);
LabeledLatents collect_latents(const nn::Model& model, const corpus::Corpus& corpus, corpus::Split split);

struct ClusterScore {
    double score = 0.0;
    std::size_t k = 0;
    std::size_t n = 0;
};

/// (tr(B) / tr(W)) * (n - k) / (k - 1).
ClusterScore calinski_harabasz(const Matrix& points, std::span<const std::string> labels);

/// Top-2 principal component scores (n x 2); signs fixed so each component's
/// largest-magnitude loading is positive.
Matrix principal_components(const Matrix& points);

struct ExportedFiles {
    std::filesystem::path latents_csv, projection_csv, domain_plot, action_plot;
};

/// Writes latents.csv, projection.csv and one PPM scatter plot per label set into `dir`.
ExportedFiles export_projection(const LabeledLatents& latents, const std::filesystem::path& dir);

struct TraversalRow {
    int step = 0;
    double alpha = 0.0;
    corpus::Tokens response;
};

/// Encodes `a` and `b` to greedy latents, interpolates `steps` points and
/// decodes each greedily. Models without a response encoder fall back to the
/// supplied contexts; `warn` receives a notice when that happens.
std::vector<TraversalRow> traverse(const nn::Model& model, const corpus::Tokens& a, const corpus::Tokens& b, int steps,
                                   const corpus::ContextWindow* context_a = nullptr,
                                   const corpus::ContextWindow* context_b = nullptr,
                                   const std::function<void(const std::string&)>& warn = {});

std::string render_traversal(std::span<const TraversalRow> rows);
nlohmann::ordered_json traversal_json(std::span<const TraversalRow> rows);

struct ClusterReport {
    std::optional<ClusterScore> domain, action;
    std::string domain_error, action_error;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    [[nodiscard]] std::string table() const;
};

/// CH for domain and action labels side by side; a failing label set records its error.
ClusterReport cluster_report(const LabeledLatents& latents);

}  // namespace lava::analysis
