#include "lava/analysis.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace lava::analysis {

std::string action_label(std::vector<std::string> actions) {
    std::sort(actions.begin(), actions.end());
    std::string out;
    for (const auto& a : actions) {
        if (!out.empty()) out += '+';
        out += a;
    }
    return out;
}

LabeledLatents collect_latents(const nn::Model& model, std::span<const corpus::Dialogue> dialogues) {
    const auto& cfg = model.config();
    std::vector<nn::Vector> rows;
    LabeledLatents out;
    for (const auto& d : dialogues) {
        for (std::size_t t = 0; t < d.turns.size(); ++t) {
            const auto ctx = corpus::make_context(d, t, cfg.mode, cfg.window);
            const auto params = nn::context_distribution(model, ctx);
            if (cfg.latent.kind == latent::Kind::categorical) {
                rows.push_back(latent::sample(params, latent::SampleMode::greedy, cfg.temperature, 0).point());
            } else {
                rows.push_back(params.mean);
            }
            out.ids.push_back(d.id);
            out.turns.push_back(t);
            out.domains.push_back(d.turns[t].domain);
            out.actions.push_back(action_label(d.turns[t].actions));
        }
    }
    const Eigen::Index dim = cfg.latent.point_size();
    out.points.resize(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) out.points.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return out;
}

LabeledLatents collect_latents(const nn::Model& model, const corpus::Corpus& corpus, corpus::Split split) {
    if (!corpus.has_action_labels) throw AnalysisError("corpus carries no domain/action labels");
    const auto dialogues = corpus::select_split(corpus, split);
    return collect_latents(model, dialogues);
}

ClusterScore calinski_harabasz(const Matrix& points, std::span<const std::string> labels) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (labels.size() != n) throw AnalysisError("label count does not match point count");
    std::map<std::string, std::vector<Eigen::Index>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[labels[i]].push_back(static_cast<Eigen::Index>(i));
    const std::size_t k = groups.size();
    if (k < 2) throw AnalysisError("Calinski-Harabasz index is undefined for fewer than 2 distinct labels");
    if (n <= k) throw AnalysisError("Calinski-Harabasz index needs more points than clusters");
    const Eigen::RowVectorXd centre = points.colwise().mean();
    double trace_b = 0.0;
    double trace_w = 0.0;
    for (const auto& [label, members] : groups) {
        Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(points.cols());
        for (Eigen::Index i : members) c += points.row(i);
        c /= static_cast<double>(members.size());
        trace_b += static_cast<double>(members.size()) * (c - centre).squaredNorm();
        for (Eigen::Index i : members) trace_w += (points.row(i) - c).squaredNorm();
    }
    if (trace_w == 0.0)
        throw AnalysisError(
            "degenerate clusters: within-cluster dispersion is zero, so the index is undefined "
            "(every cluster collapsed onto its centroid, which usually signals overfitting)");
    ClusterScore s;
    s.k = k;
    s.n = n;
    s.score = (trace_b / trace_w) * (static_cast<double>(n - k) / static_cast<double>(k - 1));
    return s;
}

Matrix principal_components(const Matrix& points) {
    const Eigen::Index n = points.rows();
    Matrix out = Matrix::Zero(n, 2);
    if (n == 0) return out;
    const Matrix centred = points.rowwise() - points.colwise().mean();
    const Matrix cov = centred.transpose() * centred / static_cast<double>(std::max<Eigen::Index>(1, n - 1));
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    const Eigen::Index d = cov.rows();
    for (int c = 0; c < 2 && c < d; ++c) {
        Eigen::VectorXd v = es.eigenvectors().col(d - 1 - c);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        out.col(c) = centred * v;
    }
    return out;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw AnalysisError("cannot write " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw AnalysisError("failed writing " + path.string());
}

std::string scatter_ppm(const Matrix& xy, std::span<const std::string> labels) {
    constexpr int kSize = 400;
    constexpr int kMargin = 12;
    static const unsigned char palette[][3] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                                               {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
                                               {188, 189, 34},  {23, 190, 207}};
    std::map<std::string, int> colour;
    for (const auto& l : labels) colour.emplace(l, 0);
    int next = 0;
    for (auto& [l, c] : colour) c = next++ % 10;
    std::vector<unsigned char> img(static_cast<std::size_t>(kSize) * kSize * 3, 255);
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (xy.rows() > 0) {
        x0 = xy.col(0).minCoeff();
        x1 = xy.col(0).maxCoeff();
        y0 = xy.col(1).minCoeff();
        y1 = xy.col(1).maxCoeff();
    }
    const double sx = x1 > x0 ? (kSize - 2 * kMargin) / (x1 - x0) : 0.0;
    const double sy = y1 > y0 ? (kSize - 2 * kMargin) / (y1 - y0) : 0.0;
    for (Eigen::Index i = 0; i < xy.rows(); ++i) {
        const int px = kMargin + static_cast<int>(std::lround((xy(i, 0) - x0) * sx));
        const int py = kSize - 1 - kMargin - static_cast<int>(std::lround((xy(i, 1) - y0) * sy));
        const auto& rgb = palette[colour[labels[static_cast<std::size_t>(i)]]];
        for (int dy = -2; dy <= 2; ++dy) {
            for (int dx = -2; dx <= 2; ++dx) {
                const int x = px + dx, y = py + dy;
                if (x < 0 || y < 0 || x >= kSize || y >= kSize) continue;
                auto* p = &img[(static_cast<std::size_t>(y) * kSize + x) * 3];
                p[0] = rgb[0];
                p[1] = rgb[1];
                p[2] = rgb[2];
            }
        }
    }
    std::string out = "P6\n" + std::to_string(kSize) + " " + std::to_string(kSize) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.data()), img.size());
    return out;
}

}  // namespace

ExportedFiles export_projection(const LabeledLatents& latents, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw AnalysisError("cannot create " + dir.string() + ": " + ec.message());
    ExportedFiles files{dir / "latents.csv", dir / "projection.csv", dir / "projection_domain.ppm",
                        dir / "projection_action.ppm"};
    const auto n = latents.size();
    const Eigen::Index d = latents.points.cols();
    std::string csv = "id,turn,domain,action";
    for (Eigen::Index j = 0; j < d; ++j) csv += ",x_" + std::to_string(j);
    csv += "\n";
    for (std::size_t i = 0; i < n; ++i) {
        csv += csv_field(latents.ids[i]) + "," + std::to_string(latents.turns[i]) + "," + csv_field(latents.domains[i]) +
               "," + csv_field(latents.actions[i]);
        for (Eigen::Index j = 0; j < d; ++j) csv += "," + number(latents.points(static_cast<Eigen::Index>(i), j));
        csv += "\n";
    }
    write_file(files.latents_csv, csv);

    const Matrix xy = principal_components(latents.points);
    std::string proj = "id,turn,domain,action,p0,p1\n";
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        proj += csv_field(latents.ids[i]) + "," + std::to_string(latents.turns[i]) + "," +
                csv_field(latents.domains[i]) + "," + csv_field(latents.actions[i]) + "," + number(xy(r, 0)) + "," +
                number(xy(r, 1)) + "\n";
    }
    write_file(files.projection_csv, proj);
    write_file(files.domain_plot, scatter_ppm(xy, latents.domains));
    write_file(files.action_plot, scatter_ppm(xy, latents.actions));
    return files;
}

std::vector<TraversalRow> traverse(const nn::Model& model, const corpus::Tokens& a, const corpus::Tokens& b, int steps,
                                   const corpus::ContextWindow* context_a, const corpus::ContextWindow* context_b,
                                   const std::function<void(const std::string&)>& warn) {
    if (steps < 2) throw AnalysisError("traversal needs at least 2 steps");
    const auto& cfg = model.config();
    latent::DistributionParams pa, pb;
    if (model.response_encoder()) {
        pa = nn::project_to_latent(model, nn::encode_response(model, a), nn::Path::response);
        pb = nn::project_to_latent(model, nn::encode_response(model, b), nn::Path::response);
    } else {
        if (context_a == nullptr || context_b == nullptr)
            throw AnalysisError("model has no response encoder and no contexts were supplied");
        if (warn) warn("model has no response encoder; encoding the supplied contexts instead");
        pa = nn::context_distribution(model, *context_a);
        pb = nn::context_distribution(model, *context_b);
    }
    const auto za = latent::sample(pa, latent::SampleMode::greedy, cfg.temperature, 0);
    const auto zb = latent::sample(pb, latent::SampleMode::greedy, cfg.temperature, 0);
    const auto path = latent::interpolate(za, zb, steps);
    std::vector<TraversalRow> rows;
    for (int i = 0; i < steps; ++i) {
        TraversalRow r;
        r.step = i + 1;
        r.alpha = static_cast<double>(i) / static_cast<double>(steps - 1);
        r.response = nn::decode(model, path[static_cast<std::size_t>(i)]).tokens;
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string render_traversal(std::span<const TraversalRow> rows) {
    std::ostringstream os;
    os << "step  alpha  response\n";
    for (const auto& r : rows) {
        char head[32];
        std::snprintf(head, sizeof head, "%-5d %-6.3f ", r.step, r.alpha);
        os << head << corpus::join(r.response) << "\n";
    }
    return os.str();
}

nlohmann::ordered_json traversal_json(std::span<const TraversalRow> rows) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : rows) arr.push_back({{"step", r.step}, {"alpha", r.alpha}, {"response", corpus::join(r.response)}});
    return arr;
}

nlohmann::ordered_json ClusterReport::to_json() const {
    const auto one = [](const std::optional<ClusterScore>& s, const std::string& err) {
        nlohmann::ordered_json j;
        if (s) {
            j["ch"] = s->score;
            j["k"] = s->k;
            j["n"] = s->n;
        } else {
            j["ch"] = nullptr;
            j["error"] = err;
        }
        return j;
    };
    nlohmann::ordered_json j;
    j["domain"] = one(domain, domain_error);
    j["action"] = one(action, action_error);
    return j;
}

std::string ClusterReport::table() const {
    const auto cell = [](const std::optional<ClusterScore>& s) {
        if (!s) return std::string("n/a");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", s->score);
        return std::string(buf);
    };
    std::ostringstream os;
    os << "CH(domain)  CH(action)\n";
    char line[64];
    std::snprintf(line, sizeof line, "%-11s %s\n", cell(domain).c_str(), cell(action).c_str());
    os << line;
    if (!domain) os << "domain: " << domain_error << "\n";
    if (!action) os << "action: " << action_error << "\n";
    return os.str();
}

ClusterReport cluster_report(const LabeledLatents& latents) {
    ClusterReport r;
    try {
        r.domain = calinski_harabasz(latents.points, latents.domains);
    } catch (const AnalysisError& e) {
        r.domain_error = e.what();
    }
    try {
        r.action = calinski_harabasz(latents.points, latents.actions);
    } catch (const AnalysisError& e) {
        r.action_error = e.what();
    }
    return r;
}

}  // namespace lava::analysis
