#include "lava/cli.hpp"

#include "lava/analysis.hpp"
#include "lava/config.hpp"
#include "lava/corpus.hpp"
#include "lava/eval.hpp"
#include "lava/model.hpp"
#include "lava/objectives.hpp"
#include "lava/rl.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

namespace lava::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw UsageError("cannot write " + path.string());
    f << text;
    if (!f) throw UsageError("failed writing " + path.string());
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

std::optional<std::string> env(const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

config::Config load_settings(const std::string& path) {
    config::Config c = path.empty() ? config::default_config() : config::load_config(path);
    if (const auto s = env("LAVA_SEED")) {
        std::uint64_t seed = 0;
        std::istringstream is(*s);
        if (!(is >> seed) || !is.eof()) throw UsageError("LAVA_SEED must be a non-negative integer, got '" + *s + "'");
        c.set_seed(seed);
    }
    return c;
}

struct CorpusArgs {
    std::string path;
    std::string format = "native-json";
    std::string db;

    void add(CLI::App& app) {
        app.add_option("--corpus", path, "corpus file")->required();
        app.add_option("--format", format, "native-json or multiwoz-json")
            ->check(CLI::IsMember({"native-json", "multiwoz-json"}));
        app.add_option("--db", db, "entity database (multiwoz-json only)");
    }

    [[nodiscard]] corpus::Corpus load() const {
        if (!fs::exists(path)) throw UsageError("corpus not found: " + path);
        if (format == "multiwoz-json") {
            if (db.empty()) throw UsageError("--db is required with --format multiwoz-json");
            return corpus::load_corpus(path, corpus::Format::multiwoz_json, fs::path(db));
        }
        return corpus::load_corpus(path, corpus::Format::native_json);
    }
};

nn::Model load_model(const std::string& path) {
    if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
    nn::Model model = nn::load_checkpoint(path);
    for (const auto& p : model.params())
        if (!p.value.allFinite()) throw train::NumericError("checkpoint has non-finite parameter " + p.name);
    return model;
}

std::string report_table(const eval::EvaluationReport& r, const std::string& split) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "split      dialogues  match   success  bleu\n";
    os << std::left << std::setw(11) << split << std::setw(11) << r.n_dialogues << std::setw(8) << r.match
       << std::setw(9) << r.success << r.bleu << "\n";
    return os.str();
}

struct SplitReport {
    ordered_json json;
    std::string table;
};

// Dialogue metrics for response generators; reconstruction accuracy for a
// response autoencoder, which cannot act as a policy.
SplitReport split_report(const nn::Model& model, const corpus::Corpus& corp, corpus::Split split) {
    const auto dialogues = corpus::select_split(corp, split);
    if (model.context_encoder()) {
        const auto report = eval::evaluate_model(model, dialogues, corp.db);
        return {report.to_json(), report_table(report, corpus::to_string(split))};
    }
    std::vector<corpus::Tokens> responses;
    for (const auto& d : dialogues)
        for (const auto& t : d.turns) responses.push_back(t.system);
    const double acc = train::reconstruction_accuracy(model, responses);
    ordered_json j;
    j["reconstruction_accuracy"] = acc;
    j["n_responses"] = responses.size();
    std::ostringstream os;
    os << "split      responses  reconstruction\n"
       << std::left << std::setw(11) << corpus::to_string(split) << std::setw(11) << responses.size() << std::fixed
       << std::setprecision(4) << acc << "\n";
    return {j, os.str()};
}

int gen_corpus(const std::string& config_path, const std::string& out_path, std::ostream& out) {
    const config::Config c = load_settings(config_path);
    const corpus::Corpus corp = corpus::generate_synthetic_corpus(c.world, c.seed);
    const fs::path target(out_path);
    corpus::save_corpus(corp, target);
    ordered_json manifest;
    manifest["train"] = ordered_json::array();
    manifest["valid"] = ordered_json::array();
    manifest["test"] = ordered_json::array();
    std::map<corpus::Split, std::size_t> counts;
    for (const auto& [id, split] : corpus::assign_splits(corp)) {
        manifest[corpus::to_string(split)].push_back(id);
        ++counts[split];
    }
    const fs::path manifest_path = target.parent_path() / (target.stem().string() + ".splits.json");
    write_text(manifest_path, dump(manifest));
    std::size_t turns = 0;
    for (const auto& d : corp.dialogues) turns += d.turns.size();
    out << "dialogues " << corp.dialogues.size() << "  turns " << turns << "  domains " << c.world.domains.size()
        << "  train " << counts[corpus::Split::train] << "  valid " << counts[corpus::Split::valid] << "  test "
        << counts[corpus::Split::test] << "\n";
    out << "wrote " << target.string() << " and " << manifest_path.string() << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string scheme;
    std::string config;
    std::string init;
    std::string run_dir;
    CorpusArgs corpus;
};

int train(const TrainArgs& a, std::ostream& out) {
    const bool is_rl = a.scheme == "rl";
    std::optional<train::Scheme> scheme;
    if (!is_rl) {
        try {
            scheme = train::scheme_from_string(a.scheme);
        } catch (const train::TrainError& e) {
            throw UsageError(e.what());
        }
    }
    if ((is_rl || train::needs_init(*scheme)) && a.init.empty())
        throw UsageError("scheme '" + a.scheme + "' requires --init <checkpoint>");
    config::Config c = load_settings(a.config);
    const corpus::Corpus corp = a.corpus.load();
    std::optional<nn::Model> init;
    if (!a.init.empty()) init = load_model(a.init);

    fs::path dir = a.run_dir.empty() ? fs::path(env("LAVA_RUN_DIR").value_or("runs/" + a.scheme)) : fs::path(a.run_dir);
    fs::create_directories(dir);
    write_text(dir / "config.ini", c.text);
    ordered_json run;
    run["scheme"] = a.scheme;
    run["seed"] = c.seed;
    run["corpus"] = fs::absolute(a.corpus.path).string();
    run["format"] = a.corpus.format;
    run["init"] = a.init.empty() ? ordered_json(nullptr) : ordered_json(fs::absolute(a.init).string());
    write_text(dir / "run.json", dump(run));

    fs::path ckpt;
    std::optional<nn::Model> best;
    if (is_rl) {
        const fs::path curve = dir / "curve.jsonl";
        fs::remove(curve);
        std::vector<fs::path> stale;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.path().filename().string().rfind("rl_best_ep", 0) == 0) stale.push_back(entry.path());
        for (const auto& p : stale) fs::remove(p);
        rl::RLResult r = rl::train_rl(c.rl, *init, corp, dir, [&](const rl::CurvePoint& p) {
            out << "episode " << p.episode << "  reward " << p.train_reward_mean << "  match " << p.valid_match
                << "  success " << p.valid_success << std::endl;
        });
        ckpt = dir / ("rl_best_ep" + std::to_string(r.best_episode));
        best = std::move(r.model);
    } else {
        train::TrainingConfig tc = c.training;
        tc.scheme = *scheme;
        const fs::path metrics = dir / "metrics.jsonl";
        fs::remove(metrics);
        train::TrainResult r = train::train_supervised(tc, corp, init ? &*init : nullptr, metrics,
                                                       [&](const train::EpochMetrics& m) {
                                                           out << m.to_json().dump() << std::endl;
                                                       });
        ckpt = dir / "best.ckpt";
        nn::save_checkpoint(r.model, ckpt);
        best = std::move(r.model);
    }
    const SplitReport report = split_report(*best, corp, corpus::Split::test);
    write_text(dir / "report.json", dump(report.json));
    out << report.table;
    out << "checkpoint " << ckpt.string() << "\n";
    return kExitOk;
}

int evaluate(const std::string& ckpt, const CorpusArgs& ca, const std::string& split_name, const std::string& out_path,
             std::ostream& out) {
    const corpus::Split split = corpus::split_from_string(split_name);
    const nn::Model model = load_model(ckpt);
    const corpus::Corpus corp = ca.load();
    const SplitReport report = split_report(model, corp, split);
    const std::string json = dump(report.json);
    if (!out_path.empty()) write_text(out_path, json);
    out << report.table << json;
    return kExitOk;
}

int analyze(const std::string& ckpt, const CorpusArgs& ca, const std::string& split_name, const std::string& out_dir,
            std::ostream& out) {
    const corpus::Split split = corpus::split_from_string(split_name);
    const nn::Model model = load_model(ckpt);
    const corpus::Corpus corp = ca.load();
    const auto latents = analysis::collect_latents(model, corp, split);
    const auto report = analysis::cluster_report(latents);
    const fs::path dir = out_dir.empty() ? fs::path(ckpt).parent_path() / "analysis" : fs::path(out_dir);
    const auto files = analysis::export_projection(latents, dir);
    const std::string json = dump(report.to_json());
    write_text(dir / "cluster.json", json);
    out << report.table() << json;
    out << "exports " << files.latents_csv.string() << " " << files.projection_csv.string() << " "
        << files.domain_plot.string() << " " << files.action_plot.string() << "\n";
    return kExitOk;
}

struct TraverseArgs {
    std::string checkpoint;
    CorpusArgs corpus;
    std::string id_a, id_b;
    std::size_t turn_a = 0, turn_b = 0;
    int steps = 7;
};

int traverse(const TraverseArgs& a, std::ostream& out, std::ostream& err) {
    const nn::Model model = load_model(a.checkpoint);
    const corpus::Corpus corp = a.corpus.load();
    const auto pick = [&](const std::string& id, std::size_t turn) -> const corpus::Dialogue& {
        const corpus::Dialogue* d = corp.find(id);
        if (d == nullptr) throw UsageError("no dialogue '" + id + "' in corpus");
        if (turn >= d->turns.size())
            throw UsageError("dialogue '" + id + "' has " + std::to_string(d->turns.size()) + " turns, asked for turn " +
                             std::to_string(turn));
        return *d;
    };
    const corpus::Dialogue& da = pick(a.id_a, a.turn_a);
    const corpus::Dialogue& db = pick(a.id_b, a.turn_b);
    const auto& cfg = model.config();
    const auto ctx_a = corpus::make_context(da, a.turn_a, cfg.mode, cfg.window);
    const auto ctx_b = corpus::make_context(db, a.turn_b, cfg.mode, cfg.window);
    const auto rows = analysis::traverse(model, da.turns[a.turn_a].system, db.turns[a.turn_b].system, a.steps, &ctx_a,
                                         &ctx_b, [&](const std::string& msg) { err << "warning: " << msg << "\n"; });
    out << analysis::render_traversal(rows) << dump(analysis::traversal_json(rows));
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Latent-action dialogue policy toolkit"};
    app.require_subcommand(1);

    std::string gen_config, gen_out;
    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
    gen->add_option("--config", gen_config, "config file");
    gen->add_option("--out", gen_out, "output corpus path")->required();

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "train a model under a scheme");
    tr->add_option("scheme", ta.scheme, "vae, mle, lite, full, pt_all, pt_selective, kl_prior, multitask or rl")
        ->required();
    tr->add_option("--config", ta.config, "config file");
    tr->add_option("--init", ta.init, "checkpoint to start from");
    tr->add_option("--run-dir", ta.run_dir, "run directory (default $LAVA_RUN_DIR or runs/<scheme>)");
    ta.corpus.add(*tr);

    std::string ev_ckpt, ev_split = "test", ev_out;
    CorpusArgs ev_corpus;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint")->required();
    ev->add_option("--split", ev_split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
    ev->add_option("--out", ev_out, "report path");
    ev_corpus.add(*ev);

    std::string an_ckpt, an_split = "test", an_out;
    CorpusArgs an_corpus;
    auto* an = app.add_subcommand("analyze", "cluster quality and latent projections");
    an->add_option("--checkpoint", an_ckpt, "checkpoint")->required();
    an->add_option("--split", an_split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
    an->add_option("--out-dir", an_out, "export directory (default <checkpoint dir>/analysis)");
    an_corpus.add(*an);

    TraverseArgs va;
    auto* tv = app.add_subcommand("traverse", "decode along a line between two latents");
    tv->add_option("--checkpoint", va.checkpoint, "checkpoint")->required();
    va.corpus.add(*tv);
    tv->add_option("id_a", va.id_a, "first dialogue id")->required();
    tv->add_option("turn_a", va.turn_a, "first turn index")->required();
    tv->add_option("id_b", va.id_b, "second dialogue id")->required();
    tv->add_option("turn_b", va.turn_b, "second turn index")->required();
    tv->add_option("--steps", va.steps, "number of points")->check(CLI::PositiveNumber);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (*gen) return gen_corpus(gen_config, gen_out, out);
        if (*tr) return train(ta, out);
        if (*ev) return evaluate(ev_ckpt, ev_corpus, ev_split, ev_out, out);
        if (*an) return analyze(an_ckpt, an_corpus, an_split, an_out, out);
        if (*tv) return traverse(va, out, err);
    } catch (const train::NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace lava::cli
