#include "lava/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace lava::config {

namespace pt = boost::property_tree;

void Config::set_seed(std::uint64_t s) {
    seed = s;
    training.seed = s;
    rl.seed = s;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

class Section {
public:
    Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

    [[nodiscard]] bool has(const std::string& key) {
        seen_.insert(key);
        return tree_ != nullptr && tree_->find(key) != tree_->not_found();
    }

    std::string str(const std::string& key) { return trim(tree_->get<std::string>(key)); }

    template <class T>
    void read(const std::string& key, T& out) {
        if (!has(key)) return;
        const std::string raw = str(key);
        std::istringstream is(raw);
        T v{};
        if constexpr (std::is_same_v<T, bool>) {
            if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") v = true;
            else if (raw == "false" || raw == "0" || raw == "no" || raw == "off") v = false;
            else fail(key, raw);
        } else {
            is >> v;
            if (!is || !is.eof()) fail(key, raw);
        }
        out = v;
    }

    void check_unknown() const {
        if (tree_ == nullptr) return;
        for (const auto& [key, child] : *tree_) {
            if (!seen_.contains(key)) throw ConfigError("unknown key '" + key + "' in [" + name_ + "]");
        }
    }

    [[noreturn]] void fail(const std::string& key, const std::string& raw) const {
        throw ConfigError("bad value '" + raw + "' for " + name_ + "." + key);
    }

private:
    std::string name_;
    const pt::ptree* tree_;
    std::set<std::string> seen_;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!trim(cur).empty()) out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

const pt::ptree* child(const pt::ptree& root, const std::string& name) {
    const auto it = root.find(name);
    return it == root.not_found() ? nullptr : &it->second;
}

}  // namespace

Config default_config() { return parse_config(""); }

Config parse_config(const std::string& text) {
    pt::ptree root;
    try {
        std::istringstream is(text);
        pt::read_ini(is, root);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax error: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    Config c;
    c.text = text;
    static const std::set<std::string> sections = {"run", "corpus", "model", "train", "rl"};
    for (const auto& [key, node] : root) {
        if (node.empty() && key == "seed") continue;
        if (!sections.contains(key)) throw ConfigError("unknown section or key '" + key + "'");
    }

    std::uint64_t seed = 0;
    if (const auto it = root.find("seed"); it != root.not_found() && it->second.empty()) {
        std::istringstream is(trim(it->second.data()));
        if (!(is >> seed)) throw ConfigError("bad value for seed");
    }
    Section run("run", child(root, "run"));
    run.read("seed", seed);
    run.check_unknown();

    Section cs("corpus", child(root, "corpus"));
    auto& w = c.world;
    if (cs.has("domains")) {
        const auto wanted = split_list(cs.str("domains"));
        const auto catalog = corpus::default_world().domains;
        w.domains.clear();
        for (const auto& name : wanted) {
            const auto it = std::find_if(catalog.begin(), catalog.end(), [&](const auto& d) { return d.name == name; });
            if (it == catalog.end()) throw ConfigError("unknown domain '" + name + "' in corpus.domains");
            w.domains.push_back(*it);
        }
    }
    cs.read("dialogues", w.dialogue_count);
    cs.read("entities_per_domain", w.entities_per_domain);
    cs.read("min_turns", w.min_turns);
    cs.read("max_turns", w.max_turns);
    cs.read("multi_domain_rate", w.multi_domain_rate);
    cs.read("two_request_rate", w.two_request_rate);
    cs.read("split_inform_rate", w.split_inform_rate);
    cs.read("booking_rate", w.booking_rate);
    cs.read("partial_answer_rate", w.partial_answer_rate);
    cs.check_unknown();
    for (double r : {w.multi_domain_rate, w.two_request_rate, w.split_inform_rate, w.booking_rate, w.partial_answer_rate})
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("corpus rates must lie in [0, 1]");

    Section ms("model", child(root, "model"));
    auto& mc = c.training.model;
    std::string kind = "categorical";
    ms.read("latent", kind);
    try {
        mc.latent.kind = latent::kind_from_string(kind);
    } catch (const latent::LatentError& e) {
        throw ConfigError(e.what());
    }
    mc.latent = mc.latent.kind == latent::Kind::categorical ? latent::LatentSpec::categorical(10, 20)
                                                            : latent::LatentSpec::gaussian(200);
    ms.read("M", mc.latent.M);
    if (mc.latent.kind == latent::Kind::categorical) ms.read("K", mc.latent.K);
    mc.decoder = nn::DecoderConfig::for_latent(mc.latent.kind);
    std::string mode = corpus::to_string(mc.mode);
    ms.read("mode", mode);
    try {
        mc.mode = corpus::task_mode_from_string(mode);
    } catch (const corpus::CorpusError& e) {
        throw ConfigError(e.what());
    }
    mc.window = corpus::default_window(mc.mode);
    ms.read("window", mc.window);
    ms.read("encoder_embed", mc.encoder.embed);
    ms.read("encoder_hidden", mc.encoder.hidden);
    ms.read("bidirectional", mc.encoder.bidirectional);
    ms.read("decoder_embed", mc.decoder.embed);
    ms.read("decoder_hidden", mc.decoder.hidden);
    ms.read("attention", mc.decoder.attention);
    ms.read("max_length", mc.decoder.max_length);
    ms.read("latent_embed", mc.decoder.latent_embed);
    ms.read("temperature", mc.temperature);
    ms.read("vocab_size", c.training.vocab_size);
    ms.check_unknown();
    try {
        mc.latent.validate();
    } catch (const latent::LatentError& e) {
        throw ConfigError(e.what());
    }
    if (mc.window < 1) throw ConfigError("model.window must be >= 1");
    if (mc.encoder.hidden < 1 || mc.encoder.embed < 1 || mc.decoder.hidden < 1 || mc.decoder.embed < 1 ||
        mc.decoder.max_length < 1 || mc.decoder.latent_embed < 1)
        throw ConfigError("model sizes must be positive");
    if (!(mc.temperature > 0.0)) throw ConfigError("model.temperature must be positive");
    if (c.training.vocab_size < 5) throw ConfigError("model.vocab_size must be at least 5");

    Section ts("train", child(root, "train"));
    auto& tc = c.training;
    if (ts.has("scheme")) {
        try {
            tc.scheme = train::scheme_from_string(ts.str("scheme"));
        } catch (const train::TrainError& e) {
            throw ConfigError(e.what());
        }
    }
    if (ts.has("beta")) {
        double b = 0.0;
        ts.read("beta", b);
        tc.beta = b;
    }
    ts.read("batch_size", tc.batch_size);
    ts.read("max_epochs", tc.max_epochs);
    ts.read("learning_rate", tc.learning_rate);
    ts.read("clip", tc.clip);
    ts.read("patience", tc.patience);
    if (ts.has("ratio")) {
        const std::string r = ts.str("ratio");
        const auto colon = r.find(':');
        try {
            if (colon == std::string::npos) throw std::invalid_argument(r);
            tc.ratio_a = std::stoi(r.substr(0, colon));
            tc.ratio_b = std::stoi(r.substr(colon + 1));
        } catch (const std::exception&) {
            ts.fail("ratio", r);
        }
    }
    ts.check_unknown();
    try {
        tc.validate();
    } catch (const train::TrainError& e) {
        throw ConfigError(e.what());
    }

    Section rs("rl", child(root, "rl"));
    auto& rc = c.rl;
    rs.read("gamma", rc.gamma);
    rs.read("learning_rate", rc.learning_rate);
    rs.read("clip", rc.clip);
    rs.read("episodes", rc.episodes);
    rs.read("eval_interval", rc.eval_interval);
    if (rs.has("mode")) {
        try {
            rc.mode = rl::mode_from_string(rs.str("mode"));
        } catch (const rl::RLError& e) {
            throw ConfigError(e.what());
        }
    }
    rs.check_unknown();
    try {
        rc.validate();
    } catch (const rl::RLError& e) {
        throw ConfigError(e.what());
    }
    c.set_seed(seed);
    return c;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

}  // namespace lava::config
