#include "lava/model.hpp"

#include "json.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lava::nn {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'V', 'A', 'C', 'K', 'P', 'T'};
constexpr int kSchemaVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

nlohmann::ordered_json config_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["latent"] = {{"kind", latent::to_string(c.latent.kind)}, {"M", c.latent.M}, {"K", c.latent.K}};
    j["encoder"] = {{"embed", c.encoder.embed},
                    {"hidden", c.encoder.hidden},
                    {"bidirectional", c.encoder.bidirectional},
                    {"state_size", c.encoder.state_size},
                    {"db_size", c.encoder.db_size}};
    j["decoder"] = {{"embed", c.decoder.embed},
                    {"hidden", c.decoder.hidden},
                    {"attention", c.decoder.attention},
                    {"max_length", c.decoder.max_length},
                    {"latent_embed", c.decoder.latent_embed}};
    j["has_context_encoder"] = c.has_context_encoder;
    j["has_response_encoder"] = c.has_response_encoder;
    j["has_posterior"] = c.has_posterior;
    j["has_prior_projection"] = c.has_prior_projection;
    j["temperature"] = c.temperature;
    j["mode"] = corpus::to_string(c.mode);
    j["window"] = c.window;
    return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    const auto& l = j.at("latent");
    c.latent = {latent::kind_from_string(l.at("kind").get<std::string>()), l.at("M").get<int>(), l.at("K").get<int>()};
    const auto& e = j.at("encoder");
    c.encoder = {e.at("embed").get<int>(), e.at("hidden").get<int>(), e.at("bidirectional").get<bool>(),
                 e.at("state_size").get<int>(), e.at("db_size").get<int>()};
    const auto& d = j.at("decoder");
    c.decoder = {d.at("embed").get<int>(), d.at("hidden").get<int>(), d.at("attention").get<bool>(),
                 d.at("max_length").get<int>(), d.at("latent_embed").get<int>()};
    c.has_context_encoder = j.at("has_context_encoder").get<bool>();
    c.has_response_encoder = j.at("has_response_encoder").get<bool>();
    c.has_posterior = j.at("has_posterior").get<bool>();
    c.has_prior_projection = j.at("has_prior_projection").get<bool>();
    c.temperature = j.at("temperature").get<double>();
    c.mode = corpus::task_mode_from_string(j.at("mode").get<std::string>());
    c.window = j.at("window").get<int>();
    return c;
}

}  // namespace

std::string serialize_checkpoint(const Model& model) {
    nlohmann::ordered_json manifest;
    manifest["schema_version"] = kSchemaVersion;
    manifest["config"] = config_json(model.config());
    manifest["vocab"] = model.vocab().tokens();
    auto frozen = nlohmann::ordered_json::array();
    for (Component c : kComponents)
        if (model.frozen.contains(c)) frozen.push_back(to_string(c));
    manifest["frozen"] = std::move(frozen);
    manifest["seed"] = model.seed;
    manifest["step"] = model.step;
    auto arrays = nlohmann::ordered_json::array();
    for (const Parameter& p : model.params())
        arrays.push_back({{"name", p.name}, {"component", to_string(p.component)}, {"rows", p.value.rows()},
                          {"cols", p.value.cols()}});
    manifest["arrays"] = std::move(arrays);

    const std::string text = manifest.dump();
    std::string out(kMagic, sizeof kMagic);
    put_u64(out, text.size());
    out += text;
    for (const Parameter& p : model.params()) {
        for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
                const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(p.value(r, c)));
                for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
            }
        }
    }
    return out;
}

Model deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw ModelError("not a checkpoint archive (bad magic)");
    const std::uint64_t len = get_u64(bytes, 8);
    if (len > bytes.size() - 16) throw ModelError("truncated checkpoint manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    try {
        const int version = manifest.at("schema_version").get<int>();
        if (version != kSchemaVersion)
            throw ModelError("unsupported checkpoint schema version " + std::to_string(version));
        auto vocab = corpus::Vocabulary::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
        Model model(config_from_json(manifest.at("config")), std::move(vocab), manifest.at("seed").get<std::uint64_t>());
        model.step = manifest.at("step").get<std::uint64_t>();
        for (const auto& c : manifest.at("frozen")) model.frozen.insert(component_from_string(c.get<std::string>()));
        const auto& arrays = manifest.at("arrays");
        if (arrays.size() != model.params().size())
            throw ModelError("checkpoint has " + std::to_string(arrays.size()) + " arrays, model expects " +
                             std::to_string(model.params().size()));
        std::size_t at = 16 + len;
        for (const auto& a : arrays) {
            const std::string name = a.at("name").get<std::string>();
            Parameter& p = model.params()[model.params().index(name)];
            const auto rows = a.at("rows").get<Eigen::Index>();
            const auto cols = a.at("cols").get<Eigen::Index>();
            if (rows != p.value.rows() || cols != p.value.cols()) throw ModelError("shape mismatch for '" + name + "'");
            if (to_string(p.component) != a.at("component").get<std::string>())
                throw ModelError("component mismatch for '" + name + "'");
            const std::size_t need = static_cast<std::size_t>(rows * cols) * 4;
            if (at + need > bytes.size()) throw ModelError("truncated array data for '" + name + "'");
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (Eigen::Index c = 0; c < cols; ++c) {
                    std::uint32_t bits = 0;
                    for (int i = 0; i < 4; ++i)
                        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at++])) << (8 * i);
                    p.value(r, c) = static_cast<double>(std::bit_cast<float>(bits));
                }
            }
        }
        if (at != bytes.size()) throw ModelError("trailing bytes after checkpoint arrays");
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(std::string("corrupt checkpoint manifest: ") + e.what());
    } catch (const corpus::CorpusError& e) {
        throw ModelError(std::string("corrupt checkpoint manifest: ") + e.what());
    }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::string bytes = serialize_checkpoint(model);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ModelError("cannot write checkpoint " + path.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw ModelError("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ModelError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace lava::nn
