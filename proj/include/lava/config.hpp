#pragma once

// Experiment configuration: `key = value` lines grouped under [section]
// headers. Every key is optional; unknown sections or keys are rejected.

#include "lava/corpus.hpp"
#include "lava/model.hpp"
#include "lava/objectives.hpp"
#include "lava/rl.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace lava::config {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Config {
    std::uint64_t seed = 0;
    corpus::WorldSpec world = corpus::default_world();
    train::TrainingConfig training;
    rl::RLConfig rl;
    /// Verbatim source text (empty for built-in defaults).
    std::string text;

    /// Propagates the single seed into every randomized stage.
    void set_seed(std::uint64_t s);
};

Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);
/// Defaults with no source file.
Config default_config();

}  // namespace lava::config
