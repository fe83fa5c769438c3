#pragma once

// Shared fixtures: small synthetic corpora and toy-sized models.

#include "lava/corpus.hpp"
#include "lava/model.hpp"
#include "lava/objectives.hpp"

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

namespace lava::test {

inline corpus::Corpus small_corpus(int dialogues = 12, std::uint64_t seed = 7) {
    corpus::WorldSpec w = corpus::default_world();
    w.dialogue_count = dialogues;
    return corpus::generate_synthetic_corpus(w, seed);
}

/// Hidden 8, vocabulary 12, M=2, K=3 unless overridden.
inline nn::ModelConfig toy_config(const corpus::Corpus& c,
                                  latent::LatentSpec spec = latent::LatentSpec::categorical(2, 3)) {
    const corpus::StateLayout layout(c.db);
    nn::ModelConfig m;
    m.latent = spec;
    m.encoder.embed = 6;
    m.encoder.hidden = 8;
    m.encoder.state_size = static_cast<int>(layout.state_size());
    m.encoder.db_size = static_cast<int>(layout.db_size());
    m.decoder.embed = 6;
    m.decoder.hidden = 8;
    m.decoder.attention = spec.kind == latent::Kind::categorical;
    m.decoder.max_length = 12;
    m.decoder.latent_embed = 4;
    return m;
}

inline corpus::Vocabulary toy_vocab(const corpus::Corpus& c, std::size_t size = 12) {
    return corpus::build_vocabulary(c, size);
}

inline std::vector<train::Example> toy_examples(const corpus::Corpus& c, std::size_t n) {
    auto all = train::make_examples(c.dialogues, corpus::TaskMode::context_to_response, 2);
    if (all.size() > n) all.resize(n);
    return all;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("lava_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace lava::test
