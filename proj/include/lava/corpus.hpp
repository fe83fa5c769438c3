#pragma once

// Dialogue data model: delexicalized turns with oracle state and database
// vectors, goals, an entity database, vocabularies and context windows.

#include "lava/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lava::corpus {

using Tokens = std::vector<std::string>;

/// Whitespace tokenization; placeholders such as [value_area] are single tokens.
Tokens tokenize(std::string_view text);
std::string join(const Tokens& tokens);

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Turn {
    Tokens user;
    Tokens system;
    std::vector<int> state_vector;
    std::vector<int> db_pointer;
    std::string domain;
    std::vector<std::string> actions;

    friend bool operator==(const Turn&, const Turn&) = default;
};

struct DomainGoal {
    std::map<std::string, std::string> informable;
    std::vector<std::string> requestable;

    friend bool operator==(const DomainGoal&, const DomainGoal&) = default;
};

using Goal = std::map<std::string, DomainGoal>;

struct Dialogue {
    std::string id;
    Goal goal;
    std::vector<Turn> turns;

    friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

struct DomainSchema {
    std::vector<std::string> informable;
    std::vector<std::string> requestable;

    friend bool operator==(const DomainSchema&, const DomainSchema&) = default;
};

using Entity = std::map<std::string, std::string>;
using Constraints = std::map<std::string, std::map<std::string, std::string>>;

struct EntityDatabase {
    std::map<std::string, DomainSchema> schemas;
    std::map<std::string, std::vector<Entity>> entities;

    [[nodiscard]] bool has_domain(const std::string& domain) const { return schemas.contains(domain); }
    [[nodiscard]] std::vector<std::string> domains() const;
    /// Indices of entities of `domain` satisfying every constraint.
    [[nodiscard]] std::vector<std::size_t> query(const std::string& domain,
                                                 const std::map<std::string, std::string>& constraints) const;
    /// Distinct values of a slot within a domain, sorted.
    [[nodiscard]] std::vector<std::string> values(const std::string& domain, const std::string& slot) const;
    void validate() const;

    friend bool operator==(const EntityDatabase&, const EntityDatabase&) = default;
};

struct Corpus {
    EntityDatabase db;
    std::vector<Dialogue> dialogues;
    bool has_action_labels = true;

    [[nodiscard]] const Dialogue* find(const std::string& id) const;
    friend bool operator==(const Corpus&, const Corpus&) = default;
};

enum class Format { native_json, multiwoz_json };

/// Reads and validates a corpus. Dialogues come back sorted by id.
/// `db_path` is only consulted for multiwoz-json, whose layout has no database.
Corpus load_corpus(const std::filesystem::path& path, Format format,
                   const std::optional<std::filesystem::path>& db_path = std::nullopt);
Corpus parse_native_json(std::string_view text);
Corpus parse_multiwoz_json(std::string_view text, EntityDatabase db);
std::string to_native_json(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Checks every Turn/Dialogue invariant; throws CorpusError naming the culprit.
void validate(const Corpus& corpus);

// ---------------------------------------------------------------------------
// Oracle state layout

/// Binary layout of state vectors (one bit per domain/informable slot/value)
/// and database pointers (per domain, one-hot over {0, 1, 2-4, >=5} matches).
class StateLayout {
public:
    explicit StateLayout(const EntityDatabase& db);

    [[nodiscard]] std::size_t state_size() const { return bits_.size(); }
    [[nodiscard]] std::size_t db_size() const { return 4 * domains_.size(); }

    [[nodiscard]] std::vector<int> encode_state(const Constraints& c) const;
    [[nodiscard]] Constraints decode_state(std::span<const int> bits) const;
    [[nodiscard]] std::vector<int> encode_db(const EntityDatabase& db, const Constraints& c) const;

    static int count_bucket(std::size_t matches);

private:
    struct Bit {
        std::string domain, slot, value;
    };
    std::vector<Bit> bits_;
    std::vector<std::string> domains_;
};

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kReserved = 4;
    static constexpr std::size_t kDefaultMaxSize = 1000;

    Vocabulary();
    /// Rebuilds from a full token list whose first four entries are the reserved tokens.
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    [[nodiscard]] int encode(const std::string& token) const;
    [[nodiscard]] std::vector<int> encode(const Tokens& tokens) const;
    [[nodiscard]] const std::string& decode(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }
    [[nodiscard]] Tokens decode(std::span<const int> indices) const;
    [[nodiscard]] std::size_t size() const { return tokens_.size(); }
    [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }
    [[nodiscard]] bool contains(const std::string& token) const { return index_.contains(token); }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    void add(const std::string& token);
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Keeps the max_size - 4 most frequent tokens (ties: lexicographic order).
Vocabulary build_vocabulary(std::span<const Dialogue> dialogues, std::size_t max_size = Vocabulary::kDefaultMaxSize);
Vocabulary build_vocabulary(const Corpus& corpus, std::size_t max_size = Vocabulary::kDefaultMaxSize);

// ---------------------------------------------------------------------------
// Context windows

enum class TaskMode { context_to_response, end_to_end };

struct ContextWindow {
    Tokens tokens;
    std::optional<std::vector<int>> state_vector;
    std::optional<std::vector<int>> db_pointer;
    TaskMode mode = TaskMode::context_to_response;
};

/// Default history window per task mode (2 and 4 turns).
int default_window(TaskMode mode);

/// Flattens up to `window` preceding turns (user, EOS, system, EOS) followed by
/// the current user turn. When `system_history` is non-empty it supplies the
/// system side of preceding turns in place of the corpus responses.
ContextWindow make_context(const Dialogue& dialogue, std::size_t turn_index, TaskMode mode, int window,
                           std::span<const Tokens> system_history = {});

std::string to_string(TaskMode mode);
TaskMode task_mode_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Delexicalization

std::string value_placeholder(const std::string& slot);
std::string entity_placeholder(const std::string& domain, const std::string& slot);

/// Replaces maximal spans equal to known slot values of `domain`, longest
/// match first, scanning left to right.
Tokens delexicalize(const Tokens& utterance, const EntityDatabase& db, const std::string& domain);

// ---------------------------------------------------------------------------
// Splits

enum class Split { train, valid, test };

std::uint64_t id_hash(std::string_view id);
/// 80/10/10 partition after ordering dialogues by (id hash, id).
std::map<std::string, Split> assign_splits(const Corpus& corpus);
std::vector<Dialogue> select_split(const Corpus& corpus, Split split);
std::string to_string(Split s);
Split split_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SlotSpec {
    std::string name;
    std::vector<std::string> values;
};

struct DomainSpec {
    std::string name;
    std::vector<SlotSpec> informable;
    std::vector<std::string> requestable;
};

struct WorldSpec {
    std::vector<DomainSpec> domains;
    int entities_per_domain = 20;
    int dialogue_count = 500;
    int min_turns = 3;
    int max_turns = 12;
    /// Probability that a dialogue covers two domains.
    double multi_domain_rate = 0.5;
    /// Probability that a goal requests two slots of a domain rather than one.
    double two_request_rate = 0.8;
    /// Probability that the user spreads constraints over two turns.
    double split_inform_rate = 0.5;
    /// Probability of a booking exchange after the offer.
    double booking_rate = 0.5;
    /// Probability that a two-slot request is answered one slot at a time.
    double partial_answer_rate = 0.6;
};

/// Two domains (hotel, restaurant), 20 entities each, 500 dialogues.
WorldSpec default_world();

/// Scripted, database-consistent dialogues. Same seed gives the same corpus.
Corpus generate_synthetic_corpus(const WorldSpec& world, std::uint64_t seed);

}  // namespace lava::corpus
