#include "lava/corpus.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace lava::corpus {

using json = nlohmann::ordered_json;

Tokens tokenize(std::string_view text) {
    Tokens out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

std::string join(const Tokens& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// EntityDatabase

std::vector<std::string> EntityDatabase::domains() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : schemas) out.push_back(name);
    return out;
}

std::vector<std::size_t> EntityDatabase::query(const std::string& domain,
                                               const std::map<std::string, std::string>& constraints) const {
    std::vector<std::size_t> out;
    const auto it = entities.find(domain);
    if (it == entities.end()) return out;
    for (std::size_t i = 0; i < it->second.size(); ++i) {
        const Entity& e = it->second[i];
        bool ok = true;
        for (const auto& [slot, value] : constraints) {
            const auto f = e.find(slot);
            if (f == e.end() || f->second != value) {
                ok = false;
                break;
            }
        }
        if (ok) out.push_back(i);
    }
    return out;
}

std::vector<std::string> EntityDatabase::values(const std::string& domain, const std::string& slot) const {
    std::set<std::string> vals;
    const auto it = entities.find(domain);
    if (it != entities.end()) {
        for (const Entity& e : it->second) {
            const auto f = e.find(slot);
            if (f != e.end()) vals.insert(f->second);
        }
    }
    return {vals.begin(), vals.end()};
}

void EntityDatabase::validate() const {
    for (const auto& [domain, list] : entities) {
        const auto s = schemas.find(domain);
        if (s == schemas.end()) throw CorpusError("database domain '" + domain + "' has no schema");
        for (std::size_t i = 0; i < list.size(); ++i) {
            for (const auto& slot : s->second.informable) {
                if (!list[i].contains(slot)) {
                    throw CorpusError("schema error: entity " + std::to_string(i) + " of domain '" + domain +
                                      "' lacks informable slot '" + slot + "'");
                }
            }
        }
    }
}

const Dialogue* Corpus::find(const std::string& id) const {
    for (const auto& d : dialogues)
        if (d.id == id) return &d;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

bool well_formed_token(const std::string& tok) {
    if (tok.empty()) return false;
    if (tok.front() == '[' || tok.back() == ']') {
        return tok.size() > 3 && tok.front() == '[' && tok.back() == ']' && tok.find('_') != std::string::npos;
    }
    return true;
}

std::string where(const Dialogue& d, std::size_t t) { return "dialogue '" + d.id + "' turn " + std::to_string(t); }

}  // namespace

void validate(const Corpus& corpus) {
    corpus.db.validate();
    std::set<std::string> ids;
    std::optional<std::size_t> state_len;
    std::optional<std::size_t> db_len;
    for (const Dialogue& d : corpus.dialogues) {
        if (!ids.insert(d.id).second) throw CorpusError("duplicate dialogue id '" + d.id + "'");
        if (d.turns.empty()) throw CorpusError("dialogue '" + d.id + "' has no turns");
        if (d.goal.empty()) throw CorpusError("dialogue '" + d.id + "' has an empty goal");
        for (const auto& [domain, g] : d.goal) {
            const auto s = corpus.db.schemas.find(domain);
            if (s == corpus.db.schemas.end())
                throw CorpusError("dialogue '" + d.id + "' goal names unknown domain '" + domain + "'");
            for (const auto& slot : g.requestable) {
                const auto& req = s->second.requestable;
                if (std::find(req.begin(), req.end(), slot) == req.end())
                    throw CorpusError("dialogue '" + d.id + "' requests slot '" + slot + "' outside domain '" +
                                      domain + "'");
            }
        }
        for (std::size_t t = 0; t < d.turns.size(); ++t) {
            const Turn& turn = d.turns[t];
            if (!state_len) state_len = turn.state_vector.size();
            if (!db_len) db_len = turn.db_pointer.size();
            if (turn.state_vector.size() != *state_len)
                throw CorpusError("schema error: state_vector length " + std::to_string(turn.state_vector.size()) +
                                  " differs from corpus length " + std::to_string(*state_len) + " in " + where(d, t));
            if (turn.db_pointer.size() != *db_len)
                throw CorpusError("schema error: db_pointer length " + std::to_string(turn.db_pointer.size()) +
                                  " differs from corpus length " + std::to_string(*db_len) + " in " + where(d, t));
            for (int b : turn.state_vector)
                if (b != 0 && b != 1) throw CorpusError("schema error: non-binary state_vector in " + where(d, t));
            for (int b : turn.db_pointer)
                if (b != 0 && b != 1) throw CorpusError("schema error: non-binary db_pointer in " + where(d, t));
            if (!corpus.db.has_domain(turn.domain))
                throw CorpusError("undeclared domain '" + turn.domain + "' in " + where(d, t));
            for (const auto* side : {&turn.user, &turn.system})
                for (const auto& tok : *side)
                    if (!well_formed_token(tok)) throw CorpusError("malformed token '" + tok + "' in " + where(d, t));
        }
    }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

std::vector<int> int_list(const json& j, const char* what) {
    if (!j.is_array()) throw CorpusError(std::string("expected array for ") + what);
    std::vector<int> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (v.is_boolean()) out.push_back(v.get<bool>() ? 1 : 0);
        else if (v.is_number()) out.push_back(v.get<double>() != 0.0 ? 1 : 0);
        else throw CorpusError(std::string("non-numeric entry in ") + what);
    }
    return out;
}

std::string value_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

void infer_schemas(Corpus& c) {
    for (const auto& [domain, _] : c.db.entities) c.db.schemas.try_emplace(domain);
    std::map<std::string, std::set<std::string>> inf;
    std::map<std::string, std::set<std::string>> req;
    for (const auto& d : c.dialogues) {
        for (const auto& [domain, g] : d.goal) {
            c.db.schemas.try_emplace(domain);
            for (const auto& [slot, _] : g.informable) inf[domain].insert(slot);
            for (const auto& slot : g.requestable) req[domain].insert(slot);
        }
    }
    for (auto& [domain, schema] : c.db.schemas) {
        if (schema.informable.empty()) schema.informable.assign(inf[domain].begin(), inf[domain].end());
        if (schema.requestable.empty()) schema.requestable.assign(req[domain].begin(), req[domain].end());
    }
}

}  // namespace

Corpus parse_native_json(std::string_view text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw CorpusError(std::string("parse error: ") + e.what());
    }
    if (!root.is_object()) throw CorpusError("parse error: corpus root must be an object");
    if (root.value("schema_version", 0) != 1) throw CorpusError("parse error: unsupported schema_version");
    Corpus c;
    if (root.contains("database")) {
        for (const auto& [domain, list] : root["database"].items()) {
            auto& out = c.db.entities[domain];
            for (const auto& rec : list) {
                Entity e;
                for (const auto& [slot, v] : rec.items()) e[slot] = value_string(v);
                out.push_back(std::move(e));
            }
        }
    }
    if (root.contains("schema")) {
        for (const auto& [domain, s] : root["schema"].items()) {
            DomainSchema schema;
            schema.informable = s.value("informable", std::vector<std::string>{});
            schema.requestable = s.value("requestable", std::vector<std::string>{});
            c.db.schemas[domain] = std::move(schema);
        }
    }
    bool any_actions = false;
    if (!root.contains("dialogues") || !root["dialogues"].is_array())
        throw CorpusError("parse error: missing 'dialogues' array");
    for (const auto& jd : root["dialogues"]) {
        Dialogue d;
        d.id = jd.value("id", "");
        const std::string who = "dialogue '" + d.id + "'";
        try {
            if (d.id.empty()) throw CorpusError("missing id");
            for (const auto& [domain, g] : jd.at("goal").items()) {
                DomainGoal dg;
                if (g.contains("informable"))
                    for (const auto& [slot, v] : g["informable"].items()) dg.informable[slot] = value_string(v);
                if (g.contains("requestable")) dg.requestable = g["requestable"].get<std::vector<std::string>>();
                d.goal[domain] = std::move(dg);
            }
            std::size_t t = 0;
            for (const auto& jt : jd.at("turns")) {
                try {
                    Turn turn;
                    turn.user = tokenize(jt.at("user").get<std::string>());
                    turn.system = tokenize(jt.at("system").get<std::string>());
                    turn.state_vector = int_list(jt.at("state_vector"), "state_vector");
                    turn.db_pointer = int_list(jt.at("db_pointer"), "db_pointer");
                    turn.domain = jt.at("domain").get<std::string>();
                    if (jt.contains("actions")) {
                        turn.actions = jt["actions"].get<std::vector<std::string>>();
                        any_actions = true;
                    }
                    d.turns.push_back(std::move(turn));
                } catch (const nlohmann::json::exception& e) {
                    throw CorpusError("turn " + std::to_string(t) + ": " + e.what());
                }
                ++t;
            }
        } catch (const nlohmann::json::exception& e) {
            throw CorpusError("parse error in " + who + ": " + e.what());
        } catch (const CorpusError& e) {
            throw CorpusError("parse error in " + who + ": " + e.what());
        }
        c.dialogues.push_back(std::move(d));
    }
    c.has_action_labels = any_actions;
    infer_schemas(c);
    std::sort(c.dialogues.begin(), c.dialogues.end(), [](const Dialogue& a, const Dialogue& b) { return a.id < b.id; });
    validate(c);
    return c;
}

Corpus parse_multiwoz_json(std::string_view text, EntityDatabase db) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw CorpusError(std::string("parse error: ") + e.what());
    }
    if (!root.is_object()) throw CorpusError("parse error: multiwoz root must map dialogue ids to dialogues");
    Corpus c;
    c.db = std::move(db);
    c.has_action_labels = false;
    for (const auto& [id, jd] : root.items()) {
        Dialogue d;
        d.id = id;
        try {
            for (const auto& [domain, g] : jd.at("goal").items()) {
                if (!g.is_object() || g.empty()) continue;
                DomainGoal dg;
                if (g.contains("info"))
                    for (const auto& [slot, v] : g["info"].items()) dg.informable[slot] = value_string(v);
                if (g.contains("reqt")) {
                    for (const auto& r : g["reqt"]) dg.requestable.push_back(value_string(r));
                }
                d.goal[domain] = std::move(dg);
            }
            const auto& usr = jd.at("usr");
            const auto& sys = jd.at("sys");
            if (usr.size() != sys.size()) throw CorpusError("usr/sys turn counts differ");
            std::string last_domain = d.goal.empty() ? std::string{} : d.goal.begin()->first;
            for (std::size_t t = 0; t < usr.size(); ++t) {
                Turn turn;
                turn.user = tokenize(usr[t].get<std::string>());
                turn.system = tokenize(sys[t].get<std::string>());
                if (jd.contains("bs")) turn.state_vector = int_list(jd["bs"].at(t), "bs");
                if (jd.contains("db")) turn.db_pointer = int_list(jd["db"].at(t), "db");
                // Domain from the first domain-scoped placeholder, else carried over.
                for (const auto& tok : turn.system) {
                    if (tok.size() > 2 && tok.front() == '[') {
                        const std::string dom = tok.substr(1, tok.find('_') - 1);
                        if (d.goal.contains(dom)) {
                            last_domain = dom;
                            break;
                        }
                    }
                }
                turn.domain = last_domain;
                d.turns.push_back(std::move(turn));
            }
        } catch (const nlohmann::json::exception& e) {
            throw CorpusError("parse error in dialogue '" + id + "': " + e.what());
        } catch (const CorpusError& e) {
            throw CorpusError("parse error in dialogue '" + id + "': " + e.what());
        }
        c.dialogues.push_back(std::move(d));
    }
    infer_schemas(c);
    std::sort(c.dialogues.begin(), c.dialogues.end(), [](const Dialogue& a, const Dialogue& b) { return a.id < b.id; });
    validate(c);
    return c;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open corpus file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, Format format,
                   const std::optional<std::filesystem::path>& db_path) {
    const std::string text = read_file(path);
    if (format == Format::native_json) return parse_native_json(text);
    EntityDatabase db;
    if (db_path) {
        // A native-json file with an empty dialogue list carries the database.
        Corpus holder = parse_native_json(read_file(*db_path));
        db = std::move(holder.db);
    }
    return parse_multiwoz_json(text, std::move(db));
}

std::string to_native_json(const Corpus& c) {
    json root;
    root["schema_version"] = 1;
    json database = json::object();
    for (const auto& [domain, list] : c.db.entities) {
        json arr = json::array();
        for (const auto& e : list) {
            json rec = json::object();
            for (const auto& [slot, value] : e) rec[slot] = value;
            arr.push_back(std::move(rec));
        }
        database[domain] = std::move(arr);
    }
    root["database"] = std::move(database);
    json schema = json::object();
    for (const auto& [domain, s] : c.db.schemas) {
        schema[domain] = json{{"informable", s.informable}, {"requestable", s.requestable}};
    }
    root["schema"] = std::move(schema);
    json dialogues = json::array();
    for (const auto& d : c.dialogues) {
        json jd;
        jd["id"] = d.id;
        json goal = json::object();
        for (const auto& [domain, g] : d.goal) {
            json inf = json::object();
            for (const auto& [slot, value] : g.informable) inf[slot] = value;
            goal[domain] = json{{"informable", std::move(inf)}, {"requestable", g.requestable}};
        }
        jd["goal"] = std::move(goal);
        json turns = json::array();
        for (const auto& t : d.turns) {
            json jt;
            jt["user"] = join(t.user);
            jt["system"] = join(t.system);
            jt["state_vector"] = t.state_vector;
            jt["db_pointer"] = t.db_pointer;
            jt["domain"] = t.domain;
            if (c.has_action_labels) jt["actions"] = t.actions;
            turns.push_back(std::move(jt));
        }
        jd["turns"] = std::move(turns);
        dialogues.push_back(std::move(jd));
    }
    root["dialogues"] = std::move(dialogues);
    return root.dump(1) + "\n";
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot write corpus file '" + path.string() + "'");
    out << to_native_json(corpus);
}

// ---------------------------------------------------------------------------
// StateLayout

StateLayout::StateLayout(const EntityDatabase& db) {
    for (const auto& [domain, schema] : db.schemas) {
        domains_.push_back(domain);
        for (const auto& slot : schema.informable) {
            for (const auto& value : db.values(domain, slot)) bits_.push_back({domain, slot, value});
        }
    }
}

std::vector<int> StateLayout::encode_state(const Constraints& c) const {
    std::vector<int> out(bits_.size(), 0);
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        const auto d = c.find(bits_[i].domain);
        if (d == c.end()) continue;
        const auto s = d->second.find(bits_[i].slot);
        if (s != d->second.end() && s->second == bits_[i].value) out[i] = 1;
    }
    return out;
}

Constraints StateLayout::decode_state(std::span<const int> bits) const {
    Constraints out;
    if (bits.size() != bits_.size()) return out;
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        if (bits[i]) out[bits_[i].domain][bits_[i].slot] = bits_[i].value;
    }
    return out;
}

int StateLayout::count_bucket(std::size_t matches) {
    if (matches == 0) return 0;
    if (matches == 1) return 1;
    if (matches <= 4) return 2;
    return 3;
}

std::vector<int> StateLayout::encode_db(const EntityDatabase& db, const Constraints& c) const {
    std::vector<int> out(db_size(), 0);
    for (std::size_t d = 0; d < domains_.size(); ++d) {
        const auto it = c.find(domains_[d]);
        const std::map<std::string, std::string> none;
        const auto matches = db.query(domains_[d], it == c.end() ? none : it->second).size();
        out[4 * d + static_cast<std::size_t>(count_bucket(matches))] = 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
    for (const char* t : {"<pad>", "<unk>", "<bos>", "<eos>"}) add(t);
}

void Vocabulary::add(const std::string& token) {
    index_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(token);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    if (tokens.size() < kReserved) throw CorpusError("vocabulary lacks reserved tokens");
    for (int i = 0; i < kReserved; ++i)
        if (tokens[static_cast<std::size_t>(i)] != v.tokens_[static_cast<std::size_t>(i)])
            throw CorpusError("vocabulary reserved tokens out of place");
    for (std::size_t i = kReserved; i < tokens.size(); ++i) {
        if (v.index_.contains(tokens[i])) throw CorpusError("duplicate vocabulary token '" + tokens[i] + "'");
        v.add(tokens[i]);
    }
    return v;
}

int Vocabulary::encode(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const Tokens& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(encode(t));
    return out;
}

Tokens Vocabulary::decode(std::span<const int> indices) const {
    Tokens out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(decode(i));
    return out;
}

Vocabulary build_vocabulary(std::span<const Dialogue> dialogues, std::size_t max_size) {
    if (dialogues.empty()) throw CorpusError("cannot build a vocabulary from an empty corpus");
    if (max_size < 5) throw CorpusError("vocabulary max_size must be at least 5");
    std::map<std::string, std::size_t> counts;
    for (const auto& d : dialogues)
        for (const auto& t : d.turns) {
            for (const auto& tok : t.user) ++counts[tok];
            for (const auto& tok : t.system) ++counts[tok];
        }
    Vocabulary reserved;
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (auto& [tok, n] : counts)
        if (!reserved.contains(tok)) ranked.emplace_back(tok, n);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens = reserved.tokens();
    for (const auto& [tok, _] : ranked) {
        if (tokens.size() >= max_size) break;
        tokens.push_back(tok);
    }
    return Vocabulary::from_tokens(std::move(tokens));
}

Vocabulary build_vocabulary(const Corpus& corpus, std::size_t max_size) {
    return build_vocabulary(std::span<const Dialogue>(corpus.dialogues), max_size);
}

// ---------------------------------------------------------------------------
// Context windows

int default_window(TaskMode mode) { return mode == TaskMode::context_to_response ? 2 : 4; }

ContextWindow make_context(const Dialogue& dialogue, std::size_t turn_index, TaskMode mode, int window,
                           std::span<const Tokens> system_history) {
    if (turn_index >= dialogue.turns.size())
        throw CorpusError("turn index " + std::to_string(turn_index) + " out of range for dialogue '" + dialogue.id +
                          "'");
    if (window < 1) throw CorpusError("context window must be at least 1");
    ContextWindow ctx;
    ctx.mode = mode;
    const std::size_t first = turn_index > static_cast<std::size_t>(window) ? turn_index - static_cast<std::size_t>(window) : 0;
    const std::string eos = Vocabulary().decode(Vocabulary::kEos);
    for (std::size_t t = first; t < turn_index; ++t) {
        const Turn& turn = dialogue.turns[t];
        ctx.tokens.insert(ctx.tokens.end(), turn.user.begin(), turn.user.end());
        ctx.tokens.push_back(eos);
        const Tokens& sys = t < system_history.size() ? system_history[t] : turn.system;
        ctx.tokens.insert(ctx.tokens.end(), sys.begin(), sys.end());
        ctx.tokens.push_back(eos);
    }
    const Turn& current = dialogue.turns[turn_index];
    ctx.tokens.insert(ctx.tokens.end(), current.user.begin(), current.user.end());
    if (mode == TaskMode::context_to_response) {
        ctx.state_vector = current.state_vector;
        ctx.db_pointer = current.db_pointer;
    }
    return ctx;
}

std::string to_string(TaskMode mode) {
    return mode == TaskMode::context_to_response ? "context-to-response" : "end-to-end";
}

TaskMode task_mode_from_string(const std::string& s) {
    if (s == "context-to-response" || s == "c2r") return TaskMode::context_to_response;
    if (s == "end-to-end" || s == "e2e") return TaskMode::end_to_end;
    throw CorpusError("unknown task mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// Delexicalization

std::string value_placeholder(const std::string& slot) { return "[value_" + slot + "]"; }

std::string entity_placeholder(const std::string& domain, const std::string& slot) {
    return "[" + domain + "_" + slot + "]";
}

Tokens delexicalize(const Tokens& utterance, const EntityDatabase& db, const std::string& domain) {
    const auto schema_it = db.schemas.find(domain);
    if (schema_it == db.schemas.end()) throw CorpusError("unknown domain '" + domain + "'");
    const auto& informable = schema_it->second.informable;
    // value token sequence -> placeholder; the first slot (in sorted order) wins on duplicates.
    std::map<Tokens, std::string> table;
    std::size_t longest = 0;
    const auto ents = db.entities.find(domain);
    if (ents != db.entities.end()) {
        for (const Entity& e : ents->second) {
            for (const auto& [slot, value] : e) {
                Tokens key = tokenize(value);
                if (key.empty()) continue;
                const bool inf = std::find(informable.begin(), informable.end(), slot) != informable.end();
                const std::string ph = inf ? value_placeholder(slot) : entity_placeholder(domain, slot);
                longest = std::max(longest, key.size());
                table.try_emplace(std::move(key), ph);
            }
        }
    }
    Tokens out;
    std::size_t i = 0;
    while (i < utterance.size()) {
        bool replaced = false;
        for (std::size_t len = std::min(longest, utterance.size() - i); len >= 1; --len) {
            Tokens span(utterance.begin() + static_cast<std::ptrdiff_t>(i),
                        utterance.begin() + static_cast<std::ptrdiff_t>(i + len));
            const auto f = table.find(span);
            if (f != table.end()) {
                out.push_back(f->second);
                i += len;
                replaced = true;
                break;
            }
        }
        if (!replaced) out.push_back(utterance[i++]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits

std::uint64_t id_hash(std::string_view id) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : id) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::map<std::string, Split> assign_splits(const Corpus& corpus) {
    std::vector<std::pair<std::uint64_t, std::string>> keyed;
    for (const auto& d : corpus.dialogues) keyed.emplace_back(id_hash(d.id), d.id);
    std::sort(keyed.begin(), keyed.end());
    const std::size_t n = keyed.size();
    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_valid = n / 10;
    std::map<std::string, Split> out;
    for (std::size_t i = 0; i < n; ++i) {
        const Split s = i < n_train ? Split::train : (i < n_train + n_valid ? Split::valid : Split::test);
        out[keyed[i].second] = s;
    }
    return out;
}

std::vector<Dialogue> select_split(const Corpus& corpus, Split split) {
    const auto splits = assign_splits(corpus);
    std::vector<Dialogue> out;
    for (const auto& d : corpus.dialogues)
        if (splits.at(d.id) == split) out.push_back(d);
    return out;
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "valid" || s == "validation") return Split::valid;
    if (s == "test") return Split::test;
    throw CorpusError("unknown split '" + s + "'");
}

}  // namespace lava::corpus
