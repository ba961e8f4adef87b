#include "dstlab/dialogue.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dstlab/errors.hpp"
#include "dstlab/hash.hpp"

namespace dstlab {

Tokens tokenize(std::string_view text) {
    Tokens out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

std::string join_tokens(const Tokens& toks) {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out.push_back(' ');
        out += toks[i];
    }
    return out;
}

Ontology::Ontology(std::vector<std::string> slots,
                   std::map<std::string, std::vector<std::string>> candidates)
    : slots_(std::move(slots)) {
    values_.reserve(slots_.size());
    value_index_.reserve(slots_.size());
    for (int s = 0; s < static_cast<int>(slots_.size()); ++s) {
        const std::string& slot = slots_[s];
        if (slot_index_.count(slot)) throw SchemaError("duplicate slot id: " + slot);
        slot_index_[slot] = s;
        auto it = candidates.find(slot);
        if (it == candidates.end()) throw SchemaError("no candidate list for slot: " + slot);
        const auto& vals = it->second;
        if (vals.empty() || vals[0] != kNoneValue) {
            throw SchemaError("slot " + slot + ": candidate index 0 must be \"none\"");
        }
        if (std::find(vals.begin(), vals.end(), kDontcareValue) == vals.end()) {
            throw SchemaError("slot " + slot + ": candidates must include \"dontcare\"");
        }
        std::unordered_map<std::string, int> idx;
        for (int v = 0; v < static_cast<int>(vals.size()); ++v) {
            if (!idx.emplace(vals[v], v).second) {
                throw SchemaError("slot " + slot + ": duplicate candidate \"" + vals[v] + "\"");
            }
        }
        values_.push_back(vals);
        value_index_.push_back(std::move(idx));
    }
}

int Ontology::slot_index(std::string_view slot) const {
    auto it = slot_index_.find(std::string(slot));
    if (it == slot_index_.end()) throw SchemaError("unknown slot: " + std::string(slot));
    return it->second;
}

bool Ontology::has_slot(std::string_view slot) const {
    return slot_index_.count(std::string(slot)) > 0;
}

int Ontology::value_index(int s, std::string_view value) const {
    const auto& idx = value_index_[s];
    auto it = idx.find(std::string(value));
    if (it == idx.end()) {
        throw SchemaError("slot " + slots_[s] + ": unknown value \"" + std::string(value) + "\"");
    }
    return it->second;
}

std::string Ontology::domain_of(std::string_view slot) {
    auto pos = slot.find('-');
    return std::string(pos == std::string_view::npos ? slot : slot.substr(0, pos));
}

std::vector<std::string> Ontology::domains() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& s : slots_) {
        std::string d = domain_of(s);
        if (seen.insert(d).second) out.push_back(d);
    }
    return out;
}

std::uint64_t Ontology::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (int s = 0; s < n_slots(); ++s) {
        h = fnv1a64(slots_[s], h);
        h = fnv1a64("\x1f", h);
        for (const auto& v : values_[s]) {
            h = fnv1a64(v, h);
            h = fnv1a64("\x1e", h);
        }
    }
    return h;
}

State all_none_state(const Ontology& ont) {
    return State(static_cast<std::size_t>(ont.n_slots()), kNoneIndex);
}

const Dialogue* Corpus::find(std::string_view id) const {
    for (const auto& d : dialogues) {
        if (d.id == id) return &d;
    }
    return nullptr;
}

std::int64_t Corpus::total_turns() const {
    std::int64_t n = 0;
    for (const auto& d : dialogues) n += static_cast<std::int64_t>(d.turns.size());
    return n;
}

void validate_corpus(const Corpus& corpus) {
    const Ontology& ont = corpus.ontology;
    std::set<std::string> ids;
    for (const auto& d : corpus.dialogues) {
        if (d.turns.empty()) throw SchemaError("dialogue " + d.id + " has no turns");
        if (!ids.insert(d.id).second) throw SchemaError("duplicate dialogue id: " + d.id);
        for (const auto& t : d.turns) {
            if (static_cast<int>(t.state.size()) != ont.n_slots()) {
                throw SchemaError("dialogue " + d.id + ": state size mismatch");
            }
            for (int s = 0; s < ont.n_slots(); ++s) {
                if (t.state[s] < 0 || t.state[s] >= ont.n_candidates(s)) {
                    throw SchemaError("dialogue " + d.id + ": value index out of bounds for slot " +
                                      ont.slot_name(s));
                }
            }
        }
    }
}

void validate_sample(const Sample& sample, const Ontology& ont) {
    if (sample.turn_index < 1) throw SchemaError("sample: turn index must be >= 1");
    if (static_cast<int>(sample.context.size()) != sample.turn_index) {
        throw SchemaError("sample: context must cover turns 1..t");
    }
    auto check_state = [&](const State& st, const char* what) {
        if (static_cast<int>(st.size()) != ont.n_slots()) {
            throw SchemaError(std::string("sample: ") + what + " size mismatch");
        }
        for (int s = 0; s < ont.n_slots(); ++s) {
            if (st[s] < 0 || st[s] >= ont.n_candidates(s)) {
                throw SchemaError(std::string("sample: ") + what + " index out of bounds for slot " +
                                  ont.slot_name(s));
            }
        }
    };
    check_state(sample.previous_state, "previous_state");
    check_state(sample.labels, "labels");
}

Tokens build_input_sequence(const Sample& sample, const Ontology& ont, int max_len) {
    if (max_len < 8) throw SchemaError("build_input_sequence: max_len must be >= 8");
    validate_sample(sample, ont);

    Tokens seq;
    seq.emplace_back(kClsToken);
    // X_{t-1}: utterances of turns 1..t-1
    for (int i = 0; i + 1 < sample.turn_index; ++i) {
        const auto& [sys, usr] = sample.context[i];
        seq.insert(seq.end(), sys.begin(), sys.end());
        seq.insert(seq.end(), usr.begin(), usr.end());
    }
    // B_{t-1}: non-"none" slot-value pairs in ontology slot order
    for (int s = 0; s < ont.n_slots(); ++s) {
        int v = sample.previous_state[s];
        if (v == kNoneIndex) continue;
        seq.push_back(ont.slot_name(s));
        Tokens vt = tokenize(ont.value_name(s, v));
        seq.insert(seq.end(), vt.begin(), vt.end());
    }
    seq.emplace_back(kSepToken);
    // Z_t
    const auto& [sys_t, usr_t] = sample.context[sample.turn_index - 1];
    seq.insert(seq.end(), sys_t.begin(), sys_t.end());
    seq.insert(seq.end(), usr_t.begin(), usr_t.end());
    seq.emplace_back(kSepToken);

    if (static_cast<int>(seq.size()) > max_len) {
        // left truncation: keep [CLS] plus the newest max_len - 1 tokens
        int drop = static_cast<int>(seq.size()) - max_len;
        seq.erase(seq.begin() + 1, seq.begin() + 1 + drop);
    }
    return seq;
}

void SoftLabelSet::validate(const Ontology& ont) const {
    if (static_cast<int>(per_slot.size()) != ont.n_slots()) {
        throw SchemaError("SoftLabelSet: slot count mismatch");
    }
    for (int s = 0; s < ont.n_slots(); ++s) {
        const auto& v = per_slot[s];
        if (static_cast<int>(v.size()) != ont.n_candidates(s)) {
            throw SchemaError("SoftLabelSet: vector length mismatch for slot " + ont.slot_name(s));
        }
        double sum = 0.0;
        for (double x : v) {
            if (x < 0.0) throw SchemaError("SoftLabelSet: negative probability");
            sum += x;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw SchemaError("SoftLabelSet: probabilities sum to " + std::to_string(sum));
        }
    }
}

std::vector<double> one_hot(int slot, int value_index, const Ontology& ont) {
    if (slot < 0 || slot >= ont.n_slots()) throw SchemaError("one_hot: slot out of range");
    int k = ont.n_candidates(slot);
    if (value_index < 0 || value_index >= k) {
        throw SchemaError("one_hot: index " + std::to_string(value_index) + " out of bounds for slot " +
                          ont.slot_name(slot));
    }
    std::vector<double> v(static_cast<std::size_t>(k), 0.0);
    v[value_index] = 1.0;
    return v;
}

Vocabulary::Vocabulary() {
    push(kPadToken);
    push(kUnkToken);
    push(kClsToken);
    push(kSepToken);
}

void Vocabulary::push(const std::string& tok) {
    if (ids_.count(tok)) return;
    ids_[tok] = static_cast<int>(tokens_.size());
    tokens_.push_back(tok);
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    std::vector<std::string> sorted(words);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (const auto& w : sorted) v.push(w);
    return v;
}

namespace {
void collect_ontology_words(const Ontology& ont, std::vector<std::string>& words) {
    for (int s = 0; s < ont.n_slots(); ++s) {
        words.push_back(ont.slot_name(s));
        for (const auto& val : ont.candidates(s)) {
            for (auto& t : tokenize(val)) words.push_back(t);
        }
    }
}
}  // namespace

Vocabulary Vocabulary::from_ontology(const Ontology& ont,
                                     const std::vector<std::string>& template_words) {
    std::vector<std::string> words(template_words);
    collect_ontology_words(ont, words);
    return from_words(words);
}

Vocabulary Vocabulary::from_corpus(const Corpus& corpus) {
    std::vector<std::string> words;
    collect_ontology_words(corpus.ontology, words);
    for (const auto& d : corpus.dialogues) {
        for (const auto& t : d.turns) {
            words.insert(words.end(), t.system_utterance.begin(), t.system_utterance.end());
            words.insert(words.end(), t.user_utterance.begin(), t.user_utterance.end());
        }
    }
    return from_words(words);
}

int Vocabulary::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnkId : it->second;
}

std::vector<int> Vocabulary::ids(const Tokens& toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
}

std::string Vocabulary::to_json() const {
    nlohmann::json doc;
    doc["tokens"] = tokens_;
    return doc.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text);
    Vocabulary v;
    for (const auto& t : doc.at("tokens")) {
        v.push(t.get<std::string>());
    }
    return v;
}

std::uint64_t Vocabulary::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : tokens_) {
        h = fnv1a64(t, h);
        h = fnv1a64("\x1f", h);
    }
    return h;
}

std::string corpus_to_json(const Corpus& corpus) {
    const Ontology& ont = corpus.ontology;
    nlohmann::ordered_json doc;
    nlohmann::ordered_json ontology = nlohmann::ordered_json::object();
    for (int s = 0; s < ont.n_slots(); ++s) ontology[ont.slot_name(s)] = ont.candidates(s);
    doc["ontology"] = std::move(ontology);
    nlohmann::ordered_json dialogues = nlohmann::ordered_json::array();
    for (const auto& d : corpus.dialogues) {
        nlohmann::ordered_json dj;
        dj["id"] = d.id;
        nlohmann::ordered_json turns = nlohmann::ordered_json::array();
        for (const auto& t : d.turns) {
            nlohmann::ordered_json tj;
            tj["system"] = join_tokens(t.system_utterance);
            tj["user"] = join_tokens(t.user_utterance);
            nlohmann::ordered_json st = nlohmann::ordered_json::object();
            for (int s = 0; s < ont.n_slots(); ++s) {
                if (t.state[s] != kNoneIndex) st[ont.slot_name(s)] = ont.value_name(s, t.state[s]);
            }
            tj["state"] = std::move(st);
            turns.push_back(std::move(tj));
        }
        dj["turns"] = std::move(turns);
        dialogues.push_back(std::move(dj));
    }
    doc["dialogues"] = std::move(dialogues);
    return doc.dump(1);
}

Corpus corpus_from_json(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text);
    // nlohmann::json sorts object keys, so slot order is lexicographic
    std::vector<std::string> slots;
    std::map<std::string, std::vector<std::string>> cands;
    for (auto& [slot, vals] : doc.at("ontology").items()) {
        std::vector<std::string> list = vals.get<std::vector<std::string>>();
        // normalize: "none" at index 0, "dontcare" present
        auto none_it = std::find(list.begin(), list.end(), kNoneValue);
        if (none_it != list.end()) list.erase(none_it);
        list.insert(list.begin(), kNoneValue);
        if (std::find(list.begin(), list.end(), kDontcareValue) == list.end()) {
            list.insert(list.begin() + 1, kDontcareValue);
        }
        slots.push_back(slot);
        cands[slot] = std::move(list);
    }
    Corpus corpus;
    corpus.ontology = Ontology(std::move(slots), std::move(cands));
    const Ontology& ont = corpus.ontology;

    for (const auto& dj : doc.at("dialogues")) {
        Dialogue d;
        d.id = dj.at("id").get<std::string>();
        for (const auto& tj : dj.at("turns")) {
            Turn t;
            t.system_utterance = tokenize(tj.at("system").get<std::string>());
            t.user_utterance = tokenize(tj.at("user").get<std::string>());
            t.state = all_none_state(ont);
            if (tj.contains("state")) {
                for (auto& [slot, val] : tj.at("state").items()) {
                    int s = ont.slot_index(slot);
                    t.state[s] = ont.value_index(s, val.get<std::string>());
                }
            }
            d.turns.push_back(std::move(t));
        }
        corpus.dialogues.push_back(std::move(d));
    }
    validate_corpus(corpus);
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus: " + path);
    out << corpus_to_json(corpus);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read corpus: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return corpus_from_json(ss.str());
}

}  // namespace dstlab
