#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dstlab {

using Tokens = std::vector<std::string>;

// Special marker tokens. "none" sits at candidate index 0 in every slot so an
// empty state is representable uniformly.
inline constexpr const char* kClsToken = "[CLS]";
inline constexpr const char* kSepToken = "[SEP]";
inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kNoneValue = "none";
inline constexpr const char* kDontcareValue = "dontcare";
inline constexpr int kNoneIndex = 0;

Tokens tokenize(std::string_view text);
std::string join_tokens(const Tokens& toks);

// The slot schema: an ordered list of "domain-slotname" identifiers, each with
// an ordered candidate value list containing "none" (index 0) and "dontcare".
class Ontology {
public:
    Ontology() = default;
    // Slot order is the order of the given list. Throws SchemaError on
    // duplicate slots, duplicate candidates, or a missing/misplaced "none".
    Ontology(std::vector<std::string> slots,
             std::map<std::string, std::vector<std::string>> candidates);

    int n_slots() const { return static_cast<int>(slots_.size()); }
    const std::vector<std::string>& slots() const { return slots_; }
    const std::string& slot_name(int s) const { return slots_[s]; }
    int slot_index(std::string_view slot) const;  // throws SchemaError if unknown
    bool has_slot(std::string_view slot) const;

    const std::vector<std::string>& candidates(int s) const { return values_[s]; }
    int n_candidates(int s) const { return static_cast<int>(values_[s].size()); }
    // Index of a value string within slot s; throws SchemaError if absent.
    int value_index(int s, std::string_view value) const;
    const std::string& value_name(int s, int v) const { return values_[s][v]; }

    // Domain = prefix of the slot id before '-'.
    static std::string domain_of(std::string_view slot);
    std::vector<std::string> domains() const;

    std::uint64_t content_hash() const;

private:
    std::vector<std::string> slots_;
    std::vector<std::vector<std::string>> values_;
    std::unordered_map<std::string, int> slot_index_;
    std::vector<std::unordered_map<std::string, int>> value_index_;
};

// Dense per-turn state: one candidate index per ontology slot.
using State = std::vector<std::int32_t>;

State all_none_state(const Ontology& ont);

struct Turn {
    Tokens system_utterance;
    Tokens user_utterance;
    State state;  // total over all slots, candidate indices
};

struct Dialogue {
    std::string id;
    std::vector<Turn> turns;
};

struct Corpus {
    Ontology ontology;
    std::vector<Dialogue> dialogues;

    const Dialogue* find(std::string_view id) const;
    std::int64_t total_turns() const;
};

// Validates state bounds, non-empty dialogues, unique ids. Throws SchemaError.
void validate_corpus(const Corpus& corpus);

// One training sample: the dialogue context up to turn t (1-based), the
// previous turn's state fed as input, and per-slot target labels.
struct Sample {
    std::string dialogue_id;
    int turn_index = 1;  // t >= 1
    std::vector<std::pair<Tokens, Tokens>> context;  // (system, user) for turns 1..t
    State previous_state;                            // state at t-1, all-none for t=1
    State labels;
};

void validate_sample(const Sample& sample, const Ontology& ont);

// I_t = [CLS] + X_{t-1} + B_{t-1} + [SEP] + Z_t + [SEP], where B_{t-1} lists
// non-"none" slot-value pairs in ontology slot order and Z_t is the current
// turn's system + user utterance. Sequences longer than max_len lose their
// oldest tokens after [CLS] (left truncation).
Tokens build_input_sequence(const Sample& sample, const Ontology& ont, int max_len);

// Per-slot probability vectors over candidate values.
struct SoftLabelSet {
    std::vector<std::vector<double>> per_slot;

    // Throws SchemaError unless every vector is non-negative, sums to 1
    // within 1e-9 and matches the slot's candidate count.
    void validate(const Ontology& ont) const;
};

std::vector<double> one_hot(int slot, int value_index, const Ontology& ont);

// Closed-vocabulary whitespace tokenizer support. Ids 0..3 are the special
// markers; unknown tokens map to [UNK].
class Vocabulary {
public:
    static constexpr int kPadId = 0;
    static constexpr int kUnkId = 1;
    static constexpr int kClsId = 2;
    static constexpr int kSepId = 3;

    Vocabulary();
    static Vocabulary from_words(const std::vector<std::string>& words);
    // The closed vocabulary for generated corpora: ontology slot ids, value
    // tokens, and the generator's template words.
    static Vocabulary from_ontology(const Ontology& ont,
                                    const std::vector<std::string>& template_words);
    // For externally loaded corpora: scan utterances plus the ontology.
    static Vocabulary from_corpus(const Corpus& corpus);

    int size() const { return static_cast<int>(tokens_.size()); }
    int id(std::string_view token) const;  // kUnkId when absent
    const std::string& token(int id) const { return tokens_[id]; }
    std::vector<int> ids(const Tokens& toks) const;

    std::string to_json() const;
    static Vocabulary from_json(const std::string& text);

    std::uint64_t content_hash() const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    void push(const std::string& tok);
};

// Corpus JSON document:
//   {"ontology": {slot: [values...]}, "dialogues": [{"id", "turns":
//    [{"system", "user", "state": {slot: value-string}}]}]}
// State maps omit "none"-valued slots. Ontology slot order in the document is
// lexicographic (JSON object order); loading normalizes candidate lists so
// "none" is index 0 and "dontcare" is present.
std::string corpus_to_json(const Corpus& corpus);
Corpus corpus_from_json(const std::string& text);
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

}  // namespace dstlab
