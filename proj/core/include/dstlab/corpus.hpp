#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dstlab/dialogue.hpp"

namespace dstlab {

// Controlled label corruption.
//   missing  - a turn-active update is dropped; the labeled value stays at the
//              previous turn's labeled value.
//   spurious - an unmentioned none-valued slot gains a random non-"none" value
//              (at most one per turn).
//   wrong    - a turn-active value is replaced by a different non-"none"
//              candidate.
// Kinds are disjoint per site; p_missing + p_wrong must stay within 1 so that
// one uniform draw decides between them and empirical per-kind rates match the
// configured probabilities.
struct NoiseSpec {
    double p_missing = 0.0;
    double p_spurious = 0.0;
    double p_wrong = 0.0;
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError
};

enum class NoiseKind { Missing, Spurious, Wrong, Carried };

const char* noise_kind_name(NoiseKind k);
NoiseKind noise_kind_from_name(std::string_view name);

// One entry per (dialogue, turn, slot) where the noisy label differs from the
// clean label. Fresh corruptions carry their kind; differences inherited from
// an earlier turn's corruption are logged as Carried.
struct NoiseLogEntry {
    std::string dialogue_id;
    int turn = 0;  // 0-based
    int slot = 0;  // ontology slot index
    NoiseKind kind = NoiseKind::Missing;
    int original_value = 0;   // clean label index at this site
    int corrupted_value = 0;  // noisy label index at this site
};

struct NoiseLog {
    std::vector<NoiseLogEntry> entries;

    std::string to_jsonl() const;
    static NoiseLog from_jsonl(const std::string& text);
};

// The desk-scale schema: 5 domains, 30 slots, 5-25 candidates per slot.
Ontology desk_ontology();

// Template words used by the generator; the closed vocabulary is built from
// these plus the ontology.
const std::vector<std::string>& generator_template_words();

// Synthetic multi-domain dialogues whose states are cumulative and whose every
// state change is verbalized in that turn's user utterance. Deterministic
// given the seed; per-dialogue streams derive from (seed, dialogue id).
Corpus generate_corpus(const Ontology& ont, int n_dialogues, int max_turns, std::uint64_t seed);

// Label corruption. Utterances are untouched; the noisy label stream is built
// turn by turn so dropped updates persist until the slot is next updated.
// The returned log indexes exactly the sites where noisy and clean labels
// differ.
std::pair<Corpus, NoiseLog> inject_noise(const Corpus& corpus, const NoiseSpec& spec);

struct SplitFractions {
    double train = 0.0;
    double clean = 0.0;
    double test = 0.0;
};

struct CorpusSplit {
    Corpus train;
    Corpus clean;
    Corpus test;
};

// Disjoint dialogue-level partition. Fractions must be non-negative and sum to
// at most 1. Requesting a positive clean fraction that yields zero dialogues
// is a configuration error.
CorpusSplit split_corpus(const Corpus& corpus, const SplitFractions& fractions, std::uint64_t seed);

// Drops every dialogue whose state ever sets a slot of the excluded domain.
Corpus filter_by_domain(const Corpus& corpus, std::string_view excluded_domain);

}  // namespace dstlab
