#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dstlab/dialogue.hpp"

namespace dstlab {

// Full per-turn states for a set of dialogues, aligned with ontology slot
// order. Used for both predictions and gold.
struct StateSequences {
    struct Entry {
        std::string dialogue_id;
        std::vector<State> turns;
    };
    std::vector<Entry> dialogues;

    static StateSequences from_corpus(const Corpus& corpus);
};

struct MetricsReport {
    double joint_goal_accuracy = 0.0;
    double joint_turn_accuracy = 0.0;
    double slot_accuracy = 0.0;
    std::vector<double> per_slot_error_rate;  // ontology slot order
    std::int64_t turns_evaluated = 0;
    std::int64_t active_slot_turns = 0;  // turns with at least one active slot

    std::string to_json(const Ontology& ont) const;
    static MetricsReport from_json(const std::string& text, const Ontology& ont);
    // CSV (slot, error_rate) in ontology slot order.
    std::string per_slot_csv(const Ontology& ont) const;
};

// Joint goal accuracy counts a turn correct iff every ontology slot matches
// gold. Slot accuracy is the unweighted mean of per-slot turn-level
// accuracies. Joint turn accuracy derives active slots from gold state changes
// (turn 1 compared against all-"none") and counts a turn correct iff every
// active slot is predicted correctly; turns without active slots count as
// correct unless exclude_empty_turns drops them from the denominator.
MetricsReport evaluate(const StateSequences& predictions, const StateSequences& gold,
                       const Ontology& ont, bool exclude_empty_turns = false);

// Independent nested-loop recomputation of the same metrics; shares no logic
// with evaluate. For differential testing.
MetricsReport brute_force_oracle(const StateSequences& predictions, const StateSequences& gold,
                                 const Ontology& ont, bool exclude_empty_turns = false);

}  // namespace dstlab
