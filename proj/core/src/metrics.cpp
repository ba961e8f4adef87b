#include "dstlab/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include <json.hpp>

#include "dstlab/errors.hpp"

namespace dstlab {

StateSequences StateSequences::from_corpus(const Corpus& corpus) {
    StateSequences out;
    out.dialogues.reserve(corpus.dialogues.size());
    for (const auto& d : corpus.dialogues) {
        Entry e;
        e.dialogue_id = d.id;
        e.turns.reserve(d.turns.size());
        for (const auto& t : d.turns) e.turns.push_back(t.state);
        out.dialogues.push_back(std::move(e));
    }
    return out;
}

std::string MetricsReport::to_json(const Ontology& ont) const {
    nlohmann::ordered_json doc;
    doc["joint_goal_accuracy"] = joint_goal_accuracy;
    doc["joint_turn_accuracy"] = joint_turn_accuracy;
    doc["slot_accuracy"] = slot_accuracy;
    doc["turns_evaluated"] = turns_evaluated;
    doc["active_slot_turns"] = active_slot_turns;
    nlohmann::ordered_json per_slot = nlohmann::ordered_json::object();
    for (int s = 0; s < ont.n_slots(); ++s) per_slot[ont.slot_name(s)] = per_slot_error_rate[s];
    doc["per_slot_error_rate"] = std::move(per_slot);
    return doc.dump(1);
}

MetricsReport MetricsReport::from_json(const std::string& text, const Ontology& ont) {
    nlohmann::json doc = nlohmann::json::parse(text);
    MetricsReport r;
    r.joint_goal_accuracy = doc.at("joint_goal_accuracy").get<double>();
    r.joint_turn_accuracy = doc.at("joint_turn_accuracy").get<double>();
    r.slot_accuracy = doc.at("slot_accuracy").get<double>();
    r.turns_evaluated = doc.at("turns_evaluated").get<std::int64_t>();
    r.active_slot_turns = doc.at("active_slot_turns").get<std::int64_t>();
    r.per_slot_error_rate.resize(static_cast<std::size_t>(ont.n_slots()), 0.0);
    const auto& per_slot = doc.at("per_slot_error_rate");
    for (int s = 0; s < ont.n_slots(); ++s) {
        r.per_slot_error_rate[static_cast<std::size_t>(s)] =
            per_slot.at(ont.slot_name(s)).get<double>();
    }
    return r;
}

std::string MetricsReport::per_slot_csv(const Ontology& ont) const {
    std::string out = "slot,error_rate\n";
    char buf[64];
    for (int s = 0; s < ont.n_slots(); ++s) {
        std::snprintf(buf, sizeof(buf), "%.6f", per_slot_error_rate[s]);
        out += ont.slot_name(s);
        out.push_back(',');
        out += buf;
        out.push_back('\n');
    }
    return out;
}

namespace {

void check_coverage(const StateSequences& predictions, const StateSequences& gold,
                    const Ontology& ont) {
    if (predictions.dialogues.size() != gold.dialogues.size()) {
        throw SchemaError("metrics: prediction/gold dialogue count mismatch");
    }
    std::int64_t turns = 0;
    for (std::size_t i = 0; i < gold.dialogues.size(); ++i) {
        const auto& p = predictions.dialogues[i];
        const auto& g = gold.dialogues[i];
        if (p.dialogue_id != g.dialogue_id) {
            throw SchemaError("metrics: dialogue id mismatch at position " + std::to_string(i));
        }
        if (p.turns.size() != g.turns.size()) {
            throw SchemaError("metrics: turn count mismatch in dialogue " + g.dialogue_id);
        }
        for (std::size_t t = 0; t < g.turns.size(); ++t) {
            if (static_cast<int>(p.turns[t].size()) != ont.n_slots() ||
                static_cast<int>(g.turns[t].size()) != ont.n_slots()) {
                throw SchemaError("metrics: state does not cover all ontology slots in dialogue " +
                                  g.dialogue_id);
            }
        }
        turns += static_cast<std::int64_t>(g.turns.size());
    }
    if (turns == 0) throw SchemaError("metrics: no turns to evaluate");
}

}  // namespace

MetricsReport evaluate(const StateSequences& predictions, const StateSequences& gold,
                       const Ontology& ont, bool exclude_empty_turns) {
    check_coverage(predictions, gold, ont);
    const int n_slots = ont.n_slots();

    std::int64_t turns = 0;
    std::int64_t joint_correct = 0;
    std::int64_t active_turns = 0;
    std::int64_t jta_correct = 0;
    std::int64_t jta_denominator = 0;
    std::vector<std::int64_t> slot_correct(static_cast<std::size_t>(n_slots), 0);

    for (std::size_t i = 0; i < gold.dialogues.size(); ++i) {
        const auto& pd = predictions.dialogues[i];
        const auto& gd = gold.dialogues[i];
        State prev_gold = all_none_state(ont);
        for (std::size_t t = 0; t < gd.turns.size(); ++t) {
            const State& p = pd.turns[t];
            const State& g = gd.turns[t];
            ++turns;

            bool all_correct = true;
            bool active_correct = true;
            bool any_active = false;
            for (int s = 0; s < n_slots; ++s) {
                bool correct = p[s] == g[s];
                if (correct) ++slot_correct[s];
                else all_correct = false;
                if (g[s] != prev_gold[s]) {
                    any_active = true;
                    if (!correct) active_correct = false;
                }
            }
            if (all_correct) ++joint_correct;
            if (any_active) ++active_turns;
            if (any_active || !exclude_empty_turns) {
                ++jta_denominator;
                if (active_correct) ++jta_correct;
            }
            prev_gold = g;
        }
    }

    MetricsReport report;
    report.turns_evaluated = turns;
    report.active_slot_turns = active_turns;
    report.joint_goal_accuracy = static_cast<double>(joint_correct) / static_cast<double>(turns);
    report.joint_turn_accuracy =
        jta_denominator == 0 ? 1.0
                             : static_cast<double>(jta_correct) / static_cast<double>(jta_denominator);
    report.per_slot_error_rate.resize(static_cast<std::size_t>(n_slots));
    double acc_sum = 0.0;
    for (int s = 0; s < n_slots; ++s) {
        double acc = static_cast<double>(slot_correct[s]) / static_cast<double>(turns);
        report.per_slot_error_rate[s] = 1.0 - acc;
        acc_sum += acc;
    }
    report.slot_accuracy = acc_sum / static_cast<double>(n_slots);
    return report;
}

MetricsReport brute_force_oracle(const StateSequences& predictions, const StateSequences& gold,
                                 const Ontology& ont, bool exclude_empty_turns) {
    // Deliberately re-derives everything with explicit loops and intermediate
    // tables rather than reusing evaluate's single pass.
    if (predictions.dialogues.size() != gold.dialogues.size()) {
        throw SchemaError("oracle: prediction/gold dialogue count mismatch");
    }
    std::int64_t total_turns = 0;
    for (std::size_t i = 0; i < gold.dialogues.size(); ++i) {
        if (predictions.dialogues[i].dialogue_id != gold.dialogues[i].dialogue_id) {
            throw SchemaError("oracle: dialogue id mismatch");
        }
        if (predictions.dialogues[i].turns.size() != gold.dialogues[i].turns.size()) {
            throw SchemaError("oracle: turn count mismatch");
        }
        for (std::size_t t = 0; t < gold.dialogues[i].turns.size(); ++t) {
            if (static_cast<int>(predictions.dialogues[i].turns[t].size()) != ont.n_slots() ||
                static_cast<int>(gold.dialogues[i].turns[t].size()) != ont.n_slots()) {
                throw SchemaError("oracle: state size mismatch");
            }
            ++total_turns;
        }
    }
    if (total_turns == 0) throw SchemaError("oracle: no turns to evaluate");

    // joint goal accuracy
    std::int64_t jga_hits = 0;
    for (std::size_t i = 0; i < gold.dialogues.size(); ++i) {
        for (std::size_t t = 0; t < gold.dialogues[i].turns.size(); ++t) {
            int mismatches = 0;
            for (int s = 0; s < ont.n_slots(); ++s) {
                if (predictions.dialogues[i].turns[t][s] != gold.dialogues[i].turns[t][s]) {
                    ++mismatches;
                }
            }
            if (mismatches == 0) ++jga_hits;
        }
    }

    // per-slot accuracies
    std::vector<double> slot_acc(static_cast<std::size_t>(ont.n_slots()), 0.0);
    for (int s = 0; s < ont.n_slots(); ++s) {
        std::int64_t hits = 0;
        for (std::size_t i = 0; i < gold.dialogues.size(); ++i) {
            for (std::size_t t = 0; t < gold.dialogues[i].turns.size(); ++t) {
                if (predictions.dialogues[i].turns[t][s] == gold.dialogues[i].turns[t][s]) ++hits;
            }
        }
        slot_acc[static_cast<std::size_t>(s)] =
            static_cast<double>(hits) / static_cast<double>(total_turns);
    }

    // active slots per turn, from gold state changes
    std::int64_t active_turns = 0;
    std::int64_t jta_hits = 0;
    std::int64_t jta_total = 0;
    for (std::size_t i = 0; i < gold.dialogues.size(); ++i) {
        for (std::size_t t = 0; t < gold.dialogues[i].turns.size(); ++t) {
            std::vector<int> active;
            for (int s = 0; s < ont.n_slots(); ++s) {
                int prev = t == 0 ? kNoneIndex : gold.dialogues[i].turns[t - 1][s];
                if (gold.dialogues[i].turns[t][s] != prev) active.push_back(s);
            }
            if (!active.empty()) ++active_turns;
            if (active.empty() && exclude_empty_turns) continue;
            ++jta_total;
            bool ok = true;
            for (int s : active) {
                if (predictions.dialogues[i].turns[t][s] != gold.dialogues[i].turns[t][s]) ok = false;
            }
            if (ok) ++jta_hits;
        }
    }

    MetricsReport report;
    report.turns_evaluated = total_turns;
    report.active_slot_turns = active_turns;
    report.joint_goal_accuracy = static_cast<double>(jga_hits) / static_cast<double>(total_turns);
    report.joint_turn_accuracy =
        jta_total == 0 ? 1.0 : static_cast<double>(jta_hits) / static_cast<double>(jta_total);
    double mean_acc = 0.0;
    report.per_slot_error_rate.resize(static_cast<std::size_t>(ont.n_slots()));
    for (int s = 0; s < ont.n_slots(); ++s) {
        report.per_slot_error_rate[static_cast<std::size_t>(s)] =
            1.0 - slot_acc[static_cast<std::size_t>(s)];
        mean_acc += slot_acc[static_cast<std::size_t>(s)];
    }
    report.slot_accuracy = mean_acc / static_cast<double>(ont.n_slots());
    return report;
}

}  // namespace dstlab
