#include "dstlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "dstlab/errors.hpp"
#include "dstlab/optimizer.hpp"
#include "dstlab/rng.hpp"

namespace dstlab::pipeline {

using numeric::AdamW;
using numeric::AdamWConfig;
using numeric::Tape;
using tracker::TrackerConfig;
using tracker::TrackerModel;

const LabelBundle::Entry* LabelBundle::find(std::string_view dialogue_id) const {
    for (const auto& e : entries) {
        if (e.dialogue_id == dialogue_id) return &e;
    }
    return nullptr;
}

void LabelBundle::validate_against(const Corpus& corpus) const {
    if (entries.size() != corpus.dialogues.size()) {
        throw SchemaError("label bundle: dialogue count mismatch");
    }
    int n_slots = corpus.ontology.n_slots();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        const auto& d = corpus.dialogues[i];
        if (e.dialogue_id != d.id) throw SchemaError("label bundle: dialogue order mismatch");
        if (e.vanilla.size() != d.turns.size() || e.pseudo.size() != d.turns.size() ||
            (!e.truth.empty() && e.truth.size() != d.turns.size())) {
            throw SchemaError("label bundle: turn coverage mismatch in dialogue " + d.id);
        }
        auto check = [&](const std::vector<State>& states) {
            for (const auto& st : states) {
                if (static_cast<int>(st.size()) != n_slots) {
                    throw SchemaError("label bundle: state size mismatch in dialogue " + d.id);
                }
                for (int s = 0; s < n_slots; ++s) {
                    if (st[s] < 0 || st[s] >= corpus.ontology.n_candidates(s)) {
                        throw SchemaError("label bundle: index out of bounds in dialogue " + d.id);
                    }
                }
            }
        };
        check(e.vanilla);
        check(e.pseudo);
        check(e.truth);
    }
}

std::string LabelBundle::to_jsonl() const {
    std::string out;
    for (const auto& e : entries) {
        for (std::size_t t = 0; t < e.vanilla.size(); ++t) {
            nlohmann::ordered_json j;
            j["dialogue"] = e.dialogue_id;
            j["turn"] = static_cast<int>(t);
            j["vanilla"] = e.vanilla[t];
            j["pseudo"] = e.pseudo[t];
            if (!e.truth.empty()) j["truth"] = e.truth[t];
            out += j.dump();
            out.push_back('\n');
        }
    }
    return out;
}

LabelBundle LabelBundle::from_jsonl(const std::string& text) {
    LabelBundle bundle;
    std::istringstream in(text);
    std::string line;
    LabelBundle::Entry* current = nullptr;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        std::string id = j.at("dialogue").get<std::string>();
        if (current == nullptr || current->dialogue_id != id) {
            bundle.entries.push_back({});
            current = &bundle.entries.back();
            current->dialogue_id = id;
        }
        int turn = j.at("turn").get<int>();
        if (turn != static_cast<int>(current->vanilla.size())) {
            throw SchemaError("label bundle: turns out of order in dialogue " + id);
        }
        current->vanilla.push_back(j.at("vanilla").get<State>());
        current->pseudo.push_back(j.at("pseudo").get<State>());
        if (j.contains("truth")) current->truth.push_back(j.at("truth").get<State>());
    }
    return bundle;
}

void Composition::validate() const {
    if (!noisy && !clean && !pseudo) throw ConfigError("composition: must include at least one of T, C, P");
}

std::string Composition::name() const {
    std::string out;
    auto append = [&](const char* tag) {
        if (!out.empty()) out += "+";
        out += tag;
    };
    if (noisy) append("T");
    if (clean) append("C");
    if (pseudo) append("P");
    return out;
}

Composition Composition::parse(std::string_view text) {
    Composition c;
    std::string token;
    auto apply = [&](const std::string& t) {
        if (t == "T") c.noisy = true;
        else if (t == "C") c.clean = true;
        else if (t == "P") c.pseudo = true;
        else throw ConfigError("composition: unknown component \"" + t + "\"");
    };
    for (char ch : text) {
        if (ch == '+') {
            if (!token.empty()) apply(token);
            token.clear();
        } else {
            token.push_back(ch);
        }
    }
    if (!token.empty()) apply(token);
    c.validate();
    return c;
}

void TrainPlan::validate() const {
    composition.validate();
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("train plan: alpha must lie in [0,1]");
    if (epochs < 1) throw ConfigError("train plan: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train plan: batch size must be >= 1");
    if (peak_lr <= 0.0) throw ConfigError("train plan: peak_lr must be positive");
    if (warmup_proportion < 0.0 || warmup_proportion > 1.0) {
        throw ConfigError("train plan: warmup proportion must lie in [0,1]");
    }
    if (clean_holdout_fraction < 0.0 || clean_holdout_fraction >= 1.0) {
        throw ConfigError("train plan: clean holdout fraction must lie in [0,1)");
    }
}

SoftLabelSet combine_labels(const State& pseudo, const State& vanilla, double alpha,
                            const Ontology& ont) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("combine_labels: alpha must lie in [0,1]");
    if (static_cast<int>(pseudo.size()) != ont.n_slots() ||
        static_cast<int>(vanilla.size()) != ont.n_slots()) {
        throw SchemaError("combine_labels: label coverage mismatch");
    }
    SoftLabelSet out;
    out.per_slot.reserve(static_cast<std::size_t>(ont.n_slots()));
    for (int s = 0; s < ont.n_slots(); ++s) {
        int k = ont.n_candidates(s);
        int p = pseudo[static_cast<std::size_t>(s)];
        int v = vanilla[static_cast<std::size_t>(s)];
        if (p < 0 || p >= k || v < 0 || v >= k) {
            throw SchemaError("combine_labels: index out of bounds for slot " + ont.slot_name(s));
        }
        std::vector<double> vec(static_cast<std::size_t>(k), 0.0);
        vec[static_cast<std::size_t>(p)] += alpha;
        vec[static_cast<std::size_t>(v)] += 1.0 - alpha;
        out.per_slot.push_back(std::move(vec));
    }
    return out;
}

std::pair<Corpus, Corpus> clean_holdout_split(const Corpus& clean, double holdout_fraction) {
    Corpus train_part;
    Corpus holdout;
    train_part.ontology = clean.ontology;
    holdout.ontology = clean.ontology;
    int n = static_cast<int>(clean.dialogues.size());
    int n_hold = 0;
    if (holdout_fraction > 0.0 && n > 0) {
        n_hold = std::max(1, static_cast<int>(std::llround(holdout_fraction * n)));
        n_hold = std::min(n_hold, n);
    }
    for (int i = 0; i < n - n_hold; ++i) train_part.dialogues.push_back(clean.dialogues[static_cast<std::size_t>(i)]);
    for (int i = n - n_hold; i < n; ++i) holdout.dialogues.push_back(clean.dialogues[static_cast<std::size_t>(i)]);
    return {std::move(train_part), std::move(holdout)};
}

namespace {

// One training item: a prebuilt input sequence plus its targets.
struct TrainItem {
    std::vector<int> input_ids;
    State hard;                         // used when soft is empty
    const SoftLabelSet* soft = nullptr;
    const State* pseudo = nullptr;      // for batch-loss records
    const State* vanilla = nullptr;
};

std::vector<int> build_ids(const TrackerModel& model, const Dialogue& dlg, int turn) {
    Sample sample = tracker::make_sample(dlg, turn, model.ontology());
    return model.vocab().ids(build_input_sequence(sample, model.ontology(), model.config().max_len));
}

// The shared minimization loop: shuffled batches, AdamW with linear
// warmup/decay, per-epoch model selection by joint goal accuracy, best
// checkpoint restored at the end.
void run_training(TrackerModel& model, std::vector<TrainItem>& items, const TrainPlan& plan,
                  const Corpus* selection, TrainResult* result) {
    if (items.empty()) throw ConfigError("training: no samples");
    Corpus selection_sub;
    if (selection != nullptr && plan.selection_max_dialogues > 0 &&
        static_cast<int>(selection->dialogues.size()) > plan.selection_max_dialogues) {
        selection_sub.ontology = selection->ontology;
        selection_sub.dialogues.assign(selection->dialogues.begin(),
                                       selection->dialogues.begin() + plan.selection_max_dialogues);
        selection = &selection_sub;
    }
    std::int64_t batches_per_epoch =
        (static_cast<std::int64_t>(items.size()) + plan.batch_size - 1) / plan.batch_size;
    AdamWConfig opt_cfg;
    opt_cfg.schedule.peak_lr = plan.peak_lr;
    opt_cfg.schedule.warmup_proportion = plan.warmup_proportion;
    opt_cfg.schedule.total_steps = batches_per_epoch * plan.epochs;
    opt_cfg.weight_decay = plan.weight_decay;
    AdamW opt(opt_cfg);

    TrainResult local;
    TrainResult& res = result != nullptr ? *result : local;
    res = TrainResult{};

    std::vector<numeric::Tensor> best_values;
    double best_jga = -1.0;

    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    Tape tape;
    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        Rng rng = Rng::derive(plan.seed, "epoch/" + std::to_string(epoch));
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::int64_t epoch_batches = 0;

        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(plan.batch_size)) {
            std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(plan.batch_size));
            double inv_batch = 1.0 / static_cast<double>(end - begin);
            model.trainable().zero_grads();
            BatchLossRecord record;
            for (std::size_t i = begin; i < end; ++i) {
                TrainItem& item = items[order[i]];
                tape.clear();
                Tape::Id h = model.encode_context(tape, item.input_ids, true, &rng);
                Tape::Id g = model.all_slot_vectors(tape, h);
                std::vector<Tape::Id> logp = model.slot_log_probs(tape, g);
                Tape::Id loss = item.soft != nullptr ? model.loss_soft(tape, logp, *item.soft)
                                                     : model.loss_hard(tape, logp, item.hard);
                record.training += tape.scalar_value(loss) * inv_batch;
                if (plan.record_batch_losses && item.pseudo != nullptr && item.vanilla != nullptr) {
                    record.pseudo += tape.scalar_value(model.loss_hard(tape, logp, *item.pseudo)) * inv_batch;
                    record.vanilla += tape.scalar_value(model.loss_hard(tape, logp, *item.vanilla)) * inv_batch;
                }
                tape.backward(tape.scale(loss, inv_batch));
            }
            if (!std::isfinite(record.training)) {
                throw NumericalError("training: non-finite loss at epoch " + std::to_string(epoch));
            }
            opt.step(model.trainable());
            ++res.steps;
            ++epoch_batches;
            epoch_loss += record.training;
            if (plan.record_batch_losses) res.batch_losses.push_back(record);
        }
        res.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(epoch_batches));

        if (selection != nullptr && !selection->dialogues.empty()) {
            double jga = tracker::evaluate_tracker(model, *selection).joint_goal_accuracy;
            res.epoch_selection_jga.push_back(jga);
            if (jga > best_jga) {
                best_jga = jga;
                best_values = model.trainable().snapshot_values();
                res.best_epoch = epoch;
                res.best_selection_jga = jga;
            }
        }
    }
    if (!best_values.empty()) model.trainable().restore_values(best_values);
}

}  // namespace

TrackerModel train_auxiliary(const Corpus& clean, const Corpus& selection, const TrackerConfig& cfg,
                             const TrainPlan& plan, TrainResult* result) {
    plan.validate();
    if (clean.dialogues.empty()) throw ConfigError("train_auxiliary: clean corpus is empty");
    validate_corpus(clean);

    Vocabulary vocab = Vocabulary::from_ontology(clean.ontology, generator_template_words());
    TrackerModel model(cfg, std::move(vocab), clean.ontology, Rng::derive(plan.seed, "aux-init").next_u64());

    std::vector<TrainItem> items;
    for (const auto& dlg : clean.dialogues) {
        for (int t = 0; t < static_cast<int>(dlg.turns.size()); ++t) {
            TrainItem item;
            item.input_ids = build_ids(model, dlg, t);
            item.hard = dlg.turns[static_cast<std::size_t>(t)].state;
            items.push_back(std::move(item));
        }
    }
    run_training(model, items, plan, selection.dialogues.empty() ? nullptr : &selection, result);
    return model;
}

LabelBundle generate_pseudo(TrackerModel& model, const Corpus& noisy, const Corpus* truth_corpus,
                            PrevStateSource prev) {
    const Ontology& ont = model.ontology();
    if (ont.content_hash() != noisy.ontology.content_hash()) {
        throw SchemaError("generate_pseudo: corpus ontology does not match the model");
    }
    std::unordered_map<std::string, const Dialogue*> truth_index;
    if (truth_corpus != nullptr) {
        for (const auto& d : truth_corpus->dialogues) truth_index[d.id] = &d;
    }

    LabelBundle bundle;
    bundle.entries.reserve(noisy.dialogues.size());
    for (const auto& dlg : noisy.dialogues) {
        LabelBundle::Entry entry;
        entry.dialogue_id = dlg.id;
        State running = all_none_state(ont);
        for (int t = 0; t < static_cast<int>(dlg.turns.size()); ++t) {
            Sample sample = tracker::make_sample(dlg, t, ont);
            if (prev == PrevStateSource::Predicted) sample.previous_state = running;
            std::vector<int> ids =
                model.vocab().ids(build_input_sequence(sample, ont, model.config().max_len));
            State predicted = model.predict_state(ids);
            running = predicted;
            entry.pseudo.push_back(std::move(predicted));
            entry.vanilla.push_back(dlg.turns[static_cast<std::size_t>(t)].state);
        }
        if (truth_corpus != nullptr) {
            auto it = truth_index.find(dlg.id);
            if (it == truth_index.end() || it->second->turns.size() != dlg.turns.size()) {
                throw SchemaError("generate_pseudo: truth corpus does not cover dialogue " + dlg.id);
            }
            for (const auto& turn : it->second->turns) entry.truth.push_back(turn.state);
        }
        bundle.entries.push_back(std::move(entry));
    }
    return bundle;
}

TrackerModel train_primary(const Corpus& noisy, const LabelBundle& bundle, const Corpus& clean,
                           const TrainPlan& plan, const TrackerConfig& cfg, TrainResult* result) {
    plan.validate();
    validate_corpus(noisy);
    bundle.validate_against(noisy);
    const Composition& comp = plan.composition;
    if (comp.clean && clean.dialogues.empty()) {
        throw ConfigError("train_primary: composition includes C but the clean corpus is empty");
    }
    if (!clean.dialogues.empty()) validate_corpus(clean);

    Vocabulary vocab = Vocabulary::from_ontology(noisy.ontology, generator_template_words());
    TrackerModel model(cfg, std::move(vocab), noisy.ontology,
                       Rng::derive(plan.seed, "primary-init").next_u64());

    auto [clean_train, clean_holdout] = clean_holdout_split(clean, plan.clean_holdout_fraction);

    // Soft targets are materialized once; items keep pointers into this pool.
    std::vector<SoftLabelSet> soft_pool;
    if (comp.mixes_soft_labels()) {
        soft_pool.reserve(static_cast<std::size_t>(noisy.total_turns()));
    }

    std::vector<TrainItem> items;
    if (comp.noisy || comp.pseudo) {
        for (std::size_t di = 0; di < noisy.dialogues.size(); ++di) {
            const Dialogue& dlg = noisy.dialogues[di];
            const LabelBundle::Entry& entry = bundle.entries[di];
            for (int t = 0; t < static_cast<int>(dlg.turns.size()); ++t) {
                TrainItem item;
                item.input_ids = build_ids(model, dlg, t);
                item.pseudo = &entry.pseudo[static_cast<std::size_t>(t)];
                item.vanilla = &entry.vanilla[static_cast<std::size_t>(t)];
                if (comp.mixes_soft_labels()) {
                    soft_pool.push_back(combine_labels(entry.pseudo[static_cast<std::size_t>(t)],
                                                       entry.vanilla[static_cast<std::size_t>(t)],
                                                       plan.alpha, noisy.ontology));
                    item.soft = &soft_pool.back();
                } else if (comp.pseudo) {
                    item.hard = entry.pseudo[static_cast<std::size_t>(t)];
                } else {
                    item.hard = entry.vanilla[static_cast<std::size_t>(t)];
                }
                items.push_back(std::move(item));
            }
        }
    }
    if (comp.clean) {
        for (const auto& dlg : clean_train.dialogues) {
            for (int t = 0; t < static_cast<int>(dlg.turns.size()); ++t) {
                TrainItem item;
                item.input_ids = build_ids(model, dlg, t);
                item.hard = dlg.turns[static_cast<std::size_t>(t)].state;
                items.push_back(std::move(item));
            }
        }
    }

    run_training(model, items, plan, clean_holdout.dialogues.empty() ? nullptr : &clean_holdout,
                 result);
    return model;
}

std::vector<int> tiny_aux_pseudo_labels(const Corpus& subset, const Corpus& noisy,
                                        const TrackerTrainScale& scale, std::uint64_t seed) {
    TrackerConfig cfg;
    cfg.d_model = scale.d_model;
    cfg.n_layers = scale.n_layers;
    cfg.n_heads_encoder = std::min(4, scale.d_model);
    cfg.n_heads_slot_attention = std::min(4, scale.d_model);
    cfg.max_len = 64;
    cfg.dropout = 0.0;
    cfg.word_dropout = 0.0;

    TrainPlan plan;
    plan.composition = Composition::parse("T");
    plan.epochs = scale.epochs;
    plan.batch_size = scale.batch_size;
    plan.peak_lr = scale.peak_lr;
    plan.seed = seed;

    Corpus empty_selection;
    empty_selection.ontology = subset.ontology;
    TrackerModel model = train_auxiliary(subset, empty_selection, cfg, plan, nullptr);
    LabelBundle bundle = generate_pseudo(model, noisy);

    std::vector<int> flat;
    for (const auto& entry : bundle.entries) {
        for (const auto& st : entry.pseudo) {
            for (std::int32_t v : st) flat.push_back(static_cast<int>(v));
        }
    }
    return flat;
}

}  // namespace dstlab::pipeline
