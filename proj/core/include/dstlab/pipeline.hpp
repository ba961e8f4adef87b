#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dstlab/corpus.hpp"
#include "dstlab/dialogue.hpp"
#include "dstlab/tracker.hpp"

namespace dstlab::pipeline {

// Vanilla, pseudo and (for synthetic corpora) true labels per turn, aligned to
// ontology slot order and to the corpus dialogue order.
struct LabelBundle {
    struct Entry {
        std::string dialogue_id;
        std::vector<State> vanilla;
        std::vector<State> pseudo;
        std::vector<State> truth;  // empty when unknown
    };
    std::vector<Entry> entries;

    const Entry* find(std::string_view dialogue_id) const;
    void validate_against(const Corpus& corpus) const;  // coverage must match exactly

    std::string to_jsonl() const;
    static LabelBundle from_jsonl(const std::string& text);
};

// Table-3 style training-set composition: any non-empty subset of
// {T: noisy vanilla labels, C: clean dialogues, P: pseudo labels}.
struct Composition {
    bool noisy = false;   // T
    bool clean = false;   // C
    bool pseudo = false;  // P

    void validate() const;
    std::string name() const;  // "T+C+P" ordering
    static Composition parse(std::string_view text);

    bool mixes_soft_labels() const { return noisy && pseudo; }
};

struct TrainPlan {
    Composition composition;
    double alpha = 0.5;  // only used when composition mixes T and P
    int epochs = 12;
    int batch_size = 8;
    double peak_lr = 3e-4;
    double warmup_proportion = 0.1;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    double clean_holdout_fraction = 0.2;  // selection split of the clean corpus
    // Per-epoch selection evaluates at most this many dialogues (prefix of the
    // selection corpus); 0 means all. Keeps selection cost bounded when the
    // selection set is the full noisy training set.
    int selection_max_dialogues = 150;
    bool record_batch_losses = false;

    void validate() const;
};

struct BatchLossRecord {
    double training = 0.0;  // the loss actually minimized (mean over batch)
    double pseudo = 0.0;    // same forward, hard pseudo targets
    double vanilla = 0.0;   // same forward, hard vanilla targets
};

struct TrainResult {
    std::vector<double> epoch_mean_loss;
    std::vector<double> epoch_selection_jga;
    int best_epoch = -1;  // 0-based; -1 when no selection corpus
    double best_selection_jga = 0.0;
    std::int64_t steps = 0;
    std::vector<BatchLossRecord> batch_losses;  // filled when recording
};

// Trains the auxiliary tracker on the clean corpus (hard true labels) and
// keeps the epoch checkpoint with the best joint goal accuracy on the
// selection corpus (the noisy training set).
tracker::TrackerModel train_auxiliary(const Corpus& clean, const Corpus& selection,
                                      const tracker::TrackerConfig& cfg, const TrainPlan& plan,
                                      TrainResult* result = nullptr);

enum class PrevStateSource {
    Predicted,  // the model's own running prediction (matches test-time behavior)
    Labels,     // the corpus' labeled previous state
};

// Predicts every slot of every turn of the noisy corpus. vanilla labels come
// from the noisy corpus itself; truth is filled from truth_corpus when given.
LabelBundle generate_pseudo(tracker::TrackerModel& model, const Corpus& noisy,
                            const Corpus* truth_corpus = nullptr,
                            PrevStateSource prev = PrevStateSource::Predicted);

// v_combined = alpha * onehot(pseudo) + (1 - alpha) * onehot(vanilla), per slot.
SoftLabelSet combine_labels(const State& pseudo, const State& vanilla, double alpha,
                            const Ontology& ont);

// Trains the primary tracker per the plan's composition:
//   T      hard vanilla labels
//   P      hard pseudo labels
//   T+P    soft combined labels with the plan's alpha
//   +C     clean (non-holdout) dialogues appended with hard true labels
// Model selection by joint goal accuracy on the clean holdout split.
tracker::TrackerModel train_primary(const Corpus& noisy, const LabelBundle& bundle,
                                    const Corpus& clean, const TrainPlan& plan,
                                    const tracker::TrackerConfig& cfg, TrainResult* result = nullptr);

// Deterministic holdout split of the clean corpus: the trailing fraction of
// dialogues is reserved for model selection.
std::pair<Corpus, Corpus> clean_holdout_split(const Corpus& clean, double holdout_fraction);

// Minimal retraining path for Monte Carlo theorem verification: trains a tiny
// auxiliary on the subset (no model selection) and returns site-major pseudo
// label indices over the noisy corpus, ordered (dialogue, turn, slot).
struct TrackerTrainScale {
    int d_model = 16;
    int n_layers = 1;
    int epochs = 2;
    int batch_size = 8;
    double peak_lr = 1e-3;
};

std::vector<int> tiny_aux_pseudo_labels(const Corpus& subset, const Corpus& noisy,
                                        const TrackerTrainScale& scale, std::uint64_t seed);

}  // namespace dstlab::pipeline
