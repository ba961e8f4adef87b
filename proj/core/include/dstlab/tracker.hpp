#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dstlab/autodiff.hpp"
#include "dstlab/dialogue.hpp"
#include "dstlab/metrics.hpp"
#include "dstlab/parameters.hpp"
#include "dstlab/rng.hpp"

namespace dstlab::tracker {

struct TrackerConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads_encoder = 4;
    int n_heads_slot_attention = 4;
    int max_len = 128;
    double dropout = 0.1;
    double word_dropout = 0.1;
    int ffn_multiplier = 4;
    double layer_norm_eps = 1e-5;
    double init_stddev = 0.05;
    double emb_init_stddev = 0.35;
    // position embeddings start near zero: large ones become per-sample
    // memorization keys that do not transfer across context lengths
    double pos_init_stddev = 0.02;
    // The frozen label encoder draws its own weights at a wider scale: its
    // [CLS] vectors are fixed matching targets, and at small scales they
    // collapse toward a shared direction, leaving a slot's candidates nearly
    // indistinguishable.
    double frozen_init_stddev = 0.35;

    void validate() const;  // d_model divisible by head counts, max_len >= 8
};

// The slot-attention tracker: a trainable context encoder, a frozen label
// encoder whose [CLS] vectors embed slots and candidate values, per-slot
// attention over the encoded context, a linear+layer-norm projection, and
// L2 slot-value matching.
//
// Slot and candidate vectors are functions of the frozen parameters only, so
// they are precomputed once at construction and never receive gradients.
class TrackerModel {
public:
    TrackerModel(TrackerConfig cfg, Vocabulary vocab, Ontology ont, std::uint64_t seed);

    const TrackerConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    const Ontology& ontology() const { return ontology_; }
    std::uint64_t ontology_hash() const { return ontology_hash_; }

    numeric::ParameterStore& trainable() { return trainable_; }
    const numeric::ParameterStore& trainable() const { return trainable_; }
    const numeric::ParameterStore& frozen() const { return frozen_; }

    // H_t: one d-vector per input position. Token ids must already be within
    // max_len (build_input_sequence truncates). Word dropout and hidden-layer
    // dropout draw from rng in training mode.
    numeric::Tape::Id encode_context(numeric::Tape& tape, const std::vector<int>& token_ids,
                                     bool training = false, Rng* rng = nullptr);

    // Frozen [CLS] vector of "[CLS] text [SEP]". Pure function of the frozen
    // parameters and the text.
    numeric::Tensor encode_label(const std::string& text) const;

    // g_s = LayerNorm(Linear(MultiHead(h_s, H, H))) for one slot vector.
    numeric::Tape::Id slot_specific_vector(numeric::Tape& tape, const numeric::Tensor& h_slot,
                                           numeric::Tape::Id h_context);
    // All slots at once (rows in ontology slot order). Row s equals
    // slot_specific_vector on slot s's cached vector.
    numeric::Tape::Id all_slot_vectors(numeric::Tape& tape, numeric::Tape::Id h_context);

    const numeric::Tensor& slot_vectors() const { return slot_vecs_; }
    const numeric::Tensor& candidate_vectors(int slot) const { return value_vecs_[slot]; }

    // softmax over negative L2 distances to the candidate vectors
    static std::vector<double> value_distribution(const std::vector<double>& g,
                                                  const numeric::Tensor& candidates);
    // argmin distance; ties break toward the lowest candidate index
    static int predict(const std::vector<double>& g, const numeric::Tensor& candidates);

    // Per-slot log-probability nodes derived from the slot-vector matrix.
    std::vector<numeric::Tape::Id> slot_log_probs(numeric::Tape& tape, numeric::Tape::Id g_matrix);

    numeric::Tape::Id loss_hard(numeric::Tape& tape, const std::vector<numeric::Tape::Id>& log_probs,
                                const State& targets);
    numeric::Tape::Id loss_soft(numeric::Tape& tape, const std::vector<numeric::Tape::Id>& log_probs,
                                const SoftLabelSet& targets);

    // Whole-sample convenience wrappers (used by tests and grad checks).
    double sample_loss_hard(const Sample& sample, bool training = false, Rng* rng = nullptr,
                            bool record_grads = false);

    // Full-state prediction for one input sequence (eval mode).
    State predict_state(const std::vector<int>& token_ids);

    void save(const std::string& path) const;
    // Refuses to load when the checkpoint's ontology hash does not match ont.
    static TrackerModel load(const std::string& path, const Ontology& ont);

private:
    TrackerConfig cfg_;
    Vocabulary vocab_;
    Ontology ontology_;
    std::uint64_t ontology_hash_ = 0;
    numeric::ParameterStore trainable_;
    numeric::ParameterStore frozen_;
    numeric::Tensor slot_vecs_;                // |S| x d
    std::vector<numeric::Tensor> value_vecs_;  // per slot: K_s x d
    numeric::Tape scratch_;                    // reused for eval-mode forwards

    void init_params(std::uint64_t seed);
    void build_label_caches();
    numeric::Tape::Id encode_with(numeric::ParameterStore& params, numeric::Tape& tape,
                                  const std::vector<int>& token_ids, bool training, Rng* rng);
    TrackerModel(TrackerConfig cfg, Vocabulary vocab, Ontology ont, numeric::ParameterStore trainable,
                 numeric::ParameterStore frozen);
};

struct EvalOptions {
    bool teacher_forced = false;  // feed gold previous state instead of predicted
    bool exclude_empty_turns = false;
};

// Per-turn full-state predictions over a corpus. The previous-state input is
// the model's own prediction from the preceding turn unless teacher_forced.
StateSequences predict_corpus(TrackerModel& model, const Corpus& corpus,
                              const EvalOptions& opts = {});

MetricsReport evaluate_tracker(TrackerModel& model, const Corpus& corpus,
                               const EvalOptions& opts = {});

// Builds the training sample for turn t (0-based) of a dialogue, with the
// previous-state input taken from the same dialogue's labels.
Sample make_sample(const Dialogue& dialogue, int turn, const Ontology& ont);

}  // namespace dstlab::tracker
