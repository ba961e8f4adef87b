#include "dstlab/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dstlab/errors.hpp"
#include "dstlab/hash.hpp"

namespace dstlab::tracker {

using numeric::AttentionWeights;
using numeric::ParameterStore;
using numeric::Tape;
using numeric::Tensor;

namespace {
constexpr double kDistEps = 1e-24;  // must match the tape's neg_l2_scores
}

void TrackerConfig::validate() const {
    if (d_model < 1 || n_layers < 1) throw ConfigError("tracker: d_model and n_layers must be >= 1");
    if (n_heads_encoder < 1 || d_model % n_heads_encoder != 0) {
        throw ConfigError("tracker: d_model must be divisible by encoder head count");
    }
    if (n_heads_slot_attention < 1 || d_model % n_heads_slot_attention != 0) {
        throw ConfigError("tracker: d_model must be divisible by slot-attention head count");
    }
    if (max_len < 8) throw ConfigError("tracker: max_len must be >= 8");
    if (dropout < 0.0 || dropout >= 1.0 || word_dropout < 0.0 || word_dropout >= 1.0) {
        throw ConfigError("tracker: dropout rates must lie in [0,1)");
    }
    if (ffn_multiplier < 1) throw ConfigError("tracker: ffn_multiplier must be >= 1");
    if (layer_norm_eps <= 0.0) throw ConfigError("tracker: layer_norm_eps must be positive");
    if (init_stddev <= 0.0 || emb_init_stddev <= 0.0 || frozen_init_stddev <= 0.0) {
        throw ConfigError("tracker: init scales must be positive");
    }
}

namespace {

void add_encoder_params(ParameterStore& store, const TrackerConfig& cfg, int vocab_size, Rng& rng,
                        bool trainable, double sd, double sd_emb) {
    int d = cfg.d_model;
    int f = cfg.ffn_multiplier * d;
    store.add_gaussian("emb.token", {vocab_size, d}, sd_emb, rng, trainable);
    store.add_gaussian("emb.pos", {cfg.max_len, d}, cfg.pos_init_stddev, rng, trainable);
    store.add_ones("emb.norm.gain", {d}, trainable);
    store.add_zeros("emb.norm.bias", {d}, trainable);
    for (int l = 0; l < cfg.n_layers; ++l) {
        std::string p = "enc" + std::to_string(l) + ".";
        store.add_gaussian(p + "attn.wq", {d, d}, sd, rng, trainable);
        store.add_zeros(p + "attn.bq", {d}, trainable);
        store.add_gaussian(p + "attn.wk", {d, d}, sd, rng, trainable);
        store.add_zeros(p + "attn.bk", {d}, trainable);
        store.add_gaussian(p + "attn.wv", {d, d}, sd, rng, trainable);
        store.add_zeros(p + "attn.bv", {d}, trainable);
        store.add_gaussian(p + "attn.wo", {d, d}, sd, rng, trainable);
        store.add_zeros(p + "attn.bo", {d}, trainable);
        store.add_ones(p + "norm1.gain", {d}, trainable);
        store.add_zeros(p + "norm1.bias", {d}, trainable);
        store.add_gaussian(p + "ffn.w1", {d, f}, sd, rng, trainable);
        store.add_zeros(p + "ffn.b1", {f}, trainable);
        store.add_gaussian(p + "ffn.w2", {f, d}, sd, rng, trainable);
        store.add_zeros(p + "ffn.b2", {d}, trainable);
        store.add_ones(p + "norm2.gain", {d}, trainable);
        store.add_zeros(p + "norm2.bias", {d}, trainable);
    }
}

AttentionWeights attention_ids(Tape& tape, ParameterStore& store, const std::string& prefix) {
    AttentionWeights w;
    w.wq = tape.parameter(store.at(prefix + "wq"));
    w.bq = tape.parameter(store.at(prefix + "bq"));
    w.wk = tape.parameter(store.at(prefix + "wk"));
    w.bk = tape.parameter(store.at(prefix + "bk"));
    w.wv = tape.parameter(store.at(prefix + "wv"));
    w.bv = tape.parameter(store.at(prefix + "bv"));
    w.wo = tape.parameter(store.at(prefix + "wo"));
    w.bo = tape.parameter(store.at(prefix + "bo"));
    return w;
}

}  // namespace

TrackerModel::TrackerModel(TrackerConfig cfg, Vocabulary vocab, Ontology ont, std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)), ontology_(std::move(ont)) {
    cfg_.validate();
    ontology_hash_ = ontology_.content_hash();
    init_params(seed);
    build_label_caches();
}

TrackerModel::TrackerModel(TrackerConfig cfg, Vocabulary vocab, Ontology ont,
                           ParameterStore trainable, ParameterStore frozen)
    : cfg_(cfg),
      vocab_(std::move(vocab)),
      ontology_(std::move(ont)),
      trainable_(std::move(trainable)),
      frozen_(std::move(frozen)) {
    cfg_.validate();
    ontology_hash_ = ontology_.content_hash();
    build_label_caches();
}

void TrackerModel::init_params(std::uint64_t seed) {
    int d = cfg_.d_model;
    Rng ctx_rng = Rng::derive(seed, "context-encoder");
    add_encoder_params(trainable_, cfg_, vocab_.size(), ctx_rng, true, cfg_.init_stddev,
                       cfg_.emb_init_stddev);
    Rng slot_rng = Rng::derive(seed, "slot-attention");
    double sd = 0.05;  // slot attention and projection start small; the wide
                       // init is for the tied encoders
    trainable_.add_gaussian("slot_attn.wq", {d, d}, sd, slot_rng);
    trainable_.add_zeros("slot_attn.bq", {d});
    trainable_.add_gaussian("slot_attn.wk", {d, d}, sd, slot_rng);
    trainable_.add_zeros("slot_attn.bk", {d});
    trainable_.add_gaussian("slot_attn.wv", {d, d}, sd, slot_rng);
    trainable_.add_zeros("slot_attn.bv", {d});
    trainable_.add_gaussian("slot_attn.wo", {d, d}, sd, slot_rng);
    trainable_.add_zeros("slot_attn.bo", {d});
    trainable_.add_gaussian("proj.w", {d, d}, sd, slot_rng);
    trainable_.add_zeros("proj.b", {d});
    trainable_.add_ones("proj.norm.gain", {d});
    trainable_.add_zeros("proj.norm.bias", {d});

    // the label encoder: same architecture with its own frozen random draw,
    // except the embedding tables, which copy the context encoder's initial
    // embeddings. Sharing the tables makes every frozen [CLS] vector an
    // (approximately) fixed shared map of the shared token embedding, so the
    // projection can learn one map for all values instead of one per value.
    Rng frozen_rng = Rng::derive(seed, "label-encoder");
    add_encoder_params(frozen_, cfg_, vocab_.size(), frozen_rng, false, cfg_.frozen_init_stddev,
                       cfg_.frozen_init_stddev);
    frozen_.at("emb.token").value = trainable_.at("emb.token").value;
    frozen_.at("emb.pos").value = trainable_.at("emb.pos").value;
}

Tape::Id TrackerModel::encode_with(ParameterStore& params, Tape& tape,
                                   const std::vector<int>& token_ids, bool training, Rng* rng) {
    if (static_cast<int>(token_ids.size()) > cfg_.max_len) {
        throw SchemaError("encode_context: input length " + std::to_string(token_ids.size()) +
                          " exceeds max_len " + std::to_string(cfg_.max_len) +
                          " (truncate before encoding)");
    }
    if (token_ids.empty()) throw SchemaError("encode_context: empty input");
    for (int id : token_ids) {
        if (id < 0 || id >= vocab_.size()) throw SchemaError("encode_context: token id out of range");
    }
    std::vector<int> ids = token_ids;
    if (training && rng != nullptr && cfg_.word_dropout > 0.0) {
        for (int& id : ids) {
            if (id == Vocabulary::kClsId || id == Vocabulary::kSepId) continue;
            if (rng->uniform() < cfg_.word_dropout) id = Vocabulary::kUnkId;
        }
    }
    int n = static_cast<int>(ids.size());
    std::vector<int> positions(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;

    bool drop = training && rng != nullptr && cfg_.dropout > 0.0;
    Tape::Id x = tape.add(tape.embed(params.at("emb.token"), ids), tape.embed(params.at("emb.pos"), positions));
    x = tape.layer_norm_rows(x, tape.parameter(params.at("emb.norm.gain")),
                             tape.parameter(params.at("emb.norm.bias")), cfg_.layer_norm_eps);
    if (drop) x = tape.dropout(x, cfg_.dropout, *rng);

    for (int l = 0; l < cfg_.n_layers; ++l) {
        std::string p = "enc" + std::to_string(l) + ".";
        AttentionWeights aw = attention_ids(tape, params, p + "attn.");
        Tape::Id attn = numeric::multi_head_attention(tape, x, x, x, aw, cfg_.n_heads_encoder);
        if (drop) attn = tape.dropout(attn, cfg_.dropout, *rng);
        x = tape.layer_norm_rows(tape.add(x, attn), tape.parameter(params.at(p + "norm1.gain")),
                                 tape.parameter(params.at(p + "norm1.bias")), cfg_.layer_norm_eps);
        Tape::Id ff = tape.linear(x, tape.parameter(params.at(p + "ffn.w1")),
                                  tape.parameter(params.at(p + "ffn.b1")));
        ff = tape.gelu(ff);
        ff = tape.linear(ff, tape.parameter(params.at(p + "ffn.w2")),
                         tape.parameter(params.at(p + "ffn.b2")));
        if (drop) ff = tape.dropout(ff, cfg_.dropout, *rng);
        x = tape.layer_norm_rows(tape.add(x, ff), tape.parameter(params.at(p + "norm2.gain")),
                                 tape.parameter(params.at(p + "norm2.bias")), cfg_.layer_norm_eps);
    }
    return x;
}

Tape::Id TrackerModel::encode_context(Tape& tape, const std::vector<int>& token_ids, bool training,
                                      Rng* rng) {
    return encode_with(trainable_, tape, token_ids, training, rng);
}

Tensor TrackerModel::encode_label(const std::string& text) const {
    auto* self = const_cast<TrackerModel*>(this);
    Tape tape;
    Tokens toks = tokenize(text);
    std::vector<int> ids;
    ids.reserve(toks.size() + 2);
    ids.push_back(Vocabulary::kClsId);
    for (const auto& t : toks) ids.push_back(vocab_.id(t));
    ids.push_back(Vocabulary::kSepId);
    if (static_cast<int>(ids.size()) > cfg_.max_len) ids.resize(static_cast<std::size_t>(cfg_.max_len));
    Tape::Id h = self->encode_with(self->frozen_, tape, ids, false, nullptr);
    const Tensor& m = tape.value(h);
    Tensor out = Tensor::zeros({cfg_.d_model});
    for (int j = 0; j < cfg_.d_model; ++j) out.data[static_cast<std::size_t>(j)] = m.at(0, j);
    return out;
}

void TrackerModel::build_label_caches() {
    int d = cfg_.d_model;
    slot_vecs_ = Tensor::zeros({ontology_.n_slots(), d});
    for (int s = 0; s < ontology_.n_slots(); ++s) {
        Tensor v = encode_label(ontology_.slot_name(s));
        for (int j = 0; j < d; ++j) slot_vecs_.at(s, j) = v.data[static_cast<std::size_t>(j)];
    }
    value_vecs_.clear();
    value_vecs_.reserve(static_cast<std::size_t>(ontology_.n_slots()));
    for (int s = 0; s < ontology_.n_slots(); ++s) {
        int k = ontology_.n_candidates(s);
        Tensor m = Tensor::zeros({k, d});
        for (int v = 0; v < k; ++v) {
            Tensor h = encode_label(ontology_.value_name(s, v));
            for (int j = 0; j < d; ++j) m.at(v, j) = h.data[static_cast<std::size_t>(j)];
        }
        value_vecs_.push_back(std::move(m));
    }
}

Tape::Id TrackerModel::slot_specific_vector(Tape& tape, const Tensor& h_slot, Tape::Id h_context) {
    Tensor q = h_slot;
    if (q.rank() == 1) q.shape = {1, q.shape[0]};
    if (q.cols() != cfg_.d_model || q.rows() != 1) {
        throw ShapeError("slot_specific_vector: query must be a single d_model row");
    }
    Tape::Id query = tape.constant(std::move(q));
    AttentionWeights aw = attention_ids(tape, trainable_, "slot_attn.");
    Tape::Id a = numeric::multi_head_attention(tape, query, h_context, h_context, aw,
                                               cfg_.n_heads_slot_attention);
    Tape::Id proj = tape.linear(a, tape.parameter(trainable_.at("proj.w")),
                                tape.parameter(trainable_.at("proj.b")));
    return tape.layer_norm_rows(proj, tape.parameter(trainable_.at("proj.norm.gain")),
                                tape.parameter(trainable_.at("proj.norm.bias")), cfg_.layer_norm_eps);
}

Tape::Id TrackerModel::all_slot_vectors(Tape& tape, Tape::Id h_context) {
    Tape::Id queries = tape.constant(slot_vecs_);
    AttentionWeights aw = attention_ids(tape, trainable_, "slot_attn.");
    Tape::Id a = numeric::multi_head_attention(tape, queries, h_context, h_context, aw,
                                               cfg_.n_heads_slot_attention);
    Tape::Id proj = tape.linear(a, tape.parameter(trainable_.at("proj.w")),
                                tape.parameter(trainable_.at("proj.b")));
    return tape.layer_norm_rows(proj, tape.parameter(trainable_.at("proj.norm.gain")),
                                tape.parameter(trainable_.at("proj.norm.bias")), cfg_.layer_norm_eps);
}

std::vector<double> TrackerModel::value_distribution(const std::vector<double>& g,
                                                     const Tensor& candidates) {
    int k = candidates.rows(), d = candidates.cols();
    if (k < 1) throw SchemaError("value_distribution: empty candidate list");
    if (static_cast<int>(g.size()) != d) throw ShapeError("value_distribution: dimension mismatch");
    std::vector<double> scores(static_cast<std::size_t>(k));
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
        double acc = kDistEps;
        const double* row = candidates.data.data() + static_cast<std::size_t>(c) * d;
        for (int j = 0; j < d; ++j) {
            double diff = g[static_cast<std::size_t>(j)] - row[j];
            acc += diff * diff;
        }
        scores[static_cast<std::size_t>(c)] = -std::sqrt(acc);
        mx = std::max(mx, scores[static_cast<std::size_t>(c)]);
    }
    double sum = 0.0;
    for (double& s : scores) {
        s = std::exp(s - mx);
        sum += s;
    }
    for (double& s : scores) s /= sum;
    return scores;
}

int TrackerModel::predict(const std::vector<double>& g, const Tensor& candidates) {
    std::vector<double> p = value_distribution(g, candidates);
    int best = 0;
    for (int c = 1; c < static_cast<int>(p.size()); ++c) {
        if (p[static_cast<std::size_t>(c)] > p[static_cast<std::size_t>(best)]) best = c;
    }
    return best;
}

std::vector<Tape::Id> TrackerModel::slot_log_probs(Tape& tape, Tape::Id g_matrix) {
    std::vector<Tape::Id> out;
    out.reserve(static_cast<std::size_t>(ontology_.n_slots()));
    for (int s = 0; s < ontology_.n_slots(); ++s) {
        Tape::Id row = tape.slice_rows(g_matrix, s, s + 1);
        Tape::Id scores = tape.neg_l2_scores(row, value_vecs_[static_cast<std::size_t>(s)]);
        out.push_back(tape.log_softmax_row(scores));
    }
    return out;
}

Tape::Id TrackerModel::loss_hard(Tape& tape, const std::vector<Tape::Id>& log_probs,
                                 const State& targets) {
    if (static_cast<int>(targets.size()) != ontology_.n_slots()) {
        throw SchemaError("loss_hard: targets must cover all slots");
    }
    std::vector<Tape::Id> terms;
    terms.reserve(log_probs.size());
    for (int s = 0; s < ontology_.n_slots(); ++s) {
        int v = targets[static_cast<std::size_t>(s)];
        if (v < 0 || v >= ontology_.n_candidates(s)) {
            throw SchemaError("loss_hard: target index out of bounds for slot " + ontology_.slot_name(s));
        }
        terms.push_back(tape.weighted_nll(log_probs[static_cast<std::size_t>(s)], {{v, 1.0}}));
    }
    return tape.sum(terms);
}

Tape::Id TrackerModel::loss_soft(Tape& tape, const std::vector<Tape::Id>& log_probs,
                                 const SoftLabelSet& targets) {
    targets.validate(ontology_);
    std::vector<Tape::Id> terms;
    terms.reserve(log_probs.size());
    for (int s = 0; s < ontology_.n_slots(); ++s) {
        std::vector<std::pair<int, double>> weights;
        const auto& vec = targets.per_slot[static_cast<std::size_t>(s)];
        for (int v = 0; v < static_cast<int>(vec.size()); ++v) {
            if (vec[static_cast<std::size_t>(v)] != 0.0) {
                weights.emplace_back(v, vec[static_cast<std::size_t>(v)]);
            }
        }
        terms.push_back(tape.weighted_nll(log_probs[static_cast<std::size_t>(s)], weights));
    }
    return tape.sum(terms);
}

double TrackerModel::sample_loss_hard(const Sample& sample, bool training, Rng* rng,
                                      bool record_grads) {
    Tape tape;
    std::vector<int> ids = vocab_.ids(build_input_sequence(sample, ontology_, cfg_.max_len));
    Tape::Id h = encode_context(tape, ids, training, rng);
    Tape::Id g = all_slot_vectors(tape, h);
    Tape::Id loss = loss_hard(tape, slot_log_probs(tape, g), sample.labels);
    double out = tape.scalar_value(loss);
    if (record_grads) tape.backward(loss);
    return out;
}

State TrackerModel::predict_state(const std::vector<int>& token_ids) {
    scratch_.clear();
    Tape::Id h = encode_context(scratch_, token_ids, false, nullptr);
    Tape::Id g = all_slot_vectors(scratch_, h);
    const Tensor& gm = scratch_.value(g);
    int d = cfg_.d_model;
    State out(static_cast<std::size_t>(ontology_.n_slots()), kNoneIndex);
    std::vector<double> row(static_cast<std::size_t>(d));
    for (int s = 0; s < ontology_.n_slots(); ++s) {
        for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = gm.at(s, j);
        out[static_cast<std::size_t>(s)] =
            static_cast<std::int32_t>(predict(row, value_vecs_[static_cast<std::size_t>(s)]));
    }
    return out;
}

void TrackerModel::save(const std::string& path) const {
    nlohmann::ordered_json doc;
    doc["format"] = "dstlab-tracker-v1";
    nlohmann::ordered_json cj;
    cj["d_model"] = cfg_.d_model;
    cj["n_layers"] = cfg_.n_layers;
    cj["n_heads_encoder"] = cfg_.n_heads_encoder;
    cj["n_heads_slot_attention"] = cfg_.n_heads_slot_attention;
    cj["max_len"] = cfg_.max_len;
    cj["dropout"] = cfg_.dropout;
    cj["word_dropout"] = cfg_.word_dropout;
    cj["ffn_multiplier"] = cfg_.ffn_multiplier;
    cj["layer_norm_eps"] = cfg_.layer_norm_eps;
    cj["init_stddev"] = cfg_.init_stddev;
    cj["emb_init_stddev"] = cfg_.emb_init_stddev;
    cj["frozen_init_stddev"] = cfg_.frozen_init_stddev;
    doc["config"] = std::move(cj);
    doc["ontology_hash"] = hash_hex(ontology_hash_);
    doc["vocab"] = nlohmann::ordered_json::parse(vocab_.to_json());
    doc["trainable"] = nlohmann::ordered_json::parse(trainable_.to_json());
    doc["frozen"] = nlohmann::ordered_json::parse(frozen_.to_json());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write tracker checkpoint: " + path);
    out << doc.dump();
}

TrackerModel TrackerModel::load(const std::string& path, const Ontology& ont) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read tracker checkpoint: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    nlohmann::ordered_json doc = nlohmann::ordered_json::parse(ss.str());
    if (doc.value("format", "") != std::string("dstlab-tracker-v1")) {
        throw SchemaError("tracker checkpoint: unknown format");
    }
    if (doc.at("ontology_hash").get<std::string>() != hash_hex(ont.content_hash())) {
        throw SchemaError("tracker checkpoint: ontology hash mismatch, refusing to load");
    }
    const auto& cj = doc.at("config");
    TrackerConfig cfg;
    cfg.d_model = cj.at("d_model").get<int>();
    cfg.n_layers = cj.at("n_layers").get<int>();
    cfg.n_heads_encoder = cj.at("n_heads_encoder").get<int>();
    cfg.n_heads_slot_attention = cj.at("n_heads_slot_attention").get<int>();
    cfg.max_len = cj.at("max_len").get<int>();
    cfg.dropout = cj.at("dropout").get<double>();
    cfg.word_dropout = cj.at("word_dropout").get<double>();
    cfg.ffn_multiplier = cj.at("ffn_multiplier").get<int>();
    cfg.layer_norm_eps = cj.at("layer_norm_eps").get<double>();
    cfg.init_stddev = cj.at("init_stddev").get<double>();
    cfg.emb_init_stddev = cj.at("emb_init_stddev").get<double>();
    cfg.frozen_init_stddev = cj.at("frozen_init_stddev").get<double>();
    Vocabulary vocab = Vocabulary::from_json(doc.at("vocab").dump());
    ParameterStore trainable = ParameterStore::from_json(doc.at("trainable").dump());
    ParameterStore frozen = ParameterStore::from_json(doc.at("frozen").dump());
    return TrackerModel(cfg, std::move(vocab), ont, std::move(trainable), std::move(frozen));
}

Sample make_sample(const Dialogue& dialogue, int turn, const Ontology& ont) {
    Sample s;
    s.dialogue_id = dialogue.id;
    s.turn_index = turn + 1;
    s.context.reserve(static_cast<std::size_t>(turn + 1));
    for (int i = 0; i <= turn; ++i) {
        s.context.emplace_back(dialogue.turns[static_cast<std::size_t>(i)].system_utterance,
                               dialogue.turns[static_cast<std::size_t>(i)].user_utterance);
    }
    s.previous_state = turn == 0 ? all_none_state(ont) : dialogue.turns[static_cast<std::size_t>(turn - 1)].state;
    s.labels = dialogue.turns[static_cast<std::size_t>(turn)].state;
    return s;
}

StateSequences predict_corpus(TrackerModel& model, const Corpus& corpus, const EvalOptions& opts) {
    const Ontology& ont = model.ontology();
    if (ont.content_hash() != corpus.ontology.content_hash()) {
        throw SchemaError("predict_corpus: corpus ontology does not match the model");
    }
    StateSequences out;
    out.dialogues.reserve(corpus.dialogues.size());
    for (const auto& dlg : corpus.dialogues) {
        StateSequences::Entry entry;
        entry.dialogue_id = dlg.id;
        entry.turns.reserve(dlg.turns.size());
        State prev = all_none_state(ont);
        for (int t = 0; t < static_cast<int>(dlg.turns.size()); ++t) {
            Sample sample = make_sample(dlg, t, ont);
            sample.previous_state = prev;
            std::vector<int> ids =
                model.vocab().ids(build_input_sequence(sample, ont, model.config().max_len));
            State predicted = model.predict_state(ids);
            entry.turns.push_back(predicted);
            prev = opts.teacher_forced ? dlg.turns[static_cast<std::size_t>(t)].state : predicted;
        }
        out.dialogues.push_back(std::move(entry));
    }
    return out;
}

MetricsReport evaluate_tracker(TrackerModel& model, const Corpus& corpus, const EvalOptions& opts) {
    StateSequences predictions = predict_corpus(model, corpus, opts);
    StateSequences gold = StateSequences::from_corpus(corpus);
    return evaluate(predictions, gold, corpus.ontology, opts.exclude_empty_turns);
}

}  // namespace dstlab::tracker
