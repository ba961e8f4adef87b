#include "dstlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dstlab/errors.hpp"
#include "dstlab/hash.hpp"
#include "dstlab/metrics.hpp"

namespace dstlab::experiment {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------------

namespace {

void check_keys(const json& obj, const std::vector<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError("config: " + where + " must be an object");
    for (auto& [key, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("config: unknown key \"" + key + "\" in " + where);
        }
    }
}

std::uint64_t require_seed(const json& obj, const std::string& where) {
    if (!obj.contains("seed")) {
        throw ConfigError("config: " + where + ".seed is required (seeds must be explicit)");
    }
    return obj.at("seed").get<std::uint64_t>();
}

NoiseSpec parse_noise(const json& obj, const std::string& where) {
    check_keys(obj, {"preset", "p_missing", "p_spurious", "p_wrong", "seed"}, where);
    std::uint64_t seed = require_seed(obj, where);
    NoiseSpec spec;
    if (obj.contains("preset")) {
        if (obj.contains("p_missing") || obj.contains("p_spurious") || obj.contains("p_wrong")) {
            throw ConfigError("config: " + where + ": give a preset or explicit probabilities, not both");
        }
        spec = noise_preset(obj.at("preset").get<std::string>(), seed);
    } else {
        spec.p_missing = obj.value("p_missing", 0.0);
        spec.p_spurious = obj.value("p_spurious", 0.0);
        spec.p_wrong = obj.value("p_wrong", 0.0);
        spec.seed = seed;
    }
    spec.validate();
    return spec;
}

pipeline::TrainPlan parse_plan(const json& obj, const std::string& where, bool primary) {
    std::vector<std::string> allowed = {"epochs", "batch_size", "peak_lr", "warmup_proportion",
                                        "weight_decay", "seed", "selection_max_dialogues"};
    if (primary) {
        allowed.push_back("composition");
        allowed.push_back("alpha");
        allowed.push_back("clean_holdout_fraction");
    }
    check_keys(obj, allowed, where);
    pipeline::TrainPlan plan;
    plan.seed = require_seed(obj, where);
    plan.epochs = obj.value("epochs", plan.epochs);
    plan.batch_size = obj.value("batch_size", plan.batch_size);
    plan.peak_lr = obj.value("peak_lr", plan.peak_lr);
    plan.warmup_proportion = obj.value("warmup_proportion", plan.warmup_proportion);
    plan.weight_decay = obj.value("weight_decay", plan.weight_decay);
    plan.selection_max_dialogues = obj.value("selection_max_dialogues", plan.selection_max_dialogues);
    if (primary) {
        plan.composition = pipeline::Composition::parse(obj.value("composition", std::string("T+P")));
        plan.alpha = obj.value("alpha", plan.alpha);
        plan.clean_holdout_fraction = obj.value("clean_holdout_fraction", plan.clean_holdout_fraction);
    } else {
        plan.composition = pipeline::Composition::parse("T");
    }
    plan.validate();
    return plan;
}

}  // namespace

NoiseSpec noise_preset(std::string_view name, std::uint64_t seed) {
    NoiseSpec spec;
    spec.seed = seed;
    if (name == "high-noise") {
        spec.p_missing = 0.30;
        spec.p_spurious = 0.10;
        spec.p_wrong = 0.20;
    } else if (name == "low-noise") {
        spec.p_missing = 0.08;
        spec.p_spurious = 0.03;
        spec.p_wrong = 0.05;
    } else if (name == "default") {
        spec.p_missing = 0.15;
        spec.p_spurious = 0.05;
        spec.p_wrong = 0.10;
    } else {
        throw ConfigError("config: unknown noise preset \"" + std::string(name) + "\"");
    }
    return spec;
}

ExperimentConfig parse_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    check_keys(doc,
               {"output_dir", "workers", "ontology", "corpus", "noise", "tracker", "aux_train",
                "primary_train", "pseudo", "sweeps", "theorem"},
               "top level");

    ExperimentConfig cfg;
    if (!doc.contains("output_dir")) throw ConfigError("config: output_dir is required");
    cfg.output_dir = doc.at("output_dir").get<std::string>();
    cfg.workers = doc.value("workers", 1);
    if (cfg.workers < 1) throw ConfigError("config: workers must be >= 1");

    if (doc.contains("ontology")) {
        const json& o = doc.at("ontology");
        check_keys(o, {"preset", "path"}, "ontology");
        if (o.contains("path")) {
            cfg.ontology_path = o.at("path").get<std::string>();
            cfg.ontology_preset.clear();
            if (!fs::exists(cfg.ontology_path)) {
                throw ConfigError("config: ontology.path does not exist: " + cfg.ontology_path);
            }
        } else if (o.contains("preset")) {
            cfg.ontology_preset = o.at("preset").get<std::string>();
            if (cfg.ontology_preset != "desk30") {
                throw ConfigError("config: unknown ontology preset \"" + cfg.ontology_preset + "\"");
            }
        }
    }

    if (!doc.contains("corpus")) throw ConfigError("config: corpus block is required");
    {
        const json& c = doc.at("corpus");
        check_keys(c, {"train_dialogues", "clean_dialogues", "test_dialogues", "max_turns", "seed"},
                   "corpus");
        cfg.corpus.seed = require_seed(c, "corpus");
        cfg.corpus.train_dialogues = c.value("train_dialogues", cfg.corpus.train_dialogues);
        cfg.corpus.clean_dialogues = c.value("clean_dialogues", cfg.corpus.clean_dialogues);
        cfg.corpus.test_dialogues = c.value("test_dialogues", cfg.corpus.test_dialogues);
        cfg.corpus.max_turns = c.value("max_turns", cfg.corpus.max_turns);
        if (cfg.corpus.train_dialogues < 1 || cfg.corpus.clean_dialogues < 0 ||
            cfg.corpus.test_dialogues < 1 || cfg.corpus.max_turns < 1) {
            throw ConfigError("config: corpus sizes out of range");
        }
    }

    if (!doc.contains("noise")) throw ConfigError("config: noise block is required");
    cfg.noise = parse_noise(doc.at("noise"), "noise");

    if (doc.contains("tracker")) {
        const json& t = doc.at("tracker");
        check_keys(t,
                   {"d_model", "n_layers", "n_heads_encoder", "n_heads_slot_attention", "max_len",
                    "dropout", "word_dropout", "ffn_multiplier", "layer_norm_eps", "init_stddev"},
                   "tracker");
        auto& k = cfg.tracker_cfg;
        k.d_model = t.value("d_model", k.d_model);
        k.n_layers = t.value("n_layers", k.n_layers);
        k.n_heads_encoder = t.value("n_heads_encoder", k.n_heads_encoder);
        k.n_heads_slot_attention = t.value("n_heads_slot_attention", k.n_heads_slot_attention);
        k.max_len = t.value("max_len", k.max_len);
        k.dropout = t.value("dropout", k.dropout);
        k.word_dropout = t.value("word_dropout", k.word_dropout);
        k.ffn_multiplier = t.value("ffn_multiplier", k.ffn_multiplier);
        k.layer_norm_eps = t.value("layer_norm_eps", k.layer_norm_eps);
        k.init_stddev = t.value("init_stddev", k.init_stddev);
        k.validate();
    }

    if (!doc.contains("aux_train")) throw ConfigError("config: aux_train block is required");
    cfg.aux_plan = parse_plan(doc.at("aux_train"), "aux_train", false);
    if (!doc.contains("primary_train")) throw ConfigError("config: primary_train block is required");
    cfg.primary_plan = parse_plan(doc.at("primary_train"), "primary_train", true);

    if (doc.contains("pseudo")) {
        const json& p = doc.at("pseudo");
        check_keys(p, {"prev_state"}, "pseudo");
        std::string mode = p.value("prev_state", std::string("predicted"));
        if (mode == "predicted") cfg.pseudo_prev = pipeline::PrevStateSource::Predicted;
        else if (mode == "labels") cfg.pseudo_prev = pipeline::PrevStateSource::Labels;
        else throw ConfigError("config: pseudo.prev_state must be \"predicted\" or \"labels\"");
    }

    cfg.sweeps.alpha_grid = theory::uniform_alpha_grid(11);
    cfg.sweeps.clean_fractions = {0.25, 0.5, 0.75, 1.0};
    cfg.sweeps.compositions = {"T", "T+C", "T+P", "T+C+P"};
    if (doc.contains("sweeps")) {
        const json& s = doc.at("sweeps");
        check_keys(s, {"alpha_grid", "clean_fractions", "compositions", "domains"}, "sweeps");
        if (s.contains("alpha_grid")) cfg.sweeps.alpha_grid = s.at("alpha_grid").get<std::vector<double>>();
        if (s.contains("clean_fractions")) {
            cfg.sweeps.clean_fractions = s.at("clean_fractions").get<std::vector<double>>();
        }
        if (s.contains("compositions")) {
            cfg.sweeps.compositions = s.at("compositions").get<std::vector<std::string>>();
        }
        if (s.contains("domains")) cfg.sweeps.domains = s.at("domains").get<std::vector<std::string>>();
        for (double a : cfg.sweeps.alpha_grid) {
            if (a < 0.0 || a > 1.0) throw ConfigError("config: sweeps.alpha_grid values must lie in [0,1]");
        }
        for (double f : cfg.sweeps.clean_fractions) {
            if (f <= 0.0 || f > 1.0) throw ConfigError("config: sweeps.clean_fractions must lie in (0,1]");
        }
        for (const auto& c : cfg.sweeps.compositions) pipeline::Composition::parse(c);
    }

    if (doc.contains("theorem")) {
        const json& t = doc.at("theorem");
        check_keys(t,
                   {"corpus_dialogues", "max_turns", "clean_draws", "grid_points", "noise", "proxy",
                    "sigma", "rho", "seed"},
                   "theorem");
        cfg.theorem.seed = require_seed(t, "theorem");
        cfg.theorem.corpus_dialogues = t.value("corpus_dialogues", cfg.theorem.corpus_dialogues);
        cfg.theorem.max_turns = t.value("max_turns", cfg.theorem.max_turns);
        cfg.theorem.clean_draws = t.value("clean_draws", cfg.theorem.clean_draws);
        cfg.theorem.grid_points = t.value("grid_points", cfg.theorem.grid_points);
        cfg.theorem.proxy = t.value("proxy", cfg.theorem.proxy);
        cfg.theorem.sigma = t.value("sigma", cfg.theorem.sigma);
        cfg.theorem.rho = t.value("rho", cfg.theorem.rho);
        if (t.contains("noise")) {
            cfg.theorem.noise = parse_noise(t.at("noise"), "theorem.noise");
        } else {
            cfg.theorem.noise = noise_preset("default", cfg.theorem.seed + 1);
        }
        if (cfg.theorem.proxy != "independent" && cfg.theorem.proxy != "correlated" &&
            cfg.theorem.proxy != "real") {
            throw ConfigError("config: theorem.proxy must be independent, correlated or real");
        }
    } else {
        cfg.theorem.noise = noise_preset("default", 1);
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string ExperimentConfig::canonical_json() const {
    ordered_json doc;
    doc["output_dir"] = output_dir;
    doc["workers"] = workers;
    doc["ontology_preset"] = ontology_preset;
    doc["ontology_path"] = ontology_path;
    doc["corpus"] = {{"train", corpus.train_dialogues},
                     {"clean", corpus.clean_dialogues},
                     {"test", corpus.test_dialogues},
                     {"max_turns", corpus.max_turns},
                     {"seed", corpus.seed}};
    doc["noise"] = {{"p_missing", noise.p_missing},
                    {"p_spurious", noise.p_spurious},
                    {"p_wrong", noise.p_wrong},
                    {"seed", noise.seed}};
    const auto& k = tracker_cfg;
    doc["tracker"] = {{"d_model", k.d_model},
                      {"n_layers", k.n_layers},
                      {"heads_enc", k.n_heads_encoder},
                      {"heads_slot", k.n_heads_slot_attention},
                      {"max_len", k.max_len},
                      {"dropout", k.dropout},
                      {"word_dropout", k.word_dropout},
                      {"ffn", k.ffn_multiplier},
                      {"ln_eps", k.layer_norm_eps},
                      {"init", k.init_stddev}};
    auto plan_json = [](const pipeline::TrainPlan& p) {
        return ordered_json{{"composition", p.composition.name()},
                            {"alpha", p.alpha},
                            {"epochs", p.epochs},
                            {"batch", p.batch_size},
                            {"lr", p.peak_lr},
                            {"warmup", p.warmup_proportion},
                            {"decay", p.weight_decay},
                            {"seed", p.seed},
                            {"holdout", p.clean_holdout_fraction},
                            {"selmax", p.selection_max_dialogues}};
    };
    doc["aux_train"] = plan_json(aux_plan);
    doc["primary_train"] = plan_json(primary_plan);
    doc["pseudo_prev"] = pseudo_prev == pipeline::PrevStateSource::Predicted ? "predicted" : "labels";
    doc["sweeps"] = {{"alpha_grid", sweeps.alpha_grid},
                     {"clean_fractions", sweeps.clean_fractions},
                     {"compositions", sweeps.compositions},
                     {"domains", sweeps.domains}};
    doc["theorem"] = {{"corpus_dialogues", theorem.corpus_dialogues},
                      {"max_turns", theorem.max_turns},
                      {"clean_draws", theorem.clean_draws},
                      {"grid_points", theorem.grid_points},
                      {"noise",
                       ordered_json{{"p_missing", theorem.noise.p_missing},
                                    {"p_spurious", theorem.noise.p_spurious},
                                    {"p_wrong", theorem.noise.p_wrong},
                                    {"seed", theorem.noise.seed}}},
                      {"proxy", theorem.proxy},
                      {"sigma", theorem.sigma},
                      {"rho", theorem.rho},
                      {"seed", theorem.seed}};
    return doc.dump();
}

std::uint64_t ExperimentConfig::content_hash() const { return fnv1a64(canonical_json()); }

// ---------------------------------------------------------------------------
// run directory + manifest
// ---------------------------------------------------------------------------

RunDir::RunDir(std::string root, std::uint64_t config_hash)
    : root_(std::move(root)), config_hash_(config_hash) {
    fs::create_directories(root_);
    load_manifest();
}

std::string RunDir::path(const std::string& relative) const { return root_ + "/" + relative; }

std::string RunDir::path_for_write(const std::string& relative) {
    fs::path p = fs::path(root_) / relative;
    fs::create_directories(p.parent_path());
    return p.string();
}

void RunDir::write_text(const std::string& relative, const std::string& content) {
    fs::path p = fs::path(root_) / relative;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << content;
}

std::string RunDir::read_text(const std::string& relative) const {
    std::ifstream in(path(relative), std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path(relative));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool RunDir::exists(const std::string& relative) const { return fs::exists(path(relative)); }

void RunDir::load_manifest() {
    std::string mpath = path("manifest.json");
    if (!fs::exists(mpath)) return;
    std::ifstream in(mpath, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    json doc = json::parse(ss.str());
    std::uint64_t stored = std::stoull(doc.at("config_hash").get<std::string>(), nullptr, 16);
    if (stored != config_hash_) {
        throw ConfigError("run directory " + root_ + " was created with a different config");
    }
    for (auto& [name, entry] : doc.at("stages").items()) {
        StageEntry se;
        se.key = std::stoull(entry.at("key").get<std::string>(), nullptr, 16);
        for (auto& [file, h] : entry.at("outputs").items()) {
            se.outputs[file] = std::stoull(h.get<std::string>(), nullptr, 16);
        }
        stages_[name] = std::move(se);
    }
}

void RunDir::save_manifest() const {
    ordered_json doc;
    doc["config_hash"] = hash_hex(config_hash_);
    ordered_json stages = ordered_json::object();
    for (const auto& [name, entry] : stages_) {
        ordered_json e;
        e["key"] = hash_hex(entry.key);
        ordered_json outs = ordered_json::object();
        for (const auto& [file, h] : entry.outputs) outs[file] = hash_hex(h);
        e["outputs"] = std::move(outs);
        stages[name] = std::move(e);
    }
    doc["stages"] = std::move(stages);
    std::ofstream out(path("manifest.json"), std::ios::binary);
    out << doc.dump(1);
}

bool RunDir::stage_fresh(const std::string& stage, std::uint64_t key) const {
    auto it = stages_.find(stage);
    if (it == stages_.end() || it->second.key != key) return false;
    for (const auto& [file, h] : it->second.outputs) {
        if (!fs::exists(path(file)) || hash_file(path(file)) != h) return false;
    }
    return true;
}

void RunDir::record_stage(const std::string& stage, std::uint64_t key,
                          const std::vector<std::string>& outputs) {
    StageEntry entry;
    entry.key = key;
    for (const auto& file : outputs) entry.outputs[file] = hash_file(path(file));
    stages_[stage] = std::move(entry);
    save_manifest();
}

bool RunDir::stage_recorded(const std::string& stage) const { return stages_.count(stage) > 0; }

std::vector<std::string> RunDir::stage_names() const {
    std::vector<std::string> out;
    out.reserve(stages_.size());
    for (const auto& [name, _] : stages_) out.push_back(name);
    return out;
}

std::uint64_t RunDir::stage_key(const std::string& stage) const {
    auto it = stages_.find(stage);
    if (it == stages_.end()) return 0;
    return it->second.key;
}

void RunDir::require_stage(const std::string& stage, const std::string& needed_by) const {
    auto it = stages_.find(stage);
    if (it == stages_.end()) {
        throw StageDependencyError(needed_by + " requires stage \"" + stage + "\" to run first");
    }
    for (const auto& [file, _] : it->second.outputs) {
        if (!fs::exists(path(file))) {
            throw StageDependencyError(needed_by + ": artifact " + file + " from stage \"" + stage +
                                       "\" is missing; re-run that stage");
        }
    }
}

std::vector<std::string> RunDir::stage_outputs(const std::string& stage) const {
    std::vector<std::string> out;
    auto it = stages_.find(stage);
    if (it != stages_.end()) {
        for (const auto& [file, _] : it->second.outputs) out.push_back(file);
    }
    return out;
}

Workspace::Workspace(ExperimentConfig config, std::string root_override)
    : cfg(std::move(config)),
      run(root_override.empty() ? cfg.output_dir : root_override, cfg.content_hash()) {}

std::string arm_tag(const pipeline::Composition& comp, double alpha) {
    char buf[32];
    if (comp.mixes_soft_labels()) {
        std::snprintf(buf, sizeof(buf), "_a%.2f", alpha);
        return comp.name() + buf;
    }
    return comp.name();
}

}  // namespace dstlab::experiment
