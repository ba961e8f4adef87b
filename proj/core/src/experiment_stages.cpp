#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "dstlab/errors.hpp"
#include "dstlab/experiment.hpp"
#include "dstlab/hash.hpp"
#include "dstlab/metrics.hpp"

namespace dstlab::experiment {

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using pipeline::Composition;
using pipeline::LabelBundle;
using pipeline::TrainPlan;
using pipeline::TrainResult;
using tracker::TrackerModel;

namespace {

constexpr const char* kTrainTrue = "corpus/train_true.json";
constexpr const char* kClean = "corpus/clean.json";
constexpr const char* kTest = "corpus/test.json";
constexpr const char* kTrainNoisy = "corpus/train_noisy.json";
constexpr const char* kNoiseLog = "corpus/noise_log.jsonl";
constexpr const char* kAux = "models/aux.json";
constexpr const char* kAuxLog = "models/aux_train_log.json";
constexpr const char* kBundle = "labels/bundle.jsonl";

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

std::string frac_tag(double f) { return fmt("%.2f", f); }

Ontology ontology_for(const ExperimentConfig& cfg) {
    if (!cfg.ontology_path.empty()) return load_corpus(cfg.ontology_path).ontology;
    return desk_ontology();
}

std::uint64_t hash_mix(std::initializer_list<std::string> parts) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : parts) {
        h = fnv1a64(p, h);
        h = fnv1a64("\x1f", h);
    }
    return h;
}

std::string plan_fingerprint(const TrainPlan& p) {
    ordered_json j{{"composition", p.composition.name()}, {"alpha", p.alpha},
                   {"epochs", p.epochs},                  {"batch", p.batch_size},
                   {"lr", p.peak_lr},                     {"warmup", p.warmup_proportion},
                   {"decay", p.weight_decay},             {"seed", p.seed},
                   {"holdout", p.clean_holdout_fraction},  {"selmax", p.selection_max_dialogues}};
    return j.dump();
}

std::string tracker_fingerprint(const tracker::TrackerConfig& k) {
    ordered_json j{{"d", k.d_model},
                   {"layers", k.n_layers},
                   {"he", k.n_heads_encoder},
                   {"hs", k.n_heads_slot_attention},
                   {"len", k.max_len},
                   {"drop", k.dropout},
                   {"wdrop", k.word_dropout},
                   {"ffn", k.ffn_multiplier},
                   {"eps", k.layer_norm_eps},
                   {"init", k.init_stddev}};
    return j.dump();
}

std::string train_log_json(const TrainResult& res) {
    ordered_json doc;
    doc["epoch_mean_loss"] = res.epoch_mean_loss;
    doc["epoch_selection_jga"] = res.epoch_selection_jga;
    doc["best_epoch"] = res.best_epoch;
    doc["best_selection_jga"] = res.best_selection_jga;
    doc["steps"] = res.steps;
    return doc.dump(1);
}

// ---------------------------------------------------------------------------
// arms: one primary training + evaluation, cached as two manifest stages
// ---------------------------------------------------------------------------

struct ArmSpec {
    TrainPlan plan;
    std::string tag;
    const Corpus* noisy = nullptr;
    const LabelBundle* bundle = nullptr;
    const Corpus* clean = nullptr;
    const Corpus* test = nullptr;
    std::uint64_t upstream = 0;  // key material identifying the exact inputs
};

struct ArmPaths {
    std::string model, log, metrics, slot_csv;
};

ArmPaths arm_paths(const std::string& tag) {
    return {"models/primary_" + tag + ".json", "models/primary_" + tag + "_log.json",
            "eval/metrics_" + tag + ".json", "eval/slot_error_" + tag + ".csv"};
}

std::uint64_t arm_train_key(const Workspace& ws, const ArmSpec& spec) {
    return hash_mix({"train-primary", plan_fingerprint(spec.plan),
                     tracker_fingerprint(ws.cfg.tracker_cfg), hash_hex(spec.upstream)});
}

std::uint64_t arm_eval_key(const Workspace& ws, const ArmSpec& spec) {
    return hash_mix({"eval", hash_hex(arm_train_key(ws, spec))});
}

// Trains and evaluates every stale arm (up to cfg.workers in parallel), then
// records manifest entries serially. Returns reports in spec order.
std::vector<MetricsReport> run_arms(Workspace& ws, const std::vector<ArmSpec>& specs) {
    const Ontology ont = specs.empty() ? Ontology{} : specs[0].noisy->ontology;
    std::vector<MetricsReport> reports(specs.size());
    std::vector<int> pending;
    for (int i = 0; i < static_cast<int>(specs.size()); ++i) {
        const ArmSpec& spec = specs[static_cast<std::size_t>(i)];
        ArmPaths paths = arm_paths(spec.tag);
        bool train_ok = ws.run.stage_fresh("train-primary/" + spec.tag, arm_train_key(ws, spec));
        bool eval_ok = ws.run.stage_fresh("eval/" + spec.tag, arm_eval_key(ws, spec));
        if (train_ok && eval_ok) {
            reports[static_cast<std::size_t>(i)] =
                MetricsReport::from_json(ws.run.read_text(paths.metrics), spec.noisy->ontology);
        } else {
            pending.push_back(i);
        }
    }
    if (!pending.empty()) {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(pending.size());
        int n_workers = std::max(1, std::min<int>(ws.cfg.workers, static_cast<int>(pending.size())));
        auto worker = [&]() {
            for (;;) {
                std::size_t slot = next.fetch_add(1);
                if (slot >= pending.size()) return;
                int i = pending[slot];
                const ArmSpec& spec = specs[static_cast<std::size_t>(i)];
                try {
                    ArmPaths paths = arm_paths(spec.tag);
                    TrainResult res;
                    TrackerModel model = pipeline::train_primary(*spec.noisy, *spec.bundle,
                                                                 *spec.clean, spec.plan,
                                                                 ws.cfg.tracker_cfg, &res);
                    model.save(ws.run.path_for_write(paths.model));
                    ws.run.write_text(paths.log, train_log_json(res));
                    MetricsReport report = tracker::evaluate_tracker(model, *spec.test);
                    ws.run.write_text(paths.metrics, report.to_json(spec.test->ontology));
                    ws.run.write_text(paths.slot_csv, report.per_slot_csv(spec.test->ontology));
                    reports[static_cast<std::size_t>(i)] = report;
                } catch (...) {
                    errors[slot] = std::current_exception();
                }
            }
        };
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(n_workers));
        for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
        for (int i : pending) {
            const ArmSpec& spec = specs[static_cast<std::size_t>(i)];
            ArmPaths paths = arm_paths(spec.tag);
            ws.run.record_stage("train-primary/" + spec.tag, arm_train_key(ws, spec),
                                {paths.model, paths.log});
            ws.run.record_stage("eval/" + spec.tag, arm_eval_key(ws, spec),
                                {paths.metrics, paths.slot_csv});
        }
    }
    (void)ont;
    return reports;
}

std::string metrics_row(const MetricsReport& r) {
    return fmt("%.6f", r.joint_goal_accuracy) + "," + fmt("%.6f", r.joint_turn_accuracy) + "," +
           fmt("%.6f", r.slot_accuracy);
}

std::string plot_json(const std::string& csv, const std::string& x,
                      const std::vector<std::string>& series, const std::string& title) {
    ordered_json doc;
    doc["csv"] = csv;
    doc["x"] = x;
    doc["series"] = series;
    doc["title"] = title;
    return doc.dump(1);
}

struct CoreData {
    Corpus train_true, noisy, clean, test;
    LabelBundle bundle;
    std::uint64_t upstream = 0;  // gen-pseudo chain key
};

// One auxiliary retrained on a clean-set variant (a size prefix or a
// domain-filtered subset), plus the pseudo labels it generates.
struct AuxVariant {
    std::string id;  // file/stage suffix, e.g. "cf0.50" or "xdhotel"
    const Corpus* clean = nullptr;
};

// Trains every stale variant auxiliary (in parallel up to cfg.workers),
// generates their pseudo-label bundles, records manifest entries serially and
// returns the loaded bundles in variant order.
std::vector<LabelBundle> prepare_aux_variants(Workspace& ws, const CoreData& data,
                                              const std::string& kind,
                                              const std::vector<AuxVariant>& variants) {
    struct Paths {
        std::string aux_stage, pseudo_stage, aux, log, bundle;
        std::uint64_t aux_key = 0;
    };
    std::vector<Paths> paths(variants.size());
    std::vector<int> stale_aux;
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const auto& v = variants[i];
        Paths& p = paths[i];
        p.aux_stage = kind + "/aux/" + v.id;
        p.pseudo_stage = kind + "/pseudo/" + v.id;
        p.aux = "models/aux_" + v.id + ".json";
        p.log = "models/aux_" + v.id + "_log.json";
        p.bundle = "labels/bundle_" + v.id + ".jsonl";
        p.aux_key = hash_mix({kind + "/aux", v.id, plan_fingerprint(ws.cfg.aux_plan),
                              tracker_fingerprint(ws.cfg.tracker_cfg),
                              hash_hex(ws.run.stage_key("inject-noise"))});
        if (!ws.run.stage_fresh(p.aux_stage, p.aux_key)) stale_aux.push_back(static_cast<int>(i));
    }
    if (!stale_aux.empty()) {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(stale_aux.size());
        int n_workers = std::max(1, std::min<int>(ws.cfg.workers, static_cast<int>(stale_aux.size())));
        auto worker = [&]() {
            for (;;) {
                std::size_t slot = next.fetch_add(1);
                if (slot >= stale_aux.size()) return;
                int i = stale_aux[slot];
                try {
                    TrainResult res;
                    TrackerModel aux = pipeline::train_auxiliary(
                        *variants[static_cast<std::size_t>(i)].clean, data.noisy, ws.cfg.tracker_cfg,
                        ws.cfg.aux_plan, &res);
                    aux.save(ws.run.path_for_write(paths[static_cast<std::size_t>(i)].aux));
                    ws.run.write_text(paths[static_cast<std::size_t>(i)].log, train_log_json(res));
                } catch (...) {
                    errors[slot] = std::current_exception();
                }
            }
        };
        std::vector<std::thread> threads;
        for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
        for (int i : stale_aux) {
            const Paths& p = paths[static_cast<std::size_t>(i)];
            ws.run.record_stage(p.aux_stage, p.aux_key, {p.aux, p.log});
        }
    }
    std::vector<LabelBundle> bundles(variants.size());
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const Paths& p = paths[i];
        std::uint64_t ps_key =
            hash_mix({kind + "/pseudo", variants[i].id, hash_hex(ws.run.stage_key(p.aux_stage))});
        if (!ws.run.stage_fresh(p.pseudo_stage, ps_key)) {
            TrackerModel aux = TrackerModel::load(ws.run.path(p.aux), data.noisy.ontology);
            LabelBundle b = pipeline::generate_pseudo(aux, data.noisy, &data.train_true, ws.cfg.pseudo_prev);
            ws.run.write_text(p.bundle, b.to_jsonl());
            ws.run.record_stage(p.pseudo_stage, ps_key, {p.bundle});
        }
        bundles[i] = LabelBundle::from_jsonl(ws.run.read_text(p.bundle));
    }
    return bundles;
}

CoreData load_core(Workspace& ws, const std::string& needed_by, bool need_bundle = true) {
    ws.run.require_stage("gen-corpus", needed_by);
    ws.run.require_stage("inject-noise", needed_by);
    if (need_bundle) ws.run.require_stage("gen-pseudo", needed_by);
    CoreData data;
    data.train_true = corpus_from_json(ws.run.read_text(kTrainTrue));
    data.noisy = corpus_from_json(ws.run.read_text(kTrainNoisy));
    data.clean = corpus_from_json(ws.run.read_text(kClean));
    data.test = corpus_from_json(ws.run.read_text(kTest));
    if (need_bundle) {
        data.bundle = LabelBundle::from_jsonl(ws.run.read_text(kBundle));
        data.upstream = ws.run.stage_key("gen-pseudo");
    } else {
        data.upstream = ws.run.stage_key("inject-noise");
    }
    return data;
}

}  // namespace

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

bool stage_gen_corpus(Workspace& ws) {
    const auto& c = ws.cfg.corpus;
    ordered_json slice{{"train", c.train_dialogues}, {"clean", c.clean_dialogues},
                       {"test", c.test_dialogues},   {"max_turns", c.max_turns},
                       {"seed", c.seed},             {"preset", ws.cfg.ontology_preset},
                       {"path", ws.cfg.ontology_path}};
    std::uint64_t key = hash_mix({"gen-corpus", slice.dump()});
    if (ws.run.stage_fresh("gen-corpus", key)) return false;

    Ontology ont = ontology_for(ws.cfg);
    int total = c.train_dialogues + c.clean_dialogues + c.test_dialogues;
    Corpus all = generate_corpus(ont, total, c.max_turns, c.seed);
    SplitFractions fractions{static_cast<double>(c.train_dialogues) / total,
                             static_cast<double>(c.clean_dialogues) / total,
                             static_cast<double>(c.test_dialogues) / total};
    CorpusSplit split = split_corpus(all, fractions, c.seed);
    ws.run.write_text(kTrainTrue, corpus_to_json(split.train));
    ws.run.write_text(kClean, corpus_to_json(split.clean));
    ws.run.write_text(kTest, corpus_to_json(split.test));
    ws.run.record_stage("gen-corpus", key, {kTrainTrue, kClean, kTest});
    return true;
}

bool stage_inject_noise(Workspace& ws) {
    ws.run.require_stage("gen-corpus", "inject-noise");
    const auto& n = ws.cfg.noise;
    ordered_json slice{{"p_missing", n.p_missing},
                       {"p_spurious", n.p_spurious},
                       {"p_wrong", n.p_wrong},
                       {"seed", n.seed}};
    std::uint64_t key = hash_mix({"inject-noise", slice.dump(), hash_hex(ws.run.stage_key("gen-corpus"))});
    if (ws.run.stage_fresh("inject-noise", key)) return false;

    Corpus train_true = corpus_from_json(ws.run.read_text(kTrainTrue));
    auto [noisy, log] = inject_noise(train_true, n);
    ws.run.write_text(kTrainNoisy, corpus_to_json(noisy));
    ws.run.write_text(kNoiseLog, log.to_jsonl());
    ws.run.record_stage("inject-noise", key, {kTrainNoisy, kNoiseLog});
    return true;
}

bool stage_train_aux(Workspace& ws) {
    ws.run.require_stage("gen-corpus", "train-aux");
    ws.run.require_stage("inject-noise", "train-aux");
    std::uint64_t key = hash_mix({"train-aux", plan_fingerprint(ws.cfg.aux_plan),
                                  tracker_fingerprint(ws.cfg.tracker_cfg),
                                  hash_hex(ws.run.stage_key("inject-noise"))});
    if (ws.run.stage_fresh("train-aux", key)) return false;

    Corpus clean = corpus_from_json(ws.run.read_text(kClean));
    Corpus noisy = corpus_from_json(ws.run.read_text(kTrainNoisy));
    TrainResult res;
    TrackerModel aux = pipeline::train_auxiliary(clean, noisy, ws.cfg.tracker_cfg, ws.cfg.aux_plan, &res);
    aux.save(ws.run.path_for_write(kAux));
    ws.run.write_text(kAuxLog, train_log_json(res));
    ws.run.record_stage("train-aux", key, {kAux, kAuxLog});
    return true;
}

bool stage_gen_pseudo(Workspace& ws) {
    ws.run.require_stage("train-aux", "gen-pseudo");
    std::string prev = ws.cfg.pseudo_prev == pipeline::PrevStateSource::Predicted ? "predicted" : "labels";
    std::uint64_t key = hash_mix({"gen-pseudo", prev, hash_hex(ws.run.stage_key("train-aux"))});
    if (ws.run.stage_fresh("gen-pseudo", key)) return false;

    Corpus train_true = corpus_from_json(ws.run.read_text(kTrainTrue));
    Corpus noisy = corpus_from_json(ws.run.read_text(kTrainNoisy));
    TrackerModel aux = TrackerModel::load(ws.run.path(kAux), noisy.ontology);
    LabelBundle bundle = pipeline::generate_pseudo(aux, noisy, &train_true, ws.cfg.pseudo_prev);
    ws.run.write_text(kBundle, bundle.to_jsonl());
    ws.run.record_stage("gen-pseudo", key, {kBundle});
    return true;
}

bool stage_train_primary(Workspace& ws) {
    CoreData data = load_core(ws, "train-primary");
    ArmSpec spec{ws.cfg.primary_plan,
                 arm_tag(ws.cfg.primary_plan.composition, ws.cfg.primary_plan.alpha),
                 &data.noisy,
                 &data.bundle,
                 &data.clean,
                 &data.test,
                 data.upstream};
    std::string stage = "train-primary/" + spec.tag;
    std::uint64_t key = arm_train_key(ws, spec);
    if (ws.run.stage_fresh(stage, key)) return false;
    ArmPaths paths = arm_paths(spec.tag);
    TrainResult res;
    TrackerModel model = pipeline::train_primary(data.noisy, data.bundle, data.clean, spec.plan,
                                                 ws.cfg.tracker_cfg, &res);
    model.save(ws.run.path_for_write(paths.model));
    ws.run.write_text(paths.log, train_log_json(res));
    ws.run.record_stage(stage, key, {paths.model, paths.log});
    return true;
}

bool stage_eval(Workspace& ws) {
    std::string tag = arm_tag(ws.cfg.primary_plan.composition, ws.cfg.primary_plan.alpha);
    ws.run.require_stage("train-primary/" + tag, "eval");
    ws.run.require_stage("gen-corpus", "eval");
    CoreData data = load_core(ws, "eval");
    ArmSpec spec{ws.cfg.primary_plan, tag, &data.noisy, &data.bundle,
                 &data.clean,         &data.test, data.upstream};
    std::uint64_t key = arm_eval_key(ws, spec);
    std::string stage = "eval/" + tag;
    if (ws.run.stage_fresh(stage, key)) return false;
    ArmPaths paths = arm_paths(tag);
    TrackerModel model = TrackerModel::load(ws.run.path(paths.model), data.test.ontology);
    MetricsReport report = tracker::evaluate_tracker(model, data.test);
    ws.run.write_text(paths.metrics, report.to_json(data.test.ontology));
    ws.run.write_text(paths.slot_csv, report.per_slot_csv(data.test.ontology));
    ws.run.record_stage(stage, key, {paths.metrics, paths.slot_csv});
    return true;
}

bool stage_sweep_alpha(Workspace& ws) {
    CoreData data = load_core(ws, "sweep-alpha");
    std::vector<ArmSpec> specs;
    for (double a : ws.cfg.sweeps.alpha_grid) {
        TrainPlan plan = ws.cfg.primary_plan;
        plan.composition = Composition::parse("T+P");
        plan.alpha = a;
        specs.push_back({plan, arm_tag(plan.composition, a), &data.noisy, &data.bundle, &data.clean,
                         &data.test, data.upstream});
    }
    std::uint64_t key = hash_mix({"sweep-alpha", plan_fingerprint(ws.cfg.primary_plan),
                                  tracker_fingerprint(ws.cfg.tracker_cfg), hash_hex(data.upstream),
                                  ordered_json(ws.cfg.sweeps.alpha_grid).dump()});
    if (ws.run.stage_fresh("sweep-alpha", key)) return false;

    std::vector<MetricsReport> reports = run_arms(ws, specs);
    std::string csv = "alpha,joint_goal_accuracy,joint_turn_accuracy,slot_accuracy\n";
    for (std::size_t i = 0; i < specs.size(); ++i) {
        csv += fmt("%.2f", ws.cfg.sweeps.alpha_grid[i]) + "," + metrics_row(reports[i]) + "\n";
    }
    ws.run.write_text("sweeps/alpha.csv", csv);
    ws.run.write_text("sweeps/alpha.plot.json",
                      plot_json("sweeps/alpha.csv", "alpha",
                                {"joint_goal_accuracy", "joint_turn_accuracy", "slot_accuracy"},
                                "Combined-label weight sweep"));
    ws.run.record_stage("sweep-alpha", key, {"sweeps/alpha.csv", "sweeps/alpha.plot.json"});
    return true;
}

bool stage_sweep_clean_size(Workspace& ws) {
    CoreData data = load_core(ws, "sweep-clean-size");
    const auto& fractions = ws.cfg.sweeps.clean_fractions;
    std::uint64_t key = hash_mix({"sweep-clean-size", plan_fingerprint(ws.cfg.primary_plan),
                                  plan_fingerprint(ws.cfg.aux_plan),
                                  tracker_fingerprint(ws.cfg.tracker_cfg), hash_hex(data.upstream),
                                  ordered_json(fractions).dump()});
    if (ws.run.stage_fresh("sweep-clean-size", key)) return false;

    // per-fraction auxiliaries and pseudo labels (prefix subsets of the pool)
    std::vector<Corpus> subsets(fractions.size());
    std::vector<AuxVariant> variants(fractions.size());
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        double f = fractions[i];
        Corpus& subset = subsets[i];
        subset.ontology = data.clean.ontology;
        int take = std::max(1, static_cast<int>(std::llround(
                                   f * static_cast<double>(data.clean.dialogues.size()))));
        take = std::min<int>(take, static_cast<int>(data.clean.dialogues.size()));
        for (int d = 0; d < take; ++d) subset.dialogues.push_back(data.clean.dialogues[static_cast<std::size_t>(d)]);
        variants[i] = {"cf" + frac_tag(f), &subsets[i]};
    }
    std::vector<LabelBundle> bundles = prepare_aux_variants(ws, data, "clean-size", variants);

    std::vector<ArmSpec> specs;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        std::string ftag = frac_tag(fractions[i]);
        std::uint64_t up = ws.run.stage_key("clean-size/pseudo/cf" + ftag);
        TrainPlan tp = ws.cfg.primary_plan;
        tp.composition = Composition::parse("T+P");
        specs.push_back({tp, arm_tag(tp.composition, tp.alpha) + "_cf" + ftag, &data.noisy,
                         &bundles[i], &subsets[i], &data.test, up});
        TrainPlan pp = ws.cfg.primary_plan;
        pp.composition = Composition::parse("P");
        specs.push_back({pp, "P_cf" + ftag, &data.noisy, &bundles[i], &subsets[i], &data.test, up});
    }
    TrainPlan tplan = ws.cfg.primary_plan;
    tplan.composition = Composition::parse("T");
    specs.push_back({tplan, "T", &data.noisy, &data.bundle, &data.clean, &data.test, data.upstream});

    std::vector<MetricsReport> reports = run_arms(ws, specs);
    double t_jga = reports.back().joint_goal_accuracy;
    std::string csv = "clean_fraction,clean_dialogues,jga_combined,jga_pseudo_only,jga_vanilla_only\n";
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        csv += fmt("%.2f", fractions[i]) + "," + std::to_string(subsets[i].dialogues.size()) + "," +
               fmt("%.6f", reports[2 * i].joint_goal_accuracy) + "," +
               fmt("%.6f", reports[2 * i + 1].joint_goal_accuracy) + "," + fmt("%.6f", t_jga) + "\n";
    }
    ws.run.write_text("sweeps/clean_size.csv", csv);
    ws.run.write_text("sweeps/clean_size.plot.json",
                      plot_json("sweeps/clean_size.csv", "clean_fraction",
                                {"jga_combined", "jga_pseudo_only", "jga_vanilla_only"},
                                "Clean-set size sweep"));
    ws.run.record_stage("sweep-clean-size", key,
                        {"sweeps/clean_size.csv", "sweeps/clean_size.plot.json"});
    return true;
}

bool stage_sweep_domain(Workspace& ws) {
    CoreData data = load_core(ws, "sweep-domain");
    std::vector<std::string> domains = ws.cfg.sweeps.domains;
    if (domains.empty()) domains = data.clean.ontology.domains();
    std::uint64_t key = hash_mix({"sweep-domain", plan_fingerprint(ws.cfg.primary_plan),
                                  plan_fingerprint(ws.cfg.aux_plan),
                                  tracker_fingerprint(ws.cfg.tracker_cfg), hash_hex(data.upstream),
                                  ordered_json(domains).dump()});
    if (ws.run.stage_fresh("sweep-domain", key)) return false;

    std::vector<Corpus> filtered(domains.size());
    std::vector<AuxVariant> variants(domains.size());
    std::vector<std::size_t> clean_counts(domains.size());
    for (std::size_t i = 0; i < domains.size(); ++i) {
        const std::string& dom = domains[i];
        filtered[i] = filter_by_domain(data.clean, dom);
        clean_counts[i] = filtered[i].dialogues.size();
        if (filtered[i].dialogues.empty()) {
            throw ConfigError("sweep-domain: removing domain \"" + dom +
                              "\" leaves no clean dialogues");
        }
        variants[i] = {"xd" + dom, &filtered[i]};
    }
    std::vector<LabelBundle> bundles = prepare_aux_variants(ws, data, "domain", variants);

    std::vector<ArmSpec> specs;
    for (std::size_t i = 0; i < domains.size(); ++i) {
        TrainPlan plan = ws.cfg.primary_plan;
        plan.composition = Composition::parse("T+P");
        std::uint64_t up = ws.run.stage_key("domain/pseudo/xd" + domains[i]);
        specs.push_back({plan, arm_tag(plan.composition, plan.alpha) + "_xd" + domains[i],
                         &data.noisy, &bundles[i], &filtered[i], &data.test, up});
    }
    // reference arms: full clean set, and no clean data at all
    TrainPlan full_plan = ws.cfg.primary_plan;
    full_plan.composition = Composition::parse("T+P");
    specs.push_back({full_plan, arm_tag(full_plan.composition, full_plan.alpha), &data.noisy,
                     &data.bundle, &data.clean, &data.test, data.upstream});
    TrainPlan t_plan = ws.cfg.primary_plan;
    t_plan.composition = Composition::parse("T");
    specs.push_back({t_plan, "T", &data.noisy, &data.bundle, &data.clean, &data.test, data.upstream});

    std::vector<MetricsReport> reports = run_arms(ws, specs);
    std::string csv = "excluded_domain,clean_dialogues,joint_goal_accuracy,joint_turn_accuracy,slot_accuracy\n";
    for (std::size_t i = 0; i < domains.size(); ++i) {
        csv += domains[i] + "," + std::to_string(clean_counts[i]) + "," + metrics_row(reports[i]) + "\n";
    }
    csv += "none," + std::to_string(data.clean.dialogues.size()) + "," +
           metrics_row(reports[domains.size()]) + "\n";
    csv += "all,0," + metrics_row(reports[domains.size() + 1]) + "\n";
    ws.run.write_text("sweeps/domain.csv", csv);
    ws.run.write_text("sweeps/domain.plot.json",
                      plot_json("sweeps/domain.csv", "excluded_domain",
                                {"joint_goal_accuracy", "joint_turn_accuracy", "slot_accuracy"},
                                "Clean-set domain-filter sweep"));
    ws.run.record_stage("sweep-domain", key, {"sweeps/domain.csv", "sweeps/domain.plot.json"});
    return true;
}

bool stage_sweep_composition(Workspace& ws) {
    CoreData data = load_core(ws, "sweep-composition");
    const auto& comps = ws.cfg.sweeps.compositions;
    std::uint64_t key = hash_mix({"sweep-composition", plan_fingerprint(ws.cfg.primary_plan),
                                  tracker_fingerprint(ws.cfg.tracker_cfg), hash_hex(data.upstream),
                                  ordered_json(comps).dump()});
    if (ws.run.stage_fresh("sweep-composition", key)) return false;

    std::vector<ArmSpec> specs;
    for (const auto& comp_text : comps) {
        TrainPlan plan = ws.cfg.primary_plan;
        plan.composition = Composition::parse(comp_text);
        specs.push_back({plan, arm_tag(plan.composition, plan.alpha), &data.noisy, &data.bundle,
                         &data.clean, &data.test, data.upstream});
    }
    std::vector<MetricsReport> reports = run_arms(ws, specs);
    std::string csv = "composition,joint_goal_accuracy,joint_turn_accuracy,slot_accuracy\n";
    for (std::size_t i = 0; i < comps.size(); ++i) {
        csv += comps[i] + "," + metrics_row(reports[i]) + "\n";
    }
    ws.run.write_text("sweeps/composition.csv", csv);
    ws.run.write_text("sweeps/composition.plot.json",
                      plot_json("sweeps/composition.csv", "composition",
                                {"joint_goal_accuracy", "joint_turn_accuracy", "slot_accuracy"},
                                "Training-set composition sweep"));
    ws.run.record_stage("sweep-composition", key,
                        {"sweeps/composition.csv", "sweeps/composition.plot.json"});
    return true;
}

bool stage_verify_theorem(Workspace& ws) {
    const auto& t = ws.cfg.theorem;
    ordered_json slice{{"dialogues", t.corpus_dialogues},
                       {"max_turns", t.max_turns},
                       {"draws", t.clean_draws},
                       {"grid", t.grid_points},
                       {"noise",
                        ordered_json{{"m", t.noise.p_missing},
                                     {"s", t.noise.p_spurious},
                                     {"w", t.noise.p_wrong},
                                     {"seed", t.noise.seed}}},
                       {"proxy", t.proxy},
                       {"sigma", t.sigma},
                       {"rho", t.rho},
                       {"seed", t.seed},
                       {"preset", ws.cfg.ontology_preset},
                       {"path", ws.cfg.ontology_path}};
    std::uint64_t key = hash_mix({"verify-theorem", slice.dump()});
    if (ws.run.stage_fresh("verify-theorem", key)) return false;

    theory::TheoremSimConfig sim;
    sim.corpus_dialogues = t.corpus_dialogues;
    sim.max_turns = t.max_turns;
    sim.noise = t.noise;
    sim.clean_draws = t.clean_draws;
    sim.alpha_grid = theory::uniform_alpha_grid(t.grid_points);
    sim.proxy_sigma = t.sigma;
    sim.proxy_rho = t.rho;
    sim.seed = t.seed;
    if (t.proxy == "independent") sim.proxy = theory::PseudoProxyKind::Independent;
    else if (t.proxy == "correlated") sim.proxy = theory::PseudoProxyKind::Correlated;
    else sim.proxy = theory::PseudoProxyKind::RealAux;

    theory::TheoremReport report = theory::verify_theorem(ontology_for(ws.cfg), sim);
    ws.run.write_text("theorem/report.json", report.to_json());
    ws.run.write_text("theorem/curve.csv", report.curve_csv());
    ws.run.write_text("theorem/curve.plot.json",
                      plot_json("theorem/curve.csv", "alpha", {"empirical", "fitted"},
                                "Approximation error versus combination weight"));
    ws.run.record_stage("verify-theorem", key,
                        {"theorem/report.json", "theorem/curve.csv", "theorem/curve.plot.json"});
    return true;
}

bool stage_report(Workspace& ws) {
    const Ontology ont = ontology_for(ws.cfg);
    ordered_json summary;
    summary["config_hash"] = hash_hex(ws.cfg.content_hash());
    ordered_json checks = ordered_json::array();
    auto add_check = [&](const std::string& what, bool ok) {
        checks.push_back(ordered_json{{"check", what}, {"ok", ok}});
        if (!ok) throw SchemaError("report: " + what + " does not reproduce bit-identically");
    };

    // sweep CSVs must reproduce from per-arm metrics artifacts
    if (ws.run.stage_recorded("sweep-alpha")) {
        std::string csv = "alpha,joint_goal_accuracy,joint_turn_accuracy,slot_accuracy\n";
        for (double a : ws.cfg.sweeps.alpha_grid) {
            std::string tag = arm_tag(Composition::parse("T+P"), a);
            MetricsReport r = MetricsReport::from_json(ws.run.read_text("eval/metrics_" + tag + ".json"), ont);
            csv += fmt("%.2f", a) + "," + metrics_row(r) + "\n";
        }
        add_check("sweeps/alpha.csv", csv == ws.run.read_text("sweeps/alpha.csv"));
    }
    if (ws.run.stage_recorded("sweep-composition")) {
        std::string csv = "composition,joint_goal_accuracy,joint_turn_accuracy,slot_accuracy\n";
        for (const auto& comp_text : ws.cfg.sweeps.compositions) {
            std::string tag = arm_tag(Composition::parse(comp_text), ws.cfg.primary_plan.alpha);
            MetricsReport r = MetricsReport::from_json(ws.run.read_text("eval/metrics_" + tag + ".json"), ont);
            csv += comp_text + "," + metrics_row(r) + "\n";
        }
        add_check("sweeps/composition.csv", csv == ws.run.read_text("sweeps/composition.csv"));
    }
    if (ws.run.stage_recorded("verify-theorem")) {
        theory::TheoremReport parsed;
        nlohmann::json doc = nlohmann::json::parse(ws.run.read_text("theorem/report.json"));
        for (const auto& pj : doc.at("curve")) {
            theory::GridPoint pt;
            pt.alpha = pj.at("alpha").get<double>();
            pt.empirical = pj.at("empirical").get<double>();
            pt.fitted = pj.at("fitted").get<double>();
            pt.stderr_curve = pj.at("stderr").get<double>();
            parsed.curve.push_back(pt);
        }
        add_check("theorem/curve.csv", parsed.curve_csv() == ws.run.read_text("theorem/curve.csv"));
    }
    // every evaluated arm's per-slot CSV must reproduce from its metrics JSON
    for (const std::string& stage : ws.run.stage_names()) {
        if (stage.rfind("eval/", 0) != 0) continue;
        std::string tag = stage.substr(5);
        MetricsReport r = MetricsReport::from_json(ws.run.read_text("eval/metrics_" + tag + ".json"), ont);
        add_check("eval/slot_error_" + tag + ".csv",
                  r.per_slot_csv(ont) == ws.run.read_text("eval/slot_error_" + tag + ".csv"));
    }
    summary["checks"] = std::move(checks);
    ws.run.write_text("report/summary.json", summary.dump(1));
    ws.run.record_stage("report", hash_mix({"report", hash_hex(ws.cfg.content_hash())}),
                        {"report/summary.json"});
    return true;
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

namespace {

int dispatch(const std::string& subcommand, const std::string& config_path) {
    ExperimentConfig cfg = load_config(config_path);
    if (const char* w = std::getenv("DSTLAB_WORKERS")) {
        int n = std::atoi(w);
        if (n >= 1) cfg.workers = n;
    }
    std::string root;
    if (const char* r = std::getenv("DSTLAB_OUTPUT_ROOT")) {
        root = std::string(r) + "/" + cfg.output_dir;
    }
    Workspace ws(cfg, root);

    bool did = false;
    if (subcommand == "gen-corpus") did = stage_gen_corpus(ws);
    else if (subcommand == "inject-noise") did = stage_inject_noise(ws);
    else if (subcommand == "train-aux") did = stage_train_aux(ws);
    else if (subcommand == "gen-pseudo") did = stage_gen_pseudo(ws);
    else if (subcommand == "train-primary") did = stage_train_primary(ws);
    else if (subcommand == "eval") did = stage_eval(ws);
    else if (subcommand == "sweep-alpha") did = stage_sweep_alpha(ws);
    else if (subcommand == "sweep-clean-size") did = stage_sweep_clean_size(ws);
    else if (subcommand == "sweep-domain") did = stage_sweep_domain(ws);
    else if (subcommand == "sweep-composition") did = stage_sweep_composition(ws);
    else if (subcommand == "verify-theorem") did = stage_verify_theorem(ws);
    else if (subcommand == "report") did = stage_report(ws);
    else throw ConfigError("unknown subcommand: " + subcommand);

    std::cout << subcommand << (did ? ": done" : ": cache hit") << " (" << ws.run.root() << ")\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    static const std::vector<std::string> subcommands = {
        "gen-corpus",   "inject-noise",     "train-aux",    "gen-pseudo",
        "train-primary", "eval",            "sweep-alpha",  "sweep-clean-size",
        "sweep-domain", "sweep-composition", "verify-theorem", "report"};

    auto usage = []() {
        std::cout << "usage: dstlab <subcommand> --config <file>\n"
                  << "subcommands:\n"
                  << "  gen-corpus         generate and split the synthetic corpus\n"
                  << "  inject-noise       corrupt the training labels\n"
                  << "  train-aux          train the auxiliary tracker on the clean set\n"
                  << "  gen-pseudo         predict pseudo labels over the noisy set\n"
                  << "  train-primary      train the primary tracker per the configured plan\n"
                  << "  eval               evaluate the primary tracker on the test set\n"
                  << "  sweep-alpha        train/evaluate across the alpha grid\n"
                  << "  sweep-clean-size   vary the clean-set size\n"
                  << "  sweep-domain       vary the clean-set domain distribution\n"
                  << "  sweep-composition  compare training-set compositions\n"
                  << "  verify-theorem     Monte Carlo check of the combined-label error curve\n"
                  << "  report             re-derive all CSVs from artifacts and verify\n";
    };

    try {
        if (args.empty() || args[0] == "-h" || args[0] == "--help") {
            usage();
            return args.empty() ? 1 : 0;
        }
        std::string sub = args[0];
        if (std::find(subcommands.begin(), subcommands.end(), sub) == subcommands.end()) {
            std::cerr << "error: unknown subcommand \"" << sub << "\"\n";
            usage();
            return 1;
        }
        std::string config_path;
        for (std::size_t i = 1; i < args.size(); ++i) {
            if ((args[i] == "-c" || args[i] == "--config") && i + 1 < args.size()) {
                config_path = args[++i];
            } else if (args[i] == "-h" || args[i] == "--help") {
                usage();
                return 0;
            } else {
                std::cerr << "error: unexpected argument \"" << args[i] << "\"\n";
                return 1;
            }
        }
        if (config_path.empty()) {
            std::cerr << "error: --config is required\n";
            return 1;
        }
        return dispatch(sub, config_path);
    } catch (const StageDependencyError& e) {
        std::cerr << "stage dependency error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace dstlab::experiment
