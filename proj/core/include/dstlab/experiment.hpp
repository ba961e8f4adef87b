#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dstlab/corpus.hpp"
#include "dstlab/pipeline.hpp"
#include "dstlab/theory.hpp"
#include "dstlab/tracker.hpp"

namespace dstlab::experiment {

// ---------------------------------------------------------------------------
// Configuration. One JSON document drives every subcommand; unknown keys are a
// hard error and every random seed must be explicit.
// ---------------------------------------------------------------------------

struct CorpusConfig {
    int train_dialogues = 600;
    int clean_dialogues = 100;
    int test_dialogues = 100;
    int max_turns = 4;
    std::uint64_t seed = 0;
};

struct SweepsConfig {
    std::vector<double> alpha_grid;        // default 0..1 step 0.1
    std::vector<double> clean_fractions;   // default {0.25, 0.5, 0.75, 1.0}
    std::vector<std::string> compositions; // default {T, T+C, T+P, T+C+P}
    std::vector<std::string> domains;      // default: all ontology domains
};

struct TheoremConfig {
    int corpus_dialogues = 200;
    int max_turns = 4;
    int clean_draws = 200;
    int grid_points = 11;
    NoiseSpec noise;
    std::string proxy = "independent";  // independent | correlated | real
    double sigma = 0.08;
    double rho = 0.5;
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    std::string output_dir;
    int workers = 1;
    std::string ontology_preset = "desk30";  // or a path to a corpus-format JSON
    std::string ontology_path;
    CorpusConfig corpus;
    NoiseSpec noise;
    tracker::TrackerConfig tracker_cfg;
    pipeline::TrainPlan aux_plan;
    pipeline::TrainPlan primary_plan;
    pipeline::PrevStateSource pseudo_prev = pipeline::PrevStateSource::Predicted;
    SweepsConfig sweeps;
    TheoremConfig theorem;

    std::uint64_t content_hash() const;  // over the canonical JSON
    std::string canonical_json() const;
};

// Parses and validates. Throws ConfigError on unknown keys, missing seeds, or
// out-of-range values. Noise blocks accept {"preset": "high-noise"|"low-noise"
// |"default", "seed": ...} or explicit probabilities.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

NoiseSpec noise_preset(std::string_view name, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Run directory and manifest. Every stage records a key (hash of its config
// slice and upstream artifact hashes) plus the hashes of its outputs;
// re-running a stage whose key and outputs are intact is a cache hit.
// ---------------------------------------------------------------------------

class RunDir {
public:
    RunDir(std::string root, std::uint64_t config_hash);

    const std::string& root() const { return root_; }
    std::string path(const std::string& relative) const;
    // path() plus creation of the parent directory, for writers that open the
    // file themselves
    std::string path_for_write(const std::string& relative);

    void write_text(const std::string& relative, const std::string& content);
    std::string read_text(const std::string& relative) const;
    bool exists(const std::string& relative) const;

    bool stage_fresh(const std::string& stage, std::uint64_t key) const;
    void record_stage(const std::string& stage, std::uint64_t key,
                      const std::vector<std::string>& outputs);
    bool stage_recorded(const std::string& stage) const;
    std::uint64_t stage_key(const std::string& stage) const;
    std::vector<std::string> stage_names() const;
    // Throws StageDependencyError naming the missing stage.
    void require_stage(const std::string& stage, const std::string& needed_by) const;
    std::vector<std::string> stage_outputs(const std::string& stage) const;

    void save_manifest() const;

private:
    std::string root_;
    std::uint64_t config_hash_ = 0;
    struct StageEntry {
        std::uint64_t key = 0;
        std::map<std::string, std::uint64_t> outputs;  // relative path -> file hash
    };
    std::map<std::string, StageEntry> stages_;
    void load_manifest();
};

// ---------------------------------------------------------------------------
// Stages. Each returns true when it did work, false on a cache hit.
// ---------------------------------------------------------------------------

struct Workspace {
    ExperimentConfig cfg;
    RunDir run;

    Workspace(ExperimentConfig config, std::string root_override = "");
};

bool stage_gen_corpus(Workspace& ws);
bool stage_inject_noise(Workspace& ws);
bool stage_train_aux(Workspace& ws);
bool stage_gen_pseudo(Workspace& ws);
bool stage_train_primary(Workspace& ws);
bool stage_eval(Workspace& ws);
bool stage_sweep_alpha(Workspace& ws);
bool stage_sweep_clean_size(Workspace& ws);
bool stage_sweep_domain(Workspace& ws);
bool stage_sweep_composition(Workspace& ws);
bool stage_verify_theorem(Workspace& ws);
// Rebuilds every emitted CSV from stored artifacts and verifies byte
// identity; writes report/summary.json. Throws on any mismatch.
bool stage_report(Workspace& ws);

// Tag used in artifact file names for a primary training arm.
std::string arm_tag(const pipeline::Composition& comp, double alpha);

// ---------------------------------------------------------------------------
// CLI. Returns a process exit status: 0 ok, 1 usage/config error, 2 stage
// dependency error, 3 numerical failure. Environment overrides:
// DSTLAB_WORKERS, DSTLAB_OUTPUT_ROOT.
// ---------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args);

}  // namespace dstlab::experiment
