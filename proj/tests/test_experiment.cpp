#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dstlab/errors.hpp"
#include "dstlab/experiment.hpp"
#include "dstlab/hash.hpp"

using namespace dstlab;
using namespace dstlab::experiment;
namespace fs = std::filesystem;

namespace {

// A complete config small enough for fast end-to-end stage tests.
std::string micro_config_json(const std::string& out_dir) {
    return R"({
  "output_dir": ")" + out_dir + R"(",
  "workers": 2,
  "corpus": {"train_dialogues": 24, "clean_dialogues": 8, "test_dialogues": 8,
             "max_turns": 3, "seed": 11},
  "noise": {"preset": "high-noise", "seed": 13},
  "tracker": {"d_model": 32, "n_layers": 1, "n_heads_encoder": 2,
              "n_heads_slot_attention": 2, "max_len": 48},
  "aux_train": {"epochs": 2, "seed": 17, "peak_lr": 0.004},
  "primary_train": {"composition": "T+P", "alpha": 0.6, "epochs": 2, "seed": 19,
                    "peak_lr": 0.004},
  "sweeps": {"alpha_grid": [0.0, 0.5, 1.0], "clean_fractions": [0.5, 1.0],
             "compositions": ["T", "T+P"], "domains": ["hotel", "train"]},
  "theorem": {"corpus_dialogues": 20, "max_turns": 3, "clean_draws": 40,
              "grid_points": 5, "noise": {"preset": "default", "seed": 23},
              "proxy": "independent", "sigma": 0.1, "seed": 29}
})";
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dstlab_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config parsing rejects unknown keys anywhere") {
    CHECK_THROWS_AS(parse_config(R"({"output_dir": "x", "bogus": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"output_dir": "x",
        "corpus": {"seed": 1, "typo_key": 2},
        "noise": {"preset": "default", "seed": 1},
        "aux_train": {"seed": 1}, "primary_train": {"seed": 1}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config("not json"), ConfigError);
}

TEST_CASE("seeds must be explicit") {
    CHECK_THROWS_AS(parse_config(R"({"output_dir": "x",
        "corpus": {"train_dialogues": 5},
        "noise": {"preset": "default", "seed": 1},
        "aux_train": {"seed": 1}, "primary_train": {"seed": 1}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"output_dir": "x",
        "corpus": {"seed": 1},
        "noise": {"preset": "default"},
        "aux_train": {"seed": 1}, "primary_train": {"seed": 1}})"),
                    ConfigError);
}

TEST_CASE("noise presets resolve to the documented probabilities") {
    NoiseSpec high = noise_preset("high-noise", 5);
    CHECK(high.p_missing == doctest::Approx(0.30));
    CHECK(high.p_spurious == doctest::Approx(0.10));
    CHECK(high.p_wrong == doctest::Approx(0.20));
    NoiseSpec low = noise_preset("low-noise", 5);
    CHECK(low.p_missing == doctest::Approx(0.08));
    NoiseSpec def = noise_preset("default", 5);
    CHECK(def.p_missing == doctest::Approx(0.15));
    CHECK(def.p_spurious == doctest::Approx(0.05));
    CHECK(def.p_wrong == doctest::Approx(0.10));
    CHECK_THROWS_AS(noise_preset("extreme", 5), ConfigError);
}

TEST_CASE("config hash is stable and sensitive") {
    TempDir tmp;
    ExperimentConfig a = parse_config(micro_config_json((tmp.path / "run").string()));
    ExperimentConfig b = parse_config(micro_config_json((tmp.path / "run").string()));
    CHECK(a.content_hash() == b.content_hash());
    std::string changed = micro_config_json((tmp.path / "run").string());
    changed.replace(changed.find("\"seed\": 11"), 10, "\"seed\": 12");
    CHECK(parse_config(changed).content_hash() != a.content_hash());
}

TEST_CASE("stage dependencies are enforced with the required stage named") {
    TempDir tmp;
    ExperimentConfig cfg = parse_config(micro_config_json((tmp.path / "run").string()));
    Workspace ws(cfg);
    CHECK_THROWS_AS(stage_inject_noise(ws), StageDependencyError);
    try {
        stage_train_aux(ws);
        FAIL("expected a stage dependency error");
    } catch (const StageDependencyError& e) {
        CHECK(std::string(e.what()).find("gen-corpus") != std::string::npos);
    }
}

TEST_CASE("pipeline stages run, cache and stay byte-identical across reruns") {
    TempDir tmp;
    std::string run1 = (tmp.path / "run1").string();
    std::string run2 = (tmp.path / "run2").string();

    auto drive = [&](const std::string& dir) {
        ExperimentConfig cfg = parse_config(micro_config_json(dir));
        Workspace ws(cfg);
        CHECK(stage_gen_corpus(ws));
        CHECK(stage_inject_noise(ws));
        CHECK(stage_train_aux(ws));
        CHECK(stage_gen_pseudo(ws));
        CHECK(stage_train_primary(ws));
        CHECK(stage_eval(ws));
        CHECK(stage_sweep_alpha(ws));
        CHECK(stage_verify_theorem(ws));
        CHECK(stage_report(ws));
    };
    drive(run1);

    // every stage is now a cache hit
    {
        ExperimentConfig cfg = parse_config(micro_config_json(run1));
        Workspace ws(cfg);
        CHECK(!stage_gen_corpus(ws));
        CHECK(!stage_inject_noise(ws));
        CHECK(!stage_train_aux(ws));
        CHECK(!stage_gen_pseudo(ws));
        CHECK(!stage_train_primary(ws));
        CHECK(!stage_eval(ws));
        CHECK(!stage_sweep_alpha(ws));
        CHECK(!stage_verify_theorem(ws));
    }

    // an independent run with the identical config reproduces every CSV byte for byte
    drive(run2);
    for (const char* rel : {"sweeps/alpha.csv", "theorem/curve.csv",
                            "eval/metrics_T+P_a0.60.json", "corpus/noise_log.jsonl"}) {
        CHECK(slurp(fs::path(run1) / rel) == slurp(fs::path(run2) / rel));
    }

    // the alpha sweep emitted one row per grid point
    std::string csv = slurp(fs::path(run1) / "sweeps/alpha.csv");
    int lines = 0;
    for (char c : csv) {
        if (c == '\n') ++lines;
    }
    CHECK(lines == 4);  // header + 3 grid points
    CHECK(csv.rfind("alpha,joint_goal_accuracy,joint_turn_accuracy,slot_accuracy\n", 0) == 0);

    // tampering with an artifact invalidates the cache
    {
        std::ofstream out(fs::path(run1) / "labels/bundle.jsonl", std::ios::app);
        out << "\n";
    }
    ExperimentConfig cfg = parse_config(micro_config_json(run1));
    Workspace ws(cfg);
    CHECK(stage_gen_pseudo(ws));  // re-runs
}

TEST_CASE("manifest refuses a different config in the same run directory") {
    TempDir tmp;
    std::string dir = (tmp.path / "run").string();
    ExperimentConfig cfg = parse_config(micro_config_json(dir));
    {
        Workspace ws(cfg);
        stage_gen_corpus(ws);
    }
    std::string changed = micro_config_json(dir);
    changed.replace(changed.find("\"seed\": 11"), 10, "\"seed\": 99");
    ExperimentConfig other = parse_config(changed);
    auto open_same_dir = [&]() { Workspace ws2(other); };
    CHECK_THROWS_AS(open_same_dir(), ConfigError);
}

TEST_CASE("cli maps errors to documented exit codes") {
    TempDir tmp;
    std::string cfg_path = (tmp.path / "cfg.json").string();
    {
        std::ofstream out(cfg_path);
        out << micro_config_json((tmp.path / "run").string());
    }
    CHECK(run_cli({}) == 1);
    CHECK(run_cli({"no-such-subcommand", "-c", cfg_path}) == 1);
    CHECK(run_cli({"gen-corpus"}) == 1);                          // missing --config
    CHECK(run_cli({"gen-corpus", "-c", "/nonexistent.json"}) == 1);
    CHECK(run_cli({"train-aux", "-c", cfg_path}) == 2);           // missing upstream stage
    CHECK(run_cli({"gen-corpus", "-c", cfg_path}) == 0);
    CHECK(run_cli({"inject-noise", "-c", cfg_path}) == 0);
    CHECK(run_cli({"--help"}) == 0);

    // bad config content -> 1
    std::string bad_path = (tmp.path / "bad.json").string();
    {
        std::ofstream out(bad_path);
        out << R"({"output_dir": "x", "unknown_key": true})";
    }
    CHECK(run_cli({"gen-corpus", "-c", bad_path}) == 1);
}

TEST_CASE("domain sweep filters the clean set and emits reference rows") {
    TempDir tmp;
    ExperimentConfig cfg = parse_config(micro_config_json((tmp.path / "run").string()));
    Workspace ws(cfg);
    stage_gen_corpus(ws);
    stage_inject_noise(ws);
    stage_train_aux(ws);
    stage_gen_pseudo(ws);
    CHECK(stage_sweep_domain(ws));
    std::string csv = slurp(tmp.path / "run" / "sweeps/domain.csv");
    CHECK(csv.find("\nhotel,") != std::string::npos);
    CHECK(csv.find("\ntrain,") != std::string::npos);
    CHECK(csv.find("\nnone,") != std::string::npos);
    CHECK(csv.find("\nall,0,") != std::string::npos);
    CHECK(!stage_sweep_domain(ws));  // cache hit
}

TEST_CASE("environment overrides: worker count and output root") {
    TempDir tmp;
    std::string cfg_path = (tmp.path / "cfg.json").string();
    {
        std::ofstream out(cfg_path);
        out << micro_config_json("relative_run");
    }
    setenv("DSTLAB_OUTPUT_ROOT", tmp.path.c_str(), 1);
    setenv("DSTLAB_WORKERS", "1", 1);
    CHECK(run_cli({"gen-corpus", "-c", cfg_path}) == 0);
    unsetenv("DSTLAB_OUTPUT_ROOT");
    unsetenv("DSTLAB_WORKERS");
    CHECK(fs::exists(tmp.path / "relative_run" / "corpus" / "train_true.json"));
}

TEST_CASE("a diverging run maps to the numerical-failure exit code") {
    TempDir tmp;
    std::string dir = (tmp.path / "run").string();
    std::string json = micro_config_json(dir);
    // the first peak_lr belongs to aux_train
    json.replace(json.find("\"peak_lr\": 0.004"), std::string("\"peak_lr\": 0.004").size(),
                 "\"peak_lr\": 1e18");
    std::string cfg_path = (tmp.path / "cfg.json").string();
    {
        std::ofstream out(cfg_path);
        out << json;
    }
    REQUIRE(run_cli({"gen-corpus", "-c", cfg_path}) == 0);
    REQUIRE(run_cli({"inject-noise", "-c", cfg_path}) == 0);
    CHECK(run_cli({"train-aux", "-c", cfg_path}) == 3);
}

TEST_CASE("composition sweep emits one row per mode") {
    TempDir tmp;
    ExperimentConfig cfg = parse_config(micro_config_json((tmp.path / "run").string()));
    Workspace ws(cfg);
    stage_gen_corpus(ws);
    stage_inject_noise(ws);
    stage_train_aux(ws);
    stage_gen_pseudo(ws);
    CHECK(stage_sweep_composition(ws));
    std::string csv = slurp(tmp.path / "run" / "sweeps/composition.csv");
    CHECK(csv.find("\nT,") != std::string::npos);
    CHECK(csv.find("\nT+P,") != std::string::npos);
    CHECK(stage_report(ws));
    std::string summary = slurp(tmp.path / "run" / "report/summary.json");
    CHECK(summary.find("\"ok\": true") != std::string::npos);
    CHECK(summary.find("\"ok\": false") == std::string::npos);
}
