#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dstlab/corpus.hpp"
#include "dstlab/dialogue.hpp"

namespace dstlab::theory {

// Flattened (dialogue, turn, slot) addressing over a corpus. Label draws and
// truth are stored site-major.
struct SiteTable {
    struct Site {
        int dialogue = 0;
        int turn = 0;
        int slot = 0;
        int n_candidates = 0;
    };
    std::vector<Site> sites;

    static SiteTable from_corpus(const Corpus& corpus);
    std::size_t size() const { return sites.size(); }
};

// One label assignment over a site table: hard candidate indices, or dense
// per-site vectors (which need not be valid distributions; the approximation
// error is plain vector algebra).
struct LabelDraw {
    std::vector<int> hard;                   // size == n_sites, or empty
    std::vector<std::vector<double>> soft;   // size == n_sites, or empty

    bool is_hard() const { return !hard.empty(); }
};

LabelDraw hard_labels_from_corpus(const SiteTable& table, const Corpus& corpus);

// Mean squared L2 distance between label vectors and true one-hots, averaged
// over draws, samples and slots. value == 0 iff every draw equals truth.
struct ApproxError {
    double value = 0.0;
};

ApproxError approx_error(const std::vector<LabelDraw>& draws, const std::vector<int>& truth,
                         const SiteTable& table);

// Y(alpha) = alpha^2 * Y_pseudo + (1-alpha)^2 * Y_vanilla.
double combined_error(double y_vanilla, double y_pseudo, double alpha);

struct OptimalAlpha {
    double alpha = 0.5;
    double error = 0.0;
    bool degenerate = false;  // both inputs zero: any alpha is optimal
};

// alpha* = Yv / (Yv + Yp), Y* = Yv*Yp / (Yv + Yp).
OptimalAlpha optimal_alpha(double y_vanilla, double y_pseudo);

enum class PseudoProxyKind {
    Independent,  // v = truth + sigma*z, zero bias, independent of vanilla noise
    Correlated,   // v = truth + sigma*z + rho*(vanilla - truth)
    RealAux,      // retrain the auxiliary tracker per clean draw
};

struct GridPoint {
    double alpha = 0.0;
    double empirical = 0.0;
    double fitted = 0.0;
    double stderr_curve = 0.0;      // MC standard error of the empirical value
    double deviation = 0.0;         // |empirical - fitted|
    double stderr_deviation = 0.0;  // MC standard error of that deviation
};

struct TheoremReport {
    double y_vanilla = 0.0;
    double y_pseudo = 0.0;
    std::vector<GridPoint> curve;
    double empirical_argmin = 0.0;
    double closed_form_alpha = 0.0;
    double closed_form_minimum = 0.0;
    bool degenerate = false;
    double bias_estimate = 0.0;        // mean_site ||mean_m(v - truth)||^2
    double cross_term = 0.0;           // mean_m mean_site (vanilla-truth)^T (pseudo-truth)
    double cross_term_stderr = 0.0;
    double max_deviation_sigmas = 0.0;  // max over grid of deviation / stderr_deviation
    bool curve_within_3_sigma = false;
    bool argmin_within_one_step = false;
    bool strict_inequality_holds = false;
    int draws = 0;

    std::string to_json() const;
    std::string curve_csv() const;  // columns: alpha, empirical, fitted, stderr
};

struct RealAuxParams {
    // Fraction of the clean pool resampled per draw, and the tracker/training
    // scale used for each retraining.
    double subset_fraction = 0.6;
    int clean_pool_dialogues = 12;
    int epochs = 2;
    int d_model = 16;
    int n_layers = 1;
};

struct TheoremSimConfig {
    int corpus_dialogues = 200;
    int max_turns = 4;
    NoiseSpec noise;  // produces the vanilla labels
    int clean_draws = 200;
    std::vector<double> alpha_grid;  // must cover [0,1]
    PseudoProxyKind proxy = PseudoProxyKind::Independent;
    double proxy_sigma = 0.08;
    double proxy_rho = 0.0;
    std::optional<RealAuxParams> real;
    std::uint64_t seed = 0;
};

std::vector<double> uniform_alpha_grid(int points);

// Draws clean_draws pseudo-label realizations, estimates Y_vanilla, Y_pseudo,
// the empirical Y(alpha) curve with Monte Carlo standard errors, the realized
// bias and vanilla/pseudo cross term, and checks the quadratic decomposition,
// the argmin location and the strict-inequality claim.
TheoremReport verify_theorem(const Ontology& ont, const TheoremSimConfig& cfg);

}  // namespace dstlab::theory
