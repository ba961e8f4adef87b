#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dstlab/corpus.hpp"
#include "dstlab/errors.hpp"
#include "dstlab/rng.hpp"
#include "dstlab/theory.hpp"

using namespace dstlab;
using namespace dstlab::theory;

namespace {

SiteTable toy_table(const std::vector<int>& candidate_counts) {
    SiteTable table;
    for (std::size_t i = 0; i < candidate_counts.size(); ++i) {
        table.sites.push_back({0, static_cast<int>(i) / 2, static_cast<int>(i) % 2,
                               candidate_counts[i]});
    }
    return table;
}

// Brute-force evaluator: materialize every label as a dense vector and sum
// squared distances with plain loops.
double brute_force_error(const std::vector<LabelDraw>& draws, const std::vector<int>& truth,
                         const SiteTable& table) {
    double total = 0.0;
    for (const auto& draw : draws) {
        for (std::size_t i = 0; i < table.size(); ++i) {
            int k = table.sites[i].n_candidates;
            std::vector<double> vec(static_cast<std::size_t>(k), 0.0);
            if (draw.is_hard()) vec[static_cast<std::size_t>(draw.hard[i])] = 1.0;
            else vec = draw.soft[i];
            for (int c = 0; c < k; ++c) {
                double diff = vec[static_cast<std::size_t>(c)] - (c == truth[i] ? 1.0 : 0.0);
                total += diff * diff;
            }
        }
    }
    return total / (static_cast<double>(draws.size()) * static_cast<double>(table.size()));
}

}  // namespace

TEST_CASE("approx_error is zero iff draws equal truth") {
    SiteTable table = toy_table({3, 4, 5});
    std::vector<int> truth = {0, 2, 4};
    LabelDraw same;
    same.hard = truth;
    CHECK(approx_error({same, same}, truth, table).value == doctest::Approx(0.0));
    LabelDraw off;
    off.hard = {0, 2, 3};
    CHECK(approx_error({same, off}, truth, table).value > 0.0);
}

TEST_CASE("a single wrong one-hot contributes squared distance 2") {
    SiteTable table = toy_table({4});
    std::vector<int> truth = {1};
    LabelDraw wrong;
    wrong.hard = {3};
    CHECK(approx_error({wrong}, truth, table).value == doctest::Approx(2.0));
}

TEST_CASE("three draws on a 2-sample 2-slot toy match the exhaustive hand sum") {
    SiteTable table = toy_table({3, 3, 4, 4});
    std::vector<int> truth = {0, 1, 2, 3};
    LabelDraw d1, d2, d3;
    d1.hard = {0, 1, 2, 0};  // one wrong
    d2.hard = {1, 1, 3, 3};  // two wrong
    d3.soft = {{0.5, 0.5, 0.0}, {0.0, 1.0, 0.0}, {0.25, 0.25, 0.25, 0.25}, {0.0, 0.0, 0.4, 0.6}};
    std::vector<LabelDraw> draws = {d1, d2, d3};
    double expected = brute_force_error(draws, truth, table);
    CHECK(approx_error(draws, truth, table).value == doctest::Approx(expected).epsilon(1e-15));
    // spot-check one term by hand: d3 site 0 = ||(.5,.5,0) - (1,0,0)||^2 = .25+.25 = .5
    double hand = (2.0 + 4.0 + (0.5 + 0.0 + 0.75 + (0.16 + 0.16))) / (3.0 * 4.0);
    CHECK(approx_error(draws, truth, table).value == doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("alpha-combined one-hot label sets match the brute-force evaluator exactly") {
    // two fixed label sets over a 5-site toy, both differing from truth and
    // from each other on some sites; no draw randomness
    SiteTable table = toy_table({4, 4, 5, 3, 6});
    std::vector<int> truth = {1, 0, 2, 2, 5};
    std::vector<int> vanilla = {1, 3, 2, 0, 4};  // wrong at sites 1, 3, 4
    std::vector<int> pseudo = {0, 0, 4, 0, 5};   // wrong at sites 0, 2, 3
    for (double alpha : {0.0, 0.25, 0.4, 0.75, 1.0}) {
        LabelDraw combined;
        combined.soft.resize(table.size());
        for (std::size_t i = 0; i < table.size(); ++i) {
            std::vector<double> v(static_cast<std::size_t>(table.sites[i].n_candidates), 0.0);
            v[static_cast<std::size_t>(pseudo[i])] += alpha;
            v[static_cast<std::size_t>(vanilla[i])] += 1.0 - alpha;
            combined.soft[i] = v;
        }
        double got = approx_error({combined}, truth, table).value;
        double expected = brute_force_error({combined}, truth, table);
        CHECK(got == doctest::Approx(expected).epsilon(1e-15));
        // per-site closed form: a^2*2 at pseudo-only errors, (1-a)^2*2 at
        // vanilla-only errors, and the full quadratic where both are wrong
        auto site_err = [&](std::size_t i) {
            bool pw = pseudo[i] != truth[i], vw = vanilla[i] != truth[i];
            if (!pw && !vw) return 0.0;
            if (pw && !vw) return 2.0 * alpha * alpha;
            if (!pw && vw) return 2.0 * (1.0 - alpha) * (1.0 - alpha);
            // both wrong; cross term depends on whether they agree
            if (pseudo[i] == vanilla[i]) return 2.0;
            return alpha * alpha + (1.0 - alpha) * (1.0 - alpha) + 1.0;
        };
        double hand = 0.0;
        for (std::size_t i = 0; i < table.size(); ++i) hand += site_err(i);
        hand /= static_cast<double>(table.size());
        CHECK(got == doctest::Approx(hand).epsilon(1e-12));
    }
}

TEST_CASE("approx_error validates coverage and draw count") {
    SiteTable table = toy_table({3, 3});
    std::vector<int> truth = {0, 1};
    CHECK_THROWS_AS(approx_error({}, truth, table), ConfigError);
    LabelDraw short_draw;
    short_draw.hard = {0};
    CHECK_THROWS_AS(approx_error({short_draw}, truth, table), SchemaError);
}

TEST_CASE("closed forms: the worked example and the boundaries") {
    OptimalAlpha opt = optimal_alpha(0.2, 0.3);
    CHECK(opt.alpha == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(opt.error == doctest::Approx(0.12).epsilon(1e-15));
    CHECK(!opt.degenerate);

    OptimalAlpha perfect_pseudo = optimal_alpha(0.2, 0.0);
    CHECK(perfect_pseudo.alpha == doctest::Approx(1.0));
    CHECK(perfect_pseudo.error == doctest::Approx(0.0));

    CHECK(combined_error(0.2, 0.3, 0.0) == doctest::Approx(0.2));
    CHECK(combined_error(0.2, 0.3, 1.0) == doctest::Approx(0.3));

    OptimalAlpha degen = optimal_alpha(0.0, 0.0);
    CHECK(degen.degenerate);
    CHECK(degen.alpha == doctest::Approx(0.5));
    CHECK(degen.error == doctest::Approx(0.0));
}

TEST_CASE("the quadratic's analytic minimizer matches the closed form on random pairs") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        double yv = 1e-3 + rng.uniform();
        double yp = 1e-3 + rng.uniform();
        OptimalAlpha opt = optimal_alpha(yv, yp);
        // analytic argmin of a^2 yp + (1-a)^2 yv
        double analytic = yv / (yv + yp);
        CHECK(std::fabs(opt.alpha - analytic) < 1e-12);
        CHECK(std::fabs(opt.error - combined_error(yv, yp, opt.alpha)) < 1e-12);
        // strict convexity: midpoints lie strictly below endpoints' chord
        double a1 = 0.2, a2 = 0.8;
        double mid = combined_error(yv, yp, 0.5 * (a1 + a2));
        double chord = 0.5 * (combined_error(yv, yp, a1) + combined_error(yv, yp, a2));
        CHECK(mid < chord);
        // Y* <= min(Yv, Yp), strictly when both positive
        CHECK(opt.error < std::min(yv, yp));
    }
    // boundary: one error zero makes Y* equal (not below) the minimum
    CHECK(optimal_alpha(0.0, 0.4).error == doctest::Approx(0.0));
}

TEST_CASE("zero-bias independent proxy satisfies the quadratic decomposition") {
    TheoremSimConfig cfg;
    cfg.corpus_dialogues = 60;
    cfg.max_turns = 4;
    cfg.noise = NoiseSpec{0.15, 0.05, 0.10, 91};
    cfg.clean_draws = 200;
    cfg.alpha_grid = uniform_alpha_grid(11);
    cfg.proxy = PseudoProxyKind::Independent;
    cfg.proxy_sigma = 0.08;
    cfg.seed = 2025;
    TheoremReport report = verify_theorem(desk_ontology(), cfg);

    CHECK(report.curve_within_3_sigma);
    CHECK(report.argmin_within_one_step);
    CHECK(report.strict_inequality_holds);
    CHECK(report.bias_estimate < 0.01);
    // analytically known proxy moments: Y_pseudo = sigma^2 * mean candidate count
    double mean_k = 0.0;
    {
        Ontology ont = desk_ontology();
        for (int s = 0; s < ont.n_slots(); ++s) mean_k += ont.n_candidates(s);
        mean_k /= ont.n_slots();
    }
    CHECK(report.y_pseudo == doctest::Approx(cfg.proxy_sigma * cfg.proxy_sigma * mean_k).epsilon(0.05));
    CHECK(std::fabs(report.cross_term) < 5.0 * report.cross_term_stderr + 1e-12);
    // curve endpoints are exact
    CHECK(report.curve.front().alpha == 0.0);
    CHECK(report.curve.front().empirical == doctest::Approx(report.y_vanilla).epsilon(1e-12));
    CHECK(report.curve.back().empirical == doctest::Approx(report.y_pseudo).epsilon(1e-12));
}

TEST_CASE("correlated proxy exposes the broken independence assumption") {
    TheoremSimConfig base;
    base.corpus_dialogues = 60;
    base.max_turns = 4;
    base.noise = NoiseSpec{0.15, 0.05, 0.10, 91};
    base.clean_draws = 200;
    base.alpha_grid = uniform_alpha_grid(11);
    base.proxy_sigma = 0.08;
    base.seed = 2025;

    TheoremSimConfig indep = base;
    indep.proxy = PseudoProxyKind::Independent;
    TheoremSimConfig corr = base;
    corr.proxy = PseudoProxyKind::Correlated;
    corr.proxy_rho = 0.5;

    TheoremReport r_ind = verify_theorem(desk_ontology(), indep);
    TheoremReport r_cor = verify_theorem(desk_ontology(), corr);

    CHECK(std::fabs(r_cor.cross_term) > 5.0 * r_cor.cross_term_stderr);
    CHECK(r_cor.max_deviation_sigmas > r_ind.max_deviation_sigmas);
    CHECK(!r_cor.curve_within_3_sigma);
}

TEST_CASE("verify_theorem validates its configuration") {
    TheoremSimConfig cfg;
    cfg.clean_draws = 1;  // variance undefined
    cfg.alpha_grid = uniform_alpha_grid(5);
    CHECK_THROWS_AS(verify_theorem(desk_ontology(), cfg), ConfigError);
    cfg.clean_draws = 10;
    cfg.alpha_grid = {0.2, 0.4};  // does not cover [0,1]
    CHECK_THROWS_AS(verify_theorem(desk_ontology(), cfg), ConfigError);
}

TEST_CASE("theorem report serializes curve and csv consistently") {
    TheoremSimConfig cfg;
    cfg.corpus_dialogues = 20;
    cfg.max_turns = 3;
    cfg.noise = NoiseSpec{0.2, 0.05, 0.1, 5};
    cfg.clean_draws = 50;
    cfg.alpha_grid = uniform_alpha_grid(5);
    cfg.proxy = PseudoProxyKind::Independent;
    cfg.proxy_sigma = 0.1;
    cfg.seed = 77;
    TheoremReport report = verify_theorem(desk_ontology(), cfg);
    std::string csv = report.curve_csv();
    CHECK(csv.rfind("alpha,empirical,fitted,stderr\n", 0) == 0);
    int lines = 0;
    for (char c : csv) {
        if (c == '\n') ++lines;
    }
    CHECK(lines == 6);  // header + 5 grid points
    CHECK(report.to_json().find("\"curve\"") != std::string::npos);
}

TEST_CASE("real-auxiliary path produces a complete report at tiny scale") {
    TheoremSimConfig cfg;
    cfg.corpus_dialogues = 8;
    cfg.max_turns = 3;
    cfg.noise = NoiseSpec{0.2, 0.05, 0.1, 5};
    cfg.clean_draws = 2;
    cfg.alpha_grid = uniform_alpha_grid(5);
    cfg.proxy = PseudoProxyKind::RealAux;
    RealAuxParams real;
    real.clean_pool_dialogues = 6;
    real.subset_fraction = 0.5;
    real.epochs = 1;
    real.d_model = 16;
    real.n_layers = 1;
    cfg.real = real;
    cfg.seed = 13;
    TheoremReport report = verify_theorem(desk_ontology(), cfg);
    CHECK(report.draws == 2);
    CHECK(report.y_pseudo > 0.0);
    CHECK(report.curve.size() == 5);
    // hard pseudo labels: Y at alpha=1 equals the empirical pseudo error
    CHECK(report.curve.back().empirical == doctest::Approx(report.y_pseudo).epsilon(1e-12));
}
