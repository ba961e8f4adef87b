#include "dstlab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <json.hpp>

#include "dstlab/errors.hpp"
#include "dstlab/pipeline.hpp"
#include "dstlab/rng.hpp"
#include "dstlab/tracker.hpp"

namespace dstlab::theory {

SiteTable SiteTable::from_corpus(const Corpus& corpus) {
    SiteTable table;
    const Ontology& ont = corpus.ontology;
    for (int d = 0; d < static_cast<int>(corpus.dialogues.size()); ++d) {
        const auto& dlg = corpus.dialogues[static_cast<std::size_t>(d)];
        for (int t = 0; t < static_cast<int>(dlg.turns.size()); ++t) {
            for (int s = 0; s < ont.n_slots(); ++s) {
                table.sites.push_back({d, t, s, ont.n_candidates(s)});
            }
        }
    }
    return table;
}

LabelDraw hard_labels_from_corpus(const SiteTable& table, const Corpus& corpus) {
    LabelDraw draw;
    draw.hard.reserve(table.size());
    for (const auto& site : table.sites) {
        draw.hard.push_back(
            corpus.dialogues[static_cast<std::size_t>(site.dialogue)]
                .turns[static_cast<std::size_t>(site.turn)]
                .state[static_cast<std::size_t>(site.slot)]);
    }
    return draw;
}

ApproxError approx_error(const std::vector<LabelDraw>& draws, const std::vector<int>& truth,
                         const SiteTable& table) {
    if (draws.empty()) throw ConfigError("approx_error: need at least one draw");
    if (truth.size() != table.size()) throw SchemaError("approx_error: truth/site coverage mismatch");
    double total = 0.0;
    for (const auto& draw : draws) {
        if (draw.is_hard()) {
            if (draw.hard.size() != table.size()) {
                throw SchemaError("approx_error: draw/site coverage mismatch");
            }
            for (std::size_t i = 0; i < table.size(); ++i) {
                if (draw.hard[i] != truth[i]) total += 2.0;  // ||e_i - e_j||^2
            }
        } else {
            if (draw.soft.size() != table.size()) {
                throw SchemaError("approx_error: draw/site coverage mismatch");
            }
            for (std::size_t i = 0; i < table.size(); ++i) {
                const auto& v = draw.soft[i];
                if (static_cast<int>(v.size()) != table.sites[i].n_candidates) {
                    throw SchemaError("approx_error: soft vector length mismatch");
                }
                for (int k = 0; k < static_cast<int>(v.size()); ++k) {
                    double diff = v[static_cast<std::size_t>(k)] - (k == truth[i] ? 1.0 : 0.0);
                    total += diff * diff;
                }
            }
        }
    }
    ApproxError err;
    err.value = total / (static_cast<double>(draws.size()) * static_cast<double>(table.size()));
    return err;
}

double combined_error(double y_vanilla, double y_pseudo, double alpha) {
    if (y_vanilla < 0.0 || y_pseudo < 0.0) throw ConfigError("combined_error: errors must be >= 0");
    return alpha * alpha * y_pseudo + (1.0 - alpha) * (1.0 - alpha) * y_vanilla;
}

OptimalAlpha optimal_alpha(double y_vanilla, double y_pseudo) {
    if (y_vanilla < 0.0 || y_pseudo < 0.0) throw ConfigError("optimal_alpha: errors must be >= 0");
    OptimalAlpha out;
    if (y_vanilla == 0.0 && y_pseudo == 0.0) {
        out.alpha = 0.5;
        out.error = 0.0;
        out.degenerate = true;
        return out;
    }
    out.alpha = y_vanilla / (y_vanilla + y_pseudo);
    out.error = y_vanilla * y_pseudo / (y_vanilla + y_pseudo);
    return out;
}

std::vector<double> uniform_alpha_grid(int points) {
    if (points < 2) throw ConfigError("alpha grid needs at least 2 points");
    std::vector<double> grid(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
        grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(points - 1);
    }
    return grid;
}

namespace {

struct DrawStats {
    double mean_sq = 0.0;  // mean_site ||pseudo - truth||^2
    double cross = 0.0;    // mean_site (vanilla - truth)^T (pseudo - truth)
};

double mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double stderr_of_mean(const std::vector<double>& xs) {
    double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    double var = ss / static_cast<double>(xs.size() - 1);
    return std::sqrt(var / static_cast<double>(xs.size()));
}

}  // namespace

TheoremReport verify_theorem(const Ontology& ont, const TheoremSimConfig& cfg) {
    if (cfg.clean_draws < 2) {
        throw ConfigError("verify_theorem: need at least 2 clean draws (variance undefined)");
    }
    if (cfg.alpha_grid.size() < 2) throw ConfigError("verify_theorem: alpha grid too small");
    std::vector<double> grid = cfg.alpha_grid;
    std::sort(grid.begin(), grid.end());
    if (grid.front() != 0.0 || grid.back() != 1.0) {
        throw ConfigError("verify_theorem: alpha grid must cover [0,1]");
    }
    cfg.noise.validate();

    Corpus clean = generate_corpus(ont, cfg.corpus_dialogues, cfg.max_turns,
                                   Rng::derive(cfg.seed, "theorem-corpus").next_u64());
    auto [noisy, log] = inject_noise(clean, cfg.noise);

    SiteTable table = SiteTable::from_corpus(clean);
    LabelDraw truth = hard_labels_from_corpus(table, clean);
    LabelDraw vanilla = hard_labels_from_corpus(table, noisy);
    const std::size_t n_sites = table.size();
    const int M = cfg.clean_draws;

    // Y_vanilla has no draw randomness: mean of ||vanilla - truth||^2.
    double y_vanilla = 0.0;
    for (std::size_t i = 0; i < n_sites; ++i) {
        if (vanilla.hard[i] != truth.hard[i]) y_vanilla += 2.0;
    }
    y_vanilla /= static_cast<double>(n_sites);

    // Running per-site mean of (pseudo - truth) for the bias estimate.
    std::vector<std::vector<double>> eps_sum(n_sites);
    for (std::size_t i = 0; i < n_sites; ++i) {
        eps_sum[i].assign(static_cast<std::size_t>(table.sites[i].n_candidates), 0.0);
    }

    std::vector<DrawStats> stats(static_cast<std::size_t>(M));

    if (cfg.proxy == PseudoProxyKind::RealAux) {
        RealAuxParams rp = cfg.real.value_or(RealAuxParams{});
        Corpus pool = generate_corpus(ont, rp.clean_pool_dialogues, cfg.max_turns,
                                      Rng::derive(cfg.seed, "theorem-clean-pool").next_u64());
        pipeline::TrackerTrainScale scale;
        scale.d_model = rp.d_model;
        scale.n_layers = rp.n_layers;
        scale.epochs = rp.epochs;
        for (int m = 0; m < M; ++m) {
            Rng rng = Rng::derive(cfg.seed, "draw/" + std::to_string(m));
            Corpus subset;
            subset.ontology = pool.ontology;
            std::vector<int> order(pool.dialogues.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            rng.shuffle(order);
            int take = std::max(1, static_cast<int>(std::llround(
                                       rp.subset_fraction * static_cast<double>(pool.dialogues.size()))));
            std::sort(order.begin(), order.begin() + take);
            for (int i = 0; i < take; ++i) {
                subset.dialogues.push_back(pool.dialogues[static_cast<std::size_t>(order[i])]);
            }
            std::vector<int> pseudo =
                pipeline::tiny_aux_pseudo_labels(subset, noisy, scale, rng.next_u64());

            DrawStats st;
            for (std::size_t i = 0; i < n_sites; ++i) {
                int p = pseudo[i], t = truth.hard[i], v = vanilla.hard[i];
                if (p != t) st.mean_sq += 2.0;
                // (e_v - e_t) . (e_p - e_t)
                st.cross += (p == v ? 1.0 : 0.0) - (p == t ? 1.0 : 0.0) - (v == t ? 1.0 : 0.0) + 1.0;
                eps_sum[i][static_cast<std::size_t>(p)] += 1.0;
                eps_sum[i][static_cast<std::size_t>(t)] -= 1.0;
            }
            st.mean_sq /= static_cast<double>(n_sites);
            st.cross /= static_cast<double>(n_sites);
            stats[static_cast<std::size_t>(m)] = st;
        }
    } else {
        double rho = cfg.proxy == PseudoProxyKind::Correlated ? cfg.proxy_rho : 0.0;
        for (int m = 0; m < M; ++m) {
            Rng rng = Rng::derive(cfg.seed, "draw/" + std::to_string(m));
            DrawStats st;
            for (std::size_t i = 0; i < n_sites; ++i) {
                int k = table.sites[i].n_candidates;
                int t = truth.hard[i], v = vanilla.hard[i];
                double sq = 0.0;
                double cross = 0.0;
                for (int c = 0; c < k; ++c) {
                    double eps = cfg.proxy_sigma * rng.normal();
                    if (rho != 0.0 && v != t) {
                        if (c == v) eps += rho;
                        if (c == t) eps -= rho;
                    }
                    sq += eps * eps;
                    if (v != t) {
                        if (c == v) cross += eps;
                        if (c == t) cross -= eps;
                    }
                    eps_sum[i][static_cast<std::size_t>(c)] += eps;
                }
                st.mean_sq += sq;
                st.cross += cross;
            }
            st.mean_sq /= static_cast<double>(n_sites);
            st.cross /= static_cast<double>(n_sites);
            stats[static_cast<std::size_t>(m)] = st;
        }
    }

    std::vector<double> sq_by_draw(static_cast<std::size_t>(M));
    std::vector<double> cross_by_draw(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) {
        sq_by_draw[static_cast<std::size_t>(m)] = stats[static_cast<std::size_t>(m)].mean_sq;
        cross_by_draw[static_cast<std::size_t>(m)] = stats[static_cast<std::size_t>(m)].cross;
    }
    double y_pseudo = mean(sq_by_draw);
    double cross = mean(cross_by_draw);
    double cross_se = stderr_of_mean(cross_by_draw);

    double bias = 0.0;
    for (std::size_t i = 0; i < n_sites; ++i) {
        double sq = 0.0;
        for (double e : eps_sum[i]) {
            double avg = e / static_cast<double>(M);
            sq += avg * avg;
        }
        bias += sq;
    }
    bias /= static_cast<double>(n_sites);

    TheoremReport report;
    report.y_vanilla = y_vanilla;
    report.y_pseudo = y_pseudo;
    report.bias_estimate = bias;
    report.cross_term = cross;
    report.cross_term_stderr = cross_se;
    report.draws = M;

    OptimalAlpha opt = optimal_alpha(y_vanilla, y_pseudo);
    report.closed_form_alpha = opt.alpha;
    report.closed_form_minimum = opt.error;
    report.degenerate = opt.degenerate;

    double grid_step = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) grid_step = std::max(grid_step, grid[i] - grid[i - 1]);

    std::vector<double> x_m(static_cast<std::size_t>(M));
    double min_empirical = std::numeric_limits<double>::infinity();
    double argmin = 0.0;
    report.curve.reserve(grid.size());
    bool within = true;
    double max_sigmas = 0.0;
    for (double a : grid) {
        for (int m = 0; m < M; ++m) {
            const DrawStats& st = stats[static_cast<std::size_t>(m)];
            x_m[static_cast<std::size_t>(m)] =
                a * a * st.mean_sq + (1.0 - a) * (1.0 - a) * y_vanilla + 2.0 * a * (1.0 - a) * st.cross;
        }
        GridPoint pt;
        pt.alpha = a;
        pt.empirical = mean(x_m);
        pt.stderr_curve = stderr_of_mean(x_m);
        pt.fitted = combined_error(y_vanilla, y_pseudo, a);
        pt.deviation = std::fabs(pt.empirical - pt.fitted);
        pt.stderr_deviation = 2.0 * a * (1.0 - a) * cross_se;
        if (pt.empirical < min_empirical) {
            min_empirical = pt.empirical;
            argmin = a;
        }
        if (pt.stderr_deviation > 0.0) {
            max_sigmas = std::max(max_sigmas, pt.deviation / pt.stderr_deviation);
        } else if (pt.deviation > 1e-12) {
            max_sigmas = std::numeric_limits<double>::infinity();
        }
        if (pt.deviation > 3.0 * pt.stderr_deviation + 1e-15) within = false;
        report.curve.push_back(pt);
    }
    report.empirical_argmin = argmin;
    report.max_deviation_sigmas = max_sigmas;
    report.curve_within_3_sigma = within;
    report.argmin_within_one_step = std::fabs(argmin - opt.alpha) <= grid_step + 1e-12;
    if (y_vanilla > 0.0 && y_pseudo > 0.0) {
        report.strict_inequality_holds = min_empirical < std::min(y_vanilla, y_pseudo);
    } else {
        report.strict_inequality_holds = false;
    }
    return report;
}

std::string TheoremReport::to_json() const {
    nlohmann::ordered_json doc;
    doc["y_vanilla"] = y_vanilla;
    doc["y_pseudo"] = y_pseudo;
    doc["draws"] = draws;
    doc["closed_form_alpha"] = closed_form_alpha;
    doc["closed_form_minimum"] = closed_form_minimum;
    doc["degenerate"] = degenerate;
    doc["empirical_argmin"] = empirical_argmin;
    doc["bias_estimate"] = bias_estimate;
    doc["cross_term"] = cross_term;
    doc["cross_term_stderr"] = cross_term_stderr;
    doc["max_deviation_sigmas"] = max_deviation_sigmas;
    doc["curve_within_3_sigma"] = curve_within_3_sigma;
    doc["argmin_within_one_step"] = argmin_within_one_step;
    doc["strict_inequality_holds"] = strict_inequality_holds;
    nlohmann::ordered_json curve_json = nlohmann::ordered_json::array();
    for (const auto& pt : curve) {
        nlohmann::ordered_json pj;
        pj["alpha"] = pt.alpha;
        pj["empirical"] = pt.empirical;
        pj["fitted"] = pt.fitted;
        pj["stderr"] = pt.stderr_curve;
        pj["deviation"] = pt.deviation;
        pj["stderr_deviation"] = pt.stderr_deviation;
        curve_json.push_back(std::move(pj));
    }
    doc["curve"] = std::move(curve_json);
    return doc.dump(1);
}

std::string TheoremReport::curve_csv() const {
    std::string out = "alpha,empirical,fitted,stderr\n";
    char buf[160];
    for (const auto& pt : curve) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.9f,%.9f,%.9f\n", pt.alpha, pt.empirical, pt.fitted,
                      pt.stderr_curve);
        out += buf;
    }
    return out;
}

}  // namespace dstlab::theory
