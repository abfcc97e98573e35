// Acceptance suite: runs the statistical reproduction protocol plus the
// numeric invariants end to end and prints one PASS/FAIL line per criterion.
// Exit code is the number of failed criteria.
//
// Usage: acceptance_test [--threads N] [--keep-artifacts]

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "../tests/test_helpers.hpp"
#include "tierank/analysis.hpp"
#include "tierank/evaluation.hpp"
#include "tierank/io.hpp"
#include "tierank/model.hpp"
#include "tierank/optimizer.hpp"
#include "tierank/simulation.hpp"

using namespace tierank;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int criterion, bool passed, const std::string& what, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", passed ? "PASS" : "FAIL", criterion, what.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!passed) ++failures;
}

std::string fmt(double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.4f", v);
    return buffer;
}

// ---------------------------------------------------------------- 1 to 4
void table_reproduction(int threads) {
    SimulationConfig sim;  // reference scenario: n=20, U=50, 20% abnormal, N^u in [200,400]
    sim.seed = 7;
    const SimulatedData data = generate(sim);

    HyperParams hp;  // library defaults
    ExperimentConfig config;
    config.repeats = 20;
    config.fraction = 0.8;
    config.seed = 100;
    config.include_baseline = true;
    config.threads = threads;

    const ExperimentReport rep = run_experiment(data.dataset, hp, config, &data.truth);

    const double micro_median = rep.micro_summary().median;
    const double macro_median = rep.macro_summary().median;
    report(1, micro_median >= 0.80 && macro_median >= 0.72,
           "full model micro-F1 median >= 0.80 and macro-F1 median >= 0.72",
           "micro " + fmt(micro_median) + ", macro " + fmt(macro_median));

    const double base_median = rep.baseline_micro_summary().median;
    int full_above = 0;
    for (const RepeatOutcome& o : rep.outcomes)
        if (o.baseline_micro_f1 < o.micro_f1) ++full_above;
    report(2, base_median >= 0.751 && base_median <= 0.851 && full_above >= 18,
           "common-only median in 0.801 +- 0.05 and below the full model in >= 18/20 repeats",
           "baseline " + fmt(base_median) + ", below in " + std::to_string(full_above) + "/20");

    std::vector<double> precisions, recalls, aucs;
    for (const RepeatOutcome& o : rep.outcomes) {
        precisions.push_back(o.support_precision);
        recalls.push_back(o.support_recall);
        aucs.push_back(o.ranking_auc);
    }
    const double precision_median = median_of(precisions);
    const double recall_median = median_of(recalls);
    const double auc_median = median_of(aucs);
    report(3, precision_median >= 0.9 && recall_median >= 0.9 && auc_median >= 0.95,
           "support recovery precision/recall medians >= 0.9, ranking AUC median >= 0.95",
           "precision " + fmt(precision_median) + ", recall " + fmt(recall_median) + ", AUC " +
               fmt(auc_median));

    int separated = 0;
    for (const RepeatOutcome& o : rep.outcomes)
        if (o.deviation_flagged_mean > o.deviation_unflagged_mean) ++separated;
    report(4, separated == config.repeats,
           "flagged users deviate more than unflagged ones in every repeat",
           std::to_string(separated) + "/20 repeats separated");
}

// --------------------------------------------------------------------- 5
void gradient_suite() {
    int instances = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto [data, state] = tierank::testing::random_instance(seed, 4, 2, 10);
        const Gradient g = nll_gradient(data, state);
        const Gradient fd = tierank::testing::finite_difference_gradient(data, state);
        for (int i = 0; i < data.n_items(); ++i)
            worst = std::max(worst, tierank::testing::relative_error(g.c_s[i], fd.c_s[i]));
        worst = std::max(worst, tierank::testing::relative_error(g.c_lambda, fd.c_lambda));
        for (int u = 0; u < data.n_users(); ++u) {
            for (int i = 0; i < data.n_items(); ++i)
                worst = std::max(worst, tierank::testing::relative_error(g.P_s(u, i), fd.P_s(u, i)));
            worst = std::max(worst,
                             tierank::testing::relative_error(g.P_lambda[u], fd.P_lambda[u]));
        }
        ++instances;
    }
    report(5, worst <= 1e-5,
           "analytic gradient matches finite differences over " + std::to_string(instances) +
               " instances",
           "worst relative error " + std::to_string(worst));
}

// --------------------------------------------------------------------- 6
void probability_suite() {
    double worst_norm = 0.0, worst_sym = 0.0, worst_tie = 0.0;
    for (double lambda = 0.01; lambda <= 30.0; lambda *= 1.35) {
        for (double d = -60.0; d <= 60.0; d += 0.25) {
            const ClassProbabilities p = class_probabilities(d, lambda);
            worst_norm = std::max(worst_norm, std::abs(p.p_win + p.p_tie + p.p_lose - 1.0));

            const ClassProbabilities q = class_probabilities(-d, lambda);
            worst_sym = std::max({worst_sym, std::abs(q.p_win - p.p_lose),
                                  std::abs(q.p_lose - p.p_win), std::abs(q.p_tie - p.p_tie)});

            const double naive = detail::sigmoid(lambda - d) - detail::sigmoid(-lambda - d);
            if (naive >= 1e-8) worst_tie = std::max(worst_tie, std::abs(p.p_tie - naive));
        }
    }
    report(6, worst_norm <= 1e-12 && worst_sym <= 1e-15 && worst_tie <= 1e-12,
           "probability normalization, flip symmetry and stable tie form on the grid",
           "norm " + std::to_string(worst_norm) + ", sym " + std::to_string(worst_sym) +
               ", tie " + std::to_string(worst_tie));
}

// --------------------------------------------------------------------- 7
void optimizer_invariants() {
    SimulationConfig sim;
    sim.n_items = 10;
    sim.n_users = 12;
    sim.p_abnormal = 0.25;
    sim.samples_min = 60;
    sim.samples_max = 100;
    sim.seed = 29;
    const SimulatedData data = generate(sim);

    HyperParams hp;
    hp.kappa = 10.0;
    hp.nu = 0.05;
    hp.max_iters = 1500;
    hp.checkpoint_every = 100;

    const PathRecord a = fit_path(data.dataset, hp);
    const PathRecord b = fit_path(data.dataset, hp);

    double worst_gauge = 0.0;
    bool feasible = true;
    bool deterministic = a.checkpoints.size() == b.checkpoints.size();
    for (std::size_t c = 0; c < a.checkpoints.size() && deterministic; ++c) {
        const ModelState& s = a.checkpoints[c].state;
        const ModelState& t = b.checkpoints[c].state;
        deterministic = s.c_s == t.c_s && s.c_lambda == t.c_lambda && s.P_s == t.P_s &&
                        s.P_lambda == t.P_lambda && s.Gamma_s == t.Gamma_s &&
                        s.Gamma_lambda == t.Gamma_lambda && s.Z_s == t.Z_s &&
                        s.Z_lambda == t.Z_lambda;
        worst_gauge = std::max(worst_gauge, std::abs(s.c_s.sum()));
        for (int u = 0; u < s.n_users(); ++u) {
            worst_gauge = std::max({worst_gauge, std::abs(s.P_s.row(u).sum()),
                                    std::abs(s.Gamma_s.row(u).sum()), std::abs(s.Z_s.row(u).sum())});
            feasible = feasible && s.threshold(u) >= hp.delta - 1e-15;
        }
        feasible = feasible && s.c_lambda >= hp.delta;
    }

    // prox optimality against a numeric line search
    Rng rng(4242);
    double worst_prox = 0.0;
    for (int trial = 0; trial < 60; ++trial) {
        const int dim = 1 + static_cast<int>(rng.below(9));
        Eigen::VectorXd z(dim);
        for (int k = 0; k < dim; ++k) z[k] = rng.normal(0.0, 1.5);
        const double z_norm = z.norm();
        const double got = group_shrinkage(z).norm();
        const auto objective = [&](double t) { return 0.5 * (t - z_norm) * (t - z_norm) + t; };
        double best_t = 0.0, best = objective(0.0);
        double width = z_norm + 2.0;
        for (int pass = 0; pass < 4; ++pass) {
            const double center = best_t;
            for (double t = std::max(0.0, center - width); t <= z_norm + 2.0; t += width / 500.0) {
                if (objective(t) < best) {
                    best = objective(t);
                    best_t = t;
                }
            }
            width /= 50.0;
        }
        worst_prox = std::max(worst_prox, std::abs(got - best_t));
    }

    report(7,
           worst_gauge <= 1e-9 && feasible && deterministic && worst_prox <= 1e-6,
           "gauge sums, threshold feasibility, bitwise determinism and prox optimality",
           "gauge " + std::to_string(worst_gauge) + ", prox " + std::to_string(worst_prox) +
               (deterministic ? ", deterministic" : ", NON-DETERMINISTIC") +
               (feasible ? ", feasible" : ", INFEASIBLE"));
}

// --------------------------------------------------------------------- 8
void protocol_readiness(const fs::path& dir, int threads) {
    // An externally written file in the documented format: hand-printed
    // lines, arbitrary string ids, all three labels.
    const fs::path csv = dir / "external.csv";
    {
        const SimulationConfig small{.n_items = 8,
                                     .n_users = 12,
                                     .score_sd = 5.0,
                                     .p_abnormal = 0.25,
                                     .c_lambda_true = 1.5,
                                     .samples_min = 50,
                                     .samples_max = 80,
                                     .seed = 31};
        const SimulatedData data = generate(small);
        std::FILE* f = std::fopen(csv.string().c_str(), "w");
        std::fprintf(f, "user,item_i,item_j,label\n");
        for (const Observation& o : data.dataset.observations())
            std::fprintf(f, "annotator-%d,thing_%c,thing_%c,%d\n", o.user,
                         static_cast<char>('A' + o.item_i), static_cast<char>('A' + o.item_j),
                         o.label);
        std::fclose(f);
    }

    const fs::path report_path = dir / "external_report.json";
    const std::string cmd = std::string(TIERANK_CLI_PATH) + " evaluate --data " + csv.string() +
                            " --report " + report_path.string() +
                            " --repeats 20 --fraction 0.8 --kappa 10 --nu 0.05" +
                            " --max-iters 800 --checkpoint-every 50 --folds 3 --seed 3 --threads " +
                            std::to_string(threads) + " > " + (dir / "eval.log").string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    const int exit_code = WEXITSTATUS(raw);

    bool shape_ok = false;
    std::string detail = "command exit " + std::to_string(exit_code);
    if (exit_code == 0) {
        std::ifstream in(report_path);
        const auto parsed = nlohmann::json::parse(in, nullptr, false);
        shape_ok = !parsed.is_discarded() && parsed.at("repeats") == 20 &&
                   parsed.at("micro_f1").at("values").size() == 20 &&
                   parsed.at("precision_by_class").at("median").size() == 3 &&
                   parsed.at("recall_by_class").at("median").size() == 3;
        if (shape_ok)
            detail += ", micro median " + fmt(parsed.at("micro_f1").at("median").get<double>()) +
                      ", per-class P/R present";
    }
    report(8, exit_code == 0 && shape_ok,
           "evaluate runs the full 20-repeat protocol on an external comparison file", detail);
}

}  // namespace

int main(int argc, char** argv) {
    int threads = static_cast<int>(std::thread::hardware_concurrency());
    bool keep = false;
    for (int a = 1; a < argc; ++a) {
        const std::string arg = argv[a];
        if (arg == "--threads" && a + 1 < argc)
            threads = std::atoi(argv[++a]);
        else if (arg == "--keep-artifacts")
            keep = true;
    }
    if (threads < 1) threads = 1;

    const fs::path dir =
        fs::temp_directory_path() / ("tierank_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);

    std::printf("acceptance suite, %d worker threads\n", threads);
    table_reproduction(threads);
    gradient_suite();
    probability_suite();
    optimizer_invariants();
    protocol_readiness(dir, threads);

    if (!keep) {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
    std::printf("%d criterion(s) failed\n", failures);
    return failures;
}
