#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>
#include <json.hpp>

#include "tierank/analysis.hpp"
#include "tierank/evaluation.hpp"
#include "tierank/io.hpp"
#include "tierank/model.hpp"
#include "tierank/optimizer.hpp"
#include "tierank/simulation.hpp"
#include "tierank/types.hpp"

namespace {

using namespace tierank;
using nlohmann::json;

struct CommonOptions {
    HyperParams hp;
    double step_alpha = 0.0;  // >0 selects the fixed policy
    int threads = 1;
};

void add_config(CLI::App* cmd, std::string& path) {
    cmd->add_option("--config", path,
                    "flat key=value config file; flags override file values "
                    "(default from $TIERANK_CONFIG)");
}

// Inject config-file values as trailing --key=value arguments for every key
// the command line did not set. Keys are long option names (dashes and
// underscores interchangeable); unknown keys are rejected.
std::vector<std::string> apply_config_file(CLI::App* cmd, const std::vector<std::string>& args) {
    std::string config_path;
    for (std::size_t a = 0; a < args.size(); ++a) {
        if (args[a] == "--config" && a + 1 < args.size())
            config_path = args[a + 1];
        else if (args[a].rfind("--config=", 0) == 0)
            config_path = args[a].substr(9);
    }
    if (config_path.empty()) {
        if (const char* env = std::getenv("TIERANK_CONFIG")) config_path = env;
    }
    std::vector<std::string> extended = args;
    if (config_path.empty()) return extended;

    const auto normalize = [](std::string key) {
        for (char& c : key)
            if (c == '_') c = '-';
        return key;
    };
    std::set<std::string> given;
    for (const std::string& arg : args) {
        if (arg.rfind("--", 0) != 0) continue;
        const std::size_t eq = arg.find('=');
        given.insert(normalize(arg.substr(2, eq == std::string::npos ? eq : eq - 2)));
    }

    for (const auto& [raw_key, value] : read_config_file(config_path)) {
        const std::string key = normalize(raw_key);
        if (key == "config" || cmd->get_option_no_throw("--" + key) == nullptr)
            throw ConfigError("unknown config key '" + raw_key + "' in " + config_path);
        if (given.count(key)) continue;  // command line wins
        extended.push_back("--" + key + "=" + value);
    }
    return extended;
}

void add_hyper_flags(CLI::App* cmd, CommonOptions& opt) {
    cmd->add_option("--kappa", opt.hp.kappa, "damping factor");
    cmd->add_option("--nu", opt.hp.nu, "variable-splitting strength");
    cmd->add_option("--delta", opt.hp.delta, "threshold floor");
    cmd->add_option("--max-iters", opt.hp.max_iters, "iterations along the path");
    cmd->add_option("--checkpoint-every", opt.hp.checkpoint_every, "checkpoint spacing");
    cmd->add_option("--folds", opt.hp.cv_folds, "cross-validation folds");
    cmd->add_option("--seed", opt.hp.seed, "random seed");
    cmd->add_option("--step-alpha", opt.step_alpha, "fixed step size (default: auto bound)");
    cmd->add_option("--step-exponent", opt.hp.step_exponent,
                    "exponent on the curvature bound in the auto step size");
    cmd->add_option("--threads", opt.threads, "worker threads");
}

HyperParams finalize(const CommonOptions& opt) {
    HyperParams hp = opt.hp;
    if (opt.step_alpha > 0.0) {
        hp.step_policy = StepPolicy::fixed;
        hp.fixed_alpha = opt.step_alpha;
    }
    return hp;
}

DecisionRule parse_rule(const std::string& name) {
    if (name == "argmax") return DecisionRule::argmax_probability;
    if (name == "threshold") return DecisionRule::threshold_on_difference;
    throw ConfigError("unknown decision rule '" + name + "' (use argmax or threshold)");
}

// predict accepts both bare pair files (user,item_i,item_j) and full
// comparison files; any label column is ignored.
struct PairRow {
    std::string user, item_i, item_j;
    long line;
};

std::vector<PairRow> read_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string line;
    long line_no = 0;
    if (!std::getline(in, line)) throw ParseError("empty file, expected header", 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const bool labeled = line == "user,item_i,item_j,label";
    if (!labeled && line != "user,item_i,item_j")
        throw ParseError("expected header 'user,item_i,item_j[,label]'", line_no);
    std::vector<PairRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string field;
        std::istringstream split(line);
        while (std::getline(split, field, ',')) fields.push_back(field);
        if (fields.size() != (labeled ? 4u : 3u)) throw ParseError("wrong field count", line_no);
        rows.push_back(PairRow{fields[0], fields[1], fields[2], line_no});
    }
    return rows;
}

int run(int argc, char** argv) {
    CLI::App app{"individualized partial ranking from pairwise comparisons with ties"};
    app.require_subcommand(1);

    // ---- simulate ----
    SimulationConfig sim;
    std::string sim_out, sim_truth_out, sim_config;
    auto* simulate_cmd = app.add_subcommand("simulate", "generate a synthetic dataset");
    add_config(simulate_cmd, sim_config);
    simulate_cmd->add_option("--out", sim_out, "comparison CSV to write")->required();
    simulate_cmd->add_option("--truth-out", sim_truth_out, "ground-truth JSON to write");
    simulate_cmd->add_option("--items", sim.n_items, "number of items");
    simulate_cmd->add_option("--users", sim.n_users, "number of users");
    simulate_cmd->add_option("--p-abnormal", sim.p_abnormal, "abnormal-user probability");
    simulate_cmd->add_option("--score-sd", sim.score_sd, "score standard deviation");
    simulate_cmd->add_option("--lambda-true", sim.c_lambda_true, "true common threshold");
    simulate_cmd->add_option("--samples-min", sim.samples_min, "per-user sample minimum");
    simulate_cmd->add_option("--samples-max", sim.samples_max, "per-user sample maximum");
    simulate_cmd->add_option("--seed", sim.seed, "random seed");

    // ---- fit ----
    CommonOptions fit_opt;
    std::string fit_data, fit_out, fit_path_out;
    bool fit_no_cv = false;
    std::string fit_config;
    auto* fit_cmd = app.add_subcommand("fit", "fit a model with cross-validated early stopping");
    add_config(fit_cmd, fit_config);
    fit_cmd->add_option("--data", fit_data, "comparison CSV")->required();
    fit_cmd->add_option("--out", fit_out, "model JSON to write")->required();
    fit_cmd->add_option("--path-out", fit_path_out, "path summary JSON to write");
    fit_cmd->add_flag("--no-cv", fit_no_cv, "skip cross-validation, keep the final path state");
    add_hyper_flags(fit_cmd, fit_opt);

    // ---- predict ----
    std::string pred_model, pred_pairs, pred_out, pred_config, pred_rule = "argmax";
    auto* predict_cmd = app.add_subcommand("predict", "label pairs with a fitted model");
    add_config(predict_cmd, pred_config);
    predict_cmd->add_option("--model", pred_model, "model JSON")->required();
    predict_cmd->add_option("--pairs", pred_pairs, "pairs CSV (labels ignored if present)")
        ->required();
    predict_cmd->add_option("--out", pred_out, "labeled CSV to write")->required();
    predict_cmd->add_option("--rule", pred_rule, "decision rule: argmax or threshold");

    // ---- evaluate ----
    CommonOptions eval_opt;
    ExperimentConfig eval_cfg;
    std::string eval_data, eval_truth, eval_report, eval_dev_csv, eval_classwise_csv;
    std::string eval_rule = "argmax";
    bool eval_no_baseline = false;
    std::string eval_config;
    auto* evaluate_cmd =
        app.add_subcommand("evaluate", "run the split/fit/score protocol and write a report");
    add_config(evaluate_cmd, eval_config);
    evaluate_cmd->add_option("--data", eval_data, "comparison CSV")->required();
    evaluate_cmd->add_option("--truth", eval_truth, "ground-truth JSON for detection metrics");
    evaluate_cmd->add_option("--report", eval_report, "report JSON to write")->required();
    evaluate_cmd->add_option("--deviation-csv", eval_dev_csv,
                             "per-user deviation table from a full-data fit");
    evaluate_cmd->add_option("--classwise-csv", eval_classwise_csv,
                             "per-class precision/recall medians");
    evaluate_cmd->add_option("--repeats", eval_cfg.repeats, "number of repeats");
    evaluate_cmd->add_option("--fraction", eval_cfg.fraction, "train fraction per user");
    evaluate_cmd->add_flag("--no-baseline", eval_no_baseline, "skip the common-only arm");
    evaluate_cmd->add_option("--rule", eval_rule, "decision rule: argmax or threshold");
    add_hyper_flags(evaluate_cmd, eval_opt);

    // ---- detect ----
    std::string det_model, det_path, det_out, det_config;
    auto* detect_cmd = app.add_subcommand("detect", "report abnormal users from a model or path");
    add_config(detect_cmd, det_config);
    detect_cmd->add_option("--model", det_model, "model JSON");
    detect_cmd->add_option("--path", det_path, "path summary JSON");
    detect_cmd->add_option("--out", det_out, "report JSON (stdout when omitted)");

    // ---- export-path ----
    std::string exp_path, exp_out, exp_config;
    auto* export_cmd = app.add_subcommand("export-path", "convert a path summary to CSV");
    add_config(export_cmd, exp_config);
    export_cmd->add_option("--path", exp_path, "path summary JSON")->required();
    export_cmd->add_option("--out", exp_out, "CSV to write")->required();

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        CLI::App* active = nullptr;
        for (const std::string& arg : args) {
            if (arg.rfind("-", 0) == 0) continue;
            active = app.get_subcommand_no_throw(arg);
            break;
        }
        if (active) args = apply_config_file(active, args);
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error:usage: %s\n", e.what());
        return 2;
    }

    if (simulate_cmd->parsed()) {
        const SimulatedData data = generate(sim);
        const IdMaps ids = default_ids(sim.n_users, sim.n_items);
        write_comparisons(sim_out, data.dataset, ids);
        if (!sim_truth_out.empty()) write_ground_truth(sim_truth_out, data.truth);
        std::printf("wrote %zu observations for %d users over %d items to %s\n",
                    data.dataset.size(), sim.n_users, sim.n_items, sim_out.c_str());
        return 0;
    }

    if (fit_cmd->parsed()) {
        const HyperParams hp = finalize(fit_opt);
        const LoadedDataset loaded = read_comparisons(fit_data);
        SavedModel model;
        model.ids = loaded.ids;
        model.hp = hp;
        PathRecord path;
        if (fit_no_cv) {
            path = fit_path(loaded.dataset, hp);
            model.state = path.checkpoints.back().state;
            model.selected_tau = path.checkpoints.back().tau;
        } else {
            FitResult result = cross_validate_stop(loaded.dataset, hp, fit_opt.threads);
            model.state = std::move(result.selected_state);
            model.selected_tau = result.selected_tau;
            path = std::move(result.path);
        }
        write_model(fit_out, model);
        if (!fit_path_out.empty())
            write_path_summary(fit_path_out, summarize_path(path, loaded.dataset, loaded.ids));
        const std::vector<bool> flagged = support_set(model.state);
        std::printf("fit %d users / %d items; selected tau %.6g; support size %d\n",
                    loaded.dataset.n_users(), loaded.dataset.n_items(), model.selected_tau,
                    static_cast<int>(std::count(flagged.begin(), flagged.end(), true)));
        return 0;
    }

    if (predict_cmd->parsed()) {
        const DecisionRule rule = parse_rule(pred_rule);
        const SavedModel model = read_model(pred_model);
        std::unordered_map<std::string, int> user_index, item_index;
        for (std::size_t k = 0; k < model.ids.users.size(); ++k)
            user_index[model.ids.users[k]] = static_cast<int>(k);
        for (std::size_t k = 0; k < model.ids.items.size(); ++k)
            item_index[model.ids.items[k]] = static_cast<int>(k);

        const std::vector<PairRow> rows = read_pairs(pred_pairs);
        std::ofstream out(pred_out);
        if (!out) throw IoError("cannot open for writing: " + pred_out);
        out << "user,item_i,item_j,label,p_win,p_tie,p_lose\n";
        char buffer[512];
        for (const PairRow& row : rows) {
            const auto item_it_i = item_index.find(row.item_i);
            const auto item_it_j = item_index.find(row.item_j);
            if (item_it_i == item_index.end())
                throw ParseError("unknown item '" + row.item_i + "'", row.line);
            if (item_it_j == item_index.end())
                throw ParseError("unknown item '" + row.item_j + "'", row.line);
            // Users the model never saw fall back to the common parameters.
            const auto user_it = user_index.find(row.user);
            double d, lambda;
            if (user_it != user_index.end()) {
                d = model.state.score_diff(user_it->second, item_it_i->second, item_it_j->second);
                lambda = model.state.threshold(user_it->second);
            } else {
                d = model.state.c_s[item_it_i->second] - model.state.c_s[item_it_j->second];
                lambda = model.state.c_lambda;
            }
            const ClassProbabilities p = class_probabilities(d, lambda);
            std::snprintf(buffer, sizeof(buffer), "%s,%s,%s,%d,%.9g,%.9g,%.9g\n", row.user.c_str(),
                          row.item_i.c_str(), row.item_j.c_str(), predict_label(d, lambda, rule),
                          p.p_win, p.p_tie, p.p_lose);
            out << buffer;
        }
        return 0;
    }

    if (evaluate_cmd->parsed()) {
        const HyperParams hp = finalize(eval_opt);
        eval_cfg.include_baseline = !eval_no_baseline;
        eval_cfg.threads = eval_opt.threads;
        eval_cfg.rule = parse_rule(eval_rule);
        eval_cfg.seed = hp.seed;
        const LoadedDataset loaded = read_comparisons(eval_data);

        std::optional<GroundTruth> truth;
        if (!eval_truth.empty()) {
            truth = read_ground_truth(eval_truth);
            if (static_cast<int>(truth->abnormal_mask.size()) != loaded.dataset.n_users())
                throw ConfigError("ground truth user count does not match the dataset");
        }

        const ExperimentReport report =
            run_experiment(loaded.dataset, hp, eval_cfg, truth ? &*truth : nullptr);
        write_report(eval_report, report);

        if (!eval_classwise_csv.empty()) {
            std::ofstream out(eval_classwise_csv);
            if (!out) throw IoError("cannot open for writing: " + eval_classwise_csv);
            out << "metric,class,full_model_median,baseline_median\n";
            const char* names[2] = {"precision", "recall"};
            const bool has_baseline = eval_cfg.include_baseline && !report.outcomes.empty();
            for (int metric = 0; metric < 2; ++metric)
                for (int c = 0; c < 3; ++c) {
                    std::vector<double> full_values, base_values;
                    for (const RepeatOutcome& o : report.outcomes) {
                        const auto cc = static_cast<std::size_t>(c);
                        full_values.push_back(metric == 0 ? o.precision_by_class[cc]
                                                          : o.recall_by_class[cc]);
                        base_values.push_back(metric == 0 ? o.baseline_precision_by_class[cc]
                                                          : o.baseline_recall_by_class[cc]);
                    }
                    char buffer[160];
                    if (has_baseline)
                        std::snprintf(buffer, sizeof(buffer), "%s,%d,%.9g,%.9g\n", names[metric],
                                      c - 1, median_of(full_values), median_of(base_values));
                    else
                        std::snprintf(buffer, sizeof(buffer), "%s,%d,%.9g,\n", names[metric],
                                      c - 1, median_of(full_values));
                    out << buffer;
                }
        }

        if (!eval_dev_csv.empty()) {
            // One CV fit on the full dataset for the plot-ready deviation bars.
            const FitResult fit =
                cross_validate_stop(loaded.dataset, hp, eval_opt.threads, eval_cfg.rule);
            const Eigen::VectorXd deviations = user_deviation(fit.selected_state);
            const std::vector<bool> flagged = support_set(fit.selected_state);
            const std::vector<int> ranking = rank_users_by_abnormality(fit.path);
            std::ofstream out(eval_dev_csv);
            if (!out) throw IoError("cannot open for writing: " + eval_dev_csv);
            out << "rank,user,deviation,flagged,entry_iteration\n";
            char buffer[512];
            for (std::size_t pos = 0; pos < ranking.size(); ++pos) {
                const int u = ranking[pos];
                const auto& entry = fit.path.support_entry[static_cast<std::size_t>(u)];
                const std::string entry_text = entry ? std::to_string(*entry) : "";
                std::snprintf(buffer, sizeof(buffer), "%zu,%s,%.9g,%d,%s\n", pos + 1,
                              loaded.ids.users[static_cast<std::size_t>(u)].c_str(), deviations[u],
                              flagged[static_cast<std::size_t>(u)] ? 1 : 0, entry_text.c_str());
                out << buffer;
            }
        }

        const SummaryStats micro = report.micro_summary();
        const SummaryStats macro = report.macro_summary();
        std::printf("micro-F1 median %.4f (min %.4f max %.4f std %.4f)\n", micro.median, micro.min,
                    micro.max, micro.std_dev);
        std::printf("macro-F1 median %.4f (min %.4f max %.4f std %.4f)\n", macro.median, macro.min,
                    macro.max, macro.std_dev);
        if (eval_cfg.include_baseline)
            std::printf("common-only micro-F1 median %.4f\n",
                        report.baseline_micro_summary().median);
        return 0;
    }

    if (detect_cmd->parsed()) {
        if (det_model.empty() && det_path.empty())
            throw ConfigError("detect needs --model and/or --path");
        json out;
        out["format"] = "tierank.detect/1";

        std::optional<SavedModel> model;
        std::optional<PathSummary> path;
        if (!det_model.empty()) model = read_model(det_model);
        if (!det_path.empty()) path = read_path_summary(det_path);

        const std::vector<std::string>& users = model ? model->ids.users : path->users;
        const std::size_t n_users = users.size();
        if (model && path && path->users.size() != n_users)
            throw ConfigError("model and path disagree on the user set");

        std::vector<bool> flagged(n_users, false);
        std::vector<double> deviations(n_users, 0.0);
        if (model) {
            flagged = support_set(model->state);
            const Eigen::VectorXd dev = user_deviation(model->state);
            for (std::size_t u = 0; u < n_users; ++u) deviations[u] = dev[static_cast<int>(u)];
        } else {
            for (std::size_t u = 0; u < n_users; ++u)
                flagged[u] = path->support_entry[u].has_value();
        }

        // Order by path entry when available, else flagged first by deviation.
        std::vector<int> order(n_users);
        for (std::size_t u = 0; u < n_users; ++u) order[u] = static_cast<int>(u);
        if (path) {
            PathRecord record;
            record.support_entry = path->support_entry;
            order = rank_users_by_abnormality(record);
        } else {
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                const auto sa = static_cast<std::size_t>(a);
                const auto sb = static_cast<std::size_t>(b);
                if (flagged[sa] != flagged[sb]) return static_cast<bool>(flagged[sa]);
                if (deviations[sa] != deviations[sb]) return deviations[sa] > deviations[sb];
                return a < b;
            });
        }

        json table = json::array();
        json abnormal = json::array();
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            const auto u = static_cast<std::size_t>(order[pos]);
            json row{{"rank", pos + 1},
                     {"user", users[u]},
                     {"flagged", static_cast<bool>(flagged[u])},
                     {"deviation", model ? json(deviations[u]) : json(nullptr)}};
            if (path)
                row["entry_iteration"] =
                    path->support_entry[u] ? json(*path->support_entry[u]) : json(nullptr);
            table.push_back(std::move(row));
            if (flagged[u]) abnormal.push_back(users[u]);
        }
        out["abnormal"] = std::move(abnormal);
        out["users"] = std::move(table);

        if (det_out.empty()) {
            std::cout << out.dump(2) << '\n';
        } else {
            std::ofstream file(det_out);
            if (!file) throw IoError("cannot open for writing: " + det_out);
            file << out.dump(2) << '\n';
        }
        return 0;
    }

    if (export_cmd->parsed()) {
        write_path_csv(exp_out, read_path_summary(exp_path));
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const tierank::ParseError& e) {
        if (e.line > 0)
            std::fprintf(stderr, "error:parse: %s (line %ld)\n", e.what(), e.line);
        else
            std::fprintf(stderr, "error:parse: %s\n", e.what());
        return 3;
    } catch (const tierank::IoError& e) {
        std::fprintf(stderr, "error:io: %s\n", e.what());
        return 4;
    } catch (const tierank::ConfigError& e) {
        std::fprintf(stderr, "error:config: %s\n", e.what());
        return 5;
    } catch (const tierank::ContractError& e) {
        std::fprintf(stderr, "error:contract: %s\n", e.what());
        return 6;
    } catch (const tierank::NumericError& e) {
        std::fprintf(stderr, "error:numeric: %s\n", e.what());
        return 7;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error:internal: %s\n", e.what());
        return 1;
    }
}
