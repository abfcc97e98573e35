#include "tierank/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "tierank/analysis.hpp"
#include "tierank/optimizer.hpp"
#include "tierank/rng.hpp"

namespace tierank {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double safe_f1(double precision, double recall) {
    const double denom = precision + recall;
    return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

}  // namespace

int ConfusionTable::index_of(int label) {
    if (label < -1 || label > 1) throw ContractError("label outside {-1,0,1}");
    return label + 1;
}

void ConfusionTable::add(int true_label, int predicted_label) {
    counts_[static_cast<std::size_t>(index_of(true_label) * 3 + index_of(predicted_label))] += 1;
    ++total_;
}

long long ConfusionTable::count(int true_label, int predicted_label) const {
    return counts_[static_cast<std::size_t>(index_of(true_label) * 3 + index_of(predicted_label))];
}

long long ConfusionTable::diagonal() const {
    return count(-1, -1) + count(0, 0) + count(1, 1);
}

double ConfusionTable::precision(int label) const {
    long long predicted = 0;
    for (int t : {-1, 0, 1}) predicted += count(t, label);
    return predicted > 0 ? static_cast<double>(count(label, label)) / predicted : 0.0;
}

double ConfusionTable::recall(int label) const {
    long long actual = 0;
    for (int p : {-1, 0, 1}) actual += count(label, p);
    return actual > 0 ? static_cast<double>(count(label, label)) / actual : 0.0;
}

double micro_f1(const ConfusionTable& table) {
    if (table.total() == 0) throw ContractError("micro_f1 of an empty table");
    // Pooled TP / FP / FN; for single-label multiclass this reduces to accuracy.
    const double tp = static_cast<double>(table.diagonal());
    const double fp = static_cast<double>(table.total()) - tp;
    const double fn = fp;
    const double precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
    return safe_f1(precision, recall);
}

double macro_f1(const ConfusionTable& table) {
    if (table.total() == 0) throw ContractError("macro_f1 of an empty table");
    double sum = 0.0;
    for (int label : {-1, 0, 1}) sum += safe_f1(table.precision(label), table.recall(label));
    return sum / 3.0;
}

std::pair<ComparisonDataset, ComparisonDataset> split_per_user(const ComparisonDataset& data,
                                                               double fraction,
                                                               std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ContractError("split fraction must be in (0, 1)");
    Rng rng(seed);
    std::vector<std::size_t> train_idx, test_idx;
    for (int u = 0; u < data.n_users(); ++u) {
        std::vector<std::size_t> idx = data.by_user()[static_cast<std::size_t>(u)];
        if (idx.empty()) continue;
        rng.shuffle(idx);
        std::size_t n_train = static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(idx.size())));
        n_train = std::min(n_train, idx.size());
        train_idx.insert(train_idx.end(), idx.begin(),
                         idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                        idx.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {data.subset(train_idx), data.subset(test_idx)};
}

double median_of(std::vector<double> values) {
    if (values.empty()) return kNaN;
    std::sort(values.begin(), values.end());
    const std::size_t h = values.size() / 2;
    return values.size() % 2 ? values[h] : 0.5 * (values[h - 1] + values[h]);
}

SummaryStats SummaryStats::from(std::vector<double> values) {
    SummaryStats s;
    s.values = std::move(values);
    if (s.values.empty()) {
        s.min = s.median = s.max = s.std_dev = kNaN;
        return s;
    }
    std::vector<double> sorted = s.values;
    std::sort(sorted.begin(), sorted.end());
    s.min = sorted.front();
    s.max = sorted.back();
    const std::size_t h = sorted.size() / 2;
    s.median = sorted.size() % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
    if (sorted.size() < 2) {
        s.std_dev = 0.0;
    } else {
        double mean = 0.0;
        for (double v : sorted) mean += v;
        mean /= static_cast<double>(sorted.size());
        double ss = 0.0;
        for (double v : sorted) ss += (v - mean) * (v - mean);
        s.std_dev = std::sqrt(ss / static_cast<double>(sorted.size() - 1));
    }
    return s;
}

ConfusionTable score_predictions(const ComparisonDataset& data, const ModelState& state,
                                 DecisionRule rule) {
    ConfusionTable table;
    for (int u = 0; u < data.n_users(); ++u) {
        const double lambda = state.threshold(u);
        for (std::size_t k : data.by_user()[static_cast<std::size_t>(u)]) {
            const Observation& o = data.observations()[k];
            const double d = state.score_diff(u, o.item_i, o.item_j);
            table.add(o.label, predict_label(d, lambda, rule));
        }
    }
    return table;
}

namespace {

SummaryStats summary_of(const std::vector<RepeatOutcome>& outcomes,
                        double RepeatOutcome::*field) {
    std::vector<double> values;
    values.reserve(outcomes.size());
    for (const RepeatOutcome& o : outcomes) values.push_back(o.*field);
    return SummaryStats::from(std::move(values));
}

// Probability that an abnormal user precedes a normal one when ordered by
// support-entry iteration; ties count half. Entry-less users share rank.
double ranking_auc(const std::vector<std::optional<int>>& entries,
                   const std::vector<bool>& abnormal) {
    const auto score_of = [&](std::size_t u) {
        return entries[u] ? static_cast<double>(*entries[u])
                          : std::numeric_limits<double>::infinity();
    };
    double wins = 0.0;
    long long pairs = 0;
    for (std::size_t a = 0; a < abnormal.size(); ++a) {
        if (!abnormal[a]) continue;
        for (std::size_t b = 0; b < abnormal.size(); ++b) {
            if (abnormal[b]) continue;
            ++pairs;
            const double sa = score_of(a);
            const double sb = score_of(b);
            wins += sa < sb ? 1.0 : (sa == sb ? 0.5 : 0.0);
        }
    }
    return pairs > 0 ? wins / static_cast<double>(pairs) : kNaN;
}

RepeatOutcome run_single_repeat(const ComparisonDataset& data, const HyperParams& hp,
                                const ExperimentConfig& config, const GroundTruth* truth,
                                int repeat) {
    const std::uint64_t repeat_seed = config.seed + static_cast<std::uint64_t>(repeat);
    auto [train, test] = split_per_user(data, config.fraction, repeat_seed);

    HyperParams repeat_hp = hp;
    repeat_hp.seed = repeat_seed;
    const FitResult fit = cross_validate_stop(train, repeat_hp, 1, config.rule);

    RepeatOutcome out;
    const ConfusionTable table = score_predictions(test, fit.selected_state, config.rule);
    out.micro_f1 = micro_f1(table);
    out.macro_f1 = macro_f1(table);
    for (int label : {-1, 0, 1}) {
        out.precision_by_class[static_cast<std::size_t>(label + 1)] = table.precision(label);
        out.recall_by_class[static_cast<std::size_t>(label + 1)] = table.recall(label);
    }
    out.selected_tau = fit.selected_tau;
    out.cv_final_f1 = fit.cv_curve.back().mean_micro_f1;
    out.cv_max_f1 = out.cv_final_f1;
    for (const CvPoint& p : fit.cv_curve) out.cv_max_f1 = std::max(out.cv_max_f1, p.mean_micro_f1);

    const std::vector<bool> flagged = support_set(fit.selected_state);
    out.support_size = static_cast<int>(std::count(flagged.begin(), flagged.end(), true));

    if (config.include_baseline) {
        out.has_baseline = true;
        const ModelState base = fit_common_only(train, repeat_hp);
        const ConfusionTable base_table = score_predictions(test, base, config.rule);
        out.baseline_micro_f1 = micro_f1(base_table);
        out.baseline_macro_f1 = macro_f1(base_table);
        for (int label : {-1, 0, 1}) {
            out.baseline_precision_by_class[static_cast<std::size_t>(label + 1)] =
                base_table.precision(label);
            out.baseline_recall_by_class[static_cast<std::size_t>(label + 1)] =
                base_table.recall(label);
        }
    }

    if (truth) {
        out.has_detection = true;
        long long true_pos = 0, flagged_count = 0, abnormal_count = 0;
        for (std::size_t u = 0; u < flagged.size(); ++u) {
            flagged_count += flagged[u];
            abnormal_count += truth->abnormal_mask[u];
            true_pos += flagged[u] && truth->abnormal_mask[u];
        }
        out.support_precision =
            flagged_count > 0 ? static_cast<double>(true_pos) / flagged_count
                              : (abnormal_count == 0 ? 1.0 : 0.0);
        out.support_recall =
            abnormal_count > 0 ? static_cast<double>(true_pos) / abnormal_count : 1.0;
        out.ranking_auc = ranking_auc(fit.path.support_entry, truth->abnormal_mask);

        const Eigen::VectorXd deviations = user_deviation(fit.selected_state);
        double flagged_sum = 0.0, unflagged_sum = 0.0;
        long long unflagged_count = static_cast<long long>(flagged.size()) - flagged_count;
        for (std::size_t u = 0; u < flagged.size(); ++u)
            (flagged[u] ? flagged_sum : unflagged_sum) += deviations[static_cast<int>(u)];
        out.deviation_flagged_mean = flagged_count > 0 ? flagged_sum / flagged_count : kNaN;
        out.deviation_unflagged_mean =
            unflagged_count > 0 ? unflagged_sum / unflagged_count : kNaN;
    }
    return out;
}

}  // namespace

SummaryStats ExperimentReport::micro_summary() const {
    return summary_of(outcomes, &RepeatOutcome::micro_f1);
}
SummaryStats ExperimentReport::macro_summary() const {
    return summary_of(outcomes, &RepeatOutcome::macro_f1);
}
SummaryStats ExperimentReport::baseline_micro_summary() const {
    return summary_of(outcomes, &RepeatOutcome::baseline_micro_f1);
}
SummaryStats ExperimentReport::baseline_macro_summary() const {
    return summary_of(outcomes, &RepeatOutcome::baseline_macro_f1);
}

ExperimentReport run_experiment(const ComparisonDataset& data, const HyperParams& hp,
                                const ExperimentConfig& config, const GroundTruth* truth) {
    if (config.repeats < 1) throw ContractError("repeats must be at least 1");
    if (truth && static_cast<int>(truth->abnormal_mask.size()) != data.n_users())
        throw ContractError("ground truth does not match the dataset user count");

    ExperimentReport report;
    report.repeats = config.repeats;
    report.fraction = config.fraction;
    report.seed = config.seed;
    report.outcomes.resize(static_cast<std::size_t>(config.repeats));

    // Repeats are independent given their derived seed; results land by index
    // so the report does not depend on scheduling.
    const int n_workers = std::max(1, std::min(config.threads, config.repeats));
    if (n_workers == 1) {
        for (int r = 0; r < config.repeats; ++r)
            report.outcomes[static_cast<std::size_t>(r)] =
                run_single_repeat(data, hp, config, truth, r);
    } else {
        std::atomic<int> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        std::vector<std::thread> pool;
        for (int t = 0; t < n_workers; ++t)
            pool.emplace_back([&] {
                for (int r = next.fetch_add(1); r < config.repeats; r = next.fetch_add(1)) {
                    try {
                        report.outcomes[static_cast<std::size_t>(r)] =
                            run_single_repeat(data, hp, config, truth, r);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        if (!error) error = std::current_exception();
                    }
                }
            });
        for (auto& t : pool) t.join();
        if (error) std::rethrow_exception(error);
    }
    return report;
}

}  // namespace tierank
