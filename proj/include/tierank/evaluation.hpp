#pragma once

#include <array>

#include "tierank/model.hpp"
#include "tierank/simulation.hpp"
#include "tierank/types.hpp"

namespace tierank {

/// 3x3 counts over classes {-1, 0, +1}, indexed (true label, predicted).
class ConfusionTable {
  public:
    void add(int true_label, int predicted_label);
    long long count(int true_label, int predicted_label) const;
    long long total() const { return total_; }
    long long diagonal() const;
    double precision(int label) const;  // 0 when the class was never predicted
    double recall(int label) const;     // 0 when the class never occurs

  private:
    static int index_of(int label);
    std::array<long long, 9> counts_{};
    long long total_ = 0;
};

/// Pooled-count F1 over the three classes; equals accuracy for single-label
/// multiclass. Throws ContractError on an empty table.
double micro_f1(const ConfusionTable& table);

/// Unweighted mean of per-class F1; a class absent from both truth and
/// prediction contributes 0.
double macro_f1(const ConfusionTable& table);

/// Per-user seeded shuffle, ceil(fraction * N^u) observations to train, rest
/// to test. A user with a single observation keeps it in train.
std::pair<ComparisonDataset, ComparisonDataset> split_per_user(const ComparisonDataset& data,
                                                               double fraction,
                                                               std::uint64_t seed);

struct SummaryStats {
    std::vector<double> values;
    double min = 0.0;
    double median = 0.0;
    double max = 0.0;
    double std_dev = 0.0;  // sample standard deviation; 0 for a single value

    static SummaryStats from(std::vector<double> values);
};

double median_of(std::vector<double> values);

/// Everything measured in one split/fit/score repeat.
struct RepeatOutcome {
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
    std::array<double, 3> precision_by_class{};  // classes -1, 0, +1
    std::array<double, 3> recall_by_class{};
    double selected_tau = 0.0;
    double cv_max_f1 = 0.0;
    double cv_final_f1 = 0.0;
    int support_size = 0;

    // baseline arm (common-only fit on the same split)
    bool has_baseline = false;
    double baseline_micro_f1 = 0.0;
    double baseline_macro_f1 = 0.0;
    std::array<double, 3> baseline_precision_by_class{};
    std::array<double, 3> baseline_recall_by_class{};

    // detection vs ground truth, when available
    bool has_detection = false;
    double support_precision = 0.0;
    double support_recall = 0.0;
    double ranking_auc = 0.0;
    double deviation_flagged_mean = 0.0;
    double deviation_unflagged_mean = 0.0;
};

struct ExperimentReport {
    int repeats = 0;
    double fraction = 0.0;
    std::uint64_t seed = 0;
    std::vector<RepeatOutcome> outcomes;

    SummaryStats micro_summary() const;
    SummaryStats macro_summary() const;
    SummaryStats baseline_micro_summary() const;
    SummaryStats baseline_macro_summary() const;
};

struct ExperimentConfig {
    int repeats = 20;
    double fraction = 0.8;
    std::uint64_t seed = 0;
    bool include_baseline = true;
    int threads = 1;  // repeats run concurrently; results merged by index
    DecisionRule rule = DecisionRule::argmax_probability;
};

/// The full protocol: per repeat r (seeded seed + r), split per user, select
/// the stopping time by cross-validation on the train part, score the test
/// part with each user's personalized scores and threshold, optionally fit
/// and score the pooled baseline on the same split, and score support
/// recovery and abnormality-ranking AUC against the ground truth when given.
ExperimentReport run_experiment(const ComparisonDataset& data, const HyperParams& hp,
                                const ExperimentConfig& config,
                                const GroundTruth* truth = nullptr);

/// Score a fitted state on a dataset (personalized prediction per user).
ConfusionTable score_predictions(const ComparisonDataset& data, const ModelState& state,
                                 DecisionRule rule = DecisionRule::argmax_probability);

}  // namespace tierank
