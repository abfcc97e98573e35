#pragma once

#include <functional>
#include <optional>

#include "tierank/model.hpp"
#include "tierank/types.hpp"

namespace tierank {

struct PathCheckpoint {
    int iteration;
    double tau;  // cumulative step time, sum of alpha over iterations so far
    ModelState state;
};

/// The recorded regularization path: checkpointed states plus, per user, the
/// first iteration at which the user's Gamma group became nonzero.
struct PathRecord {
    double alpha = 0.0;
    std::vector<PathCheckpoint> checkpoints;
    std::vector<std::optional<int>> support_entry;  // indexed by user
};

struct CvPoint {
    double tau;
    double mean_micro_f1;
};

struct FitResult {
    ModelState selected_state;
    double selected_tau = 0.0;
    PathRecord path;                // refit on the full dataset
    std::vector<CvPoint> cv_curve;  // mean validation micro-F1 per checkpoint
};

/// Proximal map of the group L2 norm at unit threshold: zero inside the unit
/// ball, radial shrinkage by 1/||z|| outside. The caller applies the kappa
/// factor of the iteration.
Eigen::VectorXd group_shrinkage(const Eigen::VectorXd& z_group);

/// Euclidean projection onto { c_lambda >= delta, c_lambda + P_lambda[u] >= delta }.
/// Score blocks untouched; feasible states come back unchanged.
ModelState project_thresholds(ModelState state, double delta);

/// One iteration. All four block updates read the pre-step state, then the
/// threshold projection is applied. Throws NumericError (with the offending
/// observation index) if a gradient turns non-finite.
ModelState lbi_step(const ModelState& state, const ComparisonDataset& data,
                    const HyperParams& hp, double alpha);

/// alpha = 1 / (kappa * B^e) with B = lambda_max(A^T A) / 4 + 1/nu, where A
/// stacks one predictor row per observation over (c_s, c_lambda, P_s,
/// P_lambda). lambda_max is estimated by 100 seeded power-iteration steps and
/// inflated by 1.05.
double default_step_size(const ComparisonDataset& data, const HyperParams& hp);

/// Runs max_iters steps from the zero initialization (c_lambda = 1),
/// checkpointing iteration 0, every checkpoint_every-th iteration and the
/// final one. Deterministic given (data, hp).
PathRecord fit_path(const ComparisonDataset& data, const HyperParams& hp);

/// Per-user label-stratified k-fold early stopping: fits one path per fold,
/// scores held-out micro-F1 at every checkpoint, picks the tau maximizing the
/// fold mean (ties -> smallest tau), refits on everything and returns the
/// checkpoint state nearest tau*. Users with fewer observations than folds
/// contribute training data only. `threads` > 1 fits folds concurrently; the
/// result does not depend on scheduling.
FitResult cross_validate_stop(const ComparisonDataset& data, const HyperParams& hp,
                              int threads = 1,
                              DecisionRule rule = DecisionRule::argmax_probability);

/// Pooled ablation: P, Gamma, Z pinned at zero; projected gradient descent on
/// (c_s, c_lambda) until the NLL relative change drops below 1e-8 (or 1e5
/// iterations).
ModelState fit_common_only(const ComparisonDataset& data, const HyperParams& hp);

namespace detail {

/// Observer invoked at every checkpoint of a path run; used by CV scoring to
/// avoid materializing fold paths.
using CheckpointFn = std::function<void(int iteration, double tau, const ModelState&)>;

void run_path(const ComparisonDataset& data, const HyperParams& hp, double alpha,
              const CheckpointFn& on_checkpoint,
              std::vector<std::optional<int>>* support_entry);

/// Number of checkpoints a path run will emit (iteration 0 included).
int checkpoint_count(const HyperParams& hp);

}  // namespace detail

}  // namespace tierank
