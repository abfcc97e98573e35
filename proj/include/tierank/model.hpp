#pragma once

#include "tierank/types.hpp"

namespace tierank {

/// How a score difference and threshold become a predicted label.
enum class DecisionRule {
    argmax_probability,       // Bayes rule under the fitted model (default)
    threshold_on_difference,  // sign(d) gated by |d| > lambda
};

struct ClassProbabilities {
    double p_win;   // P{y = +1}
    double p_tie;   // P{y = 0}
    double p_lose;  // P{y = -1}
};

/// Win/tie/lose probabilities for score difference d and threshold lambda
/// under the logistic noise model: with zp = lambda - d and zm = -lambda - d,
/// P{+1} = 1 - sigma(zp), P{0} = sigma(zp) - sigma(zm), P{-1} = sigma(zm).
/// The tie probability is computed through the cancellation-free identity
/// sigma(zp) * sigma(-zm) * (1 - exp(-2 lambda)).
/// Throws ContractError if lambda <= 0.
ClassProbabilities class_probabilities(double score_diff, double lambda);

/// Sum over observations of -log P{observed label}, in log-stable form.
double negative_log_likelihood(const ComparisonDataset& data, const ModelState& state);

/// Likelihood gradient over the dense blocks. The splitting-term part of the
/// full objective gradient is added by the optimizer.
struct Gradient {
    Eigen::VectorXd c_s;
    double c_lambda = 0.0;
    Eigen::MatrixXd P_s;
    Eigen::VectorXd P_lambda;
};

Gradient nll_gradient(const ComparisonDataset& data, const ModelState& state);

/// Deterministic label decision; exact probability ties break 0, then +1,
/// then -1.
int predict_label(double score_diff, double lambda,
                  DecisionRule rule = DecisionRule::argmax_probability);

namespace detail {

/// 1 / (1 + exp(-x)) without overflow.
inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

/// Per-observation loss derivatives with respect to the two predictors
/// zp = lambda - d and zm = -lambda - d.
struct PredictorGrad {
    double d_zp;
    double d_zm;
};

PredictorGrad loss_predictor_grad(int label, double zp, double zm, double lambda);
double observation_nll(int label, double zp, double zm, double lambda);

}  // namespace detail

}  // namespace tierank
