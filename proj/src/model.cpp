#include "tierank/model.hpp"

#include <cmath>
#include <string>

namespace tierank {

using detail::sigmoid;
using detail::softplus;

ClassProbabilities class_probabilities(double score_diff, double lambda) {
    if (!(lambda > 0.0)) throw ContractError("lambda must be positive");
    const double zp = lambda - score_diff;
    const double zm = -lambda - score_diff;
    ClassProbabilities p;
    p.p_win = sigmoid(-zp);
    p.p_lose = sigmoid(zm);
    // sigma(zp) - sigma(zm) rewritten as sigma(zp) * sigma(-zm) * (1 - e^{-2 lambda});
    // the difference form cancels catastrophically for small lambda or large |d|.
    p.p_tie = sigmoid(zp) * sigmoid(-zm) * (-std::expm1(-2.0 * lambda));
    return p;
}

namespace detail {

double observation_nll(int label, double zp, double zm, double lambda) {
    switch (label) {
        case 1:
            return softplus(zp);  // -log sigma(-zp)
        case -1:
            return softplus(-zm);  // -log sigma(zm)
        default:
            // -log[ sigma(zp) sigma(-zm) (1 - e^{-2 lambda}) ]
            return softplus(-zp) + softplus(zm) - std::log1p(-std::exp(-2.0 * lambda));
    }
}

PredictorGrad loss_predictor_grad(int label, double zp, double zm, double lambda) {
    switch (label) {
        case 1:
            return {sigmoid(zp), 0.0};
        case -1:
            return {0.0, sigmoid(zm) - 1.0};
        default: {
            // d/dzp [-log p_tie] = -sigma'(zp)/p_tie and the zm analogue, with
            // the sigmoid ratios evaluated through softplus differences; both
            // exponents are non-positive because zm < zp.
            const double denom = -std::expm1(-2.0 * lambda);
            const double d_zp = -std::exp(softplus(zm) - softplus(zp)) / denom;
            const double d_zm = std::exp(softplus(-zp) - softplus(-zm)) / denom;
            return {d_zp, d_zm};
        }
    }
}

}  // namespace detail

double negative_log_likelihood(const ComparisonDataset& data, const ModelState& state) {
    double total = 0.0;
    for (int u = 0; u < data.n_users(); ++u) {
        const double lambda = state.threshold(u);
        for (std::size_t k : data.by_user()[static_cast<std::size_t>(u)]) {
            const Observation& o = data.observations()[k];
            const double d = state.score_diff(u, o.item_i, o.item_j);
            total += detail::observation_nll(o.label, lambda - d, -lambda - d, lambda);
        }
    }
    return total;
}

Gradient nll_gradient(const ComparisonDataset& data, const ModelState& state) {
    Gradient g;
    g.c_s = Eigen::VectorXd::Zero(data.n_items());
    g.c_lambda = 0.0;
    g.P_s = Eigen::MatrixXd::Zero(data.n_users(), data.n_items());
    g.P_lambda = Eigen::VectorXd::Zero(data.n_users());
    for (int u = 0; u < data.n_users(); ++u) {
        const double lambda = state.threshold(u);
        for (std::size_t k : data.by_user()[static_cast<std::size_t>(u)]) {
            const Observation& o = data.observations()[k];
            const double d = state.score_diff(u, o.item_i, o.item_j);
            const auto [d_zp, d_zm] =
                detail::loss_predictor_grad(o.label, lambda - d, -lambda - d, lambda);
            // zp and zm both carry d with coefficient -1; lambda enters zp
            // with +1 and zm with -1.
            const double g_d = -(d_zp + d_zm);
            const double g_l = d_zp - d_zm;
            if (!std::isfinite(g_d) || !std::isfinite(g_l))
                throw NumericError("non-finite gradient at observation " + std::to_string(k));
            g.c_s[o.item_i] += g_d;
            g.c_s[o.item_j] -= g_d;
            g.c_lambda += g_l;
            g.P_s(u, o.item_i) += g_d;
            g.P_s(u, o.item_j) -= g_d;
            g.P_lambda[u] += g_l;
        }
    }
    return g;
}

int predict_label(double score_diff, double lambda, DecisionRule rule) {
    if (rule == DecisionRule::threshold_on_difference) {
        if (score_diff > lambda) return 1;
        if (score_diff < -lambda) return -1;
        return 0;
    }
    const ClassProbabilities p = class_probabilities(score_diff, lambda);
    int best = 0;
    double best_p = p.p_tie;
    if (p.p_win > best_p) {
        best = 1;
        best_p = p.p_win;
    }
    if (p.p_lose > best_p) best = -1;
    return best;
}

}  // namespace tierank
