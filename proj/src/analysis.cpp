#include "tierank/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tierank {

namespace {

double median_inplace(std::vector<double>& v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

std::vector<bool> support_set(const ModelState& state) {
    std::vector<bool> mask(static_cast<std::size_t>(state.n_users()), false);
    for (int u = 0; u < state.n_users(); ++u) {
        const double norm_sq =
            state.Gamma_s.row(u).squaredNorm() + state.Gamma_lambda[u] * state.Gamma_lambda[u];
        mask[static_cast<std::size_t>(u)] = norm_sq > 0.0;
    }
    return mask;
}

Decomposition decompose(const ModelState& state) {
    const int n_users = state.n_users();
    const int width = state.n_items() + 1;  // score block plus the lambda column

    Eigen::MatrixXd stacked(n_users, width);
    stacked.leftCols(state.n_items()) = state.P_s;
    stacked.col(state.n_items()) = state.P_lambda;

    Decomposition d;
    d.support_mask = support_set(state);
    d.abnormal = Eigen::MatrixXd::Zero(n_users, width);
    d.personalized = Eigen::MatrixXd::Zero(n_users, width);
    d.noise = Eigen::MatrixXd::Zero(n_users, width);

    std::vector<double> off_support;
    for (int u = 0; u < n_users; ++u) {
        if (d.support_mask[static_cast<std::size_t>(u)]) {
            d.abnormal.row(u) = stacked.row(u);
        } else {
            for (int c = 0; c < width; ++c) off_support.push_back(stacked(u, c));
        }
    }

    // 3 x (1.4826 * MAD) of the off-support entries separates personalized
    // weak signals from residual noise.
    if (!off_support.empty()) {
        std::vector<double> tmp = off_support;
        const double med = median_inplace(tmp);
        std::vector<double> dev(off_support.size());
        for (std::size_t k = 0; k < off_support.size(); ++k)
            dev[k] = std::abs(off_support[k] - med);
        d.noise_scale = 3.0 * 1.4826 * median_inplace(dev);
    }

    for (int u = 0; u < n_users; ++u) {
        if (d.support_mask[static_cast<std::size_t>(u)]) continue;
        for (int c = 0; c < width; ++c) {
            const double value = stacked(u, c);
            (std::abs(value) > d.noise_scale ? d.personalized : d.noise)(u, c) = value;
        }
    }
    return d;
}

Eigen::VectorXd user_deviation(const ModelState& state) {
    Eigen::VectorXd deviations(state.n_users());
    for (int u = 0; u < state.n_users(); ++u) deviations[u] = state.P_s.row(u).norm();
    return deviations;
}

std::vector<int> rank_users_by_abnormality(const PathRecord& path) {
    const int n_users = static_cast<int>(path.support_entry.size());
    std::vector<int> order(static_cast<std::size_t>(n_users));
    for (int u = 0; u < n_users; ++u) order[static_cast<std::size_t>(u)] = u;
    const auto entry_key = [&](int u) {
        const auto& e = path.support_entry[static_cast<std::size_t>(u)];
        return e ? *e : std::numeric_limits<int>::max();
    };
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const int ka = entry_key(a);
        const int kb = entry_key(b);
        return ka != kb ? ka < kb : a < b;
    });
    return order;
}

std::vector<int> top_fraction(const std::vector<int>& ranking, double q) {
    if (!(q >= 0.0 && q <= 1.0)) throw ContractError("fraction must be in [0, 1]");
    const auto count = static_cast<std::size_t>(
        std::llround(q * static_cast<double>(ranking.size())));
    return {ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(count)};
}

std::vector<int> bottom_fraction(const std::vector<int>& ranking, double q) {
    if (!(q >= 0.0 && q <= 1.0)) throw ContractError("fraction must be in [0, 1]");
    const auto count = static_cast<std::size_t>(
        std::llround(q * static_cast<double>(ranking.size())));
    return {ranking.end() - static_cast<std::ptrdiff_t>(count), ranking.end()};
}

}  // namespace tierank
