#include "tierank/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>
#include <tuple>

#include "tierank/evaluation.hpp"
#include "tierank/rng.hpp"

namespace tierank {

namespace {

constexpr std::uint64_t kPowerIterationSeed = 0x5eed5eedULL;

// Observations collapsed to unique (label, user, item_i, item_j) rows with
// multiplicities. One gradient evaluation touches each unique row once;
// repeated comparisons only scale its contribution. Rows are segmented by
// label so each segment can evaluate its transcendental kernels over whole
// arrays.
struct Workspace {
    int n_items = 0;
    int n_users = 0;
    std::vector<int> user, item_i, item_j, label;
    std::vector<double> weight;
    std::vector<std::size_t> representative;  // a raw observation index per row
    std::size_t win_end = 0;                  // rows [0, win_end) have label +1
    std::size_t lose_end = 0;                 // rows [win_end, lose_end) have label -1

    static Workspace build(const ComparisonDataset& data) {
        std::vector<std::size_t> order(data.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        const auto& obs = data.observations();
        const auto segment_of = [](int label) { return label == 1 ? 0 : (label == -1 ? 1 : 2); };
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const Observation& x = obs[a];
            const Observation& y = obs[b];
            return std::make_tuple(segment_of(x.label), x.user, x.item_i, x.item_j) <
                   std::make_tuple(segment_of(y.label), y.user, y.item_i, y.item_j);
        });
        Workspace ws;
        ws.n_items = data.n_items();
        ws.n_users = data.n_users();
        for (std::size_t k : order) {
            const Observation& o = obs[k];
            if (!ws.user.empty() && ws.label.back() == o.label && ws.user.back() == o.user &&
                ws.item_i.back() == o.item_i && ws.item_j.back() == o.item_j) {
                ws.weight.back() += 1.0;
                continue;
            }
            ws.user.push_back(o.user);
            ws.item_i.push_back(o.item_i);
            ws.item_j.push_back(o.item_j);
            ws.label.push_back(o.label);
            ws.weight.push_back(1.0);
            ws.representative.push_back(k);
        }
        ws.win_end = ws.rows();
        ws.lose_end = ws.rows();
        for (std::size_t r = 0; r < ws.rows(); ++r) {
            if (ws.label[r] != 1) {
                ws.win_end = r;
                break;
            }
        }
        for (std::size_t r = ws.win_end; r < ws.rows(); ++r) {
            if (ws.label[r] == 0) {
                ws.lose_end = r;
                break;
            }
        }
        if (ws.win_end == ws.rows()) ws.lose_end = ws.rows();
        return ws;
    }

    std::size_t rows() const { return user.size(); }
};

// Reusable buffers for the array-kernel gradient evaluation.
struct Scratch {
    Eigen::ArrayXd zp, zm, lam, d_zp, d_zm, b1, b2;

    void resize(std::size_t rows) {
        const auto n = static_cast<Eigen::Index>(rows);
        zp.resize(n);
        zm.resize(n);
        lam.resize(n);
        d_zp.resize(n);
        d_zm.resize(n);
        b1.resize(n);
        b2.resize(n);
    }
};

// sigmoid over an array segment, written through exp(-|x|) so it never
// overflows.
template <typename Seg, typename Buf>
void sigmoid_into(const Seg& x, Buf&& out) {
    out = (-x.abs()).exp();
    out = (x >= 0.0).select(1.0 / (1.0 + out), out / (1.0 + out));
}

void accumulate_gradient(const Workspace& ws, const ModelState& state, Scratch& s, Gradient& g) {
    g.c_s.setZero();
    g.c_lambda = 0.0;
    g.P_s.setZero();
    g.P_lambda.setZero();

    const auto rows = static_cast<Eigen::Index>(ws.rows());
    for (Eigen::Index r = 0; r < rows; ++r) {
        const int u = ws.user[static_cast<std::size_t>(r)];
        const int i = ws.item_i[static_cast<std::size_t>(r)];
        const int j = ws.item_j[static_cast<std::size_t>(r)];
        const double lambda = state.c_lambda + state.P_lambda[u];
        const double d = (state.c_s[i] + state.P_s(u, i)) - (state.c_s[j] + state.P_s(u, j));
        s.lam[r] = lambda;
        s.zp[r] = lambda - d;
        s.zm[r] = -lambda - d;
    }

    const auto we = static_cast<Eigen::Index>(ws.win_end);
    const auto le = static_cast<Eigen::Index>(ws.lose_end);
    const Eigen::Index ties = rows - le;

    // label +1: d/dzp = sigmoid(zp)
    sigmoid_into(s.zp.segment(0, we), s.d_zp.segment(0, we));
    s.d_zm.segment(0, we).setZero();

    // label -1: d/dzm = sigmoid(zm) - 1
    sigmoid_into(s.zm.segment(we, le - we), s.d_zm.segment(we, le - we));
    s.d_zm.segment(we, le - we) -= 1.0;
    s.d_zp.segment(we, le - we).setZero();

    // label 0: with a = softplus(zm) - softplus(zp) <= 0 and the tie mass
    // sigma(zp) sigma(-zm) (1 - e^{-2 lambda}),
    //   d/dzp = -e^a / (1 - e^{-2 lambda})
    //   d/dzm = e^{-a - 2 lambda} / (1 - e^{-2 lambda})
    if (ties > 0) {
        auto zp_t = s.zp.segment(le, ties);
        auto zm_t = s.zm.segment(le, ties);
        auto lam_t = s.lam.segment(le, ties);
        auto sp_zp = s.b1.segment(le, ties);
        auto sp_zm = s.b2.segment(le, ties);
        sp_zp = (-zp_t.abs()).exp().log1p() + zp_t.max(0.0);
        sp_zm = (-zm_t.abs()).exp().log1p() + zm_t.max(0.0);
        auto a = s.zp.segment(le, ties);  // zp/zm are consumed from here on
        a = sp_zm - sp_zp;
        auto denom = s.zm.segment(le, ties);
        denom = -(-2.0 * lam_t).expm1();
        s.d_zp.segment(le, ties) = -a.exp() / denom;
        s.d_zm.segment(le, ties) = (-a - 2.0 * lam_t).exp() / denom;
    }

    for (Eigen::Index r = 0; r < rows; ++r) {
        const int u = ws.user[static_cast<std::size_t>(r)];
        const int i = ws.item_i[static_cast<std::size_t>(r)];
        const int j = ws.item_j[static_cast<std::size_t>(r)];
        const double w = ws.weight[static_cast<std::size_t>(r)];
        const double g_d = -(s.d_zp[r] + s.d_zm[r]) * w;
        const double g_l = (s.d_zp[r] - s.d_zm[r]) * w;
        if (!std::isfinite(g_d) || !std::isfinite(g_l))
            throw NumericError("non-finite gradient at observation " +
                               std::to_string(ws.representative[static_cast<std::size_t>(r)]));
        g.c_s[i] += g_d;
        g.c_s[j] -= g_d;
        g.c_lambda += g_l;
        g.P_s(u, i) += g_d;
        g.P_s(u, j) -= g_d;
        g.P_lambda[u] += g_l;
    }
}

void project_in_place(ModelState& state, double delta) {
    state.c_lambda = std::max(state.c_lambda, delta);
    const double floor = delta - state.c_lambda;
    for (int u = 0; u < state.n_users(); ++u)
        state.P_lambda[u] = std::max(state.P_lambda[u], floor);
}

// One Jacobi iteration: every block update below reads `cur`, then the
// threshold projection runs on the result.
void advance(const ModelState& cur, const Gradient& g, const HyperParams& hp, double alpha,
             ModelState& next, int iteration, std::vector<std::optional<int>>* support_entry) {
    const double ka = hp.kappa * alpha;
    const double inv_nu = 1.0 / hp.nu;

    next.c_s = cur.c_s - ka * g.c_s;
    next.c_lambda = cur.c_lambda - ka * g.c_lambda;
    next.P_s = cur.P_s - ka * (g.P_s + inv_nu * (cur.P_s - cur.Gamma_s));
    next.P_lambda = cur.P_lambda - ka * (g.P_lambda + inv_nu * (cur.P_lambda - cur.Gamma_lambda));
    next.Z_s = cur.Z_s - (alpha * inv_nu) * (cur.Gamma_s - cur.P_s);
    next.Z_lambda = cur.Z_lambda - (alpha * inv_nu) * (cur.Gamma_lambda - cur.P_lambda);

    for (int u = 0; u < cur.n_users(); ++u) {
        const double norm =
            std::sqrt(cur.Z_s.row(u).squaredNorm() + cur.Z_lambda[u] * cur.Z_lambda[u]);
        if (norm > 1.0) {
            const double factor = hp.kappa * (1.0 - 1.0 / norm);
            next.Gamma_s.row(u) = factor * cur.Z_s.row(u);
            next.Gamma_lambda[u] = factor * cur.Z_lambda[u];
            if (support_entry && !(*support_entry)[static_cast<std::size_t>(u)])
                (*support_entry)[static_cast<std::size_t>(u)] = iteration;
        } else {
            next.Gamma_s.row(u).setZero();
            next.Gamma_lambda[u] = 0.0;
        }
    }
    project_in_place(next, hp.delta);
}

double resolve_alpha(const ComparisonDataset& data, const HyperParams& hp) {
    if (hp.step_policy == StepPolicy::fixed) return hp.fixed_alpha;
    return default_step_size(data, hp);
}

std::vector<int> checkpoint_iterations(const HyperParams& hp) {
    std::vector<int> grid{0};
    for (int k = hp.checkpoint_every; k < hp.max_iters; k += hp.checkpoint_every)
        grid.push_back(k);
    if (hp.max_iters > 0) grid.push_back(hp.max_iters);
    return grid;
}

}  // namespace

Eigen::VectorXd group_shrinkage(const Eigen::VectorXd& z_group) {
    const double norm = z_group.norm();
    if (norm <= 1.0) return Eigen::VectorXd::Zero(z_group.size());
    return (1.0 - 1.0 / norm) * z_group;
}

ModelState project_thresholds(ModelState state, double delta) {
    if (!(delta > 0.0)) throw ContractError("delta must be positive");
    project_in_place(state, delta);
    return state;
}

ModelState lbi_step(const ModelState& state, const ComparisonDataset& data,
                    const HyperParams& hp, double alpha) {
    hp.validate();
    if (!(alpha > 0.0)) throw ContractError("step size must be positive");
    const Workspace ws = Workspace::build(data);
    Scratch scratch;
    scratch.resize(ws.rows());
    Gradient g;
    g.c_s = Eigen::VectorXd::Zero(data.n_items());
    g.P_s = Eigen::MatrixXd::Zero(data.n_users(), data.n_items());
    g.P_lambda = Eigen::VectorXd::Zero(data.n_users());
    accumulate_gradient(ws, state, scratch, g);
    ModelState next = ModelState::zero_initialized(data.n_items(), data.n_users());
    advance(state, g, hp, alpha, next, 0, nullptr);
    return next;
}

double default_step_size(const ComparisonDataset& data, const HyperParams& hp) {
    hp.validate();
    const Workspace ws = Workspace::build(data);
    const int n = data.n_items();
    const int u_count = data.n_users();
    const Eigen::Index dim = n + 1 + static_cast<Eigen::Index>(u_count) * n + u_count;

    // Power iteration for lambda_max(A^T A); A has one row per observation
    // mapping (c_s, c_lambda, P_s, P_lambda) to the zeta+ predictor.
    Rng rng(kPowerIterationSeed);
    Eigen::VectorXd v(dim);
    for (Eigen::Index k = 0; k < dim; ++k) v[k] = rng.normal(0.0, 1.0);
    v.normalize();

    const auto p_s_at = [&](Eigen::VectorXd& x, int u, int i) -> double& {
        return x[n + 1 + static_cast<Eigen::Index>(u) * n + i];
    };
    const auto p_l_at = [&](Eigen::VectorXd& x, int u) -> double& {
        return x[n + 1 + static_cast<Eigen::Index>(u_count) * n + u];
    };

    double lambda_max = 0.0;
    Eigen::VectorXd w(dim);
    for (int step = 0; step < 100; ++step) {
        w.setZero();
        for (std::size_t r = 0; r < ws.rows(); ++r) {
            const int u = ws.user[r];
            const int i = ws.item_i[r];
            const int j = ws.item_j[r];
            const double s = -v[i] + v[j] + v[n] - p_s_at(v, u, i) + p_s_at(v, u, j) +
                             p_l_at(v, u);
            const double ws_s = ws.weight[r] * s;
            w[i] -= ws_s;
            w[j] += ws_s;
            w[n] += ws_s;
            p_s_at(w, u, i) -= ws_s;
            p_s_at(w, u, j) += ws_s;
            p_l_at(w, u) += ws_s;
        }
        const double norm = w.norm();
        if (norm == 0.0) {
            lambda_max = 0.0;
            break;
        }
        lambda_max = norm;
        v = w / norm;
    }

    const double bound = 0.25 * (1.05 * lambda_max) + 1.0 / hp.nu;
    return 1.0 / (hp.kappa * std::pow(bound, hp.step_exponent));
}

namespace detail {

int checkpoint_count(const HyperParams& hp) {
    return static_cast<int>(checkpoint_iterations(hp).size());
}

void run_path(const ComparisonDataset& data, const HyperParams& hp, double alpha,
              const CheckpointFn& on_checkpoint,
              std::vector<std::optional<int>>* support_entry) {
    hp.validate();
    if (data.empty()) throw ContractError("cannot fit an empty dataset");
    if (!(alpha > 0.0)) throw ContractError("step size must be positive");

    const Workspace ws = Workspace::build(data);
    Scratch scratch;
    scratch.resize(ws.rows());
    ModelState cur = ModelState::zero_initialized(data.n_items(), data.n_users());
    ModelState next = ModelState::zero_initialized(data.n_items(), data.n_users());
    Gradient g;
    g.c_s = Eigen::VectorXd::Zero(data.n_items());
    g.P_s = Eigen::MatrixXd::Zero(data.n_users(), data.n_items());
    g.P_lambda = Eigen::VectorXd::Zero(data.n_users());

    if (support_entry)
        support_entry->assign(static_cast<std::size_t>(data.n_users()), std::nullopt);
    if (on_checkpoint) on_checkpoint(0, 0.0, cur);

    for (int k = 1; k <= hp.max_iters; ++k) {
        accumulate_gradient(ws, cur, scratch, g);
        advance(cur, g, hp, alpha, next, k, support_entry);
        std::swap(cur, next);
        if (on_checkpoint && (k % hp.checkpoint_every == 0 || k == hp.max_iters))
            on_checkpoint(k, k * alpha, cur);
    }
}

}  // namespace detail

PathRecord fit_path(const ComparisonDataset& data, const HyperParams& hp) {
    PathRecord record;
    record.alpha = resolve_alpha(data, hp);
    detail::run_path(
        data, hp, record.alpha,
        [&](int k, double tau, const ModelState& state) {
            record.checkpoints.push_back(PathCheckpoint{k, tau, state});
        },
        &record.support_entry);
    return record;
}

FitResult cross_validate_stop(const ComparisonDataset& data, const HyperParams& hp, int threads,
                              DecisionRule rule) {
    hp.validate();
    if (hp.cv_folds < 2) throw ContractError("cv_folds must be at least 2");
    if (data.empty()) throw ContractError("cannot fit an empty dataset");

    const int folds = hp.cv_folds;
    const double alpha = resolve_alpha(data, hp);

    // Per-user fold assignment, stratified by label. Users with fewer
    // observations than folds keep fold -1 and are always trained on.
    std::vector<int> fold_of(data.size(), -1);
    Rng rng(hp.seed);
    for (int u = 0; u < data.n_users(); ++u) {
        const auto& idx = data.by_user()[static_cast<std::size_t>(u)];
        if (static_cast<int>(idx.size()) < folds) continue;
        for (int label : {-1, 0, 1}) {
            std::vector<std::size_t> group;
            for (std::size_t k : idx)
                if (data.observations()[k].label == label) group.push_back(k);
            if (group.empty()) continue;
            rng.shuffle(group);
            const int offset = static_cast<int>(rng.below(static_cast<std::uint64_t>(folds)));
            for (std::size_t pos = 0; pos < group.size(); ++pos)
                fold_of[group[pos]] = (offset + static_cast<int>(pos)) % folds;
        }
    }

    const std::vector<int> grid = checkpoint_iterations(hp);
    const std::size_t n_checkpoints = grid.size();
    std::vector<std::vector<double>> fold_scores(static_cast<std::size_t>(folds));
    std::vector<bool> fold_used(static_cast<std::size_t>(folds), false);

    HyperParams fold_hp = hp;
    fold_hp.step_policy = StepPolicy::fixed;
    fold_hp.fixed_alpha = alpha;

    const auto run_fold = [&](int f) {
        std::vector<std::size_t> train_idx, val_idx;
        for (std::size_t k = 0; k < data.size(); ++k)
            (fold_of[k] == f ? val_idx : train_idx).push_back(k);
        if (val_idx.empty()) return;
        fold_used[static_cast<std::size_t>(f)] = true;

        const ComparisonDataset train = data.subset(train_idx);
        std::vector<double>& scores = fold_scores[static_cast<std::size_t>(f)];
        scores.reserve(n_checkpoints);
        detail::run_path(
            train, fold_hp, alpha,
            [&](int, double, const ModelState& state) {
                ConfusionTable table;
                for (std::size_t k : val_idx) {
                    const Observation& o = data.observations()[k];
                    const double d = state.score_diff(o.user, o.item_i, o.item_j);
                    table.add(o.label, predict_label(d, state.threshold(o.user), rule));
                }
                scores.push_back(micro_f1(table));
            },
            nullptr);
    };

    if (threads > 1) {
        std::atomic<int> next_fold{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        std::vector<std::thread> pool;
        const int n_workers = std::min(threads, folds);
        for (int t = 0; t < n_workers; ++t)
            pool.emplace_back([&] {
                for (int f = next_fold.fetch_add(1); f < folds; f = next_fold.fetch_add(1)) {
                    try {
                        run_fold(f);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        if (!error) error = std::current_exception();
                    }
                }
            });
        for (auto& t : pool) t.join();
        if (error) std::rethrow_exception(error);
    } else {
        for (int f = 0; f < folds; ++f) run_fold(f);
    }

    FitResult result;
    result.cv_curve.reserve(n_checkpoints);
    for (std::size_t ci = 0; ci < n_checkpoints; ++ci) {
        double sum = 0.0;
        int count = 0;
        for (int f = 0; f < folds; ++f) {
            if (!fold_used[static_cast<std::size_t>(f)]) continue;
            sum += fold_scores[static_cast<std::size_t>(f)][ci];
            ++count;
        }
        if (count == 0)
            throw ContractError(
                "cross-validation needs at least one user with cv_folds observations");
        result.cv_curve.push_back(CvPoint{grid[ci] * alpha, sum / count});
    }

    std::size_t best = 0;
    for (std::size_t ci = 1; ci < n_checkpoints; ++ci)
        if (result.cv_curve[ci].mean_micro_f1 > result.cv_curve[best].mean_micro_f1) best = ci;

    HyperParams refit_hp = hp;
    refit_hp.step_policy = StepPolicy::fixed;
    refit_hp.fixed_alpha = alpha;
    result.path = fit_path(data, refit_hp);

    const double target_tau = result.cv_curve[best].tau;
    std::size_t nearest = 0;
    for (std::size_t ci = 1; ci < result.path.checkpoints.size(); ++ci) {
        const double cur = std::abs(result.path.checkpoints[ci].tau - target_tau);
        const double ref = std::abs(result.path.checkpoints[nearest].tau - target_tau);
        if (cur < ref) nearest = ci;
    }
    result.selected_state = result.path.checkpoints[nearest].state;
    result.selected_tau = result.path.checkpoints[nearest].tau;
    return result;
}

ModelState fit_common_only(const ComparisonDataset& data, const HyperParams& hp) {
    hp.validate();
    if (data.empty()) throw ContractError("cannot fit an empty dataset");

    // Pool all users: aggregate by (item_i, item_j, label).
    struct PooledRow {
        int item_i, item_j, label;
        double weight;
    };
    std::vector<PooledRow> rows;
    {
        std::vector<std::size_t> order(data.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        const auto& obs = data.observations();
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const Observation& x = obs[a];
            const Observation& y = obs[b];
            return std::tie(x.item_i, x.item_j, x.label) < std::tie(y.item_i, y.item_j, y.label);
        });
        for (std::size_t k : order) {
            const Observation& o = obs[k];
            if (!rows.empty() && rows.back().item_i == o.item_i && rows.back().item_j == o.item_j &&
                rows.back().label == o.label) {
                rows.back().weight += 1.0;
                continue;
            }
            rows.push_back(PooledRow{o.item_i, o.item_j, o.label, 1.0});
        }
    }

    const int n = data.n_items();
    const auto pooled_nll = [&](const Eigen::VectorXd& c_s, double c_lambda) {
        double total = 0.0;
        for (const PooledRow& r : rows) {
            const double d = c_s[r.item_i] - c_s[r.item_j];
            total += r.weight *
                     detail::observation_nll(r.label, c_lambda - d, -c_lambda - d, c_lambda);
        }
        return total;
    };

    // Step size from the pooled predictor map; halved whenever a step fails
    // to decrease the objective.
    double lambda_max = 0.0;
    {
        Rng rng(kPowerIterationSeed);
        Eigen::VectorXd v(n + 1);
        for (int k = 0; k <= n; ++k) v[k] = rng.normal(0.0, 1.0);
        v.normalize();
        Eigen::VectorXd w(n + 1);
        for (int step = 0; step < 100; ++step) {
            w.setZero();
            for (const PooledRow& r : rows) {
                const double s = r.weight * (-v[r.item_i] + v[r.item_j] + v[n]);
                w[r.item_i] -= s;
                w[r.item_j] += s;
                w[n] += s;
            }
            const double norm = w.norm();
            if (norm == 0.0) break;
            lambda_max = norm;
            v = w / norm;
        }
    }
    double step = 1.0 / std::max(0.5 * 1.05 * lambda_max, 1e-12);

    Eigen::VectorXd c_s = Eigen::VectorXd::Zero(n);
    double c_lambda = 1.0;
    Eigen::VectorXd g_cs(n);
    double prev = pooled_nll(c_s, c_lambda);

    constexpr int kMaxIters = 100000;
    constexpr double kRelTol = 1e-8;
    for (int it = 0; it < kMaxIters; ++it) {
        g_cs.setZero();
        double g_cl = 0.0;
        for (const PooledRow& r : rows) {
            const double d = c_s[r.item_i] - c_s[r.item_j];
            const auto [d_zp, d_zm] =
                detail::loss_predictor_grad(r.label, c_lambda - d, -c_lambda - d, c_lambda);
            const double g_d = -(d_zp + d_zm) * r.weight;
            if (!std::isfinite(g_d))
                throw NumericError("non-finite gradient in common-only fit");
            g_cs[r.item_i] += g_d;
            g_cs[r.item_j] -= g_d;
            g_cl += (d_zp - d_zm) * r.weight;
        }

        Eigen::VectorXd cand_cs = c_s - step * g_cs;
        double cand_cl = std::max(c_lambda - step * g_cl, hp.delta);
        double cur = pooled_nll(cand_cs, cand_cl);
        while (!(cur <= prev) && step > 1e-300) {
            step *= 0.5;
            cand_cs = c_s - step * g_cs;
            cand_cl = std::max(c_lambda - step * g_cl, hp.delta);
            cur = pooled_nll(cand_cs, cand_cl);
        }
        c_s.swap(cand_cs);
        c_lambda = cand_cl;
        const bool converged = std::abs(prev - cur) <= kRelTol * std::max(1.0, std::abs(prev));
        prev = cur;
        if (converged) break;
    }

    ModelState state = ModelState::zero_initialized(n, data.n_users());
    state.c_s = c_s;
    state.c_lambda = c_lambda;
    return state;
}

}  // namespace tierank
