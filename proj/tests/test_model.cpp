#include <doctest.h>

#include <cmath>

#include "test_helpers.hpp"
#include "tierank/model.hpp"

using namespace tierank;
using tierank::testing::finite_difference_gradient;
using tierank::testing::random_instance;
using tierank::testing::relative_error;

namespace {

// Extended-precision scalar oracle for the three class masses.
struct LongDoubleProbs {
    long double win, tie, lose;
};

LongDoubleProbs oracle_probs(long double d, long double lambda) {
    const auto sigma = [](long double t) -> long double {
        if (t >= 0) return 1.0L / (1.0L + std::exp(-t));
        const long double e = std::exp(t);
        return e / (1.0L + e);
    };
    const long double zp = lambda - d;
    const long double zm = -lambda - d;
    return {1.0L - sigma(zp), sigma(zp) - sigma(zm), sigma(zm)};
}

ComparisonDataset single_observation(int label) {
    return ComparisonDataset(2, 1, {Observation{0, 0, 1, label}});
}

}  // namespace

TEST_CASE("class probabilities at the symmetric closed form") {
    const double ln3 = std::log(3.0);
    const ClassProbabilities p = class_probabilities(0.0, ln3);
    CHECK(p.p_win == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p.p_tie == doctest::Approx(0.50).epsilon(1e-12));
    CHECK(p.p_lose == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("class probabilities saturate without losing the small masses") {
    const ClassProbabilities p = class_probabilities(50.0, 1.5);
    CHECK(p.p_win >= 1.0 - 1e-15);
    CHECK(p.p_tie > 0.0);
    CHECK(p.p_tie < 1e-15);
    CHECK(p.p_lose > 0.0);
    CHECK(p.p_lose < 1e-15);
}

TEST_CASE("class probabilities match the extended-precision oracle") {
    // Frozen from the long double oracle below: d = 1.0, lambda = 1.5.
    const ClassProbabilities p = class_probabilities(1.0, 1.5);
    CHECK(std::abs(p.p_win - 0.3775406687981454) < 1e-6);
    CHECK(std::abs(p.p_tie - 0.5466011511806110) < 1e-6);
    CHECK(std::abs(p.p_lose - 0.0758581800212436) < 1e-6);

    const LongDoubleProbs o = oracle_probs(1.0L, 1.5L);
    CHECK(std::abs(p.p_win - static_cast<double>(o.win)) < 1e-13);
    CHECK(std::abs(p.p_tie - static_cast<double>(o.tie)) < 1e-13);
    CHECK(std::abs(p.p_lose - static_cast<double>(o.lose)) < 1e-13);
}

TEST_CASE("non-positive lambda is a contract violation") {
    CHECK_THROWS_AS(class_probabilities(0.3, 0.0), ContractError);
    CHECK_THROWS_AS(class_probabilities(0.3, -1.0), ContractError);
}

TEST_CASE("probabilities normalize and mirror over a wide grid") {
    for (double lambda : {0.01, 0.05, 0.3, 1.0, 3.0, 10.0, 30.0, 50.0}) {
        for (double d = -60.0; d <= 60.0; d += 1.5) {
            const ClassProbabilities p = class_probabilities(d, lambda);
            CHECK(std::abs(p.p_win + p.p_tie + p.p_lose - 1.0) <= 1e-12);

            const ClassProbabilities q = class_probabilities(-d, lambda);
            CHECK(q.p_win == p.p_lose);
            CHECK(q.p_lose == p.p_win);
            CHECK(q.p_tie == p.p_tie);
        }
    }
}

TEST_CASE("stable tie mass agrees with the naive difference where it is benign") {
    for (double lambda : {0.01, 0.1, 0.7, 1.5, 5.0, 20.0}) {
        for (double d = -60.0; d <= 60.0; d += 0.7) {
            const double naive = detail::sigmoid(lambda - d) - detail::sigmoid(-lambda - d);
            if (naive < 1e-8) continue;
            const ClassProbabilities p = class_probabilities(d, lambda);
            CHECK(std::abs(p.p_tie - naive) <= 1e-12);
        }
    }
}

TEST_CASE("negative log-likelihood closed-form cases") {
    const ModelState empty_state = ModelState::zero_initialized(2, 1);
    CHECK(negative_log_likelihood(ComparisonDataset(2, 1, {}), empty_state) == 0.0);

    ModelState state = ModelState::zero_initialized(2, 1);
    state.c_lambda = std::log(3.0);
    CHECK(negative_log_likelihood(single_observation(1), state) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // d = 1, lambda = 1.5, tie observed: -log of the oracle tie mass.
    state.c_s << 1.0, 0.0;
    state.c_lambda = 1.5;
    CHECK(std::abs(negative_log_likelihood(single_observation(0), state) - 0.6040358994153579) <
          1e-9);
}

TEST_CASE("gradient entries telescope to zero sums") {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        const auto [data, state] = random_instance(seed, 5, 3, 40);
        const Gradient g = nll_gradient(data, state);
        CHECK(std::abs(g.c_s.sum()) <= 1e-12);
        for (int u = 0; u < data.n_users(); ++u) CHECK(std::abs(g.P_s.row(u).sum()) <= 1e-12);
    }
}

TEST_CASE("analytic gradient matches central finite differences") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const auto [data, state] = random_instance(seed);
        const Gradient g = nll_gradient(data, state);
        const Gradient fd = finite_difference_gradient(data, state);
        for (int i = 0; i < data.n_items(); ++i)
            CHECK(relative_error(g.c_s[i], fd.c_s[i]) <= 1e-5);
        CHECK(relative_error(g.c_lambda, fd.c_lambda) <= 1e-5);
        for (int u = 0; u < data.n_users(); ++u) {
            for (int i = 0; i < data.n_items(); ++i)
                CHECK(relative_error(g.P_s(u, i), fd.P_s(u, i)) <= 1e-5);
            CHECK(relative_error(g.P_lambda[u], fd.P_lambda[u]) <= 1e-5);
        }
    }
}

TEST_CASE("argmax decision rule with the documented tie-break") {
    CHECK(predict_label(10.0, 1.5) == 1);
    CHECK(predict_label(-10.0, 1.5) == -1);
    CHECK(predict_label(0.0, std::log(3.0)) == 0);
    CHECK(predict_label(1.0, 1.5) == 0);  // 0.5466 beats 0.3775
    CHECK(predict_label(2.5, 1.5) == 1);
}

TEST_CASE("threshold decision rule") {
    CHECK(predict_label(2.0, 1.5, DecisionRule::threshold_on_difference) == 1);
    CHECK(predict_label(1.0, 1.5, DecisionRule::threshold_on_difference) == 0);
    CHECK(predict_label(-1.0, 1.5, DecisionRule::threshold_on_difference) == 0);
    CHECK(predict_label(-2.0, 1.5, DecisionRule::threshold_on_difference) == -1);
}

TEST_CASE("dataset construction validates its invariants") {
    CHECK_THROWS_AS(ComparisonDataset(3, 1, {Observation{0, 1, 1, 0}}), ContractError);
    CHECK_THROWS_AS(ComparisonDataset(3, 1, {Observation{0, 0, 3, 0}}), ContractError);
    CHECK_THROWS_AS(ComparisonDataset(3, 1, {Observation{1, 0, 1, 0}}), ContractError);
    CHECK_THROWS_AS(ComparisonDataset(3, 1, {Observation{0, 0, 1, 2}}), ContractError);

    const ComparisonDataset data(3, 2, {Observation{1, 0, 2, -1}});
    CHECK(data.by_user().size() == 2);
    CHECK(data.by_user()[0].empty());
    CHECK(data.by_user()[1].size() == 1);
}
