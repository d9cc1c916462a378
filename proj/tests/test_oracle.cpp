#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "neardgd/oracle.hpp"

using namespace neardgd;

namespace {

ObjectiveSuite small_logistic_suite(int n = 2) {
    const auto ds = make_synthetic_classification(120, 3, 42);
    return make_logistic_suite(ds, n, 7);
}

ObjectiveSuite small_quadratic_suite() { return make_quadratic_suite(2, 3, 1.0, 4.0, 11); }

}  // namespace

TEST_CASE("exact and degenerate modes reproduce the true gradient") {
    auto suite = small_quadratic_suite();
    const Eigen::Vector3d x(0.3, -1.2, 2.0);

    StochasticOracle exact({OracleMode::exact}, 1, suite);
    REQUIRE(exact.draw(suite, 0, x) == gradient(suite, 0, x));
    REQUIRE(exact.sigma_sq_bound() == 0.0);

    OracleConfig zero_noise{OracleMode::additive_gaussian, 1, true, 0.0};
    StochasticOracle silent(zero_noise, 1, suite);
    REQUIRE(silent.draw(suite, 0, x) == gradient(suite, 0, x));
    REQUIRE(silent.sigma_sq_bound() == 0.0);
}

TEST_CASE("full batch without replacement equals the exact gradient") {
    auto suite = small_logistic_suite();
    const auto& local = std::get<LogisticObjective>(suite.locals[0]);
    OracleConfig cfg{OracleMode::minibatch, static_cast<int>(local.rows.rows()), false, 0.0};
    StochasticOracle oracle(cfg, 3, suite);
    REQUIRE(oracle.sigma_sq_bound() == 0.0);
    const Eigen::Vector3d x(0.5, 0.1, -0.4);
    REQUIRE((oracle.draw(suite, 0, x) - gradient(suite, 0, x)).norm() <= 1e-12);
}

TEST_CASE("minibatch unbiasedness and certified variance") {
    auto suite = small_logistic_suite();
    OracleConfig cfg{OracleMode::minibatch, 4, true, 0.0};
    const double bound = certify_sigma_sq(cfg, suite);
    REQUIRE(bound > 0.0);

    const std::vector<Eigen::VectorXd> points = {
        Eigen::VectorXd::Zero(suite.p), suite.x_star, 0.5 * suite.x_star};
    constexpr int kDraws = 10'000;
    for (const auto& x : points) {
        StochasticOracle oracle(cfg, 99, suite);
        const Eigen::VectorXd truth = gradient(suite, 0, x);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(suite.p);
        Eigen::VectorXd second = Eigen::VectorXd::Zero(suite.p);
        double dev_sq = 0.0;
        for (int d = 0; d < kDraws; ++d) {
            const Eigen::VectorXd g = oracle.draw(suite, 0, x);
            mean += g;
            second += g.cwiseProduct(g);
            dev_sq += (g - truth).squaredNorm();
        }
        mean /= kDraws;
        second /= kDraws;
        dev_sq /= kDraws;
        // per-coordinate: |mean - truth| within 4 standard errors
        for (int d = 0; d < suite.p; ++d) {
            const double var_d = std::max(second(d) - mean(d) * mean(d), 0.0);
            const double se = std::sqrt(var_d / kDraws);
            REQUIRE(std::abs(mean(d) - truth(d)) <= 4.0 * se + 1e-12);
        }
        REQUIRE(dev_sq <= bound);
    }
}

TEST_CASE("additive gaussian noise has the configured total variance") {
    auto suite = small_quadratic_suite();
    const double sigma = 1.7;
    OracleConfig cfg{OracleMode::additive_gaussian, 1, true, sigma};
    REQUIRE(certify_sigma_sq(cfg, suite) == sigma * sigma);

    StochasticOracle oracle(cfg, 5, suite);
    const Eigen::Vector3d x(1.0, 0.0, -1.0);
    const Eigen::VectorXd truth = gradient(suite, 1, x);
    constexpr int kDraws = 10'000;
    double dev_sq = 0.0, dev_4 = 0.0;
    for (int d = 0; d < kDraws; ++d) {
        const double one = (oracle.draw(suite, 1, x) - truth).squaredNorm();
        dev_sq += one;
        dev_4 += one * one;
    }
    dev_sq /= kDraws;
    dev_4 /= kDraws;
    const double se = std::sqrt(std::max(dev_4 - dev_sq * dev_sq, 0.0) / kDraws);
    REQUIRE(std::abs(dev_sq - sigma * sigma) <= 4.0 * se);
}

TEST_CASE("per-(agent, call) streams are independent of call order") {
    auto suite = small_logistic_suite();
    OracleConfig cfg{OracleMode::minibatch, 3, true, 0.0};
    const Eigen::Vector3d x(0.2, -0.1, 0.9);

    StochasticOracle a(cfg, 17, suite);
    a.enable_draw_log();
    // agent 0 twice, then agent 1 twice
    a.draw(suite, 0, x);
    a.draw(suite, 0, x);
    a.draw(suite, 1, x);
    a.draw(suite, 1, x);

    StochasticOracle b(cfg, 17, suite);
    b.enable_draw_log();
    // interleaved
    b.draw(suite, 1, x);
    b.draw(suite, 0, x);
    b.draw(suite, 1, x);
    b.draw(suite, 0, x);

    REQUIRE(a.draw_log()[0] == b.draw_log()[0]);
    REQUIRE(a.draw_log()[1] == b.draw_log()[1]);
    REQUIRE(a.draw_log()[0] != a.draw_log()[1]);  // distinct agent streams
    REQUIRE(a.evals(0) == 2);
    REQUIRE(a.total_evals() == 4);
}

TEST_CASE("draws are deterministic in the run seed") {
    auto suite = small_quadratic_suite();
    OracleConfig cfg{OracleMode::additive_gaussian, 1, true, 2.0};
    const Eigen::Vector3d x(0.0, 1.0, 0.0);
    StochasticOracle a(cfg, 23, suite), b(cfg, 23, suite), c(cfg, 24, suite);
    REQUIRE(a.draw(suite, 0, x) == b.draw(suite, 0, x));
    REQUIRE(a.draw(suite, 0, x) != c.draw(suite, 0, x));
}

TEST_CASE("mode preconditions") {
    auto quad = small_quadratic_suite();
    OracleConfig minibatch{OracleMode::minibatch, 4, true, 0.0};
    REQUIRE_THROWS_AS(certify_sigma_sq(minibatch, quad), Error);
    StochasticOracle oracle(minibatch, 1, quad.n, 1.0);
    REQUIRE_THROWS_AS(oracle.draw(quad, 0, Eigen::Vector3d::Zero()), Error);

    auto logi = small_logistic_suite();
    const auto m = static_cast<int>(std::get<LogisticObjective>(logi.locals[0]).rows.rows());
    OracleConfig too_big{OracleMode::minibatch, m + 1, false, 0.0};
    REQUIRE_THROWS_AS(certify_sigma_sq(too_big, logi), Error);
}

TEST_CASE("aggregate draw for centralized references") {
    auto single = make_quadratic_suite(1, 3, 1.0, 4.0, 2);
    OracleConfig cfg{OracleMode::additive_gaussian, 1, true, 1.0};
    const Eigen::Vector3d x(0.4, 0.4, -0.2);
    StochasticOracle a(cfg, 31, single), b(cfg, 31, single);
    REQUIRE(a.draw_average(single, x) == b.draw(single, 0, x));  // n = 1 coincides

    auto multi = small_quadratic_suite();
    StochasticOracle c(cfg, 31, multi), d(cfg, 31, multi);
    const Eigen::VectorXd avg = c.draw_average(multi, x);
    // unbiased around grad f_bar, noise from agent 0's stream only
    const Eigen::VectorXd noise = avg - average_gradient(multi, x);
    const Eigen::VectorXd direct = d.draw(multi, 0, x) - gradient(multi, 0, x);
    REQUIRE((noise - direct).norm() <= 1e-12);

    OracleConfig mb{OracleMode::minibatch, 2, true, 0.0};
    auto logi = small_logistic_suite();
    StochasticOracle e(mb, 1, logi);
    REQUIRE_THROWS_AS(e.draw_average(logi, Eigen::Vector3d::Zero()), Error);
}
