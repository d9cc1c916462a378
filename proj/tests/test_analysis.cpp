#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "neardgd/methods.hpp"

using namespace neardgd;

namespace {

ObjectiveSuite identity_suite(int n) {
    // every agent: f_i(x) = 1/2 ||x||^2 - b_i . x with A = I, so mu = L = 1
    std::vector<LocalObjective> locals;
    auto g = rng::engine(77);
    for (int i = 0; i < n; ++i) {
        QuadraticObjective q;
        q.A = Eigen::Matrix2d::Identity();
        q.b = Eigen::Vector2d(rng::normal(g), rng::normal(g));
        locals.push_back(q);
    }
    return make_suite(std::move(locals));
}

TheoreticalConstants constants_for(const ObjectiveSuite& suite, const ConsensusMatrix& cm,
                                   double sigma_sq, double alpha,
                                   std::optional<double> psi = std::nullopt) {
    return compute_constants(suite, cm, sigma_sq, alpha, psi, StackedState(suite.n, suite.p));
}

}  // namespace

TEST_CASE("compute_constants: gamma arithmetic") {
    auto suite = identity_suite(3);
    auto cm = metropolis_weights(generate_graph(GraphKind::complete, 3, 0));
    const auto tc = constants_for(suite, cm, 0.0, 0.5);
    for (double gi : tc.gamma_i_list) REQUIRE(gi == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(tc.gamma == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(tc.gamma_bar == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(tc.alpha_max == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(tc.alpha_admissible);

    // sigma = 0 kills Delta and the noise share of D^2
    REQUIRE(tc.delta == 0.0);
    double ustar_sq = 0.0, y0_to_u = 0.0;
    for (const auto& u : suite.u_star_list) {
        ustar_sq += u.squaredNorm();
        y0_to_u += u.squaredNorm();  // y0 = 0
    }
    const double nu3 = tc.nu * tc.nu * tc.nu;
    REQUIRE(tc.d_sq ==
            Catch::Approx(2.0 * y0_to_u + (8.0 + 2.0 * nu3) / nu3 * ustar_sq).margin(1e-12));
}

TEST_CASE("compute_constants: mixed curvatures") {
    // n = 2 with mu = (1,1), L = (1,3): gamma_bar = 2/3, gamma = 1/2
    QuadraticObjective a{Eigen::Matrix2d::Identity(), Eigen::Vector2d(1.0, 0.0)};
    QuadraticObjective b{Eigen::Vector2d(1.0, 3.0).asDiagonal().toDenseMatrix(),
                         Eigen::Vector2d(0.0, 1.0)};
    auto suite = make_suite({a, b});
    auto cm = metropolis_weights(generate_graph(GraphKind::complete, 2, 0));
    const auto tc = constants_for(suite, cm, 1.0, 0.25);
    REQUIRE(tc.gamma_bar == Catch::Approx(2.0 / 3.0).margin(1e-12));
    REQUIRE(tc.gamma == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(tc.alpha_max == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(tc.delta == Catch::Approx(2.0 * 0.25 * 0.25).margin(1e-15));
    REQUIRE(tc.c1 < 1.0);
    REQUIRE(tc.theta < 1.0);
    REQUIRE(tc.cap_c >= tc.x0_err_sq);
}

TEST_CASE("compute_constants: psi and nu guards") {
    auto suite = identity_suite(2);
    auto cm = metropolis_weights(generate_graph(GraphKind::complete, 2, 0));
    // alpha = 0.25: 2 a gbar = 0.25, psi upper limit = 1/3
    REQUIRE_NOTHROW(constants_for(suite, cm, 0.0, 0.25, 0.3));
    REQUIRE_THROWS_AS(constants_for(suite, cm, 0.0, 0.25, 0.4), Error);
    REQUIRE_THROWS_AS(constants_for(suite, cm, 0.0, 0.25, -0.1), Error);
    // nu = 2 alpha gamma >= 1
    REQUIRE_THROWS_AS(constants_for(suite, cm, 0.0, 1.5), Error);

    // inadmissible alpha is flagged but tolerated when nu < 1
    QuadraticObjective spread{Eigen::Vector2d(0.1, 9.9).asDiagonal().toDenseMatrix(),
                              Eigen::Vector2d::Zero()};
    auto wide = make_suite({spread, spread});
    const auto tc = constants_for(wide, cm, 0.0, 0.5);
    REQUIRE(!tc.alpha_admissible);  // alpha_max = 0.2
    REQUIRE(tc.nu < 1.0);
}

TEST_CASE("sgd_neighborhood") {
    auto suite = identity_suite(1);
    auto cm = metropolis_weights(generate_graph(GraphKind::complete, 1, 0));
    const auto tc = constants_for(suite, cm, 1.0, 0.1);
    REQUIRE(sgd_neighborhood(tc, 0.1, 0.0) == 0.0);
    REQUIRE(sgd_neighborhood(tc, 0.1, 1.0) == Catch::Approx(0.1).margin(1e-15));
}

TEST_CASE("mean_error_bound: limits and term structure") {
    auto suite = identity_suite(4);
    auto cm = metropolis_weights(generate_graph(GraphKind::path, 4, 0));
    const auto tc = constants_for(suite, cm, 2.0, 0.25);

    const auto b0 = mean_error_bound(tc, 0, 1);
    REQUIRE(b0.transient == Catch::Approx(tc.x0_err_sq).margin(1e-12));
    const auto b_inf = mean_error_bound(tc, 4000, 1);
    REQUIRE(b_inf.transient <= 1e-200);  // c1^k -> 0

    // network term shrinks by exactly beta^2 per extra round
    const auto t1 = mean_error_bound(tc, 5, 1);
    const auto t2 = mean_error_bound(tc, 5, 2);
    REQUIRE(t2.network == Catch::Approx(t1.network * tc.beta * tc.beta).epsilon(1e-12));

    // beta = 0 on a complete pair with uniform weights: no network error
    auto pair_suite = identity_suite(2);
    auto pair_cm = metropolis_weights(generate_graph(GraphKind::complete, 2, 0));
    const auto pair_tc = constants_for(pair_suite, pair_cm, 2.0, 0.25);
    REQUIRE(mean_error_bound(pair_tc, 3, 1).network == 0.0);

    // monotone: nonincreasing in both k and t
    double prev = mean_error_bound(tc, 0, 1).total();
    for (long long k = 1; k <= 50; ++k) {
        const double cur = mean_error_bound(tc, k, 1).total();
        REQUIRE(cur <= prev + 1e-15);
        prev = cur;
    }
    prev = mean_error_bound(tc, 5, 1).total();
    for (long long t = 2; t <= 30; ++t) {
        const double cur = mean_error_bound(tc, 5, t).total();
        REQUIRE(cur <= prev + 1e-15);
        prev = cur;
    }
}

TEST_CASE("limit_neighborhood") {
    TheoreticalConstants tc;
    tc.n = 10;
    tc.alpha = 0.05;
    tc.sigma_sq = 4.0;
    tc.c1 = 0.9;
    REQUIRE(limit_neighborhood(tc) == Catch::Approx(0.01).margin(1e-15));
    tc.sigma_sq = 0.0;
    REQUIRE(limit_neighborhood(tc) == 0.0);

    // doubling n at fixed sigma^2 and c1 halves the neighborhood
    tc.sigma_sq = 4.0;
    const double at_10 = limit_neighborhood(tc);
    tc.n = 20;
    REQUIRE(limit_neighborhood(tc) == Catch::Approx(at_10 / 2.0).epsilon(1e-12));

    tc.c1 = 1.0;
    REQUIRE_THROWS_AS(limit_neighborhood(tc), Error);
}

TEST_CASE("psi sweep: c1 tends to 1 - 2 alpha gamma_bar while c2 blows up") {
    auto suite = identity_suite(3);
    auto cm = metropolis_weights(generate_graph(GraphKind::ring, 3, 0));
    const double alpha = 0.25;
    const double limit = 1.0 - 2.0 * alpha * 0.5;
    double prev_gap = 1e9, prev_c2 = 0.0;
    for (double psi : {1e-2, 1e-4, 1e-6}) {
        const auto tc = constants_for(suite, cm, 1.0, alpha, psi);
        const double gap = std::abs(tc.c1 - limit);
        REQUIRE(gap < prev_gap);
        REQUIRE(tc.c2_sq > prev_c2);
        prev_gap = gap;
        prev_c2 = tc.c2_sq;
    }
    const auto tight = constants_for(suite, cm, 1.0, alpha, 1e-6);
    REQUIRE(std::abs(tight.c1 - limit) <= 1e-5);
}

TEST_CASE("compute_metrics_row") {
    auto suite = identity_suite(2);
    StackedState equal(2, 2);
    equal.cols.col(0) = Eigen::Vector2d(1.0, 2.0);
    equal.cols.col(1) = Eigen::Vector2d(1.0, 2.0);
    const auto row = compute_metrics_row(equal, equal, suite, 3, 2, 7, 11);
    REQUIRE(row.cons_dev == 0.0);
    REQUIRE(row.k == 3);
    REQUIRE(row.comm_total == 7);

    StackedState at_star(2, 2);
    at_star.cols.col(0) = suite.x_star;
    at_star.cols.col(1) = suite.x_star;
    const auto star_row = compute_metrics_row(at_star, at_star, suite, 0, 0, 0, 0);
    REQUIRE(star_row.mean_err == 0.0);
    REQUIRE(std::abs(star_row.fgap) <= 1e-12);

    // scalar example: blocks {0},{2} against x* = 1
    QuadraticObjective q{Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Constant(1, 1.0)};
    auto scalar_suite = make_suite({q, q});
    StackedState split(2, 1);
    split.cols(0, 0) = 0.0;
    split.cols(0, 1) = 2.0;
    const auto split_row = compute_metrics_row(split, split, scalar_suite, 0, 0, 0, 0, true);
    REQUIRE(split_row.mean_err == 0.0);
    REQUIRE(split_row.cons_dev == 1.0);
    REQUIRE(split_row.grad_avg_dev.has_value());
    // identical quadratics: h_k = hbar_k exactly
    REQUIRE(*split_row.grad_avg_dev <= 1e-28);
}

TEST_CASE("plateau_estimate") {
    RunRecord rec;
    for (int k = 0; k < 100; ++k) {
        RunRecord::Row row;
        row.k = k;
        row.mean_err = 2.5;
        rec.rows.push_back(row);
    }
    REQUIRE(plateau_estimate(rec) == Catch::Approx(2.5).margin(1e-15));

    rec.rows[98].mean_err = 0.0;
    rec.rows[99].mean_err = 0.0;
    REQUIRE(plateau_estimate_rows(rec, 2) == 0.0);

    RunRecord empty;
    REQUIRE_THROWS_AS(plateau_estimate(empty), Error);
    REQUIRE_THROWS_AS(plateau_estimate_rows(rec, 0), Error);
    REQUIRE_THROWS_AS(plateau_estimate_rows(rec, 101), Error);

    // long records cap the window at 2000 trailing rows
    RunRecord longrec;
    for (int k = 0; k < 30'000; ++k) {
        RunRecord::Row row;
        row.mean_err = k < 28'000 ? 100.0 : 1.0;
        longrec.rows.push_back(row);
    }
    REQUIRE(plateau_estimate(longrec) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("csv serialization uses the fixed header") {
    RunRecord rec;
    RunRecord::Row row;
    row.k = 1;
    row.t_k = 2;
    row.comm_total = 3;
    row.evals_total = 4;
    row.mean_err = 0.5;
    row.cons_dev = 0.25;
    row.y_cons_dev = 0.125;
    row.fgap = 1e-300;
    rec.rows.push_back(row);
    std::ostringstream out;
    write_csv(out, rec);
    std::istringstream lines(out.str());
    std::string header, data;
    std::getline(lines, header);
    std::getline(lines, data);
    REQUIRE(header == "k,t_k,comm_total,evals_total,mean_err,cons_dev,y_cons_dev,fgap");
    REQUIRE(data == "1,2,3,4,0.5,0.25,0.125,1e-300");
}

TEST_CASE("constants serialize to flat json") {
    auto suite = identity_suite(2);
    auto cm = metropolis_weights(generate_graph(GraphKind::complete, 2, 0));
    const auto tc = constants_for(suite, cm, 1.0, 0.25);
    const auto j = constants_to_json(tc);
    for (const char* key : {"n", "alpha", "sigma_sq", "beta", "gamma", "gamma_bar", "nu", "delta",
                            "d_sq", "psi", "c1", "c2_sq", "theta", "cap_c", "alpha_max",
                            "alpha_admissible", "x0_err_sq"})
        REQUIRE(j.contains(key));
    REQUIRE(j["n"] == 2);
    REQUIRE(j["gamma_i_list"].size() == 2);
}

TEST_CASE("increasing-schedule plateau lands inside the limit-neighborhood bracket") {
    auto suite = make_quadratic_suite(4, 3, 1.0, 3.0, 21, /*replicate=*/true);
    auto cm = metropolis_weights(generate_graph(GraphKind::ring, 4, 0));
    const double alpha = 0.25, sigma = 1.0;
    OracleConfig noisy{OracleMode::additive_gaussian, 1, true, sigma};
    const auto tc = compute_constants(suite, cm, sigma * sigma, alpha, std::nullopt,
                                      StackedState(suite.n, suite.p));
    const double neighborhood = limit_neighborhood(tc);

    MethodSpec spec{MethodKind::near_dgd, ConsensusSchedule::increasing(), ""};
    double plateau = 0.0;
    constexpr int kSeeds = 20;
    for (int seed = 1; seed <= kSeeds; ++seed) {
        StochasticOracle oracle(noisy, static_cast<std::uint64_t>(seed), suite);
        const auto out = run(spec, alpha, cm, oracle, suite, 500);
        plateau += plateau_estimate(out.record);
    }
    plateau /= kSeeds;
    // the O(.) constant absorbs slack: bracket rather than bound
    REQUIRE(plateau >= 0.25 * neighborhood);
    REQUIRE(plateau <= 4.0 * neighborhood);
}

TEST_CASE("mean-error bound dominates the 20-seed empirical mean") {
    // replicated quadratic with additive noise on a ring
    auto suite = make_quadratic_suite(4, 2, 1.0, 3.0, 15, /*replicate=*/true);
    auto cm = metropolis_weights(generate_graph(GraphKind::ring, 4, 0));
    const double alpha = 0.2, sigma = 1.0;
    OracleConfig noisy{OracleMode::additive_gaussian, 1, true, sigma};
    const auto tc = constants_for(suite, cm, sigma * sigma, alpha);

    constexpr int kSeeds = 20;
    constexpr long long kIters = 400;
    std::vector<double> mean_err(kIters, 0.0), second(kIters, 0.0);
    MethodSpec spec{MethodKind::near_dgd, ConsensusSchedule::constant(1), ""};
    for (int seed = 1; seed <= kSeeds; ++seed) {
        StochasticOracle oracle(noisy, static_cast<std::uint64_t>(seed), suite);
        const auto out = run(spec, alpha, cm, oracle, suite, kIters);
        for (long long k = 0; k < kIters; ++k) {
            const double e = out.record.rows[static_cast<std::size_t>(k)].mean_err;
            mean_err[static_cast<std::size_t>(k)] += e;
            second[static_cast<std::size_t>(k)] += e * e;
        }
    }
    int flagged = 0;
    for (long long k = 0; k < kIters; ++k) {
        const double m = mean_err[static_cast<std::size_t>(k)] / kSeeds;
        const double var =
            std::max(second[static_cast<std::size_t>(k)] / kSeeds - m * m, 0.0);
        const double se = std::sqrt(var / kSeeds);
        const double bound = mean_error_bound(tc, k, 1).total();
        if (m <= bound) continue;
        if (m <= bound + 2.0 * se) {
            ++flagged;  // within statistical wiggle: flag, not fail
            continue;
        }
        CAPTURE(k, m, bound, se);
        FAIL("20-seed mean exceeds the mean-error bound");
    }
    REQUIRE(flagged <= kIters / 20);
}
