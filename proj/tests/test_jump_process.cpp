#include "support/test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace nmqj;
using testutil::random_density;
using testutil::random_hermitian;

namespace {

JumpModel pure_decay(double gamma = 1.0) {
    JumpModel m;
    m.l0 = Superoperator::zero(2);
    m.channels = {{"sigma", lowering_op(), gamma}};
    return m;
}

JumpModel driven_decay(double gamma, double omega) {
    JumpModel m;
    m.l0 = hamiltonian_superop(omega * pauli_x());
    m.channels = {{"sigma", lowering_op(), gamma}};
    return m;
}

}  // namespace

TEST_CASE("split with no channels is the bare generator") {
    JumpModel m;
    m.l0 = hamiltonian_superop(random_hermitian(2));
    const auto s = split(m);
    REQUIRE(s.jump.mat.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((s.drift.mat - m.l0.mat).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jump part of a single lowering channel") {
    const double gamma = 1.7;
    const auto s = split(pure_decay(gamma));
    const CMat rho = basis_matrix(2, 0, 0);  // |+><+|
    CMat expect = CMat::Zero(2, 2);
    expect(1, 1) = gamma;
    REQUIRE((s.jump.apply(rho) - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("drift and jump traces cancel") {
    JumpModel m;
    m.l0 = hamiltonian_superop(random_hermitian(3)) + 0.3 * dissipator(testutil::random_matrix(3));
    m.channels = {{"a", testutil::random_matrix(3), 0.8}, {"b", testutil::random_matrix(3), 0.4}};
    const auto s = split(m);
    for (int trial = 0; trial < 20; ++trial) {
        const CMat rho = random_density(3);
        REQUIRE(std::abs(s.drift.apply(rho).trace() + s.jump.apply(rho).trace()) < 1e-12);
    }
    // exact additive decomposition
    Superoperator full = m.l0;
    for (const auto& c : m.channels) full += c.rate * dissipator(c.op);
    REQUIRE(((s.drift + s.jump).mat - full.mat).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("jump map resets the lowering channel to the ground state") {
    const auto s = split(pure_decay());
    const CMat rho = random_density(2);
    const auto reset = jump_map(s, DensityMatrix{rho, true});
    REQUIRE((reset.mat - basis_matrix(2, 1, 1)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("jump map on a dark state raises") {
    const auto s = split(pure_decay());
    REQUIRE_THROWS_AS(jump_map(s, DensityMatrix{basis_matrix(2, 1, 1), true}), DarkStateError);
}

TEST_CASE("renewal channels mix the reset states with rate weights") {
    // V_a = |r_a><u| with common source |u> = |0> of a 3-level system
    OperatorSet ch = {{"r1", basis_matrix(3, 1, 0), 0.75}, {"r2", basis_matrix(3, 2, 0), 0.25}};
    JumpModel m;
    m.l0 = Superoperator::zero(3);
    m.channels = ch;
    const auto s = split(m);
    const CMat rho = random_density(3);
    const auto reset = jump_map(s, DensityMatrix{rho, true});
    CMat expect = CMat::Zero(3, 3);
    expect(1, 1) = 0.75;
    expect(2, 2) = 0.25;
    REQUIRE((reset.mat - expect).cwiseAbs().maxCoeff() < 1e-12);

    const auto cls = classify_renewal(ch);
    REQUIRE(cls.renewal);
    REQUIRE((cls.reset_state->mat - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("non-renewal channels depend on the pre-detection state") {
    OperatorSet ch = {{"a", basis_matrix(3, 1, 0), 1.0}, {"b", basis_matrix(3, 0, 2), 1.0}};
    REQUIRE_FALSE(classify_renewal(ch).renewal);

    JumpModel m;
    m.l0 = Superoperator::zero(3);
    m.channels = ch;
    const auto s = split(m);
    // weights proportional to gamma_a <u_a|rho|u_a>
    CMat rho = CMat::Zero(3, 3);
    rho(0, 0) = 0.25;
    rho(2, 2) = 0.75;
    const auto reset = jump_map(s, DensityMatrix{rho, true});
    REQUIRE(reset.mat(1, 1).real() == Catch::Approx(0.25));
    REQUIRE(reset.mat(0, 0).real() == Catch::Approx(0.75));
}

TEST_CASE("single rank-1 channel classifies as renewal") {
    REQUIRE(classify_renewal({{"sigma", lowering_op(), 2.0}}).renewal);
}

TEST_CASE("interval statistics of pure decay") {
    const double gamma = 1.3;
    const auto s = split(pure_decay(gamma));
    std::vector<double> grid;
    for (int k = 0; k <= 50; ++k) grid.push_back(0.1 * k);
    const auto st = interval_statistics(s, basis_matrix(2, 0, 0), grid);
    REQUIRE(st.p0.front() == Catch::Approx(1.0));
    for (std::size_t k = 0; k < grid.size(); ++k) {
        REQUIRE(st.p0[k] == Catch::Approx(std::exp(-gamma * grid[k])).margin(1e-12));
        REQUIRE(st.w[k] == Catch::Approx(gamma * std::exp(-gamma * grid[k])).margin(1e-12));
    }
    // integral of w up to the horizon stays below 1
    double integral = 0.0;
    for (std::size_t k = 1; k < grid.size(); ++k)
        integral += 0.5 * (st.w[k] + st.w[k - 1]) * (grid[k] - grid[k - 1]);
    REQUIRE(integral <= 1.0 + 1e-9);
    REQUIRE(integral == Catch::Approx(1.0 - std::exp(-gamma * 5.0)).margin(1e-3));
}

TEST_CASE("P0 equals one at t=0 for any state") {
    const auto s = split(driven_decay(1.0, 2.0));
    for (int trial = 0; trial < 5; ++trial) {
        const auto st = interval_statistics(s, random_density(2), {0.0});
        REQUIRE(st.p0.front() == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("trajectory with no channels has no jumps") {
    JumpModel m;
    m.l0 = hamiltonian_superop(pauli_x());
    const auto s = split(m);
    const auto tr = sample_trajectory(s, ket_plus_state(), 5.0, 0.05, 7);
    REQUIRE(tr.jump_times.empty());
    // unitary drift only: purity stays 1
    for (const auto& rho : tr.states)
        REQUIRE(std::abs((rho * rho).trace().real() - 1.0) < 1e-9);
}

TEST_CASE("pure-decay first-jump law is exponential") {
    const double gamma = 1.0;
    const auto s = split(pure_decay(gamma));
    std::vector<double> first_jumps;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto tr = sample_trajectory(s, ket_plus_state(), 40.0, 0.05, 99, std::uint64_t(i));
        if (!tr.jump_times.empty()) first_jumps.push_back(tr.jump_times.front());
        REQUIRE(tr.jump_times.size() <= 1);  // ground state is dark
        if (!tr.jump_times.empty()) REQUIRE(tr.truncated);
    }
    REQUIRE(first_jumps.size() > 9990u);  // P(no jump by 40) ~ 4e-18
    const double p = testutil::ks_test_one_sample(
        first_jumps, [gamma](double t) { return 1.0 - std::exp(-gamma * t); });
    REQUIRE(p > 0.01);
}

TEST_CASE("dt-step probability vanishes on the ground state") {
    const auto s = split(pure_decay());
    REQUIRE(jump_intensity(s.jump, basis_matrix(2, 1, 1)) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("dt-step probability is recomputable from the stored states alone") {
    const double dt = 0.002;
    const auto s = split(driven_decay(1.0, 2.0));
    const auto tr = sample_trajectory_dtstep(s, y_minus_state(), 3.0, dt, 5);
    // the sampler's recorded maximum per-step probability must equal the
    // maximum recomputed from the stored pre-step states (no hidden history)
    double recomputed = 0.0;
    for (std::size_t k = 0; k + 1 < tr.states.size(); ++k)
        recomputed = std::max(recomputed, dt * jump_intensity(s.jump, tr.states[k]));
    REQUIRE(tr.max_step_jump_prob == Catch::Approx(recomputed).margin(1e-12));
    REQUIRE(tr.max_step_jump_prob < Tolerances::defaults().dp_warn);
}

TEST_CASE("both sampling algorithms agree on the mean click count") {
    const double gamma = 1.0, omega = 2.0;
    const auto s = split(driven_decay(gamma, omega));
    const int n = 600;
    const double t_max = 8.0;
    double mean_a = 0.0, mean_b = 0.0, var_a = 0.0, var_b = 0.0;
    std::vector<double> counts_a, counts_b;
    for (int i = 0; i < n; ++i) {
        counts_a.push_back(double(
            sample_trajectory(s, y_minus_state(), t_max, 0.02, 1001, std::uint64_t(i)).jump_times.size()));
        counts_b.push_back(double(
            sample_trajectory_dtstep(s, y_minus_state(), t_max, 0.002, 2002, std::uint64_t(i))
                .jump_times.size()));
    }
    for (double c : counts_a) mean_a += c / n;
    for (double c : counts_b) mean_b += c / n;
    for (double c : counts_a) var_a += (c - mean_a) * (c - mean_a) / (n - 1);
    for (double c : counts_b) var_b += (c - mean_b) * (c - mean_b) / (n - 1);
    const double se = std::sqrt(var_a / n + var_b / n);
    REQUIRE(std::abs(mean_a - mean_b) < 3.0 * se);
}

TEST_CASE("ensemble mean reproduces the master equation") {
    const double gamma = 1.0, omega = 2.0;
    const auto s = split(driven_decay(gamma, omega));
    EnsembleConfig cfg;
    cfg.n_traj = 2000;
    cfg.base_seed = 31415;
    cfg.workers = 2;
    const double t_max = 6.0, dt = 0.05;
    const auto ens = run_ensemble_markov(s, y_minus_state(), t_max, dt, cfg);

    const Superoperator full = s.full();
    int violations = 0, checks = 0;
    for (std::size_t g = 0; g < ens.series.t.size(); ++g) {
        const CMat exact =
            devectorize(CVec(expm(full, ens.series.t[g]).mat * vectorize(y_minus_state().mat)));
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) {
                const double err_re = std::abs(ens.series.mean[g](r, c).real() - exact(r, c).real());
                const double err_im = std::abs(ens.series.mean[g](r, c).imag() - exact(r, c).imag());
                const double floor_se = 1e-12;
                ++checks;
                if (err_re > 4.0 * std::max(ens.series.stderr_re[g](r, c), floor_se) + 1e-9 ||
                    err_im > 4.0 * std::max(ens.series.stderr_im[g](r, c), floor_se) + 1e-9)
                    ++violations;
            }
    }
    REQUIRE(double(violations) / checks < 0.01);
    // mean trace is one pointwise
    for (const auto& m : ens.series.mean)
        REQUIRE(std::abs(m.trace().real() - 1.0) < 1e-9);
}

TEST_CASE("survival samples never increase along trajectories") {
    const auto s = split(driven_decay(1.0, 2.0));
    std::vector<double> grid;
    for (int k = 0; k <= 200; ++k) grid.push_back(0.02 * k);
    for (int trial = 0; trial < 4; ++trial) {
        const auto st = interval_statistics(s, random_density(2), grid);
        for (std::size_t k = 1; k < st.p0.size(); ++k)
            REQUIRE(st.p0[k] <= st.p0[k - 1] + Tolerances::defaults().survival_slack);
    }
}

TEST_CASE("conditional states stay positive semidefinite") {
    const auto s = split(driven_decay(1.0, 2.0));
    const auto tr = sample_trajectory(s, y_minus_state(), 6.0, 0.05, 4242);
    for (const auto& rho : tr.states) {
        Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (rho + rho.adjoint()));
        REQUIRE(es.eigenvalues().minCoeff() > Tolerances::defaults().eigenvalue_floor);
    }
}

TEST_CASE("trajectories are reproducible bit for bit") {
    const auto s = split(driven_decay(1.0, 2.0));
    const auto a = sample_trajectory(s, y_minus_state(), 6.0, 0.05, 777, 3);
    const auto b = sample_trajectory(s, y_minus_state(), 6.0, 0.05, 777, 3);
    REQUIRE(a.jump_times == b.jump_times);
    for (std::size_t g = 0; g < a.states.size(); ++g)
        REQUIRE((a.states[g] - b.states[g]).cwiseAbs().maxCoeff() == 0.0);
}
