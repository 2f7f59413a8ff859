#include "support/test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace nmqj;
using testutil::random_density;

namespace {

PropagatorTable tls_table(double t_max = 10.0, double h = 0.005,
                          double gamma = 1.0, double gp = 1.0, double omega = 4.0) {
    const auto model = build_tls_model({gamma, gp, omega});
    const auto cert = validate_symmetry(model).require("tls");
    return reduced_propagator(model, cert, t_max, h);
}

// ancilla-trivial embedding of a driven decay model
BipartiteModel trivial_embedding(double gamma, double omega) {
    BipartiteModel model;
    model.d_s = 2;
    model.d_a = 1;
    model.l0 = hamiltonian_superop(kron(omega * pauli_x(), CMat::Identity(1, 1)));
    model.system_ops = {{"sigma", lowering_op()}};
    model.ancilla_labels = {"1"};
    model.rates = RateTensor::zeros(1, 1);
    model.rates.at(0, 0, 0) = gamma;
    return model;
}

}  // namespace

TEST_CASE("reduced propagator starts at the identity") {
    const auto table = tls_table(1.0, 0.01);
    REQUIRE((table.T.front() - CMat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("trivial ancilla reduces to the Markovian propagator") {
    const double gamma = 1.0, omega = 2.0;
    const auto model = trivial_embedding(gamma, omega);
    const auto cert = validate_symmetry(model).require("trivial");
    const auto table = reduced_propagator(model, cert, 4.0, 0.01);

    JumpModel jm;
    jm.l0 = hamiltonian_superop(omega * pauli_x());
    jm.channels = {{"sigma", lowering_op(), gamma}};
    const auto s = split(jm);
    for (int k = 0; k <= table.steps(); k += 37) {
        const CMat direct = expm(s.drift, table.t_grid[std::size_t(k)]).mat;
        REQUIRE((table.T[std::size_t(k)] - direct).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("stepped table equals the direct exponential at random grid times") {
    const auto table = tls_table(5.0, 0.005);
    const auto& eng = *table.engine;
    for (int trial = 0; trial < 10; ++trial) {
        const int k = 1 + int(testutil::uniform() * (table.steps() - 1));
        const CMat direct = CMat(eng.reduce *
                                 CMat(table.t_grid[std::size_t(k)] * eng.split.drift.mat).exp() *
                                 eng.lift);
        REQUIRE((table.T[std::size_t(k)] - direct).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("survival against the closed form at the benchmark point") {
    const TLSParams p{1.0, 1.0, 4.0};
    const auto table = tls_table(2.0, 0.005);
    const int k = 200;  // t = 1
    REQUIRE(table.t_grid[k] == Catch::Approx(1.0));
    const double num = table.survival(k, ket_minus_state().mat);
    REQUIRE(num == Catch::Approx(0.566440181694936).margin(1e-9));
    REQUIRE(num == Catch::Approx(analytic_survival(p, ket_minus_state().mat, 1.0)).margin(1e-10));
}

TEST_CASE("non-Markovian interval statistics at the origin") {
    const auto table = tls_table(1.0, 0.005);
    for (int trial = 0; trial < 3; ++trial) {
        const auto st = nm_interval_statistics(table, random_density(2), {0.0, 0.5, 1.0});
        REQUIRE(st.p0.front() == Catch::Approx(1.0).margin(1e-12));
    }
    // antibunching: w(0 | reset state) = 0
    const auto st_reset = nm_interval_statistics(table, ket_minus_state().mat, {0.0});
    REQUIRE(std::abs(st_reset.w.front()) < 1e-12);
    // nonzero intercept for the y- superposition: w(0) = gamma/2
    const auto st_y = nm_interval_statistics(table, y_minus_state().mat, {0.0});
    REQUIRE(st_y.w.front() == Catch::Approx(0.5).margin(1e-12));
    REQUIRE_THROWS_AS(nm_interval_statistics(table, y_minus_state().mat, {0.0033}),
                      ValidationError);
}

TEST_CASE("waiting density equals the quadrature of the memory kernel") {
    const auto table = tls_table(4.0, 0.005);
    const auto kernel = extract_memory_kernel(table);
    // w(t|rho) = -Tr[(D0 T(t) + int Ds(t-s) T(s) ds) rho]
    const CVec tr = trace_vector(2);
    const CVec x = vectorize(y_minus_state().mat);
    for (int k : {40, 200, 520}) {
        CMat conv = kernel.local.mat * table.T[std::size_t(k)];
        CMat acc = CMat::Zero(4, 4);
        for (int j = 0; j <= k; ++j)
            acc += detail::gregory4_weight(k, j) *
                   (kernel.smooth[std::size_t(k - j)].mat * table.T[std::size_t(j)]);
        conv += table.h * acc;
        const double w_conv = -tr.dot(conv * x).real();
        REQUIRE(table.waiting(k, y_minus_state().mat) == Catch::Approx(w_conv).margin(1e-6));
    }
}

TEST_CASE("kernel extraction reproduces the closed forms") {
    const TLSParams p{1.0, 1.0, 4.0};
    const auto table = tls_table(10.0, 0.0025);
    const auto kernel = extract_memory_kernel(table);

    // local part: population row loses at rate gamma, coherences at gamma/2
    const CMat sdg = lowering_op().adjoint() * lowering_op();
    const CMat id = CMat::Identity(2, 2);
    const CMat d0_expect = -0.5 * p.gamma * (kron(id, sdg) + kron(sdg.transpose(), id));
    REQUIRE((kernel.local.mat - d0_expect).cwiseAbs().maxCoeff() < 1e-10);

    double sup = 0.0;
    for (std::size_t k = 0; k < kernel.smooth.size(); ++k) {
        const double t = double(k) * kernel.h;
        const CMat closed = (tls_kernel_x(p, t) * dissipator(pauli_x()) +
                             tls_kernel_y(p, t) * dissipator(pauli_y()) +
                             tls_kernel_z(p, t) * dissipator(pauli_z()))
                                .mat;
        sup = std::max(sup, (kernel.smooth[k].mat - closed).cwiseAbs().maxCoeff());
    }
    REQUIRE(sup < 1e-5);

    // scalar readouts: population block and coherence block
    // vec indices: 0 = p+, 3 = p-, 2 = c+, 1 = c-
    for (int k : {0, 400, 1600}) {
        const double t = double(k) * kernel.h;
        const CMat& ds = kernel.smooth[std::size_t(k)].mat;
        REQUIRE(-ds(0, 0).real() == Catch::Approx(tls_kernel_population(p, t)).margin(1e-5));
        REQUIRE(ds(0, 3).real() == Catch::Approx(tls_kernel_population(p, t)).margin(1e-5));
        REQUIRE(-ds(2, 2).real() == Catch::Approx(tls_kernel_coherence(p, t)).margin(1e-5));
        REQUIRE(ds(2, 1).real() == Catch::Approx(tls_kernel_coherence(p, t)).margin(1e-5));
    }
}

TEST_CASE("Markovian-limit extraction leaves no smooth kernel") {
    const auto model = trivial_embedding(1.0, 2.0);
    const auto cert = validate_symmetry(model).require("trivial");
    const auto table = reduced_propagator(model, cert, 4.0, 0.005);
    const auto kernel = extract_memory_kernel(table);
    double sup = 0.0;
    for (const auto& s : kernel.smooth) sup = std::max(sup, s.mat.cwiseAbs().maxCoeff());
    REQUIRE(sup < 1e-6);  // < 1e-6 * (max rate)^2 with rates of order one
    // and the local part is the full Markovian drift generator
    JumpModel jm;
    jm.l0 = hamiltonian_superop(2.0 * pauli_x());
    jm.channels = {{"sigma", lowering_op(), 1.0}};
    REQUIRE((kernel.local.mat - split(jm).drift.mat).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("reconvolution self-consistency of the extracted kernel") {
    const auto table = tls_table(6.0, 0.0025);
    const auto kernel = extract_memory_kernel(table);
    double sup = 0.0;
    for (int k : {8, 80, 800, 2000}) {
        CMat rhs = kernel.local.mat * table.T[std::size_t(k)];
        CMat acc = CMat::Zero(4, 4);
        for (int j = 0; j <= k; ++j)
            acc += detail::gregory4_weight(k, j) *
                   (kernel.smooth[std::size_t(k - j)].mat * table.T[std::size_t(j)]);
        rhs += table.h * acc;
        sup = std::max(sup, (table.Tdot[std::size_t(k)] - rhs).cwiseAbs().maxCoeff());
    }
    REQUIRE(sup < 1e-6);  // tolerance 1e-6 (max rate)^2 at unit rates
}

TEST_CASE("finite-difference fallback matches exact derivative samples") {
    const auto exact = tls_table(2.0, 0.002);
    PropagatorTable fd = exact;
    fd.Tdot.clear();
    fd.Tddot.clear();
    fd.derive_missing_derivatives();
    double sup1 = 0.0;
    for (int k = 0; k <= exact.steps(); ++k)
        sup1 = std::max(sup1,
                        (fd.Tdot[std::size_t(k)] - exact.Tdot[std::size_t(k)]).cwiseAbs().maxCoeff());
    REQUIRE(sup1 < 1e-6);
}

TEST_CASE("decaying-survival check passes for the physical models") {
    REQUIRE(check_decaying_survival(tls_table(6.0, 0.01)).ok());
    const auto model = trivial_embedding(1.0, 2.0);
    const auto cert = validate_symmetry(model).require("trivial");
    REQUIRE(check_decaying_survival(reduced_propagator(model, cert, 4.0, 0.01)).ok());
}

TEST_CASE("decaying-survival check flags an injected increase") {
    auto table = tls_table(2.0, 0.01);
    // corrupt one sample so a population survival grows
    table.T[100] *= 1.05;
    const auto report = check_decaying_survival(table);
    REQUIRE_FALSE(report.ok());
}

TEST_CASE("memory destroys the pure-state unravelling") {
    const auto table = tls_table(1.5, 0.005);
    const CVec x = vectorize(y_minus_state().mat);
    const int k = 200;  // t = 1
    CMat rho = devectorize(CVec(table.T[std::size_t(k)] * x));
    rho /= rho.trace();
    const double purity = (rho * rho).trace().real();
    REQUIRE(purity == Catch::Approx(0.738988861357).margin(1e-6));
    REQUIRE(purity < 1.0 - 1e-3);
}

TEST_CASE("table export rows carry the interleaved entries") {
    const auto table = tls_table(0.1, 0.01);
    const auto rows = propagator_table_rows(table);
    REQUIRE(rows.size() == std::size_t(table.steps()) + 1);
    REQUIRE(rows.front().size() == 1 + 2 * 16);
    REQUIRE(rows.front()[0] == 0.0);
    REQUIRE(rows.front()[1] == 1.0);  // T(0) = identity, first entry re = 1
}
