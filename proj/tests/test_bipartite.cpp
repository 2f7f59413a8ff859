#include "support/test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace nmqj;
using testutil::random_density;

TEST_CASE("two-entry rate tensor with one physical transition certifies as renewal") {
    // channels sigma (x) |1><1| and sigma (x) |1><2| share the system operator
    const auto model = build_tls_model({1.0, 1.0, 4.0});
    const auto validation = validate_symmetry(model);
    REQUIRE(validation.status == SymmetryValidation::Status::Ok);
    const auto& cert = *validation.certificate;
    REQUIRE(cert.residual < 1e-12);
    REQUIRE(cert.c.size() == 2);
    REQUIRE(cert.c[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(cert.c[1] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(cert.d_constant);
    REQUIRE(cert.d[0] == Catch::Approx(1.0));
    REQUIRE(cert.d[1] == Catch::Approx(1.0));
    // reset ancilla state |1><1|
    REQUIRE((cert.rho_bar_a() - basis_matrix(2, 0, 0)).cwiseAbs().maxCoeff() < 1e-12);
    // effective measured rates: gamma * c weights
    REQUIRE(cert.gamma_alpha[0] == Catch::Approx(1.0));
    REQUIRE(cert.gamma_alpha[1] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("constructed gamma_a c_l tensors certify with constant d") {
    for (int trial = 0; trial < 5; ++trial) {
        const auto model = testutil::random_symmetric_model(2, 3, 2, true);
        const auto validation = validate_symmetry(model);
        REQUIRE(validation.status == SymmetryValidation::Status::Ok);
        const auto& cert = *validation.certificate;
        REQUIRE(cert.residual < 1e-12);
        REQUIRE(cert.d_constant);
        REQUIRE(cert.kind == SymmetryCertificate::Kind::NonRenewal);
        // with d == 1 the effective rates reconstruct the tensor entrywise
        double scale = 0.0, maxerr = 0.0;
        for (int a = 0; a < 2; ++a)
            for (int l = 0; l < 3; ++l)
                for (int m = 0; m < 3; ++m) {
                    const double recon = cert.gamma_alpha[std::size_t(a)] *
                                         cert.c[std::size_t(l)] * cert.d[std::size_t(m)];
                    maxerr = std::max(maxerr, std::abs(recon - model.rates.at(a, l, m)));
                    scale = std::max(scale, model.rates.at(a, l, m));
                }
        REQUIRE(maxerr < 1e-9 * scale);
    }
}

TEST_CASE("varying d with non-renewal hint is rejected") {
    const auto model = testutil::random_symmetric_model(2, 3, 2, false);
    const auto auto_mode = validate_symmetry(model);
    REQUIRE(auto_mode.status == SymmetryValidation::Status::Ok);
    REQUIRE_FALSE(auto_mode.certificate->d_constant);
    REQUIRE(auto_mode.certificate->kind == SymmetryCertificate::Kind::Renewal);

    const auto strict = validate_symmetry(model.rates, SymmetryMode::NonRenewal,
                                          &model.system_ops);
    REQUIRE(strict.status == SymmetryValidation::Status::NotFactorizable);
    REQUIRE_THROWS_AS(strict.require("strict"), NotFactorizableError);
}

TEST_CASE("generic tensors are not factorizable") {
    RateTensor t = RateTensor::zeros(2, 2);
    for (int a = 0; a < 2; ++a)
        for (int l = 0; l < 2; ++l)
            for (int m = 0; m < 2; ++m) t.at(a, l, m) = double(l + m + a + 1);
    // exhaustive least-squares confirms there is no rank-1 fit
    REQUIRE(testutil::als_rank1_residual(t) > 1e-3);
    const auto validation = validate_symmetry(t);
    REQUIRE(validation.status != SymmetryValidation::Status::Ok);
    REQUIRE(validation.residual > Tolerances::defaults().factor_residual);
}

TEST_CASE("channel-dependent ancilla profiles are flagged as classical resets") {
    // per-channel rank-1 slices sharing d but with different c profiles
    RateTensor t = RateTensor::zeros(2, 2);
    const double d[2] = {1.0, 0.5};
    const double c1[2] = {1.0, 0.0};
    const double c2[2] = {0.2, 0.8};
    for (int l = 0; l < 2; ++l)
        for (int m = 0; m < 2; ++m) {
            t.at(0, l, m) = 0.9 * c1[l] * d[m];
            t.at(1, l, m) = 1.4 * c2[l] * d[m];
        }
    const auto validation = validate_symmetry(t);
    REQUIRE(validation.status == SymmetryValidation::Status::ClassicalCorrelatedReset);
    REQUIRE_THROWS_AS(validation.require("weak"), NotFactorizableError);
}

TEST_CASE("bipartite split matches the hand-assembled jump structure") {
    const auto model = build_tls_model({1.0, 0.7, 4.0});
    const auto s = bipartite_split(model);

    // J rho = (g <+1|rho|+1> + g' <+2|rho|+2>) |-1><-1|
    for (int trial = 0; trial < 5; ++trial) {
        const CMat rho = random_density(4);
        const CMat out = s.jump.apply(rho);
        CMat expect = CMat::Zero(4, 4);
        expect(2, 2) = 1.0 * rho(0, 0) + 0.7 * rho(1, 1);
        REQUIRE((out - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
    // trace identity
    for (int trial = 0; trial < 10; ++trial) {
        const CMat rho = random_density(4);
        REQUIRE(std::abs(s.drift.apply(rho).trace() + s.jump.apply(rho).trace()) < 1e-12);
    }
}

TEST_CASE("zero rates produce a vanishing bipartite jump part") {
    auto model = build_tls_model({0.0, 0.0, 4.0});
    const auto s = bipartite_split(model);
    REQUIRE(s.jump.mat.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bipartite jump map produces the separable reset") {
    const auto model = build_tls_model({1.0, 1.0, 4.0});
    const auto cert = validate_symmetry(model).require("tls");
    for (int trial = 0; trial < 5; ++trial) {
        const CMat rho = random_density(4);
        if (std::abs(rho(0, 0)) + std::abs(rho(1, 1)) < 1e-6) continue;
        const auto [sys, separable] = bipartite_jump_map(model, cert, rho);
        REQUIRE(separable);
        REQUIRE((sys.mat - basis_matrix(2, 1, 1)).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("renewal models reset to the same system factor from any state") {
    // two renewal system channels |r_a><u| with a shared ancilla profile
    BipartiteModel model;
    model.d_s = 3;
    model.d_a = 2;
    model.l0 = hamiltonian_superop(testutil::random_hermitian(6));
    model.system_ops = {{"r1", basis_matrix(3, 1, 0)}, {"r2", basis_matrix(3, 2, 0)}};
    model.ancilla_labels = {"1", "2"};
    model.rates = RateTensor::zeros(2, 2);
    const double c[2] = {0.6, 0.4};
    const double d[2] = {1.0, 0.3};
    const double g[2] = {0.8, 0.5};
    for (int a = 0; a < 2; ++a)
        for (int l = 0; l < 2; ++l)
            for (int m = 0; m < 2; ++m) model.rates.at(a, l, m) = g[a] * c[l] * d[m];
    const auto cert = validate_symmetry(model).require("renewal model");
    REQUIRE(cert.kind == SymmetryCertificate::Kind::Renewal);
    REQUIRE_FALSE(cert.d_constant);

    CMat first;
    for (int trial = 0; trial < 4; ++trial) {
        const auto [sys, separable] = bipartite_jump_map(model, cert, random_density(6));
        REQUIRE(separable);
        if (trial == 0)
            first = sys.mat;
        else
            REQUIRE((sys.mat - first).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("constant-d models reset through the reduced jump map") {
    const auto model = testutil::random_symmetric_model(2, 2, 2, true);
    const auto cert = validate_symmetry(model).require("d=1 model");
    const Superoperator jsys = reduced_jump_superop(model, cert);
    for (int trial = 0; trial < 4; ++trial) {
        const CMat rho_s = random_density(2);
        const CMat rho_sa = kron(rho_s, cert.rho_bar_a());
        const auto [sys, separable] = bipartite_jump_map(model, cert, rho_sa);
        REQUIRE(separable);
        CMat expect = jsys.apply(rho_s);
        expect /= expect.trace();
        REQUIRE((sys.mat - expect).cwiseAbs().maxCoeff() < 1e-9);
    }
}
