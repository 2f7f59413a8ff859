#pragma once

// Two-level system coupled to a two-level ancilla: the worked example with
// closed-form survival probability, density-matrix solution, stationary
// state, and memory kernels. Serves as the analytic oracle for the numeric
// pipeline.
//
// Conventions: |+> = e0 (upper), |-> = e1 (lower); ancilla |1> = e0, |2> = e1.
// The exchange coupling is (omega/2) sx (x) sx, which is the normalization
// under which the closed forms below hold exactly.

#include "nmqj/bipartite.hpp"
#include "nmqj/volterra.hpp"

#include <complex>

namespace nmqj {

inline CMat pauli_x() { return (CMat(2, 2) << 0, 1, 1, 0).finished(); }
inline CMat pauli_y() {
    return (CMat(2, 2) << 0, Complex(0, -1), Complex(0, 1), 0).finished();
}
inline CMat pauli_z() { return (CMat(2, 2) << 1, 0, 0, -1).finished(); }
inline CMat lowering_op() { return (CMat(2, 2) << 0, 0, 1, 0).finished(); }  // |-><+|

inline DensityMatrix ket_plus_state() { return DensityMatrix::pure((CVec(2) << 1, 0).finished()); }
inline DensityMatrix ket_minus_state() { return DensityMatrix::pure((CVec(2) << 0, 1).finished()); }
inline DensityMatrix y_minus_state() {
    return DensityMatrix::pure((CVec(2) << 1, Complex(0, -1)).finished());
}
inline DensityMatrix x_minus_state() {
    return DensityMatrix::pure((CVec(2) << 1, -1).finished());
}

struct TLSParams {
    double gamma = 1.0;        // rate of the ancilla-diagonal decay channel
    double gamma_prime = 1.0;  // rate of the ancilla-flipping decay channel
    double omega = 4.0;        // exchange coupling strength

    // complex "frequencies"; hyperbolic and trigonometric regimes unify
    Complex nu() const {
        return std::sqrt(Complex(gamma * gamma / 4.0 - omega * omega, 0.0));
    }
    Complex mu() const {
        return std::sqrt(Complex(gamma * gamma / 16.0 - omega * omega, 0.0));
    }

    void validate() const {
        if (gamma < 0 || gamma_prime < 0 || omega < 0)
            throw ValidationError("TLS parameters must be non-negative");
    }
    bool symmetric_rates() const { return std::abs(gamma - gamma_prime) <= 1e-14; }
};

// Bipartite model: H = (omega/2) sx (x) sx; decay sigma (x) |1><1| at rate
// gamma and sigma (x) |1><2| at rate gamma_prime (the system transition
// accompanied by the ancilla transition |2> -> |1>).
inline BipartiteModel build_tls_model(const TLSParams& p) {
    p.validate();
    BipartiteModel model;
    model.d_s = 2;
    model.d_a = 2;
    const CMat h0 = 0.5 * p.omega * kron(pauli_x(), pauli_x());
    model.l0 = hamiltonian_superop(h0);
    model.system_ops = {{"sigma", lowering_op()}, {"sigma", lowering_op()}};
    model.ancilla_labels = {"1", "2"};
    model.rates = RateTensor::zeros(2, 2);
    model.rates.at(0, 0, 0) = p.gamma;        // ancilla stays in |1>
    model.rates.at(1, 0, 1) = p.gamma_prime;  // ancilla |2> -> |1>
    return model;
}

inline void require_symmetric_rates(const TLSParams& p, const char* what) {
    if (!p.symmetric_rates())
        throw UnsupportedRegimeError(std::string(what) +
                                     " requires gamma_prime == gamma; the numeric pipeline "
                                     "covers the general case");
}

// P0(t|rho) = e^{-gt/2} { Tr[rho] [ (g/2nu)^2 cosh(nu t) - (w/nu)^2 ]
//                         - Tr[sz rho] (g/2nu) sinh(nu t) }.
inline double analytic_survival(const TLSParams& p, const CMat& rho, double t) {
    require_symmetric_rates(p, "analytic survival");
    const Complex nu = p.nu();
    const Complex trr = rho.trace();
    const Complex trz = (pauli_z() * rho).trace();
    const Complex g2nu = p.gamma / (2.0 * nu);
    const Complex val =
        std::exp(-p.gamma * t / 2.0) *
        (trr * (g2nu * g2nu * std::cosh(nu * t) - (p.omega / nu) * (p.omega / nu)) -
         trz * g2nu * std::sinh(nu * t));
    return val.real();
}

// w(t|rho) = -dP0/dt, differentiated in closed form.
inline double analytic_waiting(const TLSParams& p, const CMat& rho, double t) {
    require_symmetric_rates(p, "analytic waiting density");
    const Complex nu = p.nu();
    const Complex trr = rho.trace();
    const Complex trz = (pauli_z() * rho).trace();
    const Complex g2nu = p.gamma / (2.0 * nu);
    const Complex a = trr * g2nu * g2nu;  // cosh coefficient
    const Complex c = -trr * (p.omega / nu) * (p.omega / nu);
    const Complex b = -trz * g2nu;  // sinh coefficient
    const double g = p.gamma;
    const Complex e = std::exp(Complex(-g * t / 2.0, 0.0));
    const Complex dp = e * (-(g / 2.0) * (a * std::cosh(nu * t) + b * std::sinh(nu * t) + c) +
                            nu * (a * std::sinh(nu * t) + b * std::cosh(nu * t)));
    return -dp.real();
}

// Initial-condition coefficients of the closed-form solution.
struct TLSInitialCoeffs {
    double p0_plus = 0.0, p0_minus = 0.0;
    Complex c0_plus, c0_minus;
    double q_c = 0.0, q_s = 0.0;
    Complex a, b;
};

inline TLSInitialCoeffs tls_initial_coeffs(const TLSParams& p, const CMat& rho0) {
    TLSInitialCoeffs k;
    k.p0_plus = rho0(0, 0).real();
    k.p0_minus = rho0(1, 1).real();
    k.c0_plus = rho0(0, 1);
    k.c0_minus = rho0(1, 0);
    const double g2w2 = p.gamma * p.gamma / (p.omega * p.omega);
    k.q_c = k.p0_plus * g2w2 + (k.p0_plus - k.p0_minus);
    k.q_s = (k.p0_plus * g2w2 + (5.0 * k.p0_plus + 3.0 * k.p0_minus)) / 4.0;
    const Complex nu2 = Complex(p.gamma * p.gamma / 4.0 - p.omega * p.omega, 0.0);
    k.a = (k.c0_plus * p.gamma * p.gamma / 2.0 - (k.c0_plus + k.c0_minus) * p.omega * p.omega) /
          nu2;
    k.b = (k.c0_plus - k.c0_minus) * p.omega * p.omega / nu2;
    return k;
}

// Closed-form density matrix at time t: populations relax at 3g/4 with
// frequency mu, coherences at g/2 with frequency nu.
inline DensityMatrix analytic_solution(const TLSParams& p, const CMat& rho0, double t) {
    require_symmetric_rates(p, "analytic solution");
    const auto k = tls_initial_coeffs(p, rho0);
    const Complex mu = p.mu();
    const Complex nu = p.nu();
    const double g = p.gamma;
    const double w2 = p.omega * p.omega;
    const Complex pp =
        w2 / (g * g + 2.0 * w2) *
        (1.0 + std::exp(Complex(-3.0 * g * t / 4.0, 0.0)) *
                   (k.q_c * std::cosh(mu * t) - k.q_s * (g / mu) * std::sinh(mu * t)));
    const Complex cp = std::exp(Complex(-g * t / 2.0, 0.0)) * 0.5 *
                       (k.a - k.b * std::cosh(nu * t));
    CMat rho(2, 2);
    rho(0, 0) = pp.real();
    rho(1, 1) = 1.0 - pp.real();
    rho(0, 1) = cp;
    rho(1, 0) = std::conj(cp);
    return DensityMatrix{std::move(rho), true};
}

inline DensityMatrix tls_stationary_state(const TLSParams& p) {
    const double g2 = p.gamma * p.gamma, w2 = p.omega * p.omega;
    CMat rho = CMat::Zero(2, 2);
    rho(0, 0) = w2 / (g2 + 2.0 * w2);
    rho(1, 1) = (g2 + w2) / (g2 + 2.0 * w2);
    return DensityMatrix{std::move(rho), true};
}

// Scalar memory kernels (smooth parts).
inline double tls_kernel_population(const TLSParams& p, double t) {  // k+-, minus delta
    return 0.5 * p.omega * p.omega * std::exp(-p.gamma * t / 2.0);
}
inline double tls_kernel_coherence(const TLSParams& p, double t) {  // k-tilde/k-breve smooth
    return 0.25 * p.omega * p.omega * (1.0 + std::exp(-p.gamma * t));
}
inline double tls_kernel_x(const TLSParams& p, double t) {
    const double e = std::exp(-p.gamma * t / 2.0);
    return p.omega * p.omega / 8.0 * (e + 1.0) * (e + 1.0);
}
inline double tls_kernel_y(const TLSParams& p, double t) {
    const double e = std::exp(-p.gamma * t / 2.0);
    return -p.omega * p.omega / 8.0 * (e - 1.0) * (e - 1.0);
}
inline double tls_kernel_z(const TLSParams& p, double t) { return -tls_kernel_y(p, t); }

// Closed-form kernel superoperators. The smooth part is the Pauli-channel
// combination sum_i k^i(t) C[sigma_i]; the delta parts split into the
// anticommutator piece (conditional evolution) and the sandwich piece that
// only the unconditional master equation keeps. `conditional` selects which
// local part is bundled:
//   conditional=true  -> local = -g/2 {sigma^dag sigma, .}        (no refeed)
//   conditional=false -> local additionally ships jump_local = g sigma . sigma^dag
inline KernelSpec closed_form_kernels(const TLSParams& p, double h, int n_steps,
                                      bool conditional = false) {
    require_symmetric_rates(p, "closed-form kernels");
    KernelSpec spec;
    spec.h = h;
    const CMat sm = lowering_op();
    const CMat sdag_s = sm.adjoint() * sm;
    const CMat id = CMat::Identity(2, 2);
    spec.local = Superoperator{
        2, -0.5 * p.gamma * (kron(id, sdag_s) + kron(sdag_s.transpose(), id))};
    spec.jump_local = conditional ? Superoperator::zero(2)
                                  : p.gamma * sandwich(sm, sm);
    const Superoperator cx = dissipator(pauli_x());
    const Superoperator cy = dissipator(pauli_y());
    const Superoperator cz = dissipator(pauli_z());
    spec.smooth.reserve(std::size_t(n_steps) + 1);
    for (int k = 0; k <= n_steps; ++k) {
        const double t = k * h;
        spec.smooth.push_back(tls_kernel_x(p, t) * cx + tls_kernel_y(p, t) * cy +
                              tls_kernel_z(p, t) * cz);
    }
    if (p.symmetric_rates()) spec.reset = ket_minus_state();
    return spec;
}

}  // namespace nmqj
