#pragma once

// Deterministic integration of the two closed non-local master equations:
//   local+nonlocal form: d rho/dt = D0 rho + sum_a g_a V_a rho V_a^dag
//                                   + int_0^t D_s(t-s) rho(s) ds
//   renewal form:        d rho/dt = [D rho](t) - rho_bar Tr[D rho](t),
//                        [D rho](t) = D0 rho(t) + int_0^t D_s(t-s) rho(s) ds
// plus the relative-entropy series and backflow-interval detector.
//
// Two direct-quadrature schemes: order-2 product trapezoid with one
// predictor-corrector pass, and order-4 progressive Gregory weights with an
// exact per-step linear solve (the default; the trapezoid variant exists for
// order-of-accuracy checks and cheap previews).

#include "nmqj/propagator.hpp"

#include <optional>

namespace nmqj {

class IntegrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NonPositiveStateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnsupportedRegimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Kernel data for the integrators. `local` multiplies rho(t) as a delta
// contribution of the memory kernel; `jump_local` is the instantaneous
// sandwich part sum_a g_a V_a . V_a^dag; `smooth` holds D_s on a uniform grid
// of step h. `reset` is the resetting state required by the renewal form.
struct KernelSpec {
    Superoperator local{0, {}};
    std::vector<Superoperator> smooth;
    double h = 0.0;
    Superoperator jump_local{0, {}};
    std::optional<DensityMatrix> reset;

    int dim() const { return local.hdim; }
};

enum class VolterraScheme { TrapezoidPece, Gregory4 };

struct StateSeries {
    std::vector<double> t;
    std::vector<CMat> states;
};

namespace detail {

struct VolterraProblem {
    CMat local;                      // applied to rho(t) instantaneously
    const std::vector<CMat>* smooth; // kernel samples (superoperator matrices)
    double h = 0.0;
    // renewal compensation: F -> F - rbar * (tr . F)
    bool compensate = false;
    CVec rbar;
    CVec trv;

    CVec project(const CVec& f) const {
        if (!compensate) return f;
        return f - rbar * trv.dot(f);
    }
};

inline std::vector<CVec> integrate_gregory4(const VolterraProblem& p, const CVec& x0, int n_steps) {
    const Eigen::Index dim = x0.size();
    const double h = p.h;
    const auto& ks = *p.smooth;
    if (static_cast<int>(ks.size()) < n_steps + 1)
        throw IntegrationError("kernel table shorter than the integration horizon");

    std::vector<CVec> xs, fs;
    xs.reserve(std::size_t(n_steps) + 1);
    fs.reserve(std::size_t(n_steps) + 1);
    xs.push_back(x0);
    fs.push_back(p.project(p.local * x0));

    // running plain sum of F history plus per-step end corrections
    CVec f_plain = CVec::Zero(dim);

    // cached factorization for the steady regime (w_n = 3/8 for n >= 6)
    std::optional<Eigen::PartialPivLU<CMat>> lu_steady;
    CMat id = CMat::Identity(dim, dim);

    for (int n = 1; n <= n_steps; ++n) {
        CVec conv_known = CVec::Zero(dim);
        for (int j = 0; j < n; ++j)
            conv_known.noalias() += gregory4_weight(n, j) * (ks[std::size_t(n - j)] * xs[std::size_t(j)]);

        CVec outer = CVec::Zero(dim);
        if (n <= 7) {
            for (int j = 0; j < n; ++j) outer += gregory4_weight(n, j) * fs[std::size_t(j)];
        } else {
            f_plain += fs[std::size_t(n - 1)];  // history through n-1 with unit weights
            outer = f_plain;
            outer += (3.0 / 8.0 - 1.0) * fs[0] + (7.0 / 6.0 - 1.0) * fs[1] +
                     (23.0 / 24.0 - 1.0) * fs[2];
            outer += (7.0 / 6.0 - 1.0) * fs[std::size_t(n - 1)] +
                     (23.0 / 24.0 - 1.0) * fs[std::size_t(n - 2)];
        }
        if (n == 7) {
            // seed the running sum for the steady regime
            f_plain = CVec::Zero(dim);
            for (int j = 0; j <= 6; ++j) f_plain += fs[std::size_t(j)];
        }

        const double wn = gregory4_weight(n, n);
        // x_n = x0 + h*outer + h*wn*F_n with F_n = Pi[(local + h*wn*K0) x_n + h*conv_known]
        CMat a_lin = p.local + h * wn * ks[0];
        CVec b = xs[0] + h * outer;
        if (p.compensate) {
            // Pi is a rank-1 projector; fold it into the linear operator
            CMat pim = id - p.rbar * p.trv.adjoint();
            a_lin = pim * a_lin;
            b += h * wn * (pim * CVec(h * conv_known));
        } else {
            b += h * wn * h * conv_known;
        }
        CMat a = id - h * wn * a_lin;
        CVec xn;
        if (n >= 6) {
            if (!lu_steady) lu_steady.emplace(a);
            xn = lu_steady->solve(b);
        } else {
            xn = Eigen::PartialPivLU<CMat>(a).solve(b);
        }
        CVec conv_full = h * conv_known + h * wn * (ks[0] * xn);
        xs.push_back(xn);
        fs.push_back(p.project(p.local * xn + conv_full));
    }
    return xs;
}

inline std::vector<CVec> integrate_trapezoid_pece(const VolterraProblem& p, const CVec& x0,
                                                  int n_steps) {
    const Eigen::Index dim = x0.size();
    const double h = p.h;
    const auto& ks = *p.smooth;
    if (static_cast<int>(ks.size()) < n_steps + 1)
        throw IntegrationError("kernel table shorter than the integration horizon");

    std::vector<CVec> xs, fs;
    xs.push_back(x0);
    fs.push_back(p.project(p.local * x0));
    for (int n = 1; n <= n_steps; ++n) {
        CVec conv_known = CVec::Zero(dim);
        for (int j = 0; j < n; ++j) {
            const double w = (j == 0) ? 0.5 : 1.0;
            conv_known.noalias() += w * (ks[std::size_t(n - j)] * xs[std::size_t(j)]);
        }
        conv_known *= h;
        auto f_at = [&](const CVec& x) {
            return p.project(p.local * x + conv_known + 0.5 * h * (ks[0] * x));
        };
        // predict (Euler), then correct with the trapezoid rule until the
        // fixed-point residual is below 1e-6; reject the step otherwise
        CVec xc = xs[std::size_t(n - 1)] + h * fs[std::size_t(n - 1)];
        double resid = std::numeric_limits<double>::infinity();
        for (int pass = 0; pass < 12 && !(resid <= 1e-6); ++pass) {
            CVec xn = xs[std::size_t(n - 1)] + 0.5 * h * (fs[std::size_t(n - 1)] + f_at(xc));
            resid = (xn - xc).cwiseAbs().maxCoeff();
            xc = std::move(xn);
        }
        if (!(resid <= 1e-6))
            throw IntegrationError("corrector residual " + std::to_string(resid) +
                                   " exceeds 1e-6 at step " + std::to_string(n) +
                                   "; reduce the step");
        xs.push_back(xc);
        fs.push_back(f_at(xc));
    }
    return xs;
}

inline StateSeries run_volterra(const VolterraProblem& p, const CMat& rho0, double t_max,
                                VolterraScheme scheme) {
    const int n_steps = static_cast<int>(std::llround(t_max / p.h));
    const CVec x0 = vectorize(rho0);
    std::vector<CVec> xs = scheme == VolterraScheme::Gregory4
                               ? integrate_gregory4(p, x0, n_steps)
                               : integrate_trapezoid_pece(p, x0, n_steps);
    StateSeries out;
    out.t.reserve(xs.size());
    out.states.reserve(xs.size());
    for (int k = 0; k <= n_steps; ++k) {
        out.t.push_back(k * p.h);
        out.states.push_back(devectorize(xs[std::size_t(k)]));
    }
    return out;
}

inline std::vector<CMat> superop_mats(const std::vector<Superoperator>& v) {
    std::vector<CMat> out;
    out.reserve(v.size());
    for (const auto& s : v) out.push_back(s.mat);
    return out;
}

}  // namespace detail

// d rho/dt = (local + jump_local) rho + int_0^t smooth(t-s) rho(s) ds.
inline StateSeries integrate_local_nonlocal(const KernelSpec& spec, const DensityMatrix& rho0,
                                            double t_max,
                                            VolterraScheme scheme = VolterraScheme::Gregory4) {
    if (spec.jump_local.hdim != spec.dim())
        throw DimensionError("jump_local dimension mismatch");
    auto mats = detail::superop_mats(spec.smooth);
    detail::VolterraProblem p;
    p.local = spec.local.mat + spec.jump_local.mat;
    p.smooth = &mats;
    p.h = spec.h;
    return detail::run_volterra(p, rho0.mat, t_max, scheme);
}

// d rho/dt = [D rho](t) - rho_bar Tr[D rho](t); trace conserved by
// construction of the compensation term.
inline StateSeries integrate_renewal_master(const KernelSpec& spec, const DensityMatrix& rho0,
                                            double t_max,
                                            VolterraScheme scheme = VolterraScheme::Gregory4) {
    if (!spec.reset) throw ValidationError("renewal master equation requires a resetting state");
    auto mats = detail::superop_mats(spec.smooth);
    detail::VolterraProblem p;
    p.local = spec.local.mat;
    p.smooth = &mats;
    p.h = spec.h;
    p.compensate = true;
    p.rbar = vectorize(spec.reset->mat);
    p.trv = trace_vector(spec.dim());
    return detail::run_volterra(p, rho0.mat, t_max, scheme);
}

// E(rho || sigma) = Tr[rho (log2 rho - log2 sigma)] >= 0, with a small
// eigenvalue clamp inside the logarithms.
inline double relative_entropy(const CMat& rho, const CMat& sigma,
                               const Tolerances& tol = Tolerances::defaults()) {
    Eigen::SelfAdjointEigenSolver<CMat> er(0.5 * (rho + rho.adjoint()));
    Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (sigma + sigma.adjoint()));
    if (er.eigenvalues().minCoeff() < tol.eigenvalue_floor)
        throw NonPositiveStateError("state eigenvalue " +
                                    std::to_string(er.eigenvalues().minCoeff()) +
                                    " below the admissible floor");
    double e = 0.0;
    const auto& lam = er.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        const double l = std::max(lam(i), tol.log_floor);
        e += l * std::log2(l);
    }
    CMat log_sigma = CMat::Zero(sigma.rows(), sigma.cols());
    const auto& mu = es.eigenvalues();
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        const double m = std::max(mu(i), tol.log_floor);
        log_sigma += std::log2(m) * (es.eigenvectors().col(i) * es.eigenvectors().col(i).adjoint());
    }
    e -= (rho * log_sigma).trace().real();
    return e;
}

inline std::vector<double> relative_entropy_series(const std::vector<CMat>& states,
                                                   const CMat& stationary,
                                                   const Tolerances& tol = Tolerances::defaults()) {
    std::vector<double> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(relative_entropy(s, stationary, tol));
    return out;
}

struct BackflowInterval {
    double t_begin = 0.0, t_end = 0.0;
    double gain = 0.0;  // total entropy increase over the interval
};

// Maximal grid intervals on which E strictly increases beyond the noise floor.
inline std::vector<BackflowInterval> detect_backflow(const std::vector<double>& t,
                                                     const std::vector<double>& e,
                                                     double noise_floor = 1e-9) {
    std::vector<BackflowInterval> out;
    std::size_t i = 0;
    while (i + 1 < e.size()) {
        if (e[i + 1] - e[i] > noise_floor) {
            std::size_t j = i;
            double gain = 0.0;
            while (j + 1 < e.size() && e[j + 1] - e[j] > noise_floor) {
                gain += e[j + 1] - e[j];
                ++j;
            }
            out.push_back({t[i], t[j], gain});
            i = j;
        } else {
            ++i;
        }
    }
    return out;
}

}  // namespace nmqj
