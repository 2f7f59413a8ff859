#pragma once

// Jump-number decomposition of the unconditional state and joint click-time
// densities. Works with either a Markovian exponential propagator or a
// non-Markovian propagator table; used as an independent oracle on short
// horizons.

#include "nmqj/propagator.hpp"

namespace nmqj {

// Propagator samples on a uniform grid, the shared currency of this module.
struct PropagatorSamples {
    double h = 0.0;
    int d = 0;
    std::vector<CMat> T;  // d^2 x d^2 samples at k*h
    std::vector<CMat> Tdot;

    static PropagatorSamples from_table(const PropagatorTable& table) {
        return {table.h, table.d_s, table.T, table.Tdot};
    }
    static PropagatorSamples from_split(const SplitGenerator& s, double h, int steps) {
        PropagatorSamples out;
        out.h = h;
        out.d = s.dim();
        const CMat e_h = CMat(h * s.drift.mat).exp();
        CMat t = CMat::Identity(s.drift.mat.rows(), s.drift.mat.cols());
        for (int k = 0; k <= steps; ++k) {
            out.T.push_back(t);
            out.Tdot.push_back(s.drift.mat * t);
            if (k < steps) t = e_h * t;
        }
        return out;
    }
    int steps() const { return static_cast<int>(T.size()) - 1; }
};

struct JumpExpansion {
    int n_max = 0;
    double h = 0.0;
    std::vector<double> t;
    std::vector<std::vector<CVec>> contributions;  // [n][k] unnormalized vec states
    std::vector<std::vector<double>> p_n;          // exclusive probabilities

    double sum_p(int k) const {
        double s = 0.0;
        for (const auto& pn : p_n) s += pn[std::size_t(k)];
        return s;
    }
};

// rho^(0)(t) = T(t) rho0; rho^(n)(t) = int_0^t T(t-s) J rho^(n-1)(s) ds by
// trapezoid on the shared grid.
inline JumpExpansion n_jump_contribution(const PropagatorSamples& prop, const Superoperator& jump,
                                         const CMat& rho0, int n_max, int k_end = -1) {
    if (n_max < 0 || n_max > 3)
        throw ValidationError("jump expansion supports n_max in [0,3] (nested quadrature cost)");
    if (k_end < 0) k_end = prop.steps();
    if (k_end > prop.steps()) throw ValidationError("horizon exceeds propagator samples");

    JumpExpansion out;
    out.n_max = n_max;
    out.h = prop.h;
    const CVec tr = trace_vector(prop.d);
    for (int k = 0; k <= k_end; ++k) out.t.push_back(k * prop.h);

    std::vector<CVec> level;
    level.reserve(std::size_t(k_end) + 1);
    const CVec x0 = vectorize(rho0);
    for (int k = 0; k <= k_end; ++k) level.push_back(prop.T[std::size_t(k)] * x0);
    out.contributions.push_back(level);

    for (int n = 1; n <= n_max; ++n) {
        const auto& prev = out.contributions.back();
        std::vector<CVec> jprev;
        jprev.reserve(prev.size());
        for (const auto& v : prev) jprev.push_back(jump.mat * v);
        std::vector<CVec> cur;
        cur.reserve(prev.size());
        cur.push_back(CVec::Zero(x0.size()));
        for (int k = 1; k <= k_end; ++k) {
            CVec acc = 0.5 * (prop.T[std::size_t(k)] * jprev[0]) +
                       0.5 * (prop.T[0] * jprev[std::size_t(k)]);
            for (int j = 1; j < k; ++j) acc += prop.T[std::size_t(k - j)] * jprev[std::size_t(j)];
            cur.push_back(prop.h * acc);
        }
        out.contributions.push_back(std::move(cur));
    }
    for (const auto& level_n : out.contributions) {
        std::vector<double> pn;
        pn.reserve(level_n.size());
        for (const auto& v : level_n) pn.push_back(tr.dot(v).real());
        out.p_n.push_back(std::move(pn));
    }
    return out;
}

// Joint density of clicks at grid indices k_1 < ... < k_n observed up to
// k_end: Tr[T(t-t_n) J ... J T(t_1) rho0].
inline double joint_density(const PropagatorSamples& prop, const Superoperator& jump,
                            const CMat& rho0, const std::vector<int>& ks, int k_end) {
    for (std::size_t i = 1; i < ks.size(); ++i)
        if (ks[i] <= ks[i - 1]) throw ValidationError("click times must be strictly ordered");
    if (!ks.empty() && (ks.front() < 0 || ks.back() > k_end))
        throw ValidationError("click times must lie in [0, horizon]");
    CVec v = vectorize(rho0);
    int prev = 0;
    for (int k : ks) {
        v = prop.T[std::size_t(k - prev)] * v;
        v = jump.mat * v;
        prev = k;
    }
    v = prop.T[std::size_t(k_end - prev)] * v;
    return trace_vector(prop.d).dot(v).real();
}

// Renewal product form: P0(t-t_n | rho_bar) prod_j w(t_j - t_{j-1} | rho_bar)
// w(t_1 | rho0).
inline double joint_density_renewal(const PropagatorSamples& prop, const CMat& rho0,
                                    const CMat& reset_state, const std::vector<int>& ks,
                                    int k_end) {
    const CVec tr = trace_vector(prop.d);
    const CVec x0 = vectorize(rho0);
    const CVec xb = vectorize(reset_state);
    auto p0_of = [&](int k, const CVec& x) { return tr.dot(prop.T[std::size_t(k)] * x).real(); };
    auto w_of = [&](int k, const CVec& x) {
        return -tr.dot(prop.Tdot[std::size_t(k)] * x).real();
    };
    if (ks.empty()) return p0_of(k_end, x0);
    double dens = w_of(ks.front(), x0);
    for (std::size_t i = 1; i < ks.size(); ++i) dens *= w_of(ks[i] - ks[i - 1], xb);
    dens *= p0_of(k_end - ks.back(), xb);
    return dens;
}

// Iterated waiting-time convolutions f^(n) on the grid: f^(1) = w(.|rho0),
// f^(n) = w * f^(n-1) by trapezoid.
inline std::vector<std::vector<double>> renewal_f_n(const std::vector<double>& w_reset,
                                                    const std::vector<double>& w_first, int n_max,
                                                    double h) {
    if (w_reset.size() != w_first.size())
        throw ValidationError("waiting-time sample vectors must share one grid");
    std::vector<std::vector<double>> f;
    f.push_back(w_first);
    const std::size_t n = w_first.size();
    for (int level = 2; level <= n_max; ++level) {
        const auto& prev = f.back();
        std::vector<double> cur(n, 0.0);
        for (std::size_t k = 1; k < n; ++k) {
            double acc = 0.5 * (w_reset[k] * prev[0] + w_reset[0] * prev[k]);
            for (std::size_t j = 1; j < k; ++j) acc += w_reset[k - j] * prev[j];
            cur[k] = h * acc;
        }
        f.push_back(std::move(cur));
    }
    return f;
}

// Reconstruction rho^(n)(t) = int_0^t T(t-s) rho_bar f^(n)(s) ds; returns the
// trace series (exclusive n-click probability) for cross-checking the
// operator recursion.
inline std::vector<double> renewal_p_n_from_f(const PropagatorSamples& prop,
                                              const CMat& reset_state,
                                              const std::vector<double>& f_n) {
    const CVec tr = trace_vector(prop.d);
    const CVec xb = vectorize(reset_state);
    std::vector<double> p0_curve;
    p0_curve.reserve(f_n.size());
    for (std::size_t k = 0; k < f_n.size(); ++k)
        p0_curve.push_back(tr.dot(prop.T[std::size_t(k)] * xb).real());
    std::vector<double> out(f_n.size(), 0.0);
    for (std::size_t k = 1; k < f_n.size(); ++k) {
        double acc = 0.5 * (p0_curve[k] * f_n[0] + p0_curve[0] * f_n[k]);
        for (std::size_t j = 1; j < k; ++j) acc += p0_curve[k - j] * f_n[j];
        out[k] = prop.h * acc;
    }
    return out;
}

}  // namespace nmqj
