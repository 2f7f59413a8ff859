#pragma once

// Reduced conditional propagator T(t) rho = Tr_a[exp(t D_bip)(rho (x) rho_bar_a)]
// on a uniform grid, built by repeated application of the cached single-step
// exponential, together with its exact first/second derivative samples, the
// memory-kernel extraction (local delta part + smooth part), non-Markovian
// interval statistics, and the decaying-survival admissibility check.

#include "nmqj/bipartite.hpp"

#include <cmath>
#include <memory>

namespace nmqj {

class IllConditionedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Extracted kernel split D(t) = D_local delta(t) + D_smooth(t).
struct MemoryKernel {
    double h = 0.0;
    Superoperator local{0, {}};
    std::vector<Superoperator> smooth;
};

// Internal bipartite machinery kept alongside a table built from a model;
// the trajectory samplers require it.
struct BipartiteEngineData {
    SplitGenerator split;     // bipartite D, J
    CMat reduce;              // partial-trace map
    CMat lift;                // embed-with-rho_bar_a map
    Superoperator reduced_jump{0, {}};
    SymmetryCertificate cert;
    int d_s = 0, d_a = 0;
};

struct PropagatorTable {
    double h = 0.0;
    int d_s = 0;
    std::vector<double> t_grid;
    std::vector<CMat> T;       // reduced propagator samples, d_s^2 x d_s^2
    std::vector<CMat> Tdot;    // exact d/dt samples
    std::vector<CMat> Tddot;   // exact d^2/dt^2 samples
    std::shared_ptr<const BipartiteEngineData> engine;  // present when model-built

    int steps() const { return static_cast<int>(T.size()) - 1; }
    double t_max() const { return t_grid.empty() ? 0.0 : t_grid.back(); }

    double survival(int k, const CMat& rho) const {
        return (trace_vector(d_s).dot(T[std::size_t(k)] * vectorize(rho))).real();
    }
    double waiting(int k, const CMat& rho) const {
        return -(trace_vector(d_s).dot(Tdot[std::size_t(k)] * vectorize(rho))).real();
    }

    // Derives missing derivative samples by 4th-order finite differences;
    // used for hand-built or imported tables.
    void derive_missing_derivatives();
};

inline void PropagatorTable::derive_missing_derivatives() {
    const int n = steps();
    auto stencil_d1 = [&](const std::vector<CMat>& f, int k) -> CMat {
        if (k >= 2 && k <= n - 2)
            return (f[std::size_t(k - 2)] - 8.0 * f[std::size_t(k - 1)] +
                    8.0 * f[std::size_t(k + 1)] - f[std::size_t(k + 2)]) /
                   (12.0 * h);
        if (k < 2)
            return (-25.0 * f[std::size_t(k)] + 48.0 * f[std::size_t(k + 1)] -
                    36.0 * f[std::size_t(k + 2)] + 16.0 * f[std::size_t(k + 3)] -
                    3.0 * f[std::size_t(k + 4)]) /
                   (12.0 * h);
        return (25.0 * f[std::size_t(k)] - 48.0 * f[std::size_t(k - 1)] +
                36.0 * f[std::size_t(k - 2)] - 16.0 * f[std::size_t(k - 3)] +
                3.0 * f[std::size_t(k - 4)]) /
               (12.0 * h);
    };
    if (Tdot.empty()) {
        Tdot.resize(T.size());
        for (int k = 0; k <= n; ++k) Tdot[std::size_t(k)] = stencil_d1(T, k);
    }
    if (Tddot.empty()) {
        Tddot.resize(T.size());
        for (int k = 0; k <= n; ++k) Tddot[std::size_t(k)] = stencil_d1(Tdot, k);
    }
}

// Builds the table columnwise: each system basis matrix is embedded with the
// reset ancilla state, propagated with the cached step exponential, and
// partial-traced. Derivative samples come from the generator directly.
inline PropagatorTable reduced_propagator(const BipartiteModel& model,
                                          const SymmetryCertificate& cert, double t_max,
                                          double h) {
    validate_model_shape(model);
    if (!(h > 0) || !(t_max > 0)) throw ValidationError("t_max and h must be positive");
    auto eng = std::make_shared<BipartiteEngineData>();
    eng->split = bipartite_split(model);
    eng->reduce = partial_trace_map(model.d_s, model.d_a);
    eng->lift = embed_with_ancilla_map(model.d_s, cert.rho_bar_a());
    eng->reduced_jump = reduced_jump_superop(model, cert);
    eng->cert = cert;
    eng->d_s = model.d_s;
    eng->d_a = model.d_a;

    const int steps = static_cast<int>(std::llround(t_max / h));
    PropagatorTable table;
    table.h = h;
    table.d_s = model.d_s;
    table.engine = eng;
    table.t_grid.resize(std::size_t(steps) + 1);
    table.T.reserve(std::size_t(steps) + 1);
    table.Tdot.reserve(std::size_t(steps) + 1);
    table.Tddot.reserve(std::size_t(steps) + 1);

    const CMat& dmat = eng->split.drift.mat;
    const CMat e_h = CMat(h * dmat).exp();
    CMat w = eng->lift;  // (d_s d_a)^2 x d_s^2 panel
    for (int k = 0; k <= steps; ++k) {
        table.t_grid[std::size_t(k)] = k * h;
        const CMat dw = dmat * w;
        table.T.push_back(eng->reduce * w);
        table.Tdot.push_back(eng->reduce * dw);
        table.Tddot.push_back(eng->reduce * (dmat * dw));
        if (k < steps) w = e_h * w;
    }
    return table;
}

namespace detail {

// Progressive Gregory quadrature weights of order 4 for int_0^{nh}; the
// repeated interior weight is 1 (trapezoid family), so the induced
// direct-quadrature methods are stable.
inline double gregory4_weight(int n, int j) {
    if (n >= 6) {
        if (j == 0 || j == n) return 3.0 / 8.0;
        if (j == 1 || j == n - 1) return 7.0 / 6.0;
        if (j == 2 || j == n - 2) return 23.0 / 24.0;
        return 1.0;
    }
    static const std::vector<std::vector<double>> small = {
        {},
        {0.5, 0.5},
        {1.0 / 3, 4.0 / 3, 1.0 / 3},
        {3.0 / 8, 9.0 / 8, 9.0 / 8, 3.0 / 8},
        {14.0 / 45, 64.0 / 45, 24.0 / 45, 64.0 / 45, 14.0 / 45},
        {95.0 / 288, 375.0 / 288, 250.0 / 288, 250.0 / 288, 375.0 / 288, 95.0 / 288}};
    return small[std::size_t(n)][std::size_t(j)];
}

}  // namespace detail

// Kernel extraction. The delta part is the exact initial slope D0 = Tdot(0);
// the smooth part solves the second-kind Volterra equation obtained by
// differentiating dT/dt = D0 T + D_s * T once,
//     D_s(t) = Tddot(t) - D0 Tdot(t) - int_0^t D_s(u) Tdot(t-u) du,
// discretized with order-4 Gregory weights and solved by forward substitution
// (one small right-division per step).
inline MemoryKernel extract_memory_kernel(const PropagatorTable& table_in) {
    PropagatorTable table = table_in;  // cheap: shared matrices are copied by value but small
    table.derive_missing_derivatives();
    const int n_steps = table.steps();
    const double h = table.h;
    const Eigen::Index dim = table.T.front().rows();

    MemoryKernel out;
    out.h = h;
    out.local = Superoperator{table.d_s, table.Tdot.front()};
    out.smooth.reserve(std::size_t(n_steps) + 1);
    const CMat& d0 = out.local.mat;
    out.smooth.push_back(Superoperator{table.d_s, table.Tddot.front() - d0 * d0});

    std::vector<CMat> ds;
    ds.reserve(std::size_t(n_steps) + 1);
    ds.push_back(out.smooth.front().mat);
    for (int n = 1; n <= n_steps; ++n) {
        CMat rhs = table.Tddot[std::size_t(n)] - d0 * table.Tdot[std::size_t(n)];
        CMat acc = CMat::Zero(dim, dim);
        for (int j = 0; j < n; ++j)
            acc += detail::gregory4_weight(n, j) * (ds[std::size_t(j)] * table.Tdot[std::size_t(n - j)]);
        rhs -= h * acc;
        // right-divide by (I + h w_n Tdot(0)) = (I + h w_n D0)
        const double wn = detail::gregory4_weight(n, n);
        CMat a = CMat::Identity(dim, dim) + h * wn * d0;
        Eigen::PartialPivLU<CMat> lu(a.transpose());
        const double rcond_proxy = a.cwiseAbs().rowwise().sum().maxCoeff();
        CMat dn = lu.solve(rhs.transpose()).transpose();
        const double resid = (dn * a - rhs).cwiseAbs().maxCoeff() /
                             std::max(1.0, rhs.cwiseAbs().maxCoeff());
        if (!std::isfinite(resid) || resid > 1e-6)
            throw IllConditionedError("kernel deconvolution diagonal solve residual " +
                                      std::to_string(resid) + " exceeds 1e-6 (step " +
                                      std::to_string(n) + ", scale " +
                                      std::to_string(rcond_proxy) + ")");
        ds.push_back(dn);
        out.smooth.push_back(Superoperator{table.d_s, std::move(dn)});
    }
    return out;
}

struct NmIntervalStatistics {
    std::vector<double> t, p0, w, w_c;
};

// P0(t|rho) = Tr[T(t) rho]; w = -dP0/dt from the exact derivative samples;
// w_c = w / P0. Grid times must lie on the table grid.
inline NmIntervalStatistics nm_interval_statistics(const PropagatorTable& table, const CMat& rho,
                                                   const std::vector<double>& t_grid) {
    NmIntervalStatistics out;
    out.t = t_grid;
    const CVec x = vectorize(rho);
    const CVec tr = trace_vector(table.d_s);
    for (double t : t_grid) {
        const double kf = t / table.h;
        const int k = static_cast<int>(std::llround(kf));
        if (k < 0 || k > table.steps() || std::abs(kf - k) > 1e-9)
            throw ValidationError("requested time is not on the propagator grid");
        const double p0 = tr.dot(table.T[std::size_t(k)] * x).real();
        const double w = -tr.dot(table.Tdot[std::size_t(k)] * x).real();
        out.p0.push_back(p0);
        out.w.push_back(w);
        out.w_c.push_back(p0 > 0 ? w / p0 : 0.0);
    }
    return out;
}

struct DecayViolation {
    double t1 = 0.0, t2 = 0.0;
    int probe = 0;
    double increase = 0.0;
};

struct DecayReport {
    std::vector<DecayViolation> violations;
    int probes_checked = 0;
    bool ok() const { return violations.empty(); }
};

// Admissibility: Tr[T(t2) rho] <= Tr[T(t1) rho] + slack for all t1 < t2 on
// the grid, over basis populations and random probe states.
inline DecayReport check_decaying_survival(const PropagatorTable& table,
                                           int n_random_probes = 6,
                                           const Tolerances& tol = Tolerances::defaults()) {
    std::vector<CMat> probes;
    for (int i = 0; i < table.d_s; ++i) probes.push_back(basis_matrix(table.d_s, i, i));
    for (const auto& p : detail::probe_states(table.d_s, n_random_probes)) probes.push_back(p);

    DecayReport report;
    report.probes_checked = static_cast<int>(probes.size());
    for (int pi = 0; pi < static_cast<int>(probes.size()); ++pi) {
        double running_min = std::numeric_limits<double>::infinity();
        double t_of_min = 0.0;
        for (int k = 0; k <= table.steps(); ++k) {
            const double p0 = table.survival(k, probes[std::size_t(pi)]);
            if (p0 > running_min + tol.survival_slack)
                report.violations.push_back(
                    {t_of_min, table.t_grid[std::size_t(k)], pi, p0 - running_min});
            if (p0 < running_min) {
                running_min = p0;
                t_of_min = table.t_grid[std::size_t(k)];
            }
        }
    }
    return report;
}

// Table-to-CSV rows: t followed by d_s^4 complex entries re/im interleaved.
inline std::vector<std::vector<double>> propagator_table_rows(const PropagatorTable& table) {
    std::vector<std::vector<double>> rows;
    rows.reserve(table.T.size());
    for (int k = 0; k <= table.steps(); ++k) {
        std::vector<double> row;
        row.reserve(1 + 2 * std::size_t(table.T[std::size_t(k)].size()));
        row.push_back(table.t_grid[std::size_t(k)]);
        const CMat& m = table.T[std::size_t(k)];
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                row.push_back(m(r, c).real());
                row.push_back(m(r, c).imag());
            }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace nmqj
