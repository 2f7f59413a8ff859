#pragma once

// Assembles the standard demonstration datasets for the two-level example:
//   fig1 - survival probability and waiting-time density for two initial states
//   fig2 - one trajectory plus ensemble averages against the closed forms
//   fig3 - relative entropy vs the stationary state (information backflow)

#include "nmqj/counting.hpp"
#include "nmqj/trajectories.hpp"
#include "nmqj/two_level.hpp"

namespace nmqj {

struct FigureConfig {
    double t_max = 10.0;
    double dt_out = 0.01;
    double table_h = 0.0;  // 0 = default stride min(1/(20 max rate), t_max/2000)
    int n_traj = 2000;
    std::uint64_t seed = 12345;
    int workers = 0;
    double master_h = 0.005;  // 1/(200 gamma) at gamma = 1
};

inline double default_table_stride(const TLSParams& p, double t_max) {
    const double max_rate = std::max({p.gamma, p.gamma_prime, 1e-12});
    return std::min(1.0 / (20.0 * max_rate), t_max / 2000.0);
}

struct FigureData {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

struct Fig2Data {
    FigureData trajectory;
    FigureData ensemble;
};

struct Fig3Data {
    FigureData entropy;
    std::vector<BackflowInterval> backflow_y;
    std::vector<BackflowInterval> backflow_x;
};

inline PropagatorTable build_tls_table(const TLSParams& p, double t_max, double h = 0.0) {
    const auto model = build_tls_model(p);
    const auto cert = validate_symmetry(model).require("tls rate tensor");
    return reduced_propagator(model, cert, t_max, h > 0 ? h : default_table_stride(p, t_max));
}

// Survival and waiting-time curves for the y- superposition and for the
// resetting state, numeric (table) and closed form side by side.
inline FigureData make_fig1(const TLSParams& p, const FigureConfig& cfg,
                            const PropagatorTable& table) {
    FigureData out;
    out.header = {"t",       "p0_y",       "w_y",       "p0_reset",       "w_reset",
                  "p0_y_exact", "w_y_exact", "p0_reset_exact", "w_reset_exact"};
    const CMat rho_y = y_minus_state().mat;
    const CMat rho_r = ket_minus_state().mat;
    const int stride = std::max(1, static_cast<int>(std::llround(cfg.dt_out / table.h)));
    for (int k = 0; k <= table.steps(); k += stride) {
        const double t = table.t_grid[std::size_t(k)];
        std::vector<double> row{t,
                                table.survival(k, rho_y),
                                table.waiting(k, rho_y),
                                table.survival(k, rho_r),
                                table.waiting(k, rho_r)};
        if (p.symmetric_rates()) {
            row.push_back(analytic_survival(p, rho_y, t));
            row.push_back(analytic_waiting(p, rho_y, t));
            row.push_back(analytic_survival(p, rho_r, t));
            row.push_back(analytic_waiting(p, rho_r, t));
        } else {
            row.insert(row.end(), {0, 0, 0, 0});
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

inline Fig2Data make_fig2(const TLSParams& p, const FigureConfig& cfg,
                          const PropagatorTable& table, const EnsembleResult& ensemble) {
    Fig2Data out;

    NmSampleOptions opt;
    opt.dt_out = cfg.dt_out;
    Trajectory tr = sample_trajectory_nm(table, y_minus_state(), cfg.t_max, cfg.seed, 0, opt);
    out.trajectory.header = {"t", "population_upper", "coherence_imag", "jump_marker"};
    std::size_t next_jump = 0;
    for (std::size_t g = 0; g < tr.grid.size(); ++g) {
        while (next_jump < tr.jumps.size() && tr.jumps[next_jump].t <= tr.grid[g]) {
            const auto& jr = tr.jumps[next_jump];
            out.trajectory.rows.push_back(
                {jr.t, jr.pre(0, 0).real(), jr.pre(0, 1).imag(), 1.0});
            out.trajectory.rows.push_back(
                {jr.t, jr.post(0, 0).real(), jr.post(0, 1).imag(), 2.0});
            ++next_jump;
        }
        out.trajectory.rows.push_back(
            {tr.grid[g], tr.states[g](0, 0).real(), tr.states[g](0, 1).imag(), 0.0});
    }

    out.ensemble.header = {"t",          "mean_pop",   "stderr_pop", "exact_pop",
                           "mean_imcoh", "stderr_imcoh", "exact_imcoh"};
    const auto& s = ensemble.series;
    for (std::size_t g = 0; g < s.t.size(); ++g) {
        const double t = s.t[g];
        double exact_p = 0.0, exact_c = 0.0;
        if (p.symmetric_rates()) {
            const CMat exact = analytic_solution(p, y_minus_state().mat, t).mat;
            exact_p = exact(0, 0).real();
            exact_c = exact(0, 1).imag();
        }
        out.ensemble.rows.push_back({t, s.mean[g](0, 0).real(), s.stderr_re[g](0, 0), exact_p,
                                     s.mean[g](0, 1).imag(), s.stderr_im[g](0, 1), exact_c});
    }
    return out;
}

inline Fig3Data make_fig3(const TLSParams& p, const FigureConfig& cfg) {
    Fig3Data out;
    const int steps = static_cast<int>(std::llround(cfg.t_max / cfg.master_h));
    const KernelSpec spec = closed_form_kernels(p, cfg.master_h, steps);
    const CMat stationary = tls_stationary_state(p).mat;

    const StateSeries sy = integrate_local_nonlocal(spec, y_minus_state(), cfg.t_max);
    const StateSeries sx = integrate_local_nonlocal(spec, x_minus_state(), cfg.t_max);
    const std::vector<double> ey = relative_entropy_series(sy.states, stationary);
    const std::vector<double> ex = relative_entropy_series(sx.states, stationary);

    out.entropy.header = {"t", "relative_entropy_y", "relative_entropy_x"};
    for (std::size_t k = 0; k < sy.t.size(); ++k)
        out.entropy.rows.push_back({sy.t[k], ey[k], ex[k]});
    out.backflow_y = detect_backflow(sy.t, ey);
    out.backflow_x = detect_backflow(sx.t, ex);
    return out;
}

}  // namespace nmqj
