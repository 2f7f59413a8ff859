#pragma once

// Markovian quantum jump machinery: generator split into drift + jump parts,
// measurement (reset) map, interval statistics, renewal classification, and
// the two standard trajectory sampling algorithms. The conditional-evolution
// engine defined here is shared with the bipartite (memory) samplers.

#include "nmqj/liouville.hpp"
#include "nmqj/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>

namespace nmqj {

class DarkStateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MonitoredOp {
    std::string label;
    CMat op;
    double rate = 0.0;  // 1/time
};
using OperatorSet = std::vector<MonitoredOp>;

inline void validate_operator_set(const OperatorSet& ops) {
    for (const auto& c : ops) {
        if (c.op.rows() != c.op.cols()) throw DimensionError("channel operator must be square");
        if (!ops.empty() && c.op.rows() != ops.front().op.rows())
            throw DimensionError("all channel operators must share one dimension");
        if (!(c.rate >= 0.0) || !std::isfinite(c.rate))
            throw ValidationError("channel rate must be finite and non-negative");
    }
}

// Full generator = L0 + sum_a rate_a C[V_a], monitored through one detector.
struct JumpModel {
    Superoperator l0;
    OperatorSet channels;
    int dim() const { return l0.hdim; }
};

// D generates the no-click evolution, J the click (sandwich) part; D + J is
// the full generator and Tr[D rho] = -Tr[J rho] for every rho.
struct SplitGenerator {
    Superoperator drift;
    Superoperator jump;
    int dim() const { return drift.hdim; }
    Superoperator full() const { return drift + jump; }
};

inline SplitGenerator split(const JumpModel& model) {
    validate_operator_set(model.channels);
    const int d = model.dim();
    Superoperator j = Superoperator::zero(d);
    Superoperator anticomm = Superoperator::zero(d);
    const CMat id = CMat::Identity(d, d);
    for (const auto& c : model.channels) {
        if (c.op.rows() != d) throw DimensionError("channel dimension does not match L0");
        j += c.rate * sandwich(c.op, c.op);
        const CMat vdv = c.op.adjoint() * c.op;
        anticomm += c.rate * Superoperator{d, 0.5 * (kron(id, vdv) + kron(vdv.transpose(), id))};
    }
    return {model.l0 - anticomm, j};
}

inline double jump_intensity(const Superoperator& jump, const CMat& rho) {
    return (jump.apply(rho)).trace().real();
}

// Reset map M rho = J rho / Tr[J rho].
inline DensityMatrix jump_map(const SplitGenerator& s, const DensityMatrix& rho,
                              const Tolerances& tol = Tolerances::defaults()) {
    CMat num = s.jump.apply(rho.mat);
    const double tr = num.trace().real();
    if (tr <= tol.jump_floor)
        throw DarkStateError("no detectable transition from this state (Tr[J rho] at floor)");
    return DensityMatrix{num / tr, true};
}

struct IntervalStatistics {
    std::vector<double> t;
    std::vector<double> p0;   // survival probability
    std::vector<double> w;    // waiting-time density
    std::vector<double> w_c;  // conditional density w / P0
};

// P0(t|rho) = Tr[exp(tD) rho], w = -Tr[D exp(tD) rho], w_c = w / P0.
inline IntervalStatistics interval_statistics(const SplitGenerator& s, const CMat& rho,
                                              const std::vector<double>& t_grid) {
    const int d = s.dim();
    const CVec tr = trace_vector(d);
    IntervalStatistics out;
    out.t = t_grid;
    CVec w = vectorize(rho);
    double t_prev = 0.0;
    CMat cached_step;
    double cached_dt = -1.0;
    for (double t : t_grid) {
        const double dt = t - t_prev;
        if (dt < 0) throw ValidationError("interval_statistics grid must ascend from 0");
        if (dt > 0) {
            if (dt != cached_dt) {
                cached_step = CMat(dt * s.drift.mat).exp();
                cached_dt = dt;
            }
            w = cached_step * w;
        }
        t_prev = t;
        const double p0 = tr.dot(w).real();
        const double wt = -tr.dot(s.drift.mat * w).real();
        out.p0.push_back(p0);
        out.w.push_back(wt);
        out.w_c.push_back(p0 > 0 ? wt / p0 : 0.0);
    }
    return out;
}

struct RenewalClassification {
    bool renewal = false;
    std::optional<DensityMatrix> reset_state;  // present when renewal
};

namespace detail {

// Deterministic probe states for behavioral checks: Gaussian pure states plus
// a couple of mixed combinations.
inline std::vector<CMat> probe_states(int d, int count, std::uint64_t seed = 0x9E3779B9ULL) {
    TrajectoryRng rng(seed, 0);
    std::vector<CMat> probes;
    auto gaussian = [&rng]() {
        const double u1 = rng.uniform();
        const double u2 = rng.uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return Complex(r * std::cos(2 * M_PI * u2), r * std::sin(2 * M_PI * u2));
    };
    for (int p = 0; p + 2 < count; ++p) {
        CVec psi(d);
        for (int i = 0; i < d; ++i) psi(i) = gaussian();
        psi /= psi.norm();
        probes.push_back(psi * psi.adjoint());
    }
    probes.push_back(CMat::Identity(d, d) / double(d));
    if (probes.size() >= 2) {
        probes.push_back(0.5 * probes[0] + 0.5 * probes[1]);
    } else {
        probes.push_back(CMat::Identity(d, d) / double(d));
    }
    return probes;
}

}  // namespace detail

// Renewal iff every channel is rank-1 with a common source vector |u> and the
// reset map is state-independent on a probe set. Returns the resetting state
// when renewal.
inline RenewalClassification classify_renewal(const OperatorSet& channels,
                                              const Tolerances& tol = Tolerances::defaults()) {
    validate_operator_set(channels);
    if (channels.empty()) return {false, std::nullopt};
    const int d = static_cast<int>(channels.front().op.rows());

    // structural check: rank-1 channels sharing one right singular vector
    CVec u_common;
    CMat reset_accum = CMat::Zero(d, d);
    double total_weight = 0.0;
    for (const auto& c : channels) {
        Eigen::JacobiSVD<CMat> svd(c.op, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        if (sv(0) <= 0) return {false, std::nullopt};
        if (sv.size() > 1 && sv(1) > 1e-9 * sv(0)) return {false, std::nullopt};
        const CVec u = svd.matrixV().col(0);  // source vector
        const CVec r = svd.matrixU().col(0);  // target vector
        if (u_common.size() == 0) {
            u_common = u;
        } else if (std::abs(u_common.dot(u)) < 1.0 - 1e-9) {
            return {false, std::nullopt};
        }
        const double weight = c.rate * sv(0) * sv(0);
        reset_accum += weight * (r * r.adjoint());
        total_weight += weight;
    }
    if (total_weight <= 0) return {false, std::nullopt};
    CMat reset = reset_accum / total_weight;

    // behavioral check: reset map state-independent on probes
    SplitGenerator s{Superoperator::zero(d), Superoperator::zero(d)};
    for (const auto& c : channels) s.jump += c.rate * sandwich(c.op, c.op);
    for (const auto& probe : detail::probe_states(d, 8)) {
        CMat num = s.jump.apply(probe);
        const double tr = num.trace().real();
        if (tr <= tol.jump_floor) continue;  // probe cannot trigger this detector
        if (((num / tr) - reset).cwiseAbs().maxCoeff() > tol.renewal_probe)
            return {false, std::nullopt};
    }
    return {true, DensityMatrix{std::move(reset), true}};
}

struct JumpRecord {
    double t = 0.0;
    CMat pre;   // normalized state just before the click
    CMat post;  // state right after the reset
};

struct Trajectory {
    std::uint64_t seed = 0;
    std::uint64_t index = 0;
    std::vector<double> jump_times;
    bool truncated = false;  // a dark state was reached; no further jumps possible
    std::vector<double> grid;
    std::vector<CMat> states;  // normalized conditional states at grid times
    std::vector<JumpRecord> jumps;
    double max_step_jump_prob = 0.0;  // populated by the dt-step sampler only
};

namespace detail {

// Conditional no-click evolution on an internal vectorized space with a
// linear reduction onto system vecs. Markovian engines use the identity
// reduction; bipartite engines reduce by the ancilla partial trace.
struct ConditionalEngine {
    int d_s = 0;
    Eigen::Index state_dim = 0;
    double h = 0.0;        // stepping stride
    CMat step;             // exp(h G)
    std::vector<CMat> ladder;  // exp(h 2^-j G), j = 1..depth, consistent by squaring
    CVec trace_vec;        // survival functional on internal vecs
    CMat reduce;           // system vec = reduce * w
    CMat lift;             // internal anchor = lift * vec(rho_s)
    Superoperator reduced_jump{0, {}};  // J on the system space (reset + intensity)
    bool renewal = false;
    CMat renewal_state;    // rho_bar_s when renewal

    int depth() const { return static_cast<int>(ladder.size()); }

    CMat reduced_state(const CVec& w) const {
        CMat rho = devectorize(CVec(reduce * w));
        const Complex tr = rho.trace();
        return rho / tr;
    }

    double survival(const CVec& w) const { return trace_vec.dot(w).real(); }

    // Reset from a normalized pre-jump system state. Returns false on a dark
    // state (click impossible).
    bool reset(const CMat& rho_pre, CMat& rho_post, CVec& w_anchor,
               const Tolerances& tol = Tolerances::defaults()) const {
        if (renewal) {
            rho_post = renewal_state;
        } else {
            CMat num = reduced_jump.apply(rho_pre);
            const double tr = num.trace().real();
            if (tr <= tol.jump_floor) return false;
            rho_post = num / tr;
        }
        w_anchor = lift * vectorize(rho_post);
        return true;
    }
};

inline ConditionalEngine make_engine(const Superoperator& drift, double h, int depth,
                                     const CMat& reduce, const CMat& lift,
                                     const Superoperator& reduced_jump, bool renewal,
                                     CMat renewal_state) {
    ConditionalEngine e;
    e.state_dim = drift.mat.rows();
    e.d_s = static_cast<int>(std::llround(std::sqrt(double(reduce.rows()))));
    e.h = h;
    e.trace_vec = trace_vector(static_cast<int>(std::llround(std::sqrt(double(e.state_dim)))));
    e.reduce = reduce;
    e.lift = lift;
    e.reduced_jump = reduced_jump;
    e.renewal = renewal;
    e.renewal_state = std::move(renewal_state);
    // Build the ladder bottom-up by squaring so that exp(h 2^-j G) equals the
    // square of the next level exactly in floating point; the march and the
    // dyadic refinement then see one consistent propagator family.
    e.ladder.resize(depth);
    CMat fine = CMat((h / std::ldexp(1.0, depth)) * drift.mat).exp();
    e.ladder[depth - 1] = fine;
    for (int j = depth - 2; j >= 0; --j) e.ladder[j] = e.ladder[j + 1] * e.ladder[j + 1];
    e.step = e.ladder[0] * e.ladder[0];
    return e;
}

// Precomputed no-click curve from one fixed anchor; shared across segments
// (and trajectories) that restart from the same state.
struct SegmentCache {
    std::vector<CVec> w;        // internal states at k*h
    std::vector<double> p0;     // survival samples
    std::vector<CVec> reduced;  // unnormalized reduced vecs at k*h
};

inline SegmentCache build_cache(const ConditionalEngine& e, const CVec& anchor, double horizon) {
    SegmentCache c;
    const int n = static_cast<int>(std::ceil(horizon / e.h)) + 1;
    c.w.reserve(n + 1);
    c.p0.reserve(n + 1);
    c.reduced.reserve(n + 1);
    CVec w = anchor;
    for (int k = 0; k <= n; ++k) {
        c.w.push_back(w);
        c.p0.push_back(e.survival(w));
        c.reduced.push_back(e.reduce * w);
        w = e.step * w;
    }
    return c;
}

struct SegmentJump {
    bool found = false;
    double offset = 0.0;   // jump time relative to the anchor
    CVec w_pre;            // internal state at the jump (trace ~ r)
    double final_p0 = 1.0; // survival at the horizon when no jump fired
};

// Dyadic bisection inside the bracket [t0, t0+h): descends the ladder,
// accepting each half-step while P0 stays >= r. Exact re-propagation, no
// interpolation of the state.
inline SegmentJump refine_crossing(const ConditionalEngine& e, CVec w_lo, double t_lo, double r) {
    double dt = e.h;
    for (int j = 0; j < e.depth(); ++j) {
        dt *= 0.5;
        CVec trial = e.ladder[static_cast<std::size_t>(j)] * w_lo;
        if (e.survival(trial) >= r) {
            w_lo = std::move(trial);
            t_lo += dt;
        }
    }
    return {true, t_lo + 0.5 * dt, std::move(w_lo), 0.0};
}

inline SegmentJump find_crossing(const ConditionalEngine& e, const CVec& anchor, double r,
                                 double horizon) {
    CVec w = anchor;
    double p = e.survival(w);
    double t = 0.0;
    while (t < horizon) {
        CVec w_next = e.step * w;
        const double p_next = e.survival(w_next);
        if (p_next < r) {
            if (t + e.h > horizon) {
                // bracket extends past the horizon; check the horizon point itself
                const double frac = (horizon - t) / e.h;
                CVec w_h = w + frac * (w_next - w);
                const double p_h = e.survival(w_h);
                if (p_h >= r) return {false, 0.0, {}, p_h};
            }
            auto res = refine_crossing(e, std::move(w), t, r);
            if (res.offset <= horizon) return res;
            return {false, 0.0, {}, p};
        }
        w = std::move(w_next);
        p = p_next;
        t += e.h;
    }
    return {false, 0.0, {}, p};
}

// Cache-backed variant: binary search on the monotone survival samples.
inline SegmentJump find_crossing(const ConditionalEngine& e, const SegmentCache& cache, double r,
                                 double horizon) {
    const auto& p0 = cache.p0;
    const int kmax = std::min<int>(static_cast<int>(p0.size()) - 1,
                                   static_cast<int>(std::ceil(horizon / e.h)));
    if (p0[static_cast<std::size_t>(kmax)] >= r)
        return {false, 0.0, {}, p0[static_cast<std::size_t>(kmax)]};
    int lo = 0, hi = kmax;  // p0[lo] >= r > p0[hi]
    while (hi - lo > 1) {
        const int mid = (lo + hi) / 2;
        (p0[static_cast<std::size_t>(mid)] >= r ? lo : hi) = mid;
    }
    auto res = refine_crossing(e, cache.w[static_cast<std::size_t>(lo)], lo * e.h, r);
    if (res.offset > horizon) return {false, 0.0, {}, p0[static_cast<std::size_t>(kmax)]};
    return res;
}

}  // namespace detail

namespace detail {

// Shared piecewise-deterministic sampler. Between clicks the internal state
// advances on the stride grid; output-grid states are linearly interpolated
// between strides and re-normalized after reduction.
template <typename SegmentStates>
inline void fill_outputs(const ConditionalEngine& e, const SegmentStates& states_at,
                         double t_anchor, double t_end, const std::vector<double>& grid,
                         std::size_t& gpos, std::vector<CMat>& out) {
    while (gpos < grid.size() && grid[gpos] <= t_end + 1e-12) {
        const double tau = std::max(0.0, grid[gpos] - t_anchor);
        CVec v = states_at(tau);
        CMat rho = devectorize(v);
        const Complex tr = rho.trace();
        out.push_back(rho / tr);
        ++gpos;
    }
}

struct SamplerOptions {
    const SegmentCache* first_cache = nullptr;    // curve from rho0
    const SegmentCache* renewal_cache = nullptr;  // curve from the resetting state
    bool use_renewal_fast_path = true;
};

inline Trajectory sample_pdp(const ConditionalEngine& e, const CMat& rho0, double t_max,
                             double dt_out, std::uint64_t base_seed, std::uint64_t traj_index,
                             const SamplerOptions& opt = {},
                             const Tolerances& tol = Tolerances::defaults()) {
    Trajectory tr;
    tr.seed = base_seed;
    tr.index = traj_index;
    const int n_out = static_cast<int>(std::llround(t_max / dt_out));
    tr.grid.resize(n_out + 1);
    for (int i = 0; i <= n_out; ++i) tr.grid[i] = i * dt_out;
    tr.states.reserve(tr.grid.size());

    TrajectoryRng rng(base_seed, traj_index);
    double t_anchor = 0.0;
    CMat rho_anchor = rho0;
    CVec w_anchor = e.lift * vectorize(rho0);
    std::size_t gpos = 0;
    bool first_segment = true;

    while (true) {
        const double horizon = t_max - t_anchor;
        const SegmentCache* cache = nullptr;
        if (first_segment && opt.first_cache) cache = opt.first_cache;
        if (!first_segment && e.renewal && opt.use_renewal_fast_path && opt.renewal_cache)
            cache = opt.renewal_cache;

        const double r = rng.uniform();
        SegmentJump sj = cache ? find_crossing(e, *cache, r, horizon)
                               : find_crossing(e, w_anchor, r, horizon);

        const double t_end = sj.found ? t_anchor + sj.offset : t_max;
        auto states_at = [&](double tau) -> CVec {
            const int k = static_cast<int>(tau / e.h);
            const double frac = (tau - k * e.h) / e.h;
            if (cache) {
                const auto& c = *cache;
                const std::size_t k0 = std::min<std::size_t>(k, c.reduced.size() - 2);
                return c.reduced[k0] + frac * (c.reduced[k0 + 1] - c.reduced[k0]);
            }
            // direct stepping fallback for uncached segments
            CVec w = w_anchor;
            for (int s = 0; s < k; ++s) w = e.step * w;
            CVec w1 = e.step * w;
            return e.reduce * CVec(w + frac * (w1 - w));
        };
        // For uncached segments, stepping once per output point would be
        // quadratic; walk the stride grid once instead.
        if (!cache) {
            CVec w = w_anchor;
            double tk = 0.0;
            CVec w_next = e.step * w;
            while (gpos < tr.grid.size() && tr.grid[gpos] <= t_end + 1e-12) {
                const double tau = std::max(0.0, tr.grid[gpos] - t_anchor);
                while (tk + e.h < tau) {
                    w = std::move(w_next);
                    w_next = e.step * w;
                    tk += e.h;
                }
                const double frac = (tau - tk) / e.h;
                CMat rho = devectorize(CVec(e.reduce * CVec(w + frac * (w_next - w))));
                tr.states.push_back(rho / rho.trace());
                ++gpos;
            }
        } else {
            fill_outputs(e, states_at, t_anchor, t_end, tr.grid, gpos, tr.states);
        }

        if (!sj.found) {
            // Survived to t_max. Flag genuinely dark states (no decay at all).
            if (sj.final_p0 > 1.0 - tol.survival_slack && !tr.jump_times.empty())
                tr.truncated = true;
            break;
        }

        // Click: record pre/post states and reset.
        CMat rho_pre = e.reduced_state(sj.w_pre);
        CMat rho_post;
        CVec w_new;
        if (!e.reset(rho_pre, rho_post, w_new, tol)) {
            tr.truncated = true;
            break;
        }
        tr.jump_times.push_back(t_end);
        tr.jumps.push_back({t_end, rho_pre, rho_post});
        t_anchor = t_end;
        rho_anchor = rho_post;
        w_anchor = std::move(w_new);
        first_segment = false;
        if (t_anchor >= t_max) break;
    }
    return tr;
}

}  // namespace detail

namespace detail {
inline std::pair<bool, CMat> classify_renewal_probe_only(const Superoperator& jump, int d,
                                                         const Tolerances& tol) {
    // behavioral-only classification used when channel operators are not
    // available separately (probe-set check as in classify_renewal)
    CMat reset;
    bool have = false;
    for (const auto& probe : probe_states(d, 8)) {
        CMat num = jump.apply(probe);
        const double tr = num.trace().real();
        if (tr <= tol.jump_floor) continue;
        CMat m = num / tr;
        if (!have) {
            reset = m;
            have = true;
        } else if ((m - reset).cwiseAbs().maxCoeff() > tol.renewal_probe) {
            return {false, CMat{}};
        }
    }
    if (!have) return {false, CMat{}};
    return {true, reset};
}
}  // namespace detail

inline std::pair<bool, CMat> classify_renewal_from_split(const SplitGenerator& s) {
    return detail::classify_renewal_probe_only(s.jump, s.dim(), Tolerances::defaults());
}

// Engine for a plain Markovian model: internal space = system space.
inline detail::ConditionalEngine make_markov_engine(const SplitGenerator& s, double h,
                                                    int ladder_depth = 40) {
    const int d = s.dim();
    const CMat id = CMat::Identity(static_cast<Eigen::Index>(d) * d,
                                   static_cast<Eigen::Index>(d) * d);
    auto cls = classify_renewal_from_split(s);
    return detail::make_engine(s.drift, h, ladder_depth, id, id, s.jump, cls.first,
                               cls.second);
}

// Finite-interval algorithm: successive click times solve P0(dt | M rho) = r.
inline Trajectory sample_trajectory(const SplitGenerator& s, const DensityMatrix& rho0,
                                    double t_max, double dt_grid, std::uint64_t seed,
                                    std::uint64_t traj_index = 0) {
    auto engine = make_markov_engine(s, dt_grid);
    return detail::sample_pdp(engine, rho0.mat, t_max, dt_grid, seed, traj_index);
}

// Infinitesimal-interval algorithm: per-step click probability
// dP = dt sum_a rate_a Tr[V_a^dag V_a rho].
inline Trajectory sample_trajectory_dtstep(const SplitGenerator& s, const DensityMatrix& rho0,
                                           double t_max, double dt, std::uint64_t seed,
                                           std::uint64_t traj_index = 0,
                                           const Tolerances& tol = Tolerances::defaults()) {
    Trajectory tr;
    tr.seed = seed;
    tr.index = traj_index;
    TrajectoryRng rng(seed, traj_index);
    const int n = static_cast<int>(std::llround(t_max / dt));
    const CMat e_dt = CMat(dt * s.drift.mat).exp();
    CMat rho = rho0.mat;
    tr.grid.reserve(n + 1);
    tr.states.reserve(n + 1);
    tr.grid.push_back(0.0);
    tr.states.push_back(rho);
    bool dark = false;
    for (int k = 1; k <= n; ++k) {
        const double t = k * dt;
        if (!dark) {
            const double dp = dt * jump_intensity(s.jump, rho);
            tr.max_step_jump_prob = std::max(tr.max_step_jump_prob, dp);
            if (rng.uniform() < dp) {
                CMat pre = rho;
                CMat num = s.jump.apply(rho);
                const double trn = num.trace().real();
                if (trn <= tol.jump_floor) {
                    dark = true;
                    tr.truncated = true;
                } else {
                    rho = num / trn;
                    tr.jump_times.push_back(t);
                    tr.jumps.push_back({t, pre, rho});
                }
            } else {
                CMat next = devectorize(CVec(e_dt * vectorize(rho)));
                rho = next / next.trace();
            }
        } else {
            CMat next = devectorize(CVec(e_dt * vectorize(rho)));
            rho = next / next.trace();
        }
        tr.grid.push_back(t);
        tr.states.push_back(rho);
    }
    return tr;
}

}  // namespace nmqj
