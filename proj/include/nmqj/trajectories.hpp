#pragma once

// Measurement-conditioned trajectories of the reduced system: jump times are
// drawn from the non-exponential survival probability of the embedded
// bipartite no-click evolution, resets are separable, and ensembles are
// averaged with a fixed, thread-count-independent reduction order.

#include "nmqj/propagator.hpp"

#include <atomic>
#include <thread>
#include <variant>

namespace nmqj {

class GridMismatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Engine acting on the bipartite internal space with ancilla reduction.
inline detail::ConditionalEngine make_nm_engine(const PropagatorTable& table,
                                                int ladder_depth = 40) {
    if (!table.engine)
        throw ValidationError("propagator table was not built from a model; "
                              "no bipartite engine available");
    const auto& eng = *table.engine;
    const bool renewal = eng.cert.kind == SymmetryCertificate::Kind::Renewal ||
                         [&] {
                             // constant-d certificates may still have renewal channels;
                             // detect behaviorally for the fast path
                             auto cls = detail::classify_renewal_probe_only(
                                 eng.reduced_jump, eng.d_s, Tolerances::defaults());
                             return cls.first;
                         }();
    CMat reset_state;
    if (renewal) {
        auto cls = detail::classify_renewal_probe_only(eng.reduced_jump, eng.d_s,
                                                       Tolerances::defaults());
        if (cls.first) reset_state = cls.second;
    }
    const bool have_reset = reset_state.size() > 0;
    return detail::make_engine(eng.split.drift, table.h, ladder_depth, eng.reduce, eng.lift,
                               eng.reduced_jump, have_reset, reset_state);
}

struct Truncated {
    double p0_at_horizon = 1.0;
};
using JumpTimeResult = std::variant<double, Truncated>;

// Smallest t with P0(t | rho_plus) = r; bisection-refined between grid points
// by exact re-propagation. The search horizon starts at the table horizon and
// doubles up to 2^10 times before reporting truncation.
inline JumpTimeResult sample_jump_time_nm(const PropagatorTable& table, const CMat& rho_plus,
                                          double r) {
    if (!(r > 0.0 && r < 1.0)) throw ValidationError("r must lie in (0,1)");
    auto engine = make_nm_engine(table);
    const CVec anchor = engine.lift * vectorize(rho_plus / rho_plus.trace());
    double horizon = table.t_max();
    // single march with plateau detection; equivalent to doubling the bracket
    const double max_horizon = horizon * 1024.0;
    CVec w = anchor;
    double p = engine.survival(w);
    double t = 0.0;
    int plateau = 0;
    while (t < max_horizon) {
        CVec w_next = engine.step * w;
        const double p_next = engine.survival(w_next);
        if (p_next < r) {
            auto res = detail::refine_crossing(engine, std::move(w), t, r);
            return res.offset;
        }
        plateau = (p - p_next < 1e-16 * std::max(p, 1e-300)) ? plateau + 1 : 0;
        if (plateau > 64) break;  // survival has saturated above r
        w = std::move(w_next);
        p = p_next;
        t += engine.h;
    }
    return Truncated{p};
}

struct NmSampleOptions {
    double dt_out = 0.0;               // output grid step; defaults to table stride
    bool use_renewal_fast_path = true;
    const detail::SegmentCache* first_cache = nullptr;
    const detail::SegmentCache* renewal_cache = nullptr;
};

inline Trajectory sample_trajectory_nm(const PropagatorTable& table, const DensityMatrix& rho0,
                                       double t_max, std::uint64_t seed,
                                       std::uint64_t traj_index = 0,
                                       const NmSampleOptions& opt = {}) {
    auto engine = make_nm_engine(table);
    detail::SamplerOptions sopt;
    sopt.first_cache = opt.first_cache;
    sopt.renewal_cache = opt.renewal_cache;
    sopt.use_renewal_fast_path = opt.use_renewal_fast_path;
    const double dt = opt.dt_out > 0 ? opt.dt_out : table.h;
    return detail::sample_pdp(engine, rho0.mat, t_max, dt, seed, traj_index, sopt);
}

// Time series of averaged matrix elements with standard errors. stderr_re/im
// hold the standard error of the real/imaginary part of each element.
struct EnsembleSeries {
    std::vector<double> t;
    std::vector<CMat> mean;
    std::vector<Eigen::MatrixXd> stderr_re;
    std::vector<Eigen::MatrixXd> stderr_im;
    int n_traj = 0;
    std::uint64_t base_seed = 0;
};

struct EnsembleResult {
    EnsembleSeries series;
    std::vector<std::vector<double>> jump_times;  // per trajectory, index order
    std::vector<char> truncated;
};

namespace detail {

constexpr int kEnsembleBlock = 32;

struct BlockAccum {
    std::vector<CMat> sum;
    std::vector<Eigen::MatrixXd> sum_re2, sum_im2;
    int count = 0;

    void init(std::size_t n_grid, int d) {
        sum.assign(n_grid, CMat::Zero(d, d));
        sum_re2.assign(n_grid, Eigen::MatrixXd::Zero(d, d));
        sum_im2.assign(n_grid, Eigen::MatrixXd::Zero(d, d));
        count = 0;
    }
    void add_state(std::size_t g, const CMat& rho) {
        sum[g] += rho;
        sum_re2[g] += rho.real().cwiseProduct(rho.real());
        sum_im2[g] += rho.imag().cwiseProduct(rho.imag());
    }
    void merge(const BlockAccum& o) {
        for (std::size_t g = 0; g < sum.size(); ++g) {
            sum[g] += o.sum[g];
            sum_re2[g] += o.sum_re2[g];
            sum_im2[g] += o.sum_im2[g];
        }
        count += o.count;
    }
};

// Fixed reduction order: blocks of 32 consecutive trajectories summed in
// index order, then a pairwise fold over blocks. Independent of thread count.
inline BlockAccum pairwise_merge(std::vector<BlockAccum>& blocks, std::size_t lo, std::size_t hi) {
    if (hi - lo == 1) return std::move(blocks[lo]);
    const std::size_t mid = lo + (hi - lo) / 2;
    BlockAccum a = pairwise_merge(blocks, lo, mid);
    BlockAccum b = pairwise_merge(blocks, mid, hi);
    a.merge(b);
    return a;
}

inline EnsembleSeries finalize_series(BlockAccum total, std::vector<double> grid,
                                      std::uint64_t base_seed) {
    EnsembleSeries s;
    s.t = std::move(grid);
    s.n_traj = total.count;
    s.base_seed = base_seed;
    const double n = total.count;
    for (std::size_t g = 0; g < total.sum.size(); ++g) {
        CMat mean = total.sum[g] / n;
        Eigen::MatrixXd var_re =
            (total.sum_re2[g] - n * mean.real().cwiseProduct(mean.real())) / (n - 1.0);
        Eigen::MatrixXd var_im =
            (total.sum_im2[g] - n * mean.imag().cwiseProduct(mean.imag())) / (n - 1.0);
        s.mean.push_back(std::move(mean));
        s.stderr_re.push_back((var_re.cwiseMax(0.0) / n).cwiseSqrt());
        s.stderr_im.push_back((var_im.cwiseMax(0.0) / n).cwiseSqrt());
    }
    return s;
}

template <typename SampleFn>
inline EnsembleResult run_ensemble_generic(SampleFn&& sample_one, std::size_t n_grid, int d_s,
                                           int n_traj, std::uint64_t base_seed, int workers) {
    const int n_blocks = (n_traj + kEnsembleBlock - 1) / kEnsembleBlock;
    std::vector<BlockAccum> blocks(std::size_t(n_blocks));
    EnsembleResult result;
    result.jump_times.resize(std::size_t(n_traj));
    result.truncated.assign(std::size_t(n_traj), 0);

    std::atomic<int> next_block{0};
    auto work = [&]() {
        while (true) {
            const int b = next_block.fetch_add(1);
            if (b >= n_blocks) break;
            auto& acc = blocks[std::size_t(b)];
            acc.init(n_grid, d_s);
            const int lo = b * kEnsembleBlock;
            const int hi = std::min(n_traj, lo + kEnsembleBlock);
            for (int i = lo; i < hi; ++i) {
                Trajectory tr = sample_one(std::uint64_t(i));
                for (std::size_t g = 0; g < tr.states.size(); ++g) acc.add_state(g, tr.states[g]);
                acc.count += 1;
                result.jump_times[std::size_t(i)] = std::move(tr.jump_times);
                result.truncated[std::size_t(i)] = tr.truncated ? 1 : 0;
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    BlockAccum total = pairwise_merge(blocks, 0, blocks.size());
    result.series = finalize_series(std::move(total), {}, base_seed);
    return result;
}

}  // namespace detail

// Deterministic pairwise average of sampled trajectories on one shared grid.
inline EnsembleSeries ensemble_average(const std::vector<Trajectory>& trajectories) {
    if (trajectories.empty()) throw ValidationError("ensemble is empty");
    const auto& grid = trajectories.front().grid;
    const int d = static_cast<int>(trajectories.front().states.front().rows());
    for (const auto& tr : trajectories)
        if (tr.grid != grid) throw GridMismatchError("trajectories do not share one grid");

    const int n_traj = static_cast<int>(trajectories.size());
    const int n_blocks = (n_traj + detail::kEnsembleBlock - 1) / detail::kEnsembleBlock;
    std::vector<detail::BlockAccum> blocks(std::size_t(n_blocks));
    for (int b = 0; b < n_blocks; ++b) {
        blocks[std::size_t(b)].init(grid.size(), d);
        const int lo = b * detail::kEnsembleBlock;
        const int hi = std::min(n_traj, lo + detail::kEnsembleBlock);
        for (int i = lo; i < hi; ++i) {
            for (std::size_t g = 0; g < grid.size(); ++g)
                blocks[std::size_t(b)].add_state(g, trajectories[std::size_t(i)].states[g]);
            blocks[std::size_t(b)].count += 1;
        }
    }
    auto total = detail::pairwise_merge(blocks, 0, blocks.size());
    auto series = detail::finalize_series(std::move(total), grid,
                                          trajectories.front().seed);
    return series;
}

struct EnsembleConfig {
    int n_traj = 2000;
    std::uint64_t base_seed = 12345;
    int workers = 0;  // 0 = hardware concurrency
    double dt_out = 0.0;
    bool use_renewal_fast_path = true;
};

// Parallel non-Markovian ensemble; identical output for any worker count.
inline EnsembleResult run_ensemble_nm(const PropagatorTable& table, const DensityMatrix& rho0,
                                      double t_max, const EnsembleConfig& cfg) {
    auto engine = make_nm_engine(table);
    const double dt = cfg.dt_out > 0 ? cfg.dt_out : table.h;
    const std::size_t n_grid = std::size_t(std::llround(t_max / dt)) + 1;

    // shared no-click curves: from rho0 (first segment) and from the reset state
    const detail::SegmentCache first_cache =
        detail::build_cache(engine, CVec(engine.lift * vectorize(rho0.mat)), t_max);
    detail::SegmentCache renewal_cache;
    if (engine.renewal && cfg.use_renewal_fast_path)
        renewal_cache = detail::build_cache(
            engine, CVec(engine.lift * vectorize(engine.renewal_state)), t_max);

    detail::SamplerOptions sopt;
    sopt.first_cache = &first_cache;
    sopt.renewal_cache = renewal_cache.w.empty() ? nullptr : &renewal_cache;
    sopt.use_renewal_fast_path = cfg.use_renewal_fast_path;

    const int workers = cfg.workers > 0
                            ? cfg.workers
                            : std::max(1u, std::thread::hardware_concurrency());
    auto sample_one = [&](std::uint64_t i) {
        return detail::sample_pdp(engine, rho0.mat, t_max, dt, cfg.base_seed, i, sopt);
    };
    auto result = detail::run_ensemble_generic(sample_one, n_grid, table.d_s, cfg.n_traj,
                                               cfg.base_seed, workers);
    result.series.t.resize(n_grid);
    for (std::size_t g = 0; g < n_grid; ++g) result.series.t[std::size_t(g)] = double(g) * dt;
    return result;
}

// Parallel Markovian ensemble with the same reduction scheme.
inline EnsembleResult run_ensemble_markov(const SplitGenerator& split, const DensityMatrix& rho0,
                                          double t_max, double dt_grid,
                                          const EnsembleConfig& cfg) {
    auto engine = make_markov_engine(split, dt_grid);
    const std::size_t n_grid = std::size_t(std::llround(t_max / dt_grid)) + 1;
    const detail::SegmentCache first_cache =
        detail::build_cache(engine, vectorize(rho0.mat), t_max);
    detail::SegmentCache renewal_cache;
    if (engine.renewal)
        renewal_cache = detail::build_cache(engine, vectorize(engine.renewal_state), t_max);
    detail::SamplerOptions sopt;
    sopt.first_cache = &first_cache;
    sopt.renewal_cache = renewal_cache.w.empty() ? nullptr : &renewal_cache;

    const int workers = cfg.workers > 0
                            ? cfg.workers
                            : std::max(1u, std::thread::hardware_concurrency());
    auto sample_one = [&](std::uint64_t i) {
        return detail::sample_pdp(engine, rho0.mat, t_max, dt_grid, cfg.base_seed, i, sopt);
    };
    auto result = detail::run_ensemble_generic(sample_one, n_grid, split.dim(), cfg.n_traj,
                                               cfg.base_seed, workers);
    result.series.t.resize(n_grid);
    for (std::size_t g = 0; g < n_grid; ++g)
        result.series.t[std::size_t(g)] = double(g) * dt_grid;
    return result;
}

}  // namespace nmqj
