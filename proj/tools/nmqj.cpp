// Batch front door: model ingestion, deterministic runs, CSV + manifest
// outputs. See README for the command set.

#include "nmqj/nmqj.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nmqj;

namespace {

struct RunConfig {
    std::string model = "tls";  // "tls" or a JSON file path
    std::string out_dir;
    std::uint64_t seed = 12345;
    int n_traj = 2000;
    double t_max = 10.0;
    double dt = 0.01;       // output grid step
    double table_h = 0.0;   // 0 = default stride
    double master_h = 0.005;
    int workers = 0;
    double gamma = 1.0, gamma_prime = 1.0, omega = 4.0;

    json to_json() const {
        return json{{"model", model},       {"out_dir", out_dir}, {"seed", seed},
                    {"traj", n_traj},       {"tmax", t_max},      {"dt", dt},
                    {"table_h", table_h},   {"master_h", master_h},
                    {"workers", workers},   {"gamma", gamma},
                    {"gamma_prime", gamma_prime}, {"omega", omega}};
    }
};

struct LoadedModel {
    BipartiteModel model;
    SymmetryCertificate cert;
    bool is_tls = false;
    TLSParams tls;
};

LoadedModel resolve_model(const RunConfig& cfg) {
    LoadedModel lm;
    if (cfg.model == "tls") {
        lm.is_tls = true;
        lm.tls = TLSParams{cfg.gamma, cfg.gamma_prime, cfg.omega};
        lm.model = build_tls_model(lm.tls);
    } else {
        lm.model = load_model(cfg.model);
    }
    auto validation = validate_symmetry(lm.model);
    lm.cert = validation.require(cfg.model.c_str());
    return lm;
}

class Manifest {
public:
    Manifest(const RunConfig& cfg, const std::string& command) {
        j_["tool"] = "nmqj";
        j_["version"] = NMQJ_VERSION;
        j_["command"] = command;
        j_["config"] = cfg.to_json();
        start_ = std::chrono::steady_clock::now();
    }
    void add_output(const fs::path& p) {
        j_["outputs"].push_back(json{{"file", p.filename().string()},
                                     {"bytes", fs::file_size(p)},
                                     {"checksum", file_checksum(p.string())}});
    }
    void extra(const std::string& key, json v) { j_[key] = std::move(v); }
    void write(const fs::path& dir) {
        const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - start_)
                              .count();
        j_["wall_ms"] = wall;
        std::ofstream out(dir / "manifest.json");
        out << j_.dump(2) << "\n";
    }

private:
    json j_;
    std::chrono::steady_clock::time_point start_;
};

fs::path prepare_out_dir(RunConfig& cfg) {
    if (cfg.out_dir.empty()) {
        const char* env = std::getenv("NMQJ_OUT");
        cfg.out_dir = env ? env : "out";
    }
    fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    return dir;
}

double table_stride(const RunConfig& cfg, const LoadedModel& lm) {
    if (cfg.table_h > 0) return cfg.table_h;
    double max_rate = 1e-12;
    for (const auto& v : lm.model.rates.g) max_rate = std::max(max_rate, v);
    return std::min(1.0 / (20.0 * max_rate), cfg.t_max / 2000.0);
}

json certificate_report(const SymmetryValidation& v) {
    json r;
    r["status"] = v.status == SymmetryValidation::Status::Ok ? "ok"
                  : v.status == SymmetryValidation::Status::NotFactorizable
                      ? "not_factorizable"
                      : "classical_correlated_reset";
    r["residual"] = v.residual;
    if (!v.detail.empty()) r["detail"] = v.detail;
    if (v.certificate) {
        const auto& c = *v.certificate;
        r["kind"] = c.kind == SymmetryCertificate::Kind::Renewal ? "renewal" : "non_renewal";
        r["gamma_alpha"] = c.gamma_alpha;
        r["c"] = c.c;
        r["d"] = c.d;
        r["d_constant"] = c.d_constant;
    }
    return r;
}

int cmd_validate(RunConfig cfg) {
    const fs::path dir = prepare_out_dir(cfg);
    Manifest manifest(cfg, "validate");
    LoadedModel lm;
    if (cfg.model == "tls") {
        lm.is_tls = true;
        lm.tls = TLSParams{cfg.gamma, cfg.gamma_prime, cfg.omega};
        lm.model = build_tls_model(lm.tls);
    } else {
        lm.model = load_model(cfg.model);
    }
    const auto validation = validate_symmetry(lm.model);
    const json report = certificate_report(validation);
    std::cout << report.dump(2) << "\n";

    if (validation.status != SymmetryValidation::Status::Ok) {
        std::cerr << "model rejected: " << validation.detail
                  << " (residual " << validation.residual << ")\n";
        return 2;
    }
    // admissibility probe on a short table
    const auto table = reduced_propagator(lm.model, *validation.certificate,
                                          std::min(cfg.t_max, 5.0),
                                          table_stride(cfg, lm));
    const auto decay = check_decaying_survival(table);
    json decay_report;
    decay_report["probes"] = decay.probes_checked;
    decay_report["violations"] = decay.violations.size();
    std::cout << "decaying-survival check: "
              << (decay.ok() ? "ok" : "violations found") << "\n";
    manifest.extra("certificate", report);
    manifest.extra("decay_check", decay_report);
    manifest.write(dir);
    return decay.ok() ? 0 : 3;
}

int cmd_propagator(RunConfig cfg) {
    const fs::path dir = prepare_out_dir(cfg);
    Manifest manifest(cfg, "propagator");
    auto lm = resolve_model(cfg);
    const auto table =
        reduced_propagator(lm.model, lm.cert, cfg.t_max, table_stride(cfg, lm));

    std::vector<std::string> header{"t"};
    for (int c = 0; c < table.d_s * table.d_s; ++c)
        for (int r = 0; r < table.d_s * table.d_s; ++r) {
            header.push_back("T_re_" + std::to_string(r) + "_" + std::to_string(c));
            header.push_back("T_im_" + std::to_string(r) + "_" + std::to_string(c));
        }
    write_csv((dir / "propagator.csv").string(), header, propagator_table_rows(table));
    manifest.add_output(dir / "propagator.csv");

    const auto kernel = extract_memory_kernel(table);
    {
        std::vector<std::string> kh{"row", "col", "re", "im"};
        std::vector<std::vector<double>> rows;
        for (Eigen::Index c = 0; c < kernel.local.mat.cols(); ++c)
            for (Eigen::Index r = 0; r < kernel.local.mat.rows(); ++r)
                rows.push_back({double(r), double(c), kernel.local.mat(r, c).real(),
                                kernel.local.mat(r, c).imag()});
        write_csv((dir / "kernel_local.csv").string(), kh, rows);
        manifest.add_output(dir / "kernel_local.csv");
    }
    {
        std::vector<std::string> kh{"t"};
        const Eigen::Index dim = kernel.local.mat.rows();
        for (Eigen::Index c = 0; c < dim; ++c)
            for (Eigen::Index r = 0; r < dim; ++r) {
                kh.push_back("Ds_re_" + std::to_string(r) + "_" + std::to_string(c));
                kh.push_back("Ds_im_" + std::to_string(r) + "_" + std::to_string(c));
            }
        std::vector<std::vector<double>> rows;
        for (std::size_t k = 0; k < kernel.smooth.size(); ++k) {
            std::vector<double> row{double(k) * kernel.h};
            append_elements(row, kernel.smooth[k].mat);
            rows.push_back(std::move(row));
        }
        write_csv((dir / "kernel_smooth.csv").string(), kh, rows);
        manifest.add_output(dir / "kernel_smooth.csv");
    }
    manifest.write(dir);
    return 0;
}

int cmd_trajectories(RunConfig cfg) {
    const fs::path dir = prepare_out_dir(cfg);
    Manifest manifest(cfg, "trajectories");
    auto lm = resolve_model(cfg);
    const auto table =
        reduced_propagator(lm.model, lm.cert, cfg.t_max, table_stride(cfg, lm));

    EnsembleConfig ecfg;
    ecfg.n_traj = cfg.n_traj;
    ecfg.base_seed = cfg.seed;
    ecfg.workers = cfg.workers;
    ecfg.dt_out = cfg.dt;
    const auto ens = run_ensemble_nm(table, DensityMatrix{y_minus_state().mat, true},
                                     cfg.t_max, ecfg);

    // first trajectory
    NmSampleOptions opt;
    opt.dt_out = cfg.dt;
    const Trajectory tr =
        sample_trajectory_nm(table, y_minus_state(), cfg.t_max, cfg.seed, 0, opt);
    {
        std::vector<std::string> header{"t"};
        auto eh = element_headers(table.d_s, "rho");
        header.insert(header.end(), eh.begin(), eh.end());
        header.push_back("jump_marker");
        std::vector<std::vector<double>> rows;
        std::size_t nj = 0;
        for (std::size_t g = 0; g < tr.grid.size(); ++g) {
            while (nj < tr.jumps.size() && tr.jumps[nj].t <= tr.grid[g]) {
                std::vector<double> pre{tr.jumps[nj].t};
                append_elements(pre, tr.jumps[nj].pre);
                pre.push_back(1.0);
                rows.push_back(std::move(pre));
                std::vector<double> post{tr.jumps[nj].t};
                append_elements(post, tr.jumps[nj].post);
                post.push_back(2.0);
                rows.push_back(std::move(post));
                ++nj;
            }
            std::vector<double> row{tr.grid[g]};
            append_elements(row, tr.states[g]);
            row.push_back(0.0);
            rows.push_back(std::move(row));
        }
        write_csv((dir / "trajectory.csv").string(), header, rows);
        manifest.add_output(dir / "trajectory.csv");
    }
    {
        std::vector<std::string> header{"t"};
        const int d = table.d_s;
        for (int c = 0; c < d; ++c)
            for (int r = 0; r < d; ++r) {
                const std::string suffix = std::to_string(r) + std::to_string(c);
                header.push_back("mean_re_" + suffix);
                header.push_back("mean_im_" + suffix);
                header.push_back("stderr_re_" + suffix);
                header.push_back("stderr_im_" + suffix);
            }
        const bool overlay = lm.is_tls && lm.tls.symmetric_rates();
        if (overlay) {
            header.push_back("exact_pop");
            header.push_back("exact_imcoh");
        }
        std::vector<std::vector<double>> rows;
        const auto& s = ens.series;
        for (std::size_t g = 0; g < s.t.size(); ++g) {
            std::vector<double> row{s.t[g]};
            for (int c = 0; c < d; ++c)
                for (int r = 0; r < d; ++r) {
                    row.push_back(s.mean[g](r, c).real());
                    row.push_back(s.mean[g](r, c).imag());
                    row.push_back(s.stderr_re[g](r, c));
                    row.push_back(s.stderr_im[g](r, c));
                }
            if (overlay) {
                const CMat exact = analytic_solution(lm.tls, y_minus_state().mat, s.t[g]).mat;
                row.push_back(exact(0, 0).real());
                row.push_back(exact(0, 1).imag());
            }
            rows.push_back(std::move(row));
        }
        write_csv((dir / "ensemble.csv").string(), header, rows);
        manifest.add_output(dir / "ensemble.csv");
    }
    manifest.write(dir);
    return 0;
}

int cmd_master(RunConfig cfg) {
    const fs::path dir = prepare_out_dir(cfg);
    Manifest manifest(cfg, "master");
    auto lm = resolve_model(cfg);
    const int steps = static_cast<int>(std::llround(cfg.t_max / cfg.master_h));

    KernelSpec spec;
    if (lm.is_tls && lm.tls.symmetric_rates()) {
        spec = closed_form_kernels(lm.tls, cfg.master_h, steps);
    } else {
        const auto table =
            reduced_propagator(lm.model, lm.cert, cfg.t_max, cfg.master_h);
        const auto kernel = extract_memory_kernel(table);
        spec.local = kernel.local;
        spec.smooth = kernel.smooth;
        spec.h = kernel.h;
        spec.jump_local = Superoperator::zero(lm.model.d_s);
        auto cls = detail::classify_renewal_probe_only(
            reduced_jump_superop(lm.model, lm.cert), lm.model.d_s, Tolerances::defaults());
        if (cls.first) spec.reset = DensityMatrix{cls.second, true};
    }

    const DensityMatrix rho0 = y_minus_state();
    const StateSeries series = spec.reset && !lm.is_tls
                                   ? integrate_renewal_master(spec, rho0, cfg.t_max)
                                   : integrate_local_nonlocal(spec, rho0, cfg.t_max);

    CMat stationary;
    if (lm.is_tls && lm.tls.symmetric_rates()) {
        stationary = tls_stationary_state(lm.tls).mat;
    } else {
        // long-time surrogate for the entropy reference
        stationary = series.states.back();
    }
    const auto entropy = relative_entropy_series(series.states, stationary);

    std::vector<std::string> header{"t"};
    auto eh = element_headers(lm.model.d_s, "rho");
    header.insert(header.end(), eh.begin(), eh.end());
    header.push_back("relative_entropy");
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < series.t.size(); ++k) {
        std::vector<double> row{series.t[k]};
        append_elements(row, series.states[k]);
        row.push_back(entropy[k]);
        rows.push_back(std::move(row));
    }
    write_csv((dir / "master.csv").string(), header, rows);
    manifest.add_output(dir / "master.csv");
    manifest.write(dir);
    return 0;
}

int cmd_stats(RunConfig cfg) {
    const fs::path dir = prepare_out_dir(cfg);
    Manifest manifest(cfg, "stats");
    auto lm = resolve_model(cfg);
    const auto table =
        reduced_propagator(lm.model, lm.cert, cfg.t_max, table_stride(cfg, lm));
    const auto prop = PropagatorSamples::from_table(table);
    const auto jump = reduced_jump_superop(lm.model, lm.cert);
    const auto exp_ = n_jump_contribution(prop, jump, y_minus_state().mat, 3);

    std::vector<std::string> header{"t", "p0", "p1", "p2", "p3", "sum"};
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < exp_.t.size(); ++k) {
        std::vector<double> row{exp_.t[k]};
        for (int n = 0; n <= 3; ++n) row.push_back(exp_.p_n[std::size_t(n)][k]);
        row.push_back(exp_.sum_p(static_cast<int>(k)));
        rows.push_back(std::move(row));
    }
    write_csv((dir / "jump_statistics.csv").string(), header, rows);
    manifest.add_output(dir / "jump_statistics.csv");
    manifest.write(dir);
    return 0;
}

int cmd_figures(RunConfig cfg, const std::string& which) {
    const fs::path dir = prepare_out_dir(cfg);
    Manifest manifest(cfg, "figures " + which);
    auto lm = resolve_model(cfg);
    if (!lm.is_tls)
        throw ValidationError("figure datasets are defined for the built-in tls model");
    FigureConfig fcfg;
    fcfg.t_max = cfg.t_max;
    fcfg.dt_out = cfg.dt;
    fcfg.table_h = cfg.table_h;
    fcfg.n_traj = cfg.n_traj;
    fcfg.seed = cfg.seed;
    fcfg.workers = cfg.workers;
    fcfg.master_h = cfg.master_h;

    if (which == "fig1") {
        const auto table = build_tls_table(lm.tls, fcfg.t_max, fcfg.table_h);
        const auto data = make_fig1(lm.tls, fcfg, table);
        write_csv((dir / "fig1.csv").string(), data.header, data.rows);
        manifest.add_output(dir / "fig1.csv");
    } else if (which == "fig2") {
        const auto table = build_tls_table(lm.tls, fcfg.t_max, fcfg.table_h);
        EnsembleConfig ecfg;
        ecfg.n_traj = fcfg.n_traj;
        ecfg.base_seed = fcfg.seed;
        ecfg.workers = fcfg.workers;
        ecfg.dt_out = fcfg.dt_out;
        const auto ens = run_ensemble_nm(table, y_minus_state(), fcfg.t_max, ecfg);
        const auto data = make_fig2(lm.tls, fcfg, table, ens);
        write_csv((dir / "fig2_trajectory.csv").string(), data.trajectory.header,
                  data.trajectory.rows);
        write_csv((dir / "fig2_ensemble.csv").string(), data.ensemble.header,
                  data.ensemble.rows);
        manifest.add_output(dir / "fig2_trajectory.csv");
        manifest.add_output(dir / "fig2_ensemble.csv");
    } else if (which == "fig3") {
        const auto data = make_fig3(lm.tls, fcfg);
        write_csv((dir / "fig3.csv").string(), data.entropy.header, data.entropy.rows);
        manifest.add_output(dir / "fig3.csv");
        json backflow;
        auto dump_intervals = [](const std::vector<BackflowInterval>& v) {
            json arr = json::array();
            for (const auto& b : v)
                arr.push_back(json{{"t_begin", b.t_begin}, {"t_end", b.t_end}, {"gain", b.gain}});
            return arr;
        };
        backflow["y_minus"] = dump_intervals(data.backflow_y);
        backflow["x_minus"] = dump_intervals(data.backflow_x);
        manifest.extra("backflow_intervals", backflow);
        std::ofstream rep(dir / "fig3_backflow.json");
        rep << backflow.dump(2) << "\n";
        manifest.add_output(dir / "fig3_backflow.json");
    } else {
        throw ValidationError("unknown figure '" + which + "' (expected fig1|fig2|fig3)");
    }
    manifest.write(dir);
    return 0;
}

// Overlay config-file values onto fields the command line left untouched.
void apply_config_file(RunConfig& cfg, const std::string& path, const CLI::App& app) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open config file " + path);
    json j = json::parse(in);
    auto unset = [&](const char* flag) { return app.count(flag) == 0; };
    if (j.contains("model") && unset("--model")) cfg.model = j["model"].get<std::string>();
    if (j.contains("out") && unset("--out")) cfg.out_dir = j["out"].get<std::string>();
    if (j.contains("seed") && unset("--seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("traj") && unset("--traj")) cfg.n_traj = j["traj"].get<int>();
    if (j.contains("tmax") && unset("--tmax")) cfg.t_max = j["tmax"].get<double>();
    if (j.contains("dt") && unset("--dt")) cfg.dt = j["dt"].get<double>();
    if (j.contains("table_h") && unset("--table-h")) cfg.table_h = j["table_h"].get<double>();
    if (j.contains("master_h") && unset("--master-h"))
        cfg.master_h = j["master_h"].get<double>();
    if (j.contains("workers") && unset("--workers")) cfg.workers = j["workers"].get<int>();
    if (j.contains("gamma") && unset("--gamma")) cfg.gamma = j["gamma"].get<double>();
    if (j.contains("gamma_prime") && unset("--gamma-prime"))
        cfg.gamma_prime = j["gamma_prime"].get<double>();
    if (j.contains("omega") && unset("--omega")) cfg.omega = j["omega"].get<double>();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"non-Markovian quantum jump simulator"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    RunConfig cfg;
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags override)");
    app.add_option("--model", cfg.model, "'tls' or path to a model JSON file");
    app.add_option("--out", cfg.out_dir, "output directory (default $NMQJ_OUT or ./out)");
    app.add_option("--seed", cfg.seed, "base RNG seed");
    app.add_option("--traj", cfg.n_traj, "number of trajectories");
    app.add_option("--tmax", cfg.t_max, "time horizon");
    app.add_option("--dt", cfg.dt, "output grid step");
    app.add_option("--table-h", cfg.table_h, "propagator table stride (0 = auto)");
    app.add_option("--master-h", cfg.master_h, "master-equation integration step");
    app.add_option("--workers", cfg.workers, "worker threads (0 = hardware)");
    app.add_option("--gamma", cfg.gamma, "tls: rate of the ancilla-diagonal channel");
    app.add_option("--gamma-prime", cfg.gamma_prime, "tls: rate of the ancilla-flip channel");
    app.add_option("--omega", cfg.omega, "tls: exchange coupling");

    auto* validate = app.add_subcommand("validate", "factorize and certify the rate tensor");
    auto* propagator = app.add_subcommand("propagator", "build T(t) table and extract kernels");
    auto* trajectories = app.add_subcommand("trajectories", "sample an ensemble of trajectories");
    auto* master = app.add_subcommand("master", "integrate the non-local master equation");
    auto* stats = app.add_subcommand("stats", "n-click probabilities on the grid");
    auto* figures = app.add_subcommand("figures", "demonstration datasets");
    std::string which_figure = "fig1";
    figures->add_option("name", which_figure, "fig1|fig2|fig3")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (!config_path.empty()) apply_config_file(cfg, config_path, app);
        if (validate->parsed()) return cmd_validate(cfg);
        if (propagator->parsed()) return cmd_propagator(cfg);
        if (trajectories->parsed()) return cmd_trajectories(cfg);
        if (master->parsed()) return cmd_master(cfg);
        if (stats->parsed()) return cmd_stats(cfg);
        if (figures->parsed()) return cmd_figures(cfg, which_figure);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
