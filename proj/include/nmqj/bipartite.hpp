#pragma once

// Bipartite system+ancilla models: monitored channels V_a (x) |a_l><a_m| with
// a rate tensor gamma[a][l][m], the rate-factorization symmetry check that
// guarantees a closed reduced description, and the bipartite split / jump map.

#include "nmqj/jump_process.hpp"
#include "nmqj/liouville.hpp"

#include <numeric>
#include <optional>
#include <sstream>

namespace nmqj {

class NotFactorizableError : public std::runtime_error {
public:
    explicit NotFactorizableError(const std::string& msg, double residual)
        : std::runtime_error(msg), residual(residual) {}
    double residual;
};

class SeparabilityViolationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SystemOp {
    std::string label;
    CMat op;  // V_a on the system space
};

// gamma[alpha][l][m] >= 0, dimensions n_alpha x d_a x d_a.
struct RateTensor {
    int n_alpha = 0;
    int d_a = 0;
    std::vector<double> g;  // row-major [alpha][l][m]

    static RateTensor zeros(int n_alpha, int d_a) {
        return {n_alpha, d_a, std::vector<double>(std::size_t(n_alpha) * d_a * d_a, 0.0)};
    }
    double& at(int a, int l, int m) { return g[(std::size_t(a) * d_a + l) * d_a + m]; }
    double at(int a, int l, int m) const { return g[(std::size_t(a) * d_a + l) * d_a + m]; }

    void validate() const {
        if (static_cast<int>(g.size()) != n_alpha * d_a * d_a)
            throw DimensionError("rate tensor shape does not match n_alpha x d_a x d_a");
        for (double v : g)
            if (!(v >= 0.0) || !std::isfinite(v))
                throw ValidationError("rate tensor entries must be finite and non-negative");
    }
};

struct BipartiteModel {
    int d_s = 0;
    int d_a = 0;
    Superoperator l0;  // unmonitored bipartite generator on d_s*d_a
    std::vector<SystemOp> system_ops;
    std::vector<std::string> ancilla_labels;
    RateTensor rates;

    int dim() const { return d_s * d_a; }

    CMat monitored_op(int alpha, int l, int m) const {
        return kron(system_ops[std::size_t(alpha)].op, basis_matrix(d_a, l, m));
    }
};

inline void validate_model_shape(const BipartiteModel& model) {
    if (model.d_s < 1 || model.d_a < 1) throw DimensionError("dimensions must be positive");
    if (model.l0.hdim != model.dim())
        throw DimensionError("L0 dimension does not match d_s*d_a");
    if (model.rates.n_alpha != static_cast<int>(model.system_ops.size()) ||
        model.rates.d_a != model.d_a)
        throw DimensionError("rate tensor shape does not match channels/ancilla");
    for (const auto& so : model.system_ops)
        if (so.op.rows() != model.d_s || so.op.cols() != model.d_s)
            throw DimensionError("system operator dimension mismatch");
    model.rates.validate();
}

enum class SymmetryMode { Auto, Renewal, NonRenewal };

// Result of factorizing gamma[alpha][l][m] = gamma_alpha c_l d_m with
// sum_l c_l = 1. `kind` is NonRenewal when the certificate supports the
// state-dependent reset route (d_m constant); Renewal certificates require
// renewal-structured system channels.
struct SymmetryCertificate {
    enum class Kind { Renewal, NonRenewal } kind = Kind::Renewal;
    std::vector<double> gamma_alpha;  // effective rate per system channel
    std::vector<double> c;            // ancilla reset weights, sum to 1
    std::vector<double> d;            // source weights (all 1 for NonRenewal kind)
    CMat reset_ancilla;               // diag(c)
    double residual = 0.0;            // relative reconstruction residual
    bool d_constant = false;

    CMat rho_bar_a() const { return reset_ancilla; }
};

struct SymmetryValidation {
    enum class Status { Ok, NotFactorizable, ClassicalCorrelatedReset } status;
    std::optional<SymmetryCertificate> certificate;
    double residual = 0.0;
    std::string detail;

    const SymmetryCertificate& require(const char* what = "rate tensor") const {
        if (status == Status::Ok) return *certificate;
        std::ostringstream os;
        os << what << ": "
           << (status == Status::NotFactorizable
                   ? "no rank-1 factorization of the rate tensor"
                   : "only the weaker classically-correlated reset condition holds")
           << " (residual " << residual << "). " << detail;
        throw NotFactorizableError(os.str(), residual);
    }
};

namespace detail {

// Best rank-1 fit M ~ u v^T via SVD. For entrywise non-negative M the
// dominant singular vectors are sign-consistent; flip so the largest entry
// of u is positive.
inline double rank1_fit(const Eigen::MatrixXd& m, Eigen::VectorXd& u, Eigen::VectorXd& v) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double s0 = svd.singularValues()(0);
    u = svd.matrixU().col(0) * s0;
    v = svd.matrixV().col(0);
    Eigen::Index imax = 0;
    u.cwiseAbs().maxCoeff(&imax);
    if (u(imax) < 0) { u = -u; v = -v; }
    return (m - u * v.transpose()).norm();
}

// Groups of channel indices whose system operators are proportional; rates
// from one group act through a single physical transition.
inline std::vector<std::vector<int>> proportional_groups(const std::vector<SystemOp>& ops) {
    std::vector<std::vector<int>> groups;
    std::vector<CMat> reps;
    for (int a = 0; a < static_cast<int>(ops.size()); ++a) {
        const CMat& v = ops[std::size_t(a)].op;
        const double nv = v.norm();
        bool placed = false;
        for (std::size_t gidx = 0; gidx < reps.size(); ++gidx) {
            const CMat& r = reps[gidx];
            const Complex ip = (r.adjoint() * v).trace();
            // |<r,v>| == |r||v| iff proportional
            if (std::abs(std::abs(ip) - r.norm() * nv) <= 1e-12 * r.norm() * nv) {
                groups[gidx].push_back(a);
                placed = true;
                break;
            }
        }
        if (!placed) {
            groups.push_back({a});
            reps.push_back(v);
        }
    }
    return groups;
}

}  // namespace detail

// Factorize the rate tensor as gamma[alpha][l][m] = gamma_alpha c_l d_m.
// Channels whose system operators are proportional are merged before the fit
// (their (l,m) rate matrices add on the same transition). `system_ops` is
// optional; without it every alpha is its own group.
inline SymmetryValidation validate_symmetry(const RateTensor& rates,
                                            SymmetryMode mode = SymmetryMode::Auto,
                                            const std::vector<SystemOp>* system_ops = nullptr,
                                            const Tolerances& tol = Tolerances::defaults()) {
    rates.validate();
    const int da = rates.d_a;
    std::vector<std::vector<int>> groups;
    if (system_ops) {
        groups = detail::proportional_groups(*system_ops);
    } else {
        for (int a = 0; a < rates.n_alpha; ++a) groups.push_back({a});
    }
    const int ng = static_cast<int>(groups.size());

    // merged per-group rate matrices G_g[l][m]
    std::vector<Eigen::MatrixXd> gm(std::size_t(ng), Eigen::MatrixXd::Zero(da, da));
    double scale = 0.0;
    for (int gidx = 0; gidx < ng; ++gidx) {
        for (int a : groups[std::size_t(gidx)]) {
            // members with V_a = z V_rep act through the same transition with
            // strength scaled by |z|^2
            double z2 = 1.0;
            if (system_ops) {
                const CMat& rep = (*system_ops)[std::size_t(groups[std::size_t(gidx)].front())].op;
                const CMat& v = (*system_ops)[std::size_t(a)].op;
                z2 = v.squaredNorm() / rep.squaredNorm();
            }
            for (int l = 0; l < da; ++l)
                for (int m = 0; m < da; ++m)
                    gm[std::size_t(gidx)](l, m) += z2 * rates.at(a, l, m);
        }
        scale = std::max(scale, gm[std::size_t(gidx)].cwiseAbs().maxCoeff());
    }
    if (scale <= 0.0) {
        SymmetryValidation out{SymmetryValidation::Status::Ok, SymmetryCertificate{}, 0.0,
                               "all rates vanish"};
        out.certificate->kind = SymmetryCertificate::Kind::NonRenewal;
        out.certificate->gamma_alpha.assign(std::size_t(rates.n_alpha), 0.0);
        out.certificate->c.assign(std::size_t(da), 1.0 / da);
        out.certificate->d.assign(std::size_t(da), 1.0);
        out.certificate->reset_ancilla = CMat::Identity(da, da) / double(da);
        out.certificate->d_constant = true;
        return out;
    }

    // Stack groups into the matrix B[(g,l), m] = gamma_g c_l d_m and fit twice.
    Eigen::MatrixXd b(ng * da, da);
    for (int gidx = 0; gidx < ng; ++gidx) b.middleRows(gidx * da, da) = gm[std::size_t(gidx)];
    Eigen::VectorXd gl, d;
    const double res1 = detail::rank1_fit(b, gl, d);
    Eigen::MatrixXd glm(ng, da);
    for (int gidx = 0; gidx < ng; ++gidx) glm.row(gidx) = gl.segment(gidx * da, da).transpose();
    Eigen::VectorXd gg, c;
    const double res2 = detail::rank1_fit(glm, gg, c);

    // reconstruction residual (relative, Frobenius over the stacked matrix)
    Eigen::MatrixXd recon(ng * da, da);
    for (int gidx = 0; gidx < ng; ++gidx)
        recon.middleRows(gidx * da, da) = gg(gidx) * c * d.transpose();
    const double rel = (b - recon).norm() / b.norm();
    (void)res1;
    (void)res2;

    if (rel > tol.factor_residual) {
        // Distinguish the weaker classically-correlated case: per-group rank-1
        // with a shared d but group-dependent ancilla profiles c^(g).
        bool classical = true;
        Eigen::VectorXd d_shared;
        for (int gidx = 0; gidx < ng && classical; ++gidx) {
            Eigen::VectorXd u_g, v_g;
            const double r_g = detail::rank1_fit(gm[std::size_t(gidx)], u_g, v_g);
            if (r_g > tol.factor_residual * std::max(1.0, gm[std::size_t(gidx)].norm()))
                classical = false;
            else if (d_shared.size() == 0)
                d_shared = v_g;
            else if ((d_shared - v_g).cwiseAbs().maxCoeff() > 1e-8 &&
                     (d_shared + v_g).cwiseAbs().maxCoeff() > 1e-8)
                classical = false;
        }
        SymmetryValidation out;
        out.status = classical ? SymmetryValidation::Status::ClassicalCorrelatedReset
                               : SymmetryValidation::Status::NotFactorizable;
        out.residual = rel;
        out.detail = classical
                         ? "per-channel ancilla reset states differ; the post-click state is "
                           "only classically correlated and is rejected for simulation"
                         : "rate tensor admits no gamma_alpha c_l d_m factorization";
        return out;
    }

    // Normalize: sum_l c_l = 1 (absorbed into gamma); d scaled so max entry 1.
    const double csum = c.sum();
    if (csum <= 0) {
        SymmetryValidation out;
        out.status = SymmetryValidation::Status::NotFactorizable;
        out.residual = 1.0;
        out.detail = "degenerate ancilla weight vector";
        return out;
    }
    c /= csum;
    gg *= csum;
    const double dmax = d.cwiseAbs().maxCoeff();
    d /= dmax;
    gg *= dmax;
    for (int l = 0; l < da; ++l) c(l) = std::max(0.0, c(l));
    c /= c.sum();

    bool d_const = true;
    for (int m = 0; m < da; ++m)
        if (std::abs(d(m) - d(0)) > 1e-9) d_const = false;

    if (mode == SymmetryMode::NonRenewal && !d_const) {
        SymmetryValidation out;
        out.status = SymmetryValidation::Status::NotFactorizable;
        out.residual = rel;
        out.detail = "non-renewal certificates require constant d_m";
        return out;
    }

    SymmetryCertificate cert;
    cert.kind = d_const ? SymmetryCertificate::Kind::NonRenewal
                        : SymmetryCertificate::Kind::Renewal;
    if (mode == SymmetryMode::Renewal) cert.kind = SymmetryCertificate::Kind::Renewal;
    cert.c.assign(c.data(), c.data() + da);
    cert.d.assign(d.data(), d.data() + da);
    cert.d_constant = d_const;
    if (d_const && std::abs(d(0) - 1.0) > 0) {
        // renormalize rates so d_m == 1 exactly
        for (int m = 0; m < da; ++m) cert.d[std::size_t(m)] = 1.0;
        gg *= d(0);
    }
    cert.reset_ancilla = CMat::Zero(da, da);
    for (int l = 0; l < da; ++l) cert.reset_ancilla(l, l) = cert.c[std::size_t(l)];
    cert.residual = rel;

    // Effective reduced measurement rate per original channel:
    // gamma_eff_a = sum_{l,m} gamma[a][l][m] c_m  (the click intensity weight
    // seen from the reset ancilla state).
    cert.gamma_alpha.assign(std::size_t(rates.n_alpha), 0.0);
    for (int a = 0; a < rates.n_alpha; ++a) {
        double acc = 0.0;
        for (int l = 0; l < da; ++l)
            for (int m = 0; m < da; ++m) acc += rates.at(a, l, m) * cert.c[std::size_t(m)];
        cert.gamma_alpha[std::size_t(a)] = acc;
    }

    SymmetryValidation out;
    out.status = SymmetryValidation::Status::Ok;
    out.certificate = std::move(cert);
    out.residual = rel;
    return out;
}

inline SymmetryValidation validate_symmetry(const BipartiteModel& model,
                                            SymmetryMode mode = SymmetryMode::Auto,
                                            const Tolerances& tol = Tolerances::defaults()) {
    validate_model_shape(model);
    return validate_symmetry(model.rates, mode, &model.system_ops, tol);
}

// Bipartite generator split: J = sum gamma_alm V_alm . V_alm^dag, D the rest.
inline SplitGenerator bipartite_split(const BipartiteModel& model) {
    validate_model_shape(model);
    const int d = model.dim();
    Superoperator j = Superoperator::zero(d);
    Superoperator anticomm = Superoperator::zero(d);
    const CMat id = CMat::Identity(d, d);
    for (int a = 0; a < model.rates.n_alpha; ++a)
        for (int l = 0; l < model.d_a; ++l)
            for (int m = 0; m < model.d_a; ++m) {
                const double g = model.rates.at(a, l, m);
                if (g == 0.0) continue;
                const CMat v = model.monitored_op(a, l, m);
                j += g * sandwich(v, v);
                const CMat vdv = v.adjoint() * v;
                anticomm += g * Superoperator{d, 0.5 * (kron(id, vdv) + kron(vdv.transpose(), id))};
            }
    return {model.l0 - anticomm, j};
}

// Reduced system jump superoperator J_s = sum_a gamma_eff_a V_a . V_a^dag.
inline Superoperator reduced_jump_superop(const BipartiteModel& model,
                                          const SymmetryCertificate& cert) {
    Superoperator j = Superoperator::zero(model.d_s);
    for (int a = 0; a < static_cast<int>(model.system_ops.size()); ++a)
        j += cert.gamma_alpha[std::size_t(a)] *
             sandwich(model.system_ops[std::size_t(a)].op, model.system_ops[std::size_t(a)].op);
    return j;
}

// Bipartite reset: applies the bipartite jump map and checks the separable
// form M[rho_s] (x) rho_bar_a the certificate guarantees. Returns the system
// factor and the separability verdict.
inline std::pair<DensityMatrix, bool> bipartite_jump_map(
    const BipartiteModel& model, const SymmetryCertificate& cert, const CMat& rho_sa,
    const Tolerances& tol = Tolerances::defaults()) {
    const SplitGenerator s = bipartite_split(model);
    CMat num = s.jump.apply(rho_sa);
    const double tr = num.trace().real();
    if (tr <= tol.jump_floor)
        throw DarkStateError("no detectable transition from this bipartite state");
    const CMat post = num / tr;
    CMat sys = partial_trace_ancilla(post, model.d_s, model.d_a);
    const CMat product = kron(sys, cert.rho_bar_a());
    const double dev = (post - product).cwiseAbs().maxCoeff();
    if (dev > tol.separability)
        throw SeparabilityViolationError(
            "post-click bipartite state is not M[rho_s] (x) rho_bar_a (deviation " +
            std::to_string(dev) + "); certificate and rate tensor are inconsistent");
    return {DensityMatrix{std::move(sys), true}, true};
}

}  // namespace nmqj
