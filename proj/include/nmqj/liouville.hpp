#pragma once

// Dense complex linear algebra on Liouville space: density matrices,
// superoperators acting on column-vectorized matrices, and the standard
// generator building blocks (Lindblad dissipators, Hamiltonian commutators).
//
// Vectorization convention: column stacking, vec(A X B^dag) = (conj(B) (x) A) vec(X).

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmqj {

using Complex = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical tolerances used across the library. All defaults are centralized
// here; tests and validators reference these values rather than local copies.
struct Tolerances {
    double hermiticity = 1e-12;       // max |A - A^dag| entrywise
    double trace_unit = 1e-10;        // |Tr(rho) - 1| for normalized states
    double trace_preserving = 1e-10;  // generator trace-annihilation residual
    double eigenvalue_floor = -1e-8;  // smallest admissible state eigenvalue
    double expm_semigroup = 1e-9;     // exp((s+t)G) vs exp(sG)exp(tG)
    double factor_residual = 1e-9;    // relative rate-tensor factorization residual
    double separability = 1e-9;       // post-jump product-state residual
    double jump_floor = 1e-14;        // Tr[J rho] threshold for a dark state
    double renewal_probe = 1e-9;      // behavioral renewal check on probe states
    double survival_slack = 1e-9;     // allowed non-monotonicity of P0 samples
    double root_p0 = 1e-10;           // |P0 - r| target in jump-time inversion
    double log_floor = 1e-14;         // eigenvalue clamp inside matrix logarithms
    double dp_warn = 0.1;             // per-step jump probability warning level

    static const Tolerances& defaults() {
        static const Tolerances tol{};
        return tol;
    }
};

inline bool is_hermitian(const CMat& a, double tol) {
    return (a - a.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

// Complex Hermitian matrix on a finite Hilbert space. `normalized` marks
// unit-trace states; unnormalized conditional states carry normalized=false.
struct DensityMatrix {
    CMat mat;
    bool normalized = true;

    int dim() const { return static_cast<int>(mat.rows()); }
    double trace() const { return mat.trace().real(); }

    static DensityMatrix checked(CMat m, bool normalized = true,
                                 const Tolerances& tol = Tolerances::defaults()) {
        if (m.rows() != m.cols()) throw DimensionError("density matrix must be square");
        if (!is_hermitian(m, tol.hermiticity))
            throw ValidationError("density matrix is not Hermitian");
        if (normalized && std::abs(m.trace() - Complex(1.0, 0.0)) > tol.trace_unit)
            throw ValidationError("normalized density matrix must have unit trace");
        return DensityMatrix{std::move(m), normalized};
    }

    static DensityMatrix pure(const CVec& psi) {
        CVec n = psi / psi.norm();
        return DensityMatrix{n * n.adjoint(), true};
    }

    static DensityMatrix maximally_mixed(int d) {
        return DensityMatrix{CMat::Identity(d, d) / static_cast<double>(d), true};
    }
};

inline CMat kron(const CMat& a, const CMat& b) {
    CMat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

inline CVec vectorize(const CMat& m) {
    return Eigen::Map<const CVec>(m.data(), m.size());
}

inline CMat devectorize(const CVec& v) {
    const auto n = v.size();
    const auto d = static_cast<Eigen::Index>(std::llround(std::sqrt(double(n))));
    if (d * d != n) throw DimensionError("vector length is not a perfect square");
    return Eigen::Map<const CMat>(v.data(), d, d);
}

// Linear map on vectorized matrices over a d-dimensional Hilbert space.
struct Superoperator {
    int hdim = 0;
    CMat mat;  // d^2 x d^2

    static Superoperator zero(int d) {
        return {d, CMat::Zero(static_cast<Eigen::Index>(d) * d, static_cast<Eigen::Index>(d) * d)};
    }
    static Superoperator identity(int d) {
        return {d, CMat::Identity(static_cast<Eigen::Index>(d) * d, static_cast<Eigen::Index>(d) * d)};
    }

    CMat apply(const CMat& rho) const { return devectorize(mat * vectorize(rho)); }

    Superoperator& operator+=(const Superoperator& o) {
        check_same(o);
        mat += o.mat;
        return *this;
    }
    Superoperator& operator-=(const Superoperator& o) {
        check_same(o);
        mat -= o.mat;
        return *this;
    }
    Superoperator& operator*=(double s) {
        mat *= s;
        return *this;
    }
    friend Superoperator operator+(Superoperator a, const Superoperator& b) { return a += b; }
    friend Superoperator operator-(Superoperator a, const Superoperator& b) { return a -= b; }
    friend Superoperator operator*(double s, Superoperator a) { return a *= s; }
    // composition
    friend Superoperator operator*(const Superoperator& a, const Superoperator& b) {
        a.check_same(b);
        return {a.hdim, a.mat * b.mat};
    }

private:
    void check_same(const Superoperator& o) const {
        if (hdim != o.hdim) throw DimensionError("superoperator dimension mismatch");
    }
};

// rho -> A rho B^dag in the column-stacking convention.
inline Superoperator sandwich(const CMat& a, const CMat& b) {
    if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows())
        throw DimensionError("sandwich operands must be square and of equal dimension");
    return {static_cast<int>(a.rows()), kron(b.conjugate(), a)};
}

// Lindblad channel C[V] rho = V rho V^dag - 1/2 {V^dag V, rho}.
inline Superoperator dissipator(const CMat& v) {
    if (v.rows() != v.cols()) throw DimensionError("dissipator operator must be square");
    const auto d = v.rows();
    const CMat id = CMat::Identity(d, d);
    const CMat vdv = v.adjoint() * v;
    CMat m = kron(v.conjugate(), v);
    m -= 0.5 * (kron(id, vdv) + kron(vdv.transpose(), id));
    return {static_cast<int>(d), std::move(m)};
}

// rho -> -i [H, rho]. H carries units of rate (hbar absorbed).
inline Superoperator hamiltonian_superop(const CMat& h,
                                         const Tolerances& tol = Tolerances::defaults()) {
    if (h.rows() != h.cols()) throw DimensionError("Hamiltonian must be square");
    if (!is_hermitian(h, tol.hermiticity))
        throw ValidationError("Hamiltonian is not Hermitian");
    const auto d = h.rows();
    const CMat id = CMat::Identity(d, d);
    CMat m = Complex(0, -1) * (kron(id, h) - kron(h.transpose(), id));
    return {static_cast<int>(d), std::move(m)};
}

// Tr_a over the second factor of a (d_s*d_a)-dimensional bipartite state,
// index convention kron(system, ancilla).
inline CMat partial_trace_ancilla(const CMat& rho_sa, int d_s, int d_a) {
    if (rho_sa.rows() != rho_sa.cols() ||
        rho_sa.rows() != static_cast<Eigen::Index>(d_s) * d_a)
        throw DimensionError("bipartite state dimension does not match d_s*d_a");
    CMat out = CMat::Zero(d_s, d_s);
    for (int i = 0; i < d_s; ++i)
        for (int j = 0; j < d_s; ++j)
            for (int k = 0; k < d_a; ++k)
                out(i, j) += rho_sa(i * d_a + k, j * d_a + k);
    return out;
}

// Linear map vec(rho_sa) -> vec(Tr_a rho_sa).
inline CMat partial_trace_map(int d_s, int d_a) {
    const Eigen::Index big = static_cast<Eigen::Index>(d_s) * d_a;
    CMat p = CMat::Zero(static_cast<Eigen::Index>(d_s) * d_s, big * big);
    for (int i = 0; i < d_s; ++i)
        for (int j = 0; j < d_s; ++j)
            for (int k = 0; k < d_a; ++k)
                p(static_cast<Eigen::Index>(j) * d_s + i,
                  (static_cast<Eigen::Index>(j) * d_a + k) * big + i * d_a + k) = 1.0;
    return p;
}

// Linear map vec(rho_s) -> vec(rho_s (x) rho_a) for a fixed ancilla factor.
inline CMat embed_with_ancilla_map(int d_s, const CMat& rho_a) {
    const int d_a = static_cast<int>(rho_a.rows());
    const Eigen::Index big = static_cast<Eigen::Index>(d_s) * d_a;
    CMat l(big * big, static_cast<Eigen::Index>(d_s) * d_s);
    CMat e = CMat::Zero(d_s, d_s);
    for (int i = 0; i < d_s; ++i)
        for (int j = 0; j < d_s; ++j) {
            e(i, j) = 1.0;
            l.col(static_cast<Eigen::Index>(j) * d_s + i) = vectorize(kron(e, rho_a));
            e(i, j) = 0.0;
        }
    return l;
}

// vec(I_d); Tr[devec(v)] = trace_vector(d).dot(v).
inline CVec trace_vector(int d) {
    return vectorize(CMat::Identity(d, d));
}

// Matrix exponential (scaling-and-squaring with Pade approximant).
inline CMat expm(const CMat& m) {
    return m.exp();
}

inline Superoperator expm(const Superoperator& s, double t) {
    return {s.hdim, CMat(t * s.mat).exp()};
}

inline CMat basis_matrix(int d, int i, int j) {
    CMat e = CMat::Zero(d, d);
    e(i, j) = 1.0;
    return e;
}

}  // namespace nmqj
