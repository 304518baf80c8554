// Truncated Fock-space operator algebra for a single bosonic mode, optionally
// tensored with an ancilla qubit. Dense Eigen types templated on the real
// scalar; free functions return expressions or plain matrices and never hold
// hidden state. Conventions: q = (a + a')/sqrt(2), p = i(a' - a)/sqrt(2),
// D(beta) = exp(beta a' - conj(beta) a), qubit basis order |g>, |e> with
// sigma_z|e> = +|e>. Composite indices are qubit-major: row = qubit*N + n.
#pragma once

#include <cmath>
#include <complex>
#include <cstdlib>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "gkpsense/errors.hpp"

namespace gkpsense {

template <typename S>
using Matrix = Eigen::Matrix<std::complex<S>, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vector = Eigen::Matrix<std::complex<S>, Eigen::Dynamic, 1>;
template <typename S>
using RealVector = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RealMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

using Operator = Matrix<double>;
using DensityMatrix = Matrix<double>;
using StateVector = Vector<double>;

struct HilbertConfig {
  int cavity_dim = 140;
  bool with_qubit = false;
  // Acceptable probability leakage past the Fock cutoff for guarded ops.
  double leak_threshold = 1e-8;
};

inline void check_dim(Eigen::Index rows, Eigen::Index cols, Eigen::Index expect,
                      const char* where) {
  if (rows != expect || cols != expect) {
    throw DimensionMismatchError(std::string(where) + ": expected " +
                                 std::to_string(expect) + "x" +
                                 std::to_string(expect) + ", got " +
                                 std::to_string(rows) + "x" +
                                 std::to_string(cols));
  }
}

template <typename S>
void check_dim(const Matrix<S>& m, Eigen::Index expect, const char* where) {
  check_dim(m.rows(), m.cols(), expect, where);
}

template <typename S = double>
Matrix<S> identity(int dim) {
  return Matrix<S>::Identity(dim, dim);
}

template <typename S = double>
Matrix<S> annihilation(int dim) {
  Matrix<S> a = Matrix<S>::Zero(dim, dim);
  for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(static_cast<S>(n));
  return a;
}

template <typename S = double>
Matrix<S> creation(int dim) {
  return annihilation<S>(dim).adjoint();
}

template <typename S = double>
Matrix<S> number_operator(int dim) {
  Matrix<S> n = Matrix<S>::Zero(dim, dim);
  for (int k = 0; k < dim; ++k) n(k, k) = static_cast<S>(k);
  return n;
}

template <typename S = double>
Matrix<S> position(int dim) {
  const Matrix<S> a = annihilation<S>(dim);
  return ((a + a.adjoint()) / std::sqrt(S(2))).eval();
}

template <typename S = double>
Matrix<S> momentum(int dim) {
  const Matrix<S> a = annihilation<S>(dim);
  return (std::complex<S>(0, 1) * (a.adjoint() - a) / std::sqrt(S(2))).eval();
}

// Pauli operators in the |g>, |e> basis, sigma_z|e> = +|e>.
template <typename S = double>
Matrix<S> sigma_x() {
  Matrix<S> m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

template <typename S = double>
Matrix<S> sigma_y() {
  Matrix<S> m(2, 2);
  m << std::complex<S>(0, 0), std::complex<S>(0, -1), std::complex<S>(0, 1),
      std::complex<S>(0, 0);
  return m;
}

template <typename S = double>
Matrix<S> sigma_z() {
  Matrix<S> m(2, 2);
  m << -1, 0, 0, 1;
  return m;
}

// Lowering operator |g><e|.
template <typename S = double>
Matrix<S> sigma_minus() {
  Matrix<S> m = Matrix<S>::Zero(2, 2);
  m(0, 1) = 1;
  return m;
}

template <typename S = double>
Matrix<S> projector_g() {
  Matrix<S> m = Matrix<S>::Zero(2, 2);
  m(0, 0) = 1;
  return m;
}

template <typename S = double>
Matrix<S> projector_e() {
  Matrix<S> m = Matrix<S>::Zero(2, 2);
  m(1, 1) = 1;
  return m;
}

// exp(-i theta sigma_x / 2).
template <typename S = double>
Matrix<S> qubit_rotation_x(S theta) {
  Matrix<S> m(2, 2);
  const S c = std::cos(theta / 2);
  const std::complex<S> ms(0, -std::sin(theta / 2));
  m << c, ms, ms, c;
  return m;
}

template <typename S = double>
Vector<S> qubit_plus() {
  Vector<S> v(2);
  v << std::complex<S>(1, 0), std::complex<S>(1, 0);
  return (v / std::sqrt(S(2))).eval();
}

// Kronecker product, row index = i_a * B.rows() + i_b.
template <typename S>
Matrix<S> tensor(const Matrix<S>& a, const Matrix<S>& b) {
  Matrix<S> out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

template <typename S>
Vector<S> tensor(const Vector<S>& a, const Vector<S>& b) {
  Vector<S> out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

struct CavityOperators {
  Operator a;
  Operator ad;
  Operator n;
  Operator q;
  Operator p;
  Operator id;
};

struct QubitOperators {
  Operator sx;
  Operator sy;
  Operator sz;
  Operator sm;
  Operator pg;
  Operator pe;
};

struct OperatorSet {
  CavityOperators cavity;
  bool with_qubit = false;
  QubitOperators qubit;  // valid only when with_qubit
};

inline OperatorSet make_operators(const HilbertConfig& config) {
  if (config.cavity_dim < 2) {
    throw ConfigError("cavity_dim must be at least 2, got " +
                      std::to_string(config.cavity_dim));
  }
  OperatorSet ops;
  const int d = config.cavity_dim;
  ops.cavity = {annihilation(d), creation(d),  number_operator(d),
                position(d),     momentum(d),  identity<double>(d)};
  ops.with_qubit = config.with_qubit;
  if (config.with_qubit) {
    ops.qubit = {sigma_x(),    sigma_y(),     sigma_z(),
                 sigma_minus(), projector_g(), projector_e()};
  }
  return ops;
}

// exp(i H) for Hermitian H via spectral decomposition.
template <typename S>
Matrix<S> unitary_exp_i(const Matrix<S>& h) {
  Eigen::SelfAdjointEigenSolver<Matrix<S>> es(h);
  if (es.info() != Eigen::Success) {
    throw NumericalError("eigendecomposition failed in unitary_exp_i");
  }
  const auto& lam = es.eigenvalues();
  Vector<S> phases(lam.size());
  for (Eigen::Index k = 0; k < lam.size(); ++k) {
    phases(k) = std::exp(std::complex<S>(0, lam(k)));
  }
  return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

// Probability weight a coherent state of amplitude |beta| carries above the
// cutoff: 1 - exp(-x) sum_{n<dim} x^n/n!, x = |beta|^2. Used as the guard for
// displacement construction; exact for displaced vacuum, a good proxy for the
// low-energy states handled here.
template <typename S = double>
S coherent_tail(S beta_abs, int dim) {
  const S x = beta_abs * beta_abs;
  S term = std::exp(-x);
  S cum = term;
  for (int n = 1; n < dim; ++n) {
    term *= x / static_cast<S>(n);
    cum += term;
  }
  return std::max(S(0), S(1) - cum);
}

template <typename S = double>
Matrix<S> displacement(std::complex<S> beta, int dim,
                       S leak_threshold = S(1e-8)) {
  const S tail = coherent_tail(std::abs(beta), dim);
  if (tail > leak_threshold) {
    throw TruncationError("displacement by |beta|=" +
                          std::to_string(std::abs(beta)) + " leaks " +
                          std::to_string(tail) + " past cutoff " +
                          std::to_string(dim));
  }
  const Matrix<S> ad = creation<S>(dim);
  const Matrix<S> h =
      std::complex<S>(0, -1) * (beta * ad - std::conj(beta) * ad.adjoint());
  return unitary_exp_i<S>(h);
}

inline Operator displacement(std::complex<double> beta,
                             const HilbertConfig& config) {
  return displacement<double>(beta, config.cavity_dim, config.leak_threshold);
}

// Conditional displacement exp[(alpha a' - conj(alpha) a) x sigma_z /
// (2 sqrt(2))] on the qubit-cavity space: the |e> branch is displaced by
// +alpha/(2 sqrt(2)), the |g> branch by -alpha/(2 sqrt(2)).
template <typename S = double>
Matrix<S> controlled_displacement(std::complex<S> alpha, int dim,
                                  S leak_threshold = S(1e-8)) {
  const std::complex<S> half = alpha / (S(2) * std::sqrt(S(2)));
  const Matrix<S> dp = displacement<S>(half, dim, leak_threshold);
  const Matrix<S> dm = displacement<S>(-half, dim, leak_threshold);
  Matrix<S> u = Matrix<S>::Zero(2 * dim, 2 * dim);
  u.block(0, 0, dim, dim) = dm;
  u.block(dim, dim, dim, dim) = dp;
  return u;
}

inline Operator controlled_displacement(std::complex<double> alpha,
                                        const HilbertConfig& config) {
  return controlled_displacement<double>(alpha, config.cavity_dim,
                                         config.leak_threshold);
}

template <typename S = double>
Vector<S> fock_state(int n, int dim) {
  if (n < 0 || n >= dim) {
    throw ConfigError("fock_state index out of range");
  }
  Vector<S> v = Vector<S>::Zero(dim);
  v(n) = 1;
  return v;
}

template <typename S = double>
Vector<S> vacuum_state(int dim) {
  return fock_state<S>(0, dim);
}

template <typename S = double>
Vector<S> coherent_state(std::complex<S> beta, int dim) {
  Vector<S> v(dim);
  v(0) = std::exp(-std::norm(beta) / S(2));
  for (int n = 1; n < dim; ++n) {
    v(n) = v(n - 1) * beta / std::sqrt(static_cast<S>(n));
  }
  return v;
}

template <typename S>
Matrix<S> density_from_state(const Vector<S>& psi) {
  return psi * psi.adjoint();
}

template <typename S>
std::complex<S> expectation_value(const Matrix<S>& rho, const Matrix<S>& op) {
  check_dim(op.rows(), op.cols(), rho.rows(), "expectation_value");
  return (op * rho).trace();
}

template <typename S>
S purity(const Matrix<S>& rho) {
  return (rho * rho).trace().real();
}

template <typename S>
S mean_photon_number(const Matrix<S>& rho) {
  S nbar = 0;
  for (Eigen::Index k = 0; k < rho.rows(); ++k) {
    nbar += static_cast<S>(k) * rho(k, k).real();
  }
  return nbar;
}

// Population within the top `levels` Fock levels; a cheap leakage monitor.
template <typename S>
S edge_population(const Matrix<S>& rho, int levels = 5) {
  S w = 0;
  const Eigen::Index d = rho.rows();
  for (Eigen::Index k = std::max<Eigen::Index>(0, d - levels); k < d; ++k) {
    w += rho(k, k).real();
  }
  return w;
}

// Uhlmann fidelity in amplitude convention: tr sqrt(sqrt(rho) sigma
// sqrt(rho)). Equals |<psi|phi>| for pure states.
template <typename S>
S fidelity(const Matrix<S>& rho, const Matrix<S>& sigma) {
  check_dim(sigma.rows(), sigma.cols(), rho.rows(), "fidelity");
  Eigen::SelfAdjointEigenSolver<Matrix<S>> es(rho);
  if (es.info() != Eigen::Success) {
    throw NumericalError("eigendecomposition failed in fidelity");
  }
  RealVector<S> lam = es.eigenvalues();
  for (Eigen::Index k = 0; k < lam.size(); ++k) {
    lam(k) = lam(k) > S(0) ? std::sqrt(lam(k)) : S(0);
  }
  const Matrix<S> sqrt_rho = es.eigenvectors() *
                             lam.template cast<std::complex<S>>().asDiagonal() *
                             es.eigenvectors().adjoint();
  Eigen::SelfAdjointEigenSolver<Matrix<S>> es2(sqrt_rho * sigma * sqrt_rho);
  if (es2.info() != Eigen::Success) {
    throw NumericalError("eigendecomposition failed in fidelity");
  }
  S f = 0;
  for (Eigen::Index k = 0; k < es2.eigenvalues().size(); ++k) {
    const S v = es2.eigenvalues()(k);
    if (v > S(0)) f += std::sqrt(v);
  }
  return f;
}

// Uhlmann fidelity against one fixed reference state, with sqrt(ref)
// precomputed so each call costs a single eigensolve.
class FidelityReference {
 public:
  explicit FidelityReference(const DensityMatrix& reference) {
    Eigen::SelfAdjointEigenSolver<Operator> es(reference);
    if (es.info() != Eigen::Success) {
      throw NumericalError("eigendecomposition failed in FidelityReference");
    }
    RealVector<double> lam = es.eigenvalues();
    for (Eigen::Index k = 0; k < lam.size(); ++k) {
      lam(k) = lam(k) > 0.0 ? std::sqrt(lam(k)) : 0.0;
    }
    sqrt_ref_ = es.eigenvectors() *
                lam.cast<std::complex<double>>().asDiagonal() *
                es.eigenvectors().adjoint();
  }

  double operator()(const DensityMatrix& rho) const {
    check_dim(rho.rows(), rho.cols(), sqrt_ref_.rows(), "FidelityReference");
    Eigen::SelfAdjointEigenSolver<Operator> es(sqrt_ref_ * rho * sqrt_ref_);
    if (es.info() != Eigen::Success) {
      throw NumericalError("eigendecomposition failed in FidelityReference");
    }
    double f = 0.0;
    for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
      const double v = es.eigenvalues()(k);
      if (v > 0.0) f += std::sqrt(v);
    }
    return f;
  }

 private:
  Operator sqrt_ref_;
};

// sqrt(<psi|rho|psi>), the Uhlmann fidelity against a pure reference.
template <typename S>
S fidelity_pure(const Vector<S>& psi, const Matrix<S>& rho) {
  const S v = (psi.adjoint() * rho * psi)(0, 0).real();
  return v > S(0) ? std::sqrt(v) : S(0);
}

// Largest-eigenvalue pure component of a density matrix.
template <typename S>
Vector<S> principal_component(const Matrix<S>& rho) {
  Eigen::SelfAdjointEigenSolver<Matrix<S>> es(rho);
  if (es.info() != Eigen::Success) {
    throw NumericalError("eigendecomposition failed in principal_component");
  }
  return es.eigenvectors().col(rho.rows() - 1);
}

inline void assert_physical_state(const DensityMatrix& rho, double tol = 1e-8,
                                  const char* where = "state") {
  const double tr = rho.trace().real();
  if (std::abs(tr - 1.0) > tol) {
    throw NumericalError(std::string(where) + ": trace drifted to " +
                         std::to_string(tr));
  }
  if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > tol) {
    throw NumericalError(std::string(where) + ": state not Hermitian");
  }
}

// Wigner function W(q, p) = (1/pi) tr[rho D(alpha) P D'(alpha)] with
// alpha = (q + i p)/sqrt(2) and P the photon-number parity, normalized so
// that the integral over dq dp is 1 (vacuum peaks at 1/pi).  Evaluation
// happens in a padded space (default: twice the state dimension) because
// the displacement is exponentiated from the truncated position operator;
// without headroom, samples far from the origin reflect off the Fock
// cutoff and the parity sum picks up sign errors.
class WignerEvaluator {
 public:
  explicit WignerEvaluator(const DensityMatrix& rho, int pad = -1) {
    const int dim = static_cast<int>(rho.rows());
    const int padded = dim + (pad < 0 ? dim : pad);
    rho_ = DensityMatrix::Zero(padded, padded);
    rho_.topLeftCorner(dim, dim) = rho;
    Eigen::SelfAdjointEigenSolver<Operator> es(position(padded));
    if (es.info() != Eigen::Success) {
      throw NumericalError("position eigendecomposition failed");
    }
    qvals_ = es.eigenvalues();
    qvecs_ = es.eigenvectors();
    parity_ = RealVector<double>(padded);
    for (int k = 0; k < padded; ++k) parity_(k) = (k % 2 == 0) ? 1.0 : -1.0;
  }

  double operator()(double q, double p) const {
    const std::complex<double> alpha(q / std::sqrt(2.0), p / std::sqrt(2.0));
    const int dim = static_cast<int>(rho_.rows());
    // D(alpha) = R(pi/2 - theta) exp(i sqrt(2) |alpha| qhat) R'(pi/2 - theta)
    // with R(phi) = exp(-i phi n): rotate the real displacement into place.
    const double r = std::abs(alpha);
    const double theta = std::arg(alpha);
    Vector<double> rot(dim), phase(dim);
    for (int k = 0; k < dim; ++k) {
      rot(k) = std::exp(std::complex<double>(0, -(M_PI / 2 - theta) * k));
      phase(k) = std::exp(std::complex<double>(0, std::sqrt(2.0) * r * qvals_(k)));
    }
    const Operator w = rot.asDiagonal() * qvecs_;
    const Operator d = w * phase.asDiagonal() * w.adjoint();
    // tr[rho D P D'] = sum_k parity_k <k|D' rho D|k>.
    const Operator m = d.adjoint() * rho_ * d;
    double val = 0;
    for (int k = 0; k < dim; ++k) val += parity_(k) * m(k, k).real();
    return val / M_PI;
  }

 private:
  DensityMatrix rho_;
  RealVector<double> qvals_;
  Operator qvecs_;
  RealVector<double> parity_;
};

struct WignerSample {
  double q;
  double p;
  double w;
};

inline std::vector<WignerSample> wigner(const DensityMatrix& rho,
                                        const std::vector<double>& qs,
                                        const std::vector<double>& ps) {
  WignerEvaluator eval(rho);
  std::vector<WignerSample> out;
  out.reserve(qs.size() * ps.size());
  for (double p : ps) {
    for (double q : qs) {
      out.push_back({q, p, eval(q, p)});
    }
  }
  return out;
}

}  // namespace gkpsense
