// Open-system model for the big conditional displacement: Lindblad
// evolution under qubit/cavity relaxation and dephasing, assembly of noisy
// sBs subrounds and rounds, noisy steady-state preparation, and the
// zeta-parameterized qubit-relaxation toy model.
//
// Only the big conditional displacement is noisy; small conditional
// displacements, qubit rotations, measurement, and reset are ideal.  The
// master equation is integrated with fixed-step RK4 on structured O(N^2)
// block kernels (the Hamiltonian is bidiagonal in the Fock basis and every
// dissipator acts entrywise or by index shifts).  When every channel is
// disabled the exact unitary is used instead, so the noiseless limit
// reproduces the closed-system engine to rounding accuracy.
//
// Units: lifetimes in microseconds, gate time in nanoseconds; everything is
// converted to microseconds internally.
#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "gkpsense/errors.hpp"
#include "gkpsense/fock.hpp"
#include "gkpsense/sbs.hpp"

namespace gkpsense {

enum class NoiseChannel {
  qubit_relax,
  qubit_dephase,
  cavity_relax,
  cavity_dephase
};

struct NoiseParams {
  double t1_qubit = 280.0;   // us
  double t2_qubit = 240.0;   // us
  double t1_cavity = 610.0;  // us
  double t2_cavity = 980.0;  // us
  double eta = 1.0;          // multiplies every lifetime
  double t_cd = 500.0;       // ns
  bool qubit_relax = true;
  bool qubit_dephase = true;
  bool cavity_relax = true;
  bool cavity_dephase = true;
  int integrator_steps = 100;

  bool any_enabled() const {
    return qubit_relax || qubit_dephase || cavity_relax || cavity_dephase;
  }

  double t_cd_us() const { return t_cd * 1e-3; }

  static NoiseParams disabled() {
    NoiseParams n;
    n.qubit_relax = n.qubit_dephase = n.cavity_relax = n.cavity_dephase =
        false;
    return n;
  }

  static NoiseParams only(NoiseChannel channel) {
    NoiseParams n = disabled();
    switch (channel) {
      case NoiseChannel::qubit_relax: n.qubit_relax = true; break;
      case NoiseChannel::qubit_dephase: n.qubit_dephase = true; break;
      case NoiseChannel::cavity_relax: n.cavity_relax = true; break;
      case NoiseChannel::cavity_dephase: n.cavity_dephase = true; break;
    }
    return n;
  }
};

// Pure dephasing time 1/T_phi = 1/T2 - 1/(2 T1); positive iff T2 < 2 T1.
inline double pure_dephasing_time(double t1, double t2) {
  const double rate = 1.0 / t2 - 0.5 / t1;
  if (!(rate > 0.0)) {
    throw InvalidLifetimesError(
        "pure dephasing rate requires T2 < 2*T1 (got T1 = " +
        std::to_string(t1) + ", T2 = " + std::to_string(t2) + ")");
  }
  return 1.0 / rate;
}

inline void validate_noise(const NoiseParams& n) {
  if (!(n.t1_qubit > 0.0) || !(n.t2_qubit > 0.0) || !(n.t1_cavity > 0.0) ||
      !(n.t2_cavity > 0.0)) {
    throw InvalidLifetimesError("lifetimes must be positive");
  }
  if (!(n.eta > 0.0)) throw DomainError("noise scale eta must be positive");
  if (!(n.t_cd > 0.0)) throw DomainError("gate time must be positive");
  if (n.integrator_steps < 1) {
    throw DomainError("integrator needs at least one step");
  }
  if (n.qubit_dephase) pure_dephasing_time(n.t1_qubit, n.t2_qubit);
  if (n.cavity_dephase) pure_dephasing_time(n.t1_cavity, n.t2_cavity);
}

// Decay rates in 1/us, already scaled by eta; zero when disabled.
struct NoiseRates {
  double qubit_relax = 0.0;
  double qubit_dephase = 0.0;
  double cavity_relax = 0.0;
  double cavity_dephase = 0.0;
};

inline NoiseRates noise_rates(const NoiseParams& n) {
  validate_noise(n);
  NoiseRates r;
  if (n.qubit_relax) r.qubit_relax = 1.0 / (n.eta * n.t1_qubit);
  if (n.qubit_dephase) {
    r.qubit_dephase = 1.0 / (n.eta * pure_dephasing_time(n.t1_qubit, n.t2_qubit));
  }
  if (n.cavity_relax) r.cavity_relax = 1.0 / (n.eta * n.t1_cavity);
  if (n.cavity_dephase) {
    r.cavity_dephase =
        1.0 / (n.eta * pure_dephasing_time(n.t1_cavity, n.t2_cavity));
  }
  return r;
}

// Collapse operators on the qubit (x) cavity space, enabled channels only:
// sigma-/sqrt(T1q), (1 - sigma_z)/sqrt(2 Tphi_q), a/sqrt(T1c), and
// sqrt(2) n / sqrt(Tphi_c), with each lifetime scaled by eta.
inline std::vector<Operator> collapse_operators(const NoiseParams& noise,
                                                const HilbertConfig& config) {
  if (!config.with_qubit) {
    throw ConfigError("collapse operators live on the qubit-cavity space");
  }
  const int dim = config.cavity_dim;
  const NoiseRates r = noise_rates(noise);
  const Operator id_cavity = identity<double>(dim);
  std::vector<Operator> out;
  if (noise.qubit_relax) {
    out.push_back(std::sqrt(r.qubit_relax) * tensor(sigma_minus(), id_cavity));
  }
  if (noise.qubit_dephase) {
    const Operator pg2 =
        (Operator(Eigen::Matrix2cd::Identity()) - sigma_z());
    out.push_back(std::sqrt(r.qubit_dephase / 2.0) * tensor(pg2, id_cavity));
  }
  if (noise.cavity_relax) {
    out.push_back(std::sqrt(r.cavity_relax) *
                  tensor(Operator(Eigen::Matrix2cd::Identity()),
                         annihilation<double>(dim)));
  }
  if (noise.cavity_dephase) {
    out.push_back(std::sqrt(2.0 * r.cavity_dephase) *
                  tensor(Operator(Eigen::Matrix2cd::Identity()),
                         number_operator<double>(dim)));
  }
  return out;
}

// Lindblad propagator for one big conditional displacement
// H = (1/T_CD)(1/(2 sqrt 2)) (i beta a' - i beta* a) (x) sigma_z,
// integrating for T_CD.  Operates on the composite 2N x 2N state with
// qubit-major blocks [[gg, ge], [eg, ee]].
class LindbladCd {
 public:
  LindbladCd(std::complex<double> beta, const NoiseParams& noise,
             int cavity_dim)
      : dim_(cavity_dim),
        rates_(noise_rates(noise)),
        t_total_(noise.t_cd_us()),
        steps_(noise.integrator_steps),
        noiseless_(!noise.any_enabled()) {
    z_ = std::complex<double>(0.0, 1.0) * beta /
         (2.0 * std::sqrt(2.0) * t_total_);
    sqrtn_.resize(dim_ + 1);
    for (int m = 0; m <= dim_; ++m) sqrtn_(m) = std::sqrt(double(m));
    if (noiseless_) {
      exact_ = controlled_displacement<double>(beta, dim_, 1e-6);
    }
  }

  bool noiseless() const { return noiseless_; }

  // d rho / dt, written blockwise; O(N^2) per call.
  void rhs(const DensityMatrix& rho, DensityMatrix& out) const {
    const int n = dim_;
    out.setZero(2 * n, 2 * n);
    const std::complex<double> i(0.0, 1.0);
    const std::complex<double> zc = std::conj(z_);
    for (int rq = 0; rq < 2; ++rq) {
      for (int cq = 0; cq < 2; ++cq) {
        const auto src = rho.block(rq * n, cq * n, n, n);
        auto dst = out.block(rq * n, cq * n, n, n);
        const double s_row = rq == 0 ? -1.0 : 1.0;
        const double s_col = cq == 0 ? -1.0 : 1.0;
        const std::complex<double> lz = -i * s_row * z_;
        const std::complex<double> lzc = -i * s_row * zc;
        const std::complex<double> rz = i * s_col * z_;
        const std::complex<double> rzc = i * s_col * zc;
        const double qubit_decay =
            (rq != cq ? 0.5 * rates_.qubit_relax + rates_.qubit_dephase
                      : (rq == 1 ? rates_.qubit_relax : 0.0));
        for (int col = 0; col < n; ++col) {
          for (int row = 0; row < n; ++row) {
            std::complex<double> v(0.0, 0.0);
            // Hamiltonian: H = z a' + conj(z) a on the cavity.
            if (row > 0) v += lz * sqrtn_(row) * src(row - 1, col);
            if (row + 1 < n) v += lzc * sqrtn_(row + 1) * src(row + 1, col);
            if (col + 1 < n) v += rz * sqrtn_(col + 1) * src(row, col + 1);
            if (col > 0) v += rzc * sqrtn_(col) * src(row, col - 1);
            // Cavity relaxation a rho a' - {n, rho}/2.
            if (rates_.cavity_relax != 0.0) {
              if (row + 1 < n && col + 1 < n) {
                v += rates_.cavity_relax * sqrtn_(row + 1) * sqrtn_(col + 1) *
                     src(row + 1, col + 1);
              }
              v -= rates_.cavity_relax * 0.5 * double(row + col) *
                   src(row, col);
            }
            // Cavity dephasing: coherences decay as (m - n)^2.
            if (rates_.cavity_dephase != 0.0) {
              const double d = double(row - col);
              v -= rates_.cavity_dephase * d * d * src(row, col);
            }
            // Qubit relaxation and dephasing, constant per block.
            if (qubit_decay != 0.0) v -= qubit_decay * src(row, col);
            dst(row, col) = v;
          }
        }
      }
    }
    // Qubit relaxation feeds the ee block into gg.
    if (rates_.qubit_relax != 0.0) {
      out.block(0, 0, n, n) += rates_.qubit_relax * rho.block(n, n, n, n);
    }
  }

  DensityMatrix evolve(const DensityMatrix& rho) const {
    check_dim(rho.rows(), rho.cols(), 2 * dim_, "LindbladCd::evolve");
    if (noiseless_) {
      return exact_ * rho * exact_.adjoint();
    }
    const double trace_in = rho.trace().real();
    const double dt = t_total_ / steps_;
    DensityMatrix state = rho;
    DensityMatrix k1, k2, k3, k4, tmp;
    for (int s = 0; s < steps_; ++s) {
      rhs(state, k1);
      tmp = state + 0.5 * dt * k1;
      rhs(tmp, k2);
      tmp = state + 0.5 * dt * k2;
      rhs(tmp, k3);
      tmp = state + dt * k3;
      rhs(tmp, k4);
      state += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    const double drift = std::abs(state.trace().real() - trace_in);
    if (drift > 1e-6) {
      throw IntegratorError("trace drifted by " + std::to_string(drift) +
                            " during the noisy displacement");
    }
    state = 0.5 * (state + state.adjoint().eval());
    return state;
  }

 private:
  int dim_;
  NoiseRates rates_;
  double t_total_;
  int steps_;
  bool noiseless_;
  std::complex<double> z_;
  RealVector<double> sqrtn_;
  Operator exact_;
};

// One noisy big conditional displacement on a composite state.
inline DensityMatrix noisy_controlled_displacement(const DensityMatrix& rho,
                                                   std::complex<double> beta,
                                                   const NoiseParams& noise,
                                                   const HilbertConfig& config) {
  if (!config.with_qubit) {
    throw ConfigError("noisy displacement needs the qubit in the space");
  }
  const LindbladCd lind(beta, noise, config.cavity_dim);
  return lind.evolve(rho);
}

// Dense Liouvillian matrix acting on column-major vectorized states,
// for expm cross-checks at small dimensions.
inline Matrix<double> liouvillian_matrix(std::complex<double> beta,
                                         const NoiseParams& noise,
                                         const HilbertConfig& config) {
  if (!config.with_qubit) {
    throw ConfigError("the Liouvillian acts on the qubit-cavity space");
  }
  if (config.cavity_dim > 32) {
    throw ResourceError("dense Liouvillian limited to cavity_dim <= 32");
  }
  const int dim = config.cavity_dim;
  const int full = 2 * dim;
  const std::complex<double> i(0.0, 1.0);
  const std::complex<double> z =
      i * beta / (2.0 * std::sqrt(2.0) * noise.t_cd_us());
  const Operator h_cavity =
      z * creation<double>(dim) + std::conj(z) * annihilation<double>(dim);
  const Operator h = tensor(sigma_z(), h_cavity);
  const Operator id = identity<double>(full);
  const Matrix<double> left = Eigen::kroneckerProduct(id, h);
  const Matrix<double> right =
      Eigen::kroneckerProduct(Matrix<double>(h.transpose()), id);
  Matrix<double> lv = -i * (left - right);
  for (const Operator& c : collapse_operators(noise, config)) {
    const Operator cdc = c.adjoint() * c;
    lv += Matrix<double>(
        Eigen::kroneckerProduct(Matrix<double>(c.conjugate()), c));
    lv -= 0.5 * Matrix<double>(Eigen::kroneckerProduct(id, cdc));
    lv -= 0.5 * Matrix<double>(Eigen::kroneckerProduct(
                    Matrix<double>(cdc.transpose()), id));
  }
  return lv;
}

// Exact (matrix-exponential) propagation, the RK4 cross-check oracle.
inline DensityMatrix noisy_controlled_displacement_expm(
    const DensityMatrix& rho, std::complex<double> beta,
    const NoiseParams& noise, const HilbertConfig& config) {
  const int full = 2 * config.cavity_dim;
  check_dim(rho.rows(), rho.cols(), full, "noisy_controlled_displacement_expm");
  const Matrix<double> lt =
      (liouvillian_matrix(beta, noise, config) * noise.t_cd_us()).eval();
  const Matrix<double> prop = lt.exp();
  Vector<double> v = Eigen::Map<const Vector<double>>(rho.data(), full * full);
  Vector<double> w = prop * v;
  return Eigen::Map<const DensityMatrix>(w.data(), full, full).eval();
}

// ---------------------------------------------------------------------------
// Noisy sBs subrounds

// Precomputed pipeline for noisy subrounds at fixed (params, noise): ideal
// small steps and rotations as composite unitaries, plus one Lindblad
// propagator per quadrature for the big step.  The ancilla starts each
// subround in |+>.
class NoisySubroundEngine {
 public:
  NoisySubroundEngine(const SbsParams& params, const NoiseParams& noise)
      : params_(params), dim_(params.cavity_dim) {
    validate_params(params);
    validate_noise(noise);
    const double delta = params.delta;
    const double thresh = params.leak_threshold;
    const Operator id = identity<double>(dim_);
    const Operator rot = tensor(qubit_rotation_x<double>(M_PI / 2), id);
    for (int xi = 0; xi < 2; ++xi) {
      const Quadrature x = xi == 0 ? Quadrature::q : Quadrature::p;
      const Operator cd_small = controlled_displacement<double>(
          small_amplitude<double>(delta, x), dim_, thresh);
      pre_[xi] = rot * cd_small;
      final_small_[xi] = cd_small;
      lind_[xi] = std::make_unique<LindbladCd>(
          big_amplitude<double>(delta, x), noise, dim_);
      for (int bit = 0; bit < 2; ++bit) {
        feedback_[xi][bit] = feedback_displacement<double>(params, x, bit);
      }
    }
    for (int sign = 0; sign < 2; ++sign) {
      const double nu = sign == 0 ? 1.0 : -1.0;
      rot_meas_[sign] = tensor(
          Operator(qubit_rotation_x<double>(nu * M_PI / 2).adjoint()), id);
    }
  }

  // State after the pre-measurement part of the subround (composite).
  DensityMatrix premeasurement(const DensityMatrix& rho_cav, Quadrature x,
                               const Gauge& g) const {
    check_dim(rho_cav.rows(), rho_cav.cols(), dim_,
              "NoisySubroundEngine input");
    const int xi = x == Quadrature::p;
    const StateVector plus = qubit_plus();
    DensityMatrix full =
        tensor(DensityMatrix(plus * plus.adjoint()), rho_cav);
    full = pre_[xi] * full * pre_[xi].adjoint();
    full = lind_[xi]->evolve(full);
    const int sign_index = gauge_bit(g, x);
    full = rot_meas_[sign_index] * full * rot_meas_[sign_index].adjoint();
    return full;
  }

  SubroundOutcome conditioned(const DensityMatrix& rho_cav, int bit,
                              Quadrature x, const Gauge& g) const {
    if (bit != 0 && bit != 1) {
      throw ConfigError("measurement bit must be 0 (g) or 1 (e)");
    }
    const DensityMatrix full = premeasurement(rho_cav, x, g);
    const int xi = x == Quadrature::p;
    DensityMatrix branch = full.block(bit * dim_, bit * dim_, dim_, dim_);
    branch = feedback_[xi][bit] * branch * feedback_[xi][bit].adjoint();
    SubroundOutcome out;
    out.bit = bit;
    out.weight = branch.trace().real();
    if (out.weight < 1e-14) {
      throw ZeroProbabilityError("noisy subround outcome weight underflow");
    }
    out.state = branch / out.weight;
    return out;
  }

  // Unnormalized conditioned branch, for probability-tree use.
  DensityMatrix conditioned_unnormalized(const DensityMatrix& rho_cav,
                                         int bit, Quadrature x,
                                         const Gauge& g) const {
    const DensityMatrix full = premeasurement(rho_cav, x, g);
    const int xi = x == Quadrature::p;
    DensityMatrix branch = full.block(bit * dim_, bit * dim_, dim_, dim_);
    return feedback_[xi][bit] * branch * feedback_[xi][bit].adjoint();
  }

  DensityMatrix autonomous(const DensityMatrix& rho_cav, Quadrature x,
                           const Gauge& g) const {
    DensityMatrix full = premeasurement(rho_cav, x, g);
    const int xi = x == Quadrature::p;
    full = final_small_[xi] * full * final_small_[xi].adjoint();
    return full.block(0, 0, dim_, dim_) + full.block(dim_, dim_, dim_, dim_);
  }

  // Both unnormalized conditioned branches and the autonomous output from a
  // single master-equation integration; the three share the premeasurement
  // state, so deriving them together costs one evolution instead of three.
  struct Branches {
    DensityMatrix conditioned_g;
    DensityMatrix conditioned_e;
    DensityMatrix autonomous;
  };

  Branches branches(const DensityMatrix& rho_cav, Quadrature x,
                    const Gauge& g) const {
    const DensityMatrix full = premeasurement(rho_cav, x, g);
    const int xi = x == Quadrature::p;
    Branches out;
    for (int bit = 0; bit < 2; ++bit) {
      DensityMatrix branch = full.block(bit * dim_, bit * dim_, dim_, dim_);
      branch = feedback_[xi][bit] * branch * feedback_[xi][bit].adjoint();
      (bit == 0 ? out.conditioned_g : out.conditioned_e) = branch;
    }
    const DensityMatrix reset =
        final_small_[xi] * full * final_small_[xi].adjoint();
    out.autonomous = reset.block(0, 0, dim_, dim_) +
                     reset.block(dim_, dim_, dim_, dim_);
    return out;
  }

  // Full autonomous round (q then p) starting from gauge g.
  DensityMatrix round(const DensityMatrix& rho_cav, const Gauge& g) const {
    DensityMatrix out = autonomous(rho_cav, Quadrature::q, g);
    return autonomous(out, Quadrature::p, after_subround(g, Quadrature::q));
  }

  int cavity_dim() const { return dim_; }
  const SbsParams& params() const { return params_; }

 private:
  SbsParams params_;
  int dim_;
  std::array<Operator, 2> pre_;          // rot * cd_small, by quadrature
  std::array<Operator, 2> final_small_;  // cd_small, by quadrature
  std::array<Operator, 2> rot_meas_;     // by gauge bit (0 -> nu=+1)
  std::array<std::array<Operator, 2>, 2> feedback_;  // [quadrature][bit]
  std::array<std::unique_ptr<LindbladCd>, 2> lind_;  // by quadrature
};

inline DensityMatrix noisy_autonomous_subround(const DensityMatrix& rho,
                                               Quadrature x,
                                               const SbsParams& params,
                                               const NoiseParams& noise) {
  return NoisySubroundEngine(params, noise).autonomous(rho, x, params.gauge);
}

inline SubroundOutcome noisy_conditioned_subround(const DensityMatrix& rho,
                                                  int bit, Quadrature x,
                                                  const SbsParams& params,
                                                  const NoiseParams& noise) {
  return NoisySubroundEngine(params, noise)
      .conditioned(rho, bit, x, params.gauge);
}

// One autonomous round (q then p) under noise.
inline DensityMatrix noisy_sbs_round(const DensityMatrix& rho,
                                     const SbsParams& params,
                                     const NoiseParams& noise) {
  return NoisySubroundEngine(params, noise).round(rho, params.gauge);
}

// Steady state of noisy autonomous stabilization from vacuum, with the same
// convergence monitor as the noiseless preparation.
inline PreparationResult noisy_steady_state(const SbsParams& params,
                                            const NoiseParams& noise,
                                            int rounds = 100,
                                            double drift_tolerance = 1e-3) {
  validate_params(params);
  if (rounds < 1) throw ConfigError("steady state needs at least one round");
  const int dim = params.cavity_dim;
  const NoisySubroundEngine engine(params, noise);
  DensityMatrix rho = density_from_state<double>(vacuum_state<double>(dim));

  const int monitor_from = std::max(0, rounds - 10);
  const Operator stab_q =
      finite_energy_stabilizer(params.delta, Quadrature::q, dim);
  const Operator stab_p =
      finite_energy_stabilizer(params.delta, Quadrature::p, dim);
  double lo_q = 2.0, hi_q = -1.0, lo_p = 2.0, hi_p = -1.0;

  Gauge g = params.gauge;
  for (int t = 0; t < rounds; ++t) {
    rho = engine.round(rho, g);
    g = after_round(g);
    if (t >= monitor_from) {
      const double mq = std::abs(expectation_value(rho, stab_q));
      const double mp = std::abs(expectation_value(rho, stab_p));
      lo_q = std::min(lo_q, mq);
      hi_q = std::max(hi_q, mq);
      lo_p = std::min(lo_p, mp);
      hi_p = std::max(hi_p, mp);
    }
  }
  const double leak = edge_population(rho, 5);
  if (leak > params.leak_threshold) {
    throw TruncationError("noisy steady state leaks " + std::to_string(leak) +
                          " into the top Fock levels");
  }
  PreparationResult out;
  out.rho = std::move(rho);
  out.gauge = g;
  out.rounds = rounds;
  out.stabilizer_drift = std::max(hi_q - lo_q, hi_p - lo_p);
  out.converged = out.stabilizer_drift <= drift_tolerance;
  return out;
}

// ---------------------------------------------------------------------------
// Qubit-relaxation toy model

// Kraus operator of the g outcome when the qubit relaxes a fraction zeta
// before the end of the big conditional displacement:
// CD(alpha_b) -> CD(zeta alpha_b) P_g CD((1-zeta) alpha_b) inside the
// pre-measurement unitary, with P_g = |g><g| + |g><e| (non-CP single-branch
// substitution, renormalized by the caller).
inline Operator relaxation_toy_kraus(const SbsParams& params, Quadrature x,
                                     double zeta) {
  if (!(zeta >= 0.0 && zeta <= 1.0)) {
    throw DomainError("relaxation moment zeta must lie in [0, 1]");
  }
  validate_params(params);
  const int dim = params.cavity_dim;
  const double delta = params.delta;
  const double thresh = params.leak_threshold;
  const std::complex<double> alpha_b = big_amplitude<double>(delta, x);
  const Operator id = identity<double>(dim);
  const Operator cd_small = controlled_displacement<double>(
      small_amplitude<double>(delta, x), dim, thresh);
  const Operator rot = tensor(qubit_rotation_x<double>(M_PI / 2), id);
  const int nu = gauge_sign(params.gauge, x);
  const Operator rot_meas = tensor(
      Operator(qubit_rotation_x<double>(nu * M_PI / 2).adjoint()), id);
  Operator pg_qubit = Operator::Zero(2, 2);
  pg_qubit(0, 0) = 1.0;
  pg_qubit(0, 1) = 1.0;
  const Operator interrupted =
      controlled_displacement<double>(zeta * alpha_b, dim, thresh) *
      tensor(pg_qubit, id) *
      controlled_displacement<double>((1.0 - zeta) * alpha_b, dim, thresh);
  const Operator u = rot_meas * interrupted * rot * cd_small;
  // <g| U |+>: average of the two qubit-input columns in the g output row.
  return (u.block(0, 0, dim, dim) + u.block(0, dim, dim, dim)) /
         std::sqrt(2.0);
}

// Normalized post-event state K rho K' / tr.
inline DensityMatrix relaxation_toy_event(const DensityMatrix& rho,
                                          double zeta,
                                          const SbsParams& params,
                                          Quadrature x) {
  check_dim(rho.rows(), rho.cols(), params.cavity_dim,
            "relaxation_toy_event");
  const Operator k = relaxation_toy_kraus(params, x, zeta);
  DensityMatrix mapped = k * rho * k.adjoint();
  const double w = mapped.trace().real();
  if (w < 1e-14) {
    throw ZeroProbabilityError("toy relaxation event has vanishing weight");
  }
  return mapped / w;
}

}  // namespace gkpsense
