// Closed-form benchmark bounds for two-quadrature displacement sensing:
// quantum Cramer-Rao and Holevo limits as functions of the probe's mean
// photon number, classical single-mode Gaussian limits, the coherent-state
// heterodyne baseline, and the two-mode squeezed-vacuum (TMSV) error
// formula together with a squeezing-equivalence conversion.
//
// All "total" quantities refer to the summed mean-square error of the two
// quadrature estimates, delta_Q^2 + delta_P^2.  The dB conversion used here
// is 10*log10(e^{2r}) with r obtained by inverting the TMSV error formula
// (or its flat-prior limit 2 e^{-2r}); raw errors and sensitivities are the
// quantities meant for quantitative comparison.
#pragma once

#include <cmath>
#include <optional>

#include "gkpsense/errors.hpp"

namespace gkpsense {

inline void check_mean_photon_number(double n_bar) {
  if (!(n_bar >= 0.0)) {
    throw DomainError("mean photon number must be non-negative");
  }
}

inline void check_prior_sigma(double sigma) {
  if (!(sigma > 0.0)) {
    throw DomainError("prior standard deviation must be positive");
  }
}

// tr(F^{-1}) >= 1/(2 n_bar + 1): best possible total MSE for joint
// estimation of both quadratures with a probe of mean photon number n_bar.
inline double qcrb_total_mse(double n_bar) {
  check_mean_photon_number(n_bar);
  return 1.0 / (2.0 * n_bar + 1.0);
}

// Per-quadrature sensitivity bound 1/sqrt(4 n_bar + 2) = sqrt(qcrb/2).
inline double sensitivity_quantum_limit(double n_bar) {
  check_mean_photon_number(n_bar);
  return 1.0 / std::sqrt(4.0 * n_bar + 2.0);
}

// Incompatibility ratio R = 1/(8 n_bar + 4) entering the Holevo bound.
inline double uhlmann_ratio(double n_bar) {
  check_mean_photon_number(n_bar);
  return 1.0 / (8.0 * n_bar + 4.0);
}

// Holevo upper bound on the achievable total MSE: qcrb * (1 + R).
inline double holevo_upper_mse(double n_bar) {
  return qcrb_total_mse(n_bar) * (1.0 + uhlmann_ratio(n_bar));
}

// Sensitivity form of the Holevo bound: sqrt(1 + R)/sqrt(4 n_bar + 2).
inline double holevo_upper_sensitivity(double n_bar) {
  return std::sqrt(1.0 + uhlmann_ratio(n_bar)) *
         sensitivity_quantum_limit(n_bar);
}

// Classical limit for a single-mode Gaussian strategy against a Gaussian
// prior of width sigma: the sub-vacuum prior is already better than any
// measurement (sigma^2), otherwise the optimal Gaussian probe yields
// 2 sigma^2/(sigma^2 + 1).  Continuous at sigma = 1.
inline double gaussian_limit_total_mse(double sigma) {
  check_prior_sigma(sigma);
  if (sigma < 1.0) return sigma * sigma;
  return 2.0 * sigma * sigma / (sigma * sigma + 1.0);
}

// Coherent-state probe with double-homodyne (heterodyne) readout: one
// vacuum unit of error per quadrature, independent of the displacement.
inline double coherent_heterodyne_total_mse() { return 2.0; }

// Total posterior MSE of the TMSV strategy with squeezing r against a
// Gaussian prior of width sigma: 2 e^{-2r} sigma^2 / (e^{-2r} + sigma^2).
inline double tmsv_total_mse(double r, double sigma) {
  check_prior_sigma(sigma);
  const double v = std::exp(-2.0 * r);
  return 2.0 * v * sigma * sigma / (v + sigma * sigma);
}

// Squeezing parameter reaching a target total MSE.  With a finite prior the
// inversion is e^{-2r} = t sigma^2/(2 sigma^2 - t), feasible for
// 0 < t < 2 sigma^2; without a prior the flat limit 2 e^{-2r} = t applies.
inline double tmsv_required_squeezing(double target_total_mse,
                                      std::optional<double> sigma = {}) {
  const double t = target_total_mse;
  if (!(t > 0.0)) {
    throw InfeasibleTargetError("target MSE must be positive");
  }
  if (!sigma) return 0.5 * std::log(2.0 / t);
  check_prior_sigma(*sigma);
  const double s2 = *sigma * *sigma;
  if (!(t < 2.0 * s2)) {
    throw InfeasibleTargetError(
        "target MSE not reachable with the given prior width");
  }
  return -0.5 * std::log(t * s2 / (2.0 * s2 - t));
}

// Squeezing expressed in decibels: 10 log10(e^{2r}).
inline double squeezing_db(double r) {
  return 10.0 * 2.0 * r / std::log(10.0);
}

// Decibel equivalent of a target total MSE under this artifact's
// convention (invert the TMSV formula, then convert r to dB).
inline double tmsv_equivalent_db(double target_total_mse,
                                 std::optional<double> sigma = {}) {
  return squeezing_db(tmsv_required_squeezing(target_total_mse, sigma));
}

// Photon content of the TMSV probe: sinh^2(r) in each mode.
inline double tmsv_photons_per_mode(double r) {
  const double s = std::sinh(r);
  return s * s;
}

inline double tmsv_photons_total(double r) {
  return 2.0 * tmsv_photons_per_mode(r);
}

}  // namespace gkpsense
