// Tests for the sBs stabilization engine: amplitudes, gauge bookkeeping,
// measurement Kraus pairs against the closed form, feedback, dissipative
// preparation, and the mean-probability decay models.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "gkpsense/sbs.hpp"

using namespace gkpsense;
using Catch::Approx;

namespace {

const double kSpacing = qunaught_spacing<double>();

SbsParams test_params(double delta = 0.3, int dim = 64, int pad = 0) {
  SbsParams p;
  p.delta = delta;
  p.cavity_dim = dim;
  p.pad = pad;
  // The sensor tail reaches ~4e-9 into the top five levels at dim 100, so
  // leave headroom above the strict default without masking real leaks.
  p.leak_threshold = 1e-6;
  return p;
}

double op_distance(const Operator& a, const Operator& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

double frobenius(const Operator& a, const Operator& b) {
  return (a - b).norm();
}

// Shared converged sensor state at delta = 0.3, dimension 100.
const PreparationResult& prepared() {
  static const PreparationResult prep =
      prepare_qunaught(test_params(0.3, 100), 120);
  return prep;
}

}  // namespace

TEST_CASE("envelope constants satisfy their defining relations") {
  for (double delta : {0.25, 0.3, 0.4}) {
    const auto env = envelope_constants<double>(delta);
    REQUIRE(env.s == Approx(std::sinh(delta * delta)).epsilon(1e-14));
    REQUIRE(env.c * env.c - env.s * env.s == Approx(1.0).epsilon(1e-14));
    REQUIRE(env.t == Approx(env.s / env.c).epsilon(1e-14));
    REQUIRE(env.phi == Approx(M_PI * env.s * env.c / 8.0).epsilon(1e-14));
  }
}

TEST_CASE("subround amplitudes follow the small-big-small pattern") {
  const double delta = 0.3;
  const auto env = envelope_constants<double>(delta);
  const auto sq = small_amplitude<double>(delta, Quadrature::q);
  REQUIRE(sq.real() == Approx(kSpacing * env.s / 2.0));
  REQUIRE(sq.imag() == 0.0);
  const auto sp = small_amplitude<double>(delta, Quadrature::p);
  REQUIRE(sp.real() == 0.0);
  REQUIRE(sp.imag() == Approx(kSpacing * env.s / 2.0));
  const auto bq = big_amplitude<double>(delta, Quadrature::q);
  REQUIRE(bq.real() == 0.0);
  REQUIRE(bq.imag() == Approx(-kSpacing * env.c));
  const auto bp = big_amplitude<double>(delta, Quadrature::p);
  REQUIRE(bp.real() == Approx(kSpacing * env.c));
  REQUIRE(bp.imag() == 0.0);
}

TEST_CASE("gauge flips the other quadrature per subround and both per round") {
  Gauge g;
  g = after_subround(g, Quadrature::q);
  REQUIRE(g.jq == 0);
  REQUIRE(g.jp == 1);
  g = after_subround(g, Quadrature::p);
  REQUIRE(g.jq == 1);
  REQUIRE(g.jp == 1);
  REQUIRE(after_round(Gauge{}).jq == 1);
  REQUIRE(after_round(Gauge{}).jp == 1);
  REQUIRE(after_round(after_round(Gauge{})).jq == 0);

  REQUIRE(gauge_sign(Gauge{}, Quadrature::q) == 1);
  REQUIRE(gauge_sign(Gauge{1, 0}, Quadrature::q) == -1);
  REQUIRE(gauge_sign(Gauge{1, 0}, Quadrature::p) == 1);
  REQUIRE_THROWS_AS(validate_gauge(Gauge{2, 0}), GaugeError);
}

TEST_CASE("gauge sign alternates with period two in the round index") {
  REQUIRE(gauge_sign_at_round(Quadrature::q, 1) == 1);
  REQUIRE(gauge_sign_at_round(Quadrature::q, 2) == -1);
  REQUIRE(gauge_sign_at_round(Quadrature::q, 3) == 1);
  REQUIRE(gauge_sign_at_round(Quadrature::p, 1) == -1);
  REQUIRE(gauge_sign_at_round(Quadrature::p, 2) == 1);
  // Consistency with the explicit bookkeeping, q before p in each round.
  Gauge g;
  for (int t = 1; t <= 6; ++t) {
    REQUIRE(gauge_sign(g, Quadrature::q) ==
            gauge_sign_at_round(Quadrature::q, t));
    g = after_subround(g, Quadrature::q);
    REQUIRE(gauge_sign(g, Quadrature::p) ==
            gauge_sign_at_round(Quadrature::p, t));
    g = after_subround(g, Quadrature::p);
  }
}

TEST_CASE("quadrature displacements shift the matching expectation value") {
  const int dim = 60;
  const double x0 = 0.45;
  for (Quadrature x : {Quadrature::q, Quadrature::p}) {
    const Operator d = quadrature_displacement(x0, x, dim);
    const DensityMatrix rho =
        d * density_from_state(vacuum_state<double>(dim)) * d.adjoint();
    const Operator meas =
        x == Quadrature::q ? position<double>(dim) : momentum<double>(dim);
    REQUIRE(expectation_value(rho, meas).real() == Approx(x0).margin(1e-9));
    const Operator other =
        x == Quadrature::q ? momentum<double>(dim) : position<double>(dim);
    REQUIRE(std::abs(expectation_value(rho, other)) < 1e-9);
  }
}

TEST_CASE("cached quadrature displacer agrees with the direct exponential") {
  const int dim = 60;
  for (Quadrature x : {Quadrature::q, Quadrature::p}) {
    const QuadratureDisplacer displacer(x, dim);
    for (double amount : {-0.9, 0.3, 1.2}) {
      const Operator direct = quadrature_displacement(amount, x, dim);
      REQUIRE(op_distance(displacer(amount), direct) < 1e-11);
    }
  }
  const QuadratureDisplacer small(Quadrature::q, 16);
  REQUIRE_THROWS_AS(small(8.0), TruncationError);
}

TEST_CASE("subround unitary is unitary and ends with the small step") {
  const SbsParams params = test_params(0.3, 48);
  const Operator u = sbs_unitary(params, Quadrature::q);
  const int full = 2 * params.cavity_dim;
  REQUIRE(op_distance(u * u.adjoint(), identity<double>(full)) < 1e-10);
  const Operator cut = sbs_subround_unitary(params, Quadrature::q, false);
  const Operator cd_small = controlled_displacement(
      small_amplitude<double>(params.delta, Quadrature::q),
      params.cavity_dim);
  REQUIRE(op_distance(u, cd_small * cut) < 1e-12);
}

TEST_CASE("numeric Kraus pair matches the closed form on a padded space") {
  for (double delta : {0.25, 0.3, 0.4}) {
    for (Quadrature x : {Quadrature::q, Quadrature::p}) {
      for (int bit : {0, 1}) {
        SbsParams params = test_params(delta, 64, 48);
        if (x == Quadrature::q) {
          params.gauge.jq = bit;
        } else {
          params.gauge.jp = bit;
        }
        const KrausPair numeric = kraus_numeric(params, x);
        const KrausPair closed = kraus_analytic(params, x);
        REQUIRE(frobenius(numeric.g, closed.g) < 1e-8);
        REQUIRE(frobenius(numeric.e, closed.e) < 1e-8);
      }
    }
  }
}

TEST_CASE("unpadded Kraus pair resolves the identity") {
  for (Quadrature x : {Quadrature::q, Quadrature::p}) {
    const KrausPair k = kraus_numeric(test_params(0.3, 64, 0), x);
    REQUIRE(completeness_defect(k) < 1e-10);
    REQUIRE_NOTHROW(check_completeness(k));
  }
  // A padded-then-truncated pair is not complete on the truncated space.
  KrausPair padded = kraus_numeric(test_params(0.3, 24, 40), Quadrature::q);
  REQUIRE_THROWS_AS(check_completeness(padded, 1e-12), CompletenessError);
}

TEST_CASE("small-envelope limit collapses onto the modular cosine") {
  // As delta -> 0 both modular arguments coincide with (l/2) q and the pair
  // becomes |K_e|^2 = cos^2((l/2) q + pi/4), |K_g|^2 = cos^2((l/2) q - pi/4).
  SbsParams params = test_params(0.005, 48, 24);
  const int dim = params.cavity_dim;
  const KrausPair k = kraus_analytic(params, Quadrature::q);
  Eigen::SelfAdjointEigenSolver<Operator> es(
      Operator(0.5 * kSpacing * position<double>(dim + params.pad)));
  Vector<double> ce(es.eigenvalues().size()), cg(es.eigenvalues().size());
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    ce(i) = std::cos(es.eigenvalues()(i) + M_PI / 4);
    cg(i) = std::cos(es.eigenvalues()(i) - M_PI / 4);
  }
  const Operator cos_e =
      (es.eigenvectors() * ce.asDiagonal() * es.eigenvectors().adjoint())
          .topLeftCorner(dim, dim);
  const Operator cos_g =
      (es.eigenvectors() * cg.asDiagonal() * es.eigenvectors().adjoint())
          .topLeftCorner(dim, dim);
  REQUIRE(op_distance(Operator(k.e.adjoint() * k.e), Operator(cos_e * cos_e)) <
          5e-3);
  REQUIRE(op_distance(Operator(k.g.adjoint() * k.g), Operator(cos_g * cos_g)) <
          5e-3);
}

TEST_CASE("gauge flip negates the rotation sign in the Kraus pair") {
  SbsParams plus = test_params(0.3, 48, 0);
  SbsParams minus = plus;
  minus.gauge.jq = 1;
  const KrausPair kp = kraus_analytic(plus, Quadrature::q);
  const KrausPair km = kraus_analytic(minus, Quadrature::q);
  // nu -> -nu swaps the roles of the shifted cosines up to conjugate phases,
  // so the POVM effects swap between the outcomes.
  REQUIRE(op_distance(Operator(kp.e.adjoint() * kp.e),
                      Operator(km.g.adjoint() * km.g)) < 1e-10);
  REQUIRE(op_distance(Operator(kp.g.adjoint() * kp.g),
                      Operator(km.e.adjoint() * km.e)) < 1e-10);
}

TEST_CASE("feedback completes the interrupted small step exactly") {
  const SbsParams params = test_params(0.3, 64);
  const int dim = params.cavity_dim;
  for (Quadrature x : {Quadrature::q, Quadrature::p}) {
    const Operator u = sbs_unitary(params, x);
    const KrausPair k = kraus_numeric(params, x);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    const Operator block_g =
        inv_sqrt2 * (u.block(0, 0, dim, dim) + u.block(0, dim, dim, dim));
    const Operator block_e =
        inv_sqrt2 * (u.block(dim, 0, dim, dim) + u.block(dim, dim, dim, dim));
    REQUIRE(op_distance(block_g, feedback_displacement(params, x, 0) * k.g) <
            1e-11);
    REQUIRE(op_distance(block_e, feedback_displacement(params, x, 1) * k.e) <
            1e-11);
  }
}

TEST_CASE("feedback displacements cancel pairwise and have length l s / 4") {
  const SbsParams params = test_params(0.3, 64);
  const Operator fg = feedback_displacement(params, Quadrature::q, 0);
  const Operator fe = feedback_displacement(params, Quadrature::q, 1);
  REQUIRE(op_distance(fg * fe, identity<double>(64)) < 1e-11);
  const double want =
      kSpacing * envelope_constants<double>(0.3).s / 4.0;  // ~0.0565
  const DensityMatrix rho =
      fe * density_from_state(vacuum_state<double>(64)) * fe.adjoint();
  REQUIRE(expectation_value(rho, position<double>(64)).real() ==
          Approx(want).margin(1e-9));
  REQUIRE(want == Approx(0.056480).margin(1e-5));
}

TEST_CASE("conditioned subround outcomes are normalized and sum to one") {
  const SbsParams params = test_params(0.3, 100);
  const DensityMatrix& rho = prepared().rho;
  const auto g = conditioned_subround(rho, 0, Quadrature::q, params);
  const auto e = conditioned_subround(rho, 1, Quadrature::q, params);
  REQUIRE(g.weight + e.weight == Approx(1.0).margin(1e-9));
  REQUIRE(g.state.trace().real() == Approx(1.0).margin(1e-10));
  // On the undisplaced converged state the readout is an unbiased coin
  // (parity symmetry forces p_g = p_e exactly); displacing by a quarter
  // cell drives it to the single-round model value (1 + e^{-0.4 delta^2})/2.
  REQUIRE(g.weight == Approx(0.5).margin(1e-6));
  const QuadratureDisplacer displace(Quadrature::q, 100);
  const Operator d = displace(kSpacing / 4.0);
  const DensityMatrix shifted = d * rho * d.adjoint();
  const double wg_quarter =
      conditioned_subround(shifted, 0, Quadrature::q, params).weight;
  REQUIRE(wg_quarter == Approx(0.982).margin(0.02));
  REQUIRE_THROWS_AS(conditioned_subround(rho, 2, Quadrature::q, params),
                    ConfigError);
}

TEST_CASE("averaged subround equals the sum over conditioned branches") {
  const SbsParams params = test_params(0.3, 100);
  const DensityMatrix& rho = prepared().rho;
  const auto g = conditioned_subround(rho, 0, Quadrature::p, params);
  const auto e = conditioned_subround(rho, 1, Quadrature::p, params);
  const DensityMatrix avg = autonomous_subround(rho, Quadrature::p, params);
  REQUIRE(op_distance(avg, g.weight * g.state + e.weight * e.state) < 1e-12);
  REQUIRE(avg.trace().real() == Approx(1.0).margin(1e-10));
}

TEST_CASE("single-subround outcome parity mirrors the displacement sign") {
  const SbsParams params = test_params(0.3, 100);
  const QuadratureDisplacer displace(Quadrature::q, 100);
  const double x0 = 0.31;
  const Operator dp = displace(x0);
  const Operator dm = displace(-x0);
  const DensityMatrix plus = dp * prepared().rho * dp.adjoint();
  const DensityMatrix minus = dm * prepared().rho * dm.adjoint();
  const double wg_plus =
      conditioned_subround(plus, 0, Quadrature::q, params).weight;
  const double we_minus =
      conditioned_subround(minus, 1, Quadrature::q, params).weight;
  REQUIRE(wg_plus == Approx(we_minus).margin(1e-9));
}

TEST_CASE("dissipative preparation converges onto both stabilizers") {
  const PreparationResult& prep = prepared();
  REQUIRE(prep.converged);
  REQUIRE(prep.rounds == 120);
  REQUIRE(prep.gauge.jq == 0);  // even round count restores the gauge
  REQUIRE(prep.gauge.jp == 0);
  const auto [tq, tp] = stabilizer_expectation(prep.rho, 0.3);
  REQUIRE(std::abs(tq) > 0.999);
  REQUIRE(std::abs(tp) > 0.999);
  REQUIRE(purity(prep.rho) > 0.95);
  // The envelope formula (1 - delta^2)/(2 delta^2) predicts ~5.06 photons.
  const double nbar = mean_photon_number(prep.rho);
  REQUIRE(nbar > 4.5);
  REQUIRE(nbar < 5.7);
}

TEST_CASE("the prepared state is a fixed point of the autonomous round") {
  const SbsParams params = test_params(0.3, 100);
  const DensityMatrix next = autonomous_round(prepared().rho, params);
  REQUIRE(op_distance(next, prepared().rho) < 1e-3);
}

TEST_CASE("the prepared state is symmetric under photon-number parity") {
  const DensityMatrix& rho = prepared().rho;
  DensityMatrix mirrored = rho;
  for (int m = 0; m < rho.rows(); ++m) {
    for (int n = 0; n < rho.cols(); ++n) {
      if ((m + n) % 2 == 1) mirrored(m, n) = -mirrored(m, n);
    }
  }
  REQUIRE(op_distance(mirrored, rho) < 1e-8);
}

TEST_CASE("displacing the sensor rotates the stabilizer phase") {
  // The envelope similarity sends q -> c q + i s p and p -> c p - i s q, so
  // a shift of q rotates the q stabilizer by exp(i l c x0) and rescales the
  // p stabilizer by exp(-l s x0), both exactly.
  const double x0 = 0.17;
  const auto env = envelope_constants<double>(0.3);
  const QuadratureDisplacer displace(Quadrature::q, 100);
  const Operator d = displace(x0);
  const DensityMatrix shifted = d * prepared().rho * d.adjoint();
  const auto [tq0, tp0] = stabilizer_expectation(prepared().rho, 0.3);
  const auto [tq1, tp1] = stabilizer_expectation(shifted, 0.3);
  const std::complex<double> rot =
      std::exp(std::complex<double>(0.0, kSpacing * env.c * x0));
  REQUIRE(std::abs(tq1 - rot * tq0) < 1e-6);
  REQUIRE(std::abs(tp1 - std::exp(-kSpacing * env.s * x0) * tp0) < 1e-6);
}

TEST_CASE("ideal and finite-energy stabilizers are related by the envelope") {
  const int dim = 24;
  const Operator ideal = ideal_stabilizer<double>(Quadrature::q, dim);
  REQUIRE(op_distance(ideal * ideal.adjoint(), identity<double>(dim)) < 1e-11);
  const double delta = 0.3;
  const Operator damped = finite_energy_stabilizer(delta, Quadrature::q, dim);
  for (int m = 0; m < dim; ++m) {
    for (int n = 0; n < dim; ++n) {
      const std::complex<double> want =
          ideal(m, n) * std::exp(-delta * delta * double(m - n));
      REQUIRE(std::abs(damped(m, n) - want) < 1e-12);
    }
  }
  const Operator env = envelope_operator(delta, dim);
  for (int n = 0; n < dim; ++n) {
    REQUIRE(env(n, n).real() == Approx(std::exp(-delta * delta * n)));
  }
}

TEST_CASE("preparation rejects invalid parameters") {
  SbsParams bad = test_params(0.3, 4);
  REQUIRE_THROWS_AS(validate_params(bad), ConfigError);
  bad = test_params(1.2, 64);
  REQUIRE_THROWS_AS(validate_params(bad), ConfigError);
  REQUIRE_THROWS_AS(prepare_qunaught(test_params(), 0), ConfigError);
}

TEST_CASE("mean-probability models agree at round one and decay toward 1/2") {
  const double delta = 0.3;
  const double x0 = kSpacing / 4.0;
  const double first =
      predicted_mean_probability(x0, 1, delta, {}, DecayModel::simple);
  const double first_refined =
      predicted_mean_probability(x0, 1, delta, {}, DecayModel::refined);
  REQUIRE(first == Approx(first_refined).epsilon(1e-12));
  REQUIRE(first == Approx(0.98231).margin(1e-4));

  const double late =
      predicted_mean_probability(0.2, 30, delta, {}, DecayModel::simple);
  REQUIRE(late > 0.5);
  REQUIRE(late - 0.5 < predicted_mean_probability(0.2, 1, delta) - 0.5);
  // The refined model decays more slowly near the half-cell boundary.
  const double simple5 =
      predicted_mean_probability(x0, 5, delta, {}, DecayModel::simple);
  const double refined5 =
      predicted_mean_probability(x0, 5, delta, {}, DecayModel::refined);
  REQUIRE(refined5 > simple5);
  REQUIRE_THROWS_AS(predicted_mean_probability(0.1, 0, delta), ConfigError);
}
