// Tests for probability tables and estimators: the prefix-tree builder
// against a brute-force composition of subround channels, parity folding,
// worker invariance, MLE/Bayes estimator behavior on synthetic tables with
// closed-form answers, and the Fisher/sensitivity figures.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>

#include "gkpsense/estimation.hpp"

using namespace gkpsense;
using Catch::Approx;

namespace {

const double kSpacing = qunaught_spacing<double>();

SbsParams sensor_params(int dim = 48) {
  SbsParams p;
  p.delta = 0.3;
  p.cavity_dim = dim;
  p.leak_threshold = 1e-2;  // reduced dimension for test speed
  return p;
}

const PreparationResult& prepared48() {
  static const PreparationResult prep =
      prepare_qunaught(sensor_params(), 100);
  return prep;
}

// Synthetic single-round table p(g | x) = (1 + amp * sin(k x)) / 2 on a
// symmetric grid; parity-symmetric by construction.
ProbabilityTable sinusoid_table(double amp, double k, double half_width,
                                int count) {
  ProbabilityTable table;
  table.grid = DisplacementGrid::symmetric(half_width, count);
  table.t_rounds = 1;
  table.probs.resize(count, 2);
  for (int i = 0; i < count; ++i) {
    const double p = 0.5 * (1.0 + amp * std::sin(k * table.grid.values(i)));
    table.probs(i, 0) = p;
    table.probs(i, 1) = 1.0 - p;
  }
  return table;
}

}  // namespace

TEST_CASE("bitstring labels, indices, and flips round-trip") {
  REQUIRE(bitstring_label(0, 3) == "ggg");
  REQUIRE(bitstring_label(5, 3) == "ege");
  REQUIRE(bitstring_label((1 << 4) - 1, 4) == "eeee");
  for (int b = 0; b < 8; ++b) {
    REQUIRE(bitstring_index(bitstring_label(b, 3)) == b);
  }
  REQUIRE(flip_bitstring(5, 3) == 2);
  REQUIRE(flip_bitstring(0, 4) == 15);
  REQUIRE_THROWS_AS(bitstring_index("gxe"), DomainError);
}

TEST_CASE("displacement grids validate shape and locate points") {
  const DisplacementGrid g = DisplacementGrid::symmetric(0.5, 11);
  REQUIRE_NOTHROW(g.validate());
  REQUIRE(g.size() == 11);
  REQUIRE(g.spacing() == Approx(0.1).epsilon(1e-12));
  REQUIRE(g.index_of(0.0) == 5);
  REQUIRE(g.index_of(-0.5) == 0);
  REQUIRE_THROWS_AS(g.index_of(0.123), GridError);
  REQUIRE_THROWS_AS(DisplacementGrid::symmetric(0.5, 2), GridError);
  REQUIRE_THROWS_AS(DisplacementGrid::symmetric(-1.0, 5), GridError);

  DisplacementGrid lopsided;
  lopsided.values = RealVector<double>::LinSpaced(5, -0.1, 0.5);
  REQUIRE_THROWS_AS(lopsided.validate(), GridError);
  DisplacementGrid unsorted;
  unsorted.values.resize(3);
  unsorted.values << 0.2, 0.0, -0.2;
  REQUIRE_THROWS_AS(unsorted.validate(), GridError);

  REQUIRE(mle_grid().size() == 51);
  REQUIRE(mle_grid().values(50) == Approx(kSpacing / 4.0).epsilon(1e-12));
  REQUIRE(bayes_support_grid().size() == 161);
  REQUIRE(bayes_support_grid().values(0) == Approx(-kSpacing).epsilon(1e-12));
}

TEST_CASE("priors expose densities and reject bad parameters") {
  const Prior flat = Prior::flat_range(-0.5, 0.5);
  REQUIRE(flat.density(0.2) == Approx(1.0).epsilon(1e-12));
  REQUIRE(flat.density(0.7) == 0.0);
  const Prior gauss = Prior::gaussian(0.3);
  REQUIRE(gauss.density(0.0) ==
          Approx(1.0 / (0.3 * std::sqrt(2.0 * M_PI))).epsilon(1e-12));
  REQUIRE_THROWS_AS(Prior::flat_range(0.5, -0.5), DomainError);
  REQUIRE_THROWS_AS(Prior::gaussian(0.0), DomainError);
}

TEST_CASE("table rows match brute-force channel composition at two rounds") {
  const SbsParams params = sensor_params();
  const DensityMatrix& rho = prepared48().rho;
  const DisplacementGrid grid = DisplacementGrid::symmetric(0.2, 5);
  const QuadratureDisplacer dq(Quadrature::q, params.cavity_dim,
                               params.leak_threshold);
  const QuadratureDisplacer dp(Quadrature::p, params.cavity_dim,
                               params.leak_threshold);

  for (Quadrature x : {Quadrature::q, Quadrature::p}) {
    const ProbabilityTable table =
        bitstring_probabilities(rho, grid, 2, params, x);
    REQUIRE(table.meta.channel == "noiseless");
    REQUIRE(table.meta.delta == Approx(0.3));
    for (int i = 0; i < grid.size(); ++i) {
      const Operator d =
          x == Quadrature::q ? dq(grid.values(i)) : dp(grid.values(i));
      const DensityMatrix rho0 = d * rho * d.adjoint();
      for (int b1 = 0; b1 < 2; ++b1) {
        for (int b2 = 0; b2 < 2; ++b2) {
          // Round by round with the free subround functions, tracking the
          // gauge by hand and multiplying branch weights.
          SbsParams step = params;
          double weight = 1.0;
          DensityMatrix state = rho0;
          for (int round = 0; round < 2; ++round) {
            const int bit = round == 0 ? b1 : b2;
            if (x == Quadrature::q) {
              const auto out =
                  conditioned_subround(state, bit, Quadrature::q, step);
              weight *= out.weight;
              state = out.state;
              step.gauge = after_subround(step.gauge, Quadrature::q);
              state = autonomous_subround(state, Quadrature::p, step);
              step.gauge = after_subround(step.gauge, Quadrature::p);
            } else {
              state = autonomous_subround(state, Quadrature::q, step);
              step.gauge = after_subround(step.gauge, Quadrature::q);
              const auto out =
                  conditioned_subround(state, bit, Quadrature::p, step);
              weight *= out.weight;
              state = out.state;
              step.gauge = after_subround(step.gauge, Quadrature::p);
            }
          }
          REQUIRE(table.probs(i, (b1 << 1) | b2) ==
                  Approx(weight).margin(1e-12));
        }
      }
    }
  }
}

TEST_CASE("record distributions mirror under displacement parity") {
  const SbsParams params = sensor_params();
  const DisplacementGrid grid = DisplacementGrid::symmetric(0.3, 7);
  const ProbabilityTable table =
      bitstring_probabilities(prepared48().rho, grid, 3, params, Quadrature::q);
  const int n = grid.size();
  for (int i = 0; i < n; ++i) {
    for (int b = 0; b < table.outcomes(); ++b) {
      REQUIRE(table.probs(i, b) ==
              Approx(table.probs(n - 1 - i, flip_bitstring(b, 3)))
                  .margin(1e-8));
    }
  }
}

TEST_CASE("parity shortcut and worker count do not change the table") {
  const SbsParams params = sensor_params();
  const DisplacementGrid grid = DisplacementGrid::symmetric(0.3, 7);
  const DensityMatrix& rho = prepared48().rho;

  TableBuildOptions direct;
  const ProbabilityTable base =
      bitstring_probabilities(rho, grid, 2, params, Quadrature::q, nullptr,
                              direct);
  TableBuildOptions folded;
  folded.exploit_parity = true;
  const ProbabilityTable mirrored =
      bitstring_probabilities(rho, grid, 2, params, Quadrature::q, nullptr,
                              folded);
  REQUIRE((base.probs - mirrored.probs).cwiseAbs().maxCoeff() < 1e-8);

  TableBuildOptions threaded;
  threaded.workers = 3;
  const ProbabilityTable parallel =
      bitstring_probabilities(rho, grid, 2, params, Quadrature::q, nullptr,
                              threaded);
  REQUIRE((base.probs - parallel.probs).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("table validation enforces shapes, signs, and row sums") {
  ProbabilityTable table = sinusoid_table(0.9, 1.0, 0.5, 5);
  REQUIRE_NOTHROW(validate_probability_table(table));
  table.probs(2, 0) = 0.9;  // break the row sum
  REQUIRE_THROWS_AS(validate_probability_table(table), NumericalError);
  table = sinusoid_table(0.9, 1.0, 0.5, 5);
  table.probs(1, 0) = -1e-6;
  REQUIRE_THROWS_AS(validate_probability_table(table), NumericalError);
  table = sinusoid_table(0.9, 1.0, 0.5, 5);
  table.t_rounds = 2;
  REQUIRE_THROWS_AS(validate_probability_table(table),
                    DimensionMismatchError);
}

TEST_CASE("table builder rejects out-of-budget and out-of-range requests") {
  const SbsParams params = sensor_params();
  const DensityMatrix& rho = prepared48().rho;
  const DisplacementGrid grid = DisplacementGrid::symmetric(0.2, 3);
  REQUIRE_THROWS_AS(
      bitstring_probabilities(rho, grid, 0, params, Quadrature::q),
      DomainError);
  REQUIRE_THROWS_AS(
      bitstring_probabilities(rho, grid, 25, params, Quadrature::q),
      DomainError);
  TableBuildOptions tiny;
  tiny.max_entries = 16;
  REQUIRE_THROWS_AS(bitstring_probabilities(rho, grid, 3, params,
                                            Quadrature::q, nullptr, tiny),
                    ResourceError);
}

TEST_CASE("single-round MLE picks the boundary quarter-cell points") {
  const SbsParams params = sensor_params();
  const DisplacementGrid grid = DisplacementGrid::symmetric(kSpacing / 4.0, 11);
  const ProbabilityTable table =
      bitstring_probabilities(prepared48().rho, grid, 1, params, Quadrature::q);
  const Prior prior = Prior::flat_range(-kSpacing / 4.0, kSpacing / 4.0);
  const EstimatorTable est = mle_estimators(table, prior);
  // p(g | x) rises with x, so record g maps to +l/4 and record e to -l/4.
  REQUIRE(est.estimate(0) == Approx(kSpacing / 4.0).epsilon(1e-12));
  REQUIRE(est.estimate(1) == Approx(-kSpacing / 4.0).epsilon(1e-12));
}

TEST_CASE("MLE tie-breaking prefers small then negative displacements") {
  ProbabilityTable table;
  table.grid = DisplacementGrid::symmetric(0.2, 5);
  table.t_rounds = 1;
  table.probs.resize(5, 2);
  table.probs.col(0) << 0.5, 0.7, 0.7, 0.7, 0.5;
  table.probs.col(1) << 0.5, 0.3, 0.3, 0.3, 0.5;
  const EstimatorTable est =
      mle_estimators(table, Prior::flat_range(-0.2, 0.2));
  REQUIRE(est.estimate(0) == 0.0);     // tie among {-0.1, 0, 0.1}
  REQUIRE(est.estimate(1) == -0.2);    // tie between -0.2 and +0.2

  const EstimatorTable inner =
      mle_estimators(table, Prior::flat_range(-0.1, 0.1));
  REQUIRE(inner.estimate(1) == 0.0);   // boundary columns masked out

  REQUIRE_THROWS_AS(mle_estimators(table, Prior::gaussian(0.1)), DomainError);
  REQUIRE_THROWS_AS(mle_estimators(table, Prior::flat_range(-0.5, 0.5)),
                    GridError);
}

TEST_CASE("Bayes estimators reproduce a hand-evaluated posterior mean") {
  ProbabilityTable table;
  table.grid = DisplacementGrid::symmetric(0.2, 3);
  table.t_rounds = 1;
  table.probs.resize(3, 2);
  table.probs.col(0) << 0.30, 0.55, 0.80;
  table.probs.col(1) << 0.70, 0.45, 0.20;
  const double sigma = 0.25;
  const EstimatorTable est = bayes_estimators(table, sigma, 0.9);

  const double h = 0.2;
  const double w[3] = {h / 2.0, h, h / 2.0};
  const double xs[3] = {-0.2, 0.0, 0.2};
  for (int j = 0; j < 2; ++j) {
    double z = 0.0, m = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double u = w[i] * gaussian_density(xs[i], sigma) *
                       table.probs(i, j);
      z += u;
      m += u * xs[i];
    }
    REQUIRE(est.estimate(j) == Approx(m / z).epsilon(1e-14));
  }
  // Parity-symmetric tables give antisymmetric posterior means.
  const ProbabilityTable sym = sinusoid_table(0.9, 1.3, 1.5, 31);
  const EstimatorTable sem = bayes_estimators(sym, 0.3);
  REQUIRE(sem.estimate(0) == Approx(-sem.estimate(1)).margin(1e-12));
  REQUIRE(sem.estimate(0) > 0.0);

  REQUIRE_THROWS_AS(bayes_estimators(table, 0.0), DomainError);
}

TEST_CASE("Bayes estimation rejects grids that truncate the posterior") {
  const ProbabilityTable table = sinusoid_table(0.5, 1.0, 0.3, 7);
  REQUIRE_THROWS_AS(bayes_estimators(table, 0.15 * kSpacing), SupportError);
  REQUIRE_NOTHROW(bayes_estimators(table, 0.05));
}

TEST_CASE("Fisher information matches the analytic sinusoid value") {
  const double amp = 0.9, k = 1.3;
  const ProbabilityTable table = sinusoid_table(amp, k, 0.5, 101);
  const double f = fisher_information(table, 0.0);
  // p = (1 + A sin(kx))/2 gives F(0) = (A k)^2 / (1 - p) / p / 4 = (A k)^2.
  const double analytic =
      (0.5 * amp * k) * (0.5 * amp * k) / 0.25;
  REQUIRE(f == Approx(analytic).epsilon(1e-3));
  REQUIRE_THROWS_AS(fisher_information(table, 0.5), GridError);
  REQUIRE_THROWS_AS(fisher_information(table, 0.123), GridError);
}

TEST_CASE("sensitivity matches a hand-built linear readout") {
  const double amp = 0.9, k = 1.3, c = 0.7;
  const ProbabilityTable table = sinusoid_table(amp, k, 0.5, 101);
  EstimatorTable est;
  est.kind = EstimatorTable::Kind::mle;
  est.estimate.resize(2);
  est.estimate << c, -c;
  const double h = table.grid.spacing();
  const double slope = c * amp * std::sin(k * h) / h;
  REQUIRE(sensitivity(table, est, 0.0) == Approx(c / slope).epsilon(1e-12));

  EstimatorTable flat;
  flat.estimate.resize(2);
  flat.estimate << 0.3, 0.3;
  REQUIRE_THROWS_AS(sensitivity(table, flat, 0.0),
                    DegenerateDerivativeError);
}

TEST_CASE("estimator mean, bias, and MSE agree with direct sums") {
  const ProbabilityTable table = sinusoid_table(0.8, 1.1, 0.4, 5);
  EstimatorTable est;
  est.estimate.resize(2);
  est.estimate << 0.25, -0.35;
  const int i = table.grid.index_of(0.2);
  const double p = table.probs(i, 0);
  const double mean = p * 0.25 + (1.0 - p) * -0.35;
  REQUIRE(mean_estimate_at_index(table, est, i) ==
          Approx(mean).epsilon(1e-14));
  REQUIRE(bias(table, est, 0.2) == Approx(mean - 0.2).epsilon(1e-13));
  const double want_mse = p * (0.25 - 0.2) * (0.25 - 0.2) +
                          (1.0 - p) * (-0.35 - 0.2) * (-0.35 - 0.2);
  REQUIRE(mse(table, est, 0.2) == Approx(want_mse).epsilon(1e-14));
}

TEST_CASE("prior-averaged MSE and its variance match explicit quadrature") {
  const ProbabilityTable table = sinusoid_table(0.8, 1.1, 0.4, 5);
  EstimatorTable est;
  est.estimate.resize(2);
  est.estimate << 0.3, -0.3;
  const Prior prior = Prior::gaussian(0.2);

  double want_mse = 0.0, want_var = 0.0;
  const RealVector<double> w = trapezoid_weights(table.grid);
  for (int i = 0; i < table.grid.size(); ++i) {
    const double x0 = table.grid.values(i);
    const double pw = w(i) * gaussian_density(x0, 0.2);
    double m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < 2; ++j) {
      const double s = (est.estimate(j) - x0) * (est.estimate(j) - x0);
      m1 += table.probs(i, j) * s;
      m2 += table.probs(i, j) * s * s;
    }
    want_mse += pw * m1;
    want_var += pw * (m2 - m1 * m1);
  }
  REQUIRE(averaged_mse(table, est, prior) ==
          Approx(want_mse).epsilon(1e-14));
  REQUIRE(mse_variance(table, est, prior) ==
          Approx(want_var).epsilon(1e-14));
}

TEST_CASE("more rounds sharpen the maximum-likelihood estimate") {
  const SbsParams params = sensor_params();
  const DensityMatrix& rho = prepared48().rho;
  const DisplacementGrid grid = DisplacementGrid::symmetric(kSpacing / 4.0, 17);
  const Prior prior = Prior::flat_range(-kSpacing / 4.0, kSpacing / 4.0);
  double previous = 1e9;
  for (int t : {1, 3}) {
    const ProbabilityTable table =
        bitstring_probabilities(rho, grid, t, params, Quadrature::q);
    const EstimatorTable est = mle_estimators(table, prior);
    const double worst = averaged_mse(table, est, prior);
    REQUIRE(worst < previous);
    previous = worst;
  }
}

TEST_CASE("estimator quality respects the Cramer-Rao floor") {
  const SbsParams params = sensor_params();
  const DisplacementGrid grid = DisplacementGrid::symmetric(kSpacing / 8.0, 9);
  const ProbabilityTable table =
      bitstring_probabilities(prepared48().rho, grid, 2, params, Quadrature::q);
  const EstimatorTable est = mle_estimators(
      table, Prior::flat_range(-kSpacing / 8.0, kSpacing / 8.0));
  for (int i = 1; i + 1 < grid.size(); ++i) {
    const double x0 = grid.values(i);
    const double f = fisher_information(table, x0);
    const double s = sensitivity(table, est, x0);
    REQUIRE(s >= (1.0 - 1e-3) / std::sqrt(f));
  }
}
