#pragma once
// Repeated sense-estimate-recover sequences on a stabilized qunaught
// sensor: per-shot trajectory sampling, Monte Carlo backaction runs with
// the sensor state carried across repeats, and exact bitstring-averaged
// recovery-fidelity curves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gkpsense/errors.hpp"
#include "gkpsense/estimation.hpp"
#include "gkpsense/fock.hpp"
#include "gkpsense/noise.hpp"
#include "gkpsense/rng.hpp"
#include "gkpsense/sbs.hpp"

namespace gkpsense {

// ---------------------------------------------------------------------------
// Phase-space displacement of both quadratures

// Cached displacement D((q0 + i p0)/sqrt(2)) up to a global phase,
// assembled as exp(i p0 qhat) exp(-i q0 phat); the residual phase
// exp(i q0 p0 / 2) cancels in density-matrix conjugation.
class PhaseSpaceDisplacer {
 public:
  explicit PhaseSpaceDisplacer(int dim, double leak_threshold = 1e-8)
      : dq_(Quadrature::q, dim, leak_threshold),
        dp_(Quadrature::p, dim, leak_threshold) {}

  Operator operator()(double q0, double p0) const {
    return dq_(q0) * dp_(p0);
  }

  DensityMatrix apply(const DensityMatrix& rho, double q0, double p0) const {
    const Operator w = (*this)(q0, p0);
    return w * rho * w.adjoint();
  }

 private:
  QuadratureDisplacer dq_;
  QuadratureDisplacer dp_;
};

// ---------------------------------------------------------------------------
// Prior quadrature

// Nodes and weights approximating the Gaussian-prior average
// integral G_sigma(x) f(x) dx ~= sum_i weights[i] f(nodes[i]), exact for
// polynomial f up to degree 2n - 1 (Gauss-Hermite rule mapped to a normal
// density of width sigma).  Weights sum to 1.
struct PriorQuadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline PriorQuadrature gauss_hermite_prior(double sigma, int points = 5) {
  if (!(sigma > 0.0)) throw DomainError("prior width must be positive");
  if (points < 1 || points > 64) {
    throw DomainError("node count must be in [1, 64]");
  }
  RealMatrix<double> j = RealMatrix<double>::Zero(points, points);
  for (int k = 0; k + 1 < points; ++k) {
    const double b = std::sqrt((k + 1) / 2.0);
    j(k, k + 1) = b;
    j(k + 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<RealMatrix<double>> es(j);
  if (es.info() != Eigen::Success) {
    throw NumericalError("Gauss-Hermite eigensolve failed");
  }
  PriorQuadrature rule;
  rule.nodes.resize(points);
  rule.weights.resize(points);
  for (int i = 0; i < points; ++i) {
    rule.nodes[i] = std::sqrt(2.0) * sigma * es.eigenvalues()(i);
    const double v = es.eigenvectors()(0, i);
    rule.weights[i] = v * v;
  }
  return rule;
}

// ---------------------------------------------------------------------------
// Trajectory sampling

struct TrajectoryResult {
  std::uint32_t bits_q = 0;  // big-endian, round 1 in the highest bit
  std::uint32_t bits_p = 0;
  Gauge gauge;        // gauge frame after the sampled rounds
  DensityMatrix state;  // normalized conditional state
};

// Samples one measured stabilization trajectory of `t_rounds` rounds
// (q subround then p subround, feedback folded into each conditioned
// branch).  Outcome draws use the counter stream `stream` with the round
// index in [1, t_rounds] and draw 0 for q, 1 for p, so results are
// reproducible for a given key regardless of any surrounding loop order.
// `t_rounds == 0` returns the input unchanged.  When `channels` is given
// it must have been built for the same `params` and noise settings.
inline TrajectoryResult sample_trajectory(
    const DensityMatrix& rho, int t_rounds, const SbsParams& params,
    const std::optional<NoiseParams>& noise, const RngKey& stream,
    const SubroundChannels* channels = nullptr) {
  if (t_rounds < 0 || t_rounds > 24) {
    throw DomainError("round count must be in [0, 24]");
  }
  check_dim(rho, params.cavity_dim, "sample_trajectory state");

  TrajectoryResult out;
  out.gauge = params.gauge;
  out.state = rho;
  if (t_rounds == 0) return out;

  SubroundChannels owned;
  if (channels == nullptr) {
    owned = noise ? make_noisy_channels(params, *noise)
                  : make_noiseless_channels(params);
    channels = &owned;
  }

  for (int t = 1; t <= t_rounds; ++t) {
    for (Quadrature x : {Quadrature::q, Quadrature::p}) {
      const DensityMatrix branch0 =
          channels->conditioned(out.state, 0, x, out.gauge);
      const double w0 = std::clamp(branch0.trace().real(), 0.0, 1.0);
      RngKey key = stream;
      key.round = static_cast<std::uint64_t>(t);
      key.draw = (x == Quadrature::p) ? 1 : 0;
      const int bit = uniform01(key) >= w0 ? 1 : 0;
      DensityMatrix branch =
          bit == 0 ? branch0 : channels->conditioned(out.state, 1, x, out.gauge);
      const double w = branch.trace().real();
      if (w < 1e-14) {
        throw ZeroProbabilityError("sampled branch has vanishing weight");
      }
      out.state = branch / w;
      if (x == Quadrature::q) {
        out.bits_q = (out.bits_q << 1) | static_cast<std::uint32_t>(bit);
      } else {
        out.bits_p = (out.bits_p << 1) | static_cast<std::uint32_t>(bit);
      }
      out.gauge = after_subround(out.gauge, x);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Repeated sensing runs

struct BackactionConfig {
  int t_rounds = 8;    // conditioned sensing rounds per repeat
  int m_rounds = 4;    // autonomous re-stabilization rounds per repeat
  int n_repeats = 15;  // sense-estimate-recover repeats per sample
  double sigma = 0.15 * qunaught_spacing<double>();  // Gaussian prior width
  int samples = 4000;  // Monte Carlo samples of the whole sequence
  std::uint64_t seed = 1;
  std::optional<NoiseParams> noise{};
  SbsParams params{};
  int workers = 1;
  // Stabilization rounds used to prepare the initial sensor state;
  // 0 picks the defaults (120 noiseless, 100 with noise).
  int preparation_rounds = 0;
  // Record the sensor fidelity after every repeat of every sample.  Each
  // record costs an eigensolve, so leave off for large sample counts.
  bool record_fidelity = false;
};

inline BackactionConfig backaction_noiseless_defaults() {
  return BackactionConfig{};
}

inline BackactionConfig backaction_noisy_defaults() {
  BackactionConfig config;
  config.t_rounds = 6;
  config.m_rounds = 6;
  config.n_repeats = 10;
  config.noise = NoiseParams{};
  return config;
}

inline void validate_backaction(const BackactionConfig& config) {
  validate_params(config.params);
  if (config.noise) validate_noise(*config.noise);
  if (config.t_rounds < 1 || config.t_rounds > 24) {
    throw DomainError("sensing rounds must be in [1, 24]");
  }
  if (config.m_rounds < 0) {
    throw DomainError("re-stabilization rounds must be non-negative");
  }
  if (config.n_repeats < 1) throw DomainError("need at least one repeat");
  if (config.samples < 1) throw DomainError("need at least one sample");
  if (!(config.sigma > 0.0)) throw DomainError("prior width must be positive");
  if (config.workers < 1) throw DomainError("worker count must be positive");
  if (config.preparation_rounds < 0) {
    throw DomainError("preparation rounds must be non-negative");
  }
}

using BitMatrix =
    Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic>;

struct RepeatSummary {
  double mse_q = 0.0;
  double mse_p = 0.0;
  double stderr_q = 0.0;  // standard error of the squared-error mean
  double stderr_p = 0.0;
  double mean_fidelity = std::numeric_limits<double>::quiet_NaN();
};

struct RunRecord {
  BackactionConfig config;
  // Raw per-sample data, one row per sample and one column per repeat.
  RealMatrix<double> true_q, true_p, est_q, est_p;
  BitMatrix bits_q, bits_p;
  RealMatrix<double> fidelity;  // empty unless config.record_fidelity
  std::vector<RepeatSummary> repeats;  // length n_repeats
};

namespace detail {

inline RepeatSummary summarize_repeat(const RealMatrix<double>& true_q,
                                      const RealMatrix<double>& true_p,
                                      const RealMatrix<double>& est_q,
                                      const RealMatrix<double>& est_p,
                                      const RealMatrix<double>& fid, int r) {
  const Eigen::Index n = true_q.rows();
  RepeatSummary s;
  double m2q = 0.0, m2p = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double dq = est_q(i, r) - true_q(i, r);
    const double dp = est_p(i, r) - true_p(i, r);
    s.mse_q += dq * dq;
    s.mse_p += dp * dp;
    m2q += dq * dq * dq * dq;
    m2p += dp * dp * dp * dp;
  }
  const double dn = static_cast<double>(n);
  s.mse_q /= dn;
  s.mse_p /= dn;
  if (n > 1) {
    const double vq = std::max(0.0, (m2q / dn - s.mse_q * s.mse_q) *
                                        dn / (dn - 1.0));
    const double vp = std::max(0.0, (m2p / dn - s.mse_p * s.mse_p) *
                                        dn / (dn - 1.0));
    s.stderr_q = std::sqrt(vq / dn);
    s.stderr_p = std::sqrt(vp / dn);
  }
  if (fid.size() > 0) {
    s.mean_fidelity = fid.col(r).mean();
  }
  return s;
}

}  // namespace detail

// Runs the repeated sensing sequence: each repeat displaces the carried
// sensor state by a fresh (q0, p0) drawn from the Gaussian prior, senses
// both quadratures for t_rounds conditioned rounds, applies the Bayesian
// recovery displacement built from the sampled bitstrings, then
// re-stabilizes with m_rounds autonomous rounds.  Estimator tables are
// computed once from the initial sensor state and reused for every repeat.
// Results are deterministic for a given seed and independent of the worker
// count.
inline RunRecord run_backaction_sequence(const BackactionConfig& config) {
  validate_backaction(config);
  const SbsParams& params = config.params;
  const int dim = params.cavity_dim;
  const int t_rounds = config.t_rounds;
  const int m_rounds = config.m_rounds;
  const int n_repeats = config.n_repeats;
  const int samples = config.samples;

  const int prep_rounds = config.preparation_rounds > 0
                              ? config.preparation_rounds
                              : (config.noise ? 100 : 120);
  PreparationResult prep =
      config.noise ? noisy_steady_state(params, *config.noise, prep_rounds)
                   : prepare_qunaught(params, prep_rounds);
  const DensityMatrix initial = prep.rho;
  const Gauge start_gauge = prep.gauge;

  const SubroundChannels channels =
      config.noise ? make_noisy_channels(params, *config.noise)
                   : make_noiseless_channels(params);

  // Estimator tables per starting gauge parity.  Each repeat advances the
  // gauge by t_rounds + m_rounds rounds, so when that count is odd the
  // repeats alternate between two gauge frames.
  const bool alternating = ((t_rounds + m_rounds) % 2) != 0;
  EstimatorTable est_q_table[2], est_p_table[2];
  const DisplacementGrid support = bayes_support_grid();
  for (int parity = 0; parity < (alternating ? 2 : 1); ++parity) {
    SbsParams table_params = params;
    table_params.gauge =
        parity == 0 ? start_gauge : after_round(start_gauge);
    TableBuildOptions options;
    options.workers = config.workers;
    options.exploit_parity = !config.noise.has_value();
    const ProbabilityTable tq = bitstring_probabilities(
        initial, support, t_rounds, table_params, Quadrature::q, &channels,
        options);
    const ProbabilityTable tp = bitstring_probabilities(
        initial, support, t_rounds, table_params, Quadrature::p, &channels,
        options);
    est_q_table[parity] = bayes_estimators(tq, config.sigma);
    est_p_table[parity] = bayes_estimators(tp, config.sigma);
  }

  const PhaseSpaceDisplacer displace(dim, params.leak_threshold);
  std::optional<FidelityReference> reference;
  if (config.record_fidelity) {
    reference.emplace(config.noise ? prepare_qunaught(params, 120).rho
                                   : initial);
  }

  RunRecord record;
  record.config = config;
  record.true_q.setZero(samples, n_repeats);
  record.true_p.setZero(samples, n_repeats);
  record.est_q.setZero(samples, n_repeats);
  record.est_p.setZero(samples, n_repeats);
  record.bits_q.setZero(samples, n_repeats);
  record.bits_p.setZero(samples, n_repeats);
  if (config.record_fidelity) record.fidelity.setZero(samples, n_repeats);

  detail::parallel_for_index(samples, config.workers, [&](int s) {
    DensityMatrix state = initial;
    for (int r = 0; r < n_repeats; ++r) {
      const int parity =
          alternating ? (static_cast<int>(
                             (static_cast<std::int64_t>(r) *
                              (t_rounds + m_rounds)) %
                             2))
                      : 0;
      RngKey key;
      key.seed = config.seed;
      key.sample = static_cast<std::uint64_t>(s);
      key.repeat = static_cast<std::uint64_t>(r);
      key.round = 0;
      key.draw = 0;
      const double q0 = config.sigma * gaussian(key);
      key.draw = 1;
      const double p0 = config.sigma * gaussian(key);

      state = displace.apply(state, q0, p0);

      SbsParams traj_params = params;
      traj_params.gauge =
          parity == 0 ? start_gauge : after_round(start_gauge);
      RngKey stream;
      stream.seed = config.seed;
      stream.sample = static_cast<std::uint64_t>(s);
      stream.repeat = static_cast<std::uint64_t>(r);
      TrajectoryResult traj = sample_trajectory(
          state, t_rounds, traj_params, config.noise, stream, &channels);

      const double qe = est_q_table[parity].estimate(traj.bits_q);
      const double pe = est_p_table[parity].estimate(traj.bits_p);
      state = displace.apply(traj.state, -qe, -pe);

      Gauge g = traj.gauge;
      for (int m = 0; m < m_rounds; ++m) {
        state = channels.averaged(state, Quadrature::q, g);
        g = after_subround(g, Quadrature::q);
        state = channels.averaged(state, Quadrature::p, g);
        g = after_subround(g, Quadrature::p);
      }
      const double tr = state.trace().real();
      if (std::abs(tr - 1.0) > 1e-6) {
        throw NumericalError("carried state trace drifted to " +
                             std::to_string(tr));
      }
      state /= tr;

      record.true_q(s, r) = q0;
      record.true_p(s, r) = p0;
      record.est_q(s, r) = qe;
      record.est_p(s, r) = pe;
      record.bits_q(s, r) = traj.bits_q;
      record.bits_p(s, r) = traj.bits_p;
      if (reference) record.fidelity(s, r) = (*reference)(state);
    }
  });

  record.repeats.reserve(n_repeats);
  for (int r = 0; r < n_repeats; ++r) {
    record.repeats.push_back(detail::summarize_repeat(
        record.true_q, record.true_p, record.est_q, record.est_p,
        record.fidelity, r));
  }
  return record;
}

// ---------------------------------------------------------------------------
// Recovery-fidelity curves

struct RecoveryFidelityPoint {
  double x0 = 0.0;
  double with_recovery = 0.0;
  double without_recovery = 0.0;
};

namespace detail {

// Depth-first walk over conditioned-q outcomes with the other quadrature
// averaged, calling leaf(prefix, unnormalized branch state) at depth
// t_rounds.
template <typename Leaf>
void conditioned_q_tree(const DensityMatrix& rho, int depth, int prefix,
                        int t_rounds, const SubroundChannels& channels,
                        const std::vector<RoundGauges>& schedule,
                        Leaf&& leaf) {
  if (depth == t_rounds) {
    leaf(prefix, rho);
    return;
  }
  const RoundGauges& g = schedule[depth];
  for (int bit = 0; bit < 2; ++bit) {
    DensityMatrix child = channels.conditioned(rho, bit, Quadrature::q, g.at_q);
    child = channels.averaged(child, Quadrature::p, g.at_p);
    conditioned_q_tree(child, depth + 1, (prefix << 1) | bit, t_rounds,
                       channels, schedule, leaf);
  }
}

}  // namespace detail

// Exact bitstring-averaged sensor fidelity after one sense-estimate-recover
// repeat, as a function of the true displacement q0.  For every q0 the sum
// runs over all 2^t_rounds outcomes weighted by their probabilities; each
// branch applies the Bayesian recovery displacement (or skips it for the
// without-recovery curve), then m_rounds autonomous rounds, and compares
// with the noiseless stabilized qunaught.  With noise configured, the run
// starts from the noisy steady state and uses noisy subrounds throughout.
inline std::vector<RecoveryFidelityPoint> recovery_fidelity_curve(
    const std::vector<double>& q0_values, int t_rounds, int m_rounds,
    const SbsParams& params, double sigma,
    const std::optional<NoiseParams>& noise = {}, int workers = 1,
    int support_points = 161, const SubroundChannels* channels = nullptr) {
  validate_params(params);
  if (noise) validate_noise(*noise);
  if (t_rounds < 1 || t_rounds > 24) {
    throw DomainError("round count must be in [1, 24]");
  }
  if (t_rounds > 14) {
    throw ResourceError("exact outcome sum over 2^" +
                        std::to_string(t_rounds) + " branches is too large");
  }
  if (m_rounds < 0) {
    throw DomainError("re-stabilization rounds must be non-negative");
  }
  if (!(sigma > 0.0)) throw DomainError("prior width must be positive");
  if (q0_values.empty()) return {};

  const int dim = params.cavity_dim;
  PreparationResult noiseless_prep = prepare_qunaught(params, 120);
  DensityMatrix initial = noiseless_prep.rho;
  if (noise) {
    initial = noisy_steady_state(params, *noise, 100).rho;
  }
  const FidelityReference reference(noiseless_prep.rho);

  SubroundChannels owned;
  if (channels == nullptr) {
    owned = noise ? make_noisy_channels(params, *noise)
                  : make_noiseless_channels(params);
    channels = &owned;
  }

  TableBuildOptions options;
  options.workers = workers;
  options.exploit_parity = !noise.has_value();
  const ProbabilityTable table = bitstring_probabilities(
      initial, bayes_support_grid(support_points), t_rounds, params,
      Quadrature::q, channels, options);
  const EstimatorTable estimator = bayes_estimators(table, sigma);

  const auto schedule = detail::round_gauge_schedule(params.gauge, t_rounds);
  Gauge end_gauge = params.gauge;
  for (int t = 0; t < t_rounds; ++t) end_gauge = after_round(end_gauge);
  const QuadratureDisplacer displace(Quadrature::q, dim,
                                     params.leak_threshold);

  auto stabilize = [&](DensityMatrix rho) {
    Gauge g = end_gauge;
    for (int m = 0; m < m_rounds; ++m) {
      rho = channels->averaged(rho, Quadrature::q, g);
      g = after_subround(g, Quadrature::q);
      rho = channels->averaged(rho, Quadrature::p, g);
      g = after_subround(g, Quadrature::p);
    }
    return rho;
  };

  std::vector<RecoveryFidelityPoint> curve(q0_values.size());
  detail::parallel_for_index(
      static_cast<int>(q0_values.size()), workers, [&](int i) {
        const double q0 = q0_values[static_cast<std::size_t>(i)];
        const Operator d = displace(q0);
        const DensityMatrix rho0 = d * initial * d.adjoint();
        RecoveryFidelityPoint point;
        point.x0 = q0;
        double total_weight = 0.0;
        detail::conditioned_q_tree(
            rho0, 0, 0, t_rounds, *channels, schedule,
            [&](int prefix, const DensityMatrix& branch) {
              const double w = branch.trace().real();
              if (w < 1e-15) return;
              total_weight += w;
              const DensityMatrix normalized = branch / w;
              const double estimate = estimator.estimate(prefix);
              const Operator r = displace(-estimate);
              const DensityMatrix recovered =
                  stabilize(r * normalized * r.adjoint());
              const DensityMatrix bare = stabilize(normalized);
              point.with_recovery += w * reference(recovered);
              point.without_recovery += w * reference(bare);
            });
        if (std::abs(total_weight - 1.0) > 1e-6) {
          throw NumericalError("outcome weights sum to " +
                               std::to_string(total_weight));
        }
        point.with_recovery /= total_weight;
        point.without_recovery /= total_weight;
        curve[static_cast<std::size_t>(i)] = point;
      });
  return curve;
}

struct WeightedRecoveryFidelity {
  double with_recovery = 0.0;
  double without_recovery = 0.0;
  std::vector<RecoveryFidelityPoint> curve;  // at the quadrature nodes
};

// Gaussian-prior-weighted recovery fidelity via Gauss-Hermite quadrature.
// Noiseless runs are symmetric under q0 -> -q0, so only the non-negative
// nodes are evaluated and mirrored.
inline WeightedRecoveryFidelity weighted_recovery_fidelity(
    int t_rounds, int m_rounds, const SbsParams& params, double sigma,
    const std::optional<NoiseParams>& noise = {}, int gh_points = 5,
    int workers = 1, int support_points = 161,
    const SubroundChannels* channels = nullptr) {
  const PriorQuadrature rule = gauss_hermite_prior(sigma, gh_points);
  std::vector<double> nodes;
  std::vector<double> weights;
  if (!noise) {
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double x = std::abs(rule.nodes[i]);
      bool merged = false;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (std::abs(nodes[k] - x) < 1e-12) {
          weights[k] += rule.weights[i];
          merged = true;
          break;
        }
      }
      if (!merged) {
        nodes.push_back(x);
        weights.push_back(rule.weights[i]);
      }
    }
  } else {
    nodes = rule.nodes;
    weights = rule.weights;
  }

  WeightedRecoveryFidelity out;
  out.curve = recovery_fidelity_curve(nodes, t_rounds, m_rounds, params, sigma,
                                      noise, workers, support_points, channels);
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < out.curve.size(); ++i) {
    out.with_recovery += weights[i] * out.curve[i].with_recovery;
    out.without_recovery += weights[i] * out.curve[i].without_recovery;
    weight_sum += weights[i];
  }
  out.with_recovery /= weight_sum;
  out.without_recovery /= weight_sum;
  return out;
}

}  // namespace gkpsense
