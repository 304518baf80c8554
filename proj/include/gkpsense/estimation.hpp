// Displacement estimation from sBs measurement records: exact bitstring
// probability tables over displacement grids (prefix-tree evaluation),
// maximum-likelihood and Bayesian posterior-mean estimators, and the
// derived metrology figures (MSE, bias, MSE variance, Fisher information,
// sensitivity).
//
// Conventions.  A record of T bits is indexed big-endian: the round-1 bit
// is the most significant, g = 0 and e = 1.  Tables are built by walking
// the binary prefix tree of outcomes; each node holds the unnormalized
// post-measurement state whose trace is the joint probability of its
// prefix.  Per round, the estimated quadrature's subround is conditioned
// on the recorded bit while the other quadrature's subround is summed over
// outcomes (equivalently, applied autonomously).
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gkpsense/errors.hpp"
#include "gkpsense/fock.hpp"
#include "gkpsense/noise.hpp"
#include "gkpsense/sbs.hpp"

namespace gkpsense {

// ---------------------------------------------------------------------------
// Grids and priors

struct DisplacementGrid {
  RealVector<double> values;

  int size() const { return static_cast<int>(values.size()); }
  double spacing() const { return values(1) - values(0); }

  // Uniform grid of `count` points on [-half_width, +half_width].
  static DisplacementGrid symmetric(double half_width, int count) {
    if (count < 3 || half_width <= 0.0) {
      throw GridError("grid needs at least 3 points and positive width");
    }
    DisplacementGrid g;
    g.values = RealVector<double>::LinSpaced(count, -half_width, half_width);
    return g;
  }

  void validate() const {
    if (size() < 3) throw GridError("grid needs at least 3 points");
    const double scale = std::abs(values(size() - 1)) + 1e-30;
    for (int i = 1; i < size(); ++i) {
      if (!(values(i) > values(i - 1))) {
        throw GridError("grid values must be strictly increasing");
      }
    }
    for (int i = 0; i < size(); ++i) {
      if (std::abs(values(i) + values(size() - 1 - i)) > 1e-12 * scale) {
        throw GridError("grid must be symmetric about zero");
      }
    }
  }

  int index_of(double x, double tol = 1e-9) const {
    for (int i = 0; i < size(); ++i) {
      if (std::abs(values(i) - x) <= tol) return i;
    }
    throw GridError("value " + std::to_string(x) + " is not a grid point");
  }
};

// Paper-scale defaults: 51 points spanning one unit cell quarter for MLE,
// 161 points spanning [-l, l] for Bayesian posterior support.
inline DisplacementGrid mle_grid(int count = 51) {
  return DisplacementGrid::symmetric(qunaught_spacing<double>() / 4.0, count);
}

inline DisplacementGrid bayes_support_grid(int count = 161) {
  return DisplacementGrid::symmetric(qunaught_spacing<double>(), count);
}

inline RealVector<double> trapezoid_weights(const DisplacementGrid& grid) {
  const int n = grid.size();
  RealVector<double> w = RealVector<double>::Zero(n);
  for (int i = 0; i + 1 < n; ++i) {
    const double h = 0.5 * (grid.values(i + 1) - grid.values(i));
    w(i) += h;
    w(i + 1) += h;
  }
  return w;
}

inline double gaussian_density(double x, double sigma) {
  const double z = x / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
}

struct Prior {
  enum class Kind { flat, gaussian };
  Kind kind = Kind::flat;
  double lo = 0.0;
  double hi = 0.0;
  double sigma = 0.0;

  static Prior flat_range(double lo, double hi) {
    if (!(lo < hi)) throw DomainError("flat prior needs lo < hi");
    Prior p;
    p.kind = Kind::flat;
    p.lo = lo;
    p.hi = hi;
    return p;
  }

  static Prior gaussian(double sigma) {
    if (!(sigma > 0.0)) throw DomainError("gaussian prior needs sigma > 0");
    Prior p;
    p.kind = Kind::gaussian;
    p.sigma = sigma;
    return p;
  }

  double density(double x) const {
    if (kind == Kind::flat) {
      return (x >= lo && x <= hi) ? 1.0 / (hi - lo) : 0.0;
    }
    return gaussian_density(x, sigma);
  }
};

// ---------------------------------------------------------------------------
// Bitstring bookkeeping

inline std::string bitstring_label(int index, int t_rounds) {
  std::string s(t_rounds, 'g');
  for (int t = 0; t < t_rounds; ++t) {
    if ((index >> (t_rounds - 1 - t)) & 1) s[t] = 'e';
  }
  return s;
}

inline int bitstring_index(const std::string& label) {
  int index = 0;
  for (char c : label) {
    if (c != 'g' && c != 'e') {
      throw DomainError("bitstring labels use only 'g' and 'e'");
    }
    index = (index << 1) | (c == 'e' ? 1 : 0);
  }
  return index;
}

inline int flip_bitstring(int index, int t_rounds) {
  return ((1 << t_rounds) - 1) ^ index;
}

// ---------------------------------------------------------------------------
// Probability tables

struct TableMetadata {
  double delta = 0.0;
  std::string channel = "noiseless";
  std::string state = "";
};

struct ProbabilityTable {
  DisplacementGrid grid;
  int t_rounds = 0;
  Quadrature quadrature = Quadrature::q;
  RealMatrix<double> probs;  // grid points x 2^T
  TableMetadata meta;

  int outcomes() const { return static_cast<int>(probs.cols()); }
};

inline void validate_probability_table(const ProbabilityTable& table,
                                       double row_tol = 1e-8) {
  if (table.probs.rows() != table.grid.size() ||
      table.probs.cols() != (std::int64_t{1} << table.t_rounds)) {
    throw DimensionMismatchError("probability table shape mismatch");
  }
  for (int i = 0; i < table.probs.rows(); ++i) {
    if (table.probs.row(i).minCoeff() < -1e-12) {
      throw NumericalError("probability below clipping tolerance at row " +
                           std::to_string(i));
    }
    if (std::abs(table.probs.row(i).sum() - 1.0) > row_tol) {
      throw NumericalError("probability row " + std::to_string(i) +
                           " does not sum to 1");
    }
  }
}

// Channel hooks used by the table builder.  `conditioned` returns the
// unnormalized branch state for the given outcome bit (trace = branch
// probability); `averaged` is the trace-preserving outcome-summed subround.
// Implementations must be safe to call concurrently.
struct SubroundChannels {
  std::function<DensityMatrix(const DensityMatrix&, int, Quadrature,
                              const Gauge&)>
      conditioned;
  std::function<DensityMatrix(const DensityMatrix&, Quadrature, const Gauge&)>
      averaged;
  std::string label = "noiseless";
};

// Noiseless channels from cached Kraus kits, one per quadrature and gauge
// bit.  The conditioned branch includes the feedback displacement that
// completes the interrupted small step, so the averaged map coincides with
// the autonomous (reset-based) subround.
class NoiselessChannels {
 public:
  explicit NoiselessChannels(const SbsParams& params) {
    for (Quadrature x : {Quadrature::q, Quadrature::p}) {
      for (int bit : {0, 1}) {
        SbsParams p = params;
        p.pad = 0;
        if (x == Quadrature::q) {
          p.gauge.jq = bit;
        } else {
          p.gauge.jp = bit;
        }
        kit(x, bit) = make_subround_kit(p, x);
      }
    }
  }

  DensityMatrix conditioned(const DensityMatrix& rho, int bit, Quadrature x,
                            const Gauge& g) const {
    const Operator& c = kit(x, gauge_bit(g, x)).conditioned[bit];
    return c * rho * c.adjoint();
  }

  DensityMatrix averaged(const DensityMatrix& rho, Quadrature x,
                         const Gauge& g) const {
    const SubroundKit& k = kit(x, gauge_bit(g, x));
    DensityMatrix out = k.conditioned[0] * rho * k.conditioned[0].adjoint();
    out += k.conditioned[1] * rho * k.conditioned[1].adjoint();
    return out;
  }

 private:
  SubroundKit& kit(Quadrature x, int bit) {
    return kits_[x == Quadrature::p][bit];
  }
  const SubroundKit& kit(Quadrature x, int bit) const {
    return kits_[x == Quadrature::p][bit];
  }
  SubroundKit kits_[2][2];
};

inline SubroundChannels make_noiseless_channels(const SbsParams& params) {
  auto impl = std::make_shared<NoiselessChannels>(params);
  SubroundChannels ch;
  ch.conditioned = [impl](const DensityMatrix& rho, int bit, Quadrature x,
                          const Gauge& g) {
    return impl->conditioned(rho, bit, x, g);
  };
  ch.averaged = [impl](const DensityMatrix& rho, Quadrature x,
                       const Gauge& g) { return impl->averaged(rho, x, g); };
  ch.label = "noiseless";
  return ch;
}

inline SubroundChannels make_noisy_channels(const SbsParams& params,
                                            const NoiseParams& noise) {
  if (!noise.any_enabled()) return make_noiseless_channels(params);
  auto impl = std::make_shared<NoisySubroundEngine>(params, noise);
  SubroundChannels ch;
  ch.conditioned = [impl](const DensityMatrix& rho, int bit, Quadrature x,
                          const Gauge& g) {
    return impl->conditioned_unnormalized(rho, bit, x, g);
  };
  ch.averaged = [impl](const DensityMatrix& rho, Quadrature x,
                       const Gauge& g) { return impl->autonomous(rho, x, g); };
  ch.label = "lindblad";
  return ch;
}

// Noisy subround channels compiled into dense superoperators on the cavity
// space.  Construction sweeps a Hermitian operator basis through the
// master-equation engine, one integration per basis element and quadrature
// and gauge bit (the g/e branches and the autonomous map share it); after
// that every channel application is a single matrix-vector product.  The
// upfront sweep pays off whenever a channel is applied many more than dim^2
// times, e.g. in exact outcome trees over several rounds.
class CompiledNoisyChannels {
 public:
  CompiledNoisyChannels(const SbsParams& params, const NoiseParams& noise)
      : dim_(params.cavity_dim) {
    const double bytes = 12.0 * 16.0 * std::pow(double(dim_), 4.0);
    if (bytes > 2.5e9) {
      throw ResourceError(
          "compiled noisy channels at cavity_dim " + std::to_string(dim_) +
          " would need " + std::to_string(bytes / 1e9) + " GB");
    }
    const NoisySubroundEngine engine(params, noise);
    const int n2 = dim_ * dim_;
    for (int xi = 0; xi < 2; ++xi) {
      const Quadrature x = xi == 0 ? Quadrature::q : Quadrature::p;
      for (int jb = 0; jb < 2; ++jb) {
        Gauge g;
        (x == Quadrature::q ? g.jq : g.jp) = jb;
        for (int bit = 0; bit < 2; ++bit) cond_[xi][jb][bit].resize(n2, n2);
        avg_[xi][jb].resize(n2, n2);

        DensityMatrix basis = DensityMatrix::Zero(dim_, dim_);
        const std::complex<double> im(0.0, 1.0);
        for (int j = 0; j < dim_; ++j) {
          for (int i = 0; i <= j; ++i) {
            if (i == j) {
              basis.setZero();
              basis(i, i) = 1.0;
              const auto img = engine.branches(basis, x, g);
              set_column(xi, jb, i + dim_ * i, img);
              continue;
            }
            basis.setZero();
            basis(i, j) = 1.0;
            basis(j, i) = 1.0;
            const auto sym = engine.branches(basis, x, g);
            basis(i, j) = im;
            basis(j, i) = -im;
            const auto skew = engine.branches(basis, x, g);
            // |i><j| = (sym - i skew) / 2 and |j><i| = (sym + i skew) / 2.
            set_column(xi, jb, i + dim_ * j, combine(sym, skew, -im));
            set_column(xi, jb, j + dim_ * i, combine(sym, skew, im));
          }
        }
      }
    }
  }

  DensityMatrix conditioned(const DensityMatrix& rho, int bit, Quadrature x,
                            const Gauge& g) const {
    if (bit != 0 && bit != 1) {
      throw ConfigError("measurement bit must be 0 (g) or 1 (e)");
    }
    return apply(cond_[x == Quadrature::p][gauge_bit(g, x)][bit], rho);
  }

  DensityMatrix averaged(const DensityMatrix& rho, Quadrature x,
                         const Gauge& g) const {
    return apply(avg_[x == Quadrature::p][gauge_bit(g, x)], rho);
  }

  int cavity_dim() const { return dim_; }

 private:
  static NoisySubroundEngine::Branches combine(
      const NoisySubroundEngine::Branches& sym,
      const NoisySubroundEngine::Branches& skew, std::complex<double> phase) {
    NoisySubroundEngine::Branches out;
    out.conditioned_g =
        0.5 * (sym.conditioned_g + phase * skew.conditioned_g);
    out.conditioned_e =
        0.5 * (sym.conditioned_e + phase * skew.conditioned_e);
    out.autonomous = 0.5 * (sym.autonomous + phase * skew.autonomous);
    return out;
  }

  void set_column(int xi, int jb, int col,
                  const NoisySubroundEngine::Branches& img) {
    const int n2 = dim_ * dim_;
    cond_[xi][jb][0].col(col) =
        Eigen::Map<const Vector<double>>(img.conditioned_g.data(), n2);
    cond_[xi][jb][1].col(col) =
        Eigen::Map<const Vector<double>>(img.conditioned_e.data(), n2);
    avg_[xi][jb].col(col) =
        Eigen::Map<const Vector<double>>(img.autonomous.data(), n2);
  }

  DensityMatrix apply(const Matrix<double>& map, const DensityMatrix& rho)
      const {
    check_dim(rho.rows(), rho.cols(), dim_, "CompiledNoisyChannels input");
    const Eigen::Map<const Vector<double>> v(rho.data(), dim_ * dim_);
    const Vector<double> w = map * v;
    return Eigen::Map<const DensityMatrix>(w.data(), dim_, dim_);
  }

  int dim_;
  std::array<std::array<std::array<Matrix<double>, 2>, 2>, 2> cond_;
  std::array<std::array<Matrix<double>, 2>, 2> avg_;
};

inline SubroundChannels make_compiled_noisy_channels(const SbsParams& params,
                                                     const NoiseParams& noise) {
  if (!noise.any_enabled()) return make_noiseless_channels(params);
  auto impl = std::make_shared<CompiledNoisyChannels>(params, noise);
  SubroundChannels ch;
  ch.conditioned = [impl](const DensityMatrix& rho, int bit, Quadrature x,
                          const Gauge& g) {
    return impl->conditioned(rho, bit, x, g);
  };
  ch.averaged = [impl](const DensityMatrix& rho, Quadrature x,
                       const Gauge& g) { return impl->averaged(rho, x, g); };
  ch.label = "lindblad-compiled";
  return ch;
}

namespace detail {

// Runs f(i) for i in [0, n), optionally on several threads.  Each index is
// an independent unit writing to its own output slot, so results do not
// depend on the worker count.  The first exception thrown is rethrown.
template <typename F>
void parallel_for_index(int n, int workers, F&& f) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto run = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(run);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct RoundGauges {
  Gauge at_q;
  Gauge at_p;
};

inline std::vector<RoundGauges> round_gauge_schedule(Gauge g, int t_rounds) {
  std::vector<RoundGauges> schedule(t_rounds);
  for (int t = 0; t < t_rounds; ++t) {
    schedule[t].at_q = g;
    g = after_subround(g, Quadrature::q);
    schedule[t].at_p = g;
    g = after_subround(g, Quadrature::p);
  }
  return schedule;
}

// Depth-first walk of the outcome tree; writes leaf traces into `row`.
inline void expand_outcomes(const DensityMatrix& rho, int depth, int prefix,
                            int t_rounds, Quadrature x,
                            const SubroundChannels& channels,
                            const std::vector<RoundGauges>& schedule,
                            RealVector<double>& row) {
  if (depth == t_rounds) {
    row(prefix) = rho.trace().real();
    return;
  }
  const RoundGauges& g = schedule[depth];
  if (x == Quadrature::q) {
    for (int bit = 0; bit < 2; ++bit) {
      DensityMatrix child =
          channels.conditioned(rho, bit, Quadrature::q, g.at_q);
      child = channels.averaged(child, Quadrature::p, g.at_p);
      expand_outcomes(child, depth + 1, (prefix << 1) | bit, t_rounds, x,
                      channels, schedule, row);
    }
  } else {
    const DensityMatrix summed = channels.averaged(rho, Quadrature::q, g.at_q);
    for (int bit = 0; bit < 2; ++bit) {
      DensityMatrix child =
          channels.conditioned(summed, bit, Quadrature::p, g.at_p);
      expand_outcomes(child, depth + 1, (prefix << 1) | bit, t_rounds, x,
                      channels, schedule, row);
    }
  }
}

}  // namespace detail

struct TableBuildOptions {
  int workers = 1;
  std::int64_t max_entries = std::int64_t{1} << 24;
  // Reuse p(b | -x0) = p(~b | x0) to compute only half the grid.  Valid
  // only for noiseless channels acting on a parity-symmetric initial state
  // at gauge (0,0); qubit relaxation breaks the symmetry.
  bool exploit_parity = false;
};

inline ProbabilityTable bitstring_probabilities(
    const DensityMatrix& initial_state, const DisplacementGrid& grid,
    int t_rounds, const SbsParams& params, Quadrature x,
    const SubroundChannels* channels = nullptr,
    const TableBuildOptions& options = {}) {
  validate_params(params);
  grid.validate();
  if (t_rounds < 1 || t_rounds > 24) {
    throw DomainError("round count must be in [1, 24]");
  }
  const std::int64_t entries =
      std::int64_t{grid.size()} * (std::int64_t{1} << t_rounds);
  if (entries > options.max_entries) {
    throw ResourceError("table of " + std::to_string(entries) +
                        " entries exceeds the configured budget");
  }
  const int dim = params.cavity_dim;
  check_dim(initial_state, dim, "bitstring_probabilities initial state");

  SubroundChannels owned;
  if (channels == nullptr) {
    owned = make_noiseless_channels(params);
    channels = &owned;
  }
  const auto schedule =
      detail::round_gauge_schedule(params.gauge, t_rounds);
  const QuadratureDisplacer displace(x, dim, params.leak_threshold);

  ProbabilityTable table;
  table.grid = grid;
  table.t_rounds = t_rounds;
  table.quadrature = x;
  table.probs.setZero(grid.size(), std::int64_t{1} << t_rounds);
  table.meta.delta = params.delta;
  table.meta.channel = channels->label;

  std::vector<int> rows_to_build;
  for (int i = 0; i < grid.size(); ++i) {
    if (options.exploit_parity && grid.values(i) < 0.0) continue;
    rows_to_build.push_back(i);
  }

  detail::parallel_for_index(
      static_cast<int>(rows_to_build.size()), options.workers, [&](int k) {
        const int i = rows_to_build[k];
        const Operator d = displace(grid.values(i));
        const DensityMatrix rho0 = d * initial_state * d.adjoint();
        RealVector<double> row =
            RealVector<double>::Zero(std::int64_t{1} << t_rounds);
        detail::expand_outcomes(rho0, 0, 0, t_rounds, x, *channels, schedule,
                                row);
        table.probs.row(i) = row.transpose();
      });

  if (options.exploit_parity) {
    const int n = grid.size();
    const int mask = (1 << t_rounds) - 1;
    for (int i = 0; i < n; ++i) {
      if (grid.values(i) >= 0.0) break;
      const int mirror = n - 1 - i;
      for (int b = 0; b <= mask; ++b) {
        table.probs(i, b) = table.probs(mirror, mask ^ b);
      }
    }
  }

  // Clip floating-point dust, then enforce the row-sum contract.
  for (int i = 0; i < table.probs.rows(); ++i) {
    for (int j = 0; j < table.probs.cols(); ++j) {
      double& v = table.probs(i, j);
      if (v < 0.0 && v >= -1e-12) v = 0.0;
    }
  }
  validate_probability_table(table);
  return table;
}

// ---------------------------------------------------------------------------
// Estimators

struct EstimatorTable {
  enum class Kind { mle, bayes };
  Kind kind = Kind::mle;
  double sigma = 0.0;  // Bayesian prior width, 0 for MLE
  RealVector<double> estimate;  // indexed by bitstring
};

// Per-bitstring argmax of the likelihood over the flat-prior support.
// Ties break toward the smallest |x0|, then toward the negative member.
inline EstimatorTable mle_estimators(const ProbabilityTable& table,
                                     const Prior& prior) {
  if (prior.kind != Prior::Kind::flat) {
    throw DomainError("maximum-likelihood estimation uses a flat prior");
  }
  const auto& xs = table.grid.values;
  if (prior.lo < xs(0) - 1e-12 || prior.hi > xs(xs.size() - 1) + 1e-12) {
    throw GridError("flat prior support exceeds the table grid");
  }
  EstimatorTable est;
  est.kind = EstimatorTable::Kind::mle;
  est.estimate.resize(table.outcomes());
  for (int j = 0; j < table.outcomes(); ++j) {
    double best_p = -1.0;
    double best_x = 0.0;
    for (int i = 0; i < table.grid.size(); ++i) {
      const double x = xs(i);
      if (x < prior.lo - 1e-12 || x > prior.hi + 1e-12) continue;
      const double p = table.probs(i, j);
      const bool better =
          p > best_p ||
          (p == best_p && (std::abs(x) < std::abs(best_x) ||
                           (std::abs(x) == std::abs(best_x) && x < best_x)));
      if (better) {
        best_p = p;
        best_x = x;
      }
    }
    est.estimate(j) = best_x;
  }
  return est;
}

// Posterior mean under a Gaussian prior, by trapezoidal quadrature over the
// table grid.  Requires the grid to carry all but < 1e-4 of the posterior
// mass; the out-of-support mass is bounded by the prior tail (likelihoods
// never exceed 1).
inline EstimatorTable bayes_estimators(const ProbabilityTable& table,
                                       double sigma,
                                       double mass_tolerance = 1e-4) {
  if (!(sigma > 0.0)) throw DomainError("bayes prior needs sigma > 0");
  const auto& xs = table.grid.values;
  const RealVector<double> w = trapezoid_weights(table.grid);
  const double edge = std::min(std::abs(xs(0)), std::abs(xs(xs.size() - 1)));
  const double tail_mass = std::erfc(edge / (sigma * std::sqrt(2.0)));

  EstimatorTable est;
  est.kind = EstimatorTable::Kind::bayes;
  est.sigma = sigma;
  est.estimate.resize(table.outcomes());
  RealVector<double> prior_weights(table.grid.size());
  for (int i = 0; i < table.grid.size(); ++i) {
    prior_weights(i) = w(i) * gaussian_density(xs(i), sigma);
  }
  for (int j = 0; j < table.outcomes(); ++j) {
    double z = 0.0;
    double first_moment = 0.0;
    for (int i = 0; i < table.grid.size(); ++i) {
      const double u = prior_weights(i) * table.probs(i, j);
      z += u;
      first_moment += u * xs(i);
    }
    if (z <= 0.0) {
      est.estimate(j) = 0.0;  // unreachable record; never weighted in MSE
      continue;
    }
    if (tail_mass > mass_tolerance * (z + tail_mass)) {
      throw SupportError("posterior support grid too narrow for record " +
                         bitstring_label(j, table.t_rounds));
    }
    est.estimate(j) = first_moment / z;
  }
  return est;
}

// ---------------------------------------------------------------------------
// Metrology figures

inline double mse_at_index(const ProbabilityTable& table,
                           const EstimatorTable& est, int i) {
  const double x0 = table.grid.values(i);
  double out = 0.0;
  for (int j = 0; j < table.outcomes(); ++j) {
    const double d = est.estimate(j) - x0;
    out += table.probs(i, j) * d * d;
  }
  return out;
}

inline double mse(const ProbabilityTable& table, const EstimatorTable& est,
                  double x0) {
  return mse_at_index(table, est, table.grid.index_of(x0));
}

inline double mean_estimate_at_index(const ProbabilityTable& table,
                                     const EstimatorTable& est, int i) {
  double out = 0.0;
  for (int j = 0; j < table.outcomes(); ++j) {
    out += table.probs(i, j) * est.estimate(j);
  }
  return out;
}

inline double bias(const ProbabilityTable& table, const EstimatorTable& est,
                   double x0) {
  const int i = table.grid.index_of(x0);
  return mean_estimate_at_index(table, est, i) - x0;
}

namespace detail {

inline RealVector<double> prior_quadrature_weights(
    const DisplacementGrid& grid, const Prior& prior) {
  const RealVector<double> w = trapezoid_weights(grid);
  RealVector<double> out(grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    out(i) = w(i) * prior.density(grid.values(i));
  }
  return out;
}

}  // namespace detail

// Prior-weighted MSE, integrated over the table grid.
inline double averaged_mse(const ProbabilityTable& table,
                           const EstimatorTable& est, const Prior& prior) {
  const RealVector<double> w =
      detail::prior_quadrature_weights(table.grid, prior);
  double out = 0.0;
  for (int i = 0; i < table.grid.size(); ++i) {
    if (w(i) == 0.0) continue;
    out += w(i) * mse_at_index(table, est, i);
  }
  return out;
}

// Prior-weighted variance (over measurement records) of the squared error.
inline double mse_variance(const ProbabilityTable& table,
                           const EstimatorTable& est, const Prior& prior) {
  const RealVector<double> w =
      detail::prior_quadrature_weights(table.grid, prior);
  double out = 0.0;
  for (int i = 0; i < table.grid.size(); ++i) {
    if (w(i) == 0.0) continue;
    const double x0 = table.grid.values(i);
    double m1 = 0.0;
    double m2 = 0.0;
    for (int j = 0; j < table.outcomes(); ++j) {
      const double s = (est.estimate(j) - x0) * (est.estimate(j) - x0);
      m1 += table.probs(i, j) * s;
      m2 += table.probs(i, j) * s * s;
    }
    out += w(i) * (m2 - m1 * m1);
  }
  return out;
}

namespace detail {

inline void require_interior(const ProbabilityTable& table, int i) {
  if (i <= 0 || i >= table.grid.size() - 1) {
    throw GridError("derivative needs an interior grid point");
  }
}

}  // namespace detail

// Classical Fisher information of the record distribution at a grid point,
// with central-difference derivatives.  Vanishing probabilities are clamped
// at 1e-14 in the denominator to absorb floating-point dust.
inline double fisher_information(const ProbabilityTable& table, double x0) {
  const int i = table.grid.index_of(x0);
  detail::require_interior(table, i);
  const double dx = table.grid.values(i + 1) - table.grid.values(i - 1);
  double f = 0.0;
  for (int j = 0; j < table.outcomes(); ++j) {
    const double dp = (table.probs(i + 1, j) - table.probs(i - 1, j)) / dx;
    f += dp * dp / std::max(table.probs(i, j), 1e-14);
  }
  return f;
}

// Sensitivity sqrt(E[(x~ - x0)^2]) / |d E[x~] / d x0| with the raw MSE in
// the numerator and a central-difference slope in the denominator.
inline double sensitivity(const ProbabilityTable& table,
                          const EstimatorTable& est, double x0) {
  const int i = table.grid.index_of(x0);
  detail::require_interior(table, i);
  const double dx = table.grid.values(i + 1) - table.grid.values(i - 1);
  const double slope = (mean_estimate_at_index(table, est, i + 1) -
                        mean_estimate_at_index(table, est, i - 1)) /
                       dx;
  if (std::abs(slope) < 1e-10) {
    throw DegenerateDerivativeError(
        "estimator mean is flat at x0 = " + std::to_string(x0));
  }
  return std::sqrt(mse_at_index(table, est, i)) / std::abs(slope);
}

}  // namespace gkpsense
