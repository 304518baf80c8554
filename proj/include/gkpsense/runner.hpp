#pragma once
// Experiment dispatcher: runs a validated config, writes CSV/JSON artifacts
// plus a manifest, and reuses cached probability tables when allowed.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "gkpsense/backaction.hpp"
#include "gkpsense/bounds.hpp"
#include "gkpsense/config.hpp"
#include "gkpsense/estimation.hpp"
#include "gkpsense/io.hpp"
#include "gkpsense/noise.hpp"
#include "gkpsense/sbs.hpp"

namespace gkpsense {

namespace detail {

inline int default_state_rounds(const std::optional<NoiseParams>& noise) {
  return noise ? 100 : 120;
}

inline DensityMatrix prepared_state(const SbsParams& params,
                                    const std::optional<NoiseParams>& noise,
                                    int rounds) {
  const int r = rounds > 0 ? rounds : default_state_rounds(noise);
  if (noise) return noisy_steady_state(params, *noise, r).rho;
  return prepare_qunaught(params, r).rho;
}

inline std::string sbs_token(const SbsParams& p) {
  std::ostringstream s;
  s << format_double(p.delta) << '|' << p.cavity_dim << '|' << p.pad << '|'
    << format_double(p.leak_threshold) << '|' << p.gauge.jq << p.gauge.jp;
  return s.str();
}

inline std::string noise_token(const std::optional<NoiseParams>& n) {
  if (!n) return "noiseless";
  std::ostringstream s;
  s << format_double(n->t1_qubit) << '|' << format_double(n->t2_qubit) << '|'
    << format_double(n->t1_cavity) << '|' << format_double(n->t2_cavity)
    << '|' << format_double(n->eta) << '|' << format_double(n->t_cd) << '|'
    << n->integrator_steps << '|' << n->qubit_relax << n->qubit_dephase
    << n->cavity_relax << n->cavity_dephase;
  return s.str();
}

}  // namespace detail

// Everything that determines a probability table's values; used as the
// cache key (worker count and parity shortcuts are excluded because they
// do not change the result).
struct TableRequest {
  SbsParams params;
  int t_rounds = 4;
  Quadrature quadrature = Quadrature::q;
  DisplacementGrid grid;
  std::optional<NoiseParams> noise;
  int state_rounds = 0;  // 0 -> default
};

inline std::string table_cache_key(const TableRequest& request) {
  std::ostringstream s;
  s << "table1|" << detail::sbs_token(request.params) << '|'
    << request.t_rounds << '|' << to_string(request.quadrature) << '|'
    << detail::noise_token(request.noise) << '|' << request.state_rounds;
  for (int i = 0; i < request.grid.size(); ++i) {
    s << '|' << format_double(request.grid.values(i));
  }
  return hex64(fnv1a64(s.str()));
}

// Computes the table or loads it from the cache directory; cached reuse is
// bitwise identical to cold computation because the cache stores raw
// doubles.
inline ProbabilityTable obtain_table(const TableRequest& request,
                                     const ExperimentConfig& config,
                                     std::vector<std::string>* outputs) {
  namespace fs = std::filesystem;
  fs::path cache_file;
  if (config.use_cache) {
    const fs::path cache_dir = fs::path(config.out_dir) / "cache";
    std::error_code ec;
    fs::create_directories(cache_dir, ec);
    if (ec) throw IoError("cannot create " + cache_dir.string());
    cache_file = cache_dir / (table_cache_key(request) + ".tbl");
    if (fs::exists(cache_file)) {
      return load_probability_table(cache_file);
    }
  }
  const DensityMatrix state = detail::prepared_state(
      request.params, request.noise, request.state_rounds);
  SubroundChannels channels =
      request.noise ? make_noisy_channels(request.params, *request.noise)
                    : make_noiseless_channels(request.params);
  TableBuildOptions options;
  options.workers = config.workers;
  options.exploit_parity = !request.noise.has_value();
  ProbabilityTable table =
      bitstring_probabilities(state, request.grid, request.t_rounds,
                              request.params, request.quadrature, &channels,
                              options);
  table.meta.state = "stabilized qunaught";
  if (config.use_cache) {
    save_probability_table(table, cache_file);
    if (outputs) outputs->push_back(cache_file.filename().string());
  }
  return table;
}

namespace detail {

inline std::filesystem::path out_path(const ExperimentConfig& config,
                                      const std::string& name,
                                      RunManifest& manifest) {
  manifest.outputs.push_back(name);
  return std::filesystem::path(config.out_dir) / name;
}

// ---------------------------------------------------------------------------
// Job implementations

inline void run_prepare(const PrepareJob& job, const ExperimentConfig& config,
                        RunManifest& manifest) {
  const int rounds = job.rounds > 0 ? job.rounds
                                    : default_state_rounds(job.noise);
  const SubroundChannels channels =
      job.noise ? make_noisy_channels(job.params, *job.noise)
                : make_noiseless_channels(job.params);
  const int dim = job.params.cavity_dim;
  const Operator stab_q =
      finite_energy_stabilizer(job.params.delta, Quadrature::q, dim);
  const Operator stab_p =
      finite_energy_stabilizer(job.params.delta, Quadrature::p, dim);

  CsvWriter csv(out_path(config, "prepare.csv", manifest));
  csv.row({"round", "stabilizer_q", "stabilizer_p", "nbar", "purity"});
  DensityMatrix rho = density_from_state(vacuum_state(dim));
  Gauge g = job.params.gauge;
  for (int t = 1; t <= rounds; ++t) {
    rho = channels.averaged(rho, Quadrature::q, g);
    g = after_subround(g, Quadrature::q);
    rho = channels.averaged(rho, Quadrature::p, g);
    g = after_subround(g, Quadrature::p);
    csv.row({std::to_string(t),
             format_double(std::abs(expectation_value(rho, stab_q))),
             format_double(std::abs(expectation_value(rho, stab_p))),
             format_double(mean_photon_number(rho)),
             format_double(purity(rho))});
  }
  csv.close();

  nlohmann::json summary;
  summary["rounds"] = rounds;
  summary["delta"] = job.params.delta;
  summary["cavity_dim"] = dim;
  summary["noisy"] = job.noise.has_value();
  summary["stabilizer_q"] = std::abs(expectation_value(rho, stab_q));
  summary["stabilizer_p"] = std::abs(expectation_value(rho, stab_p));
  summary["nbar"] = mean_photon_number(rho);
  summary["purity"] = purity(rho);
  write_json(summary, out_path(config, "prepare_summary.json", manifest));
}

inline void run_probabilities(const ProbabilitiesJob& job,
                              const ExperimentConfig& config,
                              RunManifest& manifest) {
  TableRequest request;
  request.params = job.params;
  request.t_rounds = job.t_rounds;
  request.quadrature = job.quadrature;
  request.grid =
      DisplacementGrid::symmetric(job.grid.half_width, job.grid.count);
  request.noise = job.noise;
  request.state_rounds = job.state_rounds;
  const ProbabilityTable table = obtain_table(request, config, nullptr);
  write_probability_table_csv(
      table, out_path(config, "probabilities.csv", manifest));
}

inline void run_estimate(const EstimateJob& job,
                         const ExperimentConfig& config,
                         RunManifest& manifest) {
  TableRequest request;
  request.params = job.params;
  request.t_rounds = job.t_rounds;
  request.quadrature = job.quadrature;
  request.grid =
      DisplacementGrid::symmetric(job.grid.half_width, job.grid.count);
  request.noise = job.noise;
  request.state_rounds = job.state_rounds;
  const ProbabilityTable table = obtain_table(request, config, nullptr);

  EstimatorTable est;
  Prior prior = Prior::flat_range(request.grid.values(0),
                                  request.grid.values(request.grid.size() - 1));
  if (job.estimator == "bayes") {
    prior = Prior::gaussian(job.sigma);
    est = bayes_estimators(table, job.sigma);
  } else {
    est = mle_estimators(table, prior);
  }

  CsvWriter csv(out_path(config, "estimate.csv", manifest));
  csv.row({"x0", "mean_estimate", "bias", "mse", "fisher", "sensitivity"});
  for (int i = 0; i < table.grid.size(); ++i) {
    const double x0 = table.grid.values(i);
    const double mean = mean_estimate_at_index(table, est, i);
    const double err = mse_at_index(table, est, i);
    std::string fisher = "nan";
    std::string sens = "nan";
    if (i > 0 && i < table.grid.size() - 1) {
      fisher = format_double(fisher_information(table, x0));
      try {
        sens = format_double(sensitivity(table, est, x0));
      } catch (const DegenerateDerivativeError&) {
        sens = "nan";
      }
    }
    csv.row({format_double(x0), format_double(mean),
             format_double(mean - x0), format_double(err), fisher, sens});
  }
  csv.close();

  nlohmann::json summary;
  summary["estimator"] = job.estimator;
  summary["t_rounds"] = job.t_rounds;
  summary["quadrature"] = to_string(job.quadrature);
  summary["averaged_mse"] = averaged_mse(table, est, prior);
  summary["mse_variance"] = mse_variance(table, est, prior);
  if (summary["averaged_mse"].get<double>() > 0.0) {
    summary["variance_mse_ratio"] =
        summary["mse_variance"].get<double>() /
        summary["averaged_mse"].get<double>();
  }
  if (job.estimator == "bayes") summary["sigma"] = job.sigma;
  write_json(summary, out_path(config, "estimate_summary.json", manifest));
}

inline void run_bounds(const BoundsJob& job, const ExperimentConfig& config,
                       RunManifest& manifest) {
  double nbar = 0.0;
  if (job.nbar) {
    nbar = *job.nbar;
  } else {
    const DensityMatrix rho =
        prepared_state(job.params, std::nullopt, job.state_rounds);
    nbar = mean_photon_number(rho);
  }

  CsvWriter csv(out_path(config, "bounds.csv", manifest));
  csv.row({"name", "value"});
  auto row = [&](const char* name, double value) {
    csv.row({name, format_double(value)});
  };
  row("nbar", nbar);
  row("qcrb_total_mse", qcrb_total_mse(nbar));
  row("sensitivity_quantum_limit", sensitivity_quantum_limit(nbar));
  row("uhlmann_ratio", uhlmann_ratio(nbar));
  row("holevo_upper_mse", holevo_upper_mse(nbar));
  row("holevo_upper_sensitivity", holevo_upper_sensitivity(nbar));
  row("gaussian_limit_total_mse", gaussian_limit_total_mse(job.sigma));
  row("coherent_heterodyne_total_mse", coherent_heterodyne_total_mse());
  if (job.target_total_mse) {
    const double t = *job.target_total_mse;
    const double r_flat = tmsv_required_squeezing(t);
    const double r_matched = tmsv_required_squeezing(t, job.sigma);
    row("target_total_mse", t);
    row("tmsv_squeezing_flat", r_flat);
    row("tmsv_squeezing_matched", r_matched);
    row("tmsv_squeezing_db_flat", squeezing_db(r_flat));
    row("tmsv_squeezing_db_matched", squeezing_db(r_matched));
    row("tmsv_photons_per_mode", tmsv_photons_per_mode(r_matched));
    row("tmsv_photons_total", tmsv_photons_total(r_matched));
  }
  csv.close();
}

inline void run_backaction_job(const BackactionJob& job,
                               const ExperimentConfig& config,
                               RunManifest& manifest) {
  BackactionConfig bc = job.config;
  bc.seed = config.seed;
  bc.workers = config.workers;
  const RunRecord record = run_backaction_sequence(bc);
  write_run_record_csv(record, out_path(config, "backaction.csv", manifest));
  write_json(run_record_summary_json(record),
             out_path(config, "backaction_summary.json", manifest));
  if (job.write_samples) {
    write_run_record_samples_csv(
        record, out_path(config, "backaction_samples.csv", manifest));
  }
}

inline void run_noise_sweep(const NoiseSweepJob& job,
                            const ExperimentConfig& config,
                            RunManifest& manifest) {
  const PreparationResult clean = prepare_qunaught(job.params, 120);
  const FidelityReference reference(clean.rho);

  CsvWriter csv(out_path(config, "noise_sweep.csv", manifest));
  csv.row({"eta", "fidelity", "nbar", "purity", "converged"});
  for (double eta : job.etas) {
    NoiseParams noise = job.base;
    noise.eta = eta;
    const PreparationResult res =
        noisy_steady_state(job.params, noise, job.rounds);
    csv.row({format_double(eta), format_double(reference(res.rho)),
             format_double(mean_photon_number(res.rho)),
             format_double(purity(res.rho)),
             res.converged ? "1" : "0"});
  }
  csv.close();

  if (job.isolate_channels) {
    CsvWriter iso(out_path(config, "noise_channels.csv", manifest));
    iso.row({"channel", "fidelity"});
    const struct {
      NoiseChannel channel;
      const char* name;
    } channels[] = {{NoiseChannel::qubit_relax, "qubit_relax"},
                    {NoiseChannel::qubit_dephase, "qubit_dephase"},
                    {NoiseChannel::cavity_relax, "cavity_relax"},
                    {NoiseChannel::cavity_dephase, "cavity_dephase"}};
    for (const auto& entry : channels) {
      NoiseParams noise = NoiseParams::only(entry.channel);
      noise.eta = job.base.eta;
      noise.t_cd = job.base.t_cd;
      noise.integrator_steps = job.base.integrator_steps;
      const PreparationResult res =
          noisy_steady_state(job.params, noise, job.rounds);
      iso.row({entry.name, format_double(reference(res.rho))});
    }
    iso.close();
  }
}

// Decay of the gauge-aligned outcome probability over repeated rounds for a
// fixed initial offset, compared against the closed-form mean-probability
// models.  Returns the largest deviation from the refined model at the
// reference envelope delta = 0.3.
inline double run_figure_decay(const ExperimentConfig& config,
                               RunManifest& manifest) {
  const BudgetLimits limits = budget_limits(config.budget);
  const double l = qunaught_spacing<double>();
  const double q0 = l / 4.0;
  const int rounds = 30;

  CsvWriter csv(out_path(config, "figure2.csv", manifest));
  csv.row({"delta", "round", "simulated", "model_simple", "model_refined"});
  double max_dev_reference = 0.0;
  for (double delta : {0.25, 0.3, 0.35}) {
    SbsParams params;
    params.delta = delta;
    params.cavity_dim = limits.cavity_dim;
    // The widest envelope swept here carries ~1e-6 of intrinsic population in
    // the top Fock levels at the smaller budget cutoff, so the guard must sit
    // above that while still flagging genuinely undersized cutoffs.
    params.leak_threshold = 1e-5;
    const DensityMatrix base = prepare_qunaught(params, 120).rho;
    const QuadratureDisplacer displace(Quadrature::q, params.cavity_dim,
                                       params.leak_threshold);
    const Operator d = displace(q0);
    DensityMatrix rho = d * base * d.adjoint();
    const SubroundChannels channels = make_noiseless_channels(params);
    Gauge g = params.gauge;
    for (int t = 1; t <= rounds; ++t) {
      const int aligned_bit = gauge_bit(g, Quadrature::q);
      const double p_aligned =
          channels.conditioned(rho, aligned_bit, Quadrature::q, g)
              .trace()
              .real();
      const double simple =
          predicted_mean_probability(q0, t, delta, {}, DecayModel::simple);
      const double refined =
          predicted_mean_probability(q0, t, delta, {}, DecayModel::refined);
      csv.row({format_double(delta), std::to_string(t),
               format_double(p_aligned), format_double(simple),
               format_double(refined)});
      if (delta == 0.3) {
        max_dev_reference =
            std::max(max_dev_reference, std::abs(p_aligned - refined));
      }
      rho = channels.averaged(rho, Quadrature::q, g);
      g = after_subround(g, Quadrature::q);
      rho = channels.averaged(rho, Quadrature::p, g);
      g = after_subround(g, Quadrature::p);
    }
  }
  csv.close();
  return max_dev_reference;
}

// Single-subround outcome probability against the closed-form model, plus
// the multi-round decay at the same envelope.  Returns the largest
// single-subround deviation.
inline double run_figure_subround(const ExperimentConfig& config,
                                  RunManifest& manifest) {
  const BudgetLimits limits = budget_limits(config.budget);
  const double l = qunaught_spacing<double>();
  SbsParams params;
  params.cavity_dim = limits.cavity_dim;
  // Leave headroom over the state's intrinsic tail at the smaller budget
  // cutoff; see the matching guard in the decay figure.
  params.leak_threshold = 1e-6;
  const DensityMatrix base = prepare_qunaught(params, 120).rho;
  const SubroundChannels channels = make_noiseless_channels(params);
  const PhaseSpaceDisplacer displace(params.cavity_dim,
                                     params.leak_threshold);
  const auto env = envelope_constants<double>(params.delta);
  const double a1 = ProbFitParams{}.a1;
  const double d2 = params.delta * params.delta;

  CsvWriter csv(out_path(config, "figure7a.csv", manifest));
  csv.row({"q0", "simulated", "model"});
  double max_dev = 0.0;
  const int points = 26;
  for (int k = 0; k < points; ++k) {
    const double q0 = (l / 4.0) * k / (points - 1);
    const DensityMatrix rho = displace.apply(base, q0, l / 4.0);
    const double p_g =
        channels.conditioned(rho, 0, Quadrature::q, Gauge{}).trace().real();
    const double model =
        0.5 * (1.0 + std::exp(-a1 * d2) * std::sin(l * env.c * q0));
    csv.row({format_double(q0), format_double(p_g), format_double(model)});
    max_dev = std::max(max_dev, std::abs(p_g - model));
  }
  csv.close();
  return max_dev;
}

}  // namespace detail

// Runs one experiment and writes its artifacts plus manifest.json into the
// output directory.  Rethrows module errors unchanged so callers can map
// them onto process exit codes.
inline RunManifest run(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + config.out_dir);

  RunManifest manifest;
  manifest.experiment = to_string(config.kind);
  manifest.config_hash = config.config_hash;
  manifest.seed = config.seed;
  manifest.workers = config.workers;
  manifest.budget = to_string(config.budget);

  std::visit(
      [&](const auto& job) {
        using T = std::decay_t<decltype(job)>;
        if constexpr (std::is_same_v<T, PrepareJob>) {
          detail::run_prepare(job, config, manifest);
        } else if constexpr (std::is_same_v<T, ProbabilitiesJob>) {
          detail::run_probabilities(job, config, manifest);
        } else if constexpr (std::is_same_v<T, EstimateJob>) {
          detail::run_estimate(job, config, manifest);
        } else if constexpr (std::is_same_v<T, BoundsJob>) {
          detail::run_bounds(job, config, manifest);
        } else if constexpr (std::is_same_v<T, BackactionJob>) {
          detail::run_backaction_job(job, config, manifest);
        } else if constexpr (std::is_same_v<T, NoiseSweepJob>) {
          detail::run_noise_sweep(job, config, manifest);
        } else if constexpr (std::is_same_v<T, FigureJob>) {
          if (job.number == 2) {
            const double dev = detail::run_figure_decay(config, manifest);
            manifest.checks = {{"figure", 2},
                               {"tolerance", 0.03},
                               {"max_deviation", dev},
                               {"pass", dev < 0.03}};
          } else {
            const double dev = detail::run_figure_subround(config, manifest);
            manifest.checks = {{"figure", 7},
                               {"tolerance", 0.02},
                               {"max_deviation", dev},
                               {"pass", dev < 0.02}};
          }
        }
      },
      config.job);

  const auto stop = std::chrono::steady_clock::now();
  manifest.runtime_seconds =
      std::chrono::duration<double>(stop - start).count();
  emit_manifest(manifest, fs::path(config.out_dir) / "manifest.json");
  return manifest;
}

}  // namespace gkpsense
