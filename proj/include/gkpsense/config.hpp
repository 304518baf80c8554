#pragma once
// Versioned JSON experiment configuration with strict schema checking:
// unknown keys are rejected everywhere, and the canonical dump of the
// effective config is hashed into the run manifest.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gkpsense/backaction.hpp"
#include "gkpsense/errors.hpp"
#include "gkpsense/estimation.hpp"
#include "gkpsense/io.hpp"
#include "gkpsense/noise.hpp"
#include "gkpsense/sbs.hpp"

namespace gkpsense {

enum class ExperimentKind {
  prepare,
  probabilities,
  estimate,
  bounds,
  backaction,
  noise_sweep,
  figure,
};

inline std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::prepare: return "prepare";
    case ExperimentKind::probabilities: return "probabilities";
    case ExperimentKind::estimate: return "estimate";
    case ExperimentKind::bounds: return "bounds";
    case ExperimentKind::backaction: return "backaction";
    case ExperimentKind::noise_sweep: return "noise_sweep";
    case ExperimentKind::figure: return "figure";
  }
  throw ConfigError("unreachable experiment kind");
}

inline ExperimentKind experiment_kind_from(const std::string& name) {
  for (ExperimentKind kind :
       {ExperimentKind::prepare, ExperimentKind::probabilities,
        ExperimentKind::estimate, ExperimentKind::bounds,
        ExperimentKind::backaction, ExperimentKind::noise_sweep,
        ExperimentKind::figure}) {
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError("unknown experiment kind '" + name + "'");
}

// Scale presets: "ci" keeps every job under a few minutes, "paper" runs the
// full-resolution settings.
enum class Budget { ci, paper };

struct BudgetLimits {
  int cavity_dim = 100;
  int samples = 400;
  int max_t_rounds = 8;
};

inline BudgetLimits budget_limits(Budget budget) {
  if (budget == Budget::paper) return BudgetLimits{140, 4000, 10};
  return BudgetLimits{};
}

inline std::string to_string(Budget budget) {
  return budget == Budget::paper ? "paper" : "ci";
}

inline Budget budget_from(const std::string& name) {
  if (name == "ci") return Budget::ci;
  if (name == "paper") return Budget::paper;
  throw ConfigError("unknown budget '" + name + "' (expected ci or paper)");
}

namespace detail {

inline void check_keys(const nlohmann::json& obj,
                       const std::vector<std::string>& allowed,
                       const std::string& where) {
  if (!obj.is_object()) {
    throw ConfigError(where + " must be a JSON object");
  }
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) ==
        allowed.end()) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
T get_or(const nlohmann::json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("invalid value for '") + key + "'");
  }
}

}  // namespace detail

inline Quadrature quadrature_from(const std::string& name) {
  if (name == "q") return Quadrature::q;
  if (name == "p") return Quadrature::p;
  throw ConfigError("unknown quadrature '" + name + "' (expected q or p)");
}

inline SbsParams parse_sbs_params(const nlohmann::json& obj,
                                  const std::string& where,
                                  int default_cavity_dim) {
  detail::check_keys(obj, {"delta", "cavity_dim", "pad", "leak_threshold"},
                     where);
  SbsParams params;
  params.cavity_dim = default_cavity_dim;
  params.delta = detail::get_or(obj, "delta", params.delta);
  params.cavity_dim = detail::get_or(obj, "cavity_dim", params.cavity_dim);
  params.pad = detail::get_or(obj, "pad", params.pad);
  params.leak_threshold =
      detail::get_or(obj, "leak_threshold", params.leak_threshold);
  validate_params(params);
  return params;
}

inline NoiseParams parse_noise_params(const nlohmann::json& obj,
                                      const std::string& where) {
  detail::check_keys(obj,
                     {"t1_qubit", "t2_qubit", "t1_cavity", "t2_cavity", "eta",
                      "t_cd", "integrator_steps", "channels"},
                     where);
  NoiseParams noise;
  noise.t1_qubit = detail::get_or(obj, "t1_qubit", noise.t1_qubit);
  noise.t2_qubit = detail::get_or(obj, "t2_qubit", noise.t2_qubit);
  noise.t1_cavity = detail::get_or(obj, "t1_cavity", noise.t1_cavity);
  noise.t2_cavity = detail::get_or(obj, "t2_cavity", noise.t2_cavity);
  noise.eta = detail::get_or(obj, "eta", noise.eta);
  noise.t_cd = detail::get_or(obj, "t_cd", noise.t_cd);
  noise.integrator_steps =
      detail::get_or(obj, "integrator_steps", noise.integrator_steps);
  if (obj.contains("channels")) {
    noise.qubit_relax = false;
    noise.qubit_dephase = false;
    noise.cavity_relax = false;
    noise.cavity_dephase = false;
    for (const auto& entry : obj.at("channels")) {
      const std::string name = entry.get<std::string>();
      if (name == "qubit_relax") {
        noise.qubit_relax = true;
      } else if (name == "qubit_dephase") {
        noise.qubit_dephase = true;
      } else if (name == "cavity_relax") {
        noise.cavity_relax = true;
      } else if (name == "cavity_dephase") {
        noise.cavity_dephase = true;
      } else {
        throw ConfigError("unknown noise channel '" + name + "' in " + where);
      }
    }
  }
  validate_noise(noise);
  return noise;
}

// ---------------------------------------------------------------------------
// Job blocks

struct GridSpec {
  double half_width = 0.25 * qunaught_spacing<double>();
  int count = 51;
};

inline GridSpec parse_grid_spec(const nlohmann::json& obj,
                                const std::string& where) {
  detail::check_keys(obj, {"half_width", "count"}, where);
  GridSpec grid;
  grid.half_width = detail::get_or(obj, "half_width", grid.half_width);
  grid.count = detail::get_or(obj, "count", grid.count);
  if (!(grid.half_width > 0.0)) {
    throw ConfigError("grid half_width must be positive");
  }
  return grid;
}

struct PrepareJob {
  SbsParams params;
  int rounds = 0;  // 0 -> 120 noiseless, 100 noisy
  std::optional<NoiseParams> noise;
};

struct ProbabilitiesJob {
  SbsParams params;
  int t_rounds = 4;
  Quadrature quadrature = Quadrature::q;
  GridSpec grid;
  int state_rounds = 0;
  std::optional<NoiseParams> noise;
};

struct EstimateJob {
  SbsParams params;
  int t_rounds = 4;
  Quadrature quadrature = Quadrature::q;
  GridSpec grid;
  int state_rounds = 0;
  std::optional<NoiseParams> noise;
  std::string estimator = "mle";  // or "bayes"
  double sigma = 0.15 * qunaught_spacing<double>();
};

struct BoundsJob {
  std::optional<double> nbar;  // absent -> measure from a prepared state
  SbsParams params;
  int state_rounds = 120;
  double sigma = 0.15 * qunaught_spacing<double>();
  std::optional<double> target_total_mse;
};

struct BackactionJob {
  BackactionConfig config;
  bool write_samples = false;
};

struct NoiseSweepJob {
  SbsParams params;
  NoiseParams base;
  std::vector<double> etas = {0.25, 0.5, 1.0, 2.0};
  int rounds = 100;
  bool isolate_channels = false;
};

struct FigureJob {
  int number = 2;
};

using ExperimentJob =
    std::variant<PrepareJob, ProbabilitiesJob, EstimateJob, BoundsJob,
                 BackactionJob, NoiseSweepJob, FigureJob>;

struct ExperimentConfig {
  int schema_version = 1;
  ExperimentKind kind = ExperimentKind::prepare;
  Budget budget = Budget::ci;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  int workers = 1;
  bool use_cache = true;
  std::string config_hash;
  ExperimentJob job;
};

namespace detail {

inline std::optional<NoiseParams> parse_optional_noise(
    const nlohmann::json& obj, const std::string& where) {
  if (!obj.contains("noise")) return std::nullopt;
  return parse_noise_params(obj.at("noise"), where + ".noise");
}

inline ExperimentJob parse_job(ExperimentKind kind, const nlohmann::json& obj,
                               const BudgetLimits& limits) {
  const std::string where = to_string(kind);
  switch (kind) {
    case ExperimentKind::prepare: {
      check_keys(obj, {"params", "rounds", "noise"}, where);
      PrepareJob job;
      job.params = parse_sbs_params(obj.value("params", nlohmann::json::object()),
                                    where + ".params", limits.cavity_dim);
      job.rounds = get_or(obj, "rounds", job.rounds);
      job.noise = parse_optional_noise(obj, where);
      return job;
    }
    case ExperimentKind::probabilities: {
      check_keys(obj,
                 {"params", "t_rounds", "quadrature", "grid", "state_rounds",
                  "noise"},
                 where);
      ProbabilitiesJob job;
      job.params = parse_sbs_params(obj.value("params", nlohmann::json::object()),
                                    where + ".params", limits.cavity_dim);
      job.t_rounds = get_or(obj, "t_rounds", job.t_rounds);
      job.quadrature =
          quadrature_from(get_or<std::string>(obj, "quadrature", "q"));
      job.grid = parse_grid_spec(obj.value("grid", nlohmann::json::object()),
                                 where + ".grid");
      job.state_rounds = get_or(obj, "state_rounds", job.state_rounds);
      job.noise = parse_optional_noise(obj, where);
      return job;
    }
    case ExperimentKind::estimate: {
      check_keys(obj,
                 {"params", "t_rounds", "quadrature", "grid", "state_rounds",
                  "noise", "estimator", "sigma"},
                 where);
      EstimateJob job;
      job.params = parse_sbs_params(obj.value("params", nlohmann::json::object()),
                                    where + ".params", limits.cavity_dim);
      job.t_rounds = get_or(obj, "t_rounds", job.t_rounds);
      job.quadrature =
          quadrature_from(get_or<std::string>(obj, "quadrature", "q"));
      job.estimator = get_or<std::string>(obj, "estimator", job.estimator);
      if (job.estimator != "mle" && job.estimator != "bayes") {
        throw ConfigError("estimator must be 'mle' or 'bayes'");
      }
      job.sigma = get_or(obj, "sigma", job.sigma);
      if (obj.contains("grid")) {
        job.grid = parse_grid_spec(obj.at("grid"), where + ".grid");
      } else if (job.estimator == "bayes") {
        // The posterior support must cover the Gaussian prior tails.
        job.grid.half_width = qunaught_spacing<double>();
        job.grid.count = 161;
      }
      job.state_rounds = get_or(obj, "state_rounds", job.state_rounds);
      job.noise = parse_optional_noise(obj, where);
      return job;
    }
    case ExperimentKind::bounds: {
      check_keys(obj, {"nbar", "params", "state_rounds", "sigma",
                       "target_total_mse"},
                 where);
      BoundsJob job;
      if (obj.contains("nbar")) job.nbar = obj.at("nbar").get<double>();
      job.params = parse_sbs_params(obj.value("params", nlohmann::json::object()),
                                    where + ".params", limits.cavity_dim);
      job.state_rounds = get_or(obj, "state_rounds", job.state_rounds);
      job.sigma = get_or(obj, "sigma", job.sigma);
      if (obj.contains("target_total_mse")) {
        job.target_total_mse = obj.at("target_total_mse").get<double>();
      }
      return job;
    }
    case ExperimentKind::backaction: {
      check_keys(obj,
                 {"params", "t_rounds", "m_rounds", "n_repeats", "sigma",
                  "samples", "noise", "preparation_rounds", "record_fidelity",
                  "write_samples"},
                 where);
      BackactionJob job;
      job.config.params =
          parse_sbs_params(obj.value("params", nlohmann::json::object()),
                           where + ".params", limits.cavity_dim);
      job.config.t_rounds = get_or(obj, "t_rounds", job.config.t_rounds);
      job.config.m_rounds = get_or(obj, "m_rounds", job.config.m_rounds);
      job.config.n_repeats = get_or(obj, "n_repeats", job.config.n_repeats);
      job.config.sigma = get_or(obj, "sigma", job.config.sigma);
      job.config.samples = get_or(obj, "samples", limits.samples);
      job.config.noise = parse_optional_noise(obj, where);
      job.config.preparation_rounds =
          get_or(obj, "preparation_rounds", job.config.preparation_rounds);
      job.config.record_fidelity =
          get_or(obj, "record_fidelity", job.config.record_fidelity);
      job.write_samples = get_or(obj, "write_samples", job.write_samples);
      return job;
    }
    case ExperimentKind::noise_sweep: {
      check_keys(obj, {"params", "noise", "etas", "rounds",
                       "isolate_channels"},
                 where);
      NoiseSweepJob job;
      job.params = parse_sbs_params(obj.value("params", nlohmann::json::object()),
                                    where + ".params", limits.cavity_dim);
      if (obj.contains("noise")) {
        job.base = parse_noise_params(obj.at("noise"), where + ".noise");
      }
      if (obj.contains("etas")) {
        job.etas = obj.at("etas").get<std::vector<double>>();
        if (job.etas.empty()) throw ConfigError("etas must be non-empty");
      }
      job.rounds = get_or(obj, "rounds", job.rounds);
      job.isolate_channels =
          get_or(obj, "isolate_channels", job.isolate_channels);
      return job;
    }
    case ExperimentKind::figure: {
      check_keys(obj, {"number"}, where);
      FigureJob job;
      job.number = get_or(obj, "number", job.number);
      if (job.number != 2 && job.number != 7) {
        throw ConfigError("supported figures: 2, 7");
      }
      return job;
    }
  }
  throw ConfigError("unreachable experiment kind");
}

}  // namespace detail

// Parses and validates the effective config.  The job block must be named
// after the experiment kind; blocks for other kinds are rejected along with
// any other unknown key.  The hash covers the canonical dump of the whole
// JSON document, so it changes exactly when the config changes.
inline ExperimentConfig parse_config(const nlohmann::json& root) {
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  if (!root.contains("schema_version")) {
    throw ConfigError("config is missing schema_version");
  }
  if (detail::get_or(root, "schema_version", 0) != 1) {
    throw ConfigError("unsupported schema_version (expected 1)");
  }
  if (!root.contains("experiment")) {
    throw ConfigError("config is missing the experiment kind");
  }
  ExperimentConfig config;
  config.kind =
      experiment_kind_from(root.at("experiment").get<std::string>());
  const std::string job_key = to_string(config.kind);
  detail::check_keys(root,
                     {"schema_version", "experiment", "budget", "out_dir",
                      "seed", "workers", "cache", job_key},
                     "config");
  config.budget =
      budget_from(detail::get_or<std::string>(root, "budget", "ci"));
  config.out_dir = detail::get_or<std::string>(root, "out_dir", ".");
  config.seed = detail::get_or<std::uint64_t>(root, "seed", 1);
  config.workers = detail::get_or(root, "workers", 1);
  if (config.workers < 1) throw ConfigError("workers must be positive");
  const std::string cache = detail::get_or<std::string>(root, "cache", "use");
  if (cache == "use") {
    config.use_cache = true;
  } else if (cache == "off") {
    config.use_cache = false;
  } else {
    throw ConfigError("cache must be 'use' or 'off'");
  }
  config.job = detail::parse_job(config.kind,
                                 root.value(job_key, nlohmann::json::object()),
                                 budget_limits(config.budget));
  config.config_hash = hex64(fnv1a64(root.dump()));
  return config;
}

inline nlohmann::json load_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config parse error in " + path.string() + ": " +
                      e.what());
  }
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path) {
  return parse_config(load_config_json(path));
}

}  // namespace gkpsense
