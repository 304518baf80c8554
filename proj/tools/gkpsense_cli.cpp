// Command line entry point: config-driven sensing experiments with budget
// presets, deterministic seeding, and manifest emission.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gkpsense/config.hpp"
#include "gkpsense/errors.hpp"
#include "gkpsense/runner.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int workers = 0;
  std::string budget;
  int figure_number = 0;
};

void add_common_flags(CLI::App* sub, CliOptions& opts) {
  sub->add_option("--config", opts.config_path, "JSON config file");
  sub->add_option("--out", opts.out_dir, "output directory")
      ->envname("GKPSENSE_OUT");
  sub->add_option("--seed", opts.seed, "RNG seed");
  sub->add_option("--workers", opts.workers, "worker thread count")
      ->envname("GKPSENSE_WORKERS");
  sub->add_option("--budget", opts.budget, "scale preset")
      ->check(CLI::IsMember({"ci", "paper"}));
}

int execute(const std::string& kind, const CLI::App* sub,
            const CliOptions& opts) {
  nlohmann::json root;
  if (!opts.config_path.empty()) {
    root = gkpsense::load_config_json(opts.config_path);
  } else {
    root = nlohmann::json::object();
    root["schema_version"] = 1;
  }
  if (root.contains("experiment")) {
    const std::string declared = root.at("experiment").get<std::string>();
    if (declared != kind) {
      throw gkpsense::ConfigError("config declares experiment '" + declared +
                                  "' but the subcommand is '" + kind + "'");
    }
  } else {
    root["experiment"] = kind;
  }
  if (sub->count("--out") > 0) root["out_dir"] = opts.out_dir;
  if (sub->count("--seed") > 0) root["seed"] = opts.seed;
  if (sub->count("--workers") > 0) root["workers"] = opts.workers;
  if (sub->count("--budget") > 0) root["budget"] = opts.budget;
  if (kind == "figure" && sub->count("--number") > 0) {
    root["figure"]["number"] = opts.figure_number;
  }

  const gkpsense::ExperimentConfig config = gkpsense::parse_config(root);
  const gkpsense::RunManifest manifest = gkpsense::run(config);
  std::printf("%s: wrote %zu artifact(s) to %s in %.2f s\n",
              manifest.experiment.c_str(), manifest.outputs.size(),
              config.out_dir.c_str(), manifest.runtime_seconds);
  if (!manifest.checks.is_null()) {
    std::printf("checks: %s\n", manifest.checks.dump().c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Displacement sensing with stabilized qunaught states"};
  app.require_subcommand(1);
  CliOptions opts;

  const struct {
    const char* name;
    const char* kind;
    const char* help;
  } subcommands[] = {
      {"prepare", "prepare", "stabilize a qunaught state and track it"},
      {"probabilities", "probabilities", "tabulate outcome probabilities"},
      {"estimate", "estimate", "estimator metrics over a displacement grid"},
      {"bounds", "bounds", "metrological bounds for a given photon number"},
      {"backaction", "backaction", "repeated sense-estimate-recover runs"},
      {"noise-sweep", "noise_sweep", "steady-state fidelities under noise"},
      {"figure", "figure", "plot-ready data with model overlays"},
  };
  for (const auto& entry : subcommands) {
    CLI::App* sub = app.add_subcommand(entry.name, entry.help);
    add_common_flags(sub, opts);
    if (std::string(entry.kind) == "figure") {
      sub->add_option("--number", opts.figure_number,
                      "figure to reproduce (2 or 7)");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const CLI::App* sub = app.get_subcommands().front();
  std::string kind = sub->get_name();
  for (const auto& entry : subcommands) {
    if (kind == entry.name) {
      kind = entry.kind;
      break;
    }
  }

  try {
    return execute(kind, sub, opts);
  } catch (const gkpsense::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
}
