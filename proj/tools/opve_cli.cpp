// opve: simulate / evaluate / bench front end over the harness.
//
// Exit codes: 0 success, 1 internal failure, 2 configuration error, 3 data error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "opve/opve.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> workers;
  std::string out;
  std::string format = "table";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "JSON experiment config")->required();
  cmd->add_option("--seed", args.seed, "master seed (overrides config)");
  cmd->add_option("--trials", args.trials, "trial count (overrides config)");
  cmd->add_option("--workers", args.workers, "worker threads");
  cmd->add_option("--out", args.out, "output prefix: writes <out>.csv and <out>.manifest.json");
  cmd->add_option("--format", args.format, "stdout report format")->check(CLI::IsMember({"table", "csv"}));
}

opve::ExperimentConfig resolve(const CommonArgs& args) {
  opve::ExperimentConfig cfg = opve::load_config(args.config);
  if (args.seed) cfg.master_seed = *args.seed;
  if (args.trials) {
    if (*args.trials < 1) throw opve::ConfigError("--trials must be >= 1");
    cfg.trials = *args.trials;
  }
  if (args.workers) cfg.workers = *args.workers;
  return cfg;
}

void write_outputs(const opve::ExperimentReport& report, const CommonArgs& args) {
  std::cout << opve::emit_report(report, args.format == "csv" ? opve::ReportFormat::Csv : opve::ReportFormat::Table);
  if (args.out.empty()) return;
  std::ofstream csv(args.out + ".csv");
  std::ofstream manifest(args.out + ".manifest.json");
  if (!csv || !manifest) throw opve::StructuralError("cannot write outputs under '" + args.out + "'");
  csv << opve::emit_report(report, opve::ReportFormat::Csv);
  manifest << report.manifest.dump(2) << '\n';
}

int run(const CommonArgs& args, std::optional<opve::Scenario> expected) {
  opve::ExperimentConfig cfg = resolve(args);
  if (expected && cfg.scenario != *expected) {
    throw opve::ConfigError("this subcommand expects scenario '" + std::string(opve::to_string(*expected)) +
                            "', config has '" + std::string(opve::to_string(cfg.scenario)) + "'");
  }
  const opve::ExperimentReport report = opve::run_experiment(cfg);
  write_outputs(report, args);
  // A single external log: the point estimates matter more than error metrics.
  if (cfg.scenario == opve::Scenario::ExternalLog && args.format == "table" && !report.trials.empty()) {
    std::printf("\n%-10s %12s %12s %12s\n", "estimator", "estimate", "ci_low", "ci_high");
    for (const auto& e : report.trials.front().estimates) {
      std::printf("%-10s %12s %12s %12s\n", std::string(opve::to_string(e.tag)).c_str(),
                  opve::format_metric(e.value).c_str(), opve::format_metric(e.ci_low).c_str(),
                  opve::format_metric(e.ci_high).c_str());
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Off-policy value estimation on adaptively collected bandit logs"};
  app.require_subcommand(1);

  CommonArgs sim_args, eval_args, bench_args;
  auto* sim = app.add_subcommand("simulate", "synthetic three-dataset experiment");
  add_common(sim, sim_args);
  auto* eval = app.add_subcommand("evaluate", "estimate a policy value from an external log CSV");
  add_common(eval, eval_args);
  auto* bench = app.add_subcommand("bench", "any scenario from a config; reproducible report");
  add_common(bench, bench_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return run(sim_args, opve::Scenario::Synthetic);
    if (eval->parsed()) return run(eval_args, opve::Scenario::ExternalLog);
    return run(bench_args, std::nullopt);
  } catch (const opve::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const opve::ParseError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const opve::StructuralError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const opve::CapabilityError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const opve::DivisionHazardError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const opve::ArgumentError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const opve::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
