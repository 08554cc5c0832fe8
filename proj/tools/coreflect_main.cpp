#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "coreflect/config.hpp"
#include "coreflect/error.hpp"
#include "coreflect/orchestrator.hpp"
#include "coreflect/report.hpp"

namespace fs = std::filesystem;
using namespace coreflect;

namespace {

struct Flags {
  std::string config;
  std::string run;
  std::string out;
  std::string personas;
  std::string scenarios;
  std::string halt_after;
  std::vector<std::string> models;
  int iteration = 1;
  bool resume = false;
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
};

RunOptions options_from(const Flags& f) {
  RunOptions o;
  o.resume = f.resume;
  o.seed = f.seed;
  o.models = f.models;
  if (!f.halt_after.empty()) o.halt_after = StageId::parse(f.halt_after);
  return o;
}

std::optional<RunConfig> config_from(const Flags& f) {
  if (f.config.empty()) return std::nullopt;
  return load_run_config(f.config);
}

Orchestrator open_run(const Flags& f) {
  if (f.run.empty()) throw ConfigError("--run is required");
  return Orchestrator(f.run, config_from(f), options_from(f));
}

int build_dataset_command(const Flags& f) {
  if (f.config.empty()) throw ConfigError("build-dataset needs --config for the verifier backend");
  if (f.out.empty()) throw ConfigError("build-dataset needs --out");
  const auto cfg = load_run_config(f.config);
  const fs::path personas = f.personas.empty() ? cfg.personas : fs::path(f.personas);
  const fs::path scenarios = f.scenarios.empty() ? cfg.scenarios : fs::path(f.scenarios);
  const auto ds = build_dataset_to(f.out, personas, scenarios, cfg.role("verifier"), cfg.max_workers,
                                   cfg.max_transport_failure_fraction);
  std::cout << ds.instances.size() << " instances written to " << f.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Co-evolving persona-grounded evaluation of conversational models"};
  app.require_subcommand(1);
  Flags f;
  app.add_option("--log-level", f.log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  auto* build = app.add_subcommand("build-dataset", "Check persona-scenario pairs and write the dataset");
  build->add_option("--config", f.config, "Run configuration (JSON)");
  build->add_option("--personas", f.personas, "Persona file; defaults to the configured one");
  build->add_option("--scenarios", f.scenarios, "Scenario file; defaults to the configured one");
  build->add_option("--out", f.out, "Output directory")->required();

  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "Run configuration (JSON); required for a new run directory");
    sub->add_option("--run", f.run, "Run directory");
    sub->add_flag("--resume", f.resume, "Skip completed stages");
    sub->add_option("--seed", f.seed, "Override the configured seed (new runs only)");
    sub->add_option("--models", f.models, "Restrict the configured test models (new runs only)")->delimiter(',');
  };

  std::vector<std::pair<std::string, CLI::App*>> stages;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"plan", "Plan conversation templates"},
           {"simulate", "Simulate conversations with every test model"},
           {"judge", "Rate conversations against the rubric set"},
           {"metrics", "Compute metrics and write the report"},
           {"reflect", "Mine behavioral insights and refine rubrics"}}) {
    auto* sub = app.add_subcommand(name, help);
    add_run_flags(sub);
    sub->add_option("--iteration", f.iteration, "Iteration t")->capture_default_str();
    stages.emplace_back(name, sub);
  }

  auto* run = app.add_subcommand("run", "Run every remaining stage for all iterations");
  add_run_flags(run);
  run->add_option("--halt-after", f.halt_after, "Stop after this stage, e.g. judge:1");

  auto* report = app.add_subcommand("report", "Regenerate the report of a completed metrics stage");
  report->add_option("--run", f.run, "Run directory")->required();
  report->add_option("--iteration", f.iteration, "Iteration t")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    const auto level = spdlog::level::from_str(f.log_level);
    spdlog::set_level(level);
    if (*build) return build_dataset_command(f);
    for (const auto& [name, sub] : stages) {
      if (*sub) {
        auto orch = open_run(f);
        orch.run_stage({name, f.iteration});
        return 0;
      }
    }
    if (*run) {
      if (f.run.empty()) f.run = default_run_dir_name();
      auto orch = open_run(f);
      const bool complete = orch.run();
      std::cout << (complete ? "run complete: " : "run halted: ") << orch.run_dir().string() << "\n";
      return 0;
    }
    if (*report) {
      const auto files = write_report(f.run, f.iteration);
      std::cout << files.report.string() << "\n";
      return 0;
    }
  } catch (const Error& e) {
    spdlog::error("{}: {}", e.kind(), e.what());
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(ExitCode::kFailure);
  }
  return 0;
}
