// fedsim: run federated experiments, compare runs, export plot data.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsim/cli.hpp"

namespace {

// FEDSIM_THREADS caps client-level parallelism; unset or 0 means one worker
// per hardware thread.
std::size_t threads_from_env() {
  const char* value = std::getenv("FEDSIM_THREADS");
  if (value == nullptr || *value == '\0') return 0;
  try {
    return static_cast<std::size_t>(std::stoul(value));
  } catch (const std::exception&) {
    std::cerr << "ignoring invalid FEDSIM_THREADS='" << value << "'\n";
    return 0;
  }
}

std::vector<double> parse_fractions(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning forgetting simulator"};
  app.require_subcommand(1);

  fedsim::RunRequest run;
  std::uint64_t seed = 0;
  auto* run_cmd = app.add_subcommand("run", "Run one experiment from a JSON config");
  run_cmd->add_option("--config", run.config_path, "Experiment config (JSON)")->required();
  run_cmd->add_option("--out", run.output_dir, "Output directory")->required();
  auto* seed_opt = run_cmd->add_option("--seed", seed, "Override the config seed");

  fedsim::CompareRequest compare;
  std::string fractions = "0.5,0.75,0.95";
  auto* compare_cmd = app.add_subcommand("compare", "Rounds-to-accuracy table across runs");
  compare_cmd->add_option("--runs", compare.runs, "Run directories")->required()->expected(1, -1);
  compare_cmd->add_option("--target", compare.target, "Target accuracy A")->required();
  compare_cmd->add_option("--fractions", fractions, "Comma-separated fractions of A");
  compare_cmd->add_option("--out", compare.table_path, "CSV table path");

  std::string export_run;
  std::string export_kind;
  std::string export_out;
  auto* export_cmd = app.add_subcommand("export", "Write plot-ready CSV from a run directory");
  export_cmd->add_option("--run", export_run, "Run directory")->required();
  export_cmd->add_option("--kind", export_kind,
                         "forgetting-ecdf | per-class-heatmap | local-global-loss | round-decomposition")
      ->required();
  export_cmd->add_option("--out", export_out, "Output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fedsim::kExitConfig;
  }

  if (*run_cmd) {
    if (*seed_opt) run.seed = seed;
    run.threads = threads_from_env();
    return fedsim::cmd_run(run);
  }
  if (*compare_cmd) {
    try {
      compare.fractions = parse_fractions(fractions);
    } catch (const std::exception&) {
      std::cerr << "compare: --fractions must be comma-separated numbers\n";
      return fedsim::kExitConfig;
    }
    return fedsim::cmd_compare(compare);
  }
  return fedsim::cmd_export(export_run, export_kind, export_out);
}
