#pragma once

// The three user-facing commands. Each returns a process exit code:
// 0 success, 1 usage/config error, 2 runtime error. Diagnostics go to `err`.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsim/config.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/io.hpp"
#include "fedsim/metrics.hpp"

namespace fedsim {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

struct RunRequest {
  std::string config_path;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

inline int cmd_run(const RunRequest& request, std::ostream& err = std::cerr) {
  namespace fs = std::filesystem;
  ExperimentConfig cfg;
  try {
    cfg = load_config(request.config_path);
    if (request.seed) cfg.federation.seed = *request.seed;
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    const auto started = std::chrono::steady_clock::now();
    const fs::path dir(request.output_dir);
    fs::create_directories(dir);
    const auto data = prepare_data(cfg.data, cfg.federation.num_clients, cfg.federation.seed);

    const auto metrics_path = (dir / "metrics.jsonl").string();
    std::ofstream metrics(metrics_path, std::ios::binary);
    require(static_cast<bool>(metrics), "cannot write " + metrics_path);
    auto result = run_experiment(cfg.federation, data, std::nullopt, RunOptions{request.threads},
                                 [&](const RoundOutcome& round) { metrics << record_to_jsonl(round.record) << '\n'; });
    metrics.close();
    require(static_cast<bool>(metrics), "failed writing " + metrics_path);

    write_text((dir / "accuracy_matrix.csv").string(), accuracy_matrix_csv(result.accuracy));
    write_text((dir / "checkpoint.json").string(), checkpoint_to_json(result.state).dump(2) + "\n");

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    nlohmann::ordered_json manifest;
    manifest["version"] = std::string(kVersion);
    manifest["seed"] = cfg.federation.seed;
    manifest["config"] = config_to_json(cfg);
    manifest["artifacts"] = {"manifest.json", "metrics.jsonl", "accuracy_matrix.csv", "checkpoint.json"};
    manifest["num_classes"] = data.num_classes();
    manifest["test_set_hash"] = dataset_hash(data.test);
    manifest["rounds_executed"] = result.records.size();
    manifest["wall_clock_seconds"] = seconds;
    write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
    return kExitOk;
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << '\n';
    return kExitRuntime;
  }
}

struct RunSummary {
  std::string name;
  std::size_t num_classes = 0;
  std::uint64_t test_set_hash = 0;
  std::vector<double> accuracy_trace;
};

inline RunSummary load_run_summary(const std::string& run_dir) {
  namespace fs = std::filesystem;
  RunSummary s;
  s.name = run_dir;
  const auto manifest = nlohmann::json::parse(read_text((fs::path(run_dir) / "manifest.json").string()));
  s.num_classes = manifest.at("num_classes").get<std::size_t>();
  s.test_set_hash = manifest.at("test_set_hash").get<std::uint64_t>();
  for (const auto& r : read_metrics((fs::path(run_dir) / "metrics.jsonl").string()))
    s.accuracy_trace.push_back(r.global_acc);
  return s;
}

struct CompareRequest {
  std::vector<std::string> runs;
  double target = 0.0;
  std::vector<double> fractions{0.5, 0.75, 0.95};
  std::string table_path = "table.csv";
};

// Rounds needed by each run to reach target * x for every fraction x; "-"
// marks a level never reached.
inline int cmd_compare(const CompareRequest& request, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  if (request.runs.empty() || request.fractions.empty()) {
    err << "compare: need at least one run and one fraction\n";
    return kExitConfig;
  }
  for (double x : request.fractions) {
    if (!(x > 0.0 && x <= 1.0)) {
      err << "compare: fractions must be in (0,1]\n";
      return kExitConfig;
    }
  }
  try {
    std::vector<RunSummary> runs;
    for (const auto& dir : request.runs) runs.push_back(load_run_summary(dir));
    for (const auto& r : runs) {
      if (r.num_classes != runs.front().num_classes || r.test_set_hash != runs.front().test_set_hash) {
        err << "compare: run " << r.name << " is incompatible with " << runs.front().name
            << " (different class count or test set)\n";
        return kExitRuntime;
      }
      require(!r.accuracy_trace.empty(), "compare: run " + r.name + " has no rounds");
    }

    std::ostringstream csv;
    csv << "run";
    std::vector<std::string> headers;
    for (double x : request.fractions) {
      std::ostringstream h;
      h << "A_" << x;
      headers.push_back(h.str());
      csv << ',' << h.str();
    }
    csv << '\n';

    std::size_t name_width = 3;
    for (const auto& r : runs) name_width = std::max(name_width, r.name.size());
    out << "target accuracy A = " << request.target << '\n';
    out << std::left << std::setw(static_cast<int>(name_width)) << "run";
    for (const auto& h : headers) out << "  " << std::right << std::setw(8) << h;
    out << '\n';
    for (const auto& r : runs) {
      csv << r.name;
      out << std::left << std::setw(static_cast<int>(name_width)) << r.name;
      for (double x : request.fractions) {
        const auto hit = rounds_to_target(r.accuracy_trace, request.target, x);
        const std::string cell = hit ? std::to_string(*hit) : "-";
        csv << ',' << cell;
        out << "  " << std::right << std::setw(8) << cell;
      }
      csv << '\n';
      out << '\n';
    }
    write_text(request.table_path, csv.str());
    return kExitOk;
  } catch (const std::exception& e) {
    err << "compare failed: " << e.what() << '\n';
    return kExitRuntime;
  }
}

inline const std::vector<std::string>& export_kinds() {
  static const std::vector<std::string> kinds{"forgetting-ecdf", "per-class-heatmap", "local-global-loss",
                                              "round-decomposition"};
  return kinds;
}

// Plot-ready CSVs derived from a run directory:
//   forgetting-ecdf      round_forgetting,cumulative_fraction  (rounds 2..T; round 1
//                        compares against the untrained model and is left out)
//   per-class-heatmap    round,class_0..class_{C-1}            (rows 0..T)
//   local-global-loss    round,prev_global_test_loss,mean_local_test_loss,global_test_loss
//   round-decomposition  round,local_forgetting,aggregation_forgetting,round_forgetting
inline std::string export_csv(const std::string& run_dir, const std::string& kind) {
  namespace fs = std::filesystem;
  const auto records = [&] { return read_metrics((fs::path(run_dir) / "metrics.jsonl").string()); };
  std::ostringstream out;
  if (kind == "forgetting-ecdf") {
    std::vector<double> values;
    for (const auto& r : records())
      if (r.round >= 2) values.push_back(r.round_forgetting);
    out << "round_forgetting,cumulative_fraction\n";
    if (values.empty()) return out.str();
    const auto steps = ecdf(values);
    std::sort(values.begin(), values.end());
    std::size_t s = 0;
    for (double v : values) {
      while (steps[s].first < v) ++s;
      out << format_double(v) << ',' << format_double(steps[s].second) << '\n';
    }
  } else if (kind == "per-class-heatmap") {
    out << accuracy_matrix_csv(read_accuracy_matrix((fs::path(run_dir) / "accuracy_matrix.csv").string()));
  } else if (kind == "local-global-loss") {
    out << "round,prev_global_test_loss,mean_local_test_loss,global_test_loss\n";
    for (const auto& r : records())
      out << r.round << ',' << format_double(r.prev_global_test_loss) << ','
          << format_double(r.mean_local_test_loss) << ',' << format_double(r.global_test_loss) << '\n';
  } else if (kind == "round-decomposition") {
    out << "round,local_forgetting,aggregation_forgetting,round_forgetting\n";
    for (const auto& r : records())
      out << r.round << ',' << format_double(r.local_forgetting) << ',' << format_double(r.aggregation_forgetting)
          << ',' << format_double(r.round_forgetting) << '\n';
  } else {
    throw ConfigError("unknown export kind '" + kind + "'");
  }
  return out.str();
}

inline int cmd_export(const std::string& run_dir, const std::string& kind, const std::string& out_path,
                      std::ostream& err = std::cerr) {
  try {
    write_text(out_path, export_csv(run_dir, kind));
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "export: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "export failed: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace fedsim
