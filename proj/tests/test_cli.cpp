#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedsim/cli.hpp"
#include "fedsim/config.hpp"
#include "fedsim/io.hpp"

using namespace fedsim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fedsim_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kMinimalConfig = R"({
  "num_clients": 5,
  "participation": 0.4,
  "rounds": 3,
  "local_epochs": 1,
  "server_epochs": 3,
  "batch_size": 16,
  "hidden_dims": [6],
  "gamma": 0.1,
  "algorithm": "flashback",
  "seed": 2,
  "data": {"num_train": 800, "num_test": 200, "beta": 0.5, "public_fraction": 0.1}
})";

fs::path write_config(const fs::path& dir, const std::string& text, const std::string& name = "config.json") {
  const auto path = dir / name;
  std::ofstream(path) << text;
  return path;
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

// Shells out to the built CLI; the test runner sets FEDSIM_CLI.
int run_cli(const std::string& args) {
  const char* exe = std::getenv("FEDSIM_CLI");
  if (exe == nullptr) return -1;
  const int status = std::system((std::string("\"") + exe + "\" " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const fs::path& finished_run() {
  static const fs::path dir = [] {
    const auto root = scratch("finished");
    const auto cfg = write_config(root, kMinimalConfig);
    const auto out = root / "run";
    std::ostringstream err;
    if (cmd_run({cfg.string(), out.string(), std::nullopt, 1}, err) != kExitOk) throw Error(err.str());
    return out;
  }();
  return dir;
}

}  // namespace

TEST(Config, RoundTripIsIdentity) {
  const auto cfg = config_from_json(nlohmann::json::parse(kMinimalConfig));
  const auto again = config_from_json(config_to_json(cfg));
  EXPECT_EQ(cfg, again);
  EXPECT_EQ(config_to_json(cfg), config_to_json(again));
  EXPECT_EQ(cfg.federation.num_clients, 5u);
  EXPECT_EQ(cfg.data.num_train, 800u);
}

TEST(Config, DefaultsMirrorReferenceSetup) {
  const auto cfg = config_from_json(nlohmann::json::object());
  EXPECT_EQ(cfg.federation.local_epochs, 5u);
  EXPECT_EQ(cfg.federation.temperature, 3.0);
  EXPECT_EQ(cfg.federation.gamma, 0.025);
  EXPECT_EQ(cfg.federation.server_epochs, 50u);
  EXPECT_EQ(cfg.federation.patience, 3u);
  EXPECT_EQ(cfg.data.beta, 0.1);
  EXPECT_EQ(cfg.data.public_fraction, 0.025);
  EXPECT_EQ(cfg.data.client_train_fraction, 0.9);
}

TEST(Config, ErrorsNameTheField) {
  auto expect_error = [](const std::string& text, const std::string& field) {
    try {
      config_from_json(nlohmann::json::parse(text));
      ADD_FAILURE() << "no error for " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_error(R"({"algorithm": "fedprox"})", "algorithm");
  expect_error(R"({"learning_rate": 0.1})", "learning_rate");
  expect_error(R"({"data": {"betta": 0.1}})", "data.betta");
  expect_error(R"({"rounds": "ten"})", "rounds");
  expect_error(R"({"gamma": 0})", "gamma");
}

TEST(Io, Base64KnownVectors) {
  const std::string text = "foobar";
  for (std::size_t n = 0; n <= text.size(); ++n) {
    const std::vector<unsigned char> bytes(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(n));
    const auto encoded = base64_encode(bytes);
    static const char* expected[] = {"", "Zg==", "Zm8=", "Zm9v", "Zm9vYg==", "Zm9vYmE=", "Zm9vYmFy"};
    EXPECT_EQ(encoded, expected[n]);
    EXPECT_EQ(base64_decode(encoded), bytes);
  }
  EXPECT_THROW(base64_decode("Zm9"), Error);
  EXPECT_THROW(base64_decode("Zm9*"), Error);
}

TEST(Io, DoublesRoundTripBitwise) {
  const std::vector<double> v{0.0, -0.0, 1.0 / 3.0, 1e-310, -2.5e300, 0.1};
  const auto back = decode_doubles(encode_doubles(v));
  ASSERT_EQ(back.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i]), std::bit_cast<std::uint64_t>(v[i]));
  // little-endian layout of 1.0
  EXPECT_EQ(encode_doubles(std::vector<double>{1.0}), "AAAAAAAA8D8=");
}

TEST(Io, CheckpointRoundTrip) {
  FederationState s;
  s.round = 7;
  s.global = init_params(ModelSpec{3, {4}, 2, Activation::ReLU}, 1);
  s.pi = LabelCount(std::vector<double>{0.1, 0.35});
  s.registry.rounds = {{0, 2}, {5, 1}};
  EXPECT_EQ(checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(s).dump())), s);
}

TEST(Io, RecordRoundTripKeepsUndefinedEntries) {
  RoundRecord r;
  r.round = 2;
  r.participants = {1, 4};
  r.prev_global_acc = {0.5, kUndefined};
  r.client_acc = {{0.25, kUndefined}, {1.0, kUndefined}};
  r.global_per_class_acc = {0.75, kUndefined};
  r.global_acc = 0.75;
  r.mean_local_test_loss = 1.0 / 3.0;
  r.global_test_loss = 0.1;
  const auto line = record_to_jsonl(r);
  EXPECT_EQ(record_to_jsonl(record_from_json(nlohmann::json::parse(line))), line);
  EXPECT_NE(line.find("null"), std::string::npos);
}

TEST(CmdRun, WritesAllArtifacts) {
  const auto& dir = finished_run();
  for (const char* f : {"manifest.json", "metrics.jsonl", "accuracy_matrix.csv", "checkpoint.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto metrics = read_text((dir / "metrics.jsonl").string());
  EXPECT_EQ(count_lines(metrics), 3u);
  std::istringstream lines(metrics);
  std::string line;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"round", "global_acc", "per_class_acc", "round_forgetting", "local_forgetting",
                            "aggregation_forgetting", "mean_local_test_loss", "global_test_loss", "participants",
                            "server_distill_epochs"})
      EXPECT_TRUE(j.contains(key)) << key;
  }
  const auto manifest = nlohmann::json::parse(read_text((dir / "manifest.json").string()));
  EXPECT_EQ(manifest.at("rounds_executed"), 3);
  EXPECT_EQ(manifest.at("artifacts").size(), 4u);
  EXPECT_EQ(config_from_json(manifest.at("config")), config_from_json(nlohmann::json::parse(kMinimalConfig)));
  EXPECT_EQ(count_lines(read_text((dir / "accuracy_matrix.csv").string())), 1u + 4u);
}

TEST(CmdRun, RerunIsByteIdentical) {
  const auto root = scratch("rerun");
  const auto cfg = write_config(root, kMinimalConfig);
  ASSERT_EQ(cmd_run({cfg.string(), (root / "a").string(), std::nullopt, 1}), kExitOk);
  ASSERT_EQ(cmd_run({cfg.string(), (root / "b").string(), std::nullopt, 3}), kExitOk);
  EXPECT_EQ(read_text((root / "a" / "metrics.jsonl").string()), read_text((root / "b" / "metrics.jsonl").string()));
  EXPECT_EQ(read_text((root / "a" / "checkpoint.json").string()),
            read_text((root / "b" / "checkpoint.json").string()));
  EXPECT_EQ(read_text((root / "a" / "metrics.jsonl").string()),
            read_text((finished_run() / "metrics.jsonl").string()));
}

TEST(CmdRun, SeedOverrideChangesRun) {
  const auto root = scratch("seed");
  const auto cfg = write_config(root, kMinimalConfig);
  ASSERT_EQ(cmd_run({cfg.string(), (root / "s9").string(), 9, 1}), kExitOk);
  EXPECT_NE(read_text((root / "s9" / "metrics.jsonl").string()),
            read_text((finished_run() / "metrics.jsonl").string()));
  const auto manifest = nlohmann::json::parse(read_text((root / "s9" / "manifest.json").string()));
  EXPECT_EQ(manifest.at("seed"), 9);
}

TEST(CmdRun, UnknownAlgorithmIsConfigError) {
  const auto root = scratch("bad_algo");
  const auto cfg = write_config(root, R"({"algorithm": "fedprox"})");
  std::ostringstream err;
  EXPECT_EQ(cmd_run({cfg.string(), (root / "out").string(), std::nullopt, 1}, err), kExitConfig);
  EXPECT_NE(err.str().find("algorithm"), std::string::npos);
}

TEST(CmdRun, MissingConfigIsConfigError) {
  std::ostringstream err;
  EXPECT_EQ(cmd_run({"/nonexistent/config.json", "/tmp/unused", std::nullopt, 1}, err), kExitConfig);
}

TEST(CmdRun, InfeasibleDataIsRuntimeError) {
  const auto root = scratch("infeasible");
  const auto cfg = write_config(root, R"({"num_clients": 50, "participation": 0.1,
    "data": {"num_train": 200, "num_test": 50, "public_fraction": 0.1, "min_per_client": 10}})");
  std::ostringstream err;
  EXPECT_EQ(cmd_run({cfg.string(), (root / "out").string(), std::nullopt, 1}, err), kExitRuntime);
  EXPECT_FALSE(err.str().empty());
}

TEST(CmdCompare, SingleRunFullFraction) {
  const auto root = scratch("compare");
  const auto records = read_metrics((finished_run() / "metrics.jsonl").string());
  CompareRequest req;
  req.runs = {finished_run().string()};
  req.target = records.back().global_acc * 0.99;
  req.fractions = {1.0};
  req.table_path = (root / "table.csv").string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_compare(req, out, err), kExitOk) << err.str();
  const auto table = read_text(req.table_path);
  EXPECT_EQ(table.find("run,A_1\n"), 0u);
  EXPECT_EQ(table.find(",-"), std::string::npos);
}

TEST(CmdCompare, DefaultFractionsGiveThreeColumns) {
  const auto root = scratch("compare3");
  CompareRequest req;
  req.runs = {finished_run().string(), finished_run().string()};
  req.target = 2.0;  // unreachable: every cell is a dash
  req.table_path = (root / "table.csv").string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_compare(req, out, err), kExitOk);
  const auto table = read_text(req.table_path);
  EXPECT_EQ(table.substr(0, table.find('\n')), "run,A_0.5,A_0.75,A_0.95");
  EXPECT_EQ(count_lines(table), 3u);
  EXPECT_NE(table.find(",-,-,-"), std::string::npos);
}

TEST(CmdCompare, MismatchedClassCountIsError) {
  const auto root = scratch("mismatch");
  const auto cfg = write_config(root, R"({"num_clients": 4, "participation": 0.5, "rounds": 1, "local_epochs": 1,
    "server_epochs": 1, "data": {"num_classes": 3, "num_train": 600, "num_test": 90, "beta": 1.0,
    "public_fraction": 0.1}})");
  ASSERT_EQ(cmd_run({cfg.string(), (root / "c3").string(), std::nullopt, 1}), kExitOk);
  CompareRequest req;
  req.runs = {finished_run().string(), (root / "c3").string()};
  req.target = 0.5;
  req.table_path = (root / "table.csv").string();
  std::ostringstream out, err;
  EXPECT_NE(cmd_compare(req, out, err), kExitOk);
  EXPECT_FALSE(err.str().empty());
}

TEST(CmdExport, ForgettingEcdfHasOneRowPerRoundAfterFirst) {
  const auto csv = export_csv(finished_run().string(), "forgetting-ecdf");
  EXPECT_EQ(count_lines(csv), 1u + 2u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "round_forgetting,cumulative_fraction");
  EXPECT_NE(csv.find(",1\n"), std::string::npos);
}

TEST(CmdExport, HeatmapHasRoundsPlusOneRows) {
  const auto csv = export_csv(finished_run().string(), "per-class-heatmap");
  EXPECT_EQ(count_lines(csv), 1u + 4u);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "round,class_0,class_1,class_2,class_3");
  while (std::getline(lines, line)) EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
}

TEST(CmdExport, LossAndDecompositionTables) {
  const auto loss = export_csv(finished_run().string(), "local-global-loss");
  EXPECT_EQ(loss.substr(0, loss.find('\n')), "round,prev_global_test_loss,mean_local_test_loss,global_test_loss");
  EXPECT_EQ(count_lines(loss), 4u);
  const auto dec = export_csv(finished_run().string(), "round-decomposition");
  EXPECT_EQ(dec.substr(0, dec.find('\n')), "round,local_forgetting,aggregation_forgetting,round_forgetting");
  EXPECT_EQ(count_lines(dec), 4u);
}

TEST(CmdExport, PureFunctionOfRunDirectory) {
  for (const auto& kind : export_kinds())
    EXPECT_EQ(export_csv(finished_run().string(), kind), export_csv(finished_run().string(), kind));
}

TEST(CmdExport, UnknownKindFails) {
  std::ostringstream err;
  EXPECT_EQ(cmd_export(finished_run().string(), "histogram", "/tmp/fedsim_unused.csv", err), kExitConfig);
  EXPECT_NE(err.str().find("histogram"), std::string::npos);
}

TEST(Executable, SubcommandsAndExitCodes) {
  if (std::getenv("FEDSIM_CLI") == nullptr) GTEST_SKIP() << "FEDSIM_CLI not set";
  const auto root = scratch("exe");
  const auto cfg = write_config(root, kMinimalConfig);
  const auto bad = write_config(root, R"({"algorithm": "nope"})", "bad.json");
  const auto out = root / "run";
  EXPECT_EQ(run_cli("run --config " + cfg.string() + " --out " + out.string() + " --seed 2"), 0);
  EXPECT_EQ(read_text((out / "metrics.jsonl").string()), read_text((finished_run() / "metrics.jsonl").string()));
  EXPECT_EQ(run_cli("run --config " + bad.string() + " --out " + (root / "bad").string()), 1);
  EXPECT_EQ(run_cli("compare --runs " + out.string() + " " + finished_run().string() +
                    " --target 0.9 --fractions 0.5,0.75 --out " + (root / "t.csv").string()),
            0);
  const auto table = read_text((root / "t.csv").string());
  EXPECT_EQ(table.substr(0, table.find('\n')), "run,A_0.5,A_0.75");
  EXPECT_EQ(run_cli("export --run " + out.string() + " --kind forgetting-ecdf --out " + (root / "e.csv").string()), 0);
  EXPECT_TRUE(fs::exists(root / "e.csv"));
  EXPECT_NE(run_cli("export --run " + out.string() + " --kind nope --out " + (root / "x.csv").string()), 0);
  EXPECT_NE(run_cli("frobnicate"), 0);
}
