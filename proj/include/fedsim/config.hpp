#pragma once

// Experiment configuration: a JSON document holding the federation fields at
// top level plus a `data` section. Unknown keys are rejected. Missing keys
// take their defaults.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "fedsim/common.hpp"
#include "fedsim/data.hpp"
#include "fedsim/federation.hpp"

namespace fedsim {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class DataSource { Synthetic, Csv };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  // synthetic
  std::size_t num_classes = 4;
  std::size_t dim = 8;
  std::size_t num_train = 8000;
  std::size_t num_test = 2000;
  double separation = 2.5;
  double noise = 1.0;
  // csv
  std::string train_csv;
  std::string test_csv;
  // splitting
  double beta = 0.1;
  std::size_t min_per_client = 5;
  double public_fraction = 0.025;
  double public_val_fraction = 0.25;
  double client_train_fraction = 0.9;
  bool public_imbalance = false;

  bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
  FederationConfig federation;
  DataConfig data;

  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

using nlohmann::json;

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& prefix) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + prefix + key + "' has the wrong type");
  }
}

inline void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& prefix) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.contains(it.key())) throw ConfigError("config field '" + prefix + it.key() + "' is not recognised");
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& doc) {
  using detail::read_field;
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown(doc,
                         {"num_clients", "participation", "rounds", "local_epochs", "server_epochs", "batch_size",
                          "lr", "server_lr", "gamma", "temperature", "patience", "algorithm", "seed", "hidden_dims",
                          "ntd_weight", "data"},
                         "");
  ExperimentConfig cfg;
  auto& f = cfg.federation;
  read_field(doc, "num_clients", f.num_clients, "");
  read_field(doc, "participation", f.participation, "");
  read_field(doc, "rounds", f.rounds, "");
  read_field(doc, "local_epochs", f.local_epochs, "");
  read_field(doc, "server_epochs", f.server_epochs, "");
  read_field(doc, "batch_size", f.batch_size, "");
  read_field(doc, "lr", f.lr, "");
  if (doc.contains("server_lr") && !doc["server_lr"].is_null()) {
    double v = 0.0;
    read_field(doc, "server_lr", v, "");
    f.server_lr = v;
  }
  read_field(doc, "gamma", f.gamma, "");
  read_field(doc, "temperature", f.temperature, "");
  read_field(doc, "patience", f.patience, "");
  read_field(doc, "seed", f.seed, "");
  read_field(doc, "hidden_dims", f.hidden_dims, "");
  read_field(doc, "ntd_weight", f.ntd_weight, "");
  if (doc.contains("algorithm")) {
    std::string name;
    read_field(doc, "algorithm", name, "");
    auto algo = parse_algorithm(name);
    if (!algo) throw ConfigError("config field 'algorithm' has unknown value '" + name + "'");
    f.algorithm = *algo;
  }

  if (doc.contains("data")) {
    const auto& d = doc["data"];
    if (!d.is_object()) throw ConfigError("config field 'data' must be an object");
    detail::reject_unknown(d,
                           {"source", "num_classes", "dim", "num_train", "num_test", "separation", "noise",
                            "train_csv", "test_csv", "beta", "min_per_client", "public_fraction",
                            "public_val_fraction", "client_train_fraction", "public_imbalance"},
                           "data.");
    auto& dc = cfg.data;
    if (d.contains("source")) {
      std::string source;
      read_field(d, "source", source, "data.");
      if (source == "synthetic")
        dc.source = DataSource::Synthetic;
      else if (source == "csv")
        dc.source = DataSource::Csv;
      else
        throw ConfigError("config field 'data.source' must be 'synthetic' or 'csv'");
    }
    read_field(d, "num_classes", dc.num_classes, "data.");
    read_field(d, "dim", dc.dim, "data.");
    read_field(d, "num_train", dc.num_train, "data.");
    read_field(d, "num_test", dc.num_test, "data.");
    read_field(d, "separation", dc.separation, "data.");
    read_field(d, "noise", dc.noise, "data.");
    read_field(d, "train_csv", dc.train_csv, "data.");
    read_field(d, "test_csv", dc.test_csv, "data.");
    read_field(d, "beta", dc.beta, "data.");
    read_field(d, "min_per_client", dc.min_per_client, "data.");
    read_field(d, "public_fraction", dc.public_fraction, "data.");
    read_field(d, "public_val_fraction", dc.public_val_fraction, "data.");
    read_field(d, "client_train_fraction", dc.client_train_fraction, "data.");
    read_field(d, "public_imbalance", dc.public_imbalance, "data.");
  }

  try {
    f.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const auto& dc = cfg.data;
  if (dc.beta <= 0.0) throw ConfigError("config field 'data.beta' must be positive");
  if (dc.min_per_client < 2) throw ConfigError("config field 'data.min_per_client' must be at least 2");
  if (dc.source == DataSource::Csv && (dc.train_csv.empty() || dc.test_csv.empty()))
    throw ConfigError("config fields 'data.train_csv' and 'data.test_csv' are required for csv data");
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  const auto& f = cfg.federation;
  const auto& d = cfg.data;
  nlohmann::json doc;
  doc["num_clients"] = f.num_clients;
  doc["participation"] = f.participation;
  doc["rounds"] = f.rounds;
  doc["local_epochs"] = f.local_epochs;
  doc["server_epochs"] = f.server_epochs;
  doc["batch_size"] = f.batch_size;
  doc["lr"] = f.lr;
  doc["server_lr"] = f.server_lr ? nlohmann::json(*f.server_lr) : nlohmann::json(nullptr);
  doc["gamma"] = f.gamma;
  doc["temperature"] = f.temperature;
  doc["patience"] = f.patience;
  doc["algorithm"] = std::string(algorithm_name(f.algorithm));
  doc["seed"] = f.seed;
  doc["hidden_dims"] = f.hidden_dims;
  doc["ntd_weight"] = f.ntd_weight;
  doc["data"] = {
      {"source", d.source == DataSource::Synthetic ? "synthetic" : "csv"},
      {"num_classes", d.num_classes},
      {"dim", d.dim},
      {"num_train", d.num_train},
      {"num_test", d.num_test},
      {"separation", d.separation},
      {"noise", d.noise},
      {"train_csv", d.train_csv},
      {"test_csv", d.test_csv},
      {"beta", d.beta},
      {"min_per_client", d.min_per_client},
      {"public_fraction", d.public_fraction},
      {"public_val_fraction", d.public_val_fraction},
      {"client_train_fraction", d.client_train_fraction},
      {"public_imbalance", d.public_imbalance},
  };
  return doc;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(doc);
}

// Derived seeds for the independent pieces of data preparation.
inline std::uint64_t data_seed(std::uint64_t seed, std::uint64_t purpose) {
  std::uint64_t s = seed ^ (0xA5A5A5A5ULL * (purpose + 1));
  return splitmix64(s);
}

// Builds the public sets, the client shards and the test set. Depends only on
// the data section, the client count and the seed, so every algorithm run
// with the same seed sees the same data.
inline ExperimentData prepare_data(const DataConfig& dc, std::size_t num_clients, std::uint64_t seed) {
  LabeledDataset train;
  LabeledDataset test;
  if (dc.source == DataSource::Synthetic) {
    train = generate_synthetic(dc.num_classes, dc.dim, dc.num_train, dc.separation, dc.noise, data_seed(seed, 1));
    test = generate_synthetic(dc.num_classes, dc.dim, dc.num_test, dc.separation, dc.noise, data_seed(seed, 2));
  } else {
    train = load_csv(dc.train_csv);
    test = load_csv(dc.test_csv);
    const auto classes = std::max(train.num_classes, test.num_classes);
    train.num_classes = classes;
    test.num_classes = classes;
    require(train.dim() == test.dim(), "train and test csv feature widths differ");
  }

  auto split = split_public(train, dc.public_fraction, dc.public_val_fraction, data_seed(seed, 3));
  ExperimentData out;
  out.public_train = std::move(split.public_train);
  out.public_val = std::move(split.public_val);
  if (dc.public_imbalance) {
    out.public_train = imbalance_subsample(out.public_train, kImbalanceDecay, data_seed(seed, 4));
    out.public_val = imbalance_subsample(out.public_val, kImbalanceDecay, data_seed(seed, 5));
  }
  out.test = std::move(test);

  const auto plan = dirichlet_partition(split.remainder, num_clients, dc.beta, dc.min_per_client, data_seed(seed, 6));
  for (std::size_t k = 0; k < num_clients; ++k) {
    const auto shard = split.remainder.subset(plan.assignments[k]);
    auto [client_train, client_val] = train_val_split(shard, dc.client_train_fraction, data_seed(seed, 100 + k));
    out.clients.push_back(make_client(k, std::move(client_train), std::move(client_val)));
  }
  return out;
}

// FNV-1a over the test labels and feature bytes; runs are comparable only
// when evaluated on the same test set.
inline std::uint64_t dataset_hash(const LabeledDataset& data) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  };
  mix(data.labels.data(), data.labels.size() * sizeof(int));
  mix(data.features.data.data(), data.features.data.size() * sizeof(double));
  return h;
}

}  // namespace fedsim
