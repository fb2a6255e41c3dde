#pragma once

// Run artifacts: checkpoint JSON, metrics JSONL records, CSV tables.
//
// Parameters are stored as base64 of their IEEE-754 64-bit little-endian
// bytes. JSON numbers are written by nlohmann::json, whose float output is the
// shortest string that parses back to the same double; CSV floats use %.17g.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsim/common.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/metrics.hpp"

namespace fedsim {

inline constexpr std::string_view kVersion = "0.1.0";

inline std::string base64_encode(std::span<const unsigned char> bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  require(text.size() % 4 == 0, "base64: length must be a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::array<int, 4> v{};
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=') {
        require(i + 4 == text.size() && j >= 2, "base64: misplaced padding");
        v[j] = 0;
        ++pad;
      } else {
        require(pad == 0, "base64: data after padding");
        v[j] = value(c);
        require(v[j] >= 0, "base64: invalid character");
      }
    }
    const std::uint32_t bits = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<unsigned char>(bits >> 16));
    if (pad < 2) out.push_back(static_cast<unsigned char>((bits >> 8) & 0xFF));
    if (pad < 1) out.push_back(static_cast<unsigned char>(bits & 0xFF));
  }
  return out;
}

inline std::string encode_doubles(std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  return base64_encode(bytes);
}

inline std::vector<double> decode_doubles(std::string_view text) {
  const auto bytes = base64_decode(text);
  require(bytes.size() % 8 == 0, "params: byte count is not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json params_to_json(const ModelParams& params) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : params.shapes) shapes.push_back({s.rows, s.cols, s.bias});
  return {{"shapes", shapes}, {"values", encode_doubles(params.values)}};
}

inline ModelParams params_from_json(const nlohmann::json& doc) {
  ModelParams params;
  for (const auto& s : doc.at("shapes"))
    params.shapes.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>()});
  params.values = decode_doubles(doc.at("values").get<std::string>());
  params.validate();
  return params;
}

inline nlohmann::json checkpoint_to_json(const FederationState& state) {
  nlohmann::json registry = nlohmann::json::object();
  for (const auto& [client, rounds] : state.registry.rounds) registry[std::to_string(client)] = rounds;
  return {{"round", state.round}, {"params", params_to_json(state.global)}, {"pi", state.pi.counts},
          {"registry", registry}};
}

inline FederationState checkpoint_from_json(const nlohmann::json& doc) {
  try {
    FederationState state;
    state.round = doc.at("round").get<std::uint64_t>();
    state.global = params_from_json(doc.at("params"));
    state.pi = LabelCount(doc.at("pi").get<std::vector<double>>());
    for (auto it = doc.at("registry").begin(); it != doc.at("registry").end(); ++it)
      state.registry.rounds[std::stoull(it.key())] = it.value().get<std::uint64_t>();
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
}

namespace detail {

inline nlohmann::ordered_json accuracy_array(std::span<const double> acc) {
  auto out = nlohmann::ordered_json::array();
  for (double a : acc) out.push_back(std::isnan(a) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(a));
  return out;
}

inline std::vector<double> accuracy_from_json(const nlohmann::json& arr) {
  std::vector<double> out;
  for (const auto& v : arr) out.push_back(v.is_null() ? kUndefined : v.get<double>());
  return out;
}

}  // namespace detail

// One metrics.jsonl line.
inline std::string record_to_jsonl(const RoundRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["global_acc"] = r.global_acc;
  j["per_class_acc"] = detail::accuracy_array(r.global_per_class_acc);
  j["round_forgetting"] = r.round_forgetting;
  j["local_forgetting"] = r.local_forgetting;
  j["aggregation_forgetting"] = r.aggregation_forgetting;
  j["mean_local_test_loss"] = r.mean_local_test_loss;
  j["global_test_loss"] = r.global_test_loss;
  j["participants"] = r.participants;
  j["server_distill_epochs"] = r.server_distill_epochs;
  j["prev_global_test_loss"] = r.prev_global_test_loss;
  j["prev_global_per_class_acc"] = detail::accuracy_array(r.prev_global_acc);
  auto clients = nlohmann::ordered_json::array();
  for (const auto& c : r.client_acc) clients.push_back(detail::accuracy_array(c));
  j["client_per_class_acc"] = clients;
  return j.dump();
}

inline RoundRecord record_from_json(const nlohmann::json& j) {
  RoundRecord r;
  r.round = j.at("round").get<std::uint64_t>();
  r.global_acc = j.at("global_acc").get<double>();
  r.global_per_class_acc = detail::accuracy_from_json(j.at("per_class_acc"));
  r.round_forgetting = j.at("round_forgetting").get<double>();
  r.local_forgetting = j.at("local_forgetting").get<double>();
  r.aggregation_forgetting = j.at("aggregation_forgetting").get<double>();
  r.mean_local_test_loss = j.at("mean_local_test_loss").get<double>();
  r.global_test_loss = j.at("global_test_loss").get<double>();
  r.participants = j.at("participants").get<std::vector<std::uint64_t>>();
  r.server_distill_epochs = j.at("server_distill_epochs").get<std::uint64_t>();
  r.prev_global_test_loss = j.at("prev_global_test_loss").get<double>();
  r.prev_global_acc = detail::accuracy_from_json(j.at("prev_global_per_class_acc"));
  for (const auto& c : j.at("client_per_class_acc")) r.client_acc.push_back(detail::accuracy_from_json(c));
  return r;
}

inline std::vector<RoundRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read " + path);
  std::vector<RoundRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error("metrics: bad record in " + path + ": " + e.what());
    }
  }
  return out;
}

inline std::string accuracy_matrix_csv(const AccuracyMatrix& a) {
  std::ostringstream out;
  const std::size_t classes = a.rows.empty() ? 0 : a.rows.front().size();
  out << "round";
  for (std::size_t c = 0; c < classes; ++c) out << ",class_" << c;
  out << '\n';
  for (std::size_t t = 0; t < a.rows.size(); ++t) {
    out << t;
    for (double v : a.rows[t]) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

inline AccuracyMatrix read_accuracy_matrix(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read " + path);
  AccuracyMatrix a;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "accuracy matrix: empty file");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');  // round
    while (std::getline(ss, cell, ',')) row.push_back(cell.empty() ? kUndefined : std::stod(cell));
    if (!line.empty() && line.back() == ',') row.push_back(kUndefined);
    a.rows.push_back(std::move(row));
  }
  return a;
}

inline void write_text(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write " + path);
  out << text;
  require(static_cast<bool>(out), "failed writing " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fedsim
