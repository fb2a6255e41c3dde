#pragma once

// Dataset synthesis, CSV ingestion, Dirichlet non-IID partitioning and the
// public / client train / validation splits.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }
  bool empty() const { return labels.empty(); }

  LabeledDataset subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.features = gather_rows(features, indices);
    out.labels.reserve(indices.size());
    for (auto i : indices) out.labels.push_back(labels[i]);
    out.num_classes = num_classes;
    return out;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }

  void validate() const {
    require(features.rows == labels.size(), "dataset: feature rows and label count differ");
    require(num_classes >= 1, "dataset: num_classes must be positive");
    for (int y : labels)
      require(y >= 0 && static_cast<std::size_t>(y) < num_classes, "dataset: label out of range");
  }

  bool operator==(const LabeledDataset&) const = default;
};

// Class means sit on scaled axis vectors: class c < d at +s e_c, class
// d <= c < 2d at -s e_{c-d}, with s = separation / sqrt(2). Any two means are
// at least `separation` apart. Sample i has label i mod C, so per-class counts
// differ by at most one. The layout does not depend on the seed, which lets a
// test set be drawn from the same distribution with a different seed.
inline std::vector<std::vector<double>> synthetic_means(std::size_t num_classes, std::size_t dim, double separation) {
  require(num_classes >= 2, "synthetic: need at least 2 classes");
  require(dim >= 1, "synthetic: dim must be positive");
  require(num_classes <= 2 * dim, "synthetic: num_classes must not exceed 2 * dim");
  const double scale = separation / std::sqrt(2.0);
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (c < dim)
      means[c][c] = scale;
    else
      means[c][c - dim] = -scale;
  }
  return means;
}

inline LabeledDataset generate_synthetic(std::size_t num_classes, std::size_t dim, std::size_t n, double separation,
                                         double noise, std::uint64_t seed) {
  require(n >= num_classes, "synthetic: n must be at least num_classes");
  require(separation > 0.0 && noise > 0.0, "synthetic: separation and noise must be positive");
  const auto means = synthetic_means(num_classes, dim, separation);

  LabeledDataset data;
  data.num_classes = num_classes;
  data.features = Matrix(n, dim);
  data.labels.resize(n);
  Rng rng = Rng::keyed(seed, {stream::kData, 0x5E});
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = i % num_classes;
    data.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < dim; ++j) data.features(i, j) = means[c][j] + noise * rng.normal();
  }
  return data;
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_double(std::string_view field, std::size_t line_no) {
  double value = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  require(ec == std::errc() && ptr == end && std::isfinite(value),
          "csv line " + std::to_string(line_no) + ": malformed feature '" + std::string(field) + "'");
  return value;
}

inline int parse_label(std::string_view field, std::size_t line_no) {
  int value = -1;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value, 10);
  require(ec == std::errc() && ptr == end && value >= 0,
          "csv line " + std::to_string(line_no) + ": label must be a non-negative integer, got '" +
              std::string(field) + "'");
  return value;
}

}  // namespace detail

// Header `f0,...,f{d-1},label`. C is max label + 1 unless `num_classes` is given.
inline LabeledDataset load_csv(const std::string& path, std::optional<std::size_t> num_classes = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "csv: cannot open " + path);

  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "csv: empty file " + path);
  const auto header = detail::split_commas(line);
  require(header.size() >= 2 && header.back() == "label", "csv: header must end with 'label'");
  const std::size_t dim = header.size() - 1;
  for (std::size_t j = 0; j < dim; ++j)
    require(header[j] == "f" + std::to_string(j), "csv: header column " + std::to_string(j) + " must be f" +
                                                      std::to_string(j));

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_commas(line);
    require(fields.size() == dim + 1, "csv line " + std::to_string(line_no) + ": expected " +
                                          std::to_string(dim + 1) + " fields, got " + std::to_string(fields.size()));
    for (std::size_t j = 0; j < dim; ++j) values.push_back(detail::parse_double(fields[j], line_no));
    labels.push_back(detail::parse_label(fields[dim], line_no));
  }
  require(!labels.empty(), "csv: no data rows in " + path);

  LabeledDataset data;
  data.features = Matrix(labels.size(), dim);
  data.features.data = std::move(values);
  const auto max_label = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()));
  data.num_classes = num_classes.value_or(max_label + 1);
  require(max_label < data.num_classes, "csv: label exceeds num_classes override");
  data.labels = std::move(labels);
  return data;
}

inline void write_csv(const LabeledDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "csv: cannot write " + path);
  for (std::size_t j = 0; j < data.dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", data.features(i, j));
      out << buf << ',';
    }
    out << data.labels[i] << '\n';
  }
}

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;
  double beta = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr int kPartitionRetries = 64;

// For every class, proportions over clients ~ Dirichlet(beta * 1_N); the
// class's shuffled samples are cut at floor(cumsum * n_c). The whole plan is
// redrawn until each client holds at least `min_per_client` samples.
inline PartitionPlan dirichlet_partition(std::span<const int> labels, std::size_t num_classes, std::size_t num_clients,
                                         double beta, std::size_t min_per_client, std::uint64_t seed) {
  require(num_clients >= 1, "partition: need at least one client");
  require(beta > 0.0, "partition: beta must be positive");
  require(labels.size() >= num_clients * min_per_client, "partition: not enough samples for min_per_client");

  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  Rng rng = Rng::keyed(seed, {stream::kData, 0xD1});
  for (int attempt = 0; attempt < kPartitionRetries; ++attempt) {
    std::vector<std::vector<std::size_t>> clients(num_clients);
    for (const auto& members : by_class) {
      if (members.empty()) continue;
      auto shuffled = members;
      rng.shuffle(shuffled);
      const auto proportions = rng.dirichlet(num_clients, beta);
      const double n_c = static_cast<double>(shuffled.size());
      double cumulative = 0.0;
      std::size_t begin = 0;
      for (std::size_t k = 0; k < num_clients; ++k) {
        cumulative += proportions[k];
        std::size_t end = k + 1 == num_clients
                              ? shuffled.size()
                              : std::min(shuffled.size(), static_cast<std::size_t>(std::floor(cumulative * n_c)));
        end = std::max(end, begin);
        clients[k].insert(clients[k].end(), shuffled.begin() + static_cast<std::ptrdiff_t>(begin),
                          shuffled.begin() + static_cast<std::ptrdiff_t>(end));
        begin = end;
      }
    }
    const bool feasible = std::all_of(clients.begin(), clients.end(),
                                      [&](const auto& c) { return c.size() >= min_per_client; });
    if (!feasible) continue;
    for (auto& c : clients) std::sort(c.begin(), c.end());
    return PartitionPlan{std::move(clients), beta, seed};
  }
  throw Error("partition: could not give every client " + std::to_string(min_per_client) + " samples after " +
              std::to_string(kPartitionRetries) + " draws (beta=" + std::to_string(beta) + ")");
}

inline PartitionPlan dirichlet_partition(const LabeledDataset& data, std::size_t num_clients, double beta,
                                         std::size_t min_per_client, std::uint64_t seed) {
  return dirichlet_partition(data.labels, data.num_classes, num_clients, beta, min_per_client, seed);
}

struct PublicSplitIndices {
  std::vector<std::size_t> public_train;
  std::vector<std::size_t> public_val;
  std::vector<std::size_t> remainder;
};

struct PublicSplit {
  LabeledDataset public_train;
  LabeledDataset public_val;
  LabeledDataset remainder;
};

// |public| = round(n * public_fraction), of which round(|public| *
// public_val_fraction) go to validation. Remainder keeps the original order.
inline PublicSplitIndices split_public_indices(std::size_t n, double public_fraction, double public_val_fraction,
                                               std::uint64_t seed) {
  require(public_fraction > 0.0 && public_fraction < 1.0, "split_public: public_fraction must be in (0,1)");
  require(public_val_fraction > 0.0 && public_val_fraction < 1.0,
          "split_public: public_val_fraction must be in (0,1)");
  const auto n_public = static_cast<std::size_t>(std::llround(static_cast<double>(n) * public_fraction));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n_public) * public_val_fraction));
  require(n_public < n && n_val > 0 && n_val < n_public, "split_public: a split part would be empty");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = Rng::keyed(seed, {stream::kData, 0xB1});
  rng.shuffle(perm);

  PublicSplitIndices out;
  const auto n_train = n_public - n_val;
  out.public_train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.public_val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                        perm.begin() + static_cast<std::ptrdiff_t>(n_public));
  out.remainder.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_public), perm.end());
  std::sort(out.remainder.begin(), out.remainder.end());
  return out;
}

inline PublicSplit split_public(const LabeledDataset& data, double public_fraction, double public_val_fraction,
                                std::uint64_t seed) {
  const auto idx = split_public_indices(data.size(), public_fraction, public_val_fraction, seed);
  return {data.subset(idx.public_train), data.subset(idx.public_val), data.subset(idx.remainder)};
}

struct TrainValIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

inline TrainValIndices train_val_split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
  require(n >= 2, "train_val_split: need at least 2 samples");
  require(train_fraction > 0.0 && train_fraction < 1.0, "train_val_split: train_fraction must be in (0,1)");
  auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = Rng::keyed(seed, {stream::kData, 0x7F});
  rng.shuffle(perm);
  TrainValIndices out;
  out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

inline std::pair<LabeledDataset, LabeledDataset> train_val_split(const LabeledDataset& data,
                                                                 double train_fraction, std::uint64_t seed) {
  const auto idx = train_val_split_indices(data.size(), train_fraction, seed);
  return {data.subset(idx.train), data.subset(idx.val)};
}

inline constexpr double kImbalanceDecay = 0.7;

// Class-imbalanced subsample: the k-th class keeps round(n_k * decay^k)
// samples (at least one if it had any).
inline LabeledDataset imbalance_subsample(const LabeledDataset& data, double decay, std::uint64_t seed) {
  require(decay > 0.0 && decay <= 1.0, "imbalance: decay must be in (0,1]");
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  Rng rng = Rng::keyed(seed, {stream::kData, 0x1B});
  std::vector<std::size_t> keep;
  double factor = 1.0;
  for (auto& members : by_class) {
    rng.shuffle(members);
    if (!members.empty()) {
      auto n_keep = static_cast<std::size_t>(std::llround(static_cast<double>(members.size()) * factor));
      n_keep = std::clamp<std::size_t>(n_keep, 1, members.size());
      keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_keep));
    }
    factor *= decay;
  }
  std::sort(keep.begin(), keep.end());
  return data.subset(keep);
}

}  // namespace fedsim
