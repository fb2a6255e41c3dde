#pragma once

// Label-count bookkeeping. A model's per-class knowledge is approximated by
// the relative label counts of the data it has learned from: clients use
// their local class frequencies, the global model uses the trust-weighted
// accumulation pi maintained by the server.

#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/data.hpp"

namespace fedsim {

struct LabelCount {
  std::vector<double> counts;

  LabelCount() = default;
  explicit LabelCount(std::size_t num_classes) : counts(num_classes, 0.0) {}
  explicit LabelCount(std::vector<double> values) : counts(std::move(values)) {}

  std::size_t size() const { return counts.size(); }
  double operator[](std::size_t c) const { return counts[c]; }
  double& operator[](std::size_t c) { return counts[c]; }

  bool operator==(const LabelCount&) const = default;
};

// Per-class distillation weights for one student and K teachers.
struct AlphaMatrix {
  std::vector<double> student_row;
  std::vector<std::vector<double>> teacher_rows;

  std::size_t num_teachers() const { return teacher_rows.size(); }
  std::size_t num_classes() const { return student_row.size(); }
};

// Rounds each client has participated in.
struct ParticipationRegistry {
  std::map<std::uint64_t, std::uint64_t> rounds;

  std::uint64_t count(std::uint64_t client) const {
    auto it = rounds.find(client);
    return it == rounds.end() ? 0 : it->second;
  }

  bool operator==(const ParticipationRegistry&) const = default;
};

inline LabelCount client_label_count(std::span<const int> labels, std::size_t num_classes) {
  require(!labels.empty(), "label count: empty dataset");
  LabelCount out(num_classes);
  for (int y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < num_classes, "label count: label out of range");
    out[static_cast<std::size_t>(y)] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  for (auto& v : out.counts) v /= n;
  return out;
}

inline LabelCount client_label_count(const LabeledDataset& data) {
  return client_label_count(data.labels, data.num_classes);
}

// alpha_i^c = mu_i^c / (nu^c + sum_k mu_k^c), alpha_s^c = nu^c / (same).
// A class nobody has seen puts all weight on the student's own labels.
inline AlphaMatrix compute_alpha(const LabelCount& nu, std::span<const LabelCount> mus) {
  require(!mus.empty(), "compute_alpha: need at least one teacher");
  const std::size_t num_classes = nu.size();
  for (const auto& mu : mus) require(mu.size() == num_classes, "compute_alpha: label count length mismatch");

  AlphaMatrix alpha;
  alpha.student_row.assign(num_classes, 1.0);
  alpha.teacher_rows.assign(mus.size(), std::vector<double>(num_classes, 0.0));
  for (std::size_t c = 0; c < num_classes; ++c) {
    double denominator = nu[c];
    for (const auto& mu : mus) denominator += mu[c];
    if (!(denominator > 0.0)) continue;
    alpha.student_row[c] = nu[c] / denominator;
    for (std::size_t i = 0; i < mus.size(); ++i) alpha.teacher_rows[i][c] = mus[i][c] / denominator;
  }
  return alpha;
}

inline AlphaMatrix compute_alpha(const LabelCount& nu, std::initializer_list<LabelCount> mus) {
  return compute_alpha(nu, std::span<const LabelCount>(mus.begin(), mus.size()));
}

struct Participation {
  std::uint64_t client = 0;
  LabelCount label_count;
};

struct GlobalCountUpdate {
  LabelCount pi;
  ParticipationRegistry registry;
};

// Every participant's round counter is bumped first; then pi gains gamma * mu_k
// for each participant whose (incremented) counter still satisfies
// gamma * r_k <= 1, so a client's total contribution never exceeds mu_k.
inline GlobalCountUpdate update_global_count(LabelCount pi, ParticipationRegistry registry,
                                             std::span<const Participation> participants, double gamma) {
  require(gamma > 0.0 && gamma <= 1.0, "update_global_count: gamma must be in (0,1]");
  for (const auto& p : participants) {
    require(p.label_count.size() == pi.size(), "update_global_count: label count length mismatch");
    ++registry.rounds[p.client];
  }
  for (const auto& p : participants) {
    const auto r = static_cast<double>(registry.count(p.client));
    if (gamma * r <= 1.0) {
      for (std::size_t c = 0; c < pi.size(); ++c) pi[c] += gamma * p.label_count[c];
    }
  }
  return {std::move(pi), std::move(registry)};
}

}  // namespace fedsim
