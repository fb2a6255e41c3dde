#pragma once

// Round engine: client sampling, local updates for each algorithm variant,
// weighted averaging, server-side distillation with early stopping, and the
// label-count (pi) bookkeeping that drives the dynamic distillation weights.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/data.hpp"
#include "fedsim/knowledge.hpp"
#include "fedsim/losses.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class Algorithm {
  FedAvg,
  Flashback,
  FedNTD,
  FlashbackLocalOnly,
  FlashbackServerOnly,
  FedAvgFinetune,
  FlashbackNTD,  // NTD locally, Flashback server distillation
};

inline constexpr std::pair<Algorithm, std::string_view> kAlgorithmNames[] = {
    {Algorithm::FedAvg, "fedavg"},
    {Algorithm::Flashback, "flashback"},
    {Algorithm::FedNTD, "fedntd"},
    {Algorithm::FlashbackLocalOnly, "flashback-local-only"},
    {Algorithm::FlashbackServerOnly, "flashback-server-only"},
    {Algorithm::FedAvgFinetune, "fedavg-finetune"},
    {Algorithm::FlashbackNTD, "flashback-ntd"},
};

inline std::string_view algorithm_name(Algorithm a) {
  for (const auto& [value, name] : kAlgorithmNames)
    if (value == a) return name;
  return "unknown";
}

inline std::optional<Algorithm> parse_algorithm(std::string_view name) {
  for (const auto& [value, n] : kAlgorithmNames)
    if (n == name) return value;
  return std::nullopt;
}

enum class LocalObjective { CrossEntropy, DynamicKD, NTD };
enum class ServerStep { None, Distill, Finetune };

struct VariantTraits {
  LocalObjective local;
  ServerStep server;
  bool tracks_pi;
};

inline VariantTraits traits(Algorithm a) {
  switch (a) {
    case Algorithm::FedAvg: return {LocalObjective::CrossEntropy, ServerStep::None, false};
    case Algorithm::Flashback: return {LocalObjective::DynamicKD, ServerStep::Distill, true};
    case Algorithm::FedNTD: return {LocalObjective::NTD, ServerStep::None, false};
    case Algorithm::FlashbackLocalOnly: return {LocalObjective::DynamicKD, ServerStep::None, true};
    case Algorithm::FlashbackServerOnly: return {LocalObjective::CrossEntropy, ServerStep::Distill, true};
    case Algorithm::FedAvgFinetune: return {LocalObjective::CrossEntropy, ServerStep::Finetune, false};
    case Algorithm::FlashbackNTD: return {LocalObjective::NTD, ServerStep::Distill, true};
  }
  throw Error("unknown algorithm");
}

struct FederationConfig {
  std::size_t num_clients = 100;
  double participation = 0.1;
  std::size_t rounds = 40;
  std::size_t local_epochs = 5;
  std::size_t server_epochs = 50;
  std::size_t batch_size = 32;
  double lr = 0.01;
  std::optional<double> server_lr;  // defaults to lr
  double gamma = 0.025;
  double temperature = 3.0;
  std::size_t patience = 3;
  Algorithm algorithm = Algorithm::Flashback;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden_dims{16};
  double ntd_weight = 1.0;

  double effective_server_lr() const { return server_lr.value_or(lr); }

  void validate() const {
    require(num_clients >= 1, "config: num_clients must be positive");
    require(participation > 0.0 && participation <= 1.0, "config: participation must be in (0,1]");
    require(participation * static_cast<double>(num_clients) >= 1.0 - 1e-9,
            "config: participation * num_clients must be at least 1");
    require(batch_size >= 1, "config: batch_size must be positive");
    require(lr > 0.0, "config: lr must be positive");
    require(effective_server_lr() > 0.0, "config: server_lr must be positive");
    require(gamma > 0.0 && gamma <= 1.0, "config: gamma must be in (0,1]");
    require(temperature > 0.0, "config: temperature must be positive");
    require(patience >= 1, "config: patience must be positive");
    require(ntd_weight >= 0.0, "config: ntd_weight must be non-negative");
    for (auto h : hidden_dims) require(h > 0, "config: hidden_dims entries must be positive");
  }

  bool operator==(const FederationConfig&) const = default;
};

struct ClientState {
  std::uint64_t id = 0;
  LabeledDataset train;
  LabeledDataset val;
  LabelCount label_count;  // relative class frequencies of `train`

  std::size_t num_samples() const { return train.size(); }
};

// Everything the round loop reads but never writes.
struct ExperimentData {
  std::vector<ClientState> clients;
  LabeledDataset public_train;
  LabeledDataset public_val;
  LabeledDataset test;

  std::size_t num_classes() const { return test.num_classes; }
  std::size_t input_dim() const { return test.dim(); }
};

inline ClientState make_client(std::uint64_t id, LabeledDataset train, LabeledDataset val) {
  ClientState c;
  c.id = id;
  c.label_count = client_label_count(train);
  c.train = std::move(train);
  c.val = std::move(val);
  return c;
}

// Evolving server-side state.
struct FederationState {
  std::uint64_t round = 0;
  ModelParams global;
  LabelCount pi;
  ParticipationRegistry registry;

  bool operator==(const FederationState&) const = default;
};

inline ModelSpec model_spec(const FederationConfig& cfg, const ExperimentData& data) {
  return ModelSpec{data.input_dim(), cfg.hidden_dims, data.num_classes(), Activation::ReLU};
}

inline FederationState initial_state(const FederationConfig& cfg, const ExperimentData& data) {
  FederationState s;
  s.global = init_params(model_spec(cfg, data), cfg.seed);
  s.pi = LabelCount(data.num_classes());
  return s;
}

// Work counters, used to check which data each variant touches.
struct Instrumentation {
  std::uint64_t local_ce_steps = 0;
  std::uint64_t local_dkd_steps = 0;
  std::uint64_t local_ntd_steps = 0;
  std::uint64_t public_train_batches = 0;
  std::uint64_t public_val_evals = 0;

  Instrumentation& operator+=(const Instrumentation& o) {
    local_ce_steps += o.local_ce_steps;
    local_dkd_steps += o.local_dkd_steps;
    local_ntd_steps += o.local_ntd_steps;
    public_train_batches += o.public_train_batches;
    public_val_evals += o.public_val_evals;
    return *this;
  }
};

// ceil(R * N) distinct ids, uniform without replacement, sorted ascending.
inline std::vector<std::uint64_t> sample_clients(std::size_t num_clients, double participation, std::uint64_t seed,
                                                 std::uint64_t round) {
  const auto k = static_cast<std::size_t>(std::ceil(participation * static_cast<double>(num_clients) - 1e-9));
  require(k >= 1 && k <= num_clients, "sample_clients: ceil(R*N) must be in [1, N]");
  std::vector<std::uint64_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), std::uint64_t{0});
  Rng rng = Rng::keyed(seed, {stream::kSampling, round});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(num_clients - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  return batches;
}

inline std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels[r]);
  return out;
}

}  // namespace detail

struct LocalResult {
  ModelParams params;
  Instrumentation counters;
};

// E epochs of minibatch SGD from w_prev on the client's training data. The
// teacher, where the objective has one, is the frozen w_prev. Batch order is
// drawn from the stream keyed by (seed, round, client id).
inline LocalResult local_update(LocalObjective objective, const ModelParams& w_prev, const ClientState& client,
                                const LabelCount& pi, const FederationConfig& cfg, std::uint64_t round) {
  require(!client.train.empty(), "local_update: client has no training data");
  LocalResult out{w_prev, {}};
  Rng rng = Rng::keyed(cfg.seed, {stream::kLocal, round, client.id});

  AlphaMatrix alpha;
  if (objective == LocalObjective::DynamicKD) alpha = compute_alpha(client.label_count, {pi});

  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    for (const auto& rows : detail::epoch_batches(client.train.size(), cfg.batch_size, rng)) {
      const Matrix features = gather_rows(client.train.features, rows);
      const auto labels = detail::gather_labels(client.train.labels, rows);
      const Matrix logits = forward_logits(out.params, features);
      LossResult loss;
      switch (objective) {
        case LocalObjective::CrossEntropy:
          loss = cross_entropy(logits, labels);
          ++out.counters.local_ce_steps;
          break;
        case LocalObjective::DynamicKD: {
          TeacherSet teachers{{forward_logits(w_prev, features)}};
          loss = dynamic_kd_loss(logits, teachers, labels, alpha, cfg.temperature);
          ++out.counters.local_dkd_steps;
          break;
        }
        case LocalObjective::NTD:
          loss = ntd_loss(logits, forward_logits(w_prev, features), labels, cfg.ntd_weight, cfg.temperature);
          ++out.counters.local_ntd_steps;
          break;
      }
      const auto grad = backward(out.params, features, loss.grad);
      out.params = sgd_step(std::move(out.params), grad, cfg.lr);
    }
  }
  return out;
}

// sum_k (n_k / sum n) w_k. Pairs are put in a canonical order and folded as a
// running weighted mean, so the result does not depend on input order and
// identical inputs come back unchanged.
inline ModelParams fedavg_aggregate(std::span<const ModelParams> models, std::span<const std::size_t> sizes) {
  require(!models.empty(), "fedavg_aggregate: no models");
  require(models.size() == sizes.size(), "fedavg_aggregate: one size per model required");
  for (std::size_t i = 0; i < models.size(); ++i) {
    require(models[i].size() == models[0].size(), "fedavg_aggregate: parameter length mismatch");
    require(sizes[i] > 0, "fedavg_aggregate: sizes must be positive");
  }
  std::vector<std::size_t> order(models.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sizes[a] != sizes[b]) return sizes[a] < sizes[b];
    return models[a].values < models[b].values;
  });

  ModelParams out = models[order[0]];
  double total = static_cast<double>(sizes[order[0]]);
  for (std::size_t idx = 1; idx < order.size(); ++idx) {
    const auto& w = models[order[idx]].values;
    const double n = static_cast<double>(sizes[order[idx]]);
    total += n;
    const double share = n / total;
    for (std::size_t j = 0; j < w.size(); ++j) out.values[j] += share * (w[j] - out.values[j]);
  }
  return out;
}

struct PublicTrainingResult {
  ModelParams params;
  std::size_t epochs_run = 0;
  double best_val_loss = 0.0;
  Instrumentation counters;
};

// Objective on a public-set slice: student logits for `rows` of the set,
// labels for those rows, and whether the slice is the validation set.
using PublicObjective =
    std::function<LossResult(const Matrix& logits, std::span<const std::size_t> rows, std::span<const int> labels,
                             bool validation)>;

// Minibatch SGD on `train` for at most `max_epochs`, tracking the objective on
// all of `val`. Stops once `patience` consecutive epochs fail to improve the
// best validation loss and returns the best parameters seen, the starting
// point included.
inline PublicTrainingResult early_stopped_training(ModelParams start, const LabeledDataset& train,
                                                   const LabeledDataset& val, const PublicObjective& objective,
                                                   std::size_t max_epochs, std::size_t patience,
                                                   std::size_t batch_size, double lr, Rng& rng) {
  require(!train.empty() && !val.empty(), "public training: public train/val sets must be non-empty");
  std::vector<std::size_t> all_val(val.size());
  std::iota(all_val.begin(), all_val.end(), std::size_t{0});

  PublicTrainingResult out;
  auto val_loss = [&](const ModelParams& p) {
    ++out.counters.public_val_evals;
    return objective(forward_logits(p, val.features), all_val, val.labels, true).value;
  };

  out.params = start;
  out.best_val_loss = val_loss(start);
  ModelParams current = std::move(start);
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    for (const auto& rows : detail::epoch_batches(train.size(), batch_size, rng)) {
      const Matrix features = gather_rows(train.features, rows);
      const auto labels = detail::gather_labels(train.labels, rows);
      const auto loss = objective(forward_logits(current, features), rows, labels, false);
      const auto grad = backward(current, features, loss.grad);
      current = sgd_step(std::move(current), grad, lr);
      ++out.counters.public_train_batches;
    }
    out.epochs_run = epoch;
    const double v = val_loss(current);
    if (v < out.best_val_loss) {
      out.best_val_loss = v;
      out.params = current;
      stale = 0;
    } else if (++stale >= patience) {
      break;
    }
  }
  return out;
}

// Teachers: every local model (label count mu_k) and the previous global
// model (label count `prev_global_count`). Student label count is pi.
struct DistillTeachers {
  std::vector<ModelParams> models;
  std::vector<LabelCount> counts;
};

inline PublicTrainingResult server_distill(const ModelParams& w_agg, const DistillTeachers& teachers,
                                           const LabelCount& pi, const LabeledDataset& public_train,
                                           const LabeledDataset& public_val, const FederationConfig& cfg,
                                           std::uint64_t round) {
  require(!public_train.empty() && !public_val.empty(), "server_distill: public data must be non-empty");
  require(!teachers.models.empty() && teachers.models.size() == teachers.counts.size(),
          "server_distill: one label count per teacher required");
  const AlphaMatrix alpha = compute_alpha(pi, teachers.counts);

  // Teachers are frozen: their logits on the public sets are fixed.
  std::vector<Matrix> train_logits;
  std::vector<Matrix> val_logits;
  for (const auto& t : teachers.models) {
    train_logits.push_back(forward_logits(t, public_train.features));
    val_logits.push_back(forward_logits(t, public_val.features));
  }

  PublicObjective objective = [&](const Matrix& logits, std::span<const std::size_t> rows,
                                  std::span<const int> labels, bool validation) {
    TeacherSet set;
    for (const auto& full : validation ? val_logits : train_logits) set.logits.push_back(gather_rows(full, rows));
    return dynamic_kd_loss(logits, set, labels, alpha, cfg.temperature);
  };
  Rng rng = Rng::keyed(cfg.seed, {stream::kServer, round});
  return early_stopped_training(w_agg, public_train, public_val, objective, cfg.server_epochs, cfg.patience,
                                cfg.batch_size, cfg.effective_server_lr(), rng);
}

// Plain cross-entropy fine-tuning of the aggregate on the public data, with
// the same early-stopping rule as server_distill.
inline PublicTrainingResult server_finetune(const ModelParams& w_agg, const LabeledDataset& public_train,
                                            const LabeledDataset& public_val, const FederationConfig& cfg,
                                            std::uint64_t round) {
  PublicObjective objective = [](const Matrix& logits, std::span<const std::size_t>, std::span<const int> labels,
                                 bool) { return cross_entropy(logits, labels); };
  Rng rng = Rng::keyed(cfg.seed, {stream::kServer, round});
  return early_stopped_training(w_agg, public_train, public_val, objective, cfg.server_epochs, cfg.patience,
                                cfg.batch_size, cfg.effective_server_lr(), rng);
}

// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware).
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct RunOptions {
  std::size_t threads = 1;  // 0 = hardware concurrency
};

struct RoundOutcome {
  FederationState state;
  RoundRecord record;
  Instrumentation counters;
};

// One round, in order: sample, local updates, aggregate, server step, pi update.
// pi seen by this round's local updates and server step is the value left by
// the previous round.
inline RoundOutcome run_round(const FederationState& state, const ExperimentData& data, const FederationConfig& cfg,
                              const RunOptions& options = {}) {
  require(data.clients.size() == cfg.num_clients, "run_round: client count does not match config");
  const VariantTraits variant = traits(cfg.algorithm);
  const std::uint64_t t = state.round + 1;

  RoundOutcome out;
  out.record.round = t;
  out.record.participants = sample_clients(cfg.num_clients, cfg.participation, cfg.seed, t);
  const auto& participants = out.record.participants;

  const Evaluation prev_eval = evaluate(state.global, data.test);
  out.record.prev_global_acc = prev_eval.per_class;
  out.record.prev_global_test_loss = prev_eval.loss;

  std::vector<LocalResult> locals(participants.size());
  std::vector<Evaluation> local_evals(participants.size());
  parallel_for(participants.size(), options.threads, [&](std::size_t i) {
    const auto& client = data.clients[participants[i]];
    locals[i] = local_update(variant.local, state.global, client, state.pi, cfg, t);
    local_evals[i] = evaluate(locals[i].params, data.test);
  });

  std::vector<ModelParams> local_models;
  std::vector<std::size_t> sizes;
  double local_loss_sum = 0.0;
  for (std::size_t i = 0; i < participants.size(); ++i) {
    out.counters += locals[i].counters;
    local_models.push_back(std::move(locals[i].params));
    sizes.push_back(data.clients[participants[i]].num_samples());
    out.record.client_acc.push_back(local_evals[i].per_class);
    local_loss_sum += local_evals[i].loss;
  }
  out.record.mean_local_test_loss = local_loss_sum / static_cast<double>(participants.size());

  ModelParams next = fedavg_aggregate(local_models, sizes);

  switch (variant.server) {
    case ServerStep::None: break;
    case ServerStep::Distill: {
      DistillTeachers teachers;
      for (std::size_t i = 0; i < participants.size(); ++i) {
        teachers.models.push_back(local_models[i]);
        teachers.counts.push_back(data.clients[participants[i]].label_count);
      }
      teachers.models.push_back(state.global);
      teachers.counts.push_back(state.pi);
      auto result = server_distill(next, teachers, state.pi, data.public_train, data.public_val, cfg, t);
      next = std::move(result.params);
      out.record.server_distill_epochs = result.epochs_run;
      out.counters += result.counters;
      break;
    }
    case ServerStep::Finetune: {
      auto result = server_finetune(next, data.public_train, data.public_val, cfg, t);
      next = std::move(result.params);
      out.record.server_distill_epochs = result.epochs_run;
      out.counters += result.counters;
      break;
    }
  }

  out.state.round = t;
  out.state.global = std::move(next);
  out.state.pi = state.pi;
  out.state.registry = state.registry;
  if (variant.tracks_pi) {
    std::vector<Participation> update;
    for (auto id : participants) update.push_back({id, data.clients[id].label_count});
    auto counted = update_global_count(state.pi, state.registry, update, cfg.gamma);
    out.state.pi = std::move(counted.pi);
    out.state.registry = std::move(counted.registry);
  }

  const Evaluation eval = evaluate(out.state.global, data.test);
  out.record.global_per_class_acc = eval.per_class;
  out.record.global_acc = eval.accuracy;
  out.record.global_test_loss = eval.loss;
  out.record.round_forgetting = detail::mean_drop(out.record.prev_global_acc, eval.per_class);
  const auto decomposition = forgetting_decomposition(out.record);
  out.record.local_forgetting = decomposition.local;
  out.record.aggregation_forgetting = decomposition.aggregation;
  return out;
}

struct ExperimentResult {
  FederationState state;
  std::vector<RoundRecord> records;
  AccuracyMatrix accuracy;  // row 0 = model the run started from
  Instrumentation counters;
};

// Runs rounds state.round+1 .. cfg.rounds. `on_round` sees each record as it
// is produced (used for streaming metrics and checkpoints).
inline ExperimentResult run_experiment(const FederationConfig& cfg, const ExperimentData& data,
                                       std::optional<FederationState> resume = std::nullopt,
                                       const RunOptions& options = {},
                                       const std::function<void(const RoundOutcome&)>& on_round = {}) {
  cfg.validate();
  ExperimentResult out;
  out.state = resume ? std::move(*resume) : initial_state(cfg, data);
  require(out.state.round <= cfg.rounds, "run_experiment: state is past the configured round count");
  out.accuracy.rows.push_back(evaluate(out.state.global, data.test).per_class);
  while (out.state.round < cfg.rounds) {
    RoundOutcome round = run_round(out.state, data, cfg, options);
    if (on_round) on_round(round);
    out.accuracy.rows.push_back(round.record.global_per_class_acc);
    out.counters += round.counters;
    out.records.push_back(std::move(round.record));
    out.state = std::move(round.state);
  }
  return out;
}

}  // namespace fedsim
