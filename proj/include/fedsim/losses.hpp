#pragma once

// Training objectives over logits. Every loss returns its batch-mean value
// and the gradient with respect to the student logits; teacher logits are
// constants. KL-type terms compare softmax(z / T) distributions, cross-entropy
// terms use T = 1. No T^2 rescaling is applied to distillation gradients.

#include <cmath>
#include <span>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/knowledge.hpp"
#include "fedsim/nn.hpp"

namespace fedsim {

inline constexpr double kProbFloor = 1e-12;

struct LossResult {
  double value = 0.0;
  Matrix grad;  // d(value) / d(student logits), B x C
};

// Logits of each teacher on the same batch the student sees.
struct TeacherSet {
  std::vector<Matrix> logits;

  std::size_t size() const { return logits.size(); }
};

namespace detail {

inline void check_labels(const Matrix& logits, std::span<const int> labels) {
  require(logits.rows == labels.size(), "loss: logits rows and label count differ");
  require(logits.rows > 0, "loss: empty batch");
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < logits.cols, "loss: label out of range");
}

// Adds weighted-KL(teacher_T || student_T) for one sample to `value` and its
// logit gradient (times `scale`) to `grad_row`. Zero weights contribute nothing.
//   value += sum_c w_c p_c (log p_c - log q_c)
//   grad_j += scale * (q_j * sum_c w_c p_c - w_j p_j) / T
inline double weighted_kl_term(std::span<const double> teacher_logits, const std::vector<double>& log_q,
                               const std::vector<double>& q, std::span<const double> weights, double temperature,
                               double scale, std::span<double> grad_row) {
  const auto log_p = log_softmax_t(teacher_logits, temperature);
  double value = 0.0;
  double weighted_mass = 0.0;
  std::vector<double> wp(log_p.size());
  for (std::size_t c = 0; c < log_p.size(); ++c) {
    const double p = std::exp(log_p[c]);
    wp[c] = weights[c] * p;
    weighted_mass += wp[c];
    if (wp[c] != 0.0) value += wp[c] * (log_p[c] - log_q[c]);
  }
  for (std::size_t j = 0; j < grad_row.size(); ++j)
    grad_row[j] += scale * (q[j] * weighted_mass - wp[j]) / temperature;
  return value;
}

inline bool all_zero(std::span<const double> row) {
  for (double v : row)
    if (v != 0.0) return false;
  return true;
}

}  // namespace detail

// mean_i -log softmax(z_i)[y_i]; gradient (softmax(z) - onehot(y)) / B.
inline LossResult cross_entropy(const Matrix& logits, std::span<const int> labels) {
  detail::check_labels(logits, labels);
  const double batch = static_cast<double>(logits.rows);
  LossResult out{0.0, Matrix(logits.rows, logits.cols)};
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto log_s = log_softmax_t(logits.row(i), 1.0);
    const auto y = static_cast<std::size_t>(labels[i]);
    out.value += -log_s[y];
    auto g = out.grad.row(i);
    for (std::size_t c = 0; c < logits.cols; ++c) g[c] = (std::exp(log_s[c]) - (c == y ? 1.0 : 0.0)) / batch;
  }
  out.value /= batch;
  return out;
}

// sum_c p_c log(p_c / q_c) with 0 log 0 = 0 and q floored at kProbFloor.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "kl_divergence: length mismatch");
  double value = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] <= 0.0) continue;
    value += p[c] * (std::log(p[c]) - std::log(std::max(q[c], kProbFloor)));
  }
  return value;
}

// sum_c alpha_c p_c log(p_c / q_c); same conventions as kl_divergence.
inline double dynamic_kl(std::span<const double> p, std::span<const double> q, std::span<const double> alpha_row) {
  require(p.size() == q.size() && p.size() == alpha_row.size(), "dynamic_kl: length mismatch");
  double value = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] <= 0.0 || alpha_row[c] == 0.0) continue;
    value += alpha_row[c] * p[c] * (std::log(p[c]) - std::log(std::max(q[c], kProbFloor)));
  }
  return value;
}

// (1 - alpha) CE(student, y) + alpha KL(softmax_T(teacher) || softmax_T(student)).
inline LossResult standard_kd_loss(const Matrix& student, const Matrix& teacher, std::span<const int> labels,
                                   double alpha, double temperature) {
  require(alpha >= 0.0 && alpha <= 1.0, "standard_kd_loss: alpha must be in [0,1]");
  require(teacher.rows == student.rows && teacher.cols == student.cols, "standard_kd_loss: teacher shape mismatch");
  LossResult out = cross_entropy(student, labels);
  out.value *= (1.0 - alpha);
  for (auto& g : out.grad.data) g *= (1.0 - alpha);
  if (alpha == 0.0) return out;

  const double batch = static_cast<double>(student.rows);
  const std::vector<double> ones(student.cols, 1.0);
  double kl_sum = 0.0;
  for (std::size_t i = 0; i < student.rows; ++i) {
    const auto log_q = log_softmax_t(student.row(i), temperature);
    std::vector<double> q(log_q.size());
    for (std::size_t c = 0; c < q.size(); ++c) q[c] = std::exp(log_q[c]);
    kl_sum += detail::weighted_kl_term(teacher.row(i), log_q, q, ones, temperature, alpha / batch, out.grad.row(i));
  }
  out.value += alpha * kl_sum / batch;
  return out;
}

// Per sample: alpha_s^y CE(student, y) + sum_i dKL(teacher_i, student; alpha_i),
// averaged over the batch. Teachers with an all-zero alpha row are skipped.
inline LossResult dynamic_kd_loss(const Matrix& student, const TeacherSet& teachers, std::span<const int> labels,
                                  const AlphaMatrix& alpha, double temperature) {
  require(teachers.size() >= 1, "dynamic_kd_loss: need at least one teacher");
  require(alpha.num_teachers() == teachers.size(), "dynamic_kd_loss: alpha must have one row per teacher");
  require(alpha.num_classes() == student.cols, "dynamic_kd_loss: alpha width must equal num_classes");
  for (const auto& t : teachers.logits)
    require(t.rows == student.rows && t.cols == student.cols, "dynamic_kd_loss: teacher shape mismatch");
  detail::check_labels(student, labels);

  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < teachers.size(); ++k)
    if (!detail::all_zero(alpha.teacher_rows[k])) active.push_back(k);

  const double batch = static_cast<double>(student.rows);
  LossResult out{0.0, Matrix(student.rows, student.cols)};
  for (std::size_t i = 0; i < student.rows; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    const double weight = alpha.student_row[y];
    const auto log_s = log_softmax_t(student.row(i), 1.0);
    double sample = weight * -log_s[y];
    auto g = out.grad.row(i);
    for (std::size_t c = 0; c < student.cols; ++c)
      g[c] = weight * (std::exp(log_s[c]) - (c == y ? 1.0 : 0.0)) / batch;

    if (!active.empty()) {
      const auto log_q = log_softmax_t(student.row(i), temperature);
      std::vector<double> q(log_q.size());
      for (std::size_t c = 0; c < q.size(); ++c) q[c] = std::exp(log_q[c]);
      for (auto k : active)
        sample += detail::weighted_kl_term(teachers.logits[k].row(i), log_q, q, alpha.teacher_rows[k], temperature,
                                           1.0 / batch, g);
    }
    out.value += sample;
  }
  out.value /= batch;
  return out;
}

// CE + weight * sum_{c != y} p_c log(p_c / q_c), with p, q the full
// temperature softmaxes of teacher and student.
inline LossResult ntd_loss(const Matrix& student, const Matrix& teacher, std::span<const int> labels, double weight,
                           double temperature) {
  require(weight >= 0.0, "ntd_loss: weight must be non-negative");
  require(teacher.rows == student.rows && teacher.cols == student.cols, "ntd_loss: teacher shape mismatch");
  LossResult out = cross_entropy(student, labels);
  if (weight == 0.0) return out;

  const double batch = static_cast<double>(student.rows);
  double masked_sum = 0.0;
  std::vector<double> mask(student.cols);
  for (std::size_t i = 0; i < student.rows; ++i) {
    std::fill(mask.begin(), mask.end(), 1.0);
    mask[static_cast<std::size_t>(labels[i])] = 0.0;
    const auto log_q = log_softmax_t(student.row(i), temperature);
    std::vector<double> q(log_q.size());
    for (std::size_t c = 0; c < q.size(); ++c) q[c] = std::exp(log_q[c]);
    masked_sum +=
        detail::weighted_kl_term(teacher.row(i), log_q, q, mask, temperature, weight / batch, out.grad.row(i));
  }
  out.value += weight * masked_sum / batch;
  return out;
}

}  // namespace fedsim
