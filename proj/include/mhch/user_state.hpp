// User-state tracking and the de-neutral soft adjustment of handoff
// probabilities.
//
// The state at turn t is a recency-weighted average of the local sentiment
// distributions of turns 1..t. Weights are a softmax over (1/L, ..., t/L);
// turns after t get weight exactly zero so the estimate stays causal.
//
// Adjustment drops the neutral coordinate and multiplies element-wise:
//   adjusted = softmax([us_pos * p_normal, us_neg * p_transferable])
#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "labels.hpp"

namespace mhch {

using Vector2 = Eigen::RowVector2d;
using Vector3 = Eigen::RowVector3d;

/// Weights over positions 1..L (0-based output) for the user state at turn t.
inline std::vector<double> recency_weights(std::size_t length, std::size_t t) {
  if (t < 1 || t > length)
    throw ValidationError("recency_weights: turn " + std::to_string(t) + " outside [1, " +
                          std::to_string(length) + "]");
  std::vector<double> w(length, 0.0);
  const double inv_len = 1.0 / static_cast<double>(length);
  // Shift by the largest logit t/L.
  const double top = static_cast<double>(t) * inv_len;
  double total = 0.0;
  for (std::size_t j = 0; j < t; ++j) {
    w[j] = std::exp(static_cast<double>(j + 1) * inv_len - top);
    total += w[j];
  }
  for (std::size_t j = 0; j < t; ++j) w[j] /= total;
  return w;
}

/// L x L matrix whose row t-1 holds recency_weights(L, t).
inline Eigen::MatrixXd recency_weight_matrix(std::size_t length) {
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(length),
                                            static_cast<Eigen::Index>(length));
  for (std::size_t t = 1; t <= length; ++t) {
    const auto w = recency_weights(length, t);
    for (std::size_t j = 0; j < t; ++j) W(static_cast<Eigen::Index>(t - 1), static_cast<Eigen::Index>(j)) = w[j];
  }
  return W;
}

namespace detail {

inline void check_distribution(const Eigen::Ref<const Eigen::RowVectorXd>& row, double tol,
                               const char* what) {
  if ((row.array() < -tol).any() || std::abs(row.sum() - 1.0) > tol)
    throw ValidationError(std::string(what) + " is not a probability distribution");
}

}  // namespace detail

/// US_t for 1-based t, from an L x 3 matrix of sentiment distributions.
inline Vector3 user_state(const Eigen::MatrixXd& sentiment_probs, std::size_t t) {
  if (sentiment_probs.cols() != 3) throw ValidationError("sentiment rows must have 3 entries");
  const auto L = static_cast<std::size_t>(sentiment_probs.rows());
  const auto w = recency_weights(L, t);
  Vector3 us = Vector3::Zero();
  for (std::size_t j = 0; j < t; ++j) {
    detail::check_distribution(sentiment_probs.row(static_cast<Eigen::Index>(j)), 1e-6,
                               "sentiment row");
    us += w[j] * sentiment_probs.row(static_cast<Eigen::Index>(j));
  }
  return us;
}

/// All L user states at once (row t-1 is US_t). No validation; used on
/// softmax outputs inside training.
inline Eigen::MatrixXd user_state_series(const Eigen::MatrixXd& sentiment_probs) {
  return recency_weight_matrix(static_cast<std::size_t>(sentiment_probs.rows())) * sentiment_probs;
}

/// Pullback of user_state_series: d(sentiment_probs) = W^T d(US).
inline Eigen::MatrixXd user_state_series_backward(const Eigen::MatrixXd& grad_states) {
  return recency_weight_matrix(static_cast<std::size_t>(grad_states.rows())).transpose() *
         grad_states;
}

inline Vector2 soft_adjust(const Vector3& us, const Vector2& handoff_probs) {
  const double a = us(0) * handoff_probs(0);
  const double b = us(2) * handoff_probs(1);
  const double m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  return Vector2(ea / (ea + eb), eb / (ea + eb));
}

/// Checked version for external callers.
inline Vector2 soft_adjust_checked(const Vector3& us, const Vector2& handoff_probs) {
  detail::check_distribution(us, 1e-6, "user state");
  detail::check_distribution(handoff_probs, 1e-6, "handoff distribution");
  return soft_adjust(us, handoff_probs);
}

struct SoftAdjustGrad {
  Vector3 user_state;
  Vector2 handoff_probs;
};

/// Given d(loss)/d(adjusted), returns d(loss)/d(us) and d(loss)/d(p).
inline SoftAdjustGrad soft_adjust_backward(const Vector3& us, const Vector2& handoff_probs,
                                           const Vector2& adjusted, const Vector2& grad_adjusted) {
  const double dot = adjusted.dot(grad_adjusted);
  const double dz0 = adjusted(0) * (grad_adjusted(0) - dot);
  const double dz1 = adjusted(1) * (grad_adjusted(1) - dot);
  SoftAdjustGrad g;
  g.user_state = Vector3(dz0 * handoff_probs(0), 0.0, dz1 * handoff_probs(1));
  g.handoff_probs = Vector2(dz0 * us(0), dz1 * us(2));
  return g;
}

/// Adjusted L x 2 handoff distributions for a whole dialogue.
inline Eigen::MatrixXd soft_adjust_series(const Eigen::MatrixXd& user_states,
                                          const Eigen::MatrixXd& handoff_probs) {
  Eigen::MatrixXd out(handoff_probs.rows(), 2);
  for (Eigen::Index t = 0; t < handoff_probs.rows(); ++t)
    out.row(t) = soft_adjust(user_states.row(t), handoff_probs.row(t));
  return out;
}

}  // namespace mhch
