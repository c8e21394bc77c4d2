// Counterfactual labor-cost simulator.
//
// The simulator scales each utterance's transfer probability by a learned
// positive cost zeta_t = softplus(w . s_t + b) and sums:
//   C_hat = sum_t p_t * zeta_t
// With w = 0 and softplus(b) = zeta this is exactly the analytic cost
// sum_t zeta * p_t. It is fitted to the gold cost once (pretrain), frozen,
// and then used as a differentiable penalty during the main training run.
#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "corpus.hpp"
#include "encoder.hpp"
#include "labels.hpp"

namespace mhch {

inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }

struct CostSimulator {
  Eigen::VectorXd scale_weights;
  double scale_bias = 0.0;
  double zeta = 1.0;
  bool frozen = false;

  /// Simulator whose scale is the constant zeta.
  static CostSimulator calibrated(std::size_t state_dim, double zeta = 1.0) {
    if (!(zeta > 0.0)) throw ValidationError("zeta must be positive");
    CostSimulator sim;
    sim.scale_weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(state_dim));
    sim.scale_bias = softplus_inverse(zeta);
    sim.zeta = zeta;
    return sim;
  }

  double scale(const Eigen::Ref<const Eigen::RowVectorXd>& state) const {
    return softplus(state.dot(scale_weights.transpose()) + scale_bias);
  }

  bool operator==(const CostSimulator&) const = default;
};

/// sum_t zeta * p_t
inline double analytic_cost(std::span<const double> transfer_probs, double zeta = 1.0) {
  double total = 0.0;
  for (double p : transfer_probs) {
    if (!(p >= 0.0 && p <= 1.0))
      throw ValidationError("transfer probability " + std::to_string(p) + " outside [0, 1]");
    total += zeta * p;
  }
  return total;
}

inline std::vector<double> gold_transfer_probs(const Dialogue& d) {
  std::vector<double> out(d.size());
  for (std::size_t t = 0; t < d.size(); ++t)
    out[t] = d.utterances[t].handoff == Handoff::transferable ? 1.0 : 0.0;
  return out;
}

inline double predict_cost(const CostSimulator& sim, std::span<const double> transfer_probs,
                           const Eigen::MatrixXd& states) {
  if (static_cast<Eigen::Index>(transfer_probs.size()) != states.rows())
    throw ValidationError("predict_cost: " + std::to_string(transfer_probs.size()) +
                          " probabilities for " + std::to_string(states.rows()) + " states");
  if (states.cols() != sim.scale_weights.size())
    throw ValidationError("predict_cost: state width does not match the simulator");
  double total = 0.0;
  for (std::size_t t = 0; t < transfer_probs.size(); ++t)
    total += transfer_probs[t] * sim.scale(states.row(static_cast<Eigen::Index>(t)));
  return total;
}

enum class PretrainInput { predicted, gold };

struct PretrainConfig {
  std::size_t epochs = 300;
  double lr = 0.05;
  PretrainInput input = PretrainInput::predicted;
};

struct PretrainResult {
  CostSimulator simulator;
  double initial_mse = 0.0;
  double final_mse = 0.0;
};

/// One dialogue's inputs to the simulator.
struct CostSample {
  std::vector<double> transfer_probs;
  Eigen::MatrixXd states;
  double gold_cost = 0.0;
};

inline std::vector<CostSample> cost_samples(const ModelParameters& backbone, const Corpus& corpus,
                                            PretrainInput input, double zeta) {
  std::vector<CostSample> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus.dialogues) {
    const ForwardTrace tr = encode(backbone, d);
    CostSample s;
    const auto gold = gold_transfer_probs(d);
    s.gold_cost = analytic_cost(gold, zeta);
    if (input == PretrainInput::gold) {
      s.transfer_probs = gold;
    } else {
      s.transfer_probs.resize(d.size());
      for (std::size_t t = 0; t < d.size(); ++t)
        s.transfer_probs[t] = tr.handoff_probs(static_cast<Eigen::Index>(t), 1);
    }
    s.states = tr.states;
    out.push_back(std::move(s));
  }
  return out;
}

inline double cost_mse(const CostSimulator& sim, const std::vector<CostSample>& samples) {
  double acc = 0.0;
  for (const auto& s : samples) {
    const double r = predict_cost(sim, s.transfer_probs, s.states) - s.gold_cost;
    acc += r * r;
  }
  return samples.empty() ? 0.0 : acc / static_cast<double>(samples.size());
}

/// Full-batch gradient descent on the mean squared error between predicted
/// and gold cost, over the simulator parameters only. The returned simulator
/// is frozen.
inline PretrainResult pretrain(CostSimulator sim, const ModelParameters& backbone,
                               const Corpus& corpus, const PretrainConfig& cfg) {
  if (corpus.size() == 0) throw ValidationError("pretrain: empty corpus");
  if (sim.frozen) throw ValidationError("pretrain: simulator is already frozen");
  if (sim.scale_weights.size() != static_cast<Eigen::Index>(backbone.dims().d_s))
    throw ValidationError("pretrain: simulator width does not match the backbone state size");

  const auto samples = cost_samples(backbone, corpus, cfg.input, sim.zeta);
  const double inv_n = 1.0 / static_cast<double>(samples.size());

  PretrainResult result;
  result.initial_mse = cost_mse(sim, samples);
  double lr = cfg.lr;
  double loss = result.initial_mse;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Eigen::VectorXd grad_w = Eigen::VectorXd::Zero(sim.scale_weights.size());
    double grad_b = 0.0;
    for (const auto& s : samples) {
      double c_hat = 0.0;
      Eigen::VectorXd dw = Eigen::VectorXd::Zero(sim.scale_weights.size());
      double db = 0.0;
      for (std::size_t t = 0; t < s.transfer_probs.size(); ++t) {
        const double p = s.transfer_probs[t];
        if (p == 0.0) continue;
        const auto row = s.states.row(static_cast<Eigen::Index>(t));
        const double a = row.dot(sim.scale_weights.transpose()) + sim.scale_bias;
        c_hat += p * softplus(a);
        const double local = p * sigmoid(a);
        dw += local * row.transpose();
        db += local;
      }
      const double r = c_hat - s.gold_cost;
      grad_w += 2.0 * r * inv_n * dw;
      grad_b += 2.0 * r * inv_n * db;
    }
    // Halve the step until the loss does not increase.
    for (;;) {
      CostSimulator next = sim;
      next.scale_weights -= lr * grad_w;
      next.scale_bias -= lr * grad_b;
      const double next_loss = cost_mse(next, samples);
      if (!std::isfinite(next_loss) && !std::isfinite(loss))
        throw NumericalError("cost pretraining produced a non-finite loss at epoch " +
                             std::to_string(epoch));
      if (next_loss <= loss) {
        sim = std::move(next);
        loss = next_loss;
        break;
      }
      lr *= 0.5;
      if (lr < 1e-12) break;
    }
    if (lr < 1e-12) break;
  }
  result.final_mse = cost_mse(sim, samples);
  if (!std::isfinite(result.final_mse))
    throw NumericalError("cost pretraining diverged (final MSE is not finite)");
  sim.frozen = true;
  result.simulator = std::move(sim);
  return result;
}

/// (1/L) sum_t p_t * zeta_t for one dialogue. Optional outputs receive the
/// partial derivatives scaled by `weight`.
inline double dialogue_cost_term(const CostSimulator& sim, const Eigen::VectorXd& transfer_probs,
                                 const Eigen::MatrixXd& states, double weight = 0.0,
                                 Eigen::VectorXd* grad_probs = nullptr,
                                 Eigen::MatrixXd* grad_states = nullptr) {
  const Eigen::Index L = states.rows();
  if (transfer_probs.size() != L) throw ValidationError("cost_loss: length mismatch");
  const double inv_len = 1.0 / static_cast<double>(L);
  double total = 0.0;
  for (Eigen::Index t = 0; t < L; ++t) {
    const double a = states.row(t).dot(sim.scale_weights.transpose()) + sim.scale_bias;
    const double scale = softplus(a);
    total += transfer_probs(t) * scale;
    if (grad_probs) (*grad_probs)(t) += weight * inv_len * scale;
    if (grad_states)
      grad_states->row(t) += (weight * inv_len * transfer_probs(t) * sigmoid(a)) *
                             sim.scale_weights.transpose();
  }
  return total * inv_len;
}

/// Mean over dialogues of the per-dialogue mean simulated cost.
inline double cost_loss(const CostSimulator& sim, const std::vector<Eigen::VectorXd>& transfer_probs,
                        const std::vector<Eigen::MatrixXd>& states) {
  if (!sim.frozen) throw ValidationError("cost_loss requires a frozen simulator");
  if (transfer_probs.size() != states.size()) throw ValidationError("cost_loss: batch size mismatch");
  if (transfer_probs.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i)
    acc += dialogue_cost_term(sim, transfer_probs[i], states[i]);
  return acc / static_cast<double>(states.size());
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("pearson: need paired samples");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace mhch
