// Multi-task objective for the four model variants and the Adam training
// loop.
//
//   total = L_h + eta_s * L_s + eta_c * L_c + delta * ||theta||^2
//
// L_h is handoff cross-entropy on raw (baseline, cem_c) or soft-adjusted
// (cem_u, cem_full) probabilities. L_s is per-utterance sentiment
// cross-entropy plus dialogue satisfaction cross-entropy. L_c is the frozen
// simulator's mean per-utterance cost and only enters cem_c and cem_full.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "corpus.hpp"
#include "cost.hpp"
#include "encoder.hpp"
#include "labels.hpp"
#include "metrics.hpp"
#include "random.hpp"
#include "user_state.hpp"

namespace mhch {

enum class Variant { baseline, cem_u, cem_c, cem_full };
enum class CostLossSign { penalize, reward };

inline std::string_view to_string(Variant v) {
  constexpr std::array<std::string_view, 4> names{"baseline", "cem_u", "cem_c", "cem_full"};
  return names[static_cast<int>(v)];
}
inline Variant parse_variant(std::string_view s) {
  constexpr std::array<std::string_view, 4> names{"baseline", "cem_u", "cem_c", "cem_full"};
  return detail::parse_enum<Variant>(s, names, "variant");
}
inline std::string_view to_string(CostLossSign s) {
  return s == CostLossSign::penalize ? "penalize" : "reward";
}
inline CostLossSign parse_cost_loss_sign(std::string_view s) {
  constexpr std::array<std::string_view, 2> names{"penalize", "reward"};
  return detail::parse_enum<CostLossSign>(s, names, "cost_loss_sign");
}

inline bool uses_adjustment(Variant v) { return v == Variant::cem_u || v == Variant::cem_full; }
inline bool uses_cost(Variant v) { return v == Variant::cem_c || v == Variant::cem_full; }

inline constexpr double kLogFloor = 1e-12;

struct TrainConfig {
  Variant variant = Variant::baseline;
  double eta_s = 0.3;
  double eta_c = 0.01;
  double delta = 1e-4;
  double lr = 5e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  CostLossSign cost_loss_sign = CostLossSign::penalize;

  void validate() const {
    if (!(eta_s >= 0) || !(eta_c >= 0) || !(delta >= 0))
      throw ValidationError("eta_s, eta_c and delta must be non-negative");
    if (!(lr > 0)) throw ValidationError("lr must be positive");
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    if (epochs == 0) throw ValidationError("epochs must be positive");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"eta_s", c.eta_s},
                     {"eta_c", c.eta_c},
                     {"delta", c.delta},
                     {"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"seed", c.seed},
                     {"cost_loss_sign", to_string(c.cost_loss_sign)}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  for (const auto& [key, v] : j.items()) {
    if (key == "variant") c.variant = parse_variant(v.get<std::string>());
    else if (key == "eta_s") c.eta_s = v.get<double>();
    else if (key == "eta_c") c.eta_c = v.get<double>();
    else if (key == "delta") c.delta = v.get<double>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (key == "epochs") c.epochs = v.get<std::size_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "cost_loss_sign") c.cost_loss_sign = parse_cost_loss_sign(v.get<std::string>());
    else throw ValidationError("train config: unknown key \"" + key + "\"");
  }
}

// ---------------------------------------------------------------------------
// Individual losses

inline double clamped_nll(double p) { return -std::log(std::max(p, kLogFloor)); }

/// Mean over utterances of -log p(gold class). `probs` is L x 2.
inline double handoff_loss(const Eigen::MatrixXd& probs, const std::vector<Handoff>& gold) {
  if (static_cast<std::size_t>(probs.rows()) != gold.size() || probs.cols() != 2)
    throw ValidationError("handoff_loss: shape mismatch");
  if (gold.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t t = 0; t < gold.size(); ++t)
    acc += clamped_nll(probs(static_cast<Eigen::Index>(t), static_cast<int>(gold[t])));
  return acc / static_cast<double>(gold.size());
}

inline double satisfaction_nll(const Eigen::RowVectorXd& logits, Satisfaction gold) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits(static_cast<int>(gold));
}

/// Mean sentiment cross-entropy plus satisfaction cross-entropy.
inline double ssa_loss(const Eigen::MatrixXd& sentiment_probs, const std::vector<Sentiment>& gold_sentiments,
                       const Eigen::RowVectorXd& satisfaction_logits, Satisfaction gold_satisfaction) {
  if (static_cast<std::size_t>(sentiment_probs.rows()) != gold_sentiments.size() ||
      sentiment_probs.cols() != 3 || satisfaction_logits.size() != 3)
    throw ValidationError("ssa_loss: shape mismatch");
  double sent = 0.0;
  for (std::size_t t = 0; t < gold_sentiments.size(); ++t)
    sent += clamped_nll(sentiment_probs(static_cast<Eigen::Index>(t), static_cast<int>(gold_sentiments[t])));
  if (!gold_sentiments.empty()) sent /= static_cast<double>(gold_sentiments.size());
  return sent + satisfaction_nll(satisfaction_logits, gold_satisfaction);
}

/// Raw (unweighted) loss components for one batch.
struct LossComponents {
  double handoff = 0.0;
  double ssa = 0.0;
  double cost = 0.0;
  double l2 = 0.0;  // ||theta||^2
};

/// Weighted terms; `total` is their sum as evaluated by total_loss.
struct LossBreakdown {
  LossComponents raw;
  double handoff = 0.0;
  double ssa = 0.0;
  double cost = 0.0;
  double l2 = 0.0;
  double total = 0.0;
};

inline double cost_sign(CostLossSign s) { return s == CostLossSign::penalize ? 1.0 : -1.0; }

inline LossBreakdown total_loss(const LossComponents& raw, const TrainConfig& cfg) {
  LossBreakdown b;
  b.raw = raw;
  b.handoff = raw.handoff;
  b.ssa = cfg.eta_s * raw.ssa;
  b.cost = uses_cost(cfg.variant) ? cost_sign(cfg.cost_loss_sign) * cfg.eta_c * raw.cost : 0.0;
  b.l2 = cfg.delta * raw.l2;
  b.total = b.handoff + b.ssa + b.cost + b.l2;
  return b;
}

inline std::vector<Handoff> handoff_labels(const Dialogue& d) {
  std::vector<Handoff> out;
  out.reserve(d.size());
  for (const auto& u : d.utterances) out.push_back(u.handoff);
  return out;
}

inline std::vector<Sentiment> sentiment_labels(const Dialogue& d) {
  std::vector<Sentiment> out;
  out.reserve(d.size());
  for (const auto& u : d.utterances) out.push_back(u.sentiment);
  return out;
}

/// Handoff distribution the variant decides with: adjusted or raw.
inline Eigen::MatrixXd decision_probs(const ForwardTrace& tr, Variant variant) {
  if (!uses_adjustment(variant)) return tr.handoff_probs;
  return soft_adjust_series(user_state_series(tr.sentiment_probs), tr.handoff_probs);
}

// ---------------------------------------------------------------------------
// Batch objective with gradient

/// Loss of a batch; accumulates d(total)/d(params) into *grads when given.
/// Utterance-level terms are averaged over all utterances in the batch,
/// dialogue-level terms over the dialogues.
inline LossBreakdown batch_loss(const ModelParameters& params, const CostSimulator* sim,
                                const std::vector<const Dialogue*>& batch, const TrainConfig& cfg,
                                ParameterGradients* grads = nullptr) {
  const bool adjust = uses_adjustment(cfg.variant);
  const bool cost = uses_cost(cfg.variant);
  if (cost && (sim == nullptr || !sim->frozen))
    throw ValidationError("variant " + std::string(to_string(cfg.variant)) +
                          " needs a pretrained, frozen cost simulator");
  LossComponents raw;
  if (batch.empty()) {
    raw.l2 = params.squared_norm();
    if (grads && cfg.delta != 0.0) grads->add_scaled(params, 2.0 * cfg.delta);
    return total_loss(raw, cfg);
  }

  std::size_t n_utt = 0;
  for (const Dialogue* d : batch) n_utt += d->size();
  const double inv_utt = 1.0 / static_cast<double>(n_utt);
  const double inv_dlg = 1.0 / static_cast<double>(batch.size());
  const double signed_eta_c = cost_sign(cfg.cost_loss_sign) * cfg.eta_c;

  for (const Dialogue* d : batch) {
    const ForwardTrace tr = encode(params, *d);
    const auto L = static_cast<Eigen::Index>(d->size());

    Eigen::MatrixXd user_states, adjusted;
    if (adjust) {
      user_states = user_state_series(tr.sentiment_probs);
      adjusted = soft_adjust_series(user_states, tr.handoff_probs);
    }
    const Eigen::MatrixXd& handoff_probs = adjust ? adjusted : tr.handoff_probs;

    UpstreamGradients up;
    Eigen::MatrixXd g_decision = Eigen::MatrixXd::Zero(L, 2);
    Eigen::MatrixXd g_sent = Eigen::MatrixXd::Zero(L, 3);
    for (Eigen::Index t = 0; t < L; ++t) {
      const auto& u = d->utterances[static_cast<std::size_t>(t)];
      const int hg = static_cast<int>(u.handoff);
      const int sg = static_cast<int>(u.sentiment);
      const double ph = handoff_probs(t, hg);
      const double ps = tr.sentiment_probs(t, sg);
      raw.handoff += clamped_nll(ph) * inv_utt;
      raw.ssa += clamped_nll(ps) * inv_utt;
      if (ph > kLogFloor) g_decision(t, hg) = -inv_utt / ph;
      if (ps > kLogFloor) g_sent(t, sg) = -cfg.eta_s * inv_utt / ps;
    }
    raw.ssa += satisfaction_nll(tr.satisfaction_logits, d->satisfaction) * inv_dlg;

    Eigen::VectorXd g_transfer;
    Eigen::MatrixXd g_states;
    if (cost) {
      const Eigen::VectorXd transfer = tr.handoff_probs.col(1);
      g_transfer = Eigen::VectorXd::Zero(L);
      g_states = Eigen::MatrixXd::Zero(L, tr.states.cols());
      raw.cost += dialogue_cost_term(*sim, transfer, tr.states, signed_eta_c * inv_dlg,
                                     grads ? &g_transfer : nullptr, grads ? &g_states : nullptr) *
                  inv_dlg;
    }

    if (!grads) continue;

    Eigen::MatrixXd g_handoff;
    if (adjust) {
      g_handoff = Eigen::MatrixXd::Zero(L, 2);
      Eigen::MatrixXd g_us = Eigen::MatrixXd::Zero(L, 3);
      for (Eigen::Index t = 0; t < L; ++t) {
        const SoftAdjustGrad g = soft_adjust_backward(user_states.row(t), tr.handoff_probs.row(t),
                                                      adjusted.row(t), g_decision.row(t));
        g_us.row(t) = g.user_state;
        g_handoff.row(t) = g.handoff_probs;
      }
      g_sent += user_state_series_backward(g_us);
    } else {
      g_handoff = std::move(g_decision);
    }
    if (cost) {
      g_handoff.col(1) += g_transfer;
      up.states = std::move(g_states);
    }
    up.handoff_probs = std::move(g_handoff);
    up.sentiment_probs = std::move(g_sent);

    Eigen::RowVectorXd g_sat = tr.satisfaction_probs;
    g_sat(static_cast<int>(d->satisfaction)) -= 1.0;
    up.satisfaction_logits = cfg.eta_s * inv_dlg * g_sat;

    backward(params, *d, tr, up, *grads);
  }

  raw.l2 = params.squared_norm();
  if (grads && cfg.delta != 0.0) grads->add_scaled(params, 2.0 * cfg.delta);
  return total_loss(raw, cfg);
}

// ---------------------------------------------------------------------------
// Prediction and evaluation

inline LabelSequence predict_handoff(const ModelParameters& params, const Dialogue& d, Variant variant) {
  const Eigen::MatrixXd probs = decision_probs(encode(params, d), variant);
  LabelSequence out(d.size());
  for (Eigen::Index t = 0; t < probs.rows(); ++t)
    out[static_cast<std::size_t>(t)] = probs(t, 1) > probs(t, 0) ? Handoff::transferable : Handoff::normal;
  return out;
}

inline MetricsReport evaluate(const ModelParameters& params, const Corpus& corpus, Variant variant) {
  std::vector<LabelSequence> pred, gold;
  pred.reserve(corpus.size());
  gold.reserve(corpus.size());
  for (const auto& d : corpus.dialogues) {
    pred.push_back(predict_handoff(params, d, variant));
    gold.push_back(handoff_labels(d));
  }
  return evaluate_labels(pred, gold);
}

// ---------------------------------------------------------------------------
// Optimizer and training loop

/// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
class Adam {
 public:
  Adam(const Dims& dims, double lr)
      : lr_(lr), m_(ModelParameters::zeros(dims)), v_(ModelParameters::zeros(dims)) {}

  void step(ModelParameters& params, const ParameterGradients& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    std::array<const Matrix*, 12> g{};
    std::array<Matrix*, 12> m{}, v{};
    std::size_t i = 0;
    grads.for_each([&](std::string_view, const Matrix& x) { g[i++] = &x; });
    i = 0;
    m_.for_each([&](std::string_view, Matrix& x) { m[i++] = &x; });
    i = 0;
    v_.for_each([&](std::string_view, Matrix& x) { v[i++] = &x; });
    i = 0;
    params.for_each([&](std::string_view, Matrix& p) {
      *m[i] = kBeta1 * *m[i] + (1.0 - kBeta1) * *g[i];
      *v[i] = kBeta2 * *v[i] + (1.0 - kBeta2) * g[i]->cwiseProduct(*g[i]);
      p.array() -= lr_ * (m[i]->array() / bc1) / ((v[i]->array() / bc2).sqrt() + kEps);
      ++i;
    });
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  std::uint64_t t_ = 0;
  ModelParameters m_;
  ModelParameters v_;
};

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown loss;  // mean over the epoch's batches
  MetricsReport validation;
};

inline nlohmann::json to_json(const EpochLog& e) {
  const auto& l = e.loss;
  return {{"epoch", e.epoch},
          {"loss",
           {{"handoff", l.handoff}, {"ssa", l.ssa}, {"cost", l.cost}, {"l2", l.l2}, {"total", l.total}}},
          {"raw", {{"handoff", l.raw.handoff}, {"ssa", l.raw.ssa}, {"cost", l.raw.cost}, {"l2", l.raw.l2}}},
          {"validation", e.validation}};
}

struct TrainResult {
  ModelParameters params;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

/// Mini-batch Adam. Returns the parameters of the epoch with the best
/// validation Macro-F1 (earliest on ties). Deterministic given cfg.seed.
inline TrainResult train(ModelParameters params, const CostSimulator* sim, const Corpus& train_set,
                         const Corpus& validation_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0) throw ValidationError("train: empty training set");
  if (uses_cost(cfg.variant) && (sim == nullptr || !sim->frozen))
    throw ValidationError("variant " + std::string(to_string(cfg.variant)) +
                          " needs a pretrained, frozen cost simulator");

  const Dims dims = params.dims();
  Adam adam(dims, cfg.lr);
  Rng rng(mix_seed(cfg.seed, 0x7A17));
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  result.params = params;
  double best = -1.0;
  ParameterGradients grads = ParameterGradients::zeros(dims);
  std::vector<const Dialogue*> batch;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    EpochLog entry;
    entry.epoch = epoch;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch.push_back(&train_set.dialogues[order[k]]);
      grads.set_zero();
      const LossBreakdown b = batch_loss(params, sim, batch, cfg, &grads);
      const std::size_t batch_no = start / cfg.batch_size + 1;
      if (!std::isfinite(b.total))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_no));
      adam.step(params, grads);
      if (!params.all_finite())
        throw NumericalError("non-finite parameters after epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_no));
      auto& acc = entry.loss;
      acc.raw.handoff += b.raw.handoff;
      acc.raw.ssa += b.raw.ssa;
      acc.raw.cost += b.raw.cost;
      acc.raw.l2 += b.raw.l2;
      acc.handoff += b.handoff;
      acc.ssa += b.ssa;
      acc.cost += b.cost;
      acc.l2 += b.l2;
      acc.total += b.total;
      ++n_batches;
    }
    auto& acc = entry.loss;
    const double inv = 1.0 / static_cast<double>(n_batches);
    for (double* x : {&acc.raw.handoff, &acc.raw.ssa, &acc.raw.cost, &acc.raw.l2, &acc.handoff,
                      &acc.ssa, &acc.cost, &acc.l2, &acc.total})
      *x *= inv;

    entry.validation = evaluate(params, validation_set, cfg.variant);
    if (entry.validation.macro_f1 > best) {
      best = entry.validation.macro_f1;
      result.params = params;
      result.best_epoch = epoch;
    }
    result.log.push_back(std::move(entry));
  }
  return result;
}

}  // namespace mhch
