// Handoff evaluation: transferable-class F1, Macro-F1, GT-T (golden transfer
// within tolerance), invalid cost (IC), and Welch's t-test for comparing runs
// across seeds.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "labels.hpp"

namespace mhch {

using LabelSequence = std::vector<Handoff>;

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  bool operator==(const ConfusionCounts&) const = default;
};

struct F1Scores {
  double f1 = 0.0;
  double macro_f1 = 0.0;
  ConfusionCounts counts;
};

/// 2tp / (2tp + fp + fn), or 0 when nothing was predicted or expected.
inline double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

inline ConfusionCounts confusion(std::span<const Handoff> pred, std::span<const Handoff> gold) {
  if (pred.size() != gold.size())
    throw ValidationError("label sequences differ in length (" + std::to_string(pred.size()) +
                          " vs " + std::to_string(gold.size()) + ")");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == Handoff::transferable;
    const bool g = gold[i] == Handoff::transferable;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline F1Scores f1_from_confusion(const ConfusionCounts& c) {
  F1Scores s;
  s.counts = c;
  s.f1 = f1_from_counts(c.tp, c.fp, c.fn);
  // For the normal class the roles of fp and fn swap.
  const double f1_normal = f1_from_counts(c.tn, c.fn, c.fp);
  s.macro_f1 = 0.5 * (s.f1 + f1_normal);
  return s;
}

inline F1Scores f1_scores(std::span<const Handoff> pred, std::span<const Handoff> gold) {
  return f1_from_confusion(confusion(pred, gold));
}

namespace detail {

inline std::optional<std::size_t> first_transfer(const LabelSequence& labels) {
  const auto it = std::find(labels.begin(), labels.end(), Handoff::transferable);
  if (it == labels.end()) return std::nullopt;
  return static_cast<std::size_t>(it - labels.begin());
}

inline void check_tolerance(int tolerance) {
  if (tolerance < 1 || tolerance > 3)
    throw ValidationError("GT tolerance must be 1, 2 or 3 (got " + std::to_string(tolerance) + ")");
}

}  // namespace detail

/// 1 if neither side transfers; 0 if exactly one side does; otherwise 1 when
/// the first predicted and first gold transfers are at most `tolerance` apart.
inline double gt_dialogue_score(const LabelSequence& pred, const LabelSequence& gold, int tolerance) {
  detail::check_tolerance(tolerance);
  if (pred.size() != gold.size()) throw ValidationError("GT-T: dialogue label lengths differ");
  const auto p = detail::first_transfer(pred);
  const auto q = detail::first_transfer(gold);
  if (!p && !q) return 1.0;
  if (!p || !q) return 0.0;
  const std::size_t gap = *p > *q ? *p - *q : *q - *p;
  return gap <= static_cast<std::size_t>(tolerance) ? 1.0 : 0.0;
}

inline double gt_t(const std::vector<LabelSequence>& pred, const std::vector<LabelSequence>& gold,
                   int tolerance) {
  detail::check_tolerance(tolerance);
  if (pred.size() != gold.size()) throw ValidationError("GT-T: dialogue counts differ");
  if (pred.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += gt_dialogue_score(pred[i], gold[i], tolerance);
  return acc / static_cast<double>(pred.size());
}

/// Share of mispredicted utterances that were predicted transferable.
/// Empty when there are no errors.
inline std::optional<double> invalid_cost(std::span<const Handoff> pred, std::span<const Handoff> gold) {
  const ConfusionCounts c = confusion(pred, gold);
  const std::size_t errors = c.fp + c.fn;
  if (errors == 0) return std::nullopt;
  return static_cast<double>(c.fp) / static_cast<double>(errors);
}

struct MetricsReport {
  double f1 = 0.0;
  double macro_f1 = 0.0;
  std::map<int, double> gt;  // tolerance -> score
  std::optional<double> ic;
  ConfusionCounts counts;
  std::size_t n_dialogues = 0;
  std::size_t n_utterances = 0;

  bool operator==(const MetricsReport&) const = default;
};

inline MetricsReport evaluate_labels(const std::vector<LabelSequence>& pred,
                                     const std::vector<LabelSequence>& gold) {
  if (pred.size() != gold.size()) throw ValidationError("evaluate: dialogue counts differ");
  LabelSequence flat_pred, flat_gold;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gold[i].size()) throw ValidationError("evaluate: dialogue lengths differ");
    flat_pred.insert(flat_pred.end(), pred[i].begin(), pred[i].end());
    flat_gold.insert(flat_gold.end(), gold[i].begin(), gold[i].end());
  }
  MetricsReport r;
  const F1Scores s = f1_scores(flat_pred, flat_gold);
  r.f1 = s.f1;
  r.macro_f1 = s.macro_f1;
  r.counts = s.counts;
  for (int t = 1; t <= 3; ++t) r.gt[t] = gt_t(pred, gold, t);
  r.ic = invalid_cost(flat_pred, flat_gold);
  r.n_dialogues = pred.size();
  r.n_utterances = flat_pred.size();
  return r;
}

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  nlohmann::json gt = nlohmann::json::object();
  for (const auto& [t, v] : r.gt) gt[std::to_string(t)] = v;
  j = nlohmann::json{{"f1", r.f1},
                     {"macro_f1", r.macro_f1},
                     {"gt", gt},
                     {"ic", r.ic ? nlohmann::json(*r.ic) : nlohmann::json(nullptr)},
                     {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}},
                     {"n_dialogues", r.n_dialogues},
                     {"n_utterances", r.n_utterances}};
}

inline void from_json(const nlohmann::json& j, MetricsReport& r) {
  r.f1 = j.at("f1").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.gt.clear();
  for (const auto& [k, v] : j.at("gt").items()) r.gt[std::stoi(k)] = v.get<double>();
  const auto& ic = j.at("ic");
  r.ic = ic.is_null() ? std::nullopt : std::optional<double>(ic.get<double>());
  const auto& c = j.at("counts");
  r.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
              c.at("fn").get<std::size_t>(), c.at("tn").get<std::size_t>()};
  r.n_dialogues = j.at("n_dialogues").get<std::size_t>();
  r.n_utterances = j.at("n_utterances").get<std::size_t>();
}

// ---------------------------------------------------------------------------
// Welch's t-test

namespace detail {

/// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b). Relative accuracy ~1e-14 away from
/// the endpoints, far inside the 1e-6 needed for p-values.
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-sided tail probability P(|T| >= |t|) for Student's t with df degrees
/// of freedom (df may be fractional).
inline double student_t_two_sided(double t, double df) {
  if (t == 0.0) return 1.0;
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2)
    throw ValidationError("welch_t_test needs at least two samples per side");
  auto moments = [](std::span<const double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss / static_cast<double>(v.size() - 1)};
  };
  const auto [mean_a, var_a] = moments(a);
  const auto [mean_b, var_b] = moments(b);
  if (!std::isfinite(var_a) || !std::isfinite(var_b))
    throw ValidationError("welch_t_test: non-finite sample variance");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double qa = var_a / na, qb = var_b / nb;
  const double se2 = qa + qb;

  WelchResult r;
  if (mean_a == mean_b) {
    r.t = 0.0;
    r.df = se2 > 0 ? se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1)) : na + nb - 2;
    r.p = 1.0;
    return r;
  }
  if (se2 == 0.0) {
    // Both sides constant but different: infinitely significant.
    r.t = mean_a > mean_b ? std::numeric_limits<double>::infinity()
                          : -std::numeric_limits<double>::infinity();
    r.df = na + nb - 2;
    r.p = 0.0;
    return r;
  }
  r.t = (mean_a - mean_b) / std::sqrt(se2);
  r.df = se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1));
  r.p = student_t_two_sided(r.t, r.df);
  return r;
}

}  // namespace mhch
