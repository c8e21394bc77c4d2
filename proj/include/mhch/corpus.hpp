// Synthetic handoff dialogues: generation, splitting and JSONL persistence.
//
// The generator walks a small latent process per dialogue. Agent turns are
// good or bad replies; each bad reply degrades the user's sentiment one step
// (positive -> neutral -> negative) and two consecutive good replies recover
// it one step. Every dialogue draws a patience ~ Exponential(patience_mean).
// The first time the number of bad replies exceeds the patience, the next user
// turn turns negative and is labelled transferable, together with the
// following `window` utterances. So the chain is
//   dialogue -> local sentiment -> user state -> handoff
// by construction. Tokens come from six disjoint pools keyed by
// (role, sentiment), with a small fraction drawn from a random pool.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "labels.hpp"
#include "random.hpp"

namespace mhch {

struct Utterance {
  Role role = Role::user;
  std::vector<int> tokens;
  Sentiment sentiment = Sentiment::neutral;
  Handoff handoff = Handoff::normal;

  bool operator==(const Utterance&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<Utterance> utterances;
  Satisfaction satisfaction = Satisfaction::neutral;

  std::size_t size() const { return utterances.size(); }
  bool operator==(const Dialogue&) const = default;
};

struct Corpus {
  std::vector<Dialogue> dialogues;
  std::size_t vocab_size = 0;

  std::size_t size() const { return dialogues.size(); }
  bool operator==(const Corpus&) const = default;
};

struct GeneratorConfig {
  std::size_t num_dialogues = 3500;
  double mean_length = 10.18;
  double transfer_rate = 0.188;
  double patience_mean = 1.0;
  std::size_t vocab_size = 120;
  std::uint64_t seed = 0;
  std::size_t max_len = 40;
  // utterances marked transferable after the breach utterance
  std::size_t window = 2;
  // probability that a token is drawn from a random pool instead of its own
  double token_noise = 0.25;
  // probability that a user starts positive (otherwise neutral)
  double initial_positive = 0.7;

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("generator config: " + m); };
    if (num_dialogues == 0) fail("num_dialogues must be positive");
    if (!(mean_length >= 2.0) || !std::isfinite(mean_length)) fail("mean_length must be >= 2");
    if (!(transfer_rate > 0.0 && transfer_rate < 1.0)) fail("transfer_rate must lie in (0, 1)");
    if (!(patience_mean > 0.0) || !std::isfinite(patience_mean))
      fail("patience_mean must be positive");
    if (vocab_size < 30) fail("vocab_size must be >= 30");
    if (max_len < 2) fail("max_len must be >= 2");
    if (!(token_noise >= 0.0 && token_noise <= 1.0)) fail("token_noise must lie in [0, 1]");
    if (!(initial_positive >= 0.0 && initial_positive <= 1.0))
      fail("initial_positive must lie in [0, 1]");
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = nlohmann::json{{"num_dialogues", c.num_dialogues}, {"mean_length", c.mean_length},
                     {"transfer_rate", c.transfer_rate}, {"patience_mean", c.patience_mean},
                     {"vocab_size", c.vocab_size},       {"seed", c.seed},
                     {"max_len", c.max_len},             {"window", c.window},
                     {"token_noise", c.token_noise},     {"initial_positive", c.initial_positive}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  if (!j.is_object()) throw ValidationError("generator config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "num_dialogues") c.num_dialogues = value.get<std::size_t>();
    else if (key == "mean_length") c.mean_length = value.get<double>();
    else if (key == "transfer_rate") c.transfer_rate = value.get<double>();
    else if (key == "patience_mean") c.patience_mean = value.get<double>();
    else if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "max_len") c.max_len = value.get<std::size_t>();
    else if (key == "window") c.window = value.get<std::size_t>();
    else if (key == "token_noise") c.token_noise = value.get<double>();
    else if (key == "initial_positive") c.initial_positive = value.get<double>();
    else throw ValidationError("generator config: unknown key \"" + key + "\"");
  }
}

namespace detail {

inline Sentiment degrade(Sentiment s) {
  return s == Sentiment::positive ? Sentiment::neutral : Sentiment::negative;
}
inline Sentiment recover(Sentiment s) {
  return s == Sentiment::negative ? Sentiment::neutral : Sentiment::positive;
}

/// Labels of one dialogue before tokens are attached.
struct LabelTrace {
  std::vector<Role> roles;
  std::vector<Sentiment> sentiments;
  std::vector<Handoff> handoffs;
  Satisfaction satisfaction = Satisfaction::satisfactory;
};

inline LabelTrace simulate_labels(const GeneratorConfig& cfg, double bad_prob, Rng& rng) {
  const double len_draw = rng.normal(cfg.mean_length, 0.25 * cfg.mean_length);
  const auto len = static_cast<std::size_t>(
      std::clamp(std::round(len_draw), 2.0, static_cast<double>(cfg.max_len)));
  const double patience = rng.exponential(cfg.patience_mean);

  LabelTrace out;
  out.roles.reserve(len);
  out.sentiments.reserve(len);
  out.handoffs.reserve(len);

  Sentiment user = rng.bernoulli(cfg.initial_positive) ? Sentiment::positive : Sentiment::neutral;
  std::size_t bad_count = 0;
  std::size_t good_streak = 0;
  std::size_t span_left = 0;
  bool breached = false;
  bool breach_pending = false;
  bool marked = false;

  for (std::size_t t = 0; t < len; ++t) {
    Handoff handoff = Handoff::normal;
    if (t % 2 == 0) {
      if (breach_pending) {
        user = Sentiment::negative;
        handoff = Handoff::transferable;
        span_left = cfg.window;
        breach_pending = false;
        marked = true;
      } else if (span_left > 0) {
        handoff = Handoff::transferable;
        --span_left;
      }
      out.roles.push_back(Role::user);
      out.sentiments.push_back(user);
    } else {
      if (span_left > 0) {
        handoff = Handoff::transferable;
        --span_left;
      }
      Sentiment agent;
      if (rng.bernoulli(bad_prob)) {
        ++bad_count;
        good_streak = 0;
        user = degrade(user);
        agent = Sentiment::negative;
        if (!breached && static_cast<double>(bad_count) > patience) {
          breached = true;
          breach_pending = true;
        }
      } else {
        if (++good_streak == 2) {
          user = recover(user);
          good_streak = 0;
        }
        agent = rng.bernoulli(0.5) ? Sentiment::positive : Sentiment::neutral;
      }
      out.roles.push_back(Role::agent);
      out.sentiments.push_back(agent);
    }
    out.handoffs.push_back(handoff);
  }

  if (!breached) out.satisfaction = Satisfaction::satisfactory;
  else if (!marked) out.satisfaction = Satisfaction::dissatisfied;
  else out.satisfaction = Satisfaction::neutral;
  return out;
}

inline constexpr std::uint64_t kCalibrationStream = 1ULL << 40;
inline constexpr std::size_t kCalibrationDialogues = 4000;

/// Bad-reply probability whose expected transferable fraction matches
/// cfg.transfer_rate, found by bisection over a fixed Monte Carlo sample
/// (common random numbers keep the estimate monotone in the probability).
inline double calibrate_bad_prob(const GeneratorConfig& cfg) {
  auto fraction = [&](double p) {
    std::size_t transferable = 0, total = 0;
    for (std::size_t i = 0; i < kCalibrationDialogues; ++i) {
      Rng rng(mix_seed(cfg.seed, kCalibrationStream + i));
      const LabelTrace tr = simulate_labels(cfg, p, rng);
      total += tr.handoffs.size();
      transferable += static_cast<std::size_t>(
          std::count(tr.handoffs.begin(), tr.handoffs.end(), Handoff::transferable));
    }
    return static_cast<double>(transferable) / static_cast<double>(total);
  };
  double lo = 0.0, hi = 1.0;
  if (fraction(hi) <= cfg.transfer_rate) return hi;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (fraction(mid) < cfg.transfer_rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::vector<int> draw_tokens(const GeneratorConfig& cfg, Role role, Sentiment sentiment,
                                    Rng& rng) {
  const std::size_t pool_size = cfg.vocab_size / 6;
  const std::size_t own_pool = static_cast<std::size_t>(role) * 3 + static_cast<std::size_t>(sentiment);
  const std::size_t n = 5 + static_cast<std::size_t>(rng.below(8));
  std::vector<int> tokens(n);
  for (auto& tok : tokens) {
    const std::size_t pool = rng.bernoulli(cfg.token_noise) ? rng.below(6) : own_pool;
    tok = static_cast<int>(pool * pool_size + rng.below(pool_size));
  }
  return tokens;
}

inline Dialogue generate_dialogue(const GeneratorConfig& cfg, double bad_prob, std::size_t index) {
  Rng rng(mix_seed(cfg.seed, index));
  const LabelTrace tr = simulate_labels(cfg, bad_prob, rng);
  Dialogue d;
  d.id = "d" + std::to_string(index);
  d.satisfaction = tr.satisfaction;
  d.utterances.resize(tr.roles.size());
  for (std::size_t t = 0; t < tr.roles.size(); ++t) {
    auto& u = d.utterances[t];
    u.role = tr.roles[t];
    u.sentiment = tr.sentiments[t];
    u.handoff = tr.handoffs[t];
    u.tokens = draw_tokens(cfg, u.role, u.sentiment, rng);
  }
  return d;
}

}  // namespace detail

/// Throws ValidationError when any corpus invariant is violated.
inline void validate_corpus(const Corpus& corpus, std::size_t max_len = 0) {
  std::set<std::string> ids;
  for (const auto& d : corpus.dialogues) {
    if (!ids.insert(d.id).second) throw ValidationError("duplicate dialogue id \"" + d.id + "\"");
    if (d.utterances.empty()) throw ValidationError("dialogue \"" + d.id + "\" has no utterances");
    if (max_len != 0 && d.utterances.size() > max_len)
      throw ValidationError("dialogue \"" + d.id + "\" exceeds max_len");
    for (const auto& u : d.utterances) {
      if (u.tokens.empty()) throw ValidationError("dialogue \"" + d.id + "\" has an empty utterance");
      for (int tok : u.tokens)
        if (tok < 0 || static_cast<std::size_t>(tok) >= corpus.vocab_size)
          throw ValidationError("dialogue \"" + d.id + "\" has token id " + std::to_string(tok) +
                                " outside the vocabulary");
    }
  }
}

/// Deterministic given cfg.seed. Each dialogue is seeded from (seed, index),
/// so dialogues can be produced independently and in any order.
inline Corpus generate_corpus(const GeneratorConfig& cfg) {
  cfg.validate();
  const double bad_prob = detail::calibrate_bad_prob(cfg);
  Corpus corpus;
  corpus.vocab_size = cfg.vocab_size;
  corpus.dialogues.reserve(cfg.num_dialogues);
  for (std::size_t i = 0; i < cfg.num_dialogues; ++i)
    corpus.dialogues.push_back(detail::generate_dialogue(cfg, bad_prob, i));
  return corpus;
}

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct CorpusSplits {
  Corpus train;
  Corpus validation;
  Corpus test;
};

/// Shuffle by seed, then allocate floor(n * ratio) to validation and test;
/// the remainder goes to train.
inline CorpusSplits split_corpus(const Corpus& corpus, SplitRatios ratios, std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.validation > 0 && ratios.test > 0))
    throw ValidationError("split ratios must be positive");
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9)
    throw ValidationError("split ratios must sum to 1");
  const std::size_t n = corpus.size();
  if (n < 3)
    throw ValidationError("cannot split " + std::to_string(n) + " dialogues into three sets");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5917));
  rng.shuffle(order);

  const double dn = static_cast<double>(n);
  // The epsilon keeps exact products such as 10 * 0.1 from flooring to 0.
  std::size_t n_val = static_cast<std::size_t>(std::floor(dn * ratios.validation + 1e-9));
  std::size_t n_test = static_cast<std::size_t>(std::floor(dn * ratios.test + 1e-9));
  n_val = std::max<std::size_t>(n_val, 1);
  n_test = std::max<std::size_t>(n_test, 1);
  if (n_val + n_test >= n) throw ValidationError("split leaves no training dialogues");
  const std::size_t n_train = n - n_val - n_test;

  CorpusSplits out;
  for (Corpus* c : {&out.train, &out.validation, &out.test}) c->vocab_size = corpus.vocab_size;
  for (std::size_t k = 0; k < n; ++k) {
    Corpus& dst = k < n_train ? out.train : (k < n_train + n_val ? out.validation : out.test);
    dst.dialogues.push_back(corpus.dialogues[order[k]]);
  }
  return out;
}

inline nlohmann::json dialogue_to_json(const Dialogue& d) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& u : d.utterances)
    turns.push_back({{"role", to_string(u.role)},
                     {"tokens", u.tokens},
                     {"sentiment", to_string(u.sentiment)},
                     {"handoff", to_string(u.handoff)}});
  return {{"id", d.id}, {"satisfaction", to_string(d.satisfaction)}, {"turns", std::move(turns)}};
}

inline void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const auto& d : corpus.dialogues) out << dialogue_to_json(d).dump() << '\n';
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    write_corpus(corpus, out);
    if (!out) throw ValidationError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

inline Dialogue parse_dialogue(const std::string& line, std::size_t line_no) {
  try {
    const auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw ValidationError("expected a JSON object");
    Dialogue d;
    d.id = j.at("id").get<std::string>();
    d.satisfaction = parse_satisfaction(j.at("satisfaction").get<std::string>());
    for (const auto& turn : j.at("turns")) {
      Utterance u;
      u.role = parse_role(turn.at("role").get<std::string>());
      u.tokens = turn.at("tokens").get<std::vector<int>>();
      u.sentiment = parse_sentiment(turn.at("sentiment").get<std::string>());
      u.handoff = parse_handoff(turn.at("handoff").get<std::string>());
      if (u.tokens.empty()) throw ValidationError("utterance without tokens");
      d.utterances.push_back(std::move(u));
    }
    if (d.utterances.empty()) throw ValidationError("dialogue without turns");
    return d;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(line_no, e.what());
  }
}

}  // namespace detail

/// When vocab_size is not given it is inferred as (largest token id + 1).
inline Corpus read_corpus(std::istream& in, std::optional<std::size_t> vocab_size = std::nullopt) {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;
  int max_token = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    Dialogue d = detail::parse_dialogue(line, line_no);
    if (!ids.insert(d.id).second) throw ParseError(line_no, "duplicate dialogue id \"" + d.id + "\"");
    for (const auto& u : d.utterances)
      for (int tok : u.tokens) {
        if (tok < 0) throw ParseError(line_no, "negative token id");
        if (vocab_size && static_cast<std::size_t>(tok) >= *vocab_size)
          throw ParseError(line_no, "token id " + std::to_string(tok) + " >= vocab_size " +
                                        std::to_string(*vocab_size));
        max_token = std::max(max_token, tok);
      }
    corpus.dialogues.push_back(std::move(d));
  }
  corpus.vocab_size = vocab_size ? *vocab_size : static_cast<std::size_t>(max_token + 1);
  return corpus;
}

inline Corpus read_corpus(const std::filesystem::path& path,
                          std::optional<std::size_t> vocab_size = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open corpus " + path.string());
  return read_corpus(in, vocab_size);
}

inline double transferable_fraction(const Corpus& corpus) {
  std::size_t transferable = 0, total = 0;
  for (const auto& d : corpus.dialogues)
    for (const auto& u : d.utterances) {
      ++total;
      transferable += u.handoff == Handoff::transferable;
    }
  return total == 0 ? 0.0 : static_cast<double>(transferable) / static_cast<double>(total);
}

}  // namespace mhch
