#include <gtest/gtest.h>

#include <cmath>

#include <mhch/objective.hpp>

#include "test_support.hpp"

using namespace mhch;
using mhch::testing::random_dialogue;
using mhch::testing::random_params;

namespace {

const Dims kSmall{50, 8, 8, 8};

CostSimulator frozen_simulator(std::uint64_t seed, std::size_t width) {
  Rng rng(seed);
  CostSimulator sim = CostSimulator::calibrated(width);
  for (Eigen::Index i = 0; i < sim.scale_weights.size(); ++i) sim.scale_weights(i) = rng.uniform(-1, 1);
  sim.scale_bias = rng.uniform(-0.5, 0.5);
  sim.frozen = true;
  return sim;
}

/// Toy corpus whose handoff label is readable straight off the tokens.
Corpus separable_corpus(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  Corpus c;
  c.vocab_size = 20;
  for (std::size_t i = 0; i < n; ++i) {
    Dialogue d;
    d.id = "toy" + std::to_string(i);
    const std::size_t L = 3 + rng.below(6);
    for (std::size_t t = 0; t < L; ++t) {
      Utterance u;
      u.role = t % 2 ? Role::agent : Role::user;
      const bool transfer = rng.bernoulli(0.3);
      u.handoff = transfer ? Handoff::transferable : Handoff::normal;
      u.sentiment = transfer ? Sentiment::negative : Sentiment::positive;
      const int base = transfer ? 0 : 10;
      for (std::size_t k = 0; k < 3 + rng.below(4); ++k) u.tokens.push_back(base + static_cast<int>(rng.below(10)));
      d.utterances.push_back(std::move(u));
    }
    d.satisfaction = Satisfaction::neutral;
    c.dialogues.push_back(std::move(d));
  }
  return c;
}

Corpus small_generated(std::uint64_t seed, std::size_t n) {
  GeneratorConfig gc;
  gc.num_dialogues = n;
  gc.seed = seed;
  gc.vocab_size = 50;
  return generate_corpus(gc);
}

}  // namespace

TEST(Losses, HandoffExamples) {
  Eigen::MatrixXd perfect(3, 2);
  perfect << 1, 0, 0, 1, 1, 0;
  const std::vector<Handoff> gold{Handoff::normal, Handoff::transferable, Handoff::normal};
  EXPECT_LE(handoff_loss(perfect, gold), 1e-11);
  EXPECT_NEAR(handoff_loss(Eigen::MatrixXd::Constant(3, 2, 0.5), gold), std::log(2.0), 1e-15);
  // A zero probability at the gold class is floored, not infinite.
  Eigen::MatrixXd wrong(1, 2);
  wrong << 0, 1;
  EXPECT_NEAR(handoff_loss(wrong, {Handoff::normal}), -std::log(kLogFloor), 1e-9);
  EXPECT_THROW(handoff_loss(perfect, {Handoff::normal}), ValidationError);
}

TEST(Losses, SsaExamples) {
  Eigen::MatrixXd perfect(2, 3);
  perfect << 1, 0, 0, 0, 0, 1;
  const std::vector<Sentiment> gold{Sentiment::positive, Sentiment::negative};
  Eigen::RowVectorXd sharp(3);
  sharp << -1e3, 1e3, -1e3;
  EXPECT_LE(ssa_loss(perfect, gold, sharp, Satisfaction::neutral), 1e-11);
  const double uniform =
      ssa_loss(Eigen::MatrixXd::Constant(2, 3, 1.0 / 3.0), gold, Eigen::RowVectorXd::Zero(3), Satisfaction::satisfactory);
  EXPECT_NEAR(uniform, 2.0 * std::log(3.0), 1e-12);
  EXPECT_NEAR(uniform, 2.1972, 1e-4);
}

TEST(TotalLoss, DegenerateWeights) {
  TrainConfig cfg;
  cfg.variant = Variant::cem_full;
  cfg.eta_s = cfg.eta_c = cfg.delta = 0.0;
  const LossBreakdown b = total_loss({0.7, 1.3, 0.4, 12.0}, cfg);
  EXPECT_EQ(b.total, 0.7);
  cfg = TrainConfig{};
  cfg.variant = Variant::cem_c;
  const LossBreakdown d = total_loss({0.7, 1.3, 0.4, 12.0}, cfg);
  EXPECT_DOUBLE_EQ(d.total, 0.7 + 0.3 * 1.3 + 0.01 * 0.4 + 1e-4 * 12.0);
  cfg.cost_loss_sign = CostLossSign::reward;
  EXPECT_DOUBLE_EQ(total_loss({0.7, 1.3, 0.4, 12.0}, cfg).cost, -0.01 * 0.4);
  cfg.variant = Variant::baseline;
  EXPECT_EQ(total_loss({0.7, 1.3, 0.4, 12.0}, cfg).cost, 0.0);

  Rng rng(1);
  const Dialogue dlg = random_dialogue(rng, 4, 50);
  const LossBreakdown z = batch_loss(ModelParameters::zeros(kSmall), nullptr, {&dlg}, TrainConfig{});
  EXPECT_EQ(z.raw.l2, 0.0);
  EXPECT_NEAR(z.raw.handoff, std::log(2.0), 1e-15);
}

TEST(BatchLoss, GradientMatchesFiniteDifferencesForEveryVariant) {
  Rng rng(2);
  const CostSimulator sim = frozen_simulator(3, 8);
  for (Variant v : {Variant::baseline, Variant::cem_u, Variant::cem_c, Variant::cem_full}) {
    for (CostLossSign sign : {CostLossSign::penalize, CostLossSign::reward}) {
      const Dialogue d = random_dialogue(rng, 5, 50);
      const ModelParameters p = random_params(kSmall, 10 + static_cast<int>(v));
      TrainConfig cfg;
      cfg.variant = v;
      cfg.eta_c = 0.5;  // large enough that the cost path is visible
      cfg.delta = 1e-3;
      cfg.cost_loss_sign = sign;
      ParameterGradients g = ParameterGradients::zeros(kSmall);
      batch_loss(p, &sim, {&d}, cfg, &g);
      const auto check = mhch::testing::check_gradients(
          p, g, [&](const ModelParameters& q) { return batch_loss(q, &sim, {&d}, cfg).total; }, 1e-5, 1e-5);
      EXPECT_LT(check.max_rel_error, 1e-4) << to_string(v) << " " << to_string(sign) << ": " << check.worst;
    }
  }
}

TEST(BatchLoss, MultiDialogueBatchGradient) {
  Rng rng(4);
  const CostSimulator sim = frozen_simulator(5, 8);
  const Dialogue a = random_dialogue(rng, 3, 50, "a"), b = random_dialogue(rng, 6, 50, "b");
  const ModelParameters p = random_params(kSmall, 99);
  TrainConfig cfg;
  cfg.variant = Variant::cem_full;
  cfg.eta_c = 0.3;
  ParameterGradients g = ParameterGradients::zeros(kSmall);
  batch_loss(p, &sim, {&a, &b}, cfg, &g);
  const auto check = mhch::testing::check_gradients(
      p, g, [&](const ModelParameters& q) { return batch_loss(q, &sim, {&a, &b}, cfg).total; }, 1e-5, 1e-5);
  EXPECT_LT(check.max_rel_error, 1e-4) << check.worst;
}

TEST(BatchLoss, L2GradientIsTwoDeltaTheta) {
  const ModelParameters p = random_params(kSmall, 7);
  TrainConfig cfg;
  cfg.delta = 0.25;
  ParameterGradients g = ParameterGradients::zeros(kSmall);
  const LossBreakdown b = batch_loss(p, nullptr, {}, cfg, &g);
  EXPECT_DOUBLE_EQ(b.total, 0.25 * p.squared_norm());
  p.for_each([&](std::string_view name, const Matrix& m) {
    EXPECT_LT((g.at(name) - 0.5 * m).cwiseAbs().maxCoeff(), 1e-15) << name;
  });
}

TEST(BatchLoss, CostVariantsNeedFrozenSimulator) {
  Rng rng(6);
  const Dialogue d = random_dialogue(rng, 3, 50);
  const ModelParameters p = random_params(kSmall, 1);
  TrainConfig cfg;
  cfg.variant = Variant::cem_c;
  EXPECT_THROW(batch_loss(p, nullptr, {&d}, cfg), ValidationError);
  CostSimulator sim = CostSimulator::calibrated(8);
  EXPECT_THROW(batch_loss(p, &sim, {&d}, cfg), ValidationError);
  sim.frozen = true;
  EXPECT_NO_THROW(batch_loss(p, &sim, {&d}, cfg));
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig cfg;
  cfg.variant = Variant::cem_full;
  cfg.eta_c = 0.1;
  cfg.seed = 17;
  cfg.cost_loss_sign = CostLossSign::reward;
  const nlohmann::json j = cfg;
  const auto back = j.get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_THROW(nlohmann::json({{"etac", 1}}).get<TrainConfig>(), ValidationError);
  EXPECT_THROW(nlohmann::json({{"variant", "cem_x"}}).get<TrainConfig>(), ValidationError);
  cfg.eta_s = -1;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Train, DeterministicGivenSeed) {
  const Corpus c = small_generated(1, 80);
  const auto splits = split_corpus(c, {0.8, 0.1, 0.1}, 0);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 5;
  const ModelParameters init = init_params({50, 8, 8, 8}, 5);
  const TrainResult a = train(init, nullptr, splits.train, splits.validation, cfg);
  const TrainResult b = train(init, nullptr, splits.train, splits.validation, cfg);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.log.size(), 3u);
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(to_json(a.log[i]).dump(), to_json(b.log[i]).dump());
  cfg.seed = 6;
  EXPECT_FALSE(train(init, nullptr, splits.train, splits.validation, cfg).params == a.params);
}

TEST(Train, CostVariantWithZeroWeightEqualsBaseline) {
  const Corpus c = small_generated(2, 80);
  const auto splits = split_corpus(c, {0.8, 0.1, 0.1}, 0);
  const ModelParameters init = init_params({50, 8, 8, 8}, 3);
  const CostSimulator sim = frozen_simulator(1, 8);
  TrainConfig cfg;
  cfg.epochs = 3;
  const TrainResult base = train(init, nullptr, splits.train, splits.validation, cfg);
  cfg.variant = Variant::cem_c;
  cfg.eta_c = 0.0;
  const TrainResult cost = train(init, &sim, splits.train, splits.validation, cfg);
  EXPECT_EQ(base.params, cost.params);
  EXPECT_EQ(evaluate(base.params, splits.test, Variant::baseline), evaluate(cost.params, splits.test, Variant::cem_c));
}

TEST(Train, SimulatorStaysFrozen) {
  const Corpus c = small_generated(3, 60);
  const auto splits = split_corpus(c, {0.8, 0.1, 0.1}, 0);
  const CostSimulator sim = frozen_simulator(2, 8);
  const CostSimulator copy = sim;
  TrainConfig cfg;
  cfg.variant = Variant::cem_full;
  cfg.epochs = 2;
  train(init_params({50, 8, 8, 8}, 1), &sim, splits.train, splits.validation, cfg);
  EXPECT_EQ(sim, copy);
}

TEST(Train, SeparableToyCorpusIsLearned) {
  const Corpus train_set = separable_corpus(1, 300);
  const Corpus val = separable_corpus(2, 60);
  const Corpus test = separable_corpus(3, 100);
  TrainConfig cfg;
  cfg.epochs = 10;
  const TrainResult r = train(init_params({20, 8, 8, 8}, 1), nullptr, train_set, val, cfg);
  EXPECT_GE(evaluate(r.params, test, Variant::baseline).f1, 0.95);
}

TEST(Train, LogDecomposesAndBestEpochIsSelected) {
  const Corpus c = small_generated(4, 80);
  const auto splits = split_corpus(c, {0.8, 0.1, 0.1}, 0);
  TrainConfig cfg;
  cfg.variant = Variant::cem_full;
  cfg.epochs = 4;
  const CostSimulator sim = frozen_simulator(4, 8);
  const TrainResult r = train(init_params({50, 8, 8, 8}, 2), &sim, splits.train, splits.validation, cfg);
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& e : r.log) {
    const auto& l = e.loss;
    EXPECT_NEAR(l.total, l.handoff + l.ssa + l.cost + l.l2, 1e-10);
    if (e.validation.macro_f1 > best) {
      best = e.validation.macro_f1;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(r.best_epoch, best_epoch);
  EXPECT_EQ(evaluate(r.params, splits.validation, cfg.variant).macro_f1, best);
}

TEST(Train, LargerL2NeverGrowsTheSolution) {
  const Corpus c = small_generated(5, 80);
  const auto splits = split_corpus(c, {0.8, 0.1, 0.1}, 0);
  const ModelParameters init = init_params({50, 8, 8, 8}, 4);
  double previous = std::numeric_limits<double>::infinity();
  for (double delta : {0.0, 1e-4, 1e-2}) {
    TrainConfig cfg;
    cfg.delta = delta;
    cfg.epochs = 5;
    // Select on the training split's last epoch: one epoch of validation
    // noise must not decide the comparison.
    const TrainResult r = train(init, nullptr, splits.train, splits.train, cfg);
    const double norm = r.params.squared_norm();
    EXPECT_LE(norm, previous) << delta;
    previous = norm;
  }
}

TEST(Train, Errors) {
  const Corpus c = small_generated(6, 20);
  TrainConfig cfg;
  EXPECT_THROW(train(init_params({50, 8, 8, 8}, 1), nullptr, Corpus{}, c, cfg), ValidationError);
  cfg.variant = Variant::cem_full;
  EXPECT_THROW(train(init_params({50, 8, 8, 8}, 1), nullptr, c, c, cfg), ValidationError);
  cfg = TrainConfig{};
  cfg.lr = 0;
  EXPECT_THROW(train(init_params({50, 8, 8, 8}, 1), nullptr, c, c, cfg), ValidationError);
}

TEST(Train, NonFiniteLossAborts) {
  const Corpus c = small_generated(7, 20);
  ModelParameters p = init_params({50, 8, 8, 8}, 1);
  p.head_handoff(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(p, nullptr, c, c, cfg);
    FAIL() << "expected a numerical abort";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}
