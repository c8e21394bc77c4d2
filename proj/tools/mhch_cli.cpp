// mhch: command-line front end.
//
//   mhch gen     --config gen.json --seed 7 --out data/
//   mhch train   --corpus data/corpus.jsonl --variant cem_full --seed 0 --out runs/a
//   mhch sweep   --corpus data/corpus.jsonl --variant cem_full --eta-c 0,0.01,1 --seeds 0,1,2 --out sweeps/x
//   mhch compare --a runs/b0 runs/b1 --b runs/c0 runs/c1 --out cmp/
//
// Exit codes: 0 success, 1 validation error, 2 numerical abort.
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <mhch/mhch.hpp>

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;

nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  return mhch::detail::read_json_file(path);
}

struct TrainOverrides {
  std::string corpus;
  std::string variant;
  std::optional<double> eta_c, eta_s, delta, lr;
  std::optional<std::size_t> epochs, batch_size;
  std::string cost_loss_sign;

  void add_to(CLI::App* cmd, bool with_eta_c) {
    cmd->add_option("--corpus", corpus, "Corpus JSONL file");
    cmd->add_option("--variant", variant, "baseline | cem_u | cem_c | cem_full");
    if (with_eta_c) cmd->add_option("--eta-c", eta_c, "Cost loss weight");
    cmd->add_option("--eta-s", eta_s, "Satisfaction/sentiment loss weight");
    cmd->add_option("--delta", delta, "L2 weight");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--batch-size", batch_size, "Mini-batch size");
    cmd->add_option("--cost-loss-sign", cost_loss_sign, "penalize | reward");
  }

  void apply(mhch::RunConfig& cfg) const {
    if (!corpus.empty()) cfg.corpus = corpus;
    if (!variant.empty()) cfg.train.variant = mhch::parse_variant(variant);
    if (eta_c) cfg.train.eta_c = *eta_c;
    if (eta_s) cfg.train.eta_s = *eta_s;
    if (delta) cfg.train.delta = *delta;
    if (lr) cfg.train.lr = *lr;
    if (epochs) cfg.train.epochs = *epochs;
    if (batch_size) cfg.train.batch_size = *batch_size;
    if (!cost_loss_sign.empty()) cfg.train.cost_loss_sign = mhch::parse_cost_loss_sign(cost_loss_sign);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Machine-human chat handoff lab: corpus generation, training, sweeps, comparisons"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus (writes <out>/corpus.jsonl)");
  std::optional<std::size_t> num_dialogues;
  gen->add_option("--config", config_path, "Generator config JSON");
  gen->add_option("--seed", seed, "Generator seed (overrides the config)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--num-dialogues", num_dialogues, "Number of dialogues (overrides the config)");

  auto* train_cmd = app.add_subcommand("train", "Train and evaluate one model variant");
  TrainOverrides train_over;
  train_cmd->add_option("--config", config_path, "Run config JSON");
  train_cmd->add_option("--seed", seed, "Training seed");
  train_cmd->add_option("--out", out, "Run directory")->required();
  train_over.add_to(train_cmd, true);

  auto* sweep_cmd = app.add_subcommand("sweep", "Train one run per (eta_c, seed); writes sweep.csv");
  TrainOverrides sweep_over;
  std::vector<double> etas;
  std::vector<std::uint64_t> seeds;
  sweep_cmd->add_option("--config", config_path, "Run config JSON");
  sweep_cmd->add_option("--seed", seed, "Single seed (alternative to --seeds)");
  sweep_cmd->add_option("--out", out, "Sweep directory")->required();
  sweep_cmd->add_option("--eta-c", etas, "eta_c values")->delimiter(',')->required();
  sweep_cmd->add_option("--seeds", seeds, "Seeds")->delimiter(',');
  sweep_over.add_to(sweep_cmd, false);

  auto* compare_cmd = app.add_subcommand("compare", "Welch t-test between two groups of runs");
  std::vector<std::string> runs_a, runs_b;
  std::string metric = "all";
  int gt = 1;
  compare_cmd->add_option("--config", config_path, "Optional JSON with \"metric\" and \"gt\" keys");
  compare_cmd->add_option("--seed", seed, "Unused; accepted for uniformity");
  compare_cmd->add_option("--out", out, "Output directory")->required();
  compare_cmd->add_option("--a", runs_a, "Run directories of group A")->required();
  compare_cmd->add_option("--b", runs_b, "Run directories of group B")->required();
  compare_cmd->add_option("--metric", metric, "f1 | macro_f1 | gt1 | gt2 | gt3 | ic | all");
  compare_cmd->add_option("--gt", gt, "GT tolerance reported when --metric all")->check(CLI::Range(1, 3));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*gen) {
      mhch::GeneratorConfig cfg = load_config(config_path).get<mhch::GeneratorConfig>();
      if (seed) cfg.seed = *seed;
      if (num_dialogues) cfg.num_dialogues = *num_dialogues;
      const auto path = mhch::run_gen(cfg, out);
      std::cout << "wrote " << cfg.num_dialogues << " dialogues to " << path.string() << "\n";
    } else if (*train_cmd) {
      mhch::RunConfig cfg = load_config(config_path).get<mhch::RunConfig>();
      train_over.apply(cfg);
      if (seed) cfg.train.seed = *seed;
      const auto outcome = mhch::run_train(cfg, out);
      std::cout << mhch::report_text(outcome.test);
    } else if (*sweep_cmd) {
      mhch::RunConfig cfg = load_config(config_path).get<mhch::RunConfig>();
      sweep_over.apply(cfg);
      if (seeds.empty()) seeds.push_back(seed.value_or(cfg.train.seed));
      mhch::run_sweep(cfg, etas, seeds, out, &std::cerr);
      std::cout << "wrote " << (std::filesystem::path(out) / "sweep.csv").string() << "\n";
    } else if (*compare_cmd) {
      const auto extra = load_config(config_path);
      if (extra.contains("metric")) metric = extra.at("metric").get<std::string>();
      if (extra.contains("gt")) gt = extra.at("gt").get<int>();
      const auto metrics =
          metric == "all" ? mhch::default_compare_metrics(gt) : std::vector<std::string>{metric};
      const auto rows = mhch::run_compare(runs_a, runs_b, metrics, out);
      std::cout << mhch::compare_csv(rows);
    }
  } catch (const mhch::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return 0;
}
