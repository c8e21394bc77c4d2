// Experiment orchestration behind the `mhch` CLI: corpus generation, a full
// training run (split, optional cost pretraining, training, evaluation), the
// eta_c sweep and multi-seed significance comparison.
//
// Run directory layout:
//   config.json                 every knob of the run, plus the corpus digest
//   checkpoints/model.json      best-validation backbone
//   checkpoints/cost_backbone.json, checkpoints/cost_simulator.json
//                               (cost variants only)
//   logs/train.jsonl            one object per epoch
//   logs/pretrain.json          (cost variants only)
//   reports/validation.json, reports/test.json
#pragma once

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "cost.hpp"
#include "encoder.hpp"
#include "metrics.hpp"
#include "objective.hpp"

namespace mhch {

namespace fs = std::filesystem;

struct CostSetup {
  double zeta = 1.0;
  // Epochs of baseline training for the backbone the simulator is fitted on.
  std::size_t backbone_epochs = 10;
  PretrainConfig pretrain;
};

struct RunConfig {
  std::string corpus;
  std::size_t vocab_size = 0;  // 0: infer from the corpus
  std::uint64_t split_seed = 0;
  SplitRatios ratios;
  std::size_t d_e = 32, d_u = 32, d_s = 32;
  TrainConfig train;
  CostSetup cost;
  // When set, the corpus file must hash to this value.
  std::string corpus_digest;
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"corpus", c.corpus},
      {"vocab_size", c.vocab_size},
      {"split", {{"seed", c.split_seed}, {"train", c.ratios.train}, {"validation", c.ratios.validation}, {"test", c.ratios.test}}},
      {"model", {{"d_e", c.d_e}, {"d_u", c.d_u}, {"d_s", c.d_s}}},
      {"train", c.train},
      {"cost",
       {{"zeta", c.cost.zeta},
        {"backbone_epochs", c.cost.backbone_epochs},
        {"pretrain_epochs", c.cost.pretrain.epochs},
        {"pretrain_lr", c.cost.pretrain.lr},
        {"pretrain_input", c.cost.pretrain.input == PretrainInput::gold ? "gold" : "predicted"}}}};
  if (!c.corpus_digest.empty()) j["corpus_digest"] = c.corpus_digest;
}

/// Partial documents are allowed; absent keys keep their current values.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw ValidationError("run config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "corpus") c.corpus = v.get<std::string>();
    else if (key == "corpus_digest") c.corpus_digest = v.get<std::string>();
    else if (key == "vocab_size") c.vocab_size = v.get<std::size_t>();
    else if (key == "split") {
      for (const auto& [k, x] : v.items()) {
        if (k == "seed") c.split_seed = x.get<std::uint64_t>();
        else if (k == "train") c.ratios.train = x.get<double>();
        else if (k == "validation") c.ratios.validation = x.get<double>();
        else if (k == "test") c.ratios.test = x.get<double>();
        else throw ValidationError("run config: unknown key split." + k);
      }
    } else if (key == "model") {
      for (const auto& [k, x] : v.items()) {
        if (k == "d_e") c.d_e = x.get<std::size_t>();
        else if (k == "d_u") c.d_u = x.get<std::size_t>();
        else if (k == "d_s") c.d_s = x.get<std::size_t>();
        else throw ValidationError("run config: unknown key model." + k);
      }
    } else if (key == "train") {
      c.train = [&] { TrainConfig t = c.train; from_json(v, t); return t; }();
    } else if (key == "cost") {
      for (const auto& [k, x] : v.items()) {
        if (k == "zeta") c.cost.zeta = x.get<double>();
        else if (k == "backbone_epochs") c.cost.backbone_epochs = x.get<std::size_t>();
        else if (k == "pretrain_epochs") c.cost.pretrain.epochs = x.get<std::size_t>();
        else if (k == "pretrain_lr") c.cost.pretrain.lr = x.get<double>();
        else if (k == "pretrain_input") {
          const auto s = x.get<std::string>();
          if (s == "gold") c.cost.pretrain.input = PretrainInput::gold;
          else if (s == "predicted") c.cost.pretrain.input = PretrainInput::predicted;
          else throw ValidationError("run config: pretrain_input must be gold or predicted");
        } else throw ValidationError("run config: unknown key cost." + k);
      }
    } else {
      throw ValidationError("run config: unknown key \"" + key + "\"");
    }
  }
}

/// FNV-1a over the file bytes; recorded in config.json as the corpus ref.
inline std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016" PRIx64, h);
  return hex;
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen

/// Generates and writes <out_dir>/corpus.jsonl (atomically). The config is
/// validated before anything touches the filesystem.
inline fs::path run_gen(const GeneratorConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const Corpus corpus = generate_corpus(cfg);
  fs::create_directories(out_dir);
  const fs::path path = out_dir / "corpus.jsonl";
  write_corpus(corpus, path);
  nlohmann::json j = cfg;
  detail::write_text(out_dir / "generator_config.json", j.dump(2) + "\n");
  return path;
}

// ---------------------------------------------------------------------------
// train

struct RunOutcome {
  MetricsReport validation;
  MetricsReport test;
  std::size_t best_epoch = 0;
  std::optional<PretrainResult> pretrain;
};

inline std::string report_text(const MetricsReport& r) { return nlohmann::json(r).dump(2) + "\n"; }

/// Trains the baseline backbone the cost simulator reads states from, then
/// fits and freezes the simulator on the training split.
inline PretrainResult prepare_cost_simulator(const RunConfig& cfg, const ModelParameters& init,
                                             const CorpusSplits& splits, ModelParameters* backbone_out = nullptr) {
  TrainConfig backbone_cfg = cfg.train;
  backbone_cfg.variant = Variant::baseline;
  backbone_cfg.epochs = cfg.cost.backbone_epochs;
  const TrainResult backbone = train(init, nullptr, splits.train, splits.validation, backbone_cfg);
  if (backbone_out) *backbone_out = backbone.params;
  return pretrain(CostSimulator::calibrated(cfg.d_s, cfg.cost.zeta), backbone.params, splits.train,
                  cfg.cost.pretrain);
}

inline RunOutcome run_train(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.train.validate();
  if (cfg.corpus.empty()) throw ValidationError("no corpus given");
  if (!fs::exists(cfg.corpus)) throw ValidationError("corpus not found: " + cfg.corpus);
  const std::string digest = file_digest(cfg.corpus);
  if (!cfg.corpus_digest.empty() && cfg.corpus_digest != digest)
    throw ValidationError("corpus " + cfg.corpus + " has digest " + digest + ", config expects " + cfg.corpus_digest);
  const Corpus corpus =
      read_corpus(fs::path(cfg.corpus), cfg.vocab_size ? std::optional(cfg.vocab_size) : std::nullopt);
  validate_corpus(corpus);
  const CorpusSplits splits = split_corpus(corpus, cfg.ratios, cfg.split_seed);

  fs::create_directories(out_dir / "checkpoints");
  fs::create_directories(out_dir / "logs");
  fs::create_directories(out_dir / "reports");

  nlohmann::json config_doc = cfg;
  config_doc["vocab_size"] = corpus.vocab_size;
  config_doc["corpus_digest"] = digest;
  detail::write_text(out_dir / "config.json", config_doc.dump(2) + "\n");

  const Dims dims{corpus.vocab_size, cfg.d_e, cfg.d_u, cfg.d_s};
  const ModelParameters init = init_params(dims, cfg.train.seed);

  RunOutcome outcome;
  CostSimulator sim;
  if (uses_cost(cfg.train.variant)) {
    ModelParameters backbone;
    PretrainResult pre = prepare_cost_simulator(cfg, init, splits, &backbone);
    save_checkpoint(backbone, out_dir / "checkpoints" / "cost_backbone.json");
    save_checkpoint(pre.simulator, out_dir / "checkpoints" / "cost_simulator.json");
    detail::write_text(out_dir / "logs" / "pretrain.json",
                       nlohmann::json{{"initial_mse", pre.initial_mse}, {"final_mse", pre.final_mse}}.dump(2) + "\n");
    sim = pre.simulator;
    outcome.pretrain = std::move(pre);
  }

  const TrainResult result = train(init, &sim, splits.train, splits.validation, cfg.train);
  std::string log;
  for (const auto& e : result.log) log += to_json(e).dump() + "\n";
  detail::write_text(out_dir / "logs" / "train.jsonl", log);
  save_checkpoint(result.params, out_dir / "checkpoints" / "model.json");

  outcome.best_epoch = result.best_epoch;
  outcome.validation = evaluate(result.params, splits.validation, cfg.train.variant);
  outcome.test = evaluate(result.params, splits.test, cfg.train.variant);
  detail::write_text(out_dir / "reports" / "validation.json", report_text(outcome.validation));
  detail::write_text(out_dir / "reports" / "test.json", report_text(outcome.test));
  return outcome;
}

inline MetricsReport read_report(const fs::path& path) {
  return detail::read_json_file(path).get<MetricsReport>();
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRow {
  double eta_c = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  double f1 = 0.0;
  double gt1 = 0.0;
  std::optional<double> ic;

  bool operator==(const SweepRow&) const = default;
};

inline constexpr const char* kSweepHeader = "eta_c,seed,status,f1,gt1,ic";

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const auto& r : rows) {
    out += detail::format_double(r.eta_c) + "," + std::to_string(r.seed) + "," + (r.ok ? "ok" : "failed");
    if (r.ok)
      out += "," + detail::format_double(r.f1) + "," + detail::format_double(r.gt1) + "," +
             (r.ic ? detail::format_double(*r.ic) : std::string());
    else
      out += ",,,";
    out += "\n";
  }
  return out;
}

inline std::vector<std::string> split_fields(const std::string& line, char sep = ',') {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::vector<SweepRow> read_sweep_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || split_fields(line) != split_fields(kSweepHeader))
    throw ParseError(1, "expected sweep header \"" + std::string(kSweepHeader) + "\"");
  std::vector<SweepRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 6) throw ParseError(line_no, "expected 6 fields");
    try {
      SweepRow r;
      r.eta_c = std::stod(f[0]);
      r.seed = std::stoull(f[1]);
      if (f[2] != "ok" && f[2] != "failed") throw ValidationError("bad status \"" + f[2] + "\"");
      r.ok = f[2] == "ok";
      if (r.ok) {
        r.f1 = std::stod(f[3]);
        r.gt1 = std::stod(f[4]);
        if (!f[5].empty()) r.ic = std::stod(f[5]);
      }
      rows.push_back(r);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return rows;
}

inline std::string eta_tag(double eta) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", eta);
  return buf;
}

/// One run per (eta_c, seed) under <out_dir>/runs/, then <out_dir>/sweep.csv.
/// A failed run is recorded as such and the sweep continues.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, const std::vector<double>& etas,
                                       const std::vector<std::uint64_t>& seeds, const fs::path& out_dir,
                                       std::ostream* progress = nullptr) {
  if (etas.empty() || seeds.empty()) throw ValidationError("sweep needs at least one eta_c and one seed");
  for (double e : etas)
    if (!(e >= 0)) throw ValidationError("eta_c values must be non-negative");
  fs::create_directories(out_dir / "runs");
  std::vector<SweepRow> rows;
  for (double eta : etas) {
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.train.eta_c = eta;
      cfg.train.seed = seed;
      SweepRow row;
      row.eta_c = eta;
      row.seed = seed;
      const fs::path dir = out_dir / "runs" / ("eta_" + eta_tag(eta) + "_seed_" + std::to_string(seed));
      try {
        const RunOutcome o = run_train(cfg, dir);
        row.ok = true;
        row.f1 = o.test.f1;
        row.gt1 = o.test.gt.at(1);
        row.ic = o.test.ic;
      } catch (const std::exception& e) {
        if (progress) *progress << "run " << dir.string() << " failed: " << e.what() << "\n";
      }
      if (progress && row.ok)
        *progress << "eta_c=" << eta_tag(eta) << " seed=" << seed << " f1=" << row.f1 << " gt1=" << row.gt1
                  << " ic=" << (row.ic ? detail::format_double(*row.ic) : std::string("null")) << "\n";
      rows.push_back(row);
    }
  }
  detail::write_text(out_dir / "sweep.csv", sweep_csv(rows));
  return rows;
}

// ---------------------------------------------------------------------------
// compare

struct MetricComparison {
  std::string metric;
  std::vector<double> values_a, values_b;
  double mean_a = 0, std_a = 0, mean_b = 0, std_b = 0;
  WelchResult welch;
};

inline std::vector<std::string> default_compare_metrics(int gt_tolerance) {
  return {"f1", "macro_f1", "gt" + std::to_string(gt_tolerance), "ic"};
}

inline std::optional<double> metric_value(const MetricsReport& r, const std::string& name) {
  if (name == "f1") return r.f1;
  if (name == "macro_f1") return r.macro_f1;
  if (name == "ic") return r.ic;
  if (name.size() == 3 && name.rfind("gt", 0) == 0) {
    const int t = name[2] - '0';
    detail::check_tolerance(t);
    return r.gt.at(t);
  }
  throw ValidationError("unknown metric \"" + name + "\"");
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

inline std::vector<MetricComparison> compare_reports(const std::vector<MetricsReport>& a,
                                                     const std::vector<MetricsReport>& b,
                                                     const std::vector<std::string>& metrics) {
  if (a.size() < 2 || b.size() < 2) throw ValidationError("compare needs at least two runs per side");
  std::vector<MetricComparison> out;
  for (const auto& name : metrics) {
    MetricComparison c;
    c.metric = name;
    for (const auto* side : {&a, &b})
      for (const auto& r : *side) {
        const auto v = metric_value(r, name);
        if (!v) throw ValidationError("metric \"" + name + "\" is undefined in at least one run");
        (side == &a ? c.values_a : c.values_b).push_back(*v);
      }
    std::tie(c.mean_a, c.std_a) = mean_std(c.values_a);
    std::tie(c.mean_b, c.std_b) = mean_std(c.values_b);
    c.welch = welch_t_test(c.values_a, c.values_b);
    out.push_back(std::move(c));
  }
  return out;
}

inline nlohmann::json compare_json(const std::vector<MetricComparison>& rows,
                                   const std::vector<std::string>& runs_a, const std::vector<std::string>& runs_b) {
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& c : rows)
    metrics.push_back({{"metric", c.metric},
                       {"a", {{"mean", c.mean_a}, {"std", c.std_a}, {"values", c.values_a}}},
                       {"b", {{"mean", c.mean_b}, {"std", c.std_b}, {"values", c.values_b}}},
                       {"t", std::isfinite(c.welch.t) ? nlohmann::json(c.welch.t) : nlohmann::json(nullptr)},
                       {"df", c.welch.df},
                       {"p", c.welch.p}});
  return {{"runs_a", runs_a}, {"runs_b", runs_b}, {"metrics", std::move(metrics)}};
}

inline std::string compare_csv(const std::vector<MetricComparison>& rows) {
  std::string out = "metric,mean_a,std_a,mean_b,std_b,t,df,p\n";
  for (const auto& c : rows)
    out += c.metric + "," + detail::format_double(c.mean_a) + "," + detail::format_double(c.std_a) + "," +
           detail::format_double(c.mean_b) + "," + detail::format_double(c.std_b) + "," +
           detail::format_double(c.welch.t) + "," + detail::format_double(c.welch.df) + "," +
           detail::format_double(c.welch.p) + "\n";
  return out;
}

/// Reads reports/test.json from every run directory, writes compare.json
/// and compare.csv into out_dir.
inline std::vector<MetricComparison> run_compare(const std::vector<std::string>& runs_a,
                                                 const std::vector<std::string>& runs_b,
                                                 const std::vector<std::string>& metrics, const fs::path& out_dir) {
  auto load = [](const std::vector<std::string>& dirs) {
    std::vector<MetricsReport> out;
    for (const auto& d : dirs) out.push_back(read_report(fs::path(d) / "reports" / "test.json"));
    return out;
  };
  const auto rows = compare_reports(load(runs_a), load(runs_b), metrics);
  fs::create_directories(out_dir);
  detail::write_text(out_dir / "compare.json", compare_json(rows, runs_a, runs_b).dump(2) + "\n");
  detail::write_text(out_dir / "compare.csv", compare_csv(rows));
  return rows;
}

}  // namespace mhch
