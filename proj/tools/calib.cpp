#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "cts/calibration.hpp"
#include "cts/errors.hpp"
#include "cts/harness.hpp"

namespace fs = std::filesystem;
using namespace cts;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitOther = 1;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "Random seed");
  auto* o = cmd->add_option("--out", c.out, "Output path");
  if (out_required) o->required();
}

ExperimentConfig config_of(const Common& c) {
  return c.config.empty() ? ExperimentConfig{} : load_config(c.config);
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

// Writes to `path`, or to stdout when it is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty())
    std::cout << text;
  else
    write_text(path, text);
}

std::vector<LabeledImage> dataset_of(const ExperimentConfig& cfg, const std::string& data,
                                     std::uint64_t seed) {
  if (!data.empty()) return read_dataset(data);
  if (cfg.dataset.path) return read_dataset(*cfg.dataset.path);
  return generate(Rng(seed).split(1), cfg.dataset.n_per_domain_class, cfg.dataset.constants);
}

int domain_count(const std::vector<LabeledImage>& images) {
  int d = 0;
  for (const auto& im : images) d = std::max(d, im.domain + 1);
  return d;
}

DatasetSplit split_for(const ExperimentConfig& cfg, const std::vector<LabeledImage>& images,
                       int target, std::uint64_t seed) {
  std::optional<SplitSpec> spec;
  for (const auto& s : cfg.splits)
    if (s.target_domain == target) spec = s;
  if (!spec) spec = leave_one_out(target, domain_count(images), cfg.train_fraction, 0);
  spec->seed ^= seed;
  return split(images, *spec);
}

SmallCnn load_model(const std::string& path) { return model_from_json(read_json_file(path)); }

RecordSet load_cache(const std::string& path) { return RecordSet(read_cache(fs::path(path))); }

struct Args {
  Common common;
  std::string data, model, cache, temperature, target_out, method = "ts";
  int target = 3;
  double lambda1 = 1.0, lambda2 = 1.0;
  bool lambda_grid = false;
  double extreme_fraction = 0.05;
  int groups = 10;
};

int cmd_gen_data(const Args& a) {
  auto cfg = config_of(a.common);
  auto images = generate(Rng(a.common.seed).split(1), cfg.dataset.n_per_domain_class,
                         cfg.dataset.constants);
  write_dataset(a.common.out, images, cfg.dataset.constants, a.common.seed,
                cfg.dataset.n_per_domain_class);
  std::cerr << "wrote " << images.size() << " images to " << a.common.out << "\n";
  return kExitOk;
}

int cmd_train(const Args& a) {
  auto cfg = config_of(a.common);
  auto images = dataset_of(cfg, a.data, a.common.seed);
  auto data = split_for(cfg, images, a.target, a.common.seed);
  Rng init = Rng(a.common.seed).split(3);
  Rng train_rng = Rng(a.common.seed).split(4);
  auto res = train(SmallCnn::initialized(cfg.dataset.constants.classes, init), data.train,
                   cfg.training, train_rng);
  emit(a.common.out, to_json(res.model).dump() + "\n");
  std::cerr << "train accuracy " << train_accuracy(res.model, data.train) << "\n";
  return kExitOk;
}

int cmd_export_logits(const Args& a) {
  auto cfg = config_of(a.common);
  auto model = load_model(a.model);
  auto images = dataset_of(cfg, a.data, a.common.seed);
  auto data = split_for(cfg, images, a.target, a.common.seed);
  std::vector<std::string> warnings;
  auto records = build_logit_cache(model, data.calib, Rng(a.common.seed).split(5).next_u64(),
                                   {cfg.pairings, cfg.same_class_style_pairs}, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  write_cache(fs::path(a.common.out), records);
  if (!a.target_out.empty()) write_cache(fs::path(a.target_out), plain_records(model, data.target));
  return kExitOk;
}

int cmd_calibrate(const Args& a) {
  auto cfg = config_of(a.common);
  const Method method = parse_method(a.method);
  CalibrationResult result;
  if (method == Method::PerturbTs) {
    if (a.model.empty()) throw ConfigError("perturb-ts needs --model");
    auto model = load_model(a.model);
    auto images = dataset_of(cfg, a.data, a.common.seed);
    auto data = split_for(cfg, images, a.target, a.common.seed);
    result.temperature = perturb_ts(data.calib, model, cfg.perturb_severities,
                                    Rng(a.common.seed).split(7), cfg.search);
  } else {
    if (a.cache.empty()) throw ConfigError("--cache is required for " + a.method);
    CalibrationOptions opts;
    opts.lambda = cfg.lambda;
    opts.lambda.grid = a.lambda_grid;
    opts.lambda.fixed = {a.lambda1, a.lambda2};
    opts.classwise_weight = cfg.classwise_weight;
    opts.seed = a.common.seed;
    opts.search = cfg.search;
    result = calibrate(load_cache(a.cache), method, opts);
  }
  emit(a.common.out, to_json(result).dump(2) + "\n");
  return kExitOk;
}

int cmd_evaluate(const Args& a) {
  if (a.cache.empty() || a.temperature.empty())
    throw ConfigError("evaluate needs --cache and --temperature");
  auto records = load_cache(a.cache).originals();
  auto calibration = calibration_from_json(read_json_file(a.temperature));
  auto ev = evaluate(records, calibration);

  ReportRow row;
  row.target = records[0].domain;
  row.method = calibration.temperature.method;
  row.seed = a.common.seed;
  row.ece = ev.ece;
  row.nll = ev.nll;
  row.accuracy = ev.accuracy;
  row.temperature = ev.t_mean;
  row.t_min = ev.t_min;
  row.t_max = ev.t_max;
  row.lambda1 = calibration.temperature.weights.lambda_style;
  row.lambda2 = calibration.temperature.weights.lambda_content;
  CalibrationReport report;
  report.rows = {row};
  report.aggregates = aggregate_rows(report.rows, {row.method});
  emit(a.common.out, to_json(report).dump(2) + "\n");
  std::cerr << bins_csv(ev.reliability);
  return kExitOk;
}

int cmd_analyze(const Args& a) {
  auto cfg = config_of(a.common);
  auto model = load_model(a.model);
  auto images = dataset_of(cfg, a.data, a.common.seed);
  auto data = split_for(cfg, images, a.target, a.common.seed);
  AnalysisConfig ac = cfg.analysis;
  ac.extreme_fraction = a.extreme_fraction;
  ac.group_count = a.groups;
  auto bundle = run_consistency_analysis(model, data.calib, data.target, ac,
                                         Rng(a.common.seed).split(8));
  write_analysis(bundle, a.common.out);
  return kExitOk;
}

int cmd_run_all(const Args& a, bool seed_given) {
  auto cfg = config_of(a.common);
  if (seed_given) cfg.seeds = {a.common.seed};
  fs::path out = a.common.out.empty() ? fs::path(cfg.output_dir) : fs::path(a.common.out);
  auto report = run_all(cfg, out);
  std::cout << format_table(report);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consistency-guided temperature scaling toolkit"};
  app.require_subcommand(1);
  Args a;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic multi-domain dataset");
  add_common(gen, a.common, true);

  auto* tr = app.add_subcommand("train", "Train the small CNN on the source split");
  add_common(tr, a.common, false);
  tr->add_option("--data", a.data, "Dataset directory (default: generate from config)");
  tr->add_option("--target", a.target, "Held-out target domain");

  auto* ex = app.add_subcommand("export-logits", "Write the calibration logit cache");
  add_common(ex, a.common, true);
  ex->add_option("--model", a.model, "Model JSON")->required();
  ex->add_option("--data", a.data, "Dataset directory");
  ex->add_option("--target", a.target, "Held-out target domain");
  ex->add_option("--target-out", a.target_out, "Also write target-domain logits here");

  auto* cal = app.add_subcommand("calibrate", "Fit a temperature");
  add_common(cal, a.common, false);
  cal->add_option("--cache", a.cache, "Logit cache (JSON Lines)");
  cal->add_option("--method", a.method, "vanilla|ts|cts|cts-s|cts-c|classwise|perturb-ts|ccdg-nn");
  cal->add_option("--lambda1", a.lambda1, "Style weight when the grid is off");
  cal->add_option("--lambda2", a.lambda2, "Content weight when the grid is off");
  cal->add_flag("--lambda-grid", a.lambda_grid, "Select weights on a held-out slice");
  cal->add_option("--model", a.model, "Model JSON (perturb-ts)");
  cal->add_option("--data", a.data, "Dataset directory (perturb-ts)");
  cal->add_option("--target", a.target, "Held-out target domain (perturb-ts)");

  auto* ev = app.add_subcommand("evaluate", "Score a temperature on target logits");
  add_common(ev, a.common, false);
  ev->add_option("--cache", a.cache, "Target logit cache");
  ev->add_option("--temperature", a.temperature, "Output of calibrate");

  auto* an = app.add_subcommand("analyze", "Prediction-consistency analysis");
  add_common(an, a.common, true);
  an->add_option("--model", a.model, "Model JSON")->required();
  an->add_option("--data", a.data, "Dataset directory");
  an->add_option("--target", a.target, "Held-out target domain");
  an->add_option("--extreme-fraction", a.extreme_fraction, "Top/bottom variance fraction");
  an->add_option("--groups", a.groups, "Variance quantile groups");

  auto* all = app.add_subcommand("run-all", "Full benchmark with reports");
  add_common(all, a.common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(a);
    if (*tr) return cmd_train(a);
    if (*ex) return cmd_export_logits(a);
    if (*cal) return cmd_calibrate(a);
    if (*ev) return cmd_evaluate(a);
    if (*an) return cmd_analyze(a);
    if (*all) return cmd_run_all(a, all->count("--seed") > 0);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DomainError& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
