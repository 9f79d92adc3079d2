#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cts/calibration.hpp"
#include "cts/datagen.hpp"
#include "cts/metrics.hpp"
#include "cts/model.hpp"
#include "cts/records.hpp"

namespace cts {

struct DatasetConfig {
  int n_per_domain_class = 100;
  GeneratorConstants constants = default_constants();
  std::optional<std::filesystem::path> path;  // ingest instead of generating
};

struct AnalysisConfig {
  bool enabled = true;
  std::vector<double> noise_variances{0.0, 0.1, 0.2, 0.3, 0.4};
  int group_count = 10;
  double extreme_fraction = 0.05;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  // Empty: one leave-one-out split per domain using train_fraction.
  std::vector<SplitSpec> splits;
  double train_fraction = 0.9;
  std::vector<Method> methods = all_methods();
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  LambdaPolicy lambda;
  int pairings = 3;
  bool same_class_style_pairs = true;
  double classwise_weight = 1.0;
  TrainHyperparams training;
  std::vector<double> perturb_severities = kDefaultSeverities;
  SearchConfig search;
  AnalysisConfig analysis;
  std::string output_dir = "out";
  int threads = 0;  // 0: hardware concurrency
};

// Throws ConfigError on unknown keys or invalid values.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

// Splits the config resolves to (explicit list or leave-one-out per domain).
std::vector<SplitSpec> resolved_splits(const ExperimentConfig& c);

struct CacheOptions {
  int pairings = 3;
  bool same_class_style_pairs = true;
};

// For every pairing and sample: original logits, a same-class partner
// (another calibration domain preferred), and the logits after swapping in
// the partner's style and content at the style layer. Pairing-major order.
// Samples without a same-class partner self-pair and add a warning.
std::vector<LogitRecord> build_logit_cache(const SmallCnn& model,
                                           const std::vector<LabeledImage>& calib_set,
                                           std::uint64_t pairing_seed, const CacheOptions& opts,
                                           std::vector<std::string>* warnings = nullptr);

struct ProbeRow {
  std::int64_t id = 0;
  std::string probe;  // "style" or "content"
  double variance = 0.0;
  double confidence = 0.0;
  bool correct = false;
};

struct ProbeSummary {
  VarianceProfile profile;
  BinTable high;  // top-variance fraction
  BinTable low;   // bottom-variance fraction
};

struct AnalysisBundle {
  std::vector<ProbeRow> rows;  // samples x probes
  ProbeSummary style;
  ProbeSummary content;
  int style_predictions_per_sample = 0;
};

// Style probe: original prediction plus one prediction per calibration
// domain using the style of a random sample from that domain. Content probe:
// one prediction per noise variance injected into the content.
AnalysisBundle run_consistency_analysis(const SmallCnn& model,
                                        const std::vector<LabeledImage>& calib_set,
                                        const std::vector<LabeledImage>& target_set,
                                        const AnalysisConfig& cfg, const Rng& rng);

struct EvalResult {
  double ece = 0.0;
  double nll = 0.0;
  double accuracy = 0.0;
  double t_mean = 1.0;
  double t_min = 1.0;
  double t_max = 1.0;
  BinTable reliability;
};

EvalResult evaluate(const RecordSet& target, const CalibrationResult& calibration);

struct ReportRow {
  int target = 0;
  std::string method;
  std::uint64_t seed = 0;
  std::string status = "ok";
  double ece = 0.0;
  double nll = 0.0;
  double accuracy = 0.0;
  double temperature = 1.0;
  double t_min = 1.0;
  double t_max = 1.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

struct Aggregate {
  std::optional<int> target;  // empty: average over targets
  std::string method;
  std::size_t runs = 0;
  double ece_mean = 0.0;
  double ece_half_width = 0.0;  // 1.96 * sample sd / sqrt(runs)
  double nll_mean = 0.0;
  double accuracy_mean = 0.0;
};

struct CellAnalysis {
  int target = 0;
  std::uint64_t seed = 0;
  std::optional<double> style_spearman;
  std::optional<double> content_spearman;
};

struct CalibrationReport {
  std::vector<ReportRow> rows;
  std::vector<Aggregate> aggregates;
  std::vector<CellAnalysis> analysis;
  double train_fraction = 0.9;
  std::vector<std::string> warnings;
};

// mean and 1.96 * sd / sqrt(n) half-width.
std::pair<double, double> mean_ci95(const std::vector<double>& v);

// Rebuilds per-target and average aggregates from rows.
std::vector<Aggregate> aggregate_rows(const std::vector<ReportRow>& rows,
                                      const std::vector<std::string>& methods);

// Train on the train split, cache on the calibration split, run every
// configured method and score on the target domain, for every (split, seed).
// Failures are recorded per cell.
CalibrationReport run_benchmark(const ExperimentConfig& config);

nlohmann::ordered_json to_json(const CalibrationReport& r);
// Methods x targets (+Avg) table of ECE in percent, then accuracy.
std::string format_table(const CalibrationReport& r);

// run_benchmark plus report.json and report.txt under `out_dir`.
CalibrationReport run_all(const ExperimentConfig& config, const std::filesystem::path& out_dir);

void write_analysis(const AnalysisBundle& bundle, const std::filesystem::path& dir);
std::string bins_csv(const BinTable& t);

}  // namespace cts
