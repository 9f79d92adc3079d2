#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cts/datagen.hpp"
#include "cts/model.hpp"
#include "cts/records.hpp"

namespace cts {

// Coefficients of the style and content consistency terms.
struct LossWeights {
  double lambda_style = 0.0;
  double lambda_content = 0.0;

  bool operator==(const LossWeights&) const = default;
};

struct SearchConfig {
  double t_min = 0.05;
  double t_max = 10.0;
  int grid_points = 200;    // log-spaced coarse scan
  double tolerance = 1e-4;  // golden-section bracket width
};

struct Temperature {
  double value = 1.0;
  std::string method;
  double objective = 0.0;
  LossWeights weights;
  std::vector<std::pair<double, double>> trace;  // (T, loss) in evaluation order
};

// Mean negative log-likelihood of the labels under softmax(f / T).
double nll_loss(const RecordSet& records, double temperature);

// Mean KL(softmax(f/T) || softmax(f_style_shifted)); the shifted branch is
// never temperature-scaled.
double style_loss(const RecordSet& records, double temperature);

// Same as style_loss against the content-shifted logits.
double content_loss(const RecordSet& records, double temperature);

// nll + lambda_style * style + lambda_content * content
double total_loss(const RecordSet& records, double temperature, const LossWeights& w);

// d total_loss / dT, analytic.
double total_loss_grad(const RecordSet& records, double temperature, const LossWeights& w);

// NLL plus weight * mean (conf_i(T) - conf_partner(T))^2 over records, where
// conf is the temperature-scaled max probability. Every partner must be in
// the set.
double classwise_objective(const RecordSet& records, double temperature, double pair_weight = 1.0);

// Coarse log-spaced scan over [t_min, t_max] followed by golden-section
// refinement around the best grid point. Returns the lowest-loss point seen.
// Throws NumericError if every evaluation is NaN.
Temperature minimize_temperature(const std::function<double(double)>& objective,
                                 const SearchConfig& cfg, std::string method);

Temperature optimize_temperature(const RecordSet& records, const LossWeights& w,
                                 const SearchConfig& cfg = {});

enum class Method { Vanilla, Ts, Cts, CtsStyle, CtsContent, Classwise, PerturbTs, CcdgNn };

std::string method_name(Method m);
Method parse_method(const std::string& name);  // throws ConfigError
const std::vector<Method>& all_methods();

struct LambdaPolicy {
  bool grid = true;
  std::vector<double> grid_values{0.0, 0.25, 0.5, 1.0, 2.0};
  double holdout_fraction = 0.2;
  LossWeights fixed{1.0, 1.0};  // used when grid is off
};

struct LambdaCandidate {
  LossWeights weights;
  double holdout_ece = 0.0;
};

struct LambdaSelection {
  LossWeights chosen;
  std::vector<LambdaCandidate> candidates;
};

// Candidate weights for a CTS variant: both terms, style only, or content
// only. (0,0) is always excluded.
std::vector<LossWeights> lambda_candidates(Method variant, const std::vector<double>& values);

// Fits T on a seeded (1 - holdout) slice of the samples for every candidate
// and keeps the one with the lowest ECE on the held-out originals (first in
// grid order on ties).
LambdaSelection select_lambda(const RecordSet& records, const std::vector<LossWeights>& candidates,
                              double holdout_fraction, std::uint64_t seed,
                              const SearchConfig& cfg = {});

struct ClusterTable {
  struct Entry {
    int domain = 0;
    std::vector<double> centroid;
    double temperature = 1.0;
  };
  std::vector<Entry> entries;  // ascending domain
};

// One cluster per calibration domain: mean logit vector and vanilla TS.
ClusterTable ccdg_nn_build(const RecordSet& records, const SearchConfig& cfg = {});

// Temperature of the nearest centroid (Euclidean), lowest domain on ties.
double ccdg_nn_assign(const ClusterTable& table, std::span<const double> logits);

// Records for an image set with no feature shifts (partner = self).
std::vector<LogitRecord> plain_records(const SmallCnn& model,
                                       const std::vector<LabeledImage>& images, int pairing = 0);

inline const std::vector<double> kDefaultSeverities{0.05, 0.1, 0.2};

// Vanilla TS on the calibration set plus Gaussian pixel-noise copies at each
// severity (noise standard deviation, pixels clamped to [0,1]).
Temperature perturb_ts(const std::vector<LabeledImage>& calib_images, const SmallCnn& model,
                       const std::vector<double>& severities, const Rng& rng,
                       const SearchConfig& cfg = {});
std::vector<LabeledImage> perturbed_copies(const std::vector<LabeledImage>& images,
                                           const std::vector<double>& severities, const Rng& rng);

struct CalibrationOptions {
  LambdaPolicy lambda;
  double classwise_weight = 1.0;
  std::uint64_t seed = 0;
  SearchConfig search;
};

struct CalibrationResult {
  Temperature temperature;
  std::optional<ClusterTable> clusters;  // ccdg-nn only

  // Temperature to apply to a target sample with these logits.
  double temperature_for(std::span<const double> logits) const;
};

// Every cache-only method (all but perturb-ts).
CalibrationResult calibrate(const RecordSet& records, Method method,
                            const CalibrationOptions& opts);

nlohmann::ordered_json to_json(const CalibrationResult& r);
CalibrationResult calibration_from_json(const nlohmann::json& j);

}  // namespace cts
