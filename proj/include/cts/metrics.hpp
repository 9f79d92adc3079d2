#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cts/records.hpp"

namespace cts {

struct Prediction {
  double confidence = 0.0;  // probability of the predicted class
  bool correct = false;
};

// Predicted class is argmax of the raw logits (temperature never changes it);
// confidence is its probability under softmax_t(logits, T).
Prediction predict_at(std::span<const double> logits, int label, double temperature);
std::vector<Prediction> predictions(const RecordSet& records, double temperature);
std::vector<Prediction> predictions(const RecordSet& records,
                                    std::span<const double> per_sample_temperature);

struct Bin {
  double low = 0.0;   // exclusive
  double high = 0.0;  // inclusive
  std::size_t count = 0;
  std::optional<double> confidence;  // empty when count == 0
  std::optional<double> accuracy;
};

struct BinTable {
  std::size_t total = 0;
  std::vector<Bin> bins;

  // sum_r |B_r|/N |acc_r - conf_r|
  double ece() const;
};

// Bin r covers (r/R, (r+1)/R]; a confidence of exactly 0 goes to the first bin.
std::size_t bin_index(double confidence, int bins);

// Throws InputError on empty input or confidence outside [0,1].
BinTable reliability_table(std::span<const Prediction> preds, int bins = 10);
double ece(std::span<const Prediction> preds, int bins = 10);

double accuracy(const RecordSet& records, double temperature = 1.0);

// Mean cross-entropy of the labels at `temperature` (per-sample when a span).
double mean_nll(const RecordSet& records, double temperature);
double mean_nll(const RecordSet& records, std::span<const double> per_sample_temperature);

struct ConsistencyScore {
  std::int64_t id = 0;
  double variance = 0.0;
};

// Population variance of each logit element across the M predictions,
// averaged over the K elements. Throws InputError when M < 2.
double prediction_variance(std::span<const std::vector<double>> predictions);

struct ProfileGroup {
  double mean_variance = 0.0;
  double ece = 0.0;
  std::size_t count = 0;
};

struct VarianceProfile {
  std::vector<ProfileGroup> groups;
  std::optional<double> spearman;  // group index vs group ECE
  bool degenerate = false;         // every variance equal, one group
};

// Sorts samples by variance (ties by id) into `group_count` near-equal
// quantile groups and reports each group's ECE.
VarianceProfile variance_ece_profile(std::span<const ConsistencyScore> scores,
                                     std::span<const Prediction> preds, int group_count = 10,
                                     int bins = 10);

// Spearman rank correlation with average ranks for ties; empty when either
// side is constant or fewer than 2 points.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

// Indices of the `fraction` highest- and lowest-variance samples (at least
// one each); ties broken by id.
struct ExtremeSplit {
  std::vector<std::size_t> high;
  std::vector<std::size_t> low;
};
ExtremeSplit variance_extremes(std::span<const ConsistencyScore> scores, double fraction);

}  // namespace cts
