#include "cts/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cts/errors.hpp"
#include "cts/numerics.hpp"

namespace cts {

Prediction predict_at(std::span<const double> logits, int label, double temperature) {
  auto p = softmax_t(logits, temperature);
  std::size_t hat = argmax(logits);
  return {p[hat], static_cast<int>(hat) == label};
}

std::vector<Prediction> predictions(const RecordSet& records, double temperature) {
  std::vector<Prediction> out;
  out.reserve(records.size());
  for (const auto& r : records.records()) out.push_back(predict_at(r.logits, r.label, temperature));
  return out;
}

std::vector<Prediction> predictions(const RecordSet& records,
                                    std::span<const double> per_sample_temperature) {
  if (per_sample_temperature.size() != records.size())
    throw InputError("one temperature per record required");
  std::vector<Prediction> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    out.push_back(predict_at(records[i].logits, records[i].label, per_sample_temperature[i]));
  return out;
}

std::size_t bin_index(double confidence, int bins) {
  if (bins < 1) throw InputError("bin count must be >= 1");
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw InputError("confidence outside [0,1]");
  if (confidence == 0.0) return 0;
  const double r = static_cast<double>(bins);
  auto idx = static_cast<long>(std::ceil(confidence * r)) - 1;
  idx = std::clamp(idx, 0L, static_cast<long>(bins) - 1);
  // Snap to the exact half-open edges r/R.
  while (idx > 0 && confidence <= static_cast<double>(idx) / r) --idx;
  while (idx < bins - 1 && confidence > static_cast<double>(idx + 1) / r) ++idx;
  return static_cast<std::size_t>(idx);
}

BinTable reliability_table(std::span<const Prediction> preds, int bins) {
  if (preds.empty()) throw InputError("no predictions");
  if (bins < 1) throw InputError("bin count must be >= 1");
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0), hits(bins, 0);
  for (const auto& p : preds) {
    std::size_t b = bin_index(p.confidence, bins);
    conf_sum[b] += p.confidence;
    ++count[b];
    if (p.correct) ++hits[b];
  }
  BinTable t;
  t.total = preds.size();
  for (int r = 0; r < bins; ++r) {
    Bin b;
    b.low = static_cast<double>(r) / bins;
    b.high = static_cast<double>(r + 1) / bins;
    b.count = count[r];
    if (b.count > 0) {
      b.confidence = conf_sum[r] / static_cast<double>(b.count);
      b.accuracy = static_cast<double>(hits[r]) / static_cast<double>(b.count);
    }
    t.bins.push_back(b);
  }
  return t;
}

double BinTable::ece() const {
  double e = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    e += static_cast<double>(b.count) / static_cast<double>(total) *
         std::abs(*b.accuracy - *b.confidence);
  }
  return e;
}

double ece(std::span<const Prediction> preds, int bins) {
  return reliability_table(preds, bins).ece();
}

double accuracy(const RecordSet& records, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  std::size_t correct = 0;
  for (const auto& r : records.records())
    if (static_cast<int>(argmax(r.logits)) == r.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double mean_nll(const RecordSet& records, double temperature) {
  double s = 0.0;
  for (const auto& r : records.records()) s -= log_softmax_t(r.logits, temperature)[r.label];
  return s / static_cast<double>(records.size());
}

double mean_nll(const RecordSet& records, std::span<const double> per_sample_temperature) {
  if (per_sample_temperature.size() != records.size())
    throw InputError("one temperature per record required");
  double s = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i)
    s -= log_softmax_t(records[i].logits, per_sample_temperature[i])[records[i].label];
  return s / static_cast<double>(records.size());
}

double prediction_variance(std::span<const std::vector<double>> preds) {
  if (preds.size() < 2) throw InputError("prediction variance needs >= 2 predictions");
  const std::size_t k = preds.front().size();
  if (k == 0) throw InputError("empty logit vector");
  for (const auto& p : preds)
    if (p.size() != k) throw InputError("prediction lengths differ");
  const double m = static_cast<double>(preds.size());
  double total = 0.0;
  for (std::size_t e = 0; e < k; ++e) {
    double mean = 0.0;
    for (const auto& p : preds) mean += p[e];
    mean /= m;
    double var = 0.0;
    for (const auto& p : preds) var += (p[e] - mean) * (p[e] - mean);
    total += var / m;
  }
  return total / static_cast<double>(k);
}

namespace {

std::vector<double> average_ranks(std::span<const double> x, bool* tied) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    if (j > i) *tied = true;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = avg;
    i = j + 1;
  }
  return rank;
}

}  // namespace

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InputError("spearman inputs differ in length");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  bool tied = false;
  auto rx = average_ranks(x, &tied);
  auto ry = average_ranks(y, &tied);
  if (!tied) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    const double nd = static_cast<double>(n);
    return 1.0 - 6.0 * d2 / (nd * (nd * nd - 1.0));
  }
  const double mean = (static_cast<double>(n) + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

VarianceProfile variance_ece_profile(std::span<const ConsistencyScore> scores,
                                     std::span<const Prediction> preds, int group_count,
                                     int bins) {
  if (scores.size() != preds.size()) throw InputError("scores and predictions are not aligned");
  if (group_count < 1) throw ConfigError("group_count must be >= 1");
  if (scores.size() < static_cast<std::size_t>(group_count))
    throw ConfigError("fewer samples than variance groups");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    if (scores[a].variance != scores[b].variance) return scores[a].variance < scores[b].variance;
    return scores[a].id < scores[b].id;
  });

  VarianceProfile prof;
  const bool all_equal = scores[order.front()].variance == scores[order.back()].variance;
  const std::size_t groups = all_equal ? 1 : static_cast<std::size_t>(group_count);
  prof.degenerate = all_equal;

  const std::size_t n = order.size();
  std::size_t start = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t size = n / groups + (g < n % groups ? 1 : 0);
    std::vector<Prediction> members;
    double var_sum = 0.0;
    for (std::size_t i = start; i < start + size; ++i) {
      members.push_back(preds[order[i]]);
      var_sum += scores[order[i]].variance;
    }
    prof.groups.push_back({var_sum / static_cast<double>(size), ece(members, bins), size});
    start += size;
  }

  std::vector<double> gi, ge;
  for (std::size_t g = 0; g < prof.groups.size(); ++g) {
    gi.push_back(static_cast<double>(g));
    ge.push_back(prof.groups[g].ece);
  }
  prof.spearman = spearman(gi, ge);
  return prof;
}

ExtremeSplit variance_extremes(std::span<const ConsistencyScore> scores, double fraction) {
  if (scores.empty()) throw InputError("no scores");
  if (!(fraction > 0.0 && fraction <= 0.5)) throw ConfigError("extreme fraction must lie in (0, 0.5]");
  const auto n = scores.size();
  const auto take = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto by = [&](bool descending) {
    auto v = idx;
    std::sort(v.begin(), v.end(), [&](auto a, auto b) {
      if (scores[a].variance != scores[b].variance)
        return descending ? scores[a].variance > scores[b].variance
                          : scores[a].variance < scores[b].variance;
      return scores[a].id < scores[b].id;
    });
    v.resize(take);
    return v;
  };
  return {by(true), by(false)};
}

}  // namespace cts
