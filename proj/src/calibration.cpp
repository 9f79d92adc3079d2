#include "cts/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "cts/errors.hpp"
#include "cts/metrics.hpp"

namespace cts {

using nlohmann::json;

namespace {

struct LossTerms {
  double nll = 0.0, style = 0.0, content = 0.0;
  double d_nll = 0.0, d_style = 0.0, d_content = 0.0;
};

void require_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("temperature must be positive and finite");
}

// Accumulates every loss term (and optionally its T-derivative) in one pass.
// With p = softmax(f/T): d log p_k / dT = -(f_k - E_p[f]) / T^2.
LossTerms evaluate_terms(const RecordSet& rs, double t, bool want_grad) {
  require_temperature(t);
  const std::size_t k = static_cast<std::size_t>(rs.classes());
  std::vector<double> lp(k), p(k), g(k);
  LossTerms acc;
  const double t2 = t * t;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    const auto& f = rs[i].logits;
    double m = *std::max_element(f.begin(), f.end());
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp((f[c] - m) / t);
    const double lse = std::log(s);
    double mean_f = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      lp[c] = (f[c] - m) / t - lse;
      p[c] = std::exp(lp[c]);
      mean_f += p[c] * f[c];
    }
    const int y = rs[i].label;
    acc.nll -= lp[y];

    auto kl = [&](std::span<const double> log_q, double& value, double& grad) {
      double d = 0.0, dd = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        if (p[c] <= 0.0) continue;
        const double ratio = lp[c] - log_q[c];
        d += p[c] * ratio;
        if (want_grad) dd += p[c] * g[c] * ratio;
      }
      value += std::max(d, 0.0);
      grad += dd;
    };
    if (want_grad) {
      for (std::size_t c = 0; c < k; ++c) g[c] = -(f[c] - mean_f) / t2;
      acc.d_nll += (f[y] - mean_f) / t2;
    }
    kl(rs.log_q_style(i), acc.style, acc.d_style);
    kl(rs.log_q_content(i), acc.content, acc.d_content);
  }
  const double n = static_cast<double>(rs.size());
  acc.nll /= n;
  acc.style /= n;
  acc.content /= n;
  acc.d_nll /= n;
  acc.d_style /= n;
  acc.d_content /= n;
  return acc;
}

void require_weights(const LossWeights& w) {
  if (!(w.lambda_style >= 0.0) || !(w.lambda_content >= 0.0))
    throw DomainError("loss weights must be non-negative");
}

double confidence_at(const std::vector<double>& f, double t) {
  return softmax_t(f, t)[argmax(f)];
}

}  // namespace

double nll_loss(const RecordSet& records, double temperature) {
  return evaluate_terms(records, temperature, false).nll;
}

double style_loss(const RecordSet& records, double temperature) {
  return evaluate_terms(records, temperature, false).style;
}

double content_loss(const RecordSet& records, double temperature) {
  return evaluate_terms(records, temperature, false).content;
}

double total_loss(const RecordSet& records, double temperature, const LossWeights& w) {
  require_weights(w);
  auto t = evaluate_terms(records, temperature, false);
  return t.nll + w.lambda_style * t.style + w.lambda_content * t.content;
}

double total_loss_grad(const RecordSet& records, double temperature, const LossWeights& w) {
  require_weights(w);
  auto t = evaluate_terms(records, temperature, true);
  return t.d_nll + w.lambda_style * t.d_style + w.lambda_content * t.d_content;
}

double classwise_objective(const RecordSet& records, double temperature, double pair_weight) {
  require_temperature(temperature);
  if (!(pair_weight >= 0.0)) throw DomainError("pair weight must be non-negative");
  double pair = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto j = records.partner(i);
    if (!j) throw InputError("classwise objective needs every partner in the record set");
    const double d = confidence_at(records[i].logits, temperature) -
                     confidence_at(records[*j].logits, temperature);
    pair += d * d;
  }
  return nll_loss(records, temperature) + pair_weight * pair / static_cast<double>(records.size());
}

Temperature minimize_temperature(const std::function<double(double)>& objective,
                                 const SearchConfig& cfg, std::string method) {
  if (!(cfg.t_min > 0.0 && cfg.t_max > cfg.t_min) || cfg.grid_points < 2 || !(cfg.tolerance > 0.0))
    throw ConfigError("invalid temperature search configuration");

  Temperature out;
  out.method = std::move(method);
  auto eval = [&](double t) {
    double v = objective(t);
    out.trace.emplace_back(t, v);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  const int n = cfg.grid_points;
  const double ratio = std::log(cfg.t_max / cfg.t_min);
  std::vector<double> grid(n);
  int best = -1;
  double best_value = std::numeric_limits<double>::infinity();
  for (int g = 0; g < n; ++g) {
    grid[g] = g == n - 1 ? cfg.t_max : cfg.t_min * std::exp(ratio * g / (n - 1));
    double v = eval(grid[g]);
    if (v < best_value) {
      best_value = v;
      best = g;
    }
  }
  if (best < 0) throw NumericError("temperature objective is NaN or infinite everywhere");

  double a = grid[std::max(best - 1, 0)];
  double b = grid[std::min(best + 1, n - 1)];
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = eval(c), fd = eval(d);
  while (b - a > cfg.tolerance) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = eval(d);
    }
  }
  eval(0.5 * (a + b));

  std::size_t pick = 0;
  double pick_value = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.trace.size(); ++i) {
    double v = out.trace[i].second;
    if (!std::isnan(v) && v < pick_value) {
      pick_value = v;
      pick = i;
    }
  }
  out.value = out.trace[pick].first;
  out.objective = out.trace[pick].second;
  return out;
}

Temperature optimize_temperature(const RecordSet& records, const LossWeights& w,
                                 const SearchConfig& cfg) {
  require_weights(w);
  const bool plain = w.lambda_style == 0.0 && w.lambda_content == 0.0;
  auto t = minimize_temperature(
      [&](double temp) { return total_loss(records, temp, w); }, cfg, plain ? "ts" : "cts");
  t.weights = w;
  return t;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::Vanilla: return "vanilla";
    case Method::Ts: return "ts";
    case Method::Cts: return "cts";
    case Method::CtsStyle: return "cts-s";
    case Method::CtsContent: return "cts-c";
    case Method::Classwise: return "classwise";
    case Method::PerturbTs: return "perturb-ts";
    case Method::CcdgNn: return "ccdg-nn";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : all_methods())
    if (method_name(m) == name) return m;
  throw ConfigError("unknown calibration method '" + name + "'");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> kAll{Method::Vanilla,    Method::Ts,        Method::Cts,
                                        Method::CtsStyle,   Method::CtsContent, Method::Classwise,
                                        Method::PerturbTs,  Method::CcdgNn};
  return kAll;
}

std::vector<LossWeights> lambda_candidates(Method variant, const std::vector<double>& values) {
  std::vector<LossWeights> out;
  for (double v : values)
    if (!(v >= 0.0)) throw ConfigError("lambda grid values must be non-negative");
  switch (variant) {
    case Method::Cts:
      for (double a : values)
        for (double b : values)
          if (a != 0.0 || b != 0.0) out.push_back({a, b});
      break;
    case Method::CtsStyle:
      for (double a : values)
        if (a != 0.0) out.push_back({a, 0.0});
      break;
    case Method::CtsContent:
      for (double b : values)
        if (b != 0.0) out.push_back({0.0, b});
      break;
    default:
      throw ConfigError("lambda grid applies to cts, cts-s and cts-c only");
  }
  if (out.empty()) throw ConfigError("lambda grid has no admissible candidate");
  return out;
}

LambdaSelection select_lambda(const RecordSet& records, const std::vector<LossWeights>& candidates,
                              double holdout_fraction, std::uint64_t seed,
                              const SearchConfig& cfg) {
  if (candidates.empty()) throw ConfigError("no lambda candidates");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw ConfigError("holdout fraction must lie in (0,1)");

  std::set<std::int64_t> id_set;
  for (const auto& r : records.records()) id_set.insert(r.id);
  std::vector<std::int64_t> ids(id_set.begin(), id_set.end());

  LambdaSelection sel;
  if (ids.size() < 2) {
    sel.chosen = candidates.front();
    return sel;
  }
  Rng rng = Rng(seed).split(0x1a3bda);
  shuffle(ids, rng);
  auto hold = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(ids.size())));
  hold = std::clamp<std::size_t>(hold, 1, ids.size() - 1);
  std::set<std::int64_t> held(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(hold));

  RecordSet fit = records.filter([&](const LogitRecord& r) { return !held.count(r.id); });
  RecordSet eval =
      records.filter([&](const LogitRecord& r) { return r.pairing == 0 && held.count(r.id); });

  double best = std::numeric_limits<double>::infinity();
  for (const auto& w : candidates) {
    double t = optimize_temperature(fit, w, cfg).value;
    double e = ece(predictions(eval, t));
    sel.candidates.push_back({w, e});
    if (e < best) {
      best = e;
      sel.chosen = w;
    }
  }
  return sel;
}

ClusterTable ccdg_nn_build(const RecordSet& records, const SearchConfig& cfg) {
  std::map<int, std::vector<LogitRecord>> by_domain;
  for (const auto& r : records.records()) by_domain[r.domain].push_back(r);
  ClusterTable table;
  const auto k = static_cast<std::size_t>(records.classes());
  for (auto& [domain, recs] : by_domain) {
    ClusterTable::Entry e;
    e.domain = domain;
    e.centroid.assign(k, 0.0);
    for (const auto& r : recs)
      for (std::size_t c = 0; c < k; ++c) e.centroid[c] += r.logits[c];
    for (double& v : e.centroid) v /= static_cast<double>(recs.size());
    e.temperature = optimize_temperature(RecordSet(std::move(recs)), {}, cfg).value;
    table.entries.push_back(std::move(e));
  }
  if (table.entries.empty()) throw ConfigError("no calibration domains");
  return table;
}

double ccdg_nn_assign(const ClusterTable& table, std::span<const double> logits) {
  if (table.entries.empty()) throw ConfigError("empty cluster table");
  double best = std::numeric_limits<double>::infinity();
  double t = table.entries.front().temperature;
  for (const auto& e : table.entries) {
    if (e.centroid.size() != logits.size()) throw InputError("centroid length mismatch");
    double d2 = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) d2 += (logits[c] - e.centroid[c]) * (logits[c] - e.centroid[c]);
    if (d2 < best) {
      best = d2;
      t = e.temperature;
    }
  }
  return t;
}

std::vector<LogitRecord> plain_records(const SmallCnn& model,
                                       const std::vector<LabeledImage>& images, int pairing) {
  std::vector<LogitRecord> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    auto f = forward(model, img.pixels).logits;
    out.push_back({img.id, img.domain, img.label, pairing, f, img.id, f, f});
  }
  return out;
}

std::vector<LabeledImage> perturbed_copies(const std::vector<LabeledImage>& images,
                                           const std::vector<double>& severities, const Rng& rng) {
  std::vector<LabeledImage> out;
  out.reserve(images.size() * severities.size());
  for (std::size_t s = 0; s < severities.size(); ++s) {
    if (!(severities[s] >= 0.0)) throw DomainError("perturbation severity must be >= 0");
    Rng level = rng.split(s);
    for (const auto& img : images) {
      Rng r = level.split(static_cast<std::uint64_t>(img.id));
      LabeledImage copy = img;
      for (double& v : copy.pixels.data()) v = std::clamp(v + severities[s] * r.normal(), 0.0, 1.0);
      out.push_back(std::move(copy));
    }
  }
  return out;
}

Temperature perturb_ts(const std::vector<LabeledImage>& calib_images, const SmallCnn& model,
                       const std::vector<double>& severities, const Rng& rng,
                       const SearchConfig& cfg) {
  if (calib_images.empty()) throw InputError("perturb-ts needs a calibration set");
  auto records = plain_records(model, calib_images, 0);
  auto copies = perturbed_copies(calib_images, severities, rng);
  for (std::size_t s = 0; s < severities.size(); ++s) {
    std::vector<LabeledImage> level(copies.begin() + s * calib_images.size(),
                                    copies.begin() + (s + 1) * calib_images.size());
    auto extra = plain_records(model, level, static_cast<int>(s + 1));
    records.insert(records.end(), extra.begin(), extra.end());
  }
  auto t = optimize_temperature(RecordSet(std::move(records)), {}, cfg);
  t.method = "perturb-ts";
  return t;
}

double CalibrationResult::temperature_for(std::span<const double> logits) const {
  return clusters ? ccdg_nn_assign(*clusters, logits) : temperature.value;
}

CalibrationResult calibrate(const RecordSet& records, Method method,
                            const CalibrationOptions& opts) {
  CalibrationResult out;
  const RecordSet originals = records.originals();
  switch (method) {
    case Method::Vanilla:
      out.temperature.value = 1.0;
      out.temperature.objective = nll_loss(originals, 1.0);
      break;
    case Method::Ts:
      out.temperature = optimize_temperature(originals, {}, opts.search);
      break;
    case Method::Cts:
    case Method::CtsStyle:
    case Method::CtsContent: {
      LossWeights w = opts.lambda.fixed;
      if (method == Method::CtsStyle) w.lambda_content = 0.0;
      if (method == Method::CtsContent) w.lambda_style = 0.0;
      if (opts.lambda.grid) {
        w = select_lambda(records, lambda_candidates(method, opts.lambda.grid_values),
                          opts.lambda.holdout_fraction, opts.seed, opts.search)
                .chosen;
      }
      out.temperature = optimize_temperature(records, w, opts.search);
      break;
    }
    case Method::Classwise:
      out.temperature = minimize_temperature(
          [&](double t) { return classwise_objective(records, t, opts.classwise_weight); },
          opts.search, "classwise");
      break;
    case Method::CcdgNn: {
      out.clusters = ccdg_nn_build(originals, opts.search);
      double sum = 0.0;
      for (const auto& e : out.clusters->entries) sum += e.temperature;
      out.temperature.value = sum / static_cast<double>(out.clusters->entries.size());
      break;
    }
    case Method::PerturbTs:
      throw ConfigError("perturb-ts needs the calibration images and the model");
  }
  out.temperature.method = method_name(method);
  return out;
}

nlohmann::ordered_json to_json(const CalibrationResult& r) {
  nlohmann::ordered_json j;
  j["method"] = r.temperature.method;
  j["value"] = r.temperature.value;
  j["objective"] = r.temperature.objective;
  j["lambda1"] = r.temperature.weights.lambda_style;
  j["lambda2"] = r.temperature.weights.lambda_content;
  j["trace_length"] = r.temperature.trace.size();
  if (r.clusters) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : r.clusters->entries) {
      nlohmann::ordered_json c;
      c["domain"] = e.domain;
      c["centroid"] = e.centroid;
      c["temperature"] = e.temperature;
      arr.push_back(c);
    }
    j["clusters"] = arr;
  }
  return j;
}

CalibrationResult calibration_from_json(const json& j) {
  CalibrationResult r;
  try {
    r.temperature.method = j.at("method").get<std::string>();
    r.temperature.value = j.at("value").get<double>();
    r.temperature.objective = j.value("objective", 0.0);
    r.temperature.weights = {j.value("lambda1", 0.0), j.value("lambda2", 0.0)};
    if (j.contains("clusters")) {
      ClusterTable t;
      for (const auto& c : j.at("clusters"))
        t.entries.push_back({c.at("domain").get<int>(), c.at("centroid").get<std::vector<double>>(),
                             c.at("temperature").get<double>()});
      r.clusters = std::move(t);
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed temperature record: ") + e.what());
  }
  if (!(r.temperature.value > 0.0)) throw InputError("temperature must be positive");
  return r;
}

}  // namespace cts
