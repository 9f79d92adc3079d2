#include "cts/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cts/errors.hpp"
#include "cts/feature_ops.hpp"

namespace cts {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------- config

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  reject_unknown(j,
                 {"dataset", "splits", "train_fraction", "methods", "seeds", "lambda", "pairings",
                  "same_class_style_pairs", "classwise_weight", "training", "perturb_severities",
                  "search", "analysis", "output_dir", "threads"},
                 "config");
  ExperimentConfig c;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown(d, {"n_per_domain_class", "generator", "path"}, "dataset");
    c.dataset.n_per_domain_class = get_or(d, "n_per_domain_class", c.dataset.n_per_domain_class);
    if (d.contains("generator")) c.dataset.constants = constants_from_json(d.at("generator"));
    if (d.contains("path")) c.dataset.path = get_or<std::string>(d, "path", "");
  }
  if (j.contains("splits"))
    for (const auto& s : j.at("splits")) c.splits.push_back(split_spec_from_json(s));
  c.train_fraction = get_or(j, "train_fraction", c.train_fraction);
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : get_or<std::vector<std::string>>(j, "methods", {}))
      c.methods.push_back(parse_method(m));
  }
  c.seeds = get_or(j, "seeds", c.seeds);
  if (j.contains("lambda")) {
    const auto& l = j.at("lambda");
    reject_unknown(l, {"grid", "grid_values", "holdout_fraction", "lambda1", "lambda2"}, "lambda");
    c.lambda.grid = get_or(l, "grid", c.lambda.grid);
    c.lambda.grid_values = get_or(l, "grid_values", c.lambda.grid_values);
    c.lambda.holdout_fraction = get_or(l, "holdout_fraction", c.lambda.holdout_fraction);
    c.lambda.fixed.lambda_style = get_or(l, "lambda1", c.lambda.fixed.lambda_style);
    c.lambda.fixed.lambda_content = get_or(l, "lambda2", c.lambda.fixed.lambda_content);
  }
  c.pairings = get_or(j, "pairings", c.pairings);
  c.same_class_style_pairs = get_or(j, "same_class_style_pairs", c.same_class_style_pairs);
  c.classwise_weight = get_or(j, "classwise_weight", c.classwise_weight);
  if (j.contains("training")) {
    const auto& t = j.at("training");
    reject_unknown(t, {"learning_rate", "batch_size", "epochs"}, "training");
    c.training.learning_rate = get_or(t, "learning_rate", c.training.learning_rate);
    c.training.batch_size = get_or(t, "batch_size", c.training.batch_size);
    c.training.epochs = get_or(t, "epochs", c.training.epochs);
  }
  c.perturb_severities = get_or(j, "perturb_severities", c.perturb_severities);
  if (j.contains("search")) {
    const auto& s = j.at("search");
    reject_unknown(s, {"t_min", "t_max", "grid_points", "tolerance"}, "search");
    c.search.t_min = get_or(s, "t_min", c.search.t_min);
    c.search.t_max = get_or(s, "t_max", c.search.t_max);
    c.search.grid_points = get_or(s, "grid_points", c.search.grid_points);
    c.search.tolerance = get_or(s, "tolerance", c.search.tolerance);
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    reject_unknown(a, {"enabled", "noise_variances", "group_count", "extreme_fraction"}, "analysis");
    c.analysis.enabled = get_or(a, "enabled", c.analysis.enabled);
    c.analysis.noise_variances = get_or(a, "noise_variances", c.analysis.noise_variances);
    c.analysis.group_count = get_or(a, "group_count", c.analysis.group_count);
    c.analysis.extreme_fraction = get_or(a, "extreme_fraction", c.analysis.extreme_fraction);
  }
  c.output_dir = get_or(j, "output_dir", c.output_dir);
  c.threads = get_or(j, "threads", c.threads);

  if (c.seeds.empty()) throw ConfigError("at least one seed is required");
  if (c.methods.empty()) throw ConfigError("at least one method is required");
  if (c.pairings < 1) throw ConfigError("pairings must be >= 1");
  if (c.dataset.n_per_domain_class < 1) throw ConfigError("n_per_domain_class must be >= 1");
  if (c.analysis.enabled && c.analysis.noise_variances.size() < 2)
    throw ConfigError("content probe needs >= 2 noise levels");
  return c;
}

ojson to_json(const ExperimentConfig& c) {
  ojson j;
  ojson d;
  d["n_per_domain_class"] = c.dataset.n_per_domain_class;
  d["generator"] = ojson::parse(to_json(c.dataset.constants).dump());
  if (c.dataset.path) d["path"] = c.dataset.path->string();
  j["dataset"] = d;
  auto splits = ojson::array();
  for (const auto& s : resolved_splits(c)) splits.push_back(ojson::parse(to_json(s).dump()));
  j["splits"] = splits;
  j["train_fraction"] = c.train_fraction;
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(method_name(m));
  j["methods"] = methods;
  j["seeds"] = c.seeds;
  j["lambda"] = {{"grid", c.lambda.grid},
                 {"grid_values", c.lambda.grid_values},
                 {"holdout_fraction", c.lambda.holdout_fraction},
                 {"lambda1", c.lambda.fixed.lambda_style},
                 {"lambda2", c.lambda.fixed.lambda_content}};
  j["pairings"] = c.pairings;
  j["same_class_style_pairs"] = c.same_class_style_pairs;
  j["classwise_weight"] = c.classwise_weight;
  j["training"] = {{"learning_rate", c.training.learning_rate},
                   {"batch_size", c.training.batch_size},
                   {"epochs", c.training.epochs}};
  j["perturb_severities"] = c.perturb_severities;
  j["search"] = {{"t_min", c.search.t_min},
                 {"t_max", c.search.t_max},
                 {"grid_points", c.search.grid_points},
                 {"tolerance", c.search.tolerance}};
  j["analysis"] = {{"enabled", c.analysis.enabled},
                   {"noise_variances", c.analysis.noise_variances},
                   {"group_count", c.analysis.group_count},
                   {"extreme_fraction", c.analysis.extreme_fraction}};
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  return config_from_json(j);
}

std::vector<SplitSpec> resolved_splits(const ExperimentConfig& c) {
  if (!c.splits.empty()) return c.splits;
  std::vector<SplitSpec> out;
  for (int d = 0; d < c.dataset.constants.domain_count(); ++d)
    out.push_back(leave_one_out(d, c.dataset.constants.domain_count(), c.train_fraction, 0));
  return out;
}

// ---------------------------------------------------------------- cache

namespace {

// Uniform pick among `pool` members other than `self`, preferring a
// different domain.
std::optional<std::size_t> pick_partner(const std::vector<LabeledImage>& set,
                                        const std::vector<std::size_t>& pool, std::size_t self,
                                        Rng& rng) {
  std::vector<std::size_t> cross, same;
  for (std::size_t j : pool) {
    if (j == self) continue;
    (set[j].domain != set[self].domain ? cross : same).push_back(j);
  }
  const auto& use = cross.empty() ? same : cross;
  if (use.empty()) return std::nullopt;
  return use[rng.uniform_int(static_cast<std::uint64_t>(use.size()))];
}

}  // namespace

std::vector<LogitRecord> build_logit_cache(const SmallCnn& model,
                                           const std::vector<LabeledImage>& calib_set,
                                           std::uint64_t pairing_seed, const CacheOptions& opts,
                                           std::vector<std::string>* warnings) {
  if (calib_set.empty()) throw InputError("calibration set is empty");
  if (opts.pairings < 1) throw ConfigError("pairings must be >= 1");

  const std::size_t n = calib_set.size();
  std::vector<FeatureMap> features;
  std::vector<std::vector<double>> logits;
  features.reserve(n);
  for (const auto& img : calib_set) {
    auto fr = forward(model, img.pixels);
    features.push_back(std::move(fr.feature));
    logits.push_back(std::move(fr.logits));
  }
  std::map<int, std::vector<std::size_t>> by_class;
  std::vector<std::size_t> everyone(n);
  for (std::size_t i = 0; i < n; ++i) {
    by_class[calib_set[i].label].push_back(i);
    everyone[i] = i;
  }

  std::vector<LogitRecord> out;
  out.reserve(n * static_cast<std::size_t>(opts.pairings));
  const Rng root(pairing_seed);
  for (int p = 0; p < opts.pairings; ++p) {
    Rng rng = root.split(static_cast<std::uint64_t>(p));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& img = calib_set[i];
      auto partner = pick_partner(calib_set, by_class[img.label], i, rng);
      if (!partner && warnings && p == 0)
        warnings->push_back("sample " + std::to_string(img.id) +
                            " has no same-class partner; self-paired");
      const std::size_t j = partner.value_or(i);
      std::size_t style_donor = j;
      if (!opts.same_class_style_pairs)
        style_donor = pick_partner(calib_set, everyone, i, rng).value_or(i);

      LogitRecord r;
      r.id = img.id;
      r.domain = img.domain;
      r.label = img.label;
      r.pairing = p;
      r.logits = logits[i];
      r.partner_id = calib_set[j].id;
      r.style_shifted =
          forward_from_feature(model, style_swap(features[i], features[style_donor]));
      r.content_shifted = forward_from_feature(model, content_swap(features[i], features[j]));
      out.push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------- analysis

AnalysisBundle run_consistency_analysis(const SmallCnn& model,
                                        const std::vector<LabeledImage>& calib_set,
                                        const std::vector<LabeledImage>& target_set,
                                        const AnalysisConfig& cfg, const Rng& rng) {
  if (cfg.noise_variances.size() < 2)
    throw InputError("content probe needs >= 2 noise variances");
  if (calib_set.empty() || target_set.empty()) throw InputError("analysis needs calib and target sets");

  std::map<int, std::vector<StyleStats>> styles;
  for (const auto& img : calib_set)
    styles[img.domain].push_back(style_of(forward(model, img.pixels).feature));

  AnalysisBundle b;
  b.style_predictions_per_sample = 1 + static_cast<int>(styles.size());
  std::vector<ConsistencyScore> style_scores, content_scores;
  std::vector<Prediction> preds;
  Rng style_rng = rng.split(1);
  const Rng noise_root = rng.split(2);

  for (const auto& img : target_set) {
    auto fr = forward(model, img.pixels);
    Prediction pred = predict_at(fr.logits, img.label, 1.0);
    preds.push_back(pred);

    std::vector<std::vector<double>> style_preds{fr.logits};
    for (const auto& [domain, pool] : styles) {
      const auto& donor = pool[style_rng.uniform_int(static_cast<std::uint64_t>(pool.size()))];
      style_preds.push_back(forward_from_feature(model, apply_style(fr.feature, donor)));
    }
    std::vector<std::vector<double>> content_preds;
    Rng noise = noise_root.split(static_cast<std::uint64_t>(img.id));
    for (double v : cfg.noise_variances)
      content_preds.push_back(forward_from_feature(model, content_noise(fr.feature, v, noise)));

    style_scores.push_back({img.id, prediction_variance(style_preds)});
    content_scores.push_back({img.id, prediction_variance(content_preds)});
    b.rows.push_back({img.id, "style", style_scores.back().variance, pred.confidence, pred.correct});
    b.rows.push_back({img.id, "content", content_scores.back().variance, pred.confidence, pred.correct});
  }

  auto summarize = [&](const std::vector<ConsistencyScore>& scores) {
    ProbeSummary s;
    const int groups = std::min<int>(cfg.group_count, static_cast<int>(scores.size()));
    s.profile = variance_ece_profile(scores, preds, groups);
    auto ext = variance_extremes(scores, cfg.extreme_fraction);
    auto pick = [&](const std::vector<std::size_t>& idx) {
      std::vector<Prediction> sub;
      for (auto i : idx) sub.push_back(preds[i]);
      return reliability_table(sub);
    };
    s.high = pick(ext.high);
    s.low = pick(ext.low);
    return s;
  };
  b.style = summarize(style_scores);
  b.content = summarize(content_scores);
  return b;
}

std::string bins_csv(const BinTable& t) {
  std::ostringstream os;
  os << "bin_low,bin_high,count,confidence,accuracy\n";
  char buf[160];
  for (const auto& b : t.bins) {
    std::snprintf(buf, sizeof buf, "%.2f,%.2f,%zu,", b.low, b.high, b.count);
    os << buf;
    if (b.count > 0) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", *b.confidence, *b.accuracy);
      os << buf;
    } else {
      os << ",";
    }
    os << '\n';
  }
  return os.str();
}

void write_analysis(const AnalysisBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "consistency.csv");
    os << "id,probe,variance,confidence,correct\n";
    char buf[160];
    for (const auto& r : bundle.rows) {
      std::snprintf(buf, sizeof buf, "%lld,%s,%.17g,%.17g,%d\n", static_cast<long long>(r.id),
                    r.probe.c_str(), r.variance, r.confidence, r.correct ? 1 : 0);
      os << buf;
    }
  }
  auto profile = [&](const ProbeSummary& s, const std::string& name) {
    std::ofstream os(dir / (name + "_profile.csv"));
    os << "group,mean_variance,ece,count\n";
    char buf[160];
    for (std::size_t g = 0; g < s.profile.groups.size(); ++g) {
      const auto& gr = s.profile.groups[g];
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%zu\n", g, gr.mean_variance, gr.ece, gr.count);
      os << buf;
    }
    std::ofstream(dir / (name + "_reliability_high.csv")) << bins_csv(s.high);
    std::ofstream(dir / (name + "_reliability_low.csv")) << bins_csv(s.low);
  };
  profile(bundle.style, "style");
  profile(bundle.content, "content");
  ojson summary;
  auto sp = [](const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); };
  summary["style_spearman"] = sp(bundle.style.profile.spearman);
  summary["content_spearman"] = sp(bundle.content.profile.spearman);
  summary["style_predictions_per_sample"] = bundle.style_predictions_per_sample;
  std::ofstream(dir / "analysis.json") << summary.dump(2) << '\n';
}

// ---------------------------------------------------------------- evaluation

EvalResult evaluate(const RecordSet& target, const CalibrationResult& calibration) {
  std::vector<double> temps;
  temps.reserve(target.size());
  for (const auto& r : target.records()) temps.push_back(calibration.temperature_for(r.logits));
  EvalResult e;
  auto preds = predictions(target, temps);
  e.reliability = reliability_table(preds);
  e.ece = e.reliability.ece();
  e.nll = mean_nll(target, temps);
  e.accuracy = accuracy(target);
  double sum = 0.0;
  for (double t : temps) sum += t;
  e.t_mean = sum / static_cast<double>(temps.size());
  e.t_min = *std::min_element(temps.begin(), temps.end());
  e.t_max = *std::max_element(temps.begin(), temps.end());
  return e;
}

std::pair<double, double> mean_ci95(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return {mean, 1.96 * sd / std::sqrt(static_cast<double>(v.size()))};
}

std::vector<Aggregate> aggregate_rows(const std::vector<ReportRow>& rows,
                                      const std::vector<std::string>& methods) {
  std::set<int> targets;
  for (const auto& r : rows) targets.insert(r.target);
  std::vector<Aggregate> out;
  for (const auto& m : methods) {
    // per seed: (target -> row)
    std::map<std::uint64_t, std::map<int, const ReportRow*>> by_seed;
    for (int t : targets) {
      std::vector<double> ece, nll, acc;
      for (const auto& r : rows) {
        if (r.method != m || r.target != t || r.status != "ok") continue;
        ece.push_back(r.ece);
        nll.push_back(r.nll);
        acc.push_back(r.accuracy);
        by_seed[r.seed][t] = &r;
      }
      Aggregate a;
      a.target = t;
      a.method = m;
      a.runs = ece.size();
      std::tie(a.ece_mean, a.ece_half_width) = mean_ci95(ece);
      a.nll_mean = mean_ci95(nll).first;
      a.accuracy_mean = mean_ci95(acc).first;
      out.push_back(a);
    }
    std::vector<double> ece, nll, acc;
    for (const auto& [seed, per_target] : by_seed) {
      if (per_target.size() != targets.size()) continue;
      double e = 0.0, n = 0.0, c = 0.0;
      for (const auto& [t, row] : per_target) {
        e += row->ece;
        n += row->nll;
        c += row->accuracy;
      }
      const double k = static_cast<double>(per_target.size());
      ece.push_back(e / k);
      nll.push_back(n / k);
      acc.push_back(c / k);
    }
    Aggregate avg;
    avg.method = m;
    avg.runs = ece.size();
    std::tie(avg.ece_mean, avg.ece_half_width) = mean_ci95(ece);
    avg.nll_mean = mean_ci95(nll).first;
    avg.accuracy_mean = mean_ci95(acc).first;
    out.push_back(avg);
  }
  return out;
}

// ---------------------------------------------------------------- benchmark

namespace {

struct CellOutput {
  std::vector<ReportRow> rows;
  std::optional<CellAnalysis> analysis;
  std::vector<std::string> warnings;
};

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stage, std::uint64_t cell) {
  Rng r = Rng(seed).split(stage).split(cell);
  return r.next_u64();
}

CellOutput run_cell(const ExperimentConfig& cfg, const std::vector<LabeledImage>& images,
                    const SplitSpec& base_spec, std::size_t split_index, std::uint64_t seed) {
  CellOutput out;
  const int target = base_spec.target_domain;
  auto fail_all = [&](const std::string& why) {
    for (Method m : cfg.methods) {
      ReportRow r;
      r.target = target;
      r.method = method_name(m);
      r.seed = seed;
      r.status = why;
      out.rows.push_back(r);
    }
  };

  SplitSpec spec = base_spec;
  spec.seed = stream_seed(seed, 2, split_index) ^ base_spec.seed;
  DatasetSplit data;
  SmallCnn model;
  std::vector<LogitRecord> cache;
  try {
    data = split(images, spec);
    Rng init = Rng(stream_seed(seed, 3, split_index));
    Rng train_rng = Rng(stream_seed(seed, 4, split_index));
    model = train(SmallCnn::initialized(cfg.dataset.constants.classes, init), data.train,
                  cfg.training, train_rng)
                .model;
    cache = build_logit_cache(model, data.calib, stream_seed(seed, 5, split_index),
                              {cfg.pairings, cfg.same_class_style_pairs}, &out.warnings);
  } catch (const std::exception& e) {
    fail_all(std::string("error: ") + e.what());
    return out;
  }

  const RecordSet calib(cache);
  const RecordSet target_records(plain_records(model, data.target));

  CalibrationOptions opts;
  opts.lambda = cfg.lambda;
  opts.classwise_weight = cfg.classwise_weight;
  opts.seed = stream_seed(seed, 6, split_index);
  opts.search = cfg.search;

  for (Method m : cfg.methods) {
    ReportRow row;
    row.target = target;
    row.method = method_name(m);
    row.seed = seed;
    try {
      CalibrationResult res;
      if (m == Method::PerturbTs) {
        res.temperature = perturb_ts(data.calib, model, cfg.perturb_severities,
                                     Rng(stream_seed(seed, 7, split_index)), cfg.search);
      } else {
        res = calibrate(calib, m, opts);
      }
      auto ev = evaluate(target_records, res);
      row.ece = ev.ece;
      row.nll = ev.nll;
      row.accuracy = ev.accuracy;
      row.temperature = ev.t_mean;
      row.t_min = ev.t_min;
      row.t_max = ev.t_max;
      row.lambda1 = res.temperature.weights.lambda_style;
      row.lambda2 = res.temperature.weights.lambda_content;
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
    }
    out.rows.push_back(row);
  }

  if (cfg.analysis.enabled) {
    try {
      auto bundle = run_consistency_analysis(model, data.calib, data.target, cfg.analysis,
                                             Rng(stream_seed(seed, 8, split_index)));
      out.analysis = CellAnalysis{target, seed, bundle.style.profile.spearman,
                                  bundle.content.profile.spearman};
    } catch (const std::exception& e) {
      out.warnings.push_back("analysis failed for target " + std::to_string(target) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

CalibrationReport run_benchmark(const ExperimentConfig& config) {
  const auto splits = resolved_splits(config);
  std::map<std::uint64_t, std::vector<LabeledImage>> datasets;
  std::vector<LabeledImage> ingested;
  if (config.dataset.path) ingested = read_dataset(*config.dataset.path);

  struct Cell {
    std::size_t split_index;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t s = 0; s < splits.size(); ++s)
    for (auto seed : config.seeds) cells.push_back({s, seed});
  for (auto seed : config.seeds)
    if (!config.dataset.path)
      datasets[seed] = generate(Rng(seed).split(1), config.dataset.n_per_domain_class,
                                config.dataset.constants);

  std::vector<CellOutput> results(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const auto& c = cells[i];
      const auto& images = config.dataset.path ? ingested : datasets.at(c.seed);
      results[i] = run_cell(config, images, splits[c.split_index], c.split_index, c.seed);
    }
  };
  unsigned threads = config.threads > 0 ? static_cast<unsigned>(config.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(cells.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  CalibrationReport report;
  report.train_fraction = config.train_fraction;
  for (auto& r : results) {
    report.rows.insert(report.rows.end(), r.rows.begin(), r.rows.end());
    if (r.analysis) report.analysis.push_back(*r.analysis);
    report.warnings.insert(report.warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  std::vector<std::string> methods;
  for (Method m : config.methods) methods.push_back(method_name(m));
  report.aggregates = aggregate_rows(report.rows, methods);
  return report;
}

ojson to_json(const CalibrationReport& r) {
  ojson j;
  j["train_fraction"] = r.train_fraction;
  auto rows = ojson::array();
  for (const auto& x : r.rows) {
    ojson o;
    o["target"] = x.target;
    o["method"] = x.method;
    o["seed"] = x.seed;
    o["status"] = x.status;
    o["ece"] = x.ece;
    o["nll"] = x.nll;
    o["accuracy"] = x.accuracy;
    o["temperature"] = x.temperature;
    o["t_min"] = x.t_min;
    o["t_max"] = x.t_max;
    o["lambda1"] = x.lambda1;
    o["lambda2"] = x.lambda2;
    rows.push_back(o);
  }
  j["rows"] = rows;
  auto aggs = ojson::array();
  for (const auto& a : r.aggregates) {
    ojson o;
    o["target"] = a.target ? ojson(*a.target) : ojson("avg");
    o["method"] = a.method;
    o["runs"] = a.runs;
    o["ece_mean"] = a.ece_mean;
    o["ece_ci95"] = a.ece_half_width;
    o["nll_mean"] = a.nll_mean;
    o["accuracy_mean"] = a.accuracy_mean;
    aggs.push_back(o);
  }
  j["aggregates"] = aggs;
  auto an = ojson::array();
  for (const auto& a : r.analysis) {
    ojson o;
    o["target"] = a.target;
    o["seed"] = a.seed;
    o["style_spearman"] = a.style_spearman ? ojson(*a.style_spearman) : ojson(nullptr);
    o["content_spearman"] = a.content_spearman ? ojson(*a.content_spearman) : ojson(nullptr);
    an.push_back(o);
  }
  j["analysis"] = an;
  j["warnings"] = r.warnings;
  return j;
}

std::string format_table(const CalibrationReport& r) {
  std::vector<std::string> methods;
  std::set<int> targets;
  for (const auto& a : r.aggregates) {
    if (std::find(methods.begin(), methods.end(), a.method) == methods.end())
      methods.push_back(a.method);
    if (a.target) targets.insert(*a.target);
  }
  auto find = [&](const std::string& m, std::optional<int> t) -> const Aggregate* {
    for (const auto& a : r.aggregates)
      if (a.method == m && a.target == t) return &a;
    return nullptr;
  };
  std::ostringstream os;
  char buf[64];
  auto header = [&](const char* title) {
    std::snprintf(buf, sizeof buf, "%-12s", title);
    os << buf;
    for (int t : targets) {
      std::snprintf(buf, sizeof buf, " %8s", ("d" + std::to_string(t)).c_str());
      os << buf;
    }
    os << "   Avg\n";
  };
  header("ECE (%)");
  for (const auto& m : methods) {
    std::snprintf(buf, sizeof buf, "%-12s", m.c_str());
    os << buf;
    for (int t : targets) {
      const auto* a = find(m, t);
      std::snprintf(buf, sizeof buf, " %8.2f", a ? 100.0 * a->ece_mean : 0.0);
      os << buf;
    }
    if (const auto* a = find(m, std::nullopt)) {
      std::snprintf(buf, sizeof buf, "   %.2f +- %.2f", 100.0 * a->ece_mean, 100.0 * a->ece_half_width);
      os << buf;
    }
    os << '\n';
  }
  os << '\n';
  header("Acc (%)");
  if (!methods.empty()) {
    const auto& m = methods.front();
    std::snprintf(buf, sizeof buf, "%-12s", "all");
    os << buf;
    for (int t : targets) {
      const auto* a = find(m, t);
      std::snprintf(buf, sizeof buf, " %8.2f", a ? 100.0 * a->accuracy_mean : 0.0);
      os << buf;
    }
    if (const auto* a = find(m, std::nullopt)) {
      std::snprintf(buf, sizeof buf, "   %.2f", 100.0 * a->accuracy_mean);
      os << buf;
    }
    os << '\n';
  }
  std::snprintf(buf, sizeof buf, "\ntrain_fraction = %.3g\n", r.train_fraction);
  os << buf;
  return os.str();
}

CalibrationReport run_all(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  auto report = run_benchmark(config);
  std::filesystem::create_directories(out_dir);
  std::ofstream(out_dir / "report.json") << to_json(report).dump(2) << '\n';
  std::ofstream(out_dir / "report.txt") << format_table(report);
  std::ofstream(out_dir / "config.json") << to_json(config).dump(2) << '\n';
  return report;
}

}  // namespace cts
