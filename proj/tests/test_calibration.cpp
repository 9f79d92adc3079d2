#include <doctest.h>

#include <cmath>
#include <random>

#include "cts/calibration.hpp"
#include "cts/errors.hpp"
#include "cts/metrics.hpp"
#include "cts/numerics.hpp"

using namespace cts;

namespace {

LogitRecord rec(std::int64_t id, int label, std::vector<double> f, std::vector<double> fs,
                std::vector<double> fc, std::int64_t partner = -1, int domain = 0) {
  LogitRecord r;
  r.id = id;
  r.domain = domain;
  r.label = label;
  r.partner_id = partner < 0 ? id : partner;
  r.logits = std::move(f);
  r.style_shifted = std::move(fs);
  r.content_shifted = std::move(fc);
  return r;
}

// Labels drawn from softmax(f); stored logits are c * f, so the NLL-optimal
// temperature is c in the large-sample limit.
RecordSet scaled_set(std::uint64_t seed, int n, int k, double c) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 2.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<LogitRecord> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> f(k);
    for (double& v : f) v = nd(gen);
    auto p = softmax_t(f, 1.0);
    double x = u(gen), acc = 0.0;
    int label = k - 1;
    for (int j = 0; j < k; ++j) {
      acc += p[j];
      if (x < acc) {
        label = j;
        break;
      }
    }
    std::vector<double> g(k);
    for (int j = 0; j < k; ++j) g[j] = c * f[j];
    out.push_back(rec(i, label, g, g, g));
  }
  return RecordSet(std::move(out));
}

RecordSet random_set(std::mt19937_64& gen, int n, int k) {
  std::normal_distribution<double> nd(0.0, 3.0);
  std::vector<LogitRecord> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> f(k), fs(k), fc(k);
    for (int j = 0; j < k; ++j) f[j] = nd(gen), fs[j] = nd(gen), fc[j] = nd(gen);
    out.push_back(rec(i, i % k, f, fs, fc, 100000 + i));
  }
  return RecordSet(std::move(out));
}

}  // namespace

TEST_CASE("nll examples") {
  RecordSet one({rec(1, 0, {std::log(3.0), 0.0}, {0, 0}, {0, 0})});
  CHECK(nll_loss(one, 1.0) == doctest::Approx(-std::log(0.75)).epsilon(1e-14));
  RecordSet flat({rec(1, 2, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0})});
  CHECK(nll_loss(flat, 1.0) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  std::mt19937_64 gen(1);
  auto s = random_set(gen, 30, 4);
  std::vector<LogitRecord> doubled = s.records();
  for (auto& r : doubled)
    for (double& v : r.logits) v *= 2.0;
  RecordSet d(doubled);
  for (double t : {0.3, 1.0, 4.0}) CHECK(nll_loss(d, 2 * t) == doctest::Approx(nll_loss(s, t)).epsilon(1e-12));
  CHECK_THROWS_AS(nll_loss(s, 0.0), DomainError);
}

TEST_CASE("style and content KL terms") {
  RecordSet same({rec(1, 0, {1.0, -2.0, 0.5}, {1.0, -2.0, 0.5}, {1.0, -2.0, 0.5})});
  CHECK(style_loss(same, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(content_loss(same, 1.0) == doctest::Approx(0.0).epsilon(1e-15));

  // T -> infinity makes the scaled branch uniform: KL(u || q) = -log K - mean log q.
  std::vector<double> fs{2.0, 0.0, -1.0}, fc{0.0, 3.0, 0.0};
  RecordSet hot({rec(1, 0, {5.0, 1.0, 0.0}, fs, fc)});
  auto closed = [](const std::vector<double>& q) {
    auto lq = log_softmax_t(q, 1.0);
    double m = 0.0;
    for (double v : lq) m += v / 3.0;
    return -std::log(3.0) - m;
  };
  CHECK(std::abs(style_loss(hot, 1e6) - closed(fs)) <= 1e-5);
  CHECK(std::abs(content_loss(hot, 1e6) - closed(fc)) <= 1e-5);

  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_set(gen, 10, 3);
    REQUIRE(style_loss(s, 0.7) >= 0.0);
    REQUIRE(content_loss(s, 2.0) >= 0.0);
  }
}

TEST_CASE("total loss reduces to its parts") {
  std::mt19937_64 gen(3);
  auto s = random_set(gen, 40, 4);
  const double t = 1.3;
  CHECK(total_loss(s, t, {0, 0}) == doctest::Approx(nll_loss(s, t)).epsilon(1e-13));
  CHECK(total_loss(s, t, {1, 0}) == doctest::Approx(nll_loss(s, t) + style_loss(s, t)).epsilon(1e-13));
  CHECK(total_loss(s, t, {0, 1}) == doctest::Approx(nll_loss(s, t) + content_loss(s, t)).epsilon(1e-13));
  CHECK(total_loss(s, t, {0.5, 2}) ==
        doctest::Approx(nll_loss(s, t) + 0.5 * style_loss(s, t) + 2 * content_loss(s, t)).epsilon(1e-13));
}

TEST_CASE("losses are invariant to record order") {
  std::mt19937_64 gen(4);
  auto s = random_set(gen, 25, 4);
  auto v = s.records();
  std::reverse(v.begin(), v.end());
  RecordSet r(v);
  for (double t : {0.2, 1.0, 5.0}) {
    CHECK(std::abs(style_loss(s, t) - style_loss(r, t)) <= 1e-12);
    CHECK(std::abs(content_loss(s, t) - content_loss(r, t)) <= 1e-12);
    CHECK(std::abs(nll_loss(s, t) - nll_loss(r, t)) <= 1e-12);
  }
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> log_t(std::log(0.1), std::log(8.0));
  std::uniform_real_distribution<double> lam(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_set(gen, 15, 2 + trial % 4);
    const double t = std::exp(log_t(gen));
    const LossWeights w{lam(gen), lam(gen)};
    const double h = 1e-6 * t;
    const double fd = (total_loss(s, t + h, w) - total_loss(s, t - h, w)) / (2 * h);
    const double g = total_loss_grad(s, t, w);
    INFO("trial " << trial << " T=" << t << " analytic " << g << " fd " << fd);
    REQUIRE(std::abs(g - fd) <= 1e-5 * std::max(std::abs(fd), 1e-8) + 1e-9);
  }

  RecordSet sym({rec(1, 0, {1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0})});
  CHECK(total_loss_grad(sym, 0.7, {0, 0}) == 0.0);
}

TEST_CASE("temperature recovery") {
  for (double c : {0.5, 1.0, 3.0}) {
    auto s = scaled_set(42 + static_cast<std::uint64_t>(c * 10), 10000, 4, c);
    auto t = optimize_temperature(s, {});
    INFO("c=" << c << " T*=" << t.value);
    CHECK(std::abs(t.value - c) <= 0.05 * c);
    CHECK(t.objective == total_loss(s, t.value, {}));
    CHECK(nll_loss(s, t.value) <= nll_loss(s, 1.0));
    CHECK(std::abs(total_loss_grad(s, t.value, {})) <= 1e-4);
  }
}

TEST_CASE("optimizer returns the best point it evaluated") {
  std::mt19937_64 gen(6);
  auto s = random_set(gen, 50, 4);
  const LossWeights w{1.0, 0.5};
  SearchConfig cfg;
  auto t = optimize_temperature(s, w, cfg);
  CHECK(t.value >= cfg.t_min);
  CHECK(t.value <= cfg.t_max);
  CHECK(t.objective == total_loss(s, t.value, w));
  REQUIRE(t.trace.size() >= static_cast<std::size_t>(cfg.grid_points));
  for (auto [temp, loss] : t.trace) REQUIRE(t.objective <= loss);
}

TEST_CASE("minimize_temperature") {
  auto quad = [](double t) { return (t - 2.0) * (t - 2.0); };
  auto t = minimize_temperature(quad, {}, "test");
  CHECK(std::abs(t.value - 2.0) <= 1e-4);
  auto edge = minimize_temperature([](double t) { return t; }, {}, "test");
  CHECK(edge.value == 0.05);
  CHECK_THROWS_AS(minimize_temperature([](double) { return NAN; }, {}, "nan"), NumericError);
}

TEST_CASE("classwise objective") {
  RecordSet same({rec(1, 0, {2.0, 0.0}, {2.0, 0.0}, {2.0, 0.0}, 2),
                  rec(2, 0, {2.0, 0.0}, {2.0, 0.0}, {2.0, 0.0}, 1)});
  CHECK(classwise_objective(same, 1.3) == doctest::Approx(nll_loss(same, 1.3)).epsilon(1e-14));

  // Confidences 0.9 and 0.7 at T=1 differ by 0.2, squared 0.04.
  const double a = std::log(9.0), b = std::log(7.0 / 3.0);
  RecordSet pair({rec(1, 0, {a, 0.0}, {a, 0.0}, {a, 0.0}, 2), rec(2, 0, {b, 0.0}, {b, 0.0}, {b, 0.0}, 1)});
  CHECK(classwise_objective(pair, 1.0) - nll_loss(pair, 1.0) == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(classwise_objective(pair, 1.0, 0.0) == nll_loss(pair, 1.0));

  RecordSet lonely({rec(1, 0, {a, 0.0}, {a, 0.0}, {a, 0.0}, 7)});
  CHECK_THROWS_AS(classwise_objective(lonely, 1.0), InputError);
}

TEST_CASE("vanilla TS recovers T = 1 on already calibrated logits") {
  auto s = scaled_set(77, 10000, 4, 1.0);
  auto r = calibrate(s, Method::Ts, {});
  CHECK(std::abs(r.temperature.value - 1.0) <= 0.05);
  auto v = calibrate(s, Method::Vanilla, {});
  CHECK(v.temperature.value == 1.0);
}

TEST_CASE("lambda selection") {
  auto both = lambda_candidates(Method::Cts, {0, 0.25, 0.5, 1, 2});
  CHECK(both.size() == 24);
  for (auto& w : both) CHECK_FALSE((w.lambda_style == 0 && w.lambda_content == 0));
  auto style = lambda_candidates(Method::CtsStyle, {0, 0.25, 0.5, 1, 2});
  CHECK(style.size() == 4);
  for (auto& w : style) CHECK(w.lambda_content == 0.0);
  auto content = lambda_candidates(Method::CtsContent, {0, 0.25, 0.5, 1, 2});
  CHECK(content.size() == 4);
  for (auto& w : content) CHECK(w.lambda_style == 0.0);

  std::mt19937_64 gen(8);
  auto s = random_set(gen, 60, 3);
  auto a = select_lambda(s, both, 0.2, 5);
  auto b = select_lambda(s, both, 0.2, 5);
  CHECK(a.chosen == b.chosen);
  CHECK(a.candidates.size() == 24);
  double best = 1e9;
  for (auto& c : a.candidates) best = std::min(best, c.holdout_ece);
  for (auto& c : a.candidates)
    if (c.weights == a.chosen) CHECK(c.holdout_ece == best);

  CalibrationOptions fixed;
  fixed.lambda.grid = false;
  fixed.lambda.fixed = {0.5, 0.25};
  auto r = calibrate(s, Method::Cts, fixed);
  CHECK(r.temperature.weights == LossWeights{0.5, 0.25});
  CHECK(r.temperature.value == optimize_temperature(s, {0.5, 0.25}).value);
}

TEST_CASE("method names") {
  for (Method m : all_methods()) CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("bogus"), ConfigError);
  std::mt19937_64 gen(9);
  auto s = random_set(gen, 10, 3);
  CHECK_THROWS_AS(calibrate(s, Method::PerturbTs, {}), ConfigError);
}

TEST_CASE("ccdg-nn") {
  std::mt19937_64 gen(10);
  std::normal_distribution<double> nd(0.0, 2.0);
  std::vector<LogitRecord> rs;
  for (int i = 0; i < 90; ++i) {
    int d = i % 3;
    std::vector<double> f{nd(gen) + 3.0 * d, nd(gen), nd(gen) - d};
    rs.push_back(rec(i, i % 3, f, f, f, i, d));
  }
  RecordSet s(rs);
  auto table = ccdg_nn_build(s);
  REQUIRE(table.entries.size() == 3);
  for (auto& e : table.entries) {
    // Centroid equals an independent mean, bit for bit.
    std::vector<double> sum(3, 0.0);
    int n = 0;
    for (auto& r : rs)
      if (r.domain == e.domain) {
        for (int k = 0; k < 3; ++k) sum[k] += r.logits[k];
        ++n;
      }
    for (int k = 0; k < 3; ++k) CHECK(e.centroid[k] == sum[k] / n);

    auto sub = s.filter([&](const LogitRecord& r) { return r.domain == e.domain; });
    CHECK(e.temperature == optimize_temperature(sub, {}).value);
  }
  CHECK(ccdg_nn_assign(table, table.entries[1].centroid) == table.entries[1].temperature);

  ClusterTable tie;
  tie.entries = {{0, {0.0, 0.0}, 1.5}, {1, {2.0, 0.0}, 2.5}};
  std::vector<double> mid{1.0, 0.0};
  CHECK(ccdg_nn_assign(tie, mid) == 1.5);

  auto single = s.filter([](const LogitRecord& r) { return r.domain == 0; });
  auto r = calibrate(single, Method::CcdgNn, {});
  CHECK(r.temperature.value == calibrate(single, Method::Ts, {}).temperature.value);
}

TEST_CASE("perturbed copies") {
  auto imgs = generate(Rng(1), 2);
  auto none = perturbed_copies(imgs, {}, Rng(3));
  CHECK(none.empty());
  auto some = perturbed_copies(imgs, kDefaultSeverities, Rng(3));
  CHECK(some.size() == imgs.size() * 3);
  auto again = perturbed_copies(imgs, kDefaultSeverities, Rng(3));
  for (std::size_t i = 0; i < some.size(); ++i) REQUIRE(some[i].pixels == again[i].pixels);
  for (auto& im : some)
    for (double v : im.pixels.data()) REQUIRE((v >= 0.0 && v <= 1.0));
  CHECK_THROWS_AS(perturbed_copies(imgs, {-0.1}, Rng(3)), DomainError);

  Rng init(4);
  auto model = SmallCnn::initialized(4, init);
  auto plain = perturb_ts(imgs, model, {}, Rng(5));
  auto ts = optimize_temperature(RecordSet(plain_records(model, imgs)), {});
  CHECK(plain.value == ts.value);
}

TEST_CASE("calibration result json round trip") {
  std::mt19937_64 gen(11);
  auto s = random_set(gen, 30, 3);
  for (Method m : {Method::Ts, Method::CcdgNn}) {
    auto r = calibrate(s, m, {});
    auto back = calibration_from_json(to_json(r));
    CHECK(back.temperature.value == r.temperature.value);
    CHECK(back.temperature.method == r.temperature.method);
    CHECK(back.clusters.has_value() == r.clusters.has_value());
  }
}
