#include "cts/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "cts/errors.hpp"

namespace cts {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void check_logits(std::span<const double> logits) {
  if (logits.size() < 2) throw InputError("softmax needs at least 2 logits");
  for (double v : logits)
    if (!std::isfinite(v)) throw InputError("non-finite logit");
}

}  // namespace

std::size_t shape_volume(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

DenseArray::DenseArray(std::vector<std::size_t> shape)
    : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw InputError("DenseArray dimensions must be positive");
  data_.assign(shape_volume(shape_), 0.0);
}

DenseArray::DenseArray(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw InputError("DenseArray dimensions must be positive");
  if (shape_volume(shape_) != data_.size())
    throw InputError("DenseArray shape/data size mismatch");
  check_finite();
}

void DenseArray::check_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) throw InputError("DenseArray holds a non-finite value");
}

ProbVector::ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) throw InputError("ProbVector needs K >= 2");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0 && p <= 1.0)) throw InputError("probability outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InputError("probabilities do not sum to 1");
}

Rng::Rng(std::uint64_t seed) : seed_(seed), key_(mix64(seed + kGolden)) {}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw DomainError("uniform_int range is empty");
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw DomainError("uniform_int: hi < lo");
  auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(uniform_int(span));
}

double Rng::normal() {
  // Box-Muller; u1 in (0,1] so log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(seed_, mix64(key_ ^ mix64(stream * kGolden + 0xD1B54A32D192ED03ULL)));
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) throw InputError("log_sum_exp of empty vector");
  double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

ProbVector softmax_t(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  check_logits(logits);
  double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp((logits[k] - m) / temperature);
    s += p[k];
  }
  for (double& v : p) v /= s;
  return ProbVector(ProbVector::Trusted{}, std::move(p));
}

std::vector<double> log_softmax_t(std::span<const double> logits,
                                  double temperature) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  check_logits(logits);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] / temperature;
  double lse = log_sum_exp(out);
  for (double& v : out) v -= lse;
  return out;
}

std::size_t argmax(std::span<const double> x) {
  if (x.empty()) throw InputError("argmax of empty vector");
  return static_cast<std::size_t>(std::max_element(x.begin(), x.end()) - x.begin());
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("kl_divergence length mismatch");
  double d = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    d += p[k] * (std::log(p[k]) - std::log(std::max(q[k], kKlFloor)));
  }
  // Rounding can leave tiny negatives when p == q.
  return std::max(d, 0.0);
}

double kl_divergence(const ProbVector& p, const ProbVector& q) {
  return kl_divergence(p.probs(), q.probs());
}

DenseArray gaussian_noise(Rng& rng, std::vector<std::size_t> shape,
                          double variance) {
  if (!(variance >= 0.0)) throw DomainError("noise variance must be >= 0");
  DenseArray out(std::move(shape));
  if (variance == 0.0) return out;
  double sd = std::sqrt(variance);
  for (auto& v : out.data()) v = sd * rng.normal();
  return out;
}

}  // namespace cts
