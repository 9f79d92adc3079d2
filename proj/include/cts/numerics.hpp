#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cts {

// Row-major dense array of finite doubles.
class DenseArray {
 public:
  DenseArray() = default;
  explicit DenseArray(std::vector<std::size_t> shape);  // zero-filled
  DenseArray(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Throws InputError if any element is NaN/Inf.
  void check_finite() const;

  bool operator==(const DenseArray&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_volume(std::span<const std::size_t> shape);

// Categorical distribution: entries in [0,1] summing to 1 within 1e-9.
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> probs);  // validates

  std::span<const double> probs() const { return probs_; }
  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t k) const { return probs_[k]; }

 private:
  struct Trusted {};
  ProbVector(Trusted, std::vector<double> probs) : probs_(std::move(probs)) {}
  friend ProbVector softmax_t(std::span<const double>, double);

  std::vector<double> probs_;
};

// Counter-based generator: output n is a bijective mix of (key, n), so a
// stream is fully determined by its seed and independent streams are cheap
// to derive with split().
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  double uniform();                         // [0, 1)
  std::uint64_t uniform_int(std::uint64_t n);  // [0, n), n > 0
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  double normal();                          // N(0, 1)

  // Independent child stream keyed by `stream`; does not advance *this.
  Rng split(std::uint64_t stream) const;

 private:
  Rng(std::uint64_t seed, std::uint64_t key) : seed_(seed), key_(key) {}

  std::uint64_t seed_ = 0;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = rng.uniform_int(static_cast<std::uint64_t>(i));
    std::swap(v[i - 1], v[j]);
  }
}

double log_sum_exp(std::span<const double> x);

// exp(f_k/T) / sum_j exp(f_j/T), max-subtracted.
ProbVector softmax_t(std::span<const double> logits, double temperature);

// log softmax_t, exact (no flooring).
std::vector<double> log_softmax_t(std::span<const double> logits,
                                  double temperature);

// Lowest index among maxima.
std::size_t argmax(std::span<const double> x);

inline constexpr double kKlFloor = 1e-12;

// sum_k p_k log(p_k / max(q_k, kKlFloor)), with 0 log 0 = 0.
double kl_divergence(const ProbVector& p, const ProbVector& q);
double kl_divergence(std::span<const double> p, std::span<const double> q);

DenseArray gaussian_noise(Rng& rng, std::vector<std::size_t> shape,
                          double variance);

}  // namespace cts
