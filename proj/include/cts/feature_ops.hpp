#pragma once

#include <vector>

#include "cts/numerics.hpp"

namespace cts {

// Intermediate activation, shape C x H x W.
using FeatureMap = DenseArray;

inline constexpr double kStyleEps = 1e-5;

// Per-channel spatial statistics.
struct StyleStats {
  std::vector<double> mu;
  std::vector<double> sigma;  // sqrt(population var + eps^2)
};

// Style-normalized residual (z - mu) / sigma, same shape as the feature.
struct ContentMap {
  DenseArray values;
};

struct Decomposition {
  StyleStats style;
  ContentMap content;
};

// Throws DomainError when H*W < 2, InputError when the rank is not 3.
Decomposition decompose(const FeatureMap& z);

StyleStats style_of(const FeatureMap& z);

// sigma_c * content + mu_c per channel.
FeatureMap recompose(const StyleStats& style, const ContentMap& content);

// Content of z_i rendered in the style of z_j.
FeatureMap style_swap(const FeatureMap& z_i, const FeatureMap& z_j);

// Style of z_i kept, content replaced by z_j's.
FeatureMap content_swap(const FeatureMap& z_i, const FeatureMap& z_j);

// Replaces the style of z with `style` directly.
FeatureMap apply_style(const FeatureMap& z, const StyleStats& style);

// Adds N(0, variance) noise to the content of z, keeping its style.
FeatureMap content_noise(const FeatureMap& z, double variance, Rng& rng);

}  // namespace cts
