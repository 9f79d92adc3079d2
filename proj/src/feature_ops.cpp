#include "cts/feature_ops.hpp"

#include <cmath>

#include "cts/errors.hpp"

namespace cts {

namespace {

void require_rank3(const DenseArray& z) {
  if (z.rank() != 3) throw InputError("feature map must be C x H x W");
}

void require_same_shape(const DenseArray& a, const DenseArray& b) {
  if (a.shape() != b.shape()) throw InputError("feature map shape mismatch");
}

}  // namespace

StyleStats style_of(const FeatureMap& z) {
  require_rank3(z);
  const std::size_t channels = z.dim(0);
  const std::size_t hw = z.dim(1) * z.dim(2);
  if (hw < 2) throw DomainError("style statistics need H*W >= 2");

  StyleStats s;
  s.mu.resize(channels);
  s.sigma.resize(channels);
  auto data = z.data();
  for (std::size_t c = 0; c < channels; ++c) {
    auto plane = data.subspan(c * hw, hw);
    double mean = 0.0;
    for (double v : plane) mean += v;
    mean /= static_cast<double>(hw);
    double var = 0.0;
    for (double v : plane) var += (v - mean) * (v - mean);
    var /= static_cast<double>(hw);
    s.mu[c] = mean;
    s.sigma[c] = std::sqrt(var + kStyleEps * kStyleEps);
  }
  return s;
}

Decomposition decompose(const FeatureMap& z) {
  Decomposition d{style_of(z), ContentMap{DenseArray(z.shape())}};
  const std::size_t hw = z.dim(1) * z.dim(2);
  auto in = z.data();
  auto out = d.content.values.data();
  for (std::size_t c = 0; c < z.dim(0); ++c)
    for (std::size_t i = c * hw; i < (c + 1) * hw; ++i)
      out[i] = (in[i] - d.style.mu[c]) / d.style.sigma[c];
  return d;
}

FeatureMap recompose(const StyleStats& style, const ContentMap& content) {
  const DenseArray& c = content.values;
  require_rank3(c);
  if (style.mu.size() != c.dim(0) || style.sigma.size() != c.dim(0))
    throw InputError("style channel count does not match content");
  FeatureMap z(c.shape());
  const std::size_t hw = c.dim(1) * c.dim(2);
  auto in = c.data();
  auto out = z.data();
  for (std::size_t ch = 0; ch < c.dim(0); ++ch)
    for (std::size_t i = ch * hw; i < (ch + 1) * hw; ++i)
      out[i] = style.sigma[ch] * in[i] + style.mu[ch];
  return z;
}

FeatureMap style_swap(const FeatureMap& z_i, const FeatureMap& z_j) {
  require_same_shape(z_i, z_j);
  return recompose(style_of(z_j), decompose(z_i).content);
}

FeatureMap content_swap(const FeatureMap& z_i, const FeatureMap& z_j) {
  require_same_shape(z_i, z_j);
  return recompose(style_of(z_i), decompose(z_j).content);
}

FeatureMap apply_style(const FeatureMap& z, const StyleStats& style) {
  return recompose(style, decompose(z).content);
}

FeatureMap content_noise(const FeatureMap& z, double variance, Rng& rng) {
  if (!(variance >= 0.0)) throw DomainError("noise variance must be >= 0");
  auto d = decompose(z);
  if (variance > 0.0) {
    auto noise = gaussian_noise(rng, z.shape(), variance);
    auto c = d.content.values.data();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += noise[i];
  }
  return recompose(d.style, d.content);
}

}  // namespace cts
