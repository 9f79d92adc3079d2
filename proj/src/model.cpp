#include "cts/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cts {

using nlohmann::json;

namespace {

constexpr int kArea1 = SmallCnn::kSize * SmallCnn::kSize;
constexpr int kArea2 = SmallCnn::kPooled * SmallCnn::kPooled;

// 3x3 convolution with padding 1.
void conv3x3(const double* in, int cin, int h, int w, const double* wt,
             const double* bias, int cout, int stride, double* out) {
  const int ho = (h - 1) / stride + 1;
  const int wo = (w - 1) / stride + 1;
  for (int o = 0; o < cout; ++o) {
    double* op = out + o * ho * wo;
    std::fill(op, op + ho * wo, bias[o]);
    for (int c = 0; c < cin; ++c) {
      const double* ip = in + c * h * w;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = wt[((o * cin + c) * 3 + ky) * 3 + kx];
          for (int y = 0; y < ho; ++y) {
            const int iy = y * stride + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int x = 0; x < wo; ++x) {
              const int ix = x * stride + kx - 1;
              if (ix < 0 || ix >= w) continue;
              op[y * wo + x] += wv * ip[iy * w + ix];
            }
          }
        }
      }
    }
  }
}

// Accumulates weight/bias gradients and, when din != nullptr, the input
// gradient of conv3x3.
void conv3x3_backward(const double* in, int cin, int h, int w, const double* wt,
                      int cout, int stride, const double* dout, double* dwt,
                      double* dbias, double* din) {
  const int ho = (h - 1) / stride + 1;
  const int wo = (w - 1) / stride + 1;
  for (int o = 0; o < cout; ++o) {
    const double* dp = dout + o * ho * wo;
    for (int i = 0; i < ho * wo; ++i) dbias[o] += dp[i];
    for (int c = 0; c < cin; ++c) {
      const double* ip = in + c * h * w;
      double* dip = din ? din + c * h * w : nullptr;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int wi = ((o * cin + c) * 3 + ky) * 3 + kx;
          const double wv = wt[wi];
          double acc = 0.0;
          for (int y = 0; y < ho; ++y) {
            const int iy = y * stride + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int x = 0; x < wo; ++x) {
              const int ix = x * stride + kx - 1;
              if (ix < 0 || ix >= w) continue;
              acc += dp[y * wo + x] * ip[iy * w + ix];
              if (dip) dip[iy * w + ix] += wv * dp[y * wo + x];
            }
          }
          dwt[wi] += acc;
        }
      }
    }
  }
}

// Activations of one sample, kept for backprop.
struct Trace {
  std::vector<double> a1, h1, a2, h2, pooled, logits;
};

void tail(const SmallCnn& m, const double* h1, Trace& t) {
  const int k = m.classes();
  t.a2.assign(SmallCnn::kConv2 * kArea2, 0.0);
  conv3x3(h1, SmallCnn::kConv1, SmallCnn::kSize, SmallCnn::kSize,
          m.group(SmallCnn::kConv2W).data(), m.group(SmallCnn::kConv2B).data(),
          SmallCnn::kConv2, 2, t.a2.data());
  t.h2.resize(t.a2.size());
  for (std::size_t i = 0; i < t.a2.size(); ++i) t.h2[i] = std::max(0.0, t.a2[i]);
  t.pooled.assign(SmallCnn::kConv2, 0.0);
  for (int c = 0; c < SmallCnn::kConv2; ++c) {
    double s = 0.0;
    for (int i = 0; i < kArea2; ++i) s += t.h2[c * kArea2 + i];
    t.pooled[c] = s / kArea2;
  }
  auto fw = m.group(SmallCnn::kFcW);
  auto fb = m.group(SmallCnn::kFcB);
  t.logits.assign(k, 0.0);
  for (int o = 0; o < k; ++o) {
    double s = fb[o];
    for (int c = 0; c < SmallCnn::kConv2; ++c) s += fw[o * SmallCnn::kConv2 + c] * t.pooled[c];
    t.logits[o] = s;
  }
}

void require_image(const DenseArray& image) {
  const std::vector<std::size_t> want{SmallCnn::kInChannels, SmallCnn::kSize, SmallCnn::kSize};
  if (image.shape() != want) throw InputError("image must be 3 x 16 x 16");
}

Trace full_forward(const SmallCnn& m, const DenseArray& image) {
  require_image(image);
  Trace t;
  t.a1.assign(SmallCnn::kConv1 * kArea1, 0.0);
  conv3x3(image.data().data(), SmallCnn::kInChannels, SmallCnn::kSize, SmallCnn::kSize,
          m.group(SmallCnn::kConv1W).data(), m.group(SmallCnn::kConv1B).data(),
          SmallCnn::kConv1, 1, t.a1.data());
  t.h1.resize(t.a1.size());
  for (std::size_t i = 0; i < t.a1.size(); ++i) t.h1[i] = std::max(0.0, t.a1[i]);
  tail(m, t.h1.data(), t);
  return t;
}

const char* tap_name(StyleTap t) { return t == StyleTap::PostRelu ? "post_relu" : "pre_relu"; }

}  // namespace

SmallCnn::SmallCnn(int classes) : classes_(classes) {
  if (classes < 2) throw InputError("SmallCnn needs >= 2 classes");
  std::size_t off = 0;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    std::size_t n = shape_volume(shape);
    groups_.push_back({std::move(name), std::move(shape), off, n});
    off += n;
  };
  const auto k = static_cast<std::size_t>(classes);
  add("conv1.weight", {kConv1, kInChannels, 3, 3});
  add("conv1.bias", {kConv1});
  add("conv2.weight", {kConv2, kConv1, 3, 3});
  add("conv2.bias", {kConv2});
  add("fc.weight", {k, kConv2});
  add("fc.bias", {k});
  params_.assign(off, 0.0);
}

SmallCnn SmallCnn::initialized(int classes, Rng& rng) {
  SmallCnn m(classes);
  for (std::size_t g : {kConv1W, kConv2W, kFcW}) {
    const auto& shape = m.groups_[g].shape;
    const double fan_in = static_cast<double>(shape_volume(shape) / shape[0]);
    const double bound = std::sqrt(6.0 / fan_in);
    for (double& w : m.group(g)) w = bound * (2.0 * rng.uniform() - 1.0);
  }
  return m;
}

ForwardResult forward(const SmallCnn& model, const DenseArray& image) {
  Trace t = full_forward(model, image);
  auto& tapped = model.style_tap() == StyleTap::PostRelu ? t.h1 : t.a1;
  return {FeatureMap(model.feature_shape(), std::move(tapped)), std::move(t.logits)};
}

std::vector<double> forward_from_feature(const SmallCnn& model, const FeatureMap& feature) {
  if (feature.shape() != model.feature_shape())
    throw InputError("feature shape does not match the style layer");
  Trace t;
  if (model.style_tap() == StyleTap::PreRelu) {
    std::vector<double> h1(feature.data().begin(), feature.data().end());
    for (double& v : h1) v = std::max(0.0, v);
    tail(model, h1.data(), t);
  } else {
    tail(model, feature.data().data(), t);
  }
  return std::move(t.logits);
}

std::string describe(const FeatureSubstitution& s) {
  struct V {
    std::string operator()(const NoSubstitution&) const { return "none"; }
    std::string operator()(const StyleSwapSub&) const { return "style_swap"; }
    std::string operator()(const ContentSwapSub&) const { return "content_swap"; }
    std::string operator()(const ContentNoiseSub& n) const {
      return "content_noise(" + std::to_string(n.variance) + ")";
    }
  };
  return std::visit(V{}, s);
}

FeatureMap substitute(const FeatureMap& feature, const FeatureSubstitution& sub, Rng* rng) {
  if (std::holds_alternative<NoSubstitution>(sub)) return feature;
  if (auto* s = std::get_if<StyleSwapSub>(&sub)) {
    if (s->donor.mu.size() != feature.dim(0)) throw InputError("donor style channel mismatch");
    return apply_style(feature, s->donor);
  }
  if (auto* c = std::get_if<ContentSwapSub>(&sub)) {
    if (c->donor.values.shape() != feature.shape()) throw InputError("donor content shape mismatch");
    return recompose(style_of(feature), c->donor);
  }
  const auto& n = std::get<ContentNoiseSub>(sub);
  if (!rng) throw InputError("content noise substitution needs an Rng");
  return content_noise(feature, n.variance, *rng);
}

Logits predict(const SmallCnn& model, const LabeledImage& image,
               const FeatureSubstitution& sub, Rng* rng) {
  Logits out;
  out.source_id = image.id;
  out.substitution = describe(sub);
  if (std::holds_alternative<NoSubstitution>(sub)) {
    out.values = forward(model, image.pixels).logits;
  } else {
    auto fr = forward(model, image.pixels);
    out.values = forward_from_feature(model, substitute(fr.feature, sub, rng));
  }
  return out;
}

std::vector<double> batch_gradient(const SmallCnn& model, std::span<const LabeledImage> batch,
                                   double* loss) {
  if (batch.empty()) throw InputError("empty batch");
  const int k = model.classes();
  std::vector<double> grad(model.params().size(), 0.0);
  auto gspan = [&](std::size_t g) {
    const auto& gr = model.groups()[g];
    return grad.data() + gr.offset;
  };
  double total = 0.0;
  std::vector<double> dlogits(k), dh2(SmallCnn::kConv2 * kArea2), dh1(SmallCnn::kConv1 * kArea1);

  for (const auto& sample : batch) {
    if (sample.label < 0 || sample.label >= k) throw InputError("label out of range");
    Trace t = full_forward(model, sample.pixels);
    auto logp = log_softmax_t(t.logits, 1.0);
    total -= logp[sample.label];
    for (int o = 0; o < k; ++o) dlogits[o] = std::exp(logp[o]) - (o == sample.label ? 1.0 : 0.0);

    // linear
    auto fw = model.group(SmallCnn::kFcW);
    double* dfw = gspan(SmallCnn::kFcW);
    double* dfb = gspan(SmallCnn::kFcB);
    std::vector<double> dpool(SmallCnn::kConv2, 0.0);
    for (int o = 0; o < k; ++o) {
      dfb[o] += dlogits[o];
      for (int c = 0; c < SmallCnn::kConv2; ++c) {
        dfw[o * SmallCnn::kConv2 + c] += dlogits[o] * t.pooled[c];
        dpool[c] += fw[o * SmallCnn::kConv2 + c] * dlogits[o];
      }
    }
    // pool + relu
    for (int c = 0; c < SmallCnn::kConv2; ++c)
      for (int i = 0; i < kArea2; ++i) {
        const int idx = c * kArea2 + i;
        dh2[idx] = t.a2[idx] > 0.0 ? dpool[c] / kArea2 : 0.0;
      }
    // conv2
    std::fill(dh1.begin(), dh1.end(), 0.0);
    conv3x3_backward(t.h1.data(), SmallCnn::kConv1, SmallCnn::kSize, SmallCnn::kSize,
                     model.group(SmallCnn::kConv2W).data(), SmallCnn::kConv2, 2, dh2.data(),
                     gspan(SmallCnn::kConv2W), gspan(SmallCnn::kConv2B), dh1.data());
    for (std::size_t i = 0; i < dh1.size(); ++i)
      if (!(t.a1[i] > 0.0)) dh1[i] = 0.0;
    // conv1
    conv3x3_backward(sample.pixels.data().data(), SmallCnn::kInChannels, SmallCnn::kSize,
                     SmallCnn::kSize, model.group(SmallCnn::kConv1W).data(), SmallCnn::kConv1,
                     1, dh1.data(), gspan(SmallCnn::kConv1W), gspan(SmallCnn::kConv1B),
                     nullptr);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= inv;
  if (loss) *loss = total * inv;
  return grad;
}

double batch_loss(const SmallCnn& model, std::span<const LabeledImage> batch) {
  if (batch.empty()) throw InputError("empty batch");
  double total = 0.0;
  for (const auto& s : batch) {
    auto logits = forward(model, s.pixels).logits;
    total -= log_softmax_t(logits, 1.0)[s.label];
  }
  return total / static_cast<double>(batch.size());
}

double train_accuracy(const SmallCnn& model, std::span<const LabeledImage> images) {
  if (images.empty()) throw InputError("empty image set");
  std::size_t correct = 0;
  for (const auto& s : images)
    if (static_cast<int>(argmax(forward(model, s.pixels).logits)) == s.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

TrainResult train(SmallCnn model, const std::vector<LabeledImage>& train_set,
                  const TrainHyperparams& hp, Rng& rng) {
  if (train_set.empty()) throw InputError("empty training set");
  {
    std::vector<int> labels;
    for (const auto& s : train_set) labels.push_back(s.label);
    std::sort(labels.begin(), labels.end());
    if (labels.front() == labels.back()) throw InputError("training set needs >= 2 classes");
  }
  if (hp.batch_size < 1 || hp.epochs < 0 || !(hp.learning_rate > 0.0))
    throw ConfigError("invalid training hyperparameters");

  model.set_training_seed(rng.seed());
  TrainResult result{model, {}};
  std::vector<std::size_t> order(train_set.size());
  std::vector<LabeledImage> batch;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t end = std::min(order.size(), start + hp.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      double loss = 0.0;
      auto grad = batch_gradient(result.model, batch, &loss);
      bool finite = std::isfinite(loss);
      for (double g : grad) finite = finite && std::isfinite(g);
      if (!finite)
        throw TrainingError("training diverged in epoch " + std::to_string(epoch), result.model);
      SmallCnn before = result.model;
      auto p = result.model.params();
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= hp.learning_rate * grad[i];
        finite = finite && std::isfinite(p[i]);
      }
      if (!finite)
        throw TrainingError("parameters overflowed in epoch " + std::to_string(epoch), before);
      epoch_loss += loss * static_cast<double>(end - start);
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

json to_json(const SmallCnn& model) {
  json layers = json::array();
  for (std::size_t g = 0; g < model.groups().size(); ++g) {
    const auto& gr = model.groups()[g];
    auto v = model.group(g);
    layers.push_back({{"name", gr.name},
                      {"shape", gr.shape},
                      {"values", std::vector<double>(v.begin(), v.end())}});
  }
  return json{{"architecture", "small-cnn-v1"},
              {"classes", model.classes()},
              {"style_tap", tap_name(model.style_tap())},
              {"training_seed", model.training_seed()},
              {"layers", layers}};
}

SmallCnn model_from_json(const json& j) {
  try {
    if (j.at("architecture").get<std::string>() != "small-cnn-v1")
      throw InputError("unsupported architecture tag");
    SmallCnn m(j.at("classes").get<int>());
    auto tap = j.value("style_tap", std::string("post_relu"));
    if (tap == "pre_relu") m.set_style_tap(StyleTap::PreRelu);
    else if (tap != "post_relu") throw InputError("unknown style_tap " + tap);
    m.set_training_seed(j.value("training_seed", std::uint64_t{0}));
    const auto& layers = j.at("layers");
    if (layers.size() != m.groups().size()) throw InputError("layer count mismatch");
    for (std::size_t g = 0; g < layers.size(); ++g) {
      const auto& l = layers[g];
      if (l.at("name").get<std::string>() != m.groups()[g].name ||
          l.at("shape").get<std::vector<std::size_t>>() != m.groups()[g].shape)
        throw InputError("layer " + m.groups()[g].name + " does not match the architecture");
      auto v = l.at("values").get<std::vector<double>>();
      if (v.size() != m.groups()[g].size) throw InputError("layer size mismatch");
      for (double x : v)
        if (!std::isfinite(x)) throw InputError("non-finite weight");
      std::copy(v.begin(), v.end(), m.group(g).begin());
    }
    return m;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed model document: ") + e.what());
  }
}

}  // namespace cts
