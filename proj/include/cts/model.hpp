#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cts/datagen.hpp"
#include "cts/errors.hpp"
#include "cts/feature_ops.hpp"
#include "cts/numerics.hpp"

namespace cts {

// Which activation of conv1 is exposed as the style layer.
enum class StyleTap { PostRelu, PreRelu };

// conv1 (3->8, 3x3, s1, p1) -> ReLU -> [style layer] -> conv2 (8->16, 3x3,
// s2, p1) -> ReLU -> global average pool -> linear (16->K).
//
// Parameters live in one flat vector so SGD and finite-difference checks
// can treat them uniformly; the named accessors are views into it.
class SmallCnn {
 public:
  static constexpr int kInChannels = kImageChannels;
  static constexpr int kSize = kImageSize;
  static constexpr int kConv1 = 8;
  static constexpr int kConv2 = 16;
  static constexpr int kPooled = kSize / 2;

  explicit SmallCnn(int classes = 4);  // all parameters zero

  // Fan-in scaled uniform weights (bound sqrt(6/fan_in)), zero biases.
  static SmallCnn initialized(int classes, Rng& rng);

  int classes() const { return classes_; }
  StyleTap style_tap() const { return tap_; }
  void set_style_tap(StyleTap tap) { tap_ = tap; }
  std::uint64_t training_seed() const { return training_seed_; }
  void set_training_seed(std::uint64_t s) { training_seed_ = s; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  struct Group {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset;
    std::size_t size;
  };
  const std::vector<Group>& groups() const { return groups_; }

  std::span<const double> group(std::size_t g) const {
    return std::span<const double>(params_).subspan(groups_[g].offset, groups_[g].size);
  }
  std::span<double> group(std::size_t g) {
    return std::span<double>(params_).subspan(groups_[g].offset, groups_[g].size);
  }

  // Group indices.
  enum : std::size_t { kConv1W, kConv1B, kConv2W, kConv2B, kFcW, kFcB };

  std::vector<std::size_t> feature_shape() const {
    return {kConv1, kSize, kSize};
  }

  bool operator==(const SmallCnn& o) const {
    return classes_ == o.classes_ && tap_ == o.tap_ && params_ == o.params_;
  }

 private:
  int classes_;
  StyleTap tap_ = StyleTap::PostRelu;
  std::uint64_t training_seed_ = 0;
  std::vector<double> params_;
  std::vector<Group> groups_;
};

struct ForwardResult {
  FeatureMap feature;          // style-layer activation, 8 x 16 x 16
  std::vector<double> logits;  // length K
};

// Throws InputError on a shape mismatch.
ForwardResult forward(const SmallCnn& model, const DenseArray& image);

// Runs only the layers after the style layer.
std::vector<double> forward_from_feature(const SmallCnn& model, const FeatureMap& feature);

// Substitutions applied at the style layer.
struct NoSubstitution {};
struct StyleSwapSub {
  StyleStats donor;
};
struct ContentSwapSub {
  ContentMap donor;
};
struct ContentNoiseSub {
  double variance;
};
using FeatureSubstitution =
    std::variant<NoSubstitution, StyleSwapSub, ContentSwapSub, ContentNoiseSub>;

std::string describe(const FeatureSubstitution& s);

struct Logits {
  std::vector<double> values;
  std::int64_t source_id = 0;
  std::string substitution;
};

// `rng` is only consulted for ContentNoiseSub.
FeatureMap substitute(const FeatureMap& feature, const FeatureSubstitution& sub, Rng* rng);
Logits predict(const SmallCnn& model, const LabeledImage& image,
               const FeatureSubstitution& sub = NoSubstitution{}, Rng* rng = nullptr);

struct TrainHyperparams {
  double learning_rate = 0.05;
  int batch_size = 32;
  int epochs = 30;
};

struct TrainResult {
  SmallCnn model;
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

// Raised when the loss becomes non-finite; carries the last finite model.
struct TrainingError : NumericError {
  TrainingError(const std::string& what, SmallCnn last_finite)
      : NumericError(what), checkpoint(std::move(last_finite)) {}
  SmallCnn checkpoint;
};

// Mini-batch SGD on mean cross-entropy, no momentum or weight decay.
TrainResult train(SmallCnn model, const std::vector<LabeledImage>& train_set,
                  const TrainHyperparams& hp, Rng& rng);

// Mean cross-entropy over `batch` and its gradient w.r.t. params().
double batch_loss(const SmallCnn& model, std::span<const LabeledImage> batch);
std::vector<double> batch_gradient(const SmallCnn& model,
                                   std::span<const LabeledImage> batch,
                                   double* loss = nullptr);

double train_accuracy(const SmallCnn& model, std::span<const LabeledImage> images);

nlohmann::json to_json(const SmallCnn& model);
SmallCnn model_from_json(const nlohmann::json& j);

}  // namespace cts
