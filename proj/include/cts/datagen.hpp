#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <vector>

#include <json.hpp>

#include "cts/numerics.hpp"

namespace cts {

inline constexpr int kImageChannels = 3;
inline constexpr int kImageSize = 16;

// Per-domain style transform: pixel_c = gain_c * intensity + bias_c, where
// intensity is `background` off-pattern and 1 on-pattern.
struct DomainStyle {
  std::array<double, 3> gain;
  std::array<double, 3> bias;
  double background;
};

// Every tunable constant of the synthetic generator.
struct GeneratorConstants {
  int classes = 4;
  int base_thickness = 4;
  int position_jitter = 2;   // +/- px
  int thickness_jitter = 1;  // +/- px
  double pixel_noise_sd = 0.25;
  std::vector<DomainStyle> domains;

  int domain_count() const { return static_cast<int>(domains.size()); }
};

// Four domains; domain 3 (dark, low contrast) is furthest from the rest.
GeneratorConstants default_constants();

enum class Pattern { HorizontalBar = 0, VerticalBar = 1, Diagonal = 2, Block = 3 };

struct Jitter {
  int dy = 0;
  int dx = 0;
  int thickness = 4;
};

// 16x16 binary mask (row-major) for class `label` under `jitter`.
std::vector<std::uint8_t> content_mask(int label, const Jitter& jitter);

struct LabeledImage {
  DenseArray pixels;  // 3 x 16 x 16, values in [0,1]
  int label = 0;
  int domain = 0;
  std::int64_t id = 0;
};

// J*K*n images ordered by (domain, class, index); each (domain, class) cell
// draws from its own split of `rng`.
std::vector<LabeledImage> generate(const Rng& rng, int n_per_domain_class,
                                   const GeneratorConstants& constants = default_constants());

struct SplitSpec {
  std::set<int> train_domains;
  std::set<int> calib_domains;
  int target_domain = 3;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
};

// All source domains in, target left out, same domains for train/calib.
SplitSpec leave_one_out(int target, int domain_count, double train_fraction,
                        std::uint64_t seed);

struct DatasetSplit {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> calib;
  std::vector<LabeledImage> target;
};

// Identical train/calib domain sets split each domain by train_fraction;
// disjoint sets assign whole domains. Throws ConfigError otherwise or when a
// resulting split is empty.
DatasetSplit split(const std::vector<LabeledImage>& images, const SplitSpec& spec);

nlohmann::json to_json(const LabeledImage& img);
LabeledImage image_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GeneratorConstants& c);
GeneratorConstants constants_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SplitSpec& s);
SplitSpec split_spec_from_json(const nlohmann::json& j);

// Writes images.jsonl and manifest.json under `dir`.
void write_dataset(const std::filesystem::path& dir,
                   const std::vector<LabeledImage>& images,
                   const GeneratorConstants& constants, std::uint64_t seed,
                   int n_per_domain_class);
std::vector<LabeledImage> read_dataset(const std::filesystem::path& dir);

}  // namespace cts
