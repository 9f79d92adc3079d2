#include "cts/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>

#include "cts/errors.hpp"

namespace cts {

using nlohmann::json;

GeneratorConstants default_constants() {
  GeneratorConstants c;
  c.pixel_noise_sd = 0.25;
  // Domains 0-2 share a similar contrast and differ in colour cast; domain 3
  // is darker and lower-contrast, so it sits furthest from the others.
  c.domains = {
      {{0.40, 0.45, 0.45}, {0.12, 0.45, 0.45}, 0.20},
      {{0.45, 0.40, 0.50}, {0.50, 0.05, 0.05}, 0.15},
      {{0.45, 0.50, 0.40}, {0.35, 0.30, 0.40}, 0.15},
      {{0.40, 0.35, 0.35}, {0.05, 0.08, 0.05}, 0.10},
  };
  return c;
}

std::vector<std::uint8_t> content_mask(int label, const Jitter& j) {
  constexpr int n = kImageSize;
  std::vector<std::uint8_t> m(n * n, 0);
  const int t = j.thickness;
  auto set = [&](int y, int x) {
    if (y >= 0 && y < n && x >= 0 && x < n) m[y * n + x] = 1;
  };
  switch (static_cast<Pattern>(label)) {
    case Pattern::HorizontalBar: {
      int r0 = n / 2 - t / 2 + j.dy;
      for (int y = r0; y < r0 + t; ++y)
        for (int x = 0; x < n; ++x) set(y, x);
      break;
    }
    case Pattern::VerticalBar: {
      int c0 = n / 2 - t / 2 + j.dx;
      for (int y = 0; y < n; ++y)
        for (int x = c0; x < c0 + t; ++x) set(y, x);
      break;
    }
    case Pattern::Diagonal:
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (2 * std::abs(x - y - j.dx) < t) set(y, x);
      break;
    case Pattern::Block: {
      int side = t + 3;
      int top = n / 2 - side / 2 + j.dy;
      int left = n / 2 - side / 2 + j.dx;
      for (int y = top; y < top + side; ++y)
        for (int x = left; x < left + side; ++x) set(y, x);
      break;
    }
    default:
      throw InputError("unknown class pattern " + std::to_string(label));
  }
  return m;
}

std::vector<LabeledImage> generate(const Rng& rng, int n_per_domain_class,
                                   const GeneratorConstants& constants) {
  if (n_per_domain_class < 1) throw ConfigError("n_per_domain_class must be >= 1");
  if (constants.classes < 2 || constants.classes > 4)
    throw ConfigError("generator supports 2..4 classes");
  if (constants.domains.empty()) throw ConfigError("generator needs >= 1 domain");

  const int domains = constants.domain_count();
  const int classes = constants.classes;
  constexpr int hw = kImageSize * kImageSize;
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(domains) * classes * n_per_domain_class);

  for (int d = 0; d < domains; ++d) {
    const DomainStyle& style = constants.domains[d];
    for (int k = 0; k < classes; ++k) {
      Rng cell = rng.split(static_cast<std::uint64_t>(d * classes + k));
      for (int i = 0; i < n_per_domain_class; ++i) {
        Jitter j;
        j.dy = static_cast<int>(cell.uniform_int(-constants.position_jitter, constants.position_jitter));
        j.dx = static_cast<int>(cell.uniform_int(-constants.position_jitter, constants.position_jitter));
        j.thickness = constants.base_thickness +
                      static_cast<int>(cell.uniform_int(-constants.thickness_jitter,
                                                        constants.thickness_jitter));
        auto mask = content_mask(k, j);

        DenseArray px({kImageChannels, kImageSize, kImageSize});
        auto data = px.data();
        for (int c = 0; c < kImageChannels; ++c) {
          for (int p = 0; p < hw; ++p) {
            double intensity = mask[p] ? 1.0 : style.background;
            double v = style.gain[c] * intensity + style.bias[c] +
                       constants.pixel_noise_sd * cell.normal();
            data[c * hw + p] = std::clamp(v, 0.0, 1.0);
          }
        }
        out.push_back({std::move(px), k, d,
                       static_cast<std::int64_t>((d * classes + k)) * n_per_domain_class + i});
      }
    }
  }
  return out;
}

SplitSpec leave_one_out(int target, int domain_count, double train_fraction,
                        std::uint64_t seed) {
  SplitSpec s;
  for (int d = 0; d < domain_count; ++d) {
    if (d == target) continue;
    s.train_domains.insert(d);
    s.calib_domains.insert(d);
  }
  s.target_domain = target;
  s.train_fraction = train_fraction;
  s.seed = seed;
  return s;
}

DatasetSplit split(const std::vector<LabeledImage>& images, const SplitSpec& spec) {
  if (spec.train_domains.count(spec.target_domain) || spec.calib_domains.count(spec.target_domain))
    throw ConfigError("target domain must not be a source domain");
  if (spec.train_domains.empty() || spec.calib_domains.empty())
    throw ConfigError("train and calibration domain sets must be non-empty");

  const bool shared = spec.train_domains == spec.calib_domains;
  if (!shared) {
    for (int d : spec.train_domains)
      if (spec.calib_domains.count(d))
        throw ConfigError("train/calib domain sets must be identical or disjoint");
  } else if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0,1)");
  }

  std::map<int, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < images.size(); ++i) by_domain[images[i].domain].push_back(i);
  auto require = [&](int d) {
    if (!by_domain.count(d)) throw ConfigError("domain " + std::to_string(d) + " has no images");
  };
  require(spec.target_domain);
  for (int d : spec.train_domains) require(d);
  for (int d : spec.calib_domains) require(d);

  DatasetSplit out;
  for (std::size_t i : by_domain[spec.target_domain]) out.target.push_back(images[i]);

  Rng rng(spec.seed);
  for (const auto& [d, idx] : by_domain) {
    if (shared && spec.train_domains.count(d)) {
      auto order = idx;
      Rng drng = rng.split(static_cast<std::uint64_t>(d));
      shuffle(order, drng);
      auto n_train = static_cast<std::size_t>(
          std::llround(spec.train_fraction * static_cast<double>(order.size())));
      for (std::size_t r = 0; r < order.size(); ++r)
        (r < n_train ? out.train : out.calib).push_back(images[order[r]]);
    } else if (!shared && spec.train_domains.count(d)) {
      for (std::size_t i : idx) out.train.push_back(images[i]);
    } else if (!shared && spec.calib_domains.count(d)) {
      for (std::size_t i : idx) out.calib.push_back(images[i]);
    }
  }
  if (out.train.empty() || out.calib.empty() || out.target.empty())
    throw ConfigError("split produced an empty set");
  return out;
}

json to_json(const LabeledImage& img) {
  auto px = img.pixels.data();
  return json{{"id", img.id},
              {"domain", img.domain},
              {"label", img.label},
              {"pixels", std::vector<double>(px.begin(), px.end())}};
}

LabeledImage image_from_json(const json& j) {
  LabeledImage img;
  try {
    img.id = j.at("id").get<std::int64_t>();
    img.domain = j.at("domain").get<int>();
    img.label = j.at("label").get<int>();
    auto px = j.at("pixels").get<std::vector<double>>();
    img.pixels = DenseArray({kImageChannels, kImageSize, kImageSize}, std::move(px));
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed image record: ") + e.what());
  }
  return img;
}

json to_json(const GeneratorConstants& c) {
  json doms = json::array();
  for (const auto& d : c.domains)
    doms.push_back({{"gain", d.gain}, {"bias", d.bias}, {"background", d.background}});
  return json{{"classes", c.classes},
              {"base_thickness", c.base_thickness},
              {"position_jitter", c.position_jitter},
              {"thickness_jitter", c.thickness_jitter},
              {"pixel_noise_sd", c.pixel_noise_sd},
              {"domains", doms}};
}

GeneratorConstants constants_from_json(const json& j) {
  GeneratorConstants c = default_constants();
  try {
    c.classes = j.value("classes", c.classes);
    c.base_thickness = j.value("base_thickness", c.base_thickness);
    c.position_jitter = j.value("position_jitter", c.position_jitter);
    c.thickness_jitter = j.value("thickness_jitter", c.thickness_jitter);
    c.pixel_noise_sd = j.value("pixel_noise_sd", c.pixel_noise_sd);
    if (j.contains("domains")) {
      c.domains.clear();
      for (const auto& d : j.at("domains"))
        c.domains.push_back({d.at("gain").get<std::array<double, 3>>(),
                             d.at("bias").get<std::array<double, 3>>(),
                             d.at("background").get<double>()});
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad generator constants: ") + e.what());
  }
  return c;
}

json to_json(const SplitSpec& s) {
  return json{{"train_domains", s.train_domains},
              {"calib_domains", s.calib_domains},
              {"target_domain", s.target_domain},
              {"train_fraction", s.train_fraction},
              {"seed", s.seed}};
}

SplitSpec split_spec_from_json(const json& j) {
  SplitSpec s;
  try {
    s.train_domains = j.at("train_domains").get<std::set<int>>();
    s.calib_domains = j.at("calib_domains").get<std::set<int>>();
    s.target_domain = j.at("target_domain").get<int>();
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad split spec: ") + e.what());
  }
  return s;
}

void write_dataset(const std::filesystem::path& dir,
                   const std::vector<LabeledImage>& images,
                   const GeneratorConstants& constants, std::uint64_t seed,
                   int n_per_domain_class) {
  std::filesystem::create_directories(dir);
  std::ofstream lines(dir / "images.jsonl");
  for (const auto& img : images) lines << to_json(img).dump() << '\n';
  std::ofstream manifest(dir / "manifest.json");
  manifest << json{{"generator", to_json(constants)},
                   {"seed", seed},
                   {"n_per_domain_class", n_per_domain_class},
                   {"count", images.size()}}
                  .dump(2)
           << '\n';
  if (!lines || !manifest) throw ConfigError("failed to write dataset to " + dir.string());
}

std::vector<LabeledImage> read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "images.jsonl");
  if (!in) throw ConfigError("cannot open " + (dir / "images.jsonl").string());
  std::vector<LabeledImage> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw InputError("images.jsonl line " + std::to_string(lineno) + " is not JSON");
    out.push_back(image_from_json(j));
  }
  return out;
}

}  // namespace cts
