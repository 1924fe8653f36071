#include "pcnn/dataset.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pcnn {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finaliser over the combined value
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

ShapeJitter draw_jitter(std::uint64_t seed, std::size_t model_index) {
  std::mt19937_64 gen(derive_seed(seed, model_index));
  auto uniform = [&gen](double lo, double hi) {
    // 53 random bits -> [0, 1); avoids distribution implementation differences
    const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  };
  ShapeJitter j;
  j.scale = uniform(0.6, 1.0);
  j.aspect = uniform(0.7, 1.3);
  j.tilt_deg = uniform(0.0, 20.0);
  j.tilt_dir_deg = uniform(0.0, 360.0);
  return j;
}

MultiViewSample render_sample(ShapeKind kind, const ShapeJitter& jitter, std::size_t views, std::size_t resolution) {
  if (views < 3) throw std::invalid_argument("need at least 3 views, got " + std::to_string(views));
  MultiViewSample s;
  s.views = views;
  s.height = s.width = resolution;
  s.pixels.reserve(views * resolution * resolution);
  for (std::size_t z = 0; z < views; ++z) {
    const double azimuth = 2.0 * std::numbers::pi * static_cast<double>(z) / static_cast<double>(views);
    const auto img = render_silhouette(kind, jitter, azimuth, resolution);
    s.pixels.insert(s.pixels.end(), img.begin(), img.end());
  }
  return s;
}

std::vector<MultiViewSample> generate(const GenerateOptions& o) {
  if (o.classes.empty()) throw std::invalid_argument("generate: no classes given");
  if (o.views < 3) throw std::invalid_argument("generate: need at least 3 views");
  if (o.resolution < 16) throw std::invalid_argument("generate: resolution must be at least 16");
  std::vector<MultiViewSample> out;
  out.reserve(o.classes.size() * o.per_class);
  std::size_t index = 0;
  for (std::size_t c = 0; c < o.classes.size(); ++c)
    for (std::size_t i = 0; i < o.per_class; ++i, ++index) {
      MultiViewSample s = render_sample(o.classes[c], draw_jitter(o.seed, index), o.views, o.resolution);
      s.label = static_cast<std::uint32_t>(c);
      s.model_id = o.first_model_id + static_cast<std::uint32_t>(index);
      out.push_back(std::move(s));
    }
  return out;
}

std::vector<ShapeKind> parse_class_list(const std::string& csv) {
  std::vector<ShapeKind> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(parse_shape(item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw std::invalid_argument("empty class list");
  return out;
}

}  // namespace pcnn
