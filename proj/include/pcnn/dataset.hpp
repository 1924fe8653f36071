#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pcnn/render.hpp"

namespace pcnn {

/// One model as N ordered grayscale views; view z was taken at azimuth z * 360/N degrees.
struct MultiViewSample {
  std::uint32_t label = 0;
  std::uint32_t model_id = 0;
  std::size_t views = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // view-major, then row-major

  std::size_t view_size() const { return height * width; }
  const float* view(std::size_t z) const { return pixels.data() + z * view_size(); }
  bool operator==(const MultiViewSample&) const = default;
};

struct GenerateOptions {
  std::vector<ShapeKind> classes;
  std::size_t per_class = 10;
  std::size_t views = 6;
  std::size_t resolution = 32;
  std::uint64_t seed = 7;
  std::uint32_t first_model_id = 0;
};

/// Jitter for one model, drawn from a generator seeded by (seed, model index).
ShapeJitter draw_jitter(std::uint64_t seed, std::size_t model_index);

/// Deterministic synthetic multi-view set, class-major order. Labels are
/// positions in `classes`. Same options -> identical samples.
std::vector<MultiViewSample> generate(const GenerateOptions& options);

/// Renders all views of one solid.
MultiViewSample render_sample(ShapeKind kind, const ShapeJitter& jitter, std::size_t views, std::size_t resolution);

/// Parses a comma-separated class list such as "sphere,box,cylinder".
std::vector<ShapeKind> parse_class_list(const std::string& csv);

/// Seed for a named sub-stream (split, model) derived from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace pcnn
