#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace pcnn {

enum class ShapeKind { Sphere, Box, Cylinder, Pyramid, Torus };

/// Throws std::invalid_argument for names outside {sphere, box, cylinder, pyramid, torus}.
ShapeKind parse_shape(std::string_view name);
std::string_view shape_name(ShapeKind kind);

/// Per-model variation of an analytic solid. Sphere ignores aspect and tilt.
struct ShapeJitter {
  double scale = 0.8;         // [0.6, 1.0] in generated data
  double aspect = 1.0;        // vertical stretch, [0.7, 1.3]
  double tilt_deg = 0.0;      // axis tilt away from vertical, <= 20
  double tilt_dir_deg = 0.0;  // horizontal direction of the tilt axis
};

/// Orthographic silhouette of the solid after rotating it by `azimuth_rad`
/// about the vertical axis. Row-major res x res, 1 inside, 0 outside, with
/// pixel values equal to coverage over a 4x4 subsample grid.
std::vector<float> render_silhouette(ShapeKind kind, const ShapeJitter& jitter, double azimuth_rad, std::size_t res);

}  // namespace pcnn
