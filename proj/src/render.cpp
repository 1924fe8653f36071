#include "pcnn/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pcnn {
namespace {

constexpr double kExtent = 1.2;     // image spans [-kExtent, kExtent] in both axes
constexpr std::size_t kSub = 4;     // subsamples per pixel side
constexpr std::size_t kRing = 256;  // samples on curved outlines

using Vec3 = std::array<double, 3>;
struct Pt {
  double u, v;
};
struct Interval {
  double lo, hi;
};

struct Pose {
  // world = Ry(azimuth) * Rtilt * object
  std::array<double, 9> m{};

  Pose(const ShapeJitter& j, double azimuth) {
    const double pi = std::numbers::pi;
    const double t = j.tilt_deg * pi / 180.0, d = j.tilt_dir_deg * pi / 180.0;
    // Rodrigues rotation about the horizontal axis (cos d, 0, sin d).
    const double kx = std::cos(d), kz = std::sin(d);
    const double c = std::cos(t), s = std::sin(t), oc = 1.0 - c;
    const std::array<double, 9> tilt{c + kx * kx * oc, -kz * s,  kx * kz * oc,
                                     kz * s,           c,        -kx * s,
                                     kx * kz * oc,     kx * s,   c + kz * kz * oc};
    const double ca = std::cos(azimuth), sa = std::sin(azimuth);
    const std::array<double, 9> yaw{ca, 0, sa, 0, 1, 0, -sa, 0, ca};
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) acc += yaw[r * 3 + k] * tilt[k * 3 + col];
        m[r * 3 + col] = acc;
      }
  }

  // Orthographic projection drops the depth axis.
  Pt project(const Vec3& p) const {
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2], m[3] * p[0] + m[4] * p[1] + m[5] * p[2]};
  }
};

double cross(const Pt& o, const Pt& a, const Pt& b) { return (a.u - o.u) * (b.v - o.v) - (a.v - o.v) * (b.u - o.u); }

// Andrew's monotone chain; counter-clockwise, no repeated endpoint.
std::vector<Pt> convex_hull(std::vector<Pt> pts) {
  std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) { return a.u < b.u || (a.u == b.u && a.v < b.v); });
  if (pts.size() < 3) return pts;
  std::vector<Pt> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Pt& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Horizontal cross-section of a convex polygon at height v.
void convex_row(const std::vector<Pt>& hull, double v, std::vector<Interval>& out) {
  double lo = INFINITY, hi = -INFINITY;
  const std::size_t n = hull.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Pt& a = hull[i];
    const Pt& b = hull[(i + 1) % n];
    if ((v < a.v && v < b.v) || (v > a.v && v > b.v)) continue;
    if (a.v == b.v) {
      lo = std::min({lo, a.u, b.u});
      hi = std::max({hi, a.u, b.u});
      continue;
    }
    const double u = a.u + (v - a.v) * (b.u - a.u) / (b.v - a.v);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  if (lo <= hi) out.push_back({lo, hi});
}

void disk_row(const Pt& c, double r, double v, std::vector<Interval>& out) {
  const double dv = v - c.v;
  const double h2 = r * r - dv * dv;
  if (h2 < 0) return;
  const double h = std::sqrt(h2);
  out.push_back({c.u - h, c.u + h});
}

// Outline of the silhouette as something that yields covered u-intervals per row.
struct Silhouette {
  enum class Kind { Disk, Convex, DiskUnion } kind;
  std::vector<Pt> points;  // disk centre / hull / union centres
  double radius = 0.0;

  void row(double v, std::vector<Interval>& out) const {
    out.clear();
    switch (kind) {
      case Kind::Disk:
        disk_row(points[0], radius, v, out);
        break;
      case Kind::Convex:
        convex_row(points, v, out);
        break;
      case Kind::DiskUnion:
        for (const Pt& c : points) disk_row(c, radius, v, out);
        break;
    }
  }
};

Silhouette build(ShapeKind kind, const ShapeJitter& j, double azimuth) {
  const Pose pose(j, azimuth);
  const double s = j.scale, a = j.aspect;
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<Pt> pts;
  switch (kind) {
    case ShapeKind::Sphere:
      return {Silhouette::Kind::Disk, {Pt{0.0, 0.0}}, 0.8 * s};
    case ShapeKind::Box: {
      const double hx = 0.7 * s, hy = 0.3 * s * a, hz = 0.45 * s;  // a flat slab
      for (int c = 0; c < 8; ++c)
        pts.push_back(pose.project({(c & 1) ? hx : -hx, (c & 2) ? hy : -hy, (c & 4) ? hz : -hz}));
      break;
    }
    case ShapeKind::Pyramid: {
      const double hb = 0.6 * s, hy = 0.6 * s * a;
      for (int c = 0; c < 4; ++c) pts.push_back(pose.project({(c & 1) ? hb : -hb, -hy, (c & 2) ? hb : -hb}));
      pts.push_back(pose.project({0.0, hy, 0.0}));
      break;
    }
    case ShapeKind::Cylinder: {
      const double r = 0.5 * s, hy = 0.6 * s * a;
      for (std::size_t i = 0; i < kRing; ++i) {
        const double t = two_pi * static_cast<double>(i) / kRing;
        pts.push_back(pose.project({r * std::cos(t), -hy, r * std::sin(t)}));
        pts.push_back(pose.project({r * std::cos(t), hy, r * std::sin(t)}));
      }
      break;
    }
    case ShapeKind::Torus: {
      // A torus is the union of tube-radius balls centred on its core ring, so
      // its silhouette is the union of the projected disks.
      const double ring = 0.65 * s;
      Silhouette sil{Silhouette::Kind::DiskUnion, {}, 0.25 * s};
      for (std::size_t i = 0; i < kRing; ++i) {
        const double t = two_pi * static_cast<double>(i) / kRing;
        sil.points.push_back(pose.project({ring * std::cos(t), 0.0, ring * std::sin(t)}));
      }
      return sil;
    }
  }
  return {Silhouette::Kind::Convex, convex_hull(std::move(pts)), 0.0};
}

// Coordinates of the 1-D subsample grid are exactly antisymmetric about the centre.
double sample_coord(std::size_t index, std::size_t count) {
  return static_cast<double>(2 * static_cast<long>(index) + 1 - static_cast<long>(count)) /
         static_cast<double>(count) * kExtent;
}

}  // namespace

ShapeKind parse_shape(std::string_view name) {
  if (name == "sphere") return ShapeKind::Sphere;
  if (name == "box") return ShapeKind::Box;
  if (name == "cylinder") return ShapeKind::Cylinder;
  if (name == "pyramid") return ShapeKind::Pyramid;
  if (name == "torus") return ShapeKind::Torus;
  throw std::invalid_argument("unknown shape class '" + std::string(name) + "'");
}

std::string_view shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Sphere:
      return "sphere";
    case ShapeKind::Box:
      return "box";
    case ShapeKind::Cylinder:
      return "cylinder";
    case ShapeKind::Pyramid:
      return "pyramid";
    case ShapeKind::Torus:
      return "torus";
  }
  return "?";
}

std::vector<float> render_silhouette(ShapeKind kind, const ShapeJitter& jitter, double azimuth_rad, std::size_t res) {
  if (res == 0) throw std::invalid_argument("render_silhouette: resolution must be positive");
  const Silhouette sil = build(kind, jitter, azimuth_rad);
  const std::size_t fine = res * kSub;
  std::vector<float> img(res * res, 0.0f);
  std::vector<Interval> spans;
  std::vector<std::size_t> hits(res);
  for (std::size_t r = 0; r < res; ++r) {
    std::fill(hits.begin(), hits.end(), 0);
    for (std::size_t sy = 0; sy < kSub; ++sy) {
      // row 0 is the top of the image
      const double v = -sample_coord(r * kSub + sy, fine);
      sil.row(v, spans);
      if (spans.empty()) continue;
      for (std::size_t fx = 0; fx < fine; ++fx) {
        const double u = sample_coord(fx, fine);
        for (const Interval& iv : spans)
          if (u >= iv.lo && u <= iv.hi) {
            ++hits[fx / kSub];
            break;
          }
      }
    }
    for (std::size_t c = 0; c < res; ++c)
      img[r * res + c] = static_cast<float>(static_cast<double>(hits[c]) / static_cast<double>(kSub * kSub));
  }
  return img;
}

}  // namespace pcnn
