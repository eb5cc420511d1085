#pragma once

#include <optional>

#include "bodyslam/errors.hpp"
#include "bodyslam/liegeom.hpp"

namespace bodyslam {

using Mat23 = Eigen::Matrix<double, 2, 3>;

// Points closer than this to the image plane are treated as behind the camera.
inline constexpr double kMinDepth = 1e-6;

// Distortion-free pinhole calibration.
struct Intrinsics {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw InvalidArgument("intrinsics: image size must be positive");
    if (!(cx >= 0.0 && cx <= width && cy >= 0.0 && cy <= height)) {
      throw InvalidArgument("intrinsics: principal point outside image");
    }
  }

  bool operator==(const Intrinsics&) const = default;
};

inline Vec2 project(const Intrinsics& k, const Vec3& p_c) {
  if (!p_c.allFinite()) throw InvalidArgument("project: non-finite point");
  if (p_c.z() <= kMinDepth) throw BehindCamera("project: point behind camera");
  return {k.fx * p_c.x() / p_c.z() + k.cx, k.fy * p_c.y() / p_c.z() + k.cy};
}

inline std::optional<Vec2> try_project(const Intrinsics& k, const Vec3& p_c) {
  if (!(p_c.z() > kMinDepth)) return std::nullopt;
  return Vec2{k.fx * p_c.x() / p_c.z() + k.cx, k.fy * p_c.y() / p_c.z() + k.cy};
}

inline Mat23 project_jacobian(const Intrinsics& k, const Vec3& p_c) {
  if (p_c.z() <= kMinDepth) throw BehindCamera("project_jacobian: point behind camera");
  const double iz = 1.0 / p_c.z();
  Mat23 j;
  j << k.fx * iz, 0.0, -k.fx * p_c.x() * iz * iz,
       0.0, k.fy * iz, -k.fy * p_c.y() * iz * iz;
  return j;
}

inline bool in_image(const Intrinsics& k, const Vec2& uv) {
  return uv.x() >= 0.0 && uv.x() < k.width && uv.y() >= 0.0 && uv.y() < k.height;
}

// Positive depth (at least min_depth) and inside the image bounds.
inline bool is_visible(const Intrinsics& k, const Vec3& p_c, double min_depth = 0.1) {
  if (!(p_c.z() > std::max(min_depth, kMinDepth))) return false;
  return in_image(k, *try_project(k, p_c));
}

}  // namespace bodyslam
