#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "bodyslam/errors.hpp"

namespace bodyslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Axis-angle rotation vector, radians.
using RotVec = Vec3;

inline constexpr double kPi = std::numbers::pi;

// Below this angle so3_exp switches to its second-order Taylor expansion.
inline constexpr double kSmallAngle = 1e-8;

inline Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

inline Vec3 vee(const Mat3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

inline Mat3 so3_exp(const RotVec& v) {
  if (!v.allFinite()) throw InvalidArgument("so3_exp: non-finite rotation vector");
  const double theta = v.norm();
  const Mat3 k = hat(v);
  if (theta < kSmallAngle) return Mat3::Identity() + k + 0.5 * k * k;
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

// Inverse of so3_exp. Returns ||v|| <= pi. At exactly pi the axis sign is
// chosen so that the leading nonzero component is non-negative.
inline RotVec so3_log(const Mat3& r) {
  if (!r.allFinite()) throw InvalidArgument("so3_log: non-finite matrix");
  if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(r.determinant() - 1.0) > 1e-6) {
    throw InvalidArgument("so3_log: matrix is not a rotation");
  }
  const Vec3 axis_sin = 0.5 * vee(r - r.transpose());  // sin(theta) * n
  const double cos_theta = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  const double sin_theta = axis_sin.norm();
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < 1e-6) {
    // theta / sin(theta) ~ 1 + theta^2 / 6
    return axis_sin * (1.0 + theta * theta / 6.0);
  }
  if (kPi - theta > 1e-4) return axis_sin * (theta / sin_theta);

  // Near pi the antisymmetric part vanishes; recover the axis from
  // the symmetric part: (R + R^T)/2 = cos(theta) I + (1 - cos(theta)) n n^T.
  const Mat3 nnt = (0.5 * (r + r.transpose()) - cos_theta * Mat3::Identity()) / (1.0 - cos_theta);
  int col = 0;
  nnt.diagonal().maxCoeff(&col);
  Vec3 n = nnt.col(col) / std::sqrt(std::max(nnt(col, col), 1e-300));
  n.normalize();
  if (n.dot(axis_sin) < 0.0) n = -n;
  if (sin_theta < 1e-12) {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(n[i]) > 1e-12) {
        if (n[i] < 0.0) n = -n;
        break;
      }
    }
  }
  return n * theta;
}

// Right Jacobian: exp(v + d) ~ exp(v) exp(Jr(v) d).
inline Mat3 so3_right_jacobian(const RotVec& v) {
  const double theta = v.norm();
  const Mat3 k = hat(v);
  if (theta < 1e-5) return Mat3::Identity() - 0.5 * k + k * k / 6.0;
  const double t2 = theta * theta;
  return Mat3::Identity() - (1.0 - std::cos(theta)) / t2 * k + (theta - std::sin(theta)) / (t2 * theta) * k * k;
}

// log(exp(v) exp(d)) ~ v + Jr^{-1}(v) d.
inline Mat3 so3_right_jacobian_inv(const RotVec& v) {
  const double theta = v.norm();
  const Mat3 k = hat(v);
  if (theta < 1e-5) return Mat3::Identity() + 0.5 * k + k * k / 12.0;
  const double t2 = theta * theta;
  const double c = 1.0 / t2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * k + c * k * k;
}

// Maps a rotation vector onto the equivalent one with norm in [0, pi].
inline RotVec wrap_rotvec(const RotVec& v) {
  const double theta = v.norm();
  if (theta <= kPi) return v;
  const double wrapped = std::remainder(theta, 2.0 * kPi);
  return v * (wrapped / theta);
}

struct Pose6D {
  Vec3 r = Vec3::Zero();
  RotVec phi = RotVec::Zero();

  static Pose6D identity() { return {}; }
  Mat3 rotation() const { return so3_exp(phi); }
  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation();
    m.topRightCorner<3, 1>() = r;
    return m;
  }
  static Pose6D from_rt(const Mat3& rot, const Vec3& t) { return {t, so3_log(rot)}; }

  bool operator==(const Pose6D&) const = default;
};

inline Pose6D pose_compose(const Pose6D& a, const Pose6D& b) {
  const Mat3 ra = a.rotation();
  return Pose6D::from_rt(ra * b.rotation(), ra * b.r + a.r);
}

inline Pose6D pose_inverse(const Pose6D& a) {
  const Mat3 rt = a.rotation().transpose();
  return Pose6D::from_rt(rt, -(rt * a.r));
}

inline Vec3 pose_apply(const Pose6D& a, const Vec3& p) { return a.rotation() * p + a.r; }

// x -> scale * R x + t
struct SimTransform {
  double scale = 1.0;
  RotVec rotation = RotVec::Zero();
  Vec3 translation = Vec3::Zero();

  Mat3 rotation_matrix() const { return so3_exp(rotation); }
  Vec3 apply(const Vec3& p) const { return scale * (rotation_matrix() * p) + translation; }
  std::vector<Vec3> apply(std::span<const Vec3> pts) const {
    const Mat3 r = rotation_matrix();
    std::vector<Vec3> out;
    out.reserve(pts.size());
    for (const auto& p : pts) out.push_back(scale * (r * p) + translation);
    return out;
  }
};

namespace detail {

inline bool lex_less(const Vec3& a, const Vec3& b) {
  for (int i = 0; i < 3; ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  return false;
}

}  // namespace detail

// Least-squares similarity (or rigid, with_scale=false) transform minimising
// sum ||dst_i - (s R src_i + t)||^2. Correspondences are accumulated in a
// canonical order so the result does not depend on how they are indexed.
inline SimTransform umeyama_align(std::span<const Vec3> src, std::span<const Vec3> dst, bool with_scale) {
  if (src.size() != dst.size()) throw InvalidArgument("umeyama_align: size mismatch");
  const std::size_t n = src.size();
  if (n < 3) throw DegenerateGeometry("umeyama_align: need at least 3 correspondences");
  for (std::size_t i = 0; i < n; ++i) {
    if (!src[i].allFinite() || !dst[i].allFinite()) throw InvalidArgument("umeyama_align: non-finite point");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (src[a] != src[b]) return detail::lex_less(src[a], src[b]);
    return detail::lex_less(dst[a], dst[b]);
  });

  Vec3 mu_s = Vec3::Zero();
  Vec3 mu_d = Vec3::Zero();
  for (auto i : order) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= static_cast<double>(n);
  mu_d /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  Mat3 scatter = Mat3::Zero();
  double var_s = 0.0;
  for (auto i : order) {
    const Vec3 ds = src[i] - mu_s;
    const Vec3 dd = dst[i] - mu_d;
    cov += dd * ds.transpose();
    scatter += ds * ds.transpose();
    var_s += ds.squaredNorm();
  }
  cov /= static_cast<double>(n);
  scatter /= static_cast<double>(n);
  var_s /= static_cast<double>(n);

  const Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  const Vec3 ev = eig.eigenvalues();  // ascending
  if (ev[2] <= 1e-18 || ev[1] <= 1e-12 * ev[2]) {
    throw DegenerateGeometry("umeyama_align: source points are collinear or coincident");
  }

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;
  const Mat3 rot = svd.matrixU() * s * svd.matrixV().transpose();

  SimTransform out;
  out.scale = with_scale ? (svd.singularValues().asDiagonal() * s).trace() / var_s : 1.0;
  out.rotation = so3_log(rot);
  out.translation = mu_d - out.scale * (rot * mu_s);
  return out;
}

}  // namespace bodyslam
