#pragma once

#include <vector>

#include "bodyslam/bodymodel.hpp"
#include "bodyslam/errors.hpp"
#include "bodyslam/liegeom.hpp"

namespace bodyslam {

// Camera positions are over-parameterised as s * r': a single scalar moves
// every camera at once. Human poses, postures, shape and landmarks are
// plain world-frame quantities.
struct StateVector {
  double s = 1.0;
  ShapeVector beta = ShapeVector::Zero();
  std::vector<Pose6D> cameras;  // r = r'_WC (unscaled), phi = phi_WC
  std::vector<Pose6D> humans;   // T_WH
  std::vector<PostureVector> theta;
  std::vector<Vec3> landmarks;

  int frames() const { return static_cast<int>(cameras.size()); }
  int num_landmarks() const { return static_cast<int>(landmarks.size()); }

  Vec3 camera_position(int k) const { return s * cameras[static_cast<std::size_t>(k)].r; }
  Pose6D camera_pose(int k) const { return {camera_position(k), cameras[static_cast<std::size_t>(k)].phi}; }

  std::vector<Vec3> camera_positions() const {
    std::vector<Vec3> out;
    for (int k = 0; k < frames(); ++k) out.push_back(camera_position(k));
    return out;
  }
  std::vector<Vec3> human_positions() const {
    std::vector<Vec3> out;
    for (const auto& h : humans) out.push_back(h.r);
    return out;
  }

  void validate() const {
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("state: scale must be positive");
    if (humans.size() != cameras.size() || theta.size() != cameras.size()) {
      throw InvalidArgument("state: inconsistent frame counts");
    }
  }

  bool operator==(const StateVector& o) const {
    return s == o.s && beta == o.beta && cameras == o.cameras && humans == o.humans && theta == o.theta &&
           landmarks == o.landmarks;
  }
};

// Flat ordering: [s, beta, (cam r', cam phi, human p, human phi, theta) per
// frame, landmarks]. Parameter blocks group these for sparse assembly.
struct StateLayout {
  static constexpr int kFrameSize = 6 + 6 + kPostureDim;
  int frames = 0;
  int landmarks = 0;

  StateLayout() = default;
  StateLayout(int k, int l) : frames(k), landmarks(l) {}
  explicit StateLayout(const StateVector& x) : frames(x.frames()), landmarks(x.num_landmarks()) {}

  static constexpr int scale() { return 0; }
  static constexpr int beta() { return 1; }
  int frame(int k) const { return 1 + kShapeDim + kFrameSize * k; }
  int camera(int k) const { return frame(k); }
  int human(int k) const { return frame(k) + 6; }
  int theta(int k) const { return frame(k) + 12; }
  int landmark(int l) const { return frame(frames) + 3 * l; }
  int size() const { return landmark(landmarks); }

  // Blocks: scale, shape, then (camera, human, posture) per frame, then one
  // per landmark.
  int num_blocks() const { return 2 + 3 * frames + landmarks; }
  static constexpr int scale_block() { return 0; }
  static constexpr int shape_block() { return 1; }
  int camera_block(int k) const { return 2 + 3 * k; }
  int human_block(int k) const { return 3 + 3 * k; }
  int theta_block(int k) const { return 4 + 3 * k; }
  int landmark_block(int l) const { return 2 + 3 * frames + l; }

  int block_offset(int b) const {
    if (b == 0) return scale();
    if (b == 1) return beta();
    if (b < 2 + 3 * frames) {
      const int k = (b - 2) / 3;
      const int r = (b - 2) % 3;
      return r == 0 ? camera(k) : r == 1 ? human(k) : theta(k);
    }
    return landmark(b - 2 - 3 * frames);
  }
  int block_size(int b) const {
    if (b == 0) return 1;
    if (b == 1) return kShapeDim;
    if (b < 2 + 3 * frames) return (b - 2) % 3 == 2 ? kPostureDim : 6;
    return 3;
  }
};

inline Eigen::VectorXd flatten(const StateVector& x) {
  const StateLayout lay(x);
  Eigen::VectorXd v(lay.size());
  v[lay.scale()] = x.s;
  v.segment<kShapeDim>(lay.beta()) = x.beta;
  for (int k = 0; k < lay.frames; ++k) {
    const auto i = static_cast<std::size_t>(k);
    v.segment<3>(lay.camera(k)) = x.cameras[i].r;
    v.segment<3>(lay.camera(k) + 3) = x.cameras[i].phi;
    v.segment<3>(lay.human(k)) = x.humans[i].r;
    v.segment<3>(lay.human(k) + 3) = x.humans[i].phi;
    v.segment<kPostureDim>(lay.theta(k)) = x.theta[i];
  }
  for (int l = 0; l < lay.landmarks; ++l) v.segment<3>(lay.landmark(l)) = x.landmarks[static_cast<std::size_t>(l)];
  return v;
}

inline StateVector unflatten(const Eigen::VectorXd& v, const StateLayout& lay) {
  if (v.size() != lay.size()) throw InvalidArgument("unflatten: vector size does not match layout");
  StateVector x;
  x.s = v[lay.scale()];
  x.beta = v.segment<kShapeDim>(lay.beta());
  for (int k = 0; k < lay.frames; ++k) {
    x.cameras.push_back({v.segment<3>(lay.camera(k)), v.segment<3>(lay.camera(k) + 3)});
    x.humans.push_back({v.segment<3>(lay.human(k)), v.segment<3>(lay.human(k) + 3)});
    x.theta.push_back(v.segment<kPostureDim>(lay.theta(k)));
  }
  for (int l = 0; l < lay.landmarks; ++l) x.landmarks.push_back(v.segment<3>(lay.landmark(l)));
  return x;
}

// Additive update followed by re-wrapping every rotation vector into the
// ball of radius pi.
inline StateVector retract(const StateVector& x, const Eigen::VectorXd& delta) {
  const StateLayout lay(x);
  StateVector y = unflatten(flatten(x) + delta, lay);
  for (int k = 0; k < lay.frames; ++k) {
    auto i = static_cast<std::size_t>(k);
    y.cameras[i].phi = wrap_rotvec(y.cameras[i].phi);
    y.humans[i].phi = wrap_rotvec(y.humans[i].phi);
  }
  return y;
}

// Which state blocks an optimisation step may change.
struct FreeMask {
  bool scale = true;
  bool cameras = true;
  bool humans = true;
  bool shape = true;
  bool posture = true;
  bool landmarks = true;
  bool anchor_first_camera = true;  // gauge: camera 0 stays at its value

  bool block_free(const StateLayout& lay, int b) const {
    if (b == lay.scale_block()) return scale;
    if (b == lay.shape_block()) return shape;
    if (b < 2 + 3 * lay.frames) {
      const int k = (b - 2) / 3;
      switch ((b - 2) % 3) {
        case 0: return cameras && !(anchor_first_camera && k == 0);
        case 1: return humans;
        default: return posture;
      }
    }
    return landmarks;
  }

  // 1 for free coordinates, 0 for frozen ones.
  Eigen::VectorXd vector(const StateLayout& lay) const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(lay.size());
    for (int b = 0; b < lay.num_blocks(); ++b) {
      if (block_free(lay, b)) m.segment(lay.block_offset(b), lay.block_size(b)).setOnes();
    }
    return m;
  }
};

}  // namespace bodyslam
