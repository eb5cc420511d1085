#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bodyslam/errors.hpp"
#include "bodyslam/json_io.hpp"
#include "bodyslam/liegeom.hpp"

namespace bodyslam {

inline constexpr int kNumJoints = 24;
inline constexpr int kShapeDim = 10;
inline constexpr int kPostureDim = 69;
inline constexpr int kFullPoseDim = 72;

using ShapeVector = Eigen::Matrix<double, kShapeDim, 1>;
using PostureVector = Eigen::Matrix<double, kPostureDim, 1>;
// Root orientation (3) followed by the 69-dim posture.
using FullPoseVector = Eigen::Matrix<double, kFullPoseDim, 1>;
using JointArray = std::array<Vec3, kNumJoints>;
using ShapeBasis = Eigen::Matrix<double, 3, kShapeDim>;

// SMPL joint order.
enum Joint : int {
  kPelvis = 0, kLeftHip, kRightHip, kSpine1, kLeftKnee, kRightKnee, kSpine2, kLeftAnkle,
  kRightAnkle, kSpine3, kLeftFoot, kRightFoot, kNeck, kLeftCollar, kRightCollar, kHead,
  kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow, kLeftWrist, kRightWrist,
  kLeftHand, kRightHand
};

inline const std::array<const char*, kNumJoints>& joint_names() {
  static const std::array<const char*, kNumJoints> names = {
      "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle",
      "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar", "right_collar", "head",
      "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
      "left_hand", "right_hand"};
  return names;
}

inline Vec3 joint_rotvec(const PostureVector& theta, int joint) { return theta.segment<3>(3 * (joint - 1)); }

// Kinematic tree in the body frame H (x left, y up, z forward). Joint j sits
// at X_parent + G_parent * offset_j(beta) with offset_j(beta) = rest_offsets_j
// + shape_basis_j * beta. The root is the origin of H.
struct KinematicTemplate {
  std::array<int, kNumJoints> parent{};
  std::array<Vec3, kNumJoints> rest_offsets{};
  std::array<ShapeBasis, kNumJoints> shape_basis{};

  Vec3 offset(int j, const ShapeVector& beta) const { return rest_offsets[j] + shape_basis[j] * beta; }

  // Parents-before-children order. Throws InvalidTemplate if the parent
  // array is not a tree rooted at joint 0.
  std::array<int, kNumJoints> topological_order() const {
    if (parent[0] != -1) throw InvalidTemplate("kinematic template: joint 0 must be the root");
    for (int j = 1; j < kNumJoints; ++j) {
      if (parent[j] < 0 || parent[j] >= kNumJoints) throw InvalidTemplate("kinematic template: parent index out of range");
    }
    std::array<int, kNumJoints> depth{};
    depth.fill(-1);
    depth[0] = 0;
    for (int j = 1; j < kNumJoints; ++j) {
      int steps = 0;
      int a = j;
      while (a != 0) {
        a = parent[a];
        if (++steps > kNumJoints) throw InvalidTemplate("kinematic template: cyclic parent array");
      }
      depth[j] = steps;
    }
    std::array<int, kNumJoints> order{};
    for (int j = 0; j < kNumJoints; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return depth[a] < depth[b]; });
    return order;
  }

  // Strict ancestors of j excluding the root, nearest first. These are the
  // joints whose rotation moves j.
  std::vector<int> rotating_ancestors(int j) const {
    std::vector<int> out;
    for (int a = parent[j]; a > 0; a = parent[a]) out.push_back(a);
    return out;
  }

  bool operator==(const KinematicTemplate& o) const {
    if (parent != o.parent) return false;
    for (int j = 0; j < kNumJoints; ++j) {
      if (rest_offsets[j] != o.rest_offsets[j] || shape_basis[j] != o.shape_basis[j]) return false;
    }
    return true;
  }
};

namespace detail {

// Portable standard normal from raw mt19937_64 output (Box-Muller), so the
// canonical template does not depend on the standard library's distributions.
struct PortableNormal {
  std::mt19937_64 eng;
  explicit PortableNormal(std::uint64_t seed) : eng(seed) {}
  double uniform() { return (static_cast<double>(eng() >> 11) + 0.5) * (1.0 / 9007199254740992.0); }
  double operator()() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }
};

}  // namespace detail

inline constexpr std::uint64_t kCanonicalShapeSeed = 20220923;

// Zero-shape skeleton of about 1.7 m. The first shape component scales every
// bone by 6% per unit; the remaining nine are small seeded random deltas.
inline KinematicTemplate canonical_template() {
  KinematicTemplate t;
  t.parent = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  const std::array<Vec3, kNumJoints> offsets = {
      Vec3(0.0, 0.0, 0.0),        // pelvis
      Vec3(0.06, -0.09, 0.0),     // left hip
      Vec3(-0.06, -0.09, 0.0),    // right hip
      Vec3(0.0, 0.11, -0.02),     // spine1
      Vec3(0.04, -0.39, 0.0),     // left knee
      Vec3(-0.04, -0.39, 0.0),    // right knee
      Vec3(0.0, 0.14, 0.02),      // spine2
      Vec3(-0.01, -0.42, -0.04),  // left ankle
      Vec3(0.01, -0.42, -0.04),   // right ankle
      Vec3(0.0, 0.06, 0.0),       // spine3
      Vec3(0.02, -0.06, 0.13),    // left foot
      Vec3(-0.02, -0.06, 0.13),   // right foot
      Vec3(0.0, 0.21, -0.03),     // neck
      Vec3(0.08, 0.12, -0.02),    // left collar
      Vec3(-0.08, 0.12, -0.02),   // right collar
      Vec3(0.0, 0.12, 0.05),      // head
      Vec3(0.12, 0.045, -0.015),  // left shoulder
      Vec3(-0.12, 0.045, -0.015), // right shoulder
      Vec3(0.26, -0.015, -0.025), // left elbow
      Vec3(-0.26, -0.015, -0.025),// right elbow
      Vec3(0.265, 0.0, -0.005),   // left wrist
      Vec3(-0.265, 0.0, -0.005),  // right wrist
      Vec3(0.09, -0.01, -0.015),  // left hand
      Vec3(-0.09, -0.01, -0.015), // right hand
  };
  t.rest_offsets = offsets;
  detail::PortableNormal normal(kCanonicalShapeSeed);
  for (int j = 0; j < kNumJoints; ++j) {
    ShapeBasis b = ShapeBasis::Zero();
    if (j != 0) {
      b.col(0) = 0.06 * offsets[j];
      for (int c = 1; c < kShapeDim; ++c) {
        for (int r = 0; r < 3; ++r) b(r, c) = 0.004 * normal();
      }
    }
    t.shape_basis[j] = b;
  }
  return t;
}

inline std::vector<double> bone_lengths(const KinematicTemplate& t, const JointArray& joints) {
  std::vector<double> out(kNumJoints, 0.0);
  for (int j = 1; j < kNumJoints; ++j) out[j] = (joints[j] - joints[t.parent[j]]).norm();
  return out;
}

struct FkResult {
  JointArray joints{};
  std::array<Mat3, kNumJoints> global_rotation{};  // G_j, frame of joint j in H
};

inline FkResult forward_kinematics_full(const KinematicTemplate& t, const ShapeVector& beta, const PostureVector& theta) {
  const auto order = t.topological_order();
  FkResult out;
  for (int j : order) {
    if (j == 0) {
      out.joints[0] = Vec3::Zero();
      out.global_rotation[0] = Mat3::Identity();
      continue;
    }
    const int p = t.parent[j];
    out.joints[j] = out.joints[p] + out.global_rotation[p] * t.offset(j, beta);
    out.global_rotation[j] = out.global_rotation[p] * so3_exp(joint_rotvec(theta, j));
  }
  return out;
}

// 24 joint positions in frame H, in metres.
inline JointArray forward_kinematics(const KinematicTemplate& t, const ShapeVector& beta, const PostureVector& theta) {
  return forward_kinematics_full(t, beta, theta).joints;
}

struct FkJacobians {
  // Rows 3j..3j+2 belong to joint j.
  Eigen::Matrix<double, 3 * kNumJoints, kPostureDim> d_theta;
  Eigen::Matrix<double, 3 * kNumJoints, kShapeDim> d_beta;
};

// Derivatives of the joint positions with respect to additive perturbations
// of theta and beta.
inline FkJacobians forward_kinematics_jacobians(const KinematicTemplate& t, const FkResult& fk, const PostureVector& theta) {
  FkJacobians jac;
  jac.d_theta.setZero();
  jac.d_beta.setZero();
  std::array<Mat3, kNumJoints> jr{};
  for (int a = 1; a < kNumJoints; ++a) jr[a] = fk.global_rotation[a] * so3_right_jacobian(joint_rotvec(theta, a));
  for (int d = 1; d < kNumJoints; ++d) {
    for (int a = d; a > 0; a = t.parent[a]) {
      jac.d_beta.block<3, kShapeDim>(3 * d, 0) += fk.global_rotation[t.parent[a]] * t.shape_basis[a];
    }
    for (int a : t.rotating_ancestors(d)) {
      jac.d_theta.block<3, 3>(3 * d, 3 * (a - 1)) = -hat(fk.joints[d] - fk.joints[a]) * jr[a];
    }
  }
  return jac;
}

inline JointArray joints_in_world(const Pose6D& t_wh, const JointArray& joints_h) {
  const Mat3 r = t_wh.rotation();
  JointArray out;
  for (int j = 0; j < kNumJoints; ++j) out[j] = r * joints_h[j] + t_wh.r;
  return out;
}

inline constexpr const char* kTemplateSchema = "bodyslam.kinematic_template";

inline json template_to_json(const KinematicTemplate& t) {
  json j;
  j["schema"] = kTemplateSchema;
  j["version"] = 1;
  j["joint_names"] = json::array();
  for (const char* n : joint_names()) j["joint_names"].push_back(n);
  j["parents"] = t.parent;
  j["rest_offsets"] = json::array();
  j["shape_basis"] = json::array();
  for (int k = 0; k < kNumJoints; ++k) {
    j["rest_offsets"].push_back(to_json_array(t.rest_offsets[k]));
    j["shape_basis"].push_back(to_json_matrix(t.shape_basis[k]));
  }
  return j;
}

inline KinematicTemplate template_from_json(const json& j) {
  check_schema(j, kTemplateSchema, 1);
  KinematicTemplate t;
  try {
    const auto parents = j.at("parents").get<std::vector<int>>();
    if (parents.size() != kNumJoints) throw FormatError("template: expected 24 parents");
    std::copy(parents.begin(), parents.end(), t.parent.begin());
    const auto& offs = j.at("rest_offsets");
    const auto& basis = j.at("shape_basis");
    if (offs.size() != kNumJoints || basis.size() != kNumJoints) throw FormatError("template: expected 24 joints");
    for (int k = 0; k < kNumJoints; ++k) {
      t.rest_offsets[k] = from_json_array<Vec3>(offs[k]);
      const Eigen::MatrixXd b = from_json_matrix(basis[k]);
      if (b.rows() != 3 || b.cols() != kShapeDim) throw FormatError("template: shape basis must be 3x10");
      t.shape_basis[k] = b;
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("template: ") + e.what());
  }
  t.topological_order();
  return t;
}

}  // namespace bodyslam
