#include <gtest/gtest.h>

#include <random>

#include "bodyslam/bodymodel.hpp"

using namespace bodyslam;

namespace {

// Independent oracle: chain of 4x4 homogeneous transforms per joint.
JointArray fk_by_matrices(const KinematicTemplate& t, const ShapeVector& beta, const PostureVector& theta) {
  std::array<Mat4, kNumJoints> global{};
  JointArray out{};
  for (int j = 0; j < kNumJoints; ++j) {  // canonical parents precede children
    Mat4 local = Mat4::Identity();
    if (j > 0) {
      local.topLeftCorner<3, 3>() = Eigen::AngleAxisd(joint_rotvec(theta, j).norm(),
                                                      joint_rotvec(theta, j).norm() > 0
                                                          ? Vec3(joint_rotvec(theta, j).normalized())
                                                          : Vec3::UnitX())
                                        .toRotationMatrix();
      local.topRightCorner<3, 1>() = t.rest_offsets[j] + t.shape_basis[j] * beta;
      global[j] = global[t.parent[j]] * local;
    } else {
      global[j] = local;
    }
    out[j] = global[j].topRightCorner<3, 1>();
  }
  return out;
}

PostureVector random_posture(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  PostureVector th;
  for (int i = 0; i < kPostureDim; ++i) th[i] = u(rng);
  return th;
}

ShapeVector random_shape(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ShapeVector b;
  for (int i = 0; i < kShapeDim; ++i) b[i] = n(rng);
  return b;
}

}  // namespace

TEST(BodyModel, CanonicalTemplateIsPlausible) {
  const auto t = canonical_template();
  EXPECT_NO_THROW(t.topological_order());
  const auto j = forward_kinematics(t, ShapeVector::Zero(), PostureVector::Zero());
  const double top = j[kHead].y() + 0.1;  // crown sits roughly a head-radius above the head joint
  const double bottom = std::min(j[kLeftFoot].y(), j[kLeftAnkle].y()) - 0.05;
  EXPECT_GT(top - bottom, 1.55);
  EXPECT_LT(top - bottom, 1.85);
}

TEST(BodyModel, RestPoseIsCumulativeOffsets) {
  const auto t = canonical_template();
  const auto j = forward_kinematics(t, ShapeVector::Zero(), PostureVector::Zero());
  for (int k = 0; k < kNumJoints; ++k) {
    Vec3 sum = Vec3::Zero();
    for (int a = k; a > 0; a = t.parent[a]) sum += t.rest_offsets[a];
    EXPECT_LT((j[k] - sum).norm(), 1e-15);
  }
}

TEST(BodyModel, SingleJointRotationRotatesDescendantsRigidly) {
  const auto t = canonical_template();
  const auto rest = forward_kinematics(t, ShapeVector::Zero(), PostureVector::Zero());
  PostureVector th = PostureVector::Zero();
  th.segment<3>(3 * (kLeftHip - 1)) = Vec3(kPi / 2, 0, 0);
  const auto posed = forward_kinematics(t, ShapeVector::Zero(), th);
  const auto oracle = fk_by_matrices(t, ShapeVector::Zero(), th);
  const Mat3 r = so3_exp(Vec3(kPi / 2, 0, 0));
  for (int d : {kLeftKnee, kLeftAnkle, kLeftFoot}) {
    const Vec3 expected = rest[kLeftHip] + r * (rest[d] - rest[kLeftHip]);
    EXPECT_LT((posed[d] - expected).norm(), 1e-12);
    EXPECT_LT((posed[d] - oracle[d]).norm(), 1e-12);
  }
  EXPECT_LT((posed[kRightKnee] - rest[kRightKnee]).norm(), 1e-15);
}

TEST(BodyModel, MatchesMatrixChainOracle) {
  const auto t = canonical_template();
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto beta = random_shape(rng);
    const auto th = random_posture(rng, 1.0);
    const auto a = forward_kinematics(t, beta, th);
    const auto b = fk_by_matrices(t, beta, th);
    for (int k = 0; k < kNumJoints; ++k) EXPECT_LT((a[k] - b[k]).norm(), 1e-12);
  }
}

TEST(BodyModel, ShapeBasisAddsLinearly) {
  const auto t = canonical_template();
  ShapeVector e1 = ShapeVector::Zero();
  e1[0] = 1.0;
  for (int j = 1; j < kNumJoints; ++j) {
    EXPECT_LT((t.offset(j, e1) - t.rest_offsets[j] - t.shape_basis[j].col(0)).norm(), 1e-15);
  }
}

TEST(BodyModel, LinearInShapeAtZeroPosture) {
  const auto t = canonical_template();
  std::mt19937_64 rng(2);
  const PostureVector zero = PostureVector::Zero();
  const auto f0 = forward_kinematics(t, ShapeVector::Zero(), zero);
  for (int i = 0; i < 20; ++i) {
    const auto a = random_shape(rng), b = random_shape(rng);
    const double ca = 0.7, cb = -1.3;
    const auto fa = forward_kinematics(t, a, zero);
    const auto fb = forward_kinematics(t, b, zero);
    const auto fab = forward_kinematics(t, ca * a + cb * b, zero);
    for (int k = 0; k < kNumJoints; ++k) {
      const Vec3 lin = f0[k] + ca * (fa[k] - f0[k]) + cb * (fb[k] - f0[k]);
      EXPECT_LT((fab[k] - lin).norm(), 1e-12);
    }
  }
}

TEST(BodyModel, BoneLengthsIndependentOfPosture) {
  const auto t = canonical_template();
  std::mt19937_64 rng(3);
  const auto beta = random_shape(rng);
  const auto ref = bone_lengths(t, forward_kinematics(t, beta, PostureVector::Zero()));
  for (int i = 0; i < 50; ++i) {
    const auto len = bone_lengths(t, forward_kinematics(t, beta, random_posture(rng, 2.0)));
    for (int j = 1; j < kNumJoints; ++j) EXPECT_NEAR(len[j], ref[j], 1e-9);
  }
}

TEST(BodyModel, RootRotationIsRigidlyEquivariant) {
  const auto t = canonical_template();
  std::mt19937_64 rng(4);
  const auto beta = random_shape(rng);
  const auto th = random_posture(rng, 0.5);
  const auto joints = forward_kinematics(t, beta, th);
  const Pose6D root{Vec3::Zero(), Vec3(0.4, -0.9, 1.2)};
  const auto rotated = joints_in_world(root, joints);
  const Mat3 r = root.rotation();
  for (int k = 0; k < kNumJoints; ++k) EXPECT_LT((rotated[k] - r * joints[k]).norm(), 1e-12);
}

TEST(BodyModel, JointsInWorld) {
  const auto t = canonical_template();
  const auto joints = forward_kinematics(t, ShapeVector::Zero(), PostureVector::Zero());
  const auto same = joints_in_world(Pose6D::identity(), joints);
  for (int k = 0; k < kNumJoints; ++k) EXPECT_EQ(same[k], joints[k]);

  const Vec3 shift(1.0, -2.0, 0.5);
  const auto moved = joints_in_world(Pose6D{shift, Vec3::Zero()}, joints);
  for (int k = 0; k < kNumJoints; ++k) EXPECT_LT((moved[k] - joints[k] - shift).norm(), 1e-15);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Pose6D p{Vec3(u(rng), u(rng), u(rng)), Vec3(u(rng), u(rng), u(rng))};
  const auto world = joints_in_world(p, joints);
  for (int k = 0; k < kNumJoints; ++k) {
    const Eigen::Vector4d h = p.matrix() * joints[k].homogeneous();
    EXPECT_LT((world[k] - h.head<3>()).norm(), 1e-9);
  }
}

TEST(BodyModel, JacobiansMatchFiniteDifferences) {
  const auto t = canonical_template();
  std::mt19937_64 rng(6);
  const auto beta = random_shape(rng);
  const auto th = random_posture(rng, 0.8);
  const auto fk = forward_kinematics_full(t, beta, th);
  const auto jac = forward_kinematics_jacobians(t, fk, th);
  const double h = 1e-6;
  for (int c = 0; c < kPostureDim; ++c) {
    PostureVector tp = th, tm = th;
    tp[c] += h;
    tm[c] -= h;
    const auto jp = forward_kinematics(t, beta, tp), jm = forward_kinematics(t, beta, tm);
    for (int k = 0; k < kNumJoints; ++k) {
      const Vec3 fd = (jp[k] - jm[k]) / (2 * h);
      EXPECT_LT((fd - jac.d_theta.block<3, 1>(3 * k, c)).norm(), 1e-8) << "joint " << k << " col " << c;
    }
  }
  for (int c = 0; c < kShapeDim; ++c) {
    ShapeVector bp = beta, bm = beta;
    bp[c] += h;
    bm[c] -= h;
    const auto jp = forward_kinematics(t, bp, th), jm = forward_kinematics(t, bm, th);
    for (int k = 0; k < kNumJoints; ++k) {
      const Vec3 fd = (jp[k] - jm[k]) / (2 * h);
      EXPECT_LT((fd - jac.d_beta.block<3, 1>(3 * k, c)).norm(), 1e-8);
    }
  }
}

TEST(BodyModel, CyclicParentsRejected) {
  auto t = canonical_template();
  t.parent[1] = 4;  // hip -> knee -> hip
  EXPECT_THROW(forward_kinematics(t, ShapeVector::Zero(), PostureVector::Zero()), InvalidTemplate);
  auto u = canonical_template();
  u.parent[0] = 3;
  EXPECT_THROW(u.topological_order(), InvalidTemplate);
}

TEST(BodyModel, CheckedInTemplateMatchesCanonical) {
  const auto loaded = template_from_json(read_json_file(std::string(BODYSLAM_DATA_DIR) + "/body_template.json"));
  EXPECT_TRUE(loaded == canonical_template());
}

TEST(BodyModel, TemplateJsonRejectsWrongSchema) {
  json j = template_to_json(canonical_template());
  j["version"] = 7;
  EXPECT_THROW(template_from_json(j), FormatError);
  json k = template_to_json(canonical_template());
  k["parents"] = json::array({-1, 0});
  EXPECT_THROW(template_from_json(k), FormatError);
}
