#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "bodyslam/liegeom.hpp"

using namespace bodyslam;

namespace {

Vec3 random_rotvec(std::mt19937_64& rng, double max_norm) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_norm);
  Vec3 axis(n(rng), n(rng), n(rng));
  return axis.normalized() * u(rng);
}

Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

Pose6D random_pose(std::mt19937_64& rng) { return {random_vec(rng, 5.0), random_rotvec(rng, kPi - 1e-3)}; }

}  // namespace

TEST(So3, ExpOfZeroIsIdentity) { EXPECT_EQ(so3_exp(Vec3::Zero()), Mat3::Identity()); }

TEST(So3, QuarterTurnAboutZ) {
  const Vec3 y = so3_exp(Vec3(0, 0, kPi / 2)) * Vec3(1, 0, 0);
  EXPECT_NEAR((y - Vec3(0, 1, 0)).norm(), 0.0, 1e-15);
}

TEST(So3, ExpRejectsNonFinite) {
  EXPECT_THROW(so3_exp(Vec3(std::nan(""), 0, 0)), InvalidArgument);
}

TEST(So3, ExpIsProperRotation) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const Mat3 r = so3_exp(random_rotvec(rng, 3.0));
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).norm(), 1e-13);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-13);
  }
}

TEST(So3, LogExpRoundTrip) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 v = random_rotvec(rng, kPi - 1e-3);
    EXPECT_LT((so3_log(so3_exp(v)) - v).norm(), 1e-9) << v.transpose();
  }
}

TEST(So3, ExpLogRoundTripOnRotations) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 r = so3_exp(random_rotvec(rng, kPi));
    EXPECT_LT((so3_exp(so3_log(r)) - r).norm(), 1e-8);
  }
}

TEST(So3, LogOfIdentity) { EXPECT_EQ(so3_log(Mat3::Identity()), Vec3::Zero()); }

TEST(So3, LogAtPiUsesCanonicalSign) {
  const Mat3 r = Eigen::AngleAxisd(kPi, Vec3::UnitX()).toRotationMatrix();
  const Vec3 v = so3_log(r);
  EXPECT_NEAR(v.norm(), kPi, 1e-12);
  EXPECT_NEAR(v.x(), kPi, 1e-12);
  // Same rotation from the opposite axis maps to the same representative.
  const Mat3 r2 = Eigen::AngleAxisd(kPi, -Vec3::UnitX()).toRotationMatrix();
  EXPECT_NEAR((so3_log(r2) - v).norm(), 0.0, 1e-12);
  // Leading component zero: the next nonzero one decides.
  const Mat3 r3 = Eigen::AngleAxisd(kPi, Vec3(0, -1, 1).normalized()).toRotationMatrix();
  const Vec3 v3 = so3_log(r3);
  EXPECT_GT(v3.y(), 0.0);
  EXPECT_NEAR(v3.norm(), kPi, 1e-9);
}

TEST(So3, LogNearPiKeepsAxisSign) {
  const Vec3 v = Vec3(0.3, -0.5, 0.8).normalized() * (kPi - 1e-6);
  EXPECT_LT((so3_log(so3_exp(v)) - v).norm(), 1e-8);
  const Vec3 w = -v;
  EXPECT_LT((so3_log(so3_exp(w)) - w).norm(), 1e-8);
}

TEST(So3, LogRejectsNonOrthonormal) {
  Mat3 m = Mat3::Identity();
  m(0, 1) = 1e-3;
  EXPECT_THROW(so3_log(m), InvalidArgument);
  EXPECT_THROW(so3_log(-Mat3::Identity()), InvalidArgument);
}

TEST(So3, TaylorBranchMatchesRodriguesAtSwitch) {
  const Vec3 axis = Vec3(1, 2, -0.5).normalized();
  const Vec3 just_below = axis * (kSmallAngle * (1 - 1e-9));
  const Vec3 at = axis * kSmallAngle;
  EXPECT_LT((so3_exp(just_below) - so3_exp(at)).cwiseAbs().maxCoeff(), 1e-12);
  // Rodrigues evaluated explicitly at the switch point.
  const double th = kSmallAngle;
  const Mat3 k = hat(at);
  const Mat3 rodrigues = Mat3::Identity() + std::sin(th) / th * k + (1 - std::cos(th)) / (th * th) * k * k;
  EXPECT_LT((so3_exp(just_below) - rodrigues).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(So3, RightJacobianMatchesFiniteDifference) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const Vec3 v = random_rotvec(rng, 3.0);
    const Mat3 jr = so3_right_jacobian(v);
    const Mat3 r = so3_exp(v);
    for (int c = 0; c < 3; ++c) {
      const double h = 1e-6;
      const Vec3 e = Vec3::Unit(c) * h;
      const Vec3 fd = (so3_log(r.transpose() * so3_exp(v + e)) - so3_log(r.transpose() * so3_exp(v - e))) / (2 * h);
      EXPECT_LT((fd - jr.col(c)).norm(), 1e-7);
    }
    EXPECT_LT((so3_right_jacobian_inv(v) * jr - Mat3::Identity()).norm(), 1e-10);
  }
}

TEST(So3, WrapKeepsRotationAndBoundsNorm) {
  const Vec3 v = Vec3(0.2, 0.1, -0.4).normalized() * 4.0;
  const Vec3 w = wrap_rotvec(v);
  EXPECT_LE(w.norm(), kPi);
  EXPECT_LT((so3_exp(w) - so3_exp(v)).norm(), 1e-12);
  const Vec3 small(0.1, 0.2, 0.3);
  EXPECT_EQ(wrap_rotvec(small), small);
}

TEST(Pose, ComposeWithIdentity) {
  std::mt19937_64 rng(5);
  const Pose6D p = random_pose(rng);
  const Pose6D q = pose_compose(p, Pose6D::identity());
  EXPECT_LT((q.r - p.r).norm(), 1e-12);
  EXPECT_LT((q.phi - p.phi).norm(), 1e-12);
}

TEST(Pose, ComposeWithInverseIsIdentity) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    const Pose6D p = random_pose(rng);
    const Pose6D id = pose_compose(p, pose_inverse(p));
    EXPECT_LT(id.r.norm(), 1e-9);
    EXPECT_LT(id.phi.norm(), 1e-9);
  }
}

TEST(Pose, ApplyInverseUndoesApply) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const Pose6D p = random_pose(rng);
    const Vec3 x = random_vec(rng, 10.0);
    EXPECT_LT((pose_apply(pose_inverse(p), pose_apply(p, x)) - x).norm(), 1e-9);
  }
}

TEST(Pose, ComposeIsAssociative) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const Pose6D a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    const Mat4 lhs = pose_compose(pose_compose(a, b), c).matrix();
    const Mat4 rhs = pose_compose(a, pose_compose(b, c)).matrix();
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Pose, MatchesHomogeneousMatrices) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    const Pose6D a = random_pose(rng), b = random_pose(rng);
    EXPECT_LT((pose_compose(a, b).matrix() - a.matrix() * b.matrix()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((pose_inverse(a).matrix() - a.matrix().inverse()).cwiseAbs().maxCoeff(), 1e-9);
    const Vec3 x = random_vec(rng, 3.0);
    const Eigen::Vector4d xh = a.matrix() * x.homogeneous();
    EXPECT_LT((pose_apply(a, x) - xh.head<3>()).norm(), 1e-12);
  }
}

namespace {

std::vector<Vec3> random_cloud(std::mt19937_64& rng, int n) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.push_back(random_vec(rng, 2.0));
  return pts;
}

}  // namespace

TEST(Umeyama, IdentityOnEqualSets) {
  std::mt19937_64 rng(10);
  const auto pts = random_cloud(rng, 20);
  const SimTransform t = umeyama_align(pts, pts, true);
  EXPECT_NEAR(t.scale, 1.0, 1e-12);
  EXPECT_LT(t.rotation.norm(), 1e-12);
  EXPECT_LT(t.translation.norm(), 1e-12);
}

TEST(Umeyama, RecoversConstructedSimilarity) {
  std::mt19937_64 rng(11);
  const auto src = random_cloud(rng, 30);
  const Vec3 phi0(0.3, -1.1, 0.7);
  const Mat3 r0 = so3_exp(phi0);
  const Vec3 t0(1.5, -2.0, 0.25);
  std::vector<Vec3> dst;
  for (const auto& p : src) dst.push_back(2.5 * r0 * p + t0);

  const SimTransform t = umeyama_align(src, dst, true);
  EXPECT_NEAR(t.scale, 2.5, 1e-9);
  EXPECT_LT((t.rotation_matrix() - r0).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((t.translation - t0).norm(), 1e-9);

  const SimTransform rigid = umeyama_align(src, dst, false);
  EXPECT_EQ(rigid.scale, 1.0);
  double resid = 0.0;
  const auto mapped = rigid.apply(src);
  for (std::size_t i = 0; i < src.size(); ++i) resid += (mapped[i] - dst[i]).squaredNorm();
  EXPECT_GT(resid, 1e-3);
}

TEST(Umeyama, ExactlyInvariantToReindexing) {
  std::mt19937_64 rng(12);
  const auto src = random_cloud(rng, 25);
  std::vector<Vec3> dst;
  for (const auto& p : src) dst.push_back(1.3 * so3_exp(Vec3(0.1, 0.2, 0.3)) * p + random_vec(rng, 0.05));
  const SimTransform a = umeyama_align(src, dst, true);
  std::vector<std::size_t> perm(src.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Vec3> ps, pd;
    for (auto i : perm) {
      ps.push_back(src[i]);
      pd.push_back(dst[i]);
    }
    const SimTransform b = umeyama_align(ps, pd, true);
    EXPECT_EQ(a.scale, b.scale);
    EXPECT_EQ(a.rotation, b.rotation);
    EXPECT_EQ(a.translation, b.translation);
  }
}

TEST(Umeyama, RejectsDegenerateSets) {
  std::vector<Vec3> line = {Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2), Vec3(-1, -1, -1)};
  EXPECT_THROW(umeyama_align(line, line, true), DegenerateGeometry);
  std::vector<Vec3> same(5, Vec3(1, 2, 3));
  EXPECT_THROW(umeyama_align(same, same, false), DegenerateGeometry);
  std::vector<Vec3> two = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  EXPECT_THROW(umeyama_align(two, two, true), DegenerateGeometry);
}
