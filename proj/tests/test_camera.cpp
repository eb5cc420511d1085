#include <gtest/gtest.h>

#include <random>

#include "bodyslam/camera.hpp"

using namespace bodyslam;

namespace {
const Intrinsics kK{500, 500, 320, 240, 640, 480};
}

TEST(Camera, OpticalAxisHitsPrincipalPoint) {
  const Vec2 uv = project(kK, Vec3(0, 0, 1));
  EXPECT_DOUBLE_EQ(uv.x(), 320.0);
  EXPECT_DOUBLE_EQ(uv.y(), 240.0);
}

TEST(Camera, OffAxisPoint) {
  // 500 * 1/2 + 320
  const Vec2 uv = project(kK, Vec3(1, 0, 2));
  EXPECT_DOUBLE_EQ(uv.x(), 570.0);
  EXPECT_DOUBLE_EQ(uv.y(), 240.0);
}

TEST(Camera, BehindCameraThrows) {
  EXPECT_THROW(project(kK, Vec3(0, 0, 0)), BehindCamera);
  EXPECT_THROW(project(kK, Vec3(1, 1, -2)), BehindCamera);
  EXPECT_THROW(project_jacobian(kK, Vec3(0, 0, 1e-7)), BehindCamera);
  EXPECT_FALSE(try_project(kK, Vec3(0, 0, -1)).has_value());
}

TEST(Camera, JacobianOnAxis) {
  const Mat23 j = project_jacobian(kK, Vec3(0, 0, 1));
  Mat23 expected;
  expected << 500, 0, 0, 0, 500, 0;
  EXPECT_EQ(j, expected);
}

TEST(Camera, JacobianMatchesCentralDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(u(rng), u(rng), 1.5 + u(rng));
    const Mat23 j = project_jacobian(kK, p);
    const double h = 1e-6;
    for (int c = 0; c < 3; ++c) {
      const Vec3 e = Vec3::Unit(c) * h;
      const Vec2 fd = (project(kK, p + e) - project(kK, p - e)) / (2 * h);
      for (int r = 0; r < 2; ++r) {
        const double denom = std::max(std::abs(j(r, c)), 1.0);
        EXPECT_LT(std::abs(fd[r] - j(r, c)) / denom, 1e-5);
      }
    }
  }
}

TEST(Camera, JacobianScalesWithInverseDepth) {
  const Vec3 p(0.3, -0.2, 1.7);
  const Mat23 a = project_jacobian(kK, p);
  const Mat23 b = project_jacobian(kK, Vec3(p.x(), p.y(), 2 * p.z()));
  EXPECT_NEAR(b(0, 0), a(0, 0) / 2, 1e-12);
  EXPECT_NEAR(b(1, 1), a(1, 1) / 2, 1e-12);
  EXPECT_EQ(b(0, 1), 0.0);
  EXPECT_EQ(b(1, 0), 0.0);
}

TEST(Camera, ProjectionIsInvariantToPositiveScaling) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> lam(0.01, 100.0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(u(rng), u(rng), 2.0 + u(rng));
    const double l = lam(rng);
    EXPECT_LT((project(kK, l * p) - project(kK, p)).norm(), 1e-9);
  }
}

TEST(Camera, VisibilityRequiresDepthAndBounds) {
  EXPECT_TRUE(is_visible(kK, Vec3(0, 0, 2)));
  EXPECT_FALSE(is_visible(kK, Vec3(0, 0, -2)));
  EXPECT_FALSE(is_visible(kK, Vec3(2, 0, 1)));  // u = 1320
  EXPECT_FALSE(is_visible(kK, Vec3(0, 0, 0.05)));
}

TEST(Camera, IntrinsicsValidation) {
  EXPECT_NO_THROW(kK.validate());
  Intrinsics bad = kK;
  bad.fx = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = kK;
  bad.cx = 700;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}
