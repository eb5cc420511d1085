#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace bodyslam;
using namespace bodyslam::testing;

namespace {

struct ToyCase {
  SceneDataset ds;
  MotionModelNet net;
  StateVector x;
};

ToyCase toy(std::uint64_t seed) {
  SceneConfig c = small_scene(3, 12, seed);
  c.noise.landmark_outliers = 0.1;
  c.noise.joint_outliers = 0.1;
  ToyCase t{generate_scene(body(), c), tiny_net(seed + 1), {}};
  t.x = jittered_state(t.ds, 1.3, seed + 2);
  return t;
}

Problem with_only(Problem p, const char* which) {
  const std::string w = which;
  p.config.landmarks = w == "landmarks";
  p.config.joints = w == "joints";
  p.config.motion = w == "motion";
  p.config.posture = w == "posture";
  p.config.shape = w == "shape";
  p.config.hmr_posture_prior = w == "posture";
  return p;
}

}  // namespace

TEST(Weights, LandmarkWeightFromKeypointStd) { EXPECT_NEAR(FactorWeights{}.lm, 12.642, 1e-3); }

TEST(RobustLoss, NoneIsQuadratic) {
  const RobustLoss l;
  for (double q : {0.0, 0.3, 17.0}) {
    EXPECT_DOUBLE_EQ(l.rho(q), q);
    EXPECT_DOUBLE_EQ(l.weight(q), 1.0);
  }
}

TEST(RobustLoss, ReduceToQuadraticForLargeScale) {
  for (RobustKind k : {RobustKind::cauchy, RobustKind::geman_mcclure}) {
    const RobustLoss l{k, 100.0};
    for (double r : {1e-3, 0.1, 0.99}) {
      const double q = r * r;
      EXPECT_LT(std::abs(l.rho(q) - q) / q, 1e-3) << to_string(k) << " r=" << r;
    }
  }
}

TEST(RobustLoss, WeightIsDerivativeOfRho) {
  for (RobustKind k : {RobustKind::cauchy, RobustKind::geman_mcclure}) {
    const RobustLoss l{k, 2.0};
    for (double q : {0.01, 1.0, 4.0, 50.0}) {
      const double h = 1e-6 * std::max(1.0, q);
      const double fd = (l.rho(q + h) - l.rho(q - h)) / (2 * h);
      EXPECT_NEAR(l.weight(q), fd, 1e-7) << to_string(k) << " q=" << q;
    }
  }
}

TEST(RobustLoss, CauchyOutlierGrowsLogarithmically) {
  const RobustLoss l{RobustKind::cauchy, 1.0};
  const double q = 50.0 * 50.0;
  EXPECT_LT(l.rho(q), q);
  EXPECT_NEAR(l.rho(q), std::log1p(q), 1e-12);
  EXPECT_GT(l.rho(4 * q), l.rho(q));
}

TEST(RobustLoss, GemanMcClureIsBoundedAndRedescending) {
  const RobustLoss l{RobustKind::geman_mcclure, 10.0};
  EXPECT_LT(l.rho(1e12), 100.0);
  // Influence rises up to r = c / sqrt(3), then falls.
  const double peak = 10.0 / std::sqrt(3.0);
  EXPECT_GT(l.influence(peak), l.influence(0.5 * peak));
  EXPECT_GT(l.influence(peak), l.influence(3.0 * peak));
  EXPECT_GT(l.influence(3.0 * peak), l.influence(30.0 * peak));
}

TEST(RobustLoss, KindNames) {
  EXPECT_EQ(robust_kind_from_string("cauchy"), RobustKind::cauchy);
  EXPECT_EQ(robust_kind_from_string("geman-mcclure"), RobustKind::geman_mcclure);
  EXPECT_THROW(robust_kind_from_string("huber"), ConfigError);
}

TEST(LandmarkResidual, LateralCameraShift) {
  // Landmark 2 m in front; camera moved 1 mm sideways -> f * 1e-3 / 2 px.
  SceneDataset ds = generate_scene(body(), small_scene(3, 8, 1, false));
  StateVector x = truth_state(ds);
  x.cameras[0] = Pose6D{Vec3::Zero(), Vec3::Zero()};
  x.landmarks[0] = Vec3(0, 0, 2);
  Problem p = problem_for(ds, nullptr);
  LandmarkObservation o;
  o.landmark = 0;
  o.uv = project(p.intrinsics, Vec3(0, 0, 2));
  EXPECT_NEAR(e_landmark(x, p, 0, o)->norm(), 0.0, 1e-12);
  x.cameras[0].r = Vec3(1e-3, 0, 0);
  EXPECT_NEAR(e_landmark(x, p, 0, o)->norm(), 0.25, 1e-9);
}

TEST(LandmarkResidual, BehindCameraIsDropped) {
  SceneDataset ds = generate_scene(body(), small_scene(3, 8, 1, false));
  StateVector x = truth_state(ds);
  x.cameras[0] = Pose6D{Vec3::Zero(), Vec3::Zero()};
  x.landmarks[0] = Vec3(0, 0, -2);
  const Problem p = problem_for(ds, nullptr);
  LandmarkObservation o;
  EXPECT_FALSE(e_landmark(x, p, 0, o).has_value());
}

TEST(GenerativeZero, EveryFamilyAndDifficulty) {
  for (CameraFamily f : {CameraFamily::orbit, CameraFamily::arc, CameraFamily::handheld}) {
    for (Difficulty d : {Difficulty::easy, Difficulty::medium, Difficulty::hard}) {
      SceneConfig c = small_scene(30, 30, 7, false);
      c.family = f;
      c.difficulty = d;
      const SceneDataset ds = generate_scene(body(), c);
      const MotionModelNet net = tiny_net(1);
      Problem p = problem_for(ds, &net);
      p.config.frozen_predictions = true;
      p.frozen = truth_predictions(ds.truth, net.history());
      const StateVector x = truth_state(ds);
      CostBreakdown cb;
      const double cost = total_cost(x, p, &cb);
      EXPECT_LT(cost, 1e-8) << to_string(f) << " " << to_string(d);
      EXPECT_EQ(cb.dropped, 0);
      Eigen::VectorXd g;
      cost_and_gradient(x, p, g);
      EXPECT_LT(g.lpNorm<Eigen::Infinity>(), 1e-4);
    }
  }
}

TEST(GenerativeZero, IndividualResiduals) {
  const SceneDataset ds = generate_scene(body(), small_scene(5, 10, 3, false));
  const Problem p = problem_for(ds, nullptr);
  const StateVector x = truth_state(ds);
  for (int k = 0; k < x.frames(); ++k) {
    const auto& fm = ds.measurements[static_cast<std::size_t>(k)];
    for (const auto& o : fm.landmarks) EXPECT_LT(e_landmark(x, p, k, o)->norm(), 1e-6);
    for (const auto& o : fm.joints) EXPECT_LT(e_joint(x, p, k, o)->norm(), 1e-6);
    EXPECT_LT(e_posture(x, p, k).norm(), 1e-12);
    EXPECT_LT(e_shape(x, p, k).norm(), 1e-12);
  }
}

TEST(Breakdown, PartsSumToTotal) {
  ToyCase t = toy(11);
  const Problem p = problem_for(t.ds, &t.net);
  CostBreakdown cb;
  const double c = total_cost(t.x, p, &cb);
  EXPECT_NEAR(cb.total(), c, 1e-9 * c);
  EXPECT_GT(cb.landmark, 0);
  EXPECT_GT(cb.joint, 0);
  EXPECT_GT(cb.motion, 0);
  EXPECT_GT(cb.posture, 0);
  EXPECT_GT(cb.shape, 0);
}

TEST(Gradient, EveryFactorMatchesFiniteDifferences) {
  ToyCase t = toy(5);
  const Problem full = problem_for(t.ds, &t.net);
  for (const char* f : {"landmarks", "joints", "motion", "posture", "shape"}) {
    EXPECT_LT(worst_gradient_error(t.x, with_only(full, f)), 1e-4) << f;
  }
  EXPECT_LT(worst_gradient_error(t.x, full), 1e-4);
}

TEST(Gradient, FrozenPredictionsMatchFiniteDifferences) {
  ToyCase t = toy(8);
  Problem p = problem_for(t.ds, &t.net);
  p.frozen = freeze_predictions(t.x, p);
  p.config.frozen_predictions = true;
  EXPECT_LT(worst_gradient_error(t.x, p), 1e-4);
}

TEST(Gradient, SeveralSeeds) {
  for (std::uint64_t s : {21u, 22u, 23u}) {
    ToyCase t = toy(s);
    EXPECT_LT(worst_gradient_error(t.x, problem_for(t.ds, &t.net)), 1e-4) << s;
  }
}

TEST(Gradient, NetworkInputPathMatters) {
  // Cutting the gradient through the network inputs changes the posture
  // and human-orientation entries.
  ToyCase t = toy(5);
  Problem a = problem_for(t.ds, &t.net);
  Problem b = a;
  b.config.motion_through_network = false;
  Eigen::VectorXd ga, gb;
  cost_and_gradient(t.x, a, ga);
  cost_and_gradient(t.x, b, gb);
  EXPECT_GT((ga - gb).norm(), 1e-6);
}

TEST(ScaleInvariance, LandmarkTermUnderJointRescale) {
  const SceneDataset ds = generate_scene(body(), small_scene(10, 20, 4));
  const Problem p = with_only(problem_for(ds, nullptr), "landmarks");
  const StateVector x = jittered_state(ds, 1.0, 9, 0.2);
  const double c0 = total_cost(x, p);
  for (double a : {0.3, 0.8, 2.5}) {
    StateVector y = x;
    y.s *= a;
    for (auto& l : y.landmarks) l *= a;
    EXPECT_NEAR(total_cost(y, p), c0, 1e-9 * std::max(1.0, c0)) << a;
  }
}

TEST(ScaleInvariance, JointTermWhenHumansKeepCameraOffsets) {
  const SceneDataset ds = generate_scene(body(), small_scene(10, 20, 4));
  const Problem p = with_only(problem_for(ds, nullptr), "joints");
  const StateVector x = jittered_state(ds, 1.0, 9, 0.2);
  const double c0 = total_cost(x, p);
  StateVector y = x;
  const double a = 1.7;
  y.s *= a;
  for (int k = 0; k < y.frames(); ++k) {
    // Keep each human at the same offset from its camera.
    y.humans[static_cast<std::size_t>(k)].r += (a - 1.0) * x.camera_position(k);
  }
  EXPECT_NEAR(total_cost(y, p), c0, 1e-9 * std::max(1.0, c0));
}

TEST(ScaleInvariance, MotionTermHasStrictMinimumAtTrueScale) {
  const SceneDataset ds = generate_scene(body(), small_scene(20, 20, 6, false));
  const MotionModelNet net = tiny_net(1);
  Problem p = problem_for(ds, &net);
  p.config.frozen_predictions = true;
  p.frozen = truth_predictions(ds.truth, net.history());
  const StateVector x = truth_state(ds);
  auto rescaled = [&](double a) {
    StateVector y = x;
    y.s *= a;
    for (auto& h : y.humans) h.r *= a;
    for (auto& l : y.landmarks) l *= a;
    return total_cost(y, p);
  };
  const double c1 = rescaled(1.0);
  EXPECT_LT(c1, 1e-8);
  for (double a : {0.5, 0.9, 0.99, 1.01, 1.1, 2.0}) EXPECT_GT(rescaled(a), c1 + 1e-8) << a;
  EXPECT_LT(rescaled(0.99), rescaled(0.9));
  EXPECT_LT(rescaled(1.01), rescaled(1.1));
}

TEST(MotionResidual, GaugeInvariant) {
  ToyCase t = toy(13);
  const Problem p = problem_for(t.ds, &t.net);
  const Pose6D g{Vec3(1.0, -2.0, 0.5), Vec3(0.3, -0.2, 0.9)};
  StateVector y = t.x;
  for (auto& h : y.humans) h = pose_compose(g, h);
  const int k = 2;
  EXPECT_LT((e_motion(t.x, p, k) - e_motion(y, p, k)).norm(), 1e-9);
}

TEST(MotionResidual, MatchesRelativeTranslation) {
  ToyCase t = toy(13);
  const Problem p = problem_for(t.ds, &t.net);
  const MotionPrediction pred = predict_motion(t.x, p, 2);
  const Pose6D& a = t.x.humans[1];
  const Vec3 expect = pred.translation - a.rotation().transpose() * (t.x.humans[2].r - a.r);
  EXPECT_LT((e_motion(t.x, p, 2) - expect).norm(), 1e-12);
  EXPECT_THROW(e_motion(t.x, p, 1), InvalidArgument);
}

TEST(ProblemChecks, IndexMismatchesThrow) {
  ToyCase t = toy(3);
  Problem p = problem_for(t.ds, &t.net);
  StateVector few = t.x;
  few.landmarks.resize(2);
  EXPECT_THROW(total_cost(few, p), InvalidArgument);
  StateVector short_x = t.x;
  short_x.cameras.pop_back();
  EXPECT_THROW(total_cost(short_x, p), InvalidArgument);
  Problem q = p;
  q.landmark_active.assign(1, {});
  EXPECT_THROW(total_cost(t.x, q), InvalidArgument);
  StateVector neg = t.x;
  neg.s = -1;
  EXPECT_THROW(total_cost(neg, p), InvalidArgument);
}

TEST(ProblemChecks, InactiveLandmarksContributeNothing) {
  ToyCase t = toy(3);
  Problem p = with_only(problem_for(t.ds, &t.net), "landmarks");
  for (const auto& fm : t.ds.measurements) p.landmark_active.emplace_back(fm.landmarks.size(), 0);
  EXPECT_EQ(total_cost(t.x, p), 0.0);
}

TEST(Hessian, GaussNewtonBlockIsSymmetricPositiveSemidefinite) {
  ToyCase t = toy(4);
  const Problem p = problem_for(t.ds, &t.net);
  const StateLayout lay(t.x);
  BlockHessian h(lay);
  evaluate_cost(t.x, p, nullptr, &h);
  std::vector<int> index(static_cast<std::size_t>(lay.size()));
  for (int i = 0; i < lay.size(); ++i) index[static_cast<std::size_t>(i)] = i;
  const Eigen::SparseMatrix<double> lower = h.lower(index, lay.size());
  const Eigen::SparseMatrix<double> full = lower.selfadjointView<Eigen::Lower>();
  const Eigen::MatrixXd dense(full);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1e-8 * es.eigenvalues().maxCoeff());
}
