#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/SparseCholesky>

#include "bodyslam/camera.hpp"
#include "bodyslam/errors.hpp"
#include "bodyslam/factors.hpp"
#include "bodyslam/liegeom.hpp"
#include "bodyslam/random.hpp"
#include "bodyslam/simulator.hpp"
#include "bodyslam/state.hpp"

namespace bodyslam {

// ---------------------------------------------------------------------------
// PnP with RANSAC.

struct RansacConfig {
  int iterations = 100;
  int sample_size = 4;
  double threshold_px = 3.0;
  double min_inlier_ratio = 0.5;
  int refine_iterations = 10;
  std::uint64_t seed = 0;
};

struct RansacResult {
  std::vector<char> inliers;
  Pose6D pose;  // T_WC
  int inlier_count = 0;
};

namespace detail {

// Gauss-Newton on T_WC minimising squared reprojection error over the
// selected correspondences, started from guess.
inline Pose6D refine_pose(const std::vector<Vec3>& pts, const std::vector<Vec2>& uv, const std::vector<int>& idx,
                          const Intrinsics& k, Pose6D pose, int iterations) {
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    const Mat3 r = pose.rotation();
    const Mat3 jr = so3_right_jacobian(pose.phi);
    int used = 0;
    for (int i : idx) {
      const Vec3 pc = r.transpose() * (pts[static_cast<std::size_t>(i)] - pose.r);
      if (pc.z() <= kMinDepth) continue;
      const Vec2 e = uv[static_cast<std::size_t>(i)] - project(k, pc);
      const Mat23 pj = project_jacobian(k, pc);
      Eigen::Matrix<double, 2, 6> j;
      j.leftCols<3>() = pj * r.transpose();  // d e / d r = -pj * (-R^T)
      j.rightCols<3>() = -pj * hat(pc) * jr;
      h += j.transpose() * j;
      g += j.transpose() * e;
      ++used;
    }
    if (used < 3) break;
    h.diagonal().array() += 1e-9 + 1e-6 * h.diagonal().array();
    const Eigen::Matrix<double, 6, 1> d = -h.ldlt().solve(g);
    if (!d.allFinite()) break;
    pose.r += d.head<3>();
    pose.phi = wrap_rotvec(pose.phi + d.tail<3>());
    if (d.norm() < 1e-12) break;
  }
  return pose;
}

inline std::vector<double> reprojection_errors(const std::vector<Vec3>& pts, const std::vector<Vec2>& uv, const Intrinsics& k,
                                               const Pose6D& pose) {
  const Mat3 rt = pose.rotation().transpose();
  std::vector<double> err(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto p = try_project(k, rt * (pts[i] - pose.r));
    err[i] = p ? (uv[i] - *p).norm() : std::numeric_limits<double>::infinity();
  }
  return err;
}

}  // namespace detail

// Robust camera pose from 3D-2D correspondences: hypotheses from refined
// minimal samples, scored by the number of correspondences reprojecting
// within the threshold; the best consensus set is refined once more.
inline RansacResult ransac_filter(const std::vector<Vec3>& points, const std::vector<Vec2>& pixels, const Intrinsics& k,
                                  const Pose6D& guess, const RansacConfig& cfg = {}) {
  if (points.size() != pixels.size()) throw InvalidArgument("ransac_filter: size mismatch");
  const int n = static_cast<int>(points.size());
  if (n < 4 || n < cfg.sample_size) throw InitializationFailure("ransac_filter: need at least 4 correspondences");
  Rng rng(cfg.seed);
  auto count_inliers = [&](const Pose6D& pose, std::vector<char>& mask) {
    const auto err = detail::reprojection_errors(points, pixels, k, pose);
    int c = 0;
    mask.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      if (err[static_cast<std::size_t>(i)] < cfg.threshold_px) {
        mask[static_cast<std::size_t>(i)] = 1;
        ++c;
      }
    }
    return c;
  };

  RansacResult best;
  best.pose = guess;
  best.inlier_count = count_inliers(guess, best.inliers);
  std::vector<int> all(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  std::vector<char> mask;
  for (int it = 0; it < cfg.iterations && best.inlier_count < n; ++it) {
    std::vector<int> sample;
    while (static_cast<int>(sample.size()) < cfg.sample_size) {
      const int c = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
      if (std::find(sample.begin(), sample.end(), c) == sample.end()) sample.push_back(c);
    }
    const Pose6D hyp = detail::refine_pose(points, pixels, sample, k, guess, cfg.refine_iterations);
    const int c = count_inliers(hyp, mask);
    if (c > best.inlier_count) {
      best.inlier_count = c;
      best.pose = hyp;
      best.inliers = mask;
    }
  }
  if (best.inlier_count < std::max(4, static_cast<int>(std::ceil(cfg.min_inlier_ratio * n)))) {
    throw InitializationFailure("ransac_filter: no consensus (" + std::to_string(best.inlier_count) + " of " +
                                std::to_string(n) + " inliers)");
  }
  // Refine on the consensus set and re-classify, twice.
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<int> in;
    for (int i = 0; i < n; ++i) {
      if (best.inliers[static_cast<std::size_t>(i)]) in.push_back(i);
    }
    const Pose6D refined = detail::refine_pose(points, pixels, in, k, best.pose, 2 * cfg.refine_iterations);
    const int c = count_inliers(refined, mask);
    if (c < best.inlier_count) break;
    best.pose = refined;
    best.inlier_count = c;
    best.inliers = mask;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Optimisation.

enum class OptimizerKind { adam, gradient_descent, gauss_newton };

inline const char* to_string(OptimizerKind o) {
  switch (o) {
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::gradient_descent: return "gradient_descent";
    case OptimizerKind::gauss_newton: return "gn";
  }
  return "?";
}

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "gd" || s == "gradient_descent") return OptimizerKind::gradient_descent;
  if (s == "gn" || s == "gauss_newton" || s == "lm") return OptimizerKind::gauss_newton;
  throw ConfigError("unknown optimizer '" + s + "'");
}

struct LearningRates {
  double poses = 1e-3;
  double scale = 1e-2;
  double landmarks = 1e-3;
  double body = 1e-3;
};

struct OptimSchedule {
  int step1_iters = 200;
  int step2_iters = 100;
  OptimizerKind optimizer = OptimizerKind::adam;
  LearningRates learning_rates;
  double tolerance = 1e-9;  // relative cost decrease that ends a step early
  FreeMask allowed;         // blocks that may move at all

  void validate() const {
    if (step1_iters < 0 || step2_iters < 0 || step1_iters + step2_iters == 0) {
      throw ConfigError("schedule: iteration counts must be positive");
    }
  }
};

struct OptimResult {
  StateVector state;
  std::vector<double> trace;  // cost after every iteration, starting with the initial cost
  int step1_iterations = 0;
  int step2_iterations = 0;
  double initial_cost = 0;
  double final_cost = 0;
};

namespace detail {

inline FreeMask intersect(const FreeMask& a, const FreeMask& b) {
  FreeMask m;
  m.scale = a.scale && b.scale;
  m.cameras = a.cameras && b.cameras;
  m.humans = a.humans && b.humans;
  m.shape = a.shape && b.shape;
  m.posture = a.posture && b.posture;
  m.landmarks = a.landmarks && b.landmarks;
  m.anchor_first_camera = a.anchor_first_camera || b.anchor_first_camera;
  return m;
}

inline void check_finite(double c, const std::vector<double>& trace) {
  if (!std::isfinite(c)) throw Diverged("optimize: non-finite cost", trace);
}

// Costs below the floor are rounding noise; relative progress there means nothing.
inline constexpr double kCostFloor = 1e-18;

inline bool converged(double before, double after, double tol) {
  if (after < kCostFloor) return true;
  return before - after <= tol * std::max(std::abs(before), 1e-300);
}

// Levenberg-Marquardt with Marquardt diagonal scaling and Nielsen damping
// updates. Only cost-decreasing steps are accepted, so the trace is
// monotone.
inline int run_lm(StateVector& x, const Problem& p, const FreeMask& mask, int iters, double tol, std::vector<double>& trace) {
  const StateLayout lay(x);
  const Eigen::VectorXd free = mask.vector(lay);
  std::vector<int> index(static_cast<std::size_t>(lay.size()), -1);
  std::vector<int> coords;
  for (int i = 0; i < lay.size(); ++i) {
    if (free[i] != 0) {
      index[static_cast<std::size_t>(i)] = static_cast<int>(coords.size());
      coords.push_back(i);
    }
  }
  const int n = static_cast<int>(coords.size());
  if (n == 0) return 0;
  double mu = 1e-4, nu = 2.0;
  int done = 0;
  Eigen::VectorXd g;
  BlockHessian hess(lay);
  double cost = evaluate_cost(x, p, &g, &hess);
  check_finite(cost, trace);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> solver;
  // The symbolic analysis is reused while the sparsity pattern is unchanged.
  std::vector<int> pattern_outer, pattern_inner;
  auto same_pattern = [&](const Eigen::SparseMatrix<double>& a) {
    return static_cast<std::size_t>(a.outerSize() + 1) == pattern_outer.size() &&
           static_cast<std::size_t>(a.nonZeros()) == pattern_inner.size() &&
           std::equal(pattern_outer.begin(), pattern_outer.end(), a.outerIndexPtr()) &&
           std::equal(pattern_inner.begin(), pattern_inner.end(), a.innerIndexPtr());
  };
  for (; done < iters; ++done) {
    Eigen::VectorXd gr(n);
    for (int i = 0; i < n; ++i) gr[i] = g[coords[static_cast<std::size_t>(i)]];
    if (gr.lpNorm<Eigen::Infinity>() < 1e-14) break;
    Eigen::SparseMatrix<double> h = hess.lower(index, n);
    Eigen::VectorXd diag = h.diagonal();
    bool accepted = false;
    while (!accepted) {
      Eigen::SparseMatrix<double> a = h;
      for (int i = 0; i < n; ++i) a.coeffRef(i, i) += mu * std::max(diag[i], 1e-6);
      a.makeCompressed();
      if (!same_pattern(a)) {
        solver.analyzePattern(a);
        pattern_outer.assign(a.outerIndexPtr(), a.outerIndexPtr() + a.outerSize() + 1);
        pattern_inner.assign(a.innerIndexPtr(), a.innerIndexPtr() + a.nonZeros());
      }
      solver.factorize(a);
      if (solver.info() != Eigen::Success) {
        mu *= nu;
        nu *= 2;
        if (mu > 1e16) break;
        continue;
      }
      const Eigen::VectorXd dr = solver.solve(-gr);
      Eigen::VectorXd d = Eigen::VectorXd::Zero(lay.size());
      for (int i = 0; i < n; ++i) d[coords[static_cast<std::size_t>(i)]] = dr[i];
      const StateVector xn = retract(x, d);
      const double cn = xn.s > 0 ? total_cost(xn, p) : std::numeric_limits<double>::infinity();
      const double predicted = -(dr.dot(gr) + 0.5 * dr.dot(h.selfadjointView<Eigen::Lower>() * dr));
      if (std::isfinite(cn) && cn < cost) {
        const double rho = predicted > 0 ? (cost - cn) / predicted : 0.5;
        mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
        nu = 2.0;
        x = xn;
        const double before = cost;
        hess = BlockHessian(lay);
        cost = evaluate_cost(x, p, &g, &hess);
        check_finite(cost, trace);
        trace.push_back(cost);
        accepted = true;
        if (converged(before, cost, tol)) return done + 1;
      } else {
        mu *= nu;
        nu *= 2;
        if (mu > 1e16) break;
      }
    }
    if (!accepted) break;
  }
  return done;
}

inline Eigen::VectorXd learning_rate_vector(const StateLayout& lay, const LearningRates& lr) {
  Eigen::VectorXd v(lay.size());
  v[lay.scale()] = lr.scale;
  v.segment<kShapeDim>(lay.beta()).setConstant(lr.body);
  for (int k = 0; k < lay.frames; ++k) {
    v.segment<12>(lay.frame(k)).setConstant(lr.poses);
    v.segment<kPostureDim>(lay.theta(k)).setConstant(lr.body);
  }
  v.tail(3 * lay.landmarks).setConstant(lr.landmarks);
  return v;
}

// Adam with per-block learning rates. Keeps the best state seen so the
// result never costs more than the start.
inline int run_adam(StateVector& x, const Problem& p, const FreeMask& mask, int iters, double tol, const LearningRates& lrs,
                    std::vector<double>& trace) {
  const StateLayout lay(x);
  const Eigen::VectorXd free = mask.vector(lay);
  const Eigen::VectorXd lr = learning_rate_vector(lay, lrs).cwiseProduct(free);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(lay.size()), v = Eigen::VectorXd::Zero(lay.size());
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Eigen::VectorXd g;
  double cost = cost_and_gradient(x, p, g);
  check_finite(cost, trace);
  StateVector best = x;
  double best_cost = cost;
  int it = 0;
  for (; it < iters; ++it) {
    if (g.cwiseProduct(free).lpNorm<Eigen::Infinity>() < 1e-14) break;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.cwiseAbs2();
    const double c1 = 1 - std::pow(b1, it + 1), c2 = 1 - std::pow(b2, it + 1);
    const Eigen::VectorXd step = -(lr.array() * (m.array() / c1) / ((v.array() / c2).sqrt() + eps)).matrix();
    StateVector xn = retract(x, step);
    if (!(xn.s > 0)) xn.s = x.s * 0.5;
    const double before = cost;
    x = xn;
    cost = cost_and_gradient(x, p, g);
    check_finite(cost, trace);
    trace.push_back(cost);
    if (cost < best_cost) {
      best_cost = cost;
      best = x;
    }
    if (std::abs(before - cost) <= tol * std::max(std::abs(before), 1e-300)) {
      ++it;
      break;
    }
  }
  x = best;
  return it;
}

// Steepest descent with a per-block step scaled by the learning rates and
// Armijo backtracking.
inline int run_gradient_descent(StateVector& x, const Problem& p, const FreeMask& mask, int iters, double tol,
                                const LearningRates& lrs, std::vector<double>& trace) {
  const StateLayout lay(x);
  const Eigen::VectorXd lr = learning_rate_vector(lay, lrs).cwiseProduct(mask.vector(lay));
  Eigen::VectorXd g;
  double cost = cost_and_gradient(x, p, g);
  check_finite(cost, trace);
  double scale = 1.0;
  int it = 0;
  for (; it < iters; ++it) {
    const Eigen::VectorXd dir = -lr.cwiseProduct(g);
    const double slope = dir.dot(g);
    if (!(slope < 0)) break;
    bool ok = false;
    for (int ls = 0; ls < 30; ++ls) {
      const StateVector xn = retract(x, scale * dir);
      const double cn = xn.s > 0 ? total_cost(xn, p) : std::numeric_limits<double>::infinity();
      if (std::isfinite(cn) && cn <= cost + 1e-4 * scale * slope) {
        x = xn;
        ok = true;
        break;
      }
      scale *= 0.5;
    }
    if (!ok) break;
    const double before = cost;
    cost = cost_and_gradient(x, p, g);
    check_finite(cost, trace);
    trace.push_back(cost);
    scale = std::min(1.0, scale * 2.0);
    if (converged(before, cost, tol)) {
      ++it;
      break;
    }
  }
  return it;
}

inline int run_step(StateVector& x, const Problem& p, const FreeMask& mask, int iters, const OptimSchedule& s,
                    std::vector<double>& trace) {
  if (iters <= 0) return 0;
  switch (s.optimizer) {
    case OptimizerKind::gauss_newton: return run_lm(x, p, mask, iters, s.tolerance, trace);
    case OptimizerKind::adam: return run_adam(x, p, mask, iters, s.tolerance, s.learning_rates, trace);
    case OptimizerKind::gradient_descent: return run_gradient_descent(x, p, mask, iters, s.tolerance, s.learning_rates, trace);
  }
  return 0;
}

}  // namespace detail

// Two-step schedule: first cameras, human poses, landmarks and scale with
// shape and posture held fixed; then every variable.
inline OptimResult optimize(const StateVector& init, const Problem& p, const OptimSchedule& schedule) {
  schedule.validate();
  p.check(init);
  OptimResult r;
  r.state = init;
  r.initial_cost = total_cost(init, p);
  r.trace.push_back(r.initial_cost);
  detail::check_finite(r.initial_cost, r.trace);
  FreeMask step1;
  step1.shape = false;
  step1.posture = false;
  r.step1_iterations = detail::run_step(r.state, p, detail::intersect(step1, schedule.allowed), schedule.step1_iters, schedule, r.trace);
  r.step2_iterations = detail::run_step(r.state, p, detail::intersect(FreeMask{}, schedule.allowed), schedule.step2_iters, schedule, r.trace);
  r.final_cost = total_cost(r.state, p);
  return r;
}

// ---------------------------------------------------------------------------
// Initialisation.

struct TriangulationConfig {
  double threshold_px = 4.0;
  int hypotheses = 60;
  double min_angle = 0.03;  // rad between the widest pair of inlier rays
};

// The visual front end is outside this library: camera poses are seeded by
// a simulated odometry estimate, i.e. the true trajectory expressed relative
// to the first camera, scaled by an arbitrary factor and perturbed.
struct InitConfig {
  double seed_scale = 1.0;
  double seed_position_noise = 0.01;   // metres, before scaling
  double seed_rotation_noise = 0.003;  // rad
  TriangulationConfig triangulation;
  int rounds = 2;  // triangulate / robust pose passes
  bool use_ransac = true;
  RansacConfig ransac;
  int ba_iterations = 50;
  double ba_tolerance = 1e-10;
  std::uint64_t seed = 0;
};

struct InitResult {
  StateVector state;
  std::vector<std::vector<char>> landmark_active;
  std::vector<Pose6D> seed_cameras;
  int outliers_rejected = 0;
};

// Expresses a world-frame trajectory relative to its first pose.
inline std::vector<Pose6D> anchor_to_first(const std::vector<Pose6D>& poses) {
  const Pose6D inv = pose_inverse(poses.front());
  std::vector<Pose6D> out;
  for (const auto& p : poses) out.push_back(pose_compose(inv, p));
  out.front() = Pose6D::identity();
  return out;
}

inline std::vector<Pose6D> seed_camera_trajectory(const SceneDataset& ds, const InitConfig& cfg) {
  Rng rng(cfg.seed ^ 0x5eedULL);
  std::vector<Pose6D> cams = anchor_to_first(ds.truth.cameras);
  for (std::size_t k = 0; k < cams.size(); ++k) {
    cams[k].r *= cfg.seed_scale;
    if (k == 0) continue;
    cams[k].r += cfg.seed_scale * rng.normal3(cfg.seed_position_noise);
    cams[k].phi = wrap_rotvec(cams[k].phi + rng.normal3(cfg.seed_rotation_noise));
  }
  return cams;
}

namespace detail {

// Homogeneous DLT over the selected observations.
inline std::optional<Vec3> triangulate_dlt(const std::vector<Pose6D>& inv_cams, const std::vector<std::pair<int, Vec2>>& obs,
                                           const std::vector<std::size_t>& use, const Intrinsics& k) {
  Eigen::MatrixXd a(2 * static_cast<Eigen::Index>(use.size()), 4);
  Eigen::Index row = 0;
  for (std::size_t i : use) {
    const Pose6D& inv = inv_cams[static_cast<std::size_t>(obs[i].first)];
    Eigen::Matrix<double, 3, 4> pm;
    pm.leftCols<3>() = inv.rotation();
    pm.col(3) = inv.r;
    const double x = (obs[i].second.x() - k.cx) / k.fx, y = (obs[i].second.y() - k.cy) / k.fy;
    a.row(row++) = x * pm.row(2) - pm.row(0);
    a.row(row++) = y * pm.row(2) - pm.row(1);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h[3]) < 1e-12) return std::nullopt;
  return Vec3(h.head<3>() / h[3]);
}

}  // namespace detail

// Robust triangulation: two-view hypotheses scored by consensus, then a
// linear refit on the inliers. keep marks the observations used.
inline std::optional<Vec3> triangulate(const std::vector<Pose6D>& cams, const std::vector<std::pair<int, Vec2>>& obs,
                                       const Intrinsics& k, const TriangulationConfig& cfg, Rng& rng, std::vector<char>& keep) {
  keep.assign(obs.size(), 0);
  if (obs.size() < 2) return std::nullopt;
  std::vector<Pose6D> inv(cams.size());
  for (std::size_t c = 0; c < cams.size(); ++c) inv[c] = pose_inverse(cams[c]);
  auto classify = [&](const Vec3& pt, std::vector<char>& mask) {
    int n = 0;
    mask.assign(obs.size(), 0);
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const auto uv = try_project(k, pose_apply(inv[static_cast<std::size_t>(obs[i].first)], pt));
      if (uv && (obs[i].second - *uv).norm() < cfg.threshold_px) {
        mask[i] = 1;
        ++n;
      }
    }
    return n;
  };
  std::optional<Vec3> best;
  int best_n = 0;
  std::vector<char> mask;
  const std::size_t m = obs.size();
  for (int h = 0; h < cfg.hypotheses; ++h) {
    const std::size_t i = rng.index(m), j = rng.index(m);
    if (i == j) continue;
    const auto pt = detail::triangulate_dlt(inv, obs, {i, j}, k);
    if (!pt) continue;
    const int n = classify(*pt, mask);
    if (n > best_n) {
      best_n = n;
      best = pt;
      keep = mask;
    }
  }
  if (!best || best_n < 2) return std::nullopt;
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<std::size_t> use;
    for (std::size_t i = 0; i < m; ++i) {
      if (keep[i]) use.push_back(i);
    }
    const auto pt = detail::triangulate_dlt(inv, obs, use, k);
    if (!pt) break;
    if (classify(*pt, mask) < best_n) break;
    best = pt;
    keep = mask;
    best_n = static_cast<int>(std::count(keep.begin(), keep.end(), 1));
  }
  // Reject points whose inlier rays are nearly parallel.
  double widest = 0.0;
  std::vector<Vec3> rays;
  for (std::size_t i = 0; i < m; ++i) {
    if (keep[i]) rays.push_back((*best - cams[static_cast<std::size_t>(obs[i].first)].r).normalized());
  }
  for (std::size_t a = 0; a < rays.size(); ++a) {
    for (std::size_t b = a + 1; b < rays.size(); ++b) widest = std::max(widest, std::acos(std::clamp(rays[a].dot(rays[b]), -1.0, 1.0)));
  }
  if (widest < cfg.min_angle) {
    keep.assign(m, 0);
    return std::nullopt;
  }
  return best;
}

// Landmark-only bundle adjustment at arbitrary scale (s = 1, first camera
// fixed), followed by human initialisation T_WH = T_WC T~_CH, beta as the
// mean of the measured shapes and theta as the measured postures.
inline InitResult initialize(const SceneDataset& ds, const KinematicTemplate& body, const InitConfig& cfg) {
  const int n = ds.frames();
  const Intrinsics& kk = ds.intrinsics();
  InitResult res;
  res.seed_cameras = seed_camera_trajectory(ds, cfg);
  std::vector<Pose6D> cams = res.seed_cameras;
  const int nl = static_cast<int>(ds.truth.landmarks.size());

  // Landmarks from the seed poses.
  std::vector<std::vector<std::pair<int, Vec2>>> tracks(static_cast<std::size_t>(nl));
  std::vector<std::vector<std::pair<int, std::size_t>>> where(static_cast<std::size_t>(nl));
  for (int k = 0; k < n; ++k) {
    const auto& obs = ds.measurements[static_cast<std::size_t>(k)].landmarks;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      tracks[static_cast<std::size_t>(obs[i].landmark)].push_back({k, obs[i].uv});
      where[static_cast<std::size_t>(obs[i].landmark)].push_back({k, i});
    }
  }
  std::vector<Vec3> landmarks(static_cast<std::size_t>(nl), Vec3::Zero());
  Rng rng(cfg.seed ^ 0x7a1aULL);
  for (int round = 0; round < std::max(1, cfg.rounds); ++round) {
    res.landmark_active.assign(static_cast<std::size_t>(n), {});
    for (int k = 0; k < n; ++k) {
      res.landmark_active[static_cast<std::size_t>(k)].assign(ds.measurements[static_cast<std::size_t>(k)].landmarks.size(), 1);
    }
    std::vector<char> triangulated(static_cast<std::size_t>(nl), 0);
    for (int l = 0; l < nl; ++l) {
      const auto li = static_cast<std::size_t>(l);
      std::vector<char> keep;
      TriangulationConfig tc = cfg.triangulation;
      if (round == 0) tc.threshold_px *= 2.0;  // seed poses are less accurate than refined ones
      const auto pt = triangulate(cams, tracks[li], kk, tc, rng, keep);
      if (pt) {
        landmarks[li] = *pt;
        triangulated[li] = 1;
      }
      for (std::size_t i = 0; i < where[li].size(); ++i) {
        const auto [k, idx] = where[li][i];
        if (!pt || !keep[i]) res.landmark_active[static_cast<std::size_t>(k)][idx] = 0;
      }
    }

    // Per-frame robust pose and outlier mask.
    if (!cfg.use_ransac) break;
    for (int k = 0; k < n; ++k) {
      const auto& obs = ds.measurements[static_cast<std::size_t>(k)].landmarks;
      std::vector<Vec3> pts;
      std::vector<Vec2> uvs;
      std::vector<std::size_t> ids;
      for (std::size_t i = 0; i < obs.size(); ++i) {
        if (!triangulated[static_cast<std::size_t>(obs[i].landmark)]) continue;
        pts.push_back(landmarks[static_cast<std::size_t>(obs[i].landmark)]);
        uvs.push_back(obs[i].uv);
        ids.push_back(i);
      }
      RansacConfig rc = cfg.ransac;
      rc.seed = cfg.ransac.seed + static_cast<std::uint64_t>(k);
      const RansacResult rr = ransac_filter(pts, uvs, kk, cams[static_cast<std::size_t>(k)], rc);
      for (std::size_t j = 0; j < ids.size(); ++j) {
        if (!rr.inliers[j]) res.landmark_active[static_cast<std::size_t>(k)][ids[j]] = 0;
      }
      if (k > 0) cams[static_cast<std::size_t>(k)] = rr.pose;
    }
  }
  for (const auto& f : res.landmark_active) {
    for (char a : f) res.outliers_rejected += a ? 0 : 1;
  }

  StateVector& x = res.state;
  x.s = 1.0;
  x.cameras = cams;
  x.landmarks = landmarks;
  for (int k = 0; k < n; ++k) {
    x.humans.push_back(Pose6D::identity());
    x.theta.push_back(PostureVector::Zero());
  }

  Problem ba;
  ba.body = &body;
  ba.intrinsics = kk;
  ba.measurements = &ds.measurements;
  ba.landmark_active = res.landmark_active;
  ba.config.joints = ba.config.motion = ba.config.posture = ba.config.shape = false;
  FreeMask mask;
  mask.scale = mask.humans = mask.shape = mask.posture = false;
  std::vector<double> trace;
  detail::run_lm(x, ba, mask, cfg.ba_iterations, cfg.ba_tolerance, trace);

  ShapeVector beta = ShapeVector::Zero();
  for (int k = 0; k < n; ++k) {
    const BodyMeasurement& bm = ds.measurements[static_cast<std::size_t>(k)].body;
    x.humans[static_cast<std::size_t>(k)] = pose_compose(x.camera_pose(k), bm.t_ch);
    x.theta[static_cast<std::size_t>(k)] = bm.theta;
    beta += bm.beta;
  }
  x.beta = beta / n;
  return res;
}

}  // namespace bodyslam
