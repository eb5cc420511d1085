#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Sparse>

#include "bodyslam/bodymodel.hpp"
#include "bodyslam/camera.hpp"
#include "bodyslam/errors.hpp"
#include "bodyslam/motionmodel.hpp"
#include "bodyslam/simulator.hpp"
#include "bodyslam/state.hpp"

namespace bodyslam {

// ---------------------------------------------------------------------------
// Robust losses, written as functions of the squared residual norm q.

enum class RobustKind { none, cauchy, geman_mcclure };

struct RobustLoss {
  RobustKind kind = RobustKind::none;
  double scale = 1.0;

  double rho(double q) const {
    const double c2 = scale * scale;
    switch (kind) {
      case RobustKind::none: return q;
      case RobustKind::cauchy: return c2 * std::log1p(q / c2);
      case RobustKind::geman_mcclure: return c2 * q / (c2 + q);
    }
    return q;
  }
  // d rho / d q; the IRLS weight.
  double weight(double q) const {
    const double c2 = scale * scale;
    switch (kind) {
      case RobustKind::none: return 1.0;
      case RobustKind::cauchy: return 1.0 / (1.0 + q / c2);
      case RobustKind::geman_mcclure: return c2 * c2 / ((c2 + q) * (c2 + q));
    }
    return 1.0;
  }
  // d rho(r^2) / d r for a scalar residual magnitude r.
  double influence(double r) const { return 2.0 * r * weight(r * r); }
};

inline const char* to_string(RobustKind k) {
  switch (k) {
    case RobustKind::none: return "none";
    case RobustKind::cauchy: return "cauchy";
    case RobustKind::geman_mcclure: return "geman_mcclure";
  }
  return "?";
}

inline RobustKind robust_kind_from_string(const std::string& s) {
  if (s == "none") return RobustKind::none;
  if (s == "cauchy") return RobustKind::cauchy;
  if (s == "geman_mcclure" || s == "geman-mcclure") return RobustKind::geman_mcclure;
  throw ConfigError("unknown robust loss '" + s + "'");
}

// Keypoint detection std b used for the landmark weight 64 / b^2.
inline constexpr double kKeypointStdPx = 2.25;

struct FactorWeights {
  double lm = 64.0 / (kKeypointStdPx * kKeypointStdPx);
  double mm = 100.0;
  double posture = 1.0;
  double shape = 1.0;
};

struct FactorConfig {
  FactorWeights weights;
  RobustLoss landmark_loss{RobustKind::cauchy, 1.0};
  RobustLoss joint_loss{RobustKind::geman_mcclure, 10.0};
  bool landmarks = true;
  bool joints = true;
  bool motion = true;   // motion-model translation and posture predictions
  bool posture = true;
  bool shape = true;
  bool hmr_posture_prior = true;     // measured posture prior on every frame
  bool motion_through_network = true; // gradient flows through the network inputs
  bool network_jacobian_in_hessian = true;
  bool frozen_predictions = false;    // predictions fixed at construction time
};

// Everything besides the state that the cost depends on.
struct Problem {
  const KinematicTemplate* body = nullptr;
  Intrinsics intrinsics;
  const MeasurementSet* measurements = nullptr;
  const MotionModelNet* net = nullptr;
  FactorConfig config;
  // Per frame and landmark observation: 1 if used (e.g. RANSAC inlier).
  std::vector<std::vector<char>> landmark_active;
  std::vector<std::optional<MotionPrediction>> frozen;

  int history() const { return net ? net->history() : 0; }
  bool has_prediction(int k) const { return config.motion && net && k >= net->history(); }

  void check(const StateVector& x) const {
    if (!body || !measurements) throw InvalidArgument("problem: missing body template or measurements");
    x.validate();
    if (static_cast<int>(measurements->size()) != x.frames()) throw InvalidArgument("problem: frame count mismatch");
    for (const auto& fm : *measurements) {
      for (const auto& o : fm.landmarks) {
        if (config.landmarks && (o.landmark < 0 || o.landmark >= x.num_landmarks())) throw InvalidArgument("problem: landmark index out of range");
      }
      for (const auto& o : fm.joints) {
        if (o.joint < 0 || o.joint >= kNumJoints) throw InvalidArgument("problem: joint index out of range");
        if (!(o.confidence > 0)) throw InvalidArgument("problem: joint confidence must be positive");
      }
    }
    if (!landmark_active.empty() && static_cast<int>(landmark_active.size()) != x.frames()) {
      throw InvalidArgument("problem: landmark mask frame count mismatch");
    }
  }

  bool landmark_used(int k, std::size_t i) const {
    return landmark_active.empty() || landmark_active[static_cast<std::size_t>(k)][i] != 0;
  }
};

// ---------------------------------------------------------------------------
// Individual residuals.

// z~ - u(T_WC^-1 l_W) with the camera at s r'. Empty when the landmark is
// at or behind the camera.
inline std::optional<Vec2> e_landmark(const StateVector& x, const Problem& p, int k, const LandmarkObservation& o) {
  const Pose6D cam = x.camera_pose(k);
  const Vec3 pc = cam.rotation().transpose() * (x.landmarks[static_cast<std::size_t>(o.landmark)] - cam.r);
  const auto uv = try_project(p.intrinsics, pc);
  if (!uv) return std::nullopt;
  return Vec2(o.uv - *uv);
}

inline std::optional<Vec2> e_joint(const StateVector& x, const Problem& p, int k, const JointObservation& o,
                                   const JointArray& joints_h) {
  const Pose6D cam = x.camera_pose(k);
  const Vec3 pw = pose_apply(x.humans[static_cast<std::size_t>(k)], joints_h[o.joint]);
  const auto uv = try_project(p.intrinsics, cam.rotation().transpose() * (pw - cam.r));
  if (!uv) return std::nullopt;
  return Vec2(o.uv - *uv);
}

inline std::optional<Vec2> e_joint(const StateVector& x, const Problem& p, int k, const JointObservation& o) {
  return e_joint(x, p, k, o, forward_kinematics(*p.body, x.beta, x.theta[static_cast<std::size_t>(k)]));
}

// Network input for predicting frame k from frames k-n..k-1 of the state.
inline Eigen::VectorXd motion_input(const StateVector& x, int k, int n) {
  std::vector<Mat3> rots;
  std::vector<PostureVector> posts;
  for (int i = k - n; i < k; ++i) {
    rots.push_back(x.humans[static_cast<std::size_t>(i)].rotation());
    posts.push_back(x.theta[static_cast<std::size_t>(i)]);
  }
  return assemble_input(relative_history(rots, posts), x.beta);
}

inline MotionPrediction predict_motion(const StateVector& x, const Problem& p, int k) {
  if (p.config.frozen_predictions && static_cast<std::size_t>(k) < p.frozen.size() && p.frozen[static_cast<std::size_t>(k)]) {
    return *p.frozen[static_cast<std::size_t>(k)];
  }
  const Eigen::VectorXd in = motion_input(x, k, p.history());
  return prediction_from_trace(*p.net, forward_trace(*p.net, in), in);
}

// Predictions at the given state for every frame that has one.
inline std::vector<std::optional<MotionPrediction>> freeze_predictions(const StateVector& x, const Problem& p) {
  std::vector<std::optional<MotionPrediction>> out(static_cast<std::size_t>(x.frames()));
  if (!p.net) return out;
  Problem q = p;
  q.config.frozen_predictions = false;
  for (int k = p.history(); k < x.frames(); ++k) out[static_cast<std::size_t>(k)] = predict_motion(x, q, k);
  return out;
}

// Exact predictions read off a ground-truth trajectory, for frozen mode.
inline std::vector<std::optional<MotionPrediction>> truth_predictions(const GroundTruth& gt, int history) {
  std::vector<std::optional<MotionPrediction>> out(gt.humans.size());
  for (std::size_t k = static_cast<std::size_t>(history); k < gt.humans.size(); ++k) {
    MotionPrediction m;
    m.translation = relative_translation(gt.humans[k - 1], gt.humans[k].r);
    m.pose = relative_target(gt.humans[k - 1].rotation(), gt.humans[k].rotation(), gt.theta[k]);
    out[k] = m;
  }
  return out;
}

// p~ - C_WH_{k-1}^T (p_WH_k - p_WH_{k-1}), in metres in frame H_{k-1}.
inline Vec3 e_motion(const StateVector& x, const MotionPrediction& pred, int k) {
  const Pose6D& prev = x.humans[static_cast<std::size_t>(k - 1)];
  return pred.translation - relative_translation(prev, x.humans[static_cast<std::size_t>(k)].r);
}

inline Vec3 e_motion(const StateVector& x, const Problem& p, int k) {
  if (!p.has_prediction(k)) throw InvalidArgument("e_motion: no motion prediction for frame " + std::to_string(k));
  return e_motion(x, predict_motion(x, p, k), k);
}

// theta~_k - theta_k against the motion-model prediction.
inline PostureVector e_posture(const StateVector& x, const MotionPrediction& pred, int k) {
  return pred.pose.tail<kPostureDim>() - x.theta[static_cast<std::size_t>(k)];
}

// theta~_k - theta_k against the measured posture.
inline PostureVector e_posture_measured(const StateVector& x, const Problem& p, int k) {
  return (*p.measurements)[static_cast<std::size_t>(k)].body.theta - x.theta[static_cast<std::size_t>(k)];
}

inline PostureVector e_posture(const StateVector& x, const Problem& p, int k) {
  if (p.has_prediction(k)) return e_posture(x, predict_motion(x, p, k), k);
  return e_posture_measured(x, p, k);
}

inline ShapeVector e_shape(const StateVector& x, const Problem& p, int k) {
  return (*p.measurements)[static_cast<std::size_t>(k)].body.beta - x.beta;
}

// ---------------------------------------------------------------------------
// Sparse normal equations, accumulated block by block.

class BlockHessian {
 public:
  explicit BlockHessian(const StateLayout& lay) : lay_(lay) {}

  const StateLayout& layout() const { return lay_; }

  // H(a, b) += J_a^T diag(w) J_b for every pair with a >= b.
  void add(const std::vector<int>& ids, const std::vector<Eigen::MatrixXd>& jac, const Eigen::VectorXd& w) {
    std::vector<Eigen::MatrixXd> wj;
    for (const auto& j : jac) wj.push_back(w.asDiagonal() * j);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = 0; j < ids.size(); ++j) {
        if (ids[i] < ids[j]) continue;
        block(ids[i], ids[j]).noalias() += jac[i].transpose() * wj[j];
      }
    }
  }

  Eigen::MatrixXd& block(int a, int b) {
    const std::uint64_t key = (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
    auto it = blocks_.find(key);
    if (it == blocks_.end()) {
      it = blocks_.emplace(key, Eigen::MatrixXd::Zero(lay_.block_size(a), lay_.block_size(b))).first;
    }
    return it->second;
  }

  // Lower triangle over the free coordinates. index maps full coordinates
  // to reduced ones (-1 when frozen).
  Eigen::SparseMatrix<double> lower(const std::vector<int>& index, int n) const {
    std::vector<Eigen::Triplet<double>> trip;
    std::size_t total = 0;
    for (const auto& kv : blocks_) total += static_cast<std::size_t>(kv.second.size());
    trip.reserve(total);
    for (const auto& kv : blocks_) {
      const int a = static_cast<int>(kv.first >> 32);
      const int b = static_cast<int>(kv.first & 0xffffffffu);
      const int oa = lay_.block_offset(a), ob = lay_.block_offset(b);
      const Eigen::MatrixXd& m = kv.second;
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const int gc = index[static_cast<std::size_t>(ob + c)];
        if (gc < 0) continue;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          const int gr = index[static_cast<std::size_t>(oa + r)];
          if (gr < 0) continue;
          if (gr >= gc) trip.emplace_back(gr, gc, m(r, c));
          else if (a == b) continue;  // upper half of a diagonal block
          else trip.emplace_back(gc, gr, m(r, c));
        }
      }
    }
    Eigen::SparseMatrix<double> h(n, n);
    h.setFromTriplets(trip.begin(), trip.end());
    return h;
  }

 private:
  StateLayout lay_;
  std::unordered_map<std::uint64_t, Eigen::MatrixXd> blocks_;
};

struct CostBreakdown {
  double landmark = 0, joint = 0, motion = 0, posture = 0, shape = 0;
  int dropped = 0;  // residuals skipped because the point was behind a camera
  double total() const { return landmark + joint + motion + posture + shape; }
};

namespace detail {

// Derivatives of one network input with respect to the state, applied to
// an input-space gradient (input_dim x m). Adds the chained result to the
// per-block accumulators through the callback add(block_id, m x size).
template <typename AddFn>
void chain_network_input(const StateVector& x, const StateLayout& lay, int k, int n, const Eigen::MatrixXd& d_in, AddFn&& add) {
  const int a = k - 1;
  const Mat3 ra = x.humans[static_cast<std::size_t>(a)].rotation();
  const Mat3 jr_a = so3_right_jacobian(x.humans[static_cast<std::size_t>(a)].phi);
  const Eigen::Index m = d_in.cols();
  Eigen::MatrixXd g_phi_a = Eigen::MatrixXd::Zero(m, 3);
  for (int i = 0; i < n; ++i) {
    const int b = k - n + i;
    const Eigen::MatrixXd d_omega = d_in.middleRows(i * kFullPoseDim, 3);          // 3 x m
    const Eigen::MatrixXd d_theta = d_in.middleRows(i * kFullPoseDim + 3, kPostureDim);
    add(lay.theta_block(b), Eigen::MatrixXd(d_theta.transpose()));
    if (b == a) continue;  // root part of the last entry is identically zero
    const Mat3 rb = x.humans[static_cast<std::size_t>(b)].rotation();
    const Mat3 q = ra.transpose() * rb;
    const Mat3 jinv = so3_right_jacobian_inv(so3_log(q));
    const Mat3 d_b = jinv * so3_right_jacobian(x.humans[static_cast<std::size_t>(b)].phi);
    const Mat3 d_a = -jinv * q.transpose() * jr_a;
    Eigen::MatrixXd hb = Eigen::MatrixXd::Zero(m, 6);
    hb.rightCols<3>() = d_omega.transpose() * d_b;
    add(lay.human_block(b), hb);
    g_phi_a += d_omega.transpose() * d_a;
  }
  Eigen::MatrixXd ha = Eigen::MatrixXd::Zero(m, 6);
  ha.rightCols<3>() = g_phi_a;
  add(lay.human_block(a), ha);
  add(lay.shape_block(), Eigen::MatrixXd(d_in.bottomRows(kShapeDim).transpose()));
}

}  // namespace detail

// Evaluates the total cost, and optionally its exact gradient and the
// Gauss-Newton approximation of the Hessian (with IRLS weights for the
// robust terms). Cost convention: sum of lambda * rho(||e||^2).
inline double evaluate_cost(const StateVector& x, const Problem& p, Eigen::VectorXd* grad = nullptr,
                            BlockHessian* hess = nullptr, CostBreakdown* parts = nullptr) {
  p.check(x);
  const StateLayout lay(x);
  const FactorConfig& cfg = p.config;
  const FactorWeights& w = cfg.weights;
  const MeasurementSet& meas = *p.measurements;
  CostBreakdown cb;
  if (grad) *grad = Eigen::VectorXd::Zero(lay.size());
  auto add_grad = [&](int block, const Eigen::VectorXd& g) {
    grad->segment(lay.block_offset(block), lay.block_size(block)) += g;
  };

  // Motion-model predictions that depend on the state, evaluated as one
  // batch.
  std::vector<int> live_col(static_cast<std::size_t>(x.frames()), -1);
  Eigen::MatrixXd raw, cot_t, cot_p;
  std::optional<ForwardTrace> trace;
  struct PendingMotion {
    int k, col;
    Eigen::Matrix<double, 3, 6> dm_prev, dm_cur;
  };
  std::vector<PendingMotion> pending;
  {
    std::vector<int> frames;
    for (int k = 0; k < x.frames(); ++k) {
      const auto ki = static_cast<std::size_t>(k);
      if (!p.has_prediction(k)) continue;
      if (cfg.frozen_predictions && ki < p.frozen.size() && p.frozen[ki]) continue;
      live_col[ki] = static_cast<int>(frames.size());
      frames.push_back(k);
    }
    if (!frames.empty()) {
      const auto m = static_cast<Eigen::Index>(frames.size());
      raw.resize(p.net->input_dim(), m);
      for (Eigen::Index c = 0; c < m; ++c) raw.col(c) = motion_input(x, frames[static_cast<std::size_t>(c)], p.history());
      trace = forward_normalized(*p.net, normalize_inputs(*p.net, raw));
      cot_t = Eigen::MatrixXd::Zero(3, m);
      cot_p = Eigen::MatrixXd::Zero(kFullPoseDim, m);
    }
  }

  for (int k = 0; k < x.frames(); ++k) {
    const auto ki = static_cast<std::size_t>(k);
    const FrameMeasurements& fm = meas[ki];
    const Pose6D& cam = x.cameras[ki];
    const Mat3 rc = cam.rotation();
    const Vec3 cpos = x.s * cam.r;
    const Mat3 jr_c = so3_right_jacobian(cam.phi);

    // Derivatives of p_C = R_c^T (X - s r') shared by both reprojection terms.
    auto camera_jac = [&](const Vec3& pc, const Mat23& pj, Eigen::Matrix<double, 2, 1>& d_s, Eigen::Matrix<double, 2, 6>& d_cam) {
      const Mat23 a = -pj;  // residual = z - u
      d_s = a * (-(rc.transpose() * cam.r));
      d_cam.leftCols<3>() = a * (-x.s * rc.transpose());
      d_cam.rightCols<3>() = a * (hat(pc) * jr_c);
    };

    if (cfg.landmarks) {
      for (std::size_t i = 0; i < fm.landmarks.size(); ++i) {
        if (!p.landmark_used(k, i)) continue;
        const auto& o = fm.landmarks[i];
        const Vec3& l = x.landmarks[static_cast<std::size_t>(o.landmark)];
        const Vec3 pc = rc.transpose() * (l - cpos);
        const auto uv = try_project(p.intrinsics, pc);
        if (!uv) {
          ++cb.dropped;
          continue;
        }
        const Vec2 e = o.uv - *uv;
        const double q = e.squaredNorm();
        cb.landmark += w.lm * cfg.landmark_loss.rho(q);
        if (!grad && !hess) continue;
        const double wt = w.lm * cfg.landmark_loss.weight(q);
        const Mat23 pj = project_jacobian(p.intrinsics, pc);
        Eigen::Matrix<double, 2, 1> d_s;
        Eigen::Matrix<double, 2, 6> d_cam;
        camera_jac(pc, pj, d_s, d_cam);
        const Mat23 d_l = -pj * rc.transpose();
        if (grad) {
          add_grad(lay.scale_block(), 2 * wt * d_s.transpose() * e);
          add_grad(lay.camera_block(k), 2 * wt * d_cam.transpose() * e);
          add_grad(lay.landmark_block(o.landmark), 2 * wt * d_l.transpose() * e);
        }
        if (hess) {
          hess->add({lay.scale_block(), lay.camera_block(k), lay.landmark_block(o.landmark)}, {d_s, d_cam, d_l},
                    Eigen::Vector2d::Constant(2 * wt));
        }
      }
    }

    if (cfg.joints && !fm.joints.empty()) {
      const FkResult fk = forward_kinematics_full(*p.body, x.beta, x.theta[ki]);
      std::optional<FkJacobians> fj;
      const Pose6D& hum = x.humans[ki];
      const Mat3 rh = hum.rotation();
      const Mat3 jr_h = so3_right_jacobian(hum.phi);
      const int nj = static_cast<int>(fm.joints.size());
      Eigen::MatrixXd j_s, j_cam, j_hum, j_th, j_b;
      Eigen::VectorXd res, wts;
      if (grad || hess) {
        fj = forward_kinematics_jacobians(*p.body, fk, x.theta[ki]);
        j_s = Eigen::MatrixXd::Zero(2 * nj, 1);
        j_cam = Eigen::MatrixXd::Zero(2 * nj, 6);
        j_hum = Eigen::MatrixXd::Zero(2 * nj, 6);
        j_th = Eigen::MatrixXd::Zero(2 * nj, kPostureDim);
        j_b = Eigen::MatrixXd::Zero(2 * nj, kShapeDim);
        res = Eigen::VectorXd::Zero(2 * nj);
        wts = Eigen::VectorXd::Zero(2 * nj);
      }
      for (int i = 0; i < nj; ++i) {
        const auto& o = fm.joints[static_cast<std::size_t>(i)];
        const Vec3 xh = fk.joints[o.joint];
        const Vec3 xw = rh * xh + hum.r;
        const Vec3 pc = rc.transpose() * (xw - cpos);
        const auto uv = try_project(p.intrinsics, pc);
        if (!uv) {
          ++cb.dropped;
          continue;
        }
        const Vec2 e = o.uv - *uv;
        const double q = e.squaredNorm();
        const double lam = 1.0 / (o.confidence * o.confidence);
        cb.joint += lam * cfg.joint_loss.rho(q);
        if (!grad && !hess) continue;
        const Mat23 pj = project_jacobian(p.intrinsics, pc);
        Eigen::Matrix<double, 2, 1> d_s;
        Eigen::Matrix<double, 2, 6> d_cam;
        camera_jac(pc, pj, d_s, d_cam);
        const Mat23 d_xw = -pj * rc.transpose();
        j_s.middleRows<2>(2 * i) = d_s;
        j_cam.middleRows<2>(2 * i) = d_cam;
        j_hum.block<2, 3>(2 * i, 0) = d_xw;
        j_hum.block<2, 3>(2 * i, 3) = d_xw * (-rh * hat(xh) * jr_h);
        j_th.middleRows<2>(2 * i) = d_xw * rh * fj->d_theta.middleRows<3>(3 * o.joint);
        j_b.middleRows<2>(2 * i) = d_xw * rh * fj->d_beta.middleRows<3>(3 * o.joint);
        res.segment<2>(2 * i) = e;
        wts.segment<2>(2 * i).setConstant(2 * lam * cfg.joint_loss.weight(q));
      }
      if (grad) {
        const Eigen::VectorXd we = wts.cwiseProduct(res);
        add_grad(lay.scale_block(), j_s.transpose() * we);
        add_grad(lay.camera_block(k), j_cam.transpose() * we);
        add_grad(lay.human_block(k), j_hum.transpose() * we);
        add_grad(lay.theta_block(k), j_th.transpose() * we);
        add_grad(lay.shape_block(), j_b.transpose() * we);
      }
      if (hess) {
        hess->add({lay.scale_block(), lay.camera_block(k), lay.human_block(k), lay.theta_block(k), lay.shape_block()},
                  {j_s, j_cam, j_hum, j_th, j_b}, wts);
      }
    }

    if (cfg.shape) {
      const ShapeVector e = e_shape(x, p, k);
      cb.shape += w.shape * e.squaredNorm();
      if (grad) add_grad(lay.shape_block(), -2 * w.shape * e);
      if (hess) hess->block(lay.shape_block(), lay.shape_block()).diagonal().array() += 2 * w.shape;
    }

    const bool predicted = p.has_prediction(k);
    if (cfg.posture && (!predicted || cfg.hmr_posture_prior)) {
      const PostureVector e = e_posture_measured(x, p, k);
      cb.posture += w.posture * e.squaredNorm();
      if (grad) add_grad(lay.theta_block(k), -2 * w.posture * e);
      if (hess) hess->block(lay.theta_block(k), lay.theta_block(k)).diagonal().array() += 2 * w.posture;
    }

    if (predicted) {
      const int col = live_col[ki];
      const bool live = col >= 0;
      const MotionPrediction pred = live ? prediction_from_trace(*p.net, *trace, raw.col(col), col) : *p.frozen[ki];
      const Vec3 em = e_motion(x, pred, k);
      cb.motion += w.mm * em.squaredNorm();
      const PostureVector ep = e_posture(x, pred, k);
      if (cfg.posture) cb.posture += w.posture * ep.squaredNorm();

      const Pose6D& prev = x.humans[static_cast<std::size_t>(k - 1)];
      const Mat3 ra = prev.rotation();
      const Vec3 d = x.humans[ki].r - prev.r;
      // Direct dependence of e_motion on the human poses.
      Eigen::Matrix<double, 3, 6> dm_prev = Eigen::Matrix<double, 3, 6>::Zero();
      Eigen::Matrix<double, 3, 6> dm_cur = Eigen::Matrix<double, 3, 6>::Zero();
      dm_prev.leftCols<3>() = ra.transpose();
      dm_prev.rightCols<3>() = -hat(ra.transpose() * d) * so3_right_jacobian(prev.phi);
      dm_cur.leftCols<3>() = -ra.transpose();
      const bool through = live && cfg.motion_through_network;

      if (grad) {
        add_grad(lay.human_block(k - 1), 2 * w.mm * dm_prev.transpose() * em);
        add_grad(lay.human_block(k), 2 * w.mm * dm_cur.transpose() * em);
        if (cfg.posture) add_grad(lay.theta_block(k), -2 * w.posture * ep);
        if (through) {
          cot_t.col(col) = 2 * w.mm * em;
          if (cfg.posture) cot_p.col(col).tail<kPostureDim>() = 2 * w.posture * ep;
        }
      }
      if (hess) {
        pending.push_back({k, through && cfg.network_jacobian_in_hessian ? col : -1, dm_prev, dm_cur});
        if (cfg.posture) {
          // Posture prediction: exact -I on theta_k and the residual path
          // (+I) on theta_{k-1}; the rest of the network is left out.
          const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(kPostureDim, kPostureDim);
          if (through) {
            hess->add({lay.theta_block(k), lay.theta_block(k - 1)}, {-eye, eye},
                      Eigen::VectorXd::Constant(kPostureDim, 2 * w.posture));
          } else {
            hess->block(lay.theta_block(k), lay.theta_block(k)).diagonal().array() += 2 * w.posture;
          }
        }
      }
    }
  }

  // Network-input terms, one batched reverse pass for all frames.
  if (trace && grad && cfg.motion_through_network) {
    const Eigen::MatrixXd d_in = input_vjp(*p.net, *trace, cot_t, cot_p);
    for (int k = 0; k < x.frames(); ++k) {
      const int col = live_col[static_cast<std::size_t>(k)];
      if (col < 0) continue;
      detail::chain_network_input(x, lay, k, p.history(), d_in.col(col),
                                  [&](int b, const Eigen::MatrixXd& g) { add_grad(b, g.transpose().col(0)); });
    }
  }
  if (hess) {
    std::array<Eigen::MatrixXd, 3> rows;
    if (trace && cfg.motion_through_network && cfg.network_jacobian_in_hessian) {
      const Eigen::Index m = trace->input.cols();
      for (int i = 0; i < 3; ++i) {
        Eigen::MatrixXd e = Eigen::MatrixXd::Zero(3, m);
        e.row(i).setOnes();
        rows[static_cast<std::size_t>(i)] = input_vjp(*p.net, *trace, e, Eigen::MatrixXd::Zero(kFullPoseDim, m));
      }
    }
    for (const auto& pm : pending) {
      std::vector<int> ids = {lay.human_block(pm.k - 1), lay.human_block(pm.k)};
      std::vector<Eigen::MatrixXd> jac = {pm.dm_prev, pm.dm_cur};
      if (pm.col >= 0) {
        Eigen::MatrixXd d_in(rows[0].rows(), 3);
        for (int i = 0; i < 3; ++i) d_in.col(i) = rows[static_cast<std::size_t>(i)].col(pm.col);
        detail::chain_network_input(x, lay, pm.k, p.history(), d_in, [&](int b, const Eigen::MatrixXd& g) {
          auto it = std::find(ids.begin(), ids.end(), b);
          if (it == ids.end()) {
            ids.push_back(b);
            jac.push_back(g);
          } else {
            jac[static_cast<std::size_t>(it - ids.begin())] += g;
          }
        });
      }
      hess->add(ids, jac, Eigen::Vector3d::Constant(2 * w.mm));
    }
  }
  if (parts) *parts = cb;
  return cb.total();
}

inline double total_cost(const StateVector& x, const Problem& p, CostBreakdown* parts = nullptr) {
  return evaluate_cost(x, p, nullptr, nullptr, parts);
}

inline double cost_and_gradient(const StateVector& x, const Problem& p, Eigen::VectorXd& grad) {
  return evaluate_cost(x, p, &grad);
}

}  // namespace bodyslam
