#pragma once

#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bodyslam/bodymodel.hpp"
#include "bodyslam/errors.hpp"
#include "bodyslam/json_io.hpp"
#include "bodyslam/liegeom.hpp"
#include "bodyslam/simulator.hpp"
#include "bodyslam/state.hpp"

namespace bodyslam {

enum class AlignMode { se3, sim3 };

struct AteResult {
  double rms = 0.0;
  double mean = 0.0;
  SimTransform alignment;  // maps the estimate onto the ground truth
};

namespace detail {

inline AteResult residual_stats(std::span<const Vec3> est, std::span<const Vec3> gt, const SimTransform& t) {
  AteResult r;
  r.alignment = t;
  const Mat3 rot = t.rotation_matrix();
  double sq = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double e = (t.scale * (rot * est[i]) + t.translation - gt[i]).norm();
    sq += e * e;
    sum += e;
  }
  const auto n = static_cast<double>(est.size());
  r.rms = std::sqrt(sq / n);
  r.mean = sum / n;
  return r;
}

}  // namespace detail

// RMS position error after the least-squares SE(3) or Sim(3) alignment of
// est onto gt. In sim3 mode alignment.scale is the factor applied to the
// estimate.
inline AteResult ate(std::span<const Vec3> est, std::span<const Vec3> gt, AlignMode mode) {
  if (est.size() != gt.size()) throw InvalidArgument("ate: trajectories differ in length");
  if (est.size() < 3) throw InvalidArgument("ate: need at least 3 positions");
  return detail::residual_stats(est, gt, umeyama_align(est, gt, mode == AlignMode::sim3));
}

// ATE under a given alignment, e.g. one estimated on another trajectory.
inline AteResult ate_with(std::span<const Vec3> est, std::span<const Vec3> gt, const SimTransform& t) {
  if (est.size() != gt.size()) throw InvalidArgument("ate: trajectories differ in length");
  if (est.empty()) throw InvalidArgument("ate: empty trajectory");
  return detail::residual_stats(est, gt, t);
}

enum class AlignmentMethod { independent, camera_anchored, joint, first_frame };

inline const char* to_string(AlignmentMethod m) {
  switch (m) {
    case AlignmentMethod::independent: return "independent";
    case AlignmentMethod::camera_anchored: return "camera_anchored";
    case AlignmentMethod::joint: return "joint";
    case AlignmentMethod::first_frame: return "first_frame";
  }
  return "?";
}

inline AlignmentMethod alignment_method_from_string(const std::string& s) {
  if (s == "independent") return AlignmentMethod::independent;
  if (s == "camera_anchored") return AlignmentMethod::camera_anchored;
  if (s == "joint") return AlignmentMethod::joint;
  if (s == "first_frame") return AlignmentMethod::first_frame;
  throw InvalidArgument("unknown alignment method '" + s + "'");
}

// Camera poses, human centre positions and world joint positions of one
// sequence.
struct Trajectories {
  std::vector<Pose6D> cameras;
  std::vector<Vec3> humans;
  std::vector<JointArray> joints;

  std::vector<Vec3> camera_positions() const {
    std::vector<Vec3> out;
    for (const auto& c : cameras) out.push_back(c.r);
    return out;
  }
  std::vector<Vec3> joint_positions() const {
    std::vector<Vec3> out;
    for (const auto& f : joints) out.insert(out.end(), f.begin(), f.end());
    return out;
  }
};

inline Trajectories trajectories_from_state(const StateVector& x, const KinematicTemplate& body) {
  Trajectories t;
  for (int k = 0; k < x.frames(); ++k) {
    t.cameras.push_back(x.camera_pose(k));
    const Pose6D& h = x.humans[static_cast<std::size_t>(k)];
    t.humans.push_back(h.r);
    t.joints.push_back(joints_in_world(h, forward_kinematics(body, x.beta, x.theta[static_cast<std::size_t>(k)])));
  }
  return t;
}

inline Trajectories trajectories_from_truth(const GroundTruth& gt, const KinematicTemplate& body) {
  Trajectories t;
  t.cameras = gt.cameras;
  for (std::size_t k = 0; k < gt.humans.size(); ++k) {
    t.humans.push_back(gt.humans[k].r);
    t.joints.push_back(joints_in_world(gt.humans[k], forward_kinematics(body, gt.beta, gt.theta[k])));
  }
  return t;
}

struct TrajectoryErrorReport {
  double c_ate_se3 = 0, c_ate_sim3 = 0;
  double h_ate_se3 = 0, h_ate_sim3 = 0;
  double j_ate_se3 = 0, j_ate_sim3 = 0;
  double c_mean_se3 = 0, c_mean_sim3 = 0;
  double h_mean_se3 = 0, h_mean_sim3 = 0;
  double j_mean_se3 = 0, j_mean_sim3 = 0;
  double scale_estimate = 1.0;  // Sim(3) scale mapping the estimate onto ground truth
  AlignmentMethod method = AlignmentMethod::independent;
};

namespace detail {

// First-frame alignment: the rigid transform taking the first estimated
// camera pose onto the true one. With a scale, the scale about the first
// camera that best fits the remaining camera positions.
inline SimTransform first_frame_alignment(const Trajectories& est, const Trajectories& gt, bool with_scale) {
  const Pose6D e0 = est.cameras.front(), g0 = gt.cameras.front();
  const Mat3 rot = g0.rotation() * e0.rotation().transpose();
  double scale = 1.0;
  if (with_scale) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 1; i < est.cameras.size(); ++i) {
      const Vec3 a = rot * (est.cameras[i].r - e0.r);
      num += a.dot(gt.cameras[i].r - g0.r);
      den += a.squaredNorm();
    }
    if (den > 0) scale = num / den;
  }
  SimTransform t;
  t.scale = scale;
  t.rotation = so3_log(rot);
  t.translation = g0.r - scale * (rot * e0.r);
  return t;
}

}  // namespace detail

// Errors of an estimate under one of four alignment protocols:
// independent camera and human alignments; the camera alignment applied to
// both; one alignment fitted to both trajectories together; or alignment of
// the first camera pose only. Joints follow the human alignment.
inline TrajectoryErrorReport aligned_report(const Trajectories& est, const Trajectories& gt, AlignmentMethod method) {
  const std::size_t n = est.cameras.size();
  if (gt.cameras.size() != n || est.humans.size() != n || gt.humans.size() != n) {
    throw InvalidArgument("aligned_report: inconsistent trajectory lengths");
  }
  if (est.joints.size() != gt.joints.size() || (!est.joints.empty() && est.joints.size() != n)) {
    throw InvalidArgument("aligned_report: inconsistent joint trajectory lengths");
  }
  const auto ec = est.camera_positions(), gc = gt.camera_positions();
  const auto ej = est.joint_positions(), gj = gt.joint_positions();
  TrajectoryErrorReport r;
  r.method = method;
  for (AlignMode mode : {AlignMode::se3, AlignMode::sim3}) {
    const bool sim = mode == AlignMode::sim3;
    SimTransform tc, th;
    switch (method) {
      case AlignmentMethod::independent:
        tc = umeyama_align(ec, gc, sim);
        th = umeyama_align(est.humans, gt.humans, sim);
        break;
      case AlignmentMethod::camera_anchored:
        tc = th = umeyama_align(ec, gc, sim);
        break;
      case AlignmentMethod::joint: {
        std::vector<Vec3> a = ec, b = gc;
        a.insert(a.end(), est.humans.begin(), est.humans.end());
        b.insert(b.end(), gt.humans.begin(), gt.humans.end());
        tc = th = umeyama_align(a, b, sim);
        break;
      }
      case AlignmentMethod::first_frame:
        if (n < 1) throw InvalidArgument("aligned_report: empty trajectory");
        tc = th = detail::first_frame_alignment(est, gt, sim);
        break;
    }
    const AteResult c = ate_with(ec, gc, tc);
    const AteResult h = ate_with(est.humans, gt.humans, th);
    const AteResult j = ej.empty() ? AteResult{} : ate_with(ej, gj, th);
    (sim ? r.c_ate_sim3 : r.c_ate_se3) = c.rms;
    (sim ? r.h_ate_sim3 : r.h_ate_se3) = h.rms;
    (sim ? r.j_ate_sim3 : r.j_ate_se3) = j.rms;
    (sim ? r.c_mean_sim3 : r.c_mean_se3) = c.mean;
    (sim ? r.h_mean_sim3 : r.h_mean_se3) = h.mean;
    (sim ? r.j_mean_sim3 : r.j_mean_se3) = j.mean;
    if (sim) r.scale_estimate = tc.scale;
  }
  return r;
}

// Per-frame position error after a given alignment.
inline std::vector<double> per_frame_errors(std::span<const Vec3> est, std::span<const Vec3> gt, const SimTransform& t) {
  if (est.size() != gt.size()) throw InvalidArgument("per_frame_errors: trajectories differ in length");
  const Mat3 rot = t.rotation_matrix();
  std::vector<double> out;
  for (std::size_t i = 0; i < est.size(); ++i) out.push_back((t.scale * (rot * est[i]) + t.translation - gt[i]).norm());
  return out;
}

// ---------------------------------------------------------------------------
// Serialisation. CSV rows follow the layout C/H/J-ATE x SE(3)/Sim(3), scale.

inline constexpr const char* kReportCsvHeader =
    "sequence,method,c_ate_se3,c_ate_sim3,h_ate_se3,h_ate_sim3,j_ate_se3,j_ate_sim3,scale";

inline json report_to_json(const TrajectoryErrorReport& r) {
  return {{"method", to_string(r.method)},
          {"c_ate_se3", r.c_ate_se3},
          {"c_ate_sim3", r.c_ate_sim3},
          {"h_ate_se3", r.h_ate_se3},
          {"h_ate_sim3", r.h_ate_sim3},
          {"j_ate_se3", r.j_ate_se3},
          {"j_ate_sim3", r.j_ate_sim3},
          {"c_mean_se3", r.c_mean_se3},
          {"c_mean_sim3", r.c_mean_sim3},
          {"h_mean_se3", r.h_mean_se3},
          {"h_mean_sim3", r.h_mean_sim3},
          {"j_mean_se3", r.j_mean_se3},
          {"j_mean_sim3", r.j_mean_sim3},
          {"scale", r.scale_estimate}};
}

inline TrajectoryErrorReport report_from_json(const json& j) {
  TrajectoryErrorReport r;
  r.method = alignment_method_from_string(j.at("method").get<std::string>());
  r.c_ate_se3 = j.at("c_ate_se3").get<double>();
  r.c_ate_sim3 = j.at("c_ate_sim3").get<double>();
  r.h_ate_se3 = j.at("h_ate_se3").get<double>();
  r.h_ate_sim3 = j.at("h_ate_sim3").get<double>();
  r.j_ate_se3 = j.at("j_ate_se3").get<double>();
  r.j_ate_sim3 = j.at("j_ate_sim3").get<double>();
  r.c_mean_se3 = j.value("c_mean_se3", 0.0);
  r.c_mean_sim3 = j.value("c_mean_sim3", 0.0);
  r.h_mean_se3 = j.value("h_mean_se3", 0.0);
  r.h_mean_sim3 = j.value("h_mean_sim3", 0.0);
  r.j_mean_se3 = j.value("j_mean_se3", 0.0);
  r.j_mean_sim3 = j.value("j_mean_sim3", 0.0);
  r.scale_estimate = j.at("scale").get<double>();
  return r;
}

// Fixed-precision decimal so output files are byte-stable.
inline std::string format_number(double v, int digits = 9) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

inline std::string report_csv_row(const std::string& sequence, const TrajectoryErrorReport& r) {
  std::string row = sequence + "," + to_string(r.method);
  for (double v : {r.c_ate_se3, r.c_ate_sim3, r.h_ate_se3, r.h_ate_sim3, r.j_ate_se3, r.j_ate_sim3, r.scale_estimate}) {
    row += "," + format_number(v);
  }
  return row;
}

}  // namespace bodyslam
