#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "bodyslam/bodymodel.hpp"
#include "bodyslam/camera.hpp"
#include "bodyslam/errors.hpp"
#include "bodyslam/json_io.hpp"
#include "bodyslam/liegeom.hpp"
#include "bodyslam/motionmodel.hpp"
#include "bodyslam/random.hpp"

namespace bodyslam {

inline constexpr double kFrameRate = 30.0;

// ---------------------------------------------------------------------------
// Procedural walking.

struct GaitConfig {
  int frames = 150;
  double frame_rate = kFrameRate;
  double speed = 1.2;     // m/s along the heading
  double cadence = 0.9;   // full gait cycles per second
  double phase = 0.0;     // rad
  double turn_rate = 0.0; // heading change, rad/s (positive turns towards +x of the body)
  double heading = 0.0;   // initial yaw about world y
  Vec3 start = Vec3::Zero();  // ground point below the pelvis at frame 0
  ShapeVector beta = ShapeVector::Zero();
};

struct GaitSequence {
  std::vector<Pose6D> root;  // T_WH per frame
  std::vector<PostureVector> theta;
  ShapeVector beta = ShapeVector::Zero();
  double frame_rate = kFrameRate;

  int frames() const { return static_cast<int>(root.size()); }
  FullPoseVector full_pose(int k) const {
    FullPoseVector p;
    p.head<3>() = root[static_cast<std::size_t>(k)].phi;
    p.tail<kPostureDim>() = theta[static_cast<std::size_t>(k)];
    return p;
  }
};

inline double leg_length(const KinematicTemplate& t, const ShapeVector& beta) {
  return t.offset(kLeftKnee, beta).norm() + t.offset(kLeftAnkle, beta).norm();
}

namespace detail {

inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

inline void set_joint(PostureVector& th, int j, const Vec3& v) { th.segment<3>(3 * (j - 1)) = v; }

}  // namespace detail

// Sinusoidal hip/knee/ankle/shoulder/elbow swing phase-locked to a root that
// advances speed/frame_rate metres per frame along its heading. Swing
// amplitude grows with stride length relative to leg length, so the posture
// sequence carries the walking speed.
inline GaitSequence generate_gait(const KinematicTemplate& t, const GaitConfig& cfg) {
  if (cfg.frames < 1 || cfg.frame_rate <= 0 || cfg.speed < 0 || cfg.cadence <= 0) {
    throw InvalidArgument("generate_gait: invalid configuration");
  }
  const double leg = leg_length(t, cfg.beta);
  const double stride = cfg.speed / cfg.cadence;
  const double a_hip = 0.05 + stride / (4.0 * leg);
  const double a_knee = 0.1 + 1.1 * a_hip;
  const double a_ankle = 0.4 * a_hip;
  const double a_arm = 0.6 * a_hip;
  const double a_twist = 0.15 * a_hip;

  const JointArray rest = forward_kinematics(t, cfg.beta, PostureVector::Zero());
  const double pelvis_height = -std::min(rest[kLeftAnkle].y(), rest[kLeftFoot].y()) + 0.08;

  GaitSequence seq;
  seq.beta = cfg.beta;
  seq.frame_rate = cfg.frame_rate;
  const double dt = 1.0 / cfg.frame_rate;
  const double step = cfg.speed * dt;
  Vec3 ground = cfg.start;
  double heading = cfg.heading;
  for (int k = 0; k < cfg.frames; ++k) {
    if (k > 0) {
      const double mid = heading + 0.5 * cfg.turn_rate * dt;
      ground += step * Vec3(std::sin(mid), 0.0, std::cos(mid));
      heading += cfg.turn_rate * dt;
    }
    const double ph = 2.0 * kPi * cfg.cadence * k * dt + cfg.phase;
    const double s = std::sin(ph), c = std::cos(ph);

    PostureVector th = PostureVector::Zero();
    const double hip = a_hip * s;
    detail::set_joint(th, kLeftHip, Vec3(-hip, 0, 0));
    detail::set_joint(th, kRightHip, Vec3(hip, 0, 0));
    detail::set_joint(th, kLeftKnee, Vec3(0.05 + 0.5 * a_knee * (1.0 - c), 0, 0));
    detail::set_joint(th, kRightKnee, Vec3(0.05 + 0.5 * a_knee * (1.0 + c), 0, 0));
    detail::set_joint(th, kLeftAnkle, Vec3(a_ankle * std::sin(ph + kPi / 2), 0, 0));
    detail::set_joint(th, kRightAnkle, Vec3(-a_ankle * std::sin(ph + kPi / 2), 0, 0));
    detail::set_joint(th, kSpine1, Vec3(0, a_twist * s, 0));
    detail::set_joint(th, kSpine3, Vec3(0.5 * a_twist * s, -0.5 * a_twist * s, 0));
    detail::set_joint(th, kLeftShoulder, so3_log(detail::rot_x(a_arm * s) * detail::rot_z(-1.3)));
    detail::set_joint(th, kRightShoulder, so3_log(detail::rot_x(-a_arm * s) * detail::rot_z(1.3)));
    detail::set_joint(th, kLeftElbow, Vec3(0, -(0.3 + 0.25 * a_arm * (1.0 - s)), 0));
    detail::set_joint(th, kRightElbow, Vec3(0, 0.3 + 0.25 * a_arm * (1.0 + s), 0));
    detail::set_joint(th, kNeck, Vec3(0, -0.5 * a_twist * s, 0));

    // Pelvis height follows the stance leg; roll sways with the step.
    const double height = pelvis_height - leg * (1.0 - std::cos(hip));
    const Mat3 r = detail::rot_y(heading) * detail::rot_z(0.04 * s) * detail::rot_y(-a_twist * s);
    seq.root.push_back(Pose6D::from_rt(r, ground + Vec3(0, height, 0)));
    seq.theta.push_back(th);
  }
  return seq;
}

// Training pairs from a walking sequence: n previous frames predict frame k.
// Optional Gaussian noise on the history postures makes the model tolerant
// to imperfect posture estimates at solve time.
inline std::vector<MotionSample> make_motion_samples(const GaitSequence& seq, int history, double input_noise = 0.0,
                                                     Rng* rng = nullptr) {
  if (history < 1) throw InvalidArgument("make_motion_samples: history must be >= 1");
  std::vector<MotionSample> out;
  for (int k = history; k < seq.frames(); ++k) {
    std::vector<Mat3> rots;
    std::vector<PostureVector> posts;
    for (int i = k - history; i < k; ++i) {
      rots.push_back(seq.root[static_cast<std::size_t>(i)].rotation());
      posts.push_back(seq.theta[static_cast<std::size_t>(i)]);
    }
    MotionSample s;
    s.history = relative_history(rots, posts);
    if (input_noise > 0 && rng) {
      for (auto& h : s.history) {
        for (int d = 3; d < kFullPoseDim; ++d) h[d] += rng->normal(input_noise);
      }
    }
    s.beta = seq.beta;
    s.target_pose = relative_target(rots.back(), seq.root[static_cast<std::size_t>(k)].rotation(),
                                    seq.theta[static_cast<std::size_t>(k)]);
    s.target_translation = relative_translation(seq.root[static_cast<std::size_t>(k - 1)], seq.root[static_cast<std::size_t>(k)].r);
    out.push_back(std::move(s));
  }
  return out;
}

struct GaitDatasetConfig {
  int sequences = 80;
  int frames = 150;
  int history = 2;
  double speed_min = 0.5, speed_max = 1.8;
  // Cadence follows speed as in normal walking: base + per_speed * v, plus jitter.
  double cadence_base = 0.6, cadence_per_speed = 0.3, cadence_jitter = 0.05;
  double turn_rate_max = 0.6;
  double beta_sigma = 1.0;
  double input_noise = 0.0;  // per-sequence history noise std drawn uniformly in [0, input_noise]
  std::uint64_t seed = 1;
};

inline ShapeVector random_shape(Rng& rng, double sigma) {
  ShapeVector b;
  for (int i = 0; i < kShapeDim; ++i) b[i] = rng.normal(sigma);
  if (b.norm() > 5.0) b *= 5.0 / b.norm();
  return b;
}

inline GaitConfig random_gait(Rng& rng, const GaitDatasetConfig& cfg) {
  GaitConfig g;
  g.frames = cfg.frames;
  g.speed = rng.uniform(cfg.speed_min, cfg.speed_max);
  g.cadence = cfg.cadence_base + cfg.cadence_per_speed * g.speed + rng.uniform(-cfg.cadence_jitter, cfg.cadence_jitter);
  g.phase = rng.uniform(0.0, 2.0 * kPi);
  g.turn_rate = rng.uniform(-cfg.turn_rate_max, cfg.turn_rate_max);
  g.heading = rng.uniform(-kPi, kPi);
  g.beta = random_shape(rng, cfg.beta_sigma);
  return g;
}

inline std::vector<MotionSample> generate_gait_dataset(const KinematicTemplate& t, const GaitDatasetConfig& cfg) {
  Rng rng(cfg.seed);
  std::vector<MotionSample> out;
  for (int i = 0; i < cfg.sequences; ++i) {
    Rng seq_rng = rng.split();
    const GaitSequence seq = generate_gait(t, random_gait(seq_rng, cfg));
    const double noise = cfg.input_noise > 0 ? seq_rng.uniform(0.0, cfg.input_noise) : 0.0;
    auto samples = make_motion_samples(seq, cfg.history, noise, &seq_rng);
    out.insert(out.end(), std::make_move_iterator(samples.begin()), std::make_move_iterator(samples.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenes.

enum class CameraFamily { orbit, arc, handheld };
enum class Difficulty { easy, medium, hard };

inline const char* to_string(CameraFamily f) {
  switch (f) {
    case CameraFamily::orbit: return "orbit";
    case CameraFamily::arc: return "arc";
    case CameraFamily::handheld: return "handheld";
  }
  return "?";
}

inline const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::medium: return "medium";
    case Difficulty::hard: return "hard";
  }
  return "?";
}

inline CameraFamily camera_family_from_string(const std::string& s) {
  if (s == "orbit") return CameraFamily::orbit;
  if (s == "arc") return CameraFamily::arc;
  if (s == "handheld" || s == "handheld-jitter") return CameraFamily::handheld;
  throw ConfigError("unknown camera family '" + s + "'");
}

inline Difficulty difficulty_from_string(const std::string& s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "medium") return Difficulty::medium;
  if (s == "hard") return Difficulty::hard;
  throw ConfigError("unknown difficulty '" + s + "'");
}

struct NoiseConfig {
  double landmark_px = 1.0;          // keypoint std
  double landmark_outliers = 0.0;    // fraction replaced by uniform image samples
  double joint_px = 1.5;             // base std, divided by the confidence
  double joint_outliers = 0.0;
  double confidence_min = 0.3, confidence_max = 1.0;
  double beta_sigma = 0.05;
  double theta_sigma = 0.03;         // rad per component
  double tch_rotation_sigma = 0.02;  // rad
  double tch_lateral_sigma = 0.01;   // metres per metre of depth
  double tch_depth_sigma = 0.05;     // metres per metre of depth

  static NoiseConfig none() {
    NoiseConfig n;
    n.landmark_px = n.joint_px = n.beta_sigma = n.theta_sigma = 0.0;
    n.tch_rotation_sigma = n.tch_lateral_sigma = n.tch_depth_sigma = 0.0;
    return n;
  }
};

struct SceneConfig {
  int frames = 150;
  double frame_rate = kFrameRate;
  CameraFamily family = CameraFamily::orbit;
  Difficulty difficulty = Difficulty::easy;
  int landmarks = 60;
  double landmark_min_radius = 3.0;
  double landmark_max_radius = 6.0;
  double speed = 1.0;
  double cadence = 0.9;
  double phase = 0.0;
  double walk_radius = 2.0;      // radius of the walked circle
  double camera_distance = 2.6;  // nominal camera-to-human distance
  double camera_height = 1.3;
  ShapeVector beta = ShapeVector::Zero();
  NoiseConfig noise;
  Intrinsics intrinsics;
  std::uint64_t seed = 0;

  void validate() const {
    if (frames < 3) throw ConfigError("scene: need at least 3 frames");
    if (landmarks < 8) throw ConfigError("scene: need at least 8 landmarks");
    if (frame_rate <= 0 || speed < 0 || cadence <= 0 || walk_radius <= 0 || camera_distance <= 0) {
      throw ConfigError("scene: rates, radii and distances must be positive");
    }
    if (landmark_min_radius <= 0 || landmark_max_radius < landmark_min_radius) throw ConfigError("scene: invalid landmark shell");
    const auto& n = noise;
    for (double v : {n.landmark_px, n.joint_px, n.beta_sigma, n.theta_sigma, n.tch_rotation_sigma, n.tch_lateral_sigma,
                     n.tch_depth_sigma}) {
      if (!(v >= 0)) throw ConfigError("scene: noise levels must be non-negative");
    }
    if (n.landmark_outliers < 0 || n.landmark_outliers >= 1 || n.joint_outliers < 0 || n.joint_outliers >= 1) {
      throw ConfigError("scene: outlier fractions must lie in [0, 1)");
    }
    if (!(n.confidence_min > 0) || n.confidence_max > 1 || n.confidence_min > n.confidence_max) {
      throw ConfigError("scene: confidences must lie in (0, 1]");
    }
    if (beta.norm() > 5.0) throw ConfigError("scene: shape vector norm exceeds 5");
    try {
      intrinsics.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
};

struct LandmarkObservation {
  int landmark = 0;
  Vec2 uv = Vec2::Zero();
  bool outlier = false;  // ground-truth label, not visible to the solver
};

struct JointObservation {
  int joint = 0;
  Vec2 uv = Vec2::Zero();
  double confidence = 1.0;
  bool outlier = false;
};

// Body-parameter measurement of one frame: shape, posture and the
// camera-to-human transform T_CH.
struct BodyMeasurement {
  ShapeVector beta = ShapeVector::Zero();
  PostureVector theta = PostureVector::Zero();
  Pose6D t_ch;
};

struct FrameMeasurements {
  std::vector<LandmarkObservation> landmarks;
  std::vector<JointObservation> joints;
  BodyMeasurement body;
};

using MeasurementSet = std::vector<FrameMeasurements>;

struct GroundTruth {
  std::vector<Pose6D> cameras;  // T_WC
  std::vector<Pose6D> humans;   // T_WH
  std::vector<PostureVector> theta;
  ShapeVector beta = ShapeVector::Zero();
  std::vector<Vec3> landmarks;
  std::vector<JointArray> joints_world;
};

struct SceneDataset {
  SceneConfig config;
  GroundTruth truth;
  MeasurementSet measurements;
  std::string config_hash;

  int frames() const { return static_cast<int>(truth.cameras.size()); }
  const Intrinsics& intrinsics() const { return config.intrinsics; }
};

// Looking from eye towards target with world y up; camera x right, y down.
inline Pose6D look_at(const Vec3& eye, const Vec3& target, double roll = 0.0) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(Vec3::UnitY());
  if (x.norm() < 1e-9) throw DegenerateGeometry("look_at: viewing direction parallel to up");
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r << x, y, z;
  return Pose6D::from_rt(r * detail::rot_z(roll), eye);
}

namespace detail {

struct DifficultyParams {
  double sway_amplitude;  // rad of orbit angle
  double sway_frequency;  // Hz
  double radial_amplitude;
  double jitter_position;  // metres
  double jitter_rotation;  // rad
  double jitter_frequency;
};

inline DifficultyParams difficulty_params(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return {0.05, 0.2, 0.1, 0.01, 0.005, 1.0};
    case Difficulty::medium: return {0.15, 0.4, 0.25, 0.03, 0.015, 1.5};
    case Difficulty::hard: return {0.3, 0.8, 0.4, 0.06, 0.03, 2.5};
  }
  return {0, 0, 0, 0, 0, 1};
}

// Smooth pseudo-random signal: sum of three sinusoids with random phases.
struct Wobble {
  std::array<double, 3> freq{}, phase{};
  Wobble(Rng& rng, double base) {
    for (int i = 0; i < 3; ++i) {
      freq[i] = base * rng.uniform(0.6, 1.4);
      phase[i] = rng.uniform(0.0, 2.0 * kPi);
    }
  }
  double operator()(double t) const {
    double v = 0;
    for (int i = 0; i < 3; ++i) v += std::sin(2.0 * kPi * freq[i] * t + phase[i]);
    return v / std::sqrt(1.5);
  }
};

}  // namespace detail

inline std::vector<Pose6D> generate_camera_trajectory(const SceneConfig& cfg, const std::vector<Pose6D>& humans,
                                                      const Vec3& center, Rng& rng) {
  const auto dp = detail::difficulty_params(cfg.difficulty);
  const int n = static_cast<int>(humans.size());
  auto polar = [&](const Vec3& p) { return std::atan2(p.x() - center.x(), p.z() - center.z()); };
  std::vector<double> human_angle(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) human_angle[static_cast<std::size_t>(k)] = polar(humans[static_cast<std::size_t>(k)].r);
  for (int k = 1; k < n; ++k) {  // unwrap
    double& a = human_angle[static_cast<std::size_t>(k)];
    const double prev = human_angle[static_cast<std::size_t>(k - 1)];
    a = prev + std::remainder(a - prev, 2.0 * kPi);
  }
  const double mid_angle = human_angle[static_cast<std::size_t>(n / 2)];
  const double radius = cfg.walk_radius + cfg.camera_distance;
  const double sway_phase = rng.uniform(0.0, 2.0 * kPi);
  std::array<detail::Wobble, 6> wob = {detail::Wobble(rng, dp.jitter_frequency), detail::Wobble(rng, dp.jitter_frequency),
                                       detail::Wobble(rng, dp.jitter_frequency), detail::Wobble(rng, dp.jitter_frequency),
                                       detail::Wobble(rng, dp.jitter_frequency), detail::Wobble(rng, dp.jitter_frequency)};

  std::vector<Pose6D> cams;
  for (int k = 0; k < n; ++k) {
    const double t = k / cfg.frame_rate;
    const double ha = human_angle[static_cast<std::size_t>(k)];
    double angle = ha;
    if (cfg.family == CameraFamily::arc) angle = mid_angle + 0.6 * (ha - mid_angle);
    angle += dp.sway_amplitude * std::sin(2.0 * kPi * dp.sway_frequency * t + sway_phase);
    const double r = radius + dp.radial_amplitude * std::sin(2.0 * kPi * 0.5 * dp.sway_frequency * t + 2.0 * sway_phase);
    Vec3 eye = center + Vec3(r * std::sin(angle), cfg.camera_height, r * std::cos(angle));
    Vec3 target = humans[static_cast<std::size_t>(k)].r;
    double roll = 0.0;
    if (cfg.family == CameraFamily::handheld) {
      eye += dp.jitter_position * Vec3(wob[0](t), wob[1](t), wob[2](t));
      target += dp.jitter_rotation * cfg.camera_distance * Vec3(wob[3](t), wob[4](t), 0.0);
      roll = dp.jitter_rotation * wob[5](t);
    }
    cams.push_back(look_at(eye, target, roll));
  }
  return cams;
}

// Landmarks on a shell around the walking area, each seen by at least one
// camera: back-project a random pixel of a random frame and intersect the ray
// with a sphere of random radius.
inline std::vector<Vec3> generate_landmarks(const SceneConfig& cfg, const std::vector<Pose6D>& cams, const Vec3& center,
                                            Rng& rng) {
  const Intrinsics& k = cfg.intrinsics;
  std::vector<Vec3> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < cfg.landmarks) {
    if (++attempts > 1000 * cfg.landmarks) throw ConfigError("scene: could not place landmarks on the shell");
    const Pose6D& c = cams[rng.index(cams.size())];
    const Vec3 ray_c((rng.uniform(0.0, k.width) - k.cx) / k.fx, (rng.uniform(0.0, k.height) - k.cy) / k.fy, 1.0);
    const Vec3 d = (c.rotation() * ray_c).normalized();
    const double radius = rng.uniform(cfg.landmark_min_radius, cfg.landmark_max_radius);
    const Vec3 o = c.r - center;
    const double b = o.dot(d);
    const double disc = b * b - (o.squaredNorm() - radius * radius);
    if (disc < 0) continue;
    const double dist = -b + std::sqrt(disc);  // far intersection
    if (dist < 1.0) continue;
    out.push_back(c.r + dist * d);
  }
  return out;
}

inline std::string scene_config_hash(const SceneConfig& cfg);

inline SceneDataset generate_scene(const KinematicTemplate& t, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SceneDataset ds;
  ds.config = cfg;
  ds.config_hash = scene_config_hash(cfg);

  GaitConfig g;
  g.frames = cfg.frames;
  g.frame_rate = cfg.frame_rate;
  g.speed = cfg.speed;
  g.cadence = cfg.cadence;
  g.phase = cfg.phase;
  g.beta = cfg.beta;
  g.heading = rng.uniform(-kPi, kPi);
  g.turn_rate = cfg.speed / cfg.walk_radius;
  // Start on the circle of radius walk_radius around the origin.
  const Vec3 inward(std::cos(g.heading), 0.0, -std::sin(g.heading));
  g.start = -cfg.walk_radius * inward;
  const GaitSequence gait = generate_gait(t, g);
  const Vec3 center(0.0, 0.0, 0.0);

  GroundTruth& gt = ds.truth;
  gt.humans = gait.root;
  gt.theta = gait.theta;
  gt.beta = cfg.beta;
  gt.cameras = generate_camera_trajectory(cfg, gt.humans, center, rng);
  gt.landmarks = generate_landmarks(cfg, gt.cameras, center + Vec3(0, 1.0, 0), rng);
  for (int k = 0; k < cfg.frames; ++k) {
    gt.joints_world.push_back(joints_in_world(gt.humans[static_cast<std::size_t>(k)],
                                              forward_kinematics(t, gt.beta, gt.theta[static_cast<std::size_t>(k)])));
  }

  const NoiseConfig& nz = cfg.noise;
  const Intrinsics& kk = cfg.intrinsics;
  auto random_pixel = [&]() { return Vec2(rng.uniform(0.0, kk.width), rng.uniform(0.0, kk.height)); };
  for (int k = 0; k < cfg.frames; ++k) {
    const Pose6D& cam = gt.cameras[static_cast<std::size_t>(k)];
    const Pose6D cam_inv = pose_inverse(cam);
    FrameMeasurements fm;
    for (int l = 0; l < cfg.landmarks; ++l) {
      const Vec3 pc = pose_apply(cam_inv, gt.landmarks[static_cast<std::size_t>(l)]);
      if (!is_visible(kk, pc)) continue;
      LandmarkObservation o;
      o.landmark = l;
      o.uv = project(kk, pc) + Vec2(rng.normal(nz.landmark_px), rng.normal(nz.landmark_px));
      if (nz.landmark_outliers > 0 && rng.bernoulli(nz.landmark_outliers)) {
        o.uv = random_pixel();
        o.outlier = true;
      }
      if (!in_image(kk, o.uv)) continue;  // noise pushed it off the sensor
      fm.landmarks.push_back(o);
    }
    for (int j = 0; j < kNumJoints; ++j) {
      const Vec3 pc = pose_apply(cam_inv, gt.joints_world[static_cast<std::size_t>(k)][j]);
      if (!is_visible(kk, pc)) continue;
      JointObservation o;
      o.joint = j;
      o.confidence = rng.uniform(nz.confidence_min, nz.confidence_max);
      const double sd = nz.joint_px / o.confidence;
      o.uv = project(kk, pc) + Vec2(rng.normal(sd), rng.normal(sd));
      if (nz.joint_outliers > 0 && rng.bernoulli(nz.joint_outliers)) {
        o.uv = random_pixel();
        o.outlier = true;
      }
      if (!in_image(kk, o.uv)) continue;
      fm.joints.push_back(o);
    }
    BodyMeasurement& bm = fm.body;
    for (int i = 0; i < kShapeDim; ++i) bm.beta[i] = gt.beta[i] + rng.normal(nz.beta_sigma);
    for (int i = 0; i < kPostureDim; ++i) bm.theta[i] = gt.theta[static_cast<std::size_t>(k)][i] + rng.normal(nz.theta_sigma);
    const Pose6D t_ch = pose_compose(cam_inv, gt.humans[static_cast<std::size_t>(k)]);
    const double depth = std::max(t_ch.r.z(), 0.0);
    const Vec3 dr(rng.normal(nz.tch_lateral_sigma * depth), rng.normal(nz.tch_lateral_sigma * depth),
                  rng.normal(nz.tch_depth_sigma * depth));
    const Vec3 dphi = rng.normal3(nz.tch_rotation_sigma);
    bm.t_ch = Pose6D::from_rt(t_ch.rotation() * so3_exp(dphi), t_ch.r + dr);
    ds.measurements.push_back(std::move(fm));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// JSON.

inline constexpr const char* kSceneSchema = "bodyslam.scene";
inline constexpr const char* kSceneConfigSchema = "bodyslam.scene_config";

inline json pose_to_json(const Pose6D& p) { return {{"r", to_json_array(p.r)}, {"phi", to_json_array(p.phi)}}; }
inline Pose6D pose_from_json(const json& j) { return {from_json_array<Vec3>(j.at("r")), from_json_array<Vec3>(j.at("phi"))}; }

inline json intrinsics_to_json(const Intrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline Intrinsics intrinsics_from_json(const json& j) {
  Intrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  return k;
}

inline json noise_to_json(const NoiseConfig& n) {
  return {{"landmark_px", n.landmark_px},
          {"landmark_outliers", n.landmark_outliers},
          {"joint_px", n.joint_px},
          {"joint_outliers", n.joint_outliers},
          {"confidence_min", n.confidence_min},
          {"confidence_max", n.confidence_max},
          {"beta_sigma", n.beta_sigma},
          {"theta_sigma", n.theta_sigma},
          {"tch_rotation_sigma", n.tch_rotation_sigma},
          {"tch_lateral_sigma", n.tch_lateral_sigma},
          {"tch_depth_sigma", n.tch_depth_sigma}};
}

// Missing keys keep their defaults so configs can be partial.
template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline NoiseConfig noise_from_json(const json& j, NoiseConfig n = {}) {
  read_opt(j, "landmark_px", n.landmark_px);
  read_opt(j, "landmark_outliers", n.landmark_outliers);
  read_opt(j, "joint_px", n.joint_px);
  read_opt(j, "joint_outliers", n.joint_outliers);
  read_opt(j, "confidence_min", n.confidence_min);
  read_opt(j, "confidence_max", n.confidence_max);
  read_opt(j, "beta_sigma", n.beta_sigma);
  read_opt(j, "theta_sigma", n.theta_sigma);
  read_opt(j, "tch_rotation_sigma", n.tch_rotation_sigma);
  read_opt(j, "tch_lateral_sigma", n.tch_lateral_sigma);
  read_opt(j, "tch_depth_sigma", n.tch_depth_sigma);
  return n;
}

inline json scene_config_to_json(const SceneConfig& c) {
  return {{"schema", kSceneConfigSchema},
          {"version", 1},
          {"frames", c.frames},
          {"frame_rate", c.frame_rate},
          {"camera_family", to_string(c.family)},
          {"difficulty", to_string(c.difficulty)},
          {"landmarks", c.landmarks},
          {"landmark_min_radius", c.landmark_min_radius},
          {"landmark_max_radius", c.landmark_max_radius},
          {"speed", c.speed},
          {"cadence", c.cadence},
          {"phase", c.phase},
          {"walk_radius", c.walk_radius},
          {"camera_distance", c.camera_distance},
          {"camera_height", c.camera_height},
          {"beta", to_json_array(c.beta)},
          {"noise", noise_to_json(c.noise)},
          {"intrinsics", intrinsics_to_json(c.intrinsics)},
          {"seed", c.seed}};
}

inline SceneConfig scene_config_from_json(const json& j, SceneConfig c = {}) {
  try {
    if (j.contains("schema")) check_schema(j, kSceneConfigSchema, 1);
    read_opt(j, "frames", c.frames);
    read_opt(j, "frame_rate", c.frame_rate);
    if (j.contains("camera_family")) c.family = camera_family_from_string(j.at("camera_family").get<std::string>());
    if (j.contains("difficulty")) c.difficulty = difficulty_from_string(j.at("difficulty").get<std::string>());
    read_opt(j, "landmarks", c.landmarks);
    read_opt(j, "landmark_min_radius", c.landmark_min_radius);
    read_opt(j, "landmark_max_radius", c.landmark_max_radius);
    read_opt(j, "speed", c.speed);
    read_opt(j, "cadence", c.cadence);
    read_opt(j, "phase", c.phase);
    read_opt(j, "walk_radius", c.walk_radius);
    read_opt(j, "camera_distance", c.camera_distance);
    read_opt(j, "camera_height", c.camera_height);
    if (j.contains("beta")) c.beta = from_json_array<ShapeVector>(j.at("beta"));
    if (j.contains("noise")) c.noise = noise_from_json(j.at("noise"), c.noise);
    if (j.contains("intrinsics")) c.intrinsics = intrinsics_from_json(j.at("intrinsics"));
    read_opt(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene config: ") + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(std::string("scene config: ") + e.what());
  }
  return c;
}

inline std::string scene_config_hash(const SceneConfig& cfg) { return hex64(fnv1a64(scene_config_to_json(cfg).dump())); }

inline json scene_to_json(const SceneDataset& ds) {
  json j;
  j["schema"] = kSceneSchema;
  j["version"] = 1;
  j["config"] = scene_config_to_json(ds.config);
  j["provenance"] = {{"seed", ds.config.seed}, {"config_hash", ds.config_hash}};
  const GroundTruth& gt = ds.truth;
  json& g = j["ground_truth"];
  g["beta"] = to_json_array(gt.beta);
  g["cameras"] = json::array();
  g["humans"] = json::array();
  g["theta"] = json::array();
  g["landmarks"] = json::array();
  g["joints_world"] = json::array();
  for (const auto& p : gt.cameras) g["cameras"].push_back(pose_to_json(p));
  for (const auto& p : gt.humans) g["humans"].push_back(pose_to_json(p));
  for (const auto& th : gt.theta) g["theta"].push_back(to_json_array(th));
  for (const auto& l : gt.landmarks) g["landmarks"].push_back(to_json_array(l));
  for (const auto& ja : gt.joints_world) {
    json f = json::array();
    for (const auto& p : ja) f.push_back(to_json_array(p));
    g["joints_world"].push_back(std::move(f));
  }
  j["measurements"] = json::array();
  for (const auto& fm : ds.measurements) {
    json f;
    f["landmarks"] = json::array();
    for (const auto& o : fm.landmarks) {
      f["landmarks"].push_back({{"id", o.landmark}, {"uv", to_json_array(o.uv)}, {"outlier", o.outlier}});
    }
    f["joints"] = json::array();
    for (const auto& o : fm.joints) {
      f["joints"].push_back(
          {{"joint", o.joint}, {"uv", to_json_array(o.uv)}, {"confidence", o.confidence}, {"outlier", o.outlier}});
    }
    f["body"] = {{"beta", to_json_array(fm.body.beta)}, {"theta", to_json_array(fm.body.theta)}, {"t_ch", pose_to_json(fm.body.t_ch)}};
    j["measurements"].push_back(std::move(f));
  }
  return j;
}

inline SceneDataset scene_from_json(const json& j) {
  check_schema(j, kSceneSchema, 1);
  SceneDataset ds;
  try {
    ds.config = scene_config_from_json(j.at("config"));
    ds.config_hash = j.at("provenance").at("config_hash").get<std::string>();
    const json& g = j.at("ground_truth");
    GroundTruth& gt = ds.truth;
    gt.beta = from_json_array<ShapeVector>(g.at("beta"));
    for (const auto& p : g.at("cameras")) gt.cameras.push_back(pose_from_json(p));
    for (const auto& p : g.at("humans")) gt.humans.push_back(pose_from_json(p));
    for (const auto& th : g.at("theta")) gt.theta.push_back(from_json_array<PostureVector>(th));
    for (const auto& l : g.at("landmarks")) gt.landmarks.push_back(from_json_array<Vec3>(l));
    for (const auto& f : g.at("joints_world")) {
      if (f.size() != kNumJoints) throw FormatError("scene: expected 24 joints per frame");
      JointArray ja;
      for (int i = 0; i < kNumJoints; ++i) ja[i] = from_json_array<Vec3>(f[static_cast<std::size_t>(i)]);
      gt.joints_world.push_back(ja);
    }
    for (const auto& f : j.at("measurements")) {
      FrameMeasurements fm;
      for (const auto& o : f.at("landmarks")) {
        fm.landmarks.push_back({o.at("id").get<int>(), from_json_array<Vec2>(o.at("uv")), o.at("outlier").get<bool>()});
      }
      for (const auto& o : f.at("joints")) {
        fm.joints.push_back({o.at("joint").get<int>(), from_json_array<Vec2>(o.at("uv")), o.at("confidence").get<double>(),
                             o.at("outlier").get<bool>()});
      }
      const json& b = f.at("body");
      fm.body.beta = from_json_array<ShapeVector>(b.at("beta"));
      fm.body.theta = from_json_array<PostureVector>(b.at("theta"));
      fm.body.t_ch = pose_from_json(b.at("t_ch"));
      ds.measurements.push_back(std::move(fm));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("scene: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("scene: ") + e.what());
  }
  const std::size_t k = ds.truth.cameras.size();
  if (ds.truth.humans.size() != k || ds.truth.theta.size() != k || ds.measurements.size() != k ||
      ds.truth.joints_world.size() != k) {
    throw FormatError("scene: inconsistent frame counts");
  }
  return ds;
}

inline void export_scene(const SceneDataset& ds, const std::string& path) { write_text_file(path, scene_to_json(ds).dump() + "\n"); }
inline SceneDataset import_scene(const std::string& path) { return scene_from_json(read_json_file(path)); }

}  // namespace bodyslam
