#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "bodyslam/errors.hpp"
#include "bodyslam/factors.hpp"
#include "bodyslam/json_io.hpp"
#include "bodyslam/metrics.hpp"
#include "bodyslam/motionmodel.hpp"
#include "bodyslam/random.hpp"
#include "bodyslam/simulator.hpp"
#include "bodyslam/solver.hpp"

namespace bodyslam {

// Everything an experiment needs besides the trained motion model.
struct ExperimentConfig {
  SceneConfig scene = [] {
    SceneConfig c;  // family, difficulty and seed are set per sequence
    c.noise.landmark_outliers = 0.05;
    return c;
  }();
  int sequences_per_difficulty = 3;
  // Many short walks with per-walk posture noise up to the measurement level.
  GaitDatasetConfig gait = [] {
    GaitDatasetConfig g;
    g.sequences = 400;
    g.frames = 32;
    g.input_noise = 0.03;
    return g;
  }();
  GaitDatasetConfig validation_gait = [] {
    GaitDatasetConfig g;
    g.sequences = 100;
    g.frames = 32;
    g.seed = 77;
    return g;
  }();
  GaitDatasetConfig heldout_gait = [] {
    GaitDatasetConfig g;
    g.sequences = 100;
    g.seed = 1001;
    return g;
  }();
  MotionArchitecture architecture;
  TrainConfig train = [] {
    TrainConfig t;
    t.epochs = 30;
    return t;
  }();
  FactorConfig factors = [] {
    FactorConfig f;
    f.weights.mm = 1e4;
    return f;
  }();
  OptimSchedule schedule = [] {
    OptimSchedule o;
    o.optimizer = OptimizerKind::gauss_newton;
    o.step1_iters = 80;
    o.step2_iters = 20;
    return o;
  }();
  InitConfig init;
  bool motion_factors = true;
  bool structural_landmarks = true;
  bool scale_overparam = true;
  double baseline_scale_min = 0.35, baseline_scale_max = 0.75;
  std::vector<double> scale_perturbations = {5.0, 2.0, 1.0, 0.5, 0.2, 0.1};
  Difficulty scale_study_difficulty = Difficulty::easy;
  std::array<int, 2> scale_study_iters = {30, 10};  // step 1, step 2
  int ablation_sequences = 3;
  Difficulty ablation_difficulty = Difficulty::medium;
  double ablation_seed_scale = 0.6;  // initialisation scale before the perturbation
  double ablation_position = 0.1;   // metres, uniform in +-
  double ablation_rotation = 0.01;  // rad, uniform in +- per axis
  std::array<int, 2> ablation_iters = {30, 20};
  std::uint64_t seed = 0;

  void validate() const {
    scene.validate();
    schedule.validate();
    for (const auto& it : {scale_study_iters, ablation_iters}) {
      if (it[0] < 0 || it[1] < 0 || it[0] + it[1] == 0) throw ConfigError("experiment: study iteration counts must be positive");
    }
    if (sequences_per_difficulty < 1 || ablation_sequences < 1) throw ConfigError("experiment: sequence counts must be positive");
    if (!(baseline_scale_min > 0) || baseline_scale_max < baseline_scale_min) {
      throw ConfigError("experiment: invalid baseline scale range");
    }
    for (double p : scale_perturbations) {
      if (!(p > 0)) throw ConfigError("experiment: scale perturbations must be positive");
    }
    if (!(init.seed_scale > 0)) throw ConfigError("experiment: seed scale must be positive");
    if (ablation_position < 0 || ablation_rotation < 0) throw ConfigError("experiment: perturbations must be non-negative");
    if (!(ablation_seed_scale > 0)) throw ConfigError("experiment: ablation seed scale must be positive");
    if (gait.history != architecture.history || validation_gait.history != architecture.history ||
        heldout_gait.history != architecture.history) {
      throw ConfigError("experiment: gait history must match the motion model history");
    }
    if (factors.landmark_loss.scale <= 0 || factors.joint_loss.scale <= 0) throw ConfigError("experiment: robust scales must be positive");
  }
};

// ---------------------------------------------------------------------------
// Config JSON. Every key is optional; missing keys keep the defaults.

inline constexpr const char* kExperimentSchema = "bodyslam.experiment";

inline json experiment_config_to_json(const ExperimentConfig& c) {
  auto gait = [](const GaitDatasetConfig& g) {
    return json{{"sequences", g.sequences},
                {"frames", g.frames},
                {"history", g.history},
                {"speed_min", g.speed_min},
                {"speed_max", g.speed_max},
                {"cadence_base", g.cadence_base},
                {"cadence_per_speed", g.cadence_per_speed},
                {"cadence_jitter", g.cadence_jitter},
                {"turn_rate_max", g.turn_rate_max},
                {"beta_sigma", g.beta_sigma},
                {"input_noise", g.input_noise},
                {"seed", g.seed}};
  };
  const FactorConfig& f = c.factors;
  const OptimSchedule& s = c.schedule;
  json j;
  j["schema"] = kExperimentSchema;
  j["version"] = 1;
  j["seed"] = c.seed;
  j["scene"] = scene_config_to_json(c.scene);
  j["sequences_per_difficulty"] = c.sequences_per_difficulty;
  j["gait"] = gait(c.gait);
  j["validation_gait"] = gait(c.validation_gait);
  j["heldout_gait"] = gait(c.heldout_gait);
  j["architecture"] = {{"history", c.architecture.history},
                       {"encoder_widths", c.architecture.encoder_widths},
                       {"decoder_width", c.architecture.decoder_width}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"lr_decay", c.train.lr_decay},
                {"recalibrate_bias", c.train.recalibrate_bias},
                {"validation_fraction", c.train.validation_fraction},
                {"seed", c.train.seed}};
  j["factors"] = {{"weights", {{"lm", f.weights.lm}, {"mm", f.weights.mm}, {"posture", f.weights.posture}, {"shape", f.weights.shape}}},
                  {"landmark_loss", {{"kind", to_string(f.landmark_loss.kind)}, {"scale", f.landmark_loss.scale}}},
                  {"joint_loss", {{"kind", to_string(f.joint_loss.kind)}, {"scale", f.joint_loss.scale}}},
                  {"joints", f.joints},
                  {"posture", f.posture},
                  {"shape", f.shape},
                  {"hmr_posture_prior", f.hmr_posture_prior},
                  {"motion_through_network", f.motion_through_network},
                  {"network_jacobian_in_hessian", f.network_jacobian_in_hessian}};
  j["schedule"] = {{"optimizer", to_string(s.optimizer)},
                   {"step1_iters", s.step1_iters},
                   {"step2_iters", s.step2_iters},
                   {"tolerance", s.tolerance},
                   {"learning_rates",
                    {{"poses", s.learning_rates.poses},
                     {"scale", s.learning_rates.scale},
                     {"landmarks", s.learning_rates.landmarks},
                     {"body", s.learning_rates.body}}}};
  j["init"] = {{"seed_scale", c.init.seed_scale},
               {"seed_position_noise", c.init.seed_position_noise},
               {"seed_rotation_noise", c.init.seed_rotation_noise},
               {"triangulation_threshold_px", c.init.triangulation.threshold_px},
               {"ransac_threshold_px", c.init.ransac.threshold_px},
               {"ransac_iterations", c.init.ransac.iterations},
               {"rounds", c.init.rounds},
               {"ba_iterations", c.init.ba_iterations}};
  j["toggles"] = {{"motion_factors", c.motion_factors},
                  {"structural_landmarks", c.structural_landmarks},
                  {"scale_overparam", c.scale_overparam}};
  j["baseline_scale_range"] = {c.baseline_scale_min, c.baseline_scale_max};
  j["scale_perturbations"] = c.scale_perturbations;
  j["scale_study_difficulty"] = to_string(c.scale_study_difficulty);
  j["scale_study_iters"] = c.scale_study_iters;
  j["ablation"] = {{"sequences", c.ablation_sequences},
                   {"difficulty", to_string(c.ablation_difficulty)},
                   {"seed_scale", c.ablation_seed_scale},
                   {"position", c.ablation_position},
                   {"rotation", c.ablation_rotation},
                   {"iters", c.ablation_iters}};
  return j;
}

inline ExperimentConfig experiment_config_from_json(const json& j, ExperimentConfig c = {}) {
  auto gait = [](const json& g, GaitDatasetConfig& out) {
    read_opt(g, "sequences", out.sequences);
    read_opt(g, "frames", out.frames);
    read_opt(g, "history", out.history);
    read_opt(g, "speed_min", out.speed_min);
    read_opt(g, "speed_max", out.speed_max);
    read_opt(g, "cadence_base", out.cadence_base);
    read_opt(g, "cadence_per_speed", out.cadence_per_speed);
    read_opt(g, "cadence_jitter", out.cadence_jitter);
    read_opt(g, "turn_rate_max", out.turn_rate_max);
    read_opt(g, "beta_sigma", out.beta_sigma);
    read_opt(g, "input_noise", out.input_noise);
    read_opt(g, "seed", out.seed);
  };
  try {
    if (j.contains("schema")) check_schema(j, kExperimentSchema, 1);
    read_opt(j, "seed", c.seed);
    if (j.contains("scene")) c.scene = scene_config_from_json(j.at("scene"), c.scene);
    read_opt(j, "sequences_per_difficulty", c.sequences_per_difficulty);
    if (j.contains("gait")) gait(j.at("gait"), c.gait);
    if (j.contains("validation_gait")) gait(j.at("validation_gait"), c.validation_gait);
    if (j.contains("heldout_gait")) gait(j.at("heldout_gait"), c.heldout_gait);
    if (j.contains("architecture")) {
      const json& a = j.at("architecture");
      read_opt(a, "history", c.architecture.history);
      read_opt(a, "encoder_widths", c.architecture.encoder_widths);
      read_opt(a, "decoder_width", c.architecture.decoder_width);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      read_opt(t, "epochs", c.train.epochs);
      read_opt(t, "batch_size", c.train.batch_size);
      read_opt(t, "learning_rate", c.train.learning_rate);
      read_opt(t, "lr_decay", c.train.lr_decay);
      read_opt(t, "recalibrate_bias", c.train.recalibrate_bias);
      read_opt(t, "validation_fraction", c.train.validation_fraction);
      read_opt(t, "seed", c.train.seed);
    }
    if (j.contains("factors")) {
      const json& f = j.at("factors");
      FactorConfig& fc = c.factors;
      if (f.contains("weights")) {
        const json& w = f.at("weights");
        read_opt(w, "lm", fc.weights.lm);
        read_opt(w, "mm", fc.weights.mm);
        read_opt(w, "posture", fc.weights.posture);
        read_opt(w, "shape", fc.weights.shape);
      }
      auto loss = [](const json& l, RobustLoss& out) {
        if (l.contains("kind")) out.kind = robust_kind_from_string(l.at("kind").get<std::string>());
        read_opt(l, "scale", out.scale);
      };
      if (f.contains("landmark_loss")) loss(f.at("landmark_loss"), fc.landmark_loss);
      if (f.contains("joint_loss")) loss(f.at("joint_loss"), fc.joint_loss);
      read_opt(f, "joints", fc.joints);
      read_opt(f, "posture", fc.posture);
      read_opt(f, "shape", fc.shape);
      read_opt(f, "hmr_posture_prior", fc.hmr_posture_prior);
      read_opt(f, "motion_through_network", fc.motion_through_network);
      read_opt(f, "network_jacobian_in_hessian", fc.network_jacobian_in_hessian);
    }
    if (j.contains("schedule")) {
      const json& s = j.at("schedule");
      if (s.contains("optimizer")) c.schedule.optimizer = optimizer_from_string(s.at("optimizer").get<std::string>());
      read_opt(s, "step1_iters", c.schedule.step1_iters);
      read_opt(s, "step2_iters", c.schedule.step2_iters);
      read_opt(s, "tolerance", c.schedule.tolerance);
      if (s.contains("learning_rates")) {
        const json& l = s.at("learning_rates");
        read_opt(l, "poses", c.schedule.learning_rates.poses);
        read_opt(l, "scale", c.schedule.learning_rates.scale);
        read_opt(l, "landmarks", c.schedule.learning_rates.landmarks);
        read_opt(l, "body", c.schedule.learning_rates.body);
      }
    }
    if (j.contains("init")) {
      const json& i = j.at("init");
      read_opt(i, "seed_scale", c.init.seed_scale);
      read_opt(i, "seed_position_noise", c.init.seed_position_noise);
      read_opt(i, "seed_rotation_noise", c.init.seed_rotation_noise);
      read_opt(i, "triangulation_threshold_px", c.init.triangulation.threshold_px);
      read_opt(i, "ransac_threshold_px", c.init.ransac.threshold_px);
      read_opt(i, "ransac_iterations", c.init.ransac.iterations);
      read_opt(i, "rounds", c.init.rounds);
      read_opt(i, "ba_iterations", c.init.ba_iterations);
    }
    if (j.contains("toggles")) {
      const json& t = j.at("toggles");
      read_opt(t, "motion_factors", c.motion_factors);
      read_opt(t, "structural_landmarks", c.structural_landmarks);
      read_opt(t, "scale_overparam", c.scale_overparam);
    }
    if (j.contains("baseline_scale_range")) {
      const auto r = j.at("baseline_scale_range").get<std::vector<double>>();
      if (r.size() != 2) throw ConfigError("experiment: baseline_scale_range needs two values");
      c.baseline_scale_min = r[0];
      c.baseline_scale_max = r[1];
    }
    read_opt(j, "scale_perturbations", c.scale_perturbations);
    if (j.contains("scale_study_difficulty")) {
      c.scale_study_difficulty = difficulty_from_string(j.at("scale_study_difficulty").get<std::string>());
    }
    read_opt(j, "scale_study_iters", c.scale_study_iters);
    if (j.contains("ablation")) {
      const json& a = j.at("ablation");
      read_opt(a, "sequences", c.ablation_sequences);
      if (a.contains("difficulty")) c.ablation_difficulty = difficulty_from_string(a.at("difficulty").get<std::string>());
      read_opt(a, "position", c.ablation_position);
      read_opt(a, "rotation", c.ablation_rotation);
      read_opt(a, "seed_scale", c.ablation_seed_scale);
      read_opt(a, "iters", c.ablation_iters);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Scenes and problems.

// Scene number index of the given difficulty; camera families rotate.
inline SceneConfig sequence_scene(const ExperimentConfig& cfg, Difficulty d, int index) {
  static constexpr std::array<CameraFamily, 3> kFamilies = {CameraFamily::orbit, CameraFamily::arc, CameraFamily::handheld};
  SceneConfig s = cfg.scene;
  s.difficulty = d;
  s.family = kFamilies[static_cast<std::size_t>(index) % kFamilies.size()];
  s.seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(d) * 1000ULL + static_cast<std::uint64_t>(index);
  return s;
}

inline std::string sequence_name(const SceneConfig& s, int index) {
  return std::string(to_string(s.difficulty)) + "_" + to_string(s.family) + "_" + std::to_string(index);
}

inline Problem make_problem(const SceneDataset& ds, const KinematicTemplate& body, const MotionModelNet* net,
                            const FactorConfig& factors, bool motion, bool landmarks,
                            std::vector<std::vector<char>> landmark_active = {}) {
  Problem p;
  p.body = &body;
  p.intrinsics = ds.intrinsics();
  p.measurements = &ds.measurements;
  p.net = motion ? net : nullptr;
  p.config = factors;
  p.config.motion = motion && net != nullptr;
  p.config.landmarks = landmarks;
  p.landmark_active = std::move(landmark_active);
  return p;
}

// Blocks that may move given the experiment toggles.
inline FreeMask allowed_blocks(bool landmarks, bool scale_overparam) {
  FreeMask m;
  m.landmarks = landmarks;
  m.scale = scale_overparam;
  return m;
}

struct SequenceRun {
  std::string name;
  double seed_scale = 1.0;
  TrajectoryErrorReport initial;
  TrajectoryErrorReport final;
  double final_s = 1.0;
  OptimResult optim;
};

// Initialisation followed by the two-step optimisation.
inline SequenceRun run_sequence(const SceneDataset& ds, const KinematicTemplate& body, const MotionModelNet* net,
                                const ExperimentConfig& cfg, double seed_scale, bool motion, bool landmarks,
                                const std::string& name = "sequence") {
  if (motion && !net) throw ConfigError("run: the motion-model factors need a trained motion model");
  InitConfig ic = cfg.init;
  ic.seed_scale = seed_scale;
  ic.seed = ds.config.seed;
  ic.ransac.seed = ds.config.seed;
  const InitResult init = initialize(ds, body, ic);
  const Problem p = make_problem(ds, body, net, cfg.factors, motion, landmarks, init.landmark_active);
  OptimSchedule sched = cfg.schedule;
  sched.allowed = allowed_blocks(landmarks, cfg.scale_overparam);
  const Trajectories gt = trajectories_from_truth(ds.truth, body);
  SequenceRun run;
  run.name = name;
  run.seed_scale = seed_scale;
  run.initial = aligned_report(trajectories_from_state(init.state, body), gt, AlignmentMethod::independent);
  run.optim = optimize(init.state, p, sched);
  run.final = aligned_report(trajectories_from_state(run.optim.state, body), gt, AlignmentMethod::independent);
  run.final_s = run.optim.state.s;
  return run;
}

// ---------------------------------------------------------------------------
// Scale recovery: cameras fixed at the true poses with positions divided by
// the perturbation, no landmarks; only s, the humans and the body move. The
// correct answer is s equal to the perturbation.

struct ScaleStudyRow {
  double perturbation = 1.0;
  double estimated_scale = 1.0;
  double deviation_pct = 0.0;  // |s / perturbation - 1| * 100
  double h_ate_initial = 0.0;  // SE(3), metres
  double h_ate_final = 0.0;
};

struct ScaleStudyResult {
  std::string sequence;
  double h_ate_unperturbed = 0.0;  // SE(3) H-ATE of the unperturbed initialisation
  std::vector<ScaleStudyRow> rows;
};

inline StateVector scale_study_state(const SceneDataset& ds, double perturbation) {
  StateVector x;
  x.s = 1.0;
  ShapeVector beta = ShapeVector::Zero();
  for (int k = 0; k < ds.frames(); ++k) {
    const auto ki = static_cast<std::size_t>(k);
    Pose6D cam = ds.truth.cameras[ki];
    cam.r /= perturbation;
    x.cameras.push_back(cam);
    const BodyMeasurement& bm = ds.measurements[ki].body;
    x.humans.push_back(pose_compose(cam, bm.t_ch));
    x.theta.push_back(bm.theta);
    beta += bm.beta;
  }
  x.beta = beta / ds.frames();
  return x;
}

inline ScaleStudyResult run_scale_study(const KinematicTemplate& body, const MotionModelNet& net, const ExperimentConfig& cfg) {
  const SceneConfig sc = sequence_scene(cfg, cfg.scale_study_difficulty, 0);
  const SceneDataset ds = generate_scene(body, sc);
  const Trajectories gt = trajectories_from_truth(ds.truth, body);
  ScaleStudyResult res;
  res.sequence = sequence_name(sc, 0);
  {
    const StateVector x0 = scale_study_state(ds, 1.0);
    res.h_ate_unperturbed = ate(x0.human_positions(), gt.humans, AlignMode::se3).rms;
  }
  const Problem p = make_problem(ds, body, &net, cfg.factors, true, false);
  OptimSchedule sched = cfg.schedule;
  sched.step1_iters = cfg.scale_study_iters[0];
  sched.step2_iters = cfg.scale_study_iters[1];
  sched.allowed = FreeMask{};
  sched.allowed.cameras = false;
  sched.allowed.landmarks = false;
  for (double pert : cfg.scale_perturbations) {
    const StateVector x0 = scale_study_state(ds, pert);
    const OptimResult r = optimize(x0, p, sched);
    ScaleStudyRow row;
    row.perturbation = pert;
    row.estimated_scale = r.state.s;
    row.deviation_pct = std::abs(r.state.s / pert - 1.0) * 100.0;
    row.h_ate_initial = ate(x0.human_positions(), gt.humans, AlignMode::se3).rms;
    row.h_ate_final = ate(r.state.human_positions(), gt.humans, AlignMode::se3).rms;
    res.rows.push_back(row);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Landmark ablation: perturb the initialised cameras, then optimise with and
// without the structural landmarks.

struct AblationRow {
  std::string sequence;
  double c_ate_initial = 0.0;    // SE(3), before perturbation
  double c_ate_perturbed = 0.0;
  double c_ate_with = 0.0;
  double c_ate_without = 0.0;
};

inline StateVector perturb_cameras(const StateVector& x, double position, double rotation, std::uint64_t seed) {
  Rng rng(seed);
  StateVector y = x;
  for (int k = 1; k < y.frames(); ++k) {
    auto& c = y.cameras[static_cast<std::size_t>(k)];
    const Vec3 dp(rng.uniform(-position, position), rng.uniform(-position, position), rng.uniform(-position, position));
    const Vec3 dr(rng.uniform(-rotation, rotation), rng.uniform(-rotation, rotation), rng.uniform(-rotation, rotation));
    c.r += dp / y.s;
    c.phi = so3_log(c.rotation() * so3_exp(dr));
  }
  return y;
}

inline std::vector<AblationRow> run_landmark_ablation(const KinematicTemplate& body, const MotionModelNet& net,
                                                      const ExperimentConfig& cfg) {
  std::vector<AblationRow> rows;
  for (int i = 0; i < cfg.ablation_sequences; ++i) {
    const SceneConfig sc = sequence_scene(cfg, cfg.ablation_difficulty, i);
    const SceneDataset ds = generate_scene(body, sc);
    InitConfig ic = cfg.init;
    ic.seed_scale = cfg.ablation_seed_scale;
    ic.seed = ic.ransac.seed = sc.seed;
    const InitResult init = initialize(ds, body, ic);
    const std::vector<Vec3> gt_c = [&] {
      std::vector<Vec3> v;
      for (const auto& c : ds.truth.cameras) v.push_back(c.r);
      return v;
    }();
    const StateVector perturbed = perturb_cameras(init.state, cfg.ablation_position, cfg.ablation_rotation, sc.seed ^ 0xab1aULL);
    AblationRow row;
    row.sequence = sequence_name(sc, i);
    row.c_ate_initial = ate(init.state.camera_positions(), gt_c, AlignMode::se3).rms;
    row.c_ate_perturbed = ate(perturbed.camera_positions(), gt_c, AlignMode::se3).rms;
    for (bool with : {true, false}) {
      const Problem p = make_problem(ds, body, &net, cfg.factors, true, with, init.landmark_active);
      OptimSchedule sched = cfg.schedule;
      sched.step1_iters = cfg.ablation_iters[0];
      sched.step2_iters = cfg.ablation_iters[1];
      sched.allowed = allowed_blocks(with, cfg.scale_overparam);
      const OptimResult r = optimize(perturbed, p, sched);
      (with ? row.c_ate_with : row.c_ate_without) = ate(r.state.camera_positions(), gt_c, AlignMode::se3).rms;
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Baseline comparison: the full graph against the graph without the motion
// model, both from an initialisation at an arbitrary scale.

struct BaselineRow {
  std::string sequence;
  double seed_scale = 1.0;
  TrajectoryErrorReport ours;
  TrajectoryErrorReport baseline;
};

inline std::vector<BaselineRow> run_baseline_compare(const KinematicTemplate& body, const MotionModelNet& net,
                                                     const ExperimentConfig& cfg) {
  std::vector<BaselineRow> rows;
  Rng rng(cfg.seed ^ 0xba5eULL);
  for (Difficulty d : {Difficulty::easy, Difficulty::medium, Difficulty::hard}) {
    for (int i = 0; i < cfg.sequences_per_difficulty; ++i) {
      const SceneConfig sc = sequence_scene(cfg, d, i);
      const SceneDataset ds = generate_scene(body, sc);
      const double s0 = rng.uniform(cfg.baseline_scale_min, cfg.baseline_scale_max);
      BaselineRow row;
      row.sequence = sequence_name(sc, i);
      row.seed_scale = s0;
      row.ours = run_sequence(ds, body, &net, cfg, s0, true, cfg.structural_landmarks, row.sequence).final;
      row.baseline = run_sequence(ds, body, &net, cfg, s0, false, cfg.structural_landmarks, row.sequence).final;
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Motion-model training and quality on held-out gait.

inline MotionModelNet train_motion_model(const KinematicTemplate& body, const ExperimentConfig& cfg,
                                         TrainReport* report = nullptr) {
  const auto samples = generate_gait_dataset(body, cfg.gait);
  const auto validation = generate_gait_dataset(body, cfg.validation_gait);
  return train(samples, validation, cfg.architecture, cfg.train, report);
}

struct MotionEvalResult {
  std::size_t samples = 0;
  double mean_error = 0.0;         // metres, norm of the translation error
  double mean_displacement = 0.0;  // metres, norm of the true translation
  double ratio = 0.0;
  Vec3 axis_mean = Vec3::Zero();   // signed per-axis error mean
  Vec3 axis_std = Vec3::Zero();
  double constant_velocity_error = 0.0;
  std::vector<Vec3> errors;  // per sample, prediction - truth
};

// Constant velocity: the next relative translation equals the previous one.
inline MotionEvalResult evaluate_motion_model(const MotionModelNet& net, const KinematicTemplate& body, const GaitDatasetConfig& g) {
  MotionEvalResult r;
  Rng rng(g.seed);
  double cv_sum = 0.0;
  std::size_t cv_n = 0;
  for (int i = 0; i < g.sequences; ++i) {
    Rng seq_rng = rng.split();
    const GaitSequence seq = generate_gait(body, random_gait(seq_rng, g));
    const auto samples = make_motion_samples(seq, g.history, g.input_noise, &seq_rng);
    Eigen::MatrixXd raw(net.input_dim(), static_cast<Eigen::Index>(samples.size()));
    for (std::size_t c = 0; c < samples.size(); ++c) raw.col(static_cast<Eigen::Index>(c)) = assemble_input(samples[c].history, samples[c].beta);
    const ForwardTrace tr = forward_normalized(net, normalize_inputs(net, raw));
    for (std::size_t c = 0; c < samples.size(); ++c) {
      const MotionPrediction pred = prediction_from_trace(net, tr, raw.col(static_cast<Eigen::Index>(c)), static_cast<Eigen::Index>(c));
      const Vec3 e = pred.translation - samples[c].target_translation;
      r.errors.push_back(e);
      r.mean_error += e.norm();
      r.mean_displacement += samples[c].target_translation.norm();
      if (c > 0) {
        cv_sum += (samples[c - 1].target_translation - samples[c].target_translation).norm();
        ++cv_n;
      }
    }
  }
  r.samples = r.errors.size();
  if (r.samples == 0) throw InvalidArgument("evaluate_motion_model: no samples");
  const auto n = static_cast<double>(r.samples);
  r.mean_error /= n;
  r.mean_displacement /= n;
  r.ratio = r.mean_error / r.mean_displacement;
  for (const auto& e : r.errors) r.axis_mean += e;
  r.axis_mean /= n;
  for (const auto& e : r.errors) r.axis_std += (e - r.axis_mean).cwiseAbs2();
  r.axis_std = (r.axis_std / n).cwiseSqrt();
  r.constant_velocity_error = cv_n ? cv_sum / static_cast<double>(cv_n) : 0.0;
  return r;
}

// Histogram of one error axis over [-range, range].
inline std::vector<int> error_histogram(const std::vector<Vec3>& errors, int axis, double range, int bins) {
  std::vector<int> h(static_cast<std::size_t>(bins), 0);
  for (const auto& e : errors) {
    const double t = (e[axis] + range) / (2.0 * range);
    if (t < 0.0 || t >= 1.0) continue;
    ++h[static_cast<std::size_t>(t * bins)];
  }
  return h;
}

// ---------------------------------------------------------------------------
// Table output.

inline std::string scale_study_csv(const ScaleStudyResult& r) {
  std::string out = "perturbation,estimated_scale,deviation_pct,h_ate_initial,h_ate_final\n";
  for (const auto& row : r.rows) {
    out += format_number(row.perturbation, 3) + "," + format_number(row.estimated_scale) + "," +
           format_number(row.deviation_pct, 6) + "," + format_number(row.h_ate_initial) + "," + format_number(row.h_ate_final) +
           "\n";
  }
  return out;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "sequence,c_ate_initial,c_ate_perturbed,c_ate_with_landmarks,c_ate_without_landmarks\n";
  for (const auto& r : rows) {
    out += r.sequence + "," + format_number(r.c_ate_initial) + "," + format_number(r.c_ate_perturbed) + "," +
           format_number(r.c_ate_with) + "," + format_number(r.c_ate_without) + "\n";
  }
  return out;
}

inline std::string baseline_csv(const std::vector<BaselineRow>& rows) {
  std::string out = "sequence,config,seed_scale,c_ate_se3,c_ate_sim3,h_ate_se3,h_ate_sim3,j_ate_se3,j_ate_sim3,scale\n";
  for (const auto& r : rows) {
    for (const auto* rep : {&r.baseline, &r.ours}) {
      out += r.sequence + "," + (rep == &r.ours ? "ours" : "no_mm") + "," + format_number(r.seed_scale, 6);
      for (double v : {rep->c_ate_se3, rep->c_ate_sim3, rep->h_ate_se3, rep->h_ate_sim3, rep->j_ate_se3, rep->j_ate_sim3,
                       rep->scale_estimate}) {
        out += "," + format_number(v);
      }
      out += "\n";
    }
  }
  return out;
}

inline std::string motion_eval_csv(const MotionEvalResult& r) {
  std::string out = "samples,mean_error,mean_displacement,ratio,mean_x,mean_y,mean_z,std_x,std_y,std_z,constant_velocity_error\n";
  out += std::to_string(r.samples) + "," + format_number(r.mean_error) + "," + format_number(r.mean_displacement) + "," +
         format_number(r.ratio) + "," + format_number(r.axis_mean.x()) + "," + format_number(r.axis_mean.y()) + "," +
         format_number(r.axis_mean.z()) + "," + format_number(r.axis_std.x()) + "," + format_number(r.axis_std.y()) + "," +
         format_number(r.axis_std.z()) + "," + format_number(r.constant_velocity_error) + "\n";
  return out;
}

// State serialisation for run outputs.
inline json state_to_json(const StateVector& x) {
  json j;
  j["schema"] = "bodyslam.state";
  j["version"] = 1;
  j["s"] = x.s;
  j["beta"] = to_json_array(x.beta);
  j["cameras"] = json::array();
  j["humans"] = json::array();
  j["theta"] = json::array();
  j["landmarks"] = json::array();
  for (int k = 0; k < x.frames(); ++k) {
    const auto ki = static_cast<std::size_t>(k);
    j["cameras"].push_back(pose_to_json(x.cameras[ki]));
    j["humans"].push_back(pose_to_json(x.humans[ki]));
    j["theta"].push_back(to_json_array(x.theta[ki]));
  }
  for (const auto& l : x.landmarks) j["landmarks"].push_back(to_json_array(l));
  return j;
}

}  // namespace bodyslam
