// Acceptance run: one PASS/FAIL line per criterion. Criteria 3-6 share one
// motion model trained with the default experiment config; criterion 8
// repeats the reduced studies from configs/quick.json and compares file
// hashes. Outputs land in --out.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "bodyslam/bodyslam.hpp"

namespace fs = std::filesystem;
using namespace bodyslam;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back((ok ? "" : "!") + what);
  }
};

std::vector<std::string> g_lines;

void report(int id, const std::string& title, const Verdict& v, double secs, double limit) {
  const bool in_time = limit <= 0 || secs < limit;
  std::ostringstream line;
  line << "criterion " << id << ": " << (v.pass && in_time ? "PASS" : "FAIL") << "  " << title << "  [" << fmt(secs, 3) << " s";
  if (limit > 0) line << " < " << fmt(limit, 3) << " s";
  line << "]";
  for (const auto& n : v.notes) line << "\n    " << n;
  std::cout << line.str() << std::endl;
  g_lines.push_back(line.str());
}

const KinematicTemplate& body() {
  static const KinematicTemplate t = canonical_template();
  return t;
}

MotionModelNet small_net(std::uint64_t seed) {
  MotionArchitecture a;
  a.encoder_widths = {8, 8, 8};
  a.decoder_width = 8;
  return make_motion_model(a, seed);
}

StateVector truth_state(const SceneDataset& ds) {
  StateVector x;
  x.cameras = ds.truth.cameras;
  x.humans = ds.truth.humans;
  x.theta = ds.truth.theta;
  x.beta = ds.truth.beta;
  x.landmarks = ds.truth.landmarks;
  return x;
}

Problem base_problem(const SceneDataset& ds, const MotionModelNet* net) {
  Problem p;
  p.body = &body();
  p.intrinsics = ds.intrinsics();
  p.measurements = &ds.measurements;
  p.net = net;
  p.config.motion = net != nullptr;
  return p;
}

// Largest coordinate change per state block.
double largest_block_move(const StateVector& a, const StateVector& b) {
  double m = std::abs(a.s - b.s);
  m = std::max(m, (a.beta - b.beta).cwiseAbs().maxCoeff());
  for (int k = 0; k < a.frames(); ++k) {
    const auto i = static_cast<std::size_t>(k);
    m = std::max(m, (a.cameras[i].r - b.cameras[i].r).cwiseAbs().maxCoeff());
    m = std::max(m, (a.cameras[i].phi - b.cameras[i].phi).cwiseAbs().maxCoeff());
    m = std::max(m, (a.humans[i].r - b.humans[i].r).cwiseAbs().maxCoeff());
    m = std::max(m, (a.humans[i].phi - b.humans[i].phi).cwiseAbs().maxCoeff());
    m = std::max(m, (a.theta[i] - b.theta[i]).cwiseAbs().maxCoeff());
  }
  for (std::size_t l = 0; l < a.landmarks.size(); ++l) m = std::max(m, (a.landmarks[l] - b.landmarks[l]).cwiseAbs().maxCoeff());
  return m;
}

// ---------------------------------------------------------------------------

void criterion1() {
  const auto t0 = Clock::now();
  Verdict v;
  const MotionModelNet net = small_net(1);
  double worst_cost = 0, worst_move = 0;
  int n = 0;
  for (Difficulty d : {Difficulty::easy, Difficulty::medium, Difficulty::hard}) {
    for (CameraFamily f : {CameraFamily::orbit, CameraFamily::arc, CameraFamily::handheld}) {
      SceneConfig sc;
      sc.noise = NoiseConfig::none();
      sc.difficulty = d;
      sc.family = f;
      sc.seed = 100 + static_cast<std::uint64_t>(n++);
      const SceneDataset ds = generate_scene(body(), sc);
      Problem p = base_problem(ds, &net);
      p.config.frozen_predictions = true;
      p.frozen = truth_predictions(ds.truth, net.history());
      const StateVector x = truth_state(ds);
      worst_cost = std::max(worst_cost, total_cost(x, p));
      OptimSchedule s;
      s.optimizer = OptimizerKind::gauss_newton;
      s.step1_iters = 10;
      s.step2_iters = 5;
      worst_move = std::max(worst_move, largest_block_move(optimize(x, p, s).state, x));
    }
  }
  v.check(worst_cost < 1e-8, "cost at truth over " + std::to_string(n) + " noise-free sequences: max " + fmt(worst_cost) + " < 1e-8");
  v.check(worst_move < 1e-6, "optimizer started at truth: largest block move " + fmt(worst_move) + " < 1e-6");
  report(1, "generative zero", v, seconds_since(t0), 10);
}

double worst_gradient_error(const StateVector& x, const Problem& p) {
  const double h = 1e-6;
  Eigen::VectorXd g;
  cost_and_gradient(x, p, g);
  const StateLayout lay(x);
  const Eigen::VectorXd v = flatten(x);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    Eigen::VectorXd vp = v, vm = v;
    vp[i] += h;
    vm[i] -= h;
    const double fd = (total_cost(unflatten(vp, lay), p) - total_cost(unflatten(vm, lay), p)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

void criterion2() {
  const auto t0 = Clock::now();
  Verdict v;
  SceneConfig sc;
  sc.frames = 3;
  sc.landmarks = 12;
  sc.seed = 5;
  sc.noise.landmark_outliers = 0.1;
  sc.noise.joint_outliers = 0.1;
  const SceneDataset ds = generate_scene(body(), sc);
  const MotionModelNet net = small_net(6);
  StateVector x = truth_state(ds);
  {
    Rng r(7);
    x.s = 1.3;
    for (int k = 0; k < x.frames(); ++k) {
      const auto i = static_cast<std::size_t>(k);
      x.cameras[i].r = x.cameras[i].r / x.s + r.normal3(0.01);
      x.cameras[i].phi += r.normal3(0.01);
      x.humans[i].r += r.normal3(0.02);
      x.humans[i].phi += r.normal3(0.02);
      for (int d = 0; d < kPostureDim; ++d) x.theta[i][d] += r.normal(0.05);
    }
    for (int d = 0; d < kShapeDim; ++d) x.beta[d] += r.normal(0.1);
    for (auto& l : x.landmarks) l += r.normal3(0.05);
  }
  const Problem full = base_problem(ds, &net);
  for (const std::string f : {"landmarks", "joints", "motion", "posture", "shape", "all"}) {
    Problem p = full;
    if (f != "all") {
      p.config.landmarks = f == "landmarks";
      p.config.joints = f == "joints";
      p.config.motion = f == "motion";
      p.config.posture = p.config.hmr_posture_prior = f == "posture";
      p.config.shape = f == "shape";
    }
    const double e = worst_gradient_error(x, p);
    v.check(e < 1e-4, f + " factor gradient vs central FD: " + fmt(e) + " < 1e-4");
  }

  // Network backprop on a width-8 net with non-trivial normalisation.
  MotionModelNet mm = small_net(20);
  Rng r(21);
  for (int i = 0; i < mm.input_dim(); ++i) {
    mm.norm.input_mean[i] = r.normal(0.2);
    mm.norm.input_std[i] = r.uniform(0.5, 2.0);
  }
  mm.norm.translation_mean = r.normal3(0.01);
  mm.norm.translation_std = Vec3(0.02, 0.03, 0.01);
  for (int d = 0; d < kFullPoseDim; ++d) mm.norm.pose_scale[d] = r.uniform(0.05, 0.2);
  mm.for_each_layer([&](DenseLayer& l) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = r.normal(0.1);
  });
  double worst = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    MotionSample s;
    for (int i = 0; i < mm.history(); ++i) {
      FullPoseVector h;
      for (int d = 0; d < kFullPoseDim; ++d) h[d] = r.normal(0.3);
      s.history.push_back(h);
    }
    for (int d = 0; d < kShapeDim; ++d) s.beta[d] = r.normal(0.5);
    for (int d = 0; d < kFullPoseDim; ++d) s.target_pose[d] = r.normal(0.3);
    s.target_translation = r.normal3(0.02);
    NetGradients g = backprop_gradients(mm, s);
    MotionModelNet probe = mm;
    const auto pl = detail::layer_ptrs(probe);
    const auto gl = detail::layer_ptrs(g);
    const double h = 1e-4;
    auto check = [&](double& param, double analytic) {
      const double keep = param;
      param = keep + h;
      const double fp = training_loss(probe, s);
      param = keep - h;
      const double fm = training_loss(probe, s);
      param = keep;
      const double fd = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(fd - analytic) / std::max(1.0, std::abs(fd)));
    };
    for (std::size_t li = 0; li < pl.size(); ++li) {
      for (Eigen::Index i = 0; i < pl[li]->weight.size(); ++i) check(pl[li]->weight.data()[i], gl[li]->weight.data()[i]);
      for (Eigen::Index i = 0; i < pl[li]->bias.size(); ++i) check(pl[li]->bias[i], gl[li]->bias[i]);
    }
  }
  v.check(worst < 1e-3, "motion-model backprop vs central FD (width 8): " + fmt(worst) + " < 1e-3");
  report(2, "gradient correctness", v, seconds_since(t0), 30);
}

void criterion3(const MotionModelNet& net, const ExperimentConfig& cfg, const fs::path& out) {
  const auto t0 = Clock::now();
  Verdict v;
  const ScaleStudyResult r = run_scale_study(body(), net, cfg);
  write_text_file((out / "scale_study.csv").string(), scale_study_csv(r));
  const std::set<double> tight = {2.0, 1.0, 0.5}, loose = {5.0, 0.1};
  for (const auto& row : r.rows) {
    const std::string tag = "perturbation " + fmt(row.perturbation) + ": s " + fmt(row.estimated_scale) + ", deviation " +
                            fmt(row.deviation_pct, 3) + "%";
    if (tight.count(row.perturbation)) v.check(row.deviation_pct <= 10.0, tag + " <= 10%");
    else if (loose.count(row.perturbation)) v.check(row.deviation_pct <= 35.0, tag + " <= 35%");
    else v.notes.push_back(tag + " (not graded)");
    v.check(row.h_ate_final <= 2.0 * r.h_ate_unperturbed, "  H-ATE " + fmt(row.h_ate_initial) + " -> " + fmt(row.h_ate_final) +
                                                                " m <= 2 x " + fmt(r.h_ate_unperturbed) + " m");
  }
  report(3, "scale recovery on " + r.sequence, v, seconds_since(t0), 300);
}

void criterion4(const MotionModelNet& net, const ExperimentConfig& cfg, const fs::path& out) {
  const auto t0 = Clock::now();
  Verdict v;
  const auto rows = run_baseline_compare(body(), net, cfg);
  write_text_file((out / "baseline_compare.csv").string(), baseline_csv(rows));
  v.check(rows.size() >= 9, std::to_string(rows.size()) + " sequences >= 9");
  for (const auto& r : rows) {
    const auto& o = r.ours;
    const auto& b = r.baseline;
    const double rel = std::abs(o.c_ate_sim3 - b.c_ate_sim3) / b.c_ate_sim3;
    const bool ok = o.h_ate_se3 < b.h_ate_se3 && o.c_ate_se3 < b.c_ate_se3 && o.scale_estimate >= 0.9 &&
                    o.scale_estimate <= 1.1 && (b.scale_estimate < 0.9 || b.scale_estimate > 1.1) && rel <= 0.2;
    v.check(ok, r.sequence + ": H-ATE " + fmt(o.h_ate_se3) + " vs " + fmt(b.h_ate_se3) + ", C-ATE " + fmt(o.c_ate_se3) + " vs " +
                    fmt(b.c_ate_se3) + ", scale " + fmt(o.scale_estimate) + " vs " + fmt(b.scale_estimate) +
                    ", Sim3 C-ATE gap " + fmt(100 * rel, 3) + "%");
  }
  report(4, "baseline comparison (ours vs no motion model)", v, seconds_since(t0), 900);
}

void criterion5(const MotionModelNet& net, const ExperimentConfig& cfg, const fs::path& out) {
  const auto t0 = Clock::now();
  Verdict v;
  const auto rows = run_landmark_ablation(body(), net, cfg);
  write_text_file((out / "landmark_ablation.csv").string(), ablation_csv(rows));
  double pert = 0, with = 0, without = 0;
  for (const auto& r : rows) {
    pert += r.c_ate_perturbed / rows.size();
    with += r.c_ate_with / rows.size();
    without += r.c_ate_without / rows.size();
  }
  v.check(with < pert, "mean C-ATE with landmarks " + fmt(with) + " < perturbed " + fmt(pert));
  v.check(without < pert, "mean C-ATE without landmarks " + fmt(without) + " < perturbed " + fmt(pert));
  v.check(with <= without, "landmarks on " + fmt(with) + " <= off " + fmt(without));
  report(5, "landmark ablation", v, seconds_since(t0), 300);
}

void criterion6(const MotionModelNet& net, const ExperimentConfig& cfg, double train_seconds, const fs::path& out) {
  const auto t0 = Clock::now();
  Verdict v;
  const MotionEvalResult r = evaluate_motion_model(net, body(), cfg.heldout_gait);
  write_text_file((out / "motion_eval.csv").string(), motion_eval_csv(r));
  v.check(r.ratio < 0.3, "mean error " + fmt(1000 * r.mean_error, 3) + " mm / displacement " + fmt(1000 * r.mean_displacement, 3) +
                             " mm = " + fmt(r.ratio, 3) + " < 0.3");
  for (int a = 0; a < 3; ++a) {
    const double z = std::abs(r.axis_mean[a]) / r.axis_std[a];
    v.check(z <= 0.1, std::string("axis ") + "xyz"[a] + ": |mean| / std = " + fmt(z, 3) + " <= 0.1");
  }
  if (train_seconds < 0) v.notes.push_back("model loaded from file; training time not measured");
  report(6, "motion-model quality", v, seconds_since(t0) + std::max(0.0, train_seconds), 600);
}

void criterion7() {
  const auto t0 = Clock::now();
  Verdict v;
  Rng r(4);
  auto walk = [&](int n) {
    std::vector<Vec3> w;
    Vec3 p = Vec3::Zero();
    for (int i = 0; i < n; ++i) w.push_back(p += r.normal3(0.3));
    return w;
  };
  auto similarity = [&](double s) {
    SimTransform t;
    t.scale = s;
    t.rotation = r.normal3(1.0);
    t.translation = r.normal3(5.0);
    return t;
  };
  double inv = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto gt = walk(80);
    std::vector<Vec3> est;
    for (const auto& p : gt) est.push_back(p + r.normal3(0.1));
    const double base = ate(est, gt, AlignMode::sim3).rms;
    const auto moved = similarity(r.uniform(0.1, 10.0)).apply(est);
    inv = std::max(inv, std::abs(ate(moved, gt, AlignMode::sim3).rms - base));
  }
  v.check(inv < 1e-9, "Sim(3) ATE change under similarity transforms " + fmt(inv) + " < 1e-9");

  int dominated = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Trajectories gt;
    for (int k = 0; k < 25; ++k) {
      gt.cameras.push_back({r.normal3(2.0), r.normal3(0.5)});
      gt.humans.push_back(r.normal3(2.0));
      JointArray j;
      for (auto& p : j) p = gt.humans.back() + r.normal3(0.3);
      gt.joints.push_back(j);
    }
    const SimTransform tc = similarity(r.uniform(0.5, 2.0));
    SimTransform th = tc;
    th.translation += r.normal3(0.2);
    th.rotation += r.normal3(0.05);
    Trajectories est = gt;
    for (std::size_t k = 0; k < est.cameras.size(); ++k) {
      est.cameras[k].r = tc.apply(gt.cameras[k].r) + r.normal3(0.05);
      est.humans[k] = th.apply(gt.humans[k]) + r.normal3(0.05);
      for (int j = 0; j < kNumJoints; ++j) est.joints[k][j] = th.apply(gt.joints[k][j]) + r.normal3(0.05);
    }
    const auto m1 = aligned_report(est, gt, AlignmentMethod::independent);
    const auto m2 = aligned_report(est, gt, AlignmentMethod::camera_anchored);
    dominated += (m1.h_ate_se3 <= m2.h_ate_se3 + 1e-12 && m1.h_ate_sim3 <= m2.h_ate_sim3 + 1e-12) ? 1 : 0;
  }
  v.check(dominated == 100, "independent <= camera-anchored alignment in " + std::to_string(dominated) + "/100 trials");

  const auto src = walk(40);
  SimTransform t;
  t.scale = 2.5;
  t.rotation = Vec3(0.3, -1.1, 0.4);
  t.translation = Vec3(1.0, 2.0, -3.0);
  const SimTransform e = umeyama_align(src, t.apply(src), true);
  const double err = std::max({std::abs(e.scale - t.scale), (e.rotation_matrix() - t.rotation_matrix()).norm(),
                               (e.translation - t.translation).norm()});
  v.check(err < 1e-9, "Umeyama recovery error " + fmt(err) + " < 1e-9");
  report(7, "metric layer", v, seconds_since(t0), 30);
}

// Reduced studies, run twice into separate directories.
std::vector<std::string> reduced_studies(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  const MotionModelNet net = train_motion_model(body(), cfg);
  save_motion_model((dir / "motion_model.json").string(), net);
  write_text_file((dir / "scale_study.csv").string(), scale_study_csv(run_scale_study(body(), net, cfg)));
  write_text_file((dir / "baseline_compare.csv").string(), baseline_csv(run_baseline_compare(body(), net, cfg)));
  write_text_file((dir / "landmark_ablation.csv").string(), ablation_csv(run_landmark_ablation(body(), net, cfg)));
  write_text_file((dir / "motion_eval.csv").string(), motion_eval_csv(evaluate_motion_model(net, body(), cfg.heldout_gait)));
  return {"motion_model.json", "scale_study.csv", "baseline_compare.csv", "landmark_ablation.csv", "motion_eval.csv"};
}

void criterion8(const std::string& quick, const fs::path& out) {
  const auto t0 = Clock::now();
  Verdict v;
  const ExperimentConfig cfg = load_experiment_config(quick);
  const auto files = reduced_studies(cfg, out / "run_a");
  reduced_studies(cfg, out / "run_b");
  for (const auto& f : files) {
    const std::string a = file_hash((out / "run_a" / f).string());
    const std::string b = file_hash((out / "run_b" / f).string());
    v.check(a == b, f + ": " + a + (a == b ? " == " : " != ") + b);
  }
  report(8, "determinism (reduced studies run twice)", v, seconds_since(t0), 0);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bodyslam acceptance checks"};
  std::string out = "acceptance_out", model, quick = std::string(BODYSLAM_CONFIG_DIR) + "/quick.json";
  std::vector<int> only;
  app.add_option("--out", out, "output directory");
  app.add_option("--model", model, "use this trained motion model instead of training one");
  app.add_option("--quick-config", quick, "reduced config for the determinism check");
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  const fs::path dir(out);
  fs::create_directories(dir / "studies");
  try {
    if (wanted(1)) criterion1();
    if (wanted(2)) criterion2();
    if (wanted(7)) criterion7();
    if (wanted(3) || wanted(4) || wanted(5) || wanted(6)) {
      const ExperimentConfig cfg;
      double train_seconds = -1;
      MotionModelNet net;
      if (model.empty()) {
        const auto t0 = Clock::now();
        net = train_motion_model(body(), cfg);
        train_seconds = seconds_since(t0);
        save_motion_model((dir / "studies" / "motion_model.json").string(), net);
        std::cout << "trained motion model in " << fmt(train_seconds, 3) << " s" << std::endl;
      } else {
        net = load_motion_model(model);
      }
      if (wanted(6)) criterion6(net, cfg, train_seconds, dir / "studies");
      if (wanted(3)) criterion3(net, cfg, dir / "studies");
      if (wanted(5)) criterion5(net, cfg, dir / "studies");
      if (wanted(4)) criterion4(net, cfg, dir / "studies");
    }
    if (wanted(8)) criterion8(quick, dir / "determinism");
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 1;
  }

  std::string summary;
  int failed = 0;
  for (const auto& l : g_lines) {
    summary += l + "\n";
    failed += l.find(": FAIL") != std::string::npos ? 1 : 0;
  }
  write_text_file((dir / "acceptance.txt").string(), summary);
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
