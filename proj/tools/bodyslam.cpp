// Command-line front end: scene simulation, motion-model training, single
// runs and the evaluation studies. Exit codes: 0 ok, 1 other failure,
// 2 configuration error, 3 divergence.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "bodyslam/bodyslam.hpp"

namespace fs = std::filesystem;
using namespace bodyslam;

namespace {

// BODYSLAM_LOG=quiet|info|debug
int log_level() {
  static const int level = [] {
    const char* v = std::getenv("BODYSLAM_LOG");
    if (!v) return 1;
    const std::string s(v);
    if (s == "quiet" || s == "0") return 0;
    if (s == "debug" || s == "2") return 2;
    return 1;
  }();
  return level;
}

void info(const std::string& m) {
  if (log_level() >= 1) std::cerr << "[bodyslam] " << m << "\n";
}
void debug(const std::string& m) {
  if (log_level() >= 2) std::cerr << "[bodyslam:debug] " << m << "\n";
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string mm;
  bool no_motion = false;
  bool no_landmarks = false;
  std::string optimizer;
};

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.scene.seed = *c.seed;
    cfg.train.seed = *c.seed;
    cfg.gait.seed = *c.seed;
  }
  if (c.no_motion) cfg.motion_factors = false;
  if (c.no_landmarks) cfg.structural_landmarks = false;
  if (!c.optimizer.empty()) cfg.schedule.optimizer = optimizer_from_string(c.optimizer);
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  fs::create_directories(p);
  return p;
}

MotionModelNet need_model(const Common& c) {
  if (c.mm.empty()) throw ConfigError("a trained motion model is required (--mm)");
  try {
    return load_motion_model(c.mm);
  } catch (const FormatError& e) {
    throw ConfigError(std::string("motion model: ") + e.what());
  }
}

std::string trace_csv(const std::vector<double>& trace) {
  std::string s = "iteration,cost\n";
  for (std::size_t i = 0; i < trace.size(); ++i) s += std::to_string(i) + "," + format_number(trace[i], 12) + "\n";
  return s;
}

int cmd_simulate(const Common& c, const std::string& family, const std::string& difficulty) {
  const ExperimentConfig cfg = load_config(c);
  SceneConfig sc = cfg.scene;
  if (!family.empty()) sc.family = camera_family_from_string(family);
  if (!difficulty.empty()) sc.difficulty = difficulty_from_string(difficulty);
  sc.validate();
  const SceneDataset ds = generate_scene(canonical_template(), sc);
  fs::path p(c.out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  export_scene(ds, p.string());
  info("wrote " + p.string() + " (" + std::to_string(ds.frames()) + " frames, config " + scene_config_hash(sc) + ")");
  return 0;
}

int cmd_train(const Common& c) {
  const ExperimentConfig cfg = load_config(c);
  TrainReport rep;
  info("training motion model: " + std::to_string(cfg.gait.sequences) + " walks, " + std::to_string(cfg.train.epochs) +
       " epochs");
  const MotionModelNet net = train_motion_model(canonical_template(), cfg, &rep);
  fs::path p(c.out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  save_motion_model(p.string(), net);
  std::string curve = "epoch,train_loss,validation_loss\n";
  for (std::size_t e = 0; e < rep.train_loss.size(); ++e) {
    curve += std::to_string(e) + "," + format_number(rep.train_loss[e]) + "," + format_number(rep.validation_loss[e]) + "\n";
  }
  fs::path cp = p;
  cp.replace_extension(".curve.csv");
  write_text_file(cp.string(), curve);
  info("best epoch " + std::to_string(rep.best_epoch) + ", validation loss " + format_number(rep.best_validation_loss, 6));
  return 0;
}

int cmd_run(const Common& c, const std::string& scene, std::optional<double> seed_scale) {
  const ExperimentConfig cfg = load_config(c);
  const KinematicTemplate body = canonical_template();
  const SceneDataset ds = scene.empty() ? generate_scene(body, cfg.scene) : import_scene(scene);
  std::optional<MotionModelNet> net;
  if (cfg.motion_factors) net = need_model(c);
  const fs::path dir = out_dir(c);
  const double s0 = seed_scale.value_or(cfg.init.seed_scale);
  info(std::string("run: ") + std::to_string(ds.frames()) + " frames, optimizer " + to_string(cfg.schedule.optimizer) +
       (cfg.motion_factors ? "" : ", no motion model") + (cfg.structural_landmarks ? "" : ", no landmarks"));
  SequenceRun run;
  try {
    run = run_sequence(ds, body, net ? &*net : nullptr, cfg, s0, cfg.motion_factors, cfg.structural_landmarks);
  } catch (const Diverged& e) {
    write_text_file((dir / "trace.csv").string(), trace_csv(e.trace()));
    throw;
  }
  write_json_file((dir / "state.json").string(), state_to_json(run.optim.state));
  write_text_file((dir / "trace.csv").string(), trace_csv(run.optim.trace));
  json rep;
  rep["initial"] = report_to_json(run.initial);
  rep["final"] = report_to_json(run.final);
  rep["s"] = run.final_s;
  rep["seed_scale"] = s0;
  rep["iterations"] = {run.optim.step1_iterations, run.optim.step2_iterations};
  rep["initial_cost"] = run.optim.initial_cost;
  rep["final_cost"] = run.optim.final_cost;
  write_json_file((dir / "report.json").string(), rep);
  write_text_file((dir / "report.csv").string(),
                  std::string(kReportCsvHeader) + "\n" + report_csv_row("initial", run.initial) + "\n" +
                      report_csv_row("final", run.final) + "\n");
  info("C-ATE(Sim3) " + format_number(run.final.c_ate_sim3, 5) + " m, H-ATE(Sim3) " + format_number(run.final.h_ate_sim3, 5) +
       " m, scale " + format_number(run.final.scale_estimate, 5));
  return 0;
}

int cmd_scale_study(const Common& c) {
  const ExperimentConfig cfg = load_config(c);
  const MotionModelNet net = need_model(c);
  const ScaleStudyResult r = run_scale_study(canonical_template(), net, cfg);
  const fs::path dir = out_dir(c);
  write_text_file((dir / "scale_study.csv").string(), scale_study_csv(r));
  for (const auto& row : r.rows) {
    debug("perturbation " + format_number(row.perturbation, 3) + " -> s " + format_number(row.estimated_scale, 5));
  }
  info("scale study on " + r.sequence + " written to " + (dir / "scale_study.csv").string());
  return 0;
}

int cmd_ablation(const Common& c) {
  const ExperimentConfig cfg = load_config(c);
  const MotionModelNet net = need_model(c);
  const auto rows = run_landmark_ablation(canonical_template(), net, cfg);
  const fs::path dir = out_dir(c);
  write_text_file((dir / "landmark_ablation.csv").string(), ablation_csv(rows));
  info("landmark ablation written to " + (dir / "landmark_ablation.csv").string());
  return 0;
}

int cmd_baseline(const Common& c) {
  const ExperimentConfig cfg = load_config(c);
  const MotionModelNet net = need_model(c);
  const auto rows = run_baseline_compare(canonical_template(), net, cfg);
  const fs::path dir = out_dir(c);
  write_text_file((dir / "baseline_compare.csv").string(), baseline_csv(rows));
  info("baseline comparison written to " + (dir / "baseline_compare.csv").string());
  return 0;
}

int cmd_eval(const Common& c, double range, int bins) {
  if (!(range > 0) || bins < 1) throw ConfigError("eval: histogram range and bins must be positive");
  const ExperimentConfig cfg = load_config(c);
  const MotionModelNet net = need_model(c);
  const MotionEvalResult r = evaluate_motion_model(net, canonical_template(), cfg.heldout_gait);
  const fs::path dir = out_dir(c);
  write_text_file((dir / "motion_eval.csv").string(), motion_eval_csv(r));
  std::string hist = "bin_center,x,y,z\n";
  std::array<std::vector<int>, 3> h;
  for (int a = 0; a < 3; ++a) h[static_cast<std::size_t>(a)] = error_histogram(r.errors, a, range, bins);
  for (int b = 0; b < bins; ++b) {
    const double center = -range + (b + 0.5) * 2.0 * range / bins;
    hist += format_number(center, 6);
    for (const auto& axis : h) hist += "," + std::to_string(axis[static_cast<std::size_t>(b)]);
    hist += "\n";
  }
  write_text_file((dir / "error_histogram.csv").string(), hist);
  std::string errs = "x,y,z\n";
  for (const auto& e : r.errors) errs += format_number(e.x()) + "," + format_number(e.y()) + "," + format_number(e.z()) + "\n";
  write_text_file((dir / "errors.csv").string(), errs);
  info("mean error " + format_number(r.mean_error, 5) + " m over " + std::to_string(r.samples) + " samples, ratio " +
       format_number(r.ratio, 4));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bodyslam: joint camera and human trajectory estimation"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&](CLI::App* s, bool model, bool toggles) {
    s->add_option("--config", c.config, "experiment config JSON");
    s->add_option("--seed", c.seed, "master seed");
    s->add_option("--out", c.out, "output file or directory");
    if (model) s->add_option("--mm", c.mm, "trained motion model JSON");
    if (toggles) {
      s->add_flag("--no-motion-model", c.no_motion, "drop the motion-model factors");
      s->add_flag("--no-landmarks", c.no_landmarks, "drop the structural landmarks");
      s->add_option("--optimizer", c.optimizer, "adam or gn")->check(CLI::IsMember({"adam", "gn", "gauss_newton", "gd"}));
    }
  };

  std::string family, difficulty, scene;
  std::optional<double> seed_scale;
  double range = 0.05;
  int bins = 40;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic scene");
  add_common(sim, false, false);
  sim->add_option("--family", family, "orbit, arc or handheld");
  sim->add_option("--difficulty", difficulty, "easy, medium or hard");
  auto* tr = app.add_subcommand("train-mm", "train the motion model on synthetic gait");
  add_common(tr, false, false);
  auto* run = app.add_subcommand("run", "initialise and optimise one sequence");
  add_common(run, true, true);
  run->add_option("--scene", scene, "scene JSON (default: simulate from the config)");
  run->add_option("--seed-scale", seed_scale, "scale of the seed camera trajectory");
  auto* ss = app.add_subcommand("scale-study", "scale recovery from perturbed camera positions");
  add_common(ss, true, true);
  auto* la = app.add_subcommand("landmark-ablation", "perturbed cameras with and without landmarks");
  add_common(la, true, true);
  auto* bc = app.add_subcommand("baseline-compare", "with and without the motion model on every difficulty");
  add_common(bc, true, true);
  auto* ev = app.add_subcommand("eval", "motion-model error on held-out gait");
  add_common(ev, true, false);
  ev->add_option("--range", range, "histogram half-width in metres");
  ev->add_option("--bins", bins, "histogram bins");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*sim) return cmd_simulate(c, family, difficulty);
    if (*tr) return cmd_train(c);
    if (*run) return cmd_run(c, scene, seed_scale);
    if (*ss) return cmd_scale_study(c);
    if (*la) return cmd_ablation(c);
    if (*bc) return cmd_baseline(c);
    if (*ev) return cmd_eval(c, range, bins);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Diverged& e) {
    std::cerr << "diverged: " << e.what() << " after " << e.trace().size() << " cost evaluations\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
