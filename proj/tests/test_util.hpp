#pragma once

#include <cmath>

#include "bodyslam/factors.hpp"
#include "bodyslam/random.hpp"
#include "bodyslam/simulator.hpp"
#include "bodyslam/state.hpp"

namespace bodyslam::testing {

inline const KinematicTemplate& body() {
  static const KinematicTemplate t = canonical_template();
  return t;
}

inline SceneConfig small_scene(int frames, int landmarks, std::uint64_t seed, bool noisy = true) {
  SceneConfig c;
  c.frames = frames;
  c.landmarks = landmarks;
  c.seed = seed;
  if (!noisy) c.noise = NoiseConfig::none();
  return c;
}

inline StateVector truth_state(const SceneDataset& ds) {
  StateVector x;
  x.cameras = ds.truth.cameras;
  x.humans = ds.truth.humans;
  x.theta = ds.truth.theta;
  x.beta = ds.truth.beta;
  x.landmarks = ds.truth.landmarks;
  return x;
}

// Ground truth at camera scale s with every block jittered.
inline StateVector jittered_state(const SceneDataset& ds, double s, std::uint64_t seed, double amount = 1.0) {
  Rng r(seed);
  StateVector x = truth_state(ds);
  x.s = s;
  for (int k = 0; k < x.frames(); ++k) {
    const auto i = static_cast<std::size_t>(k);
    x.cameras[i].r = x.cameras[i].r / s + r.normal3(0.01 * amount);
    x.cameras[i].phi += r.normal3(0.01 * amount);
    x.humans[i].r += r.normal3(0.02 * amount);
    x.humans[i].phi += r.normal3(0.02 * amount);
    for (int d = 0; d < kPostureDim; ++d) x.theta[i][d] += r.normal(0.05 * amount);
  }
  for (int d = 0; d < kShapeDim; ++d) x.beta[d] += r.normal(0.1 * amount);
  for (auto& l : x.landmarks) l += r.normal3(0.05 * amount);
  return x;
}

inline MotionModelNet tiny_net(std::uint64_t seed, int width = 8) {
  MotionArchitecture a;
  a.encoder_widths = {width, width, width};
  a.decoder_width = width;
  return make_motion_model(a, seed);
}

inline Problem problem_for(const SceneDataset& ds, const MotionModelNet* net) {
  Problem p;
  p.body = &body();
  p.intrinsics = ds.intrinsics();
  p.measurements = &ds.measurements;
  p.net = net;
  p.config.motion = net != nullptr;
  return p;
}

// Worst |analytic - central difference| / max(1, |fd|) over all coordinates.
inline double worst_gradient_error(const StateVector& x, const Problem& p, double h = 1e-6) {
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

}  // namespace bodyslam::testing
