#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bodyslam/bodymodel.hpp"
#include "bodyslam/errors.hpp"
#include "bodyslam/json_io.hpp"
#include "bodyslam/liegeom.hpp"

namespace bodyslam {

// Weight of the posture term relative to the translation term in the
// training loss: one position error counts as much as one joint rotation.
inline constexpr double kPoseLossWeight = 1.0 / 24.0;

struct MotionArchitecture {
  int history = 2;
  std::vector<int> encoder_widths = {1024, 1024, 1024};
  int decoder_width = 256;

  int input_dim() const { return history * kFullPoseDim + kShapeDim; }
  bool operator==(const MotionArchitecture&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;

  bool operator==(const DenseLayer& o) const { return weight == o.weight && bias == o.bias; }
};

// Inputs are standardised per dimension. The translation output is
// de-normalised as mean + std * y; the posture output is a residual update
// scaled by pose_scale and added to the most recent full pose.
struct NormStats {
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_std;
  Vec3 translation_mean = Vec3::Zero();
  Vec3 translation_std = Vec3::Ones();
  FullPoseVector pose_scale = FullPoseVector::Ones();

  bool operator==(const NormStats& o) const {
    return input_mean == o.input_mean && input_std == o.input_std && translation_mean == o.translation_mean &&
           translation_std == o.translation_std && pose_scale == o.pose_scale;
  }
};

struct MotionModelNet {
  MotionArchitecture arch;
  std::vector<DenseLayer> encoder;                // ReLU after every layer
  std::array<DenseLayer, 2> translation_decoder;  // hidden ReLU, linear 3-dim output
  std::array<DenseLayer, 2> pose_decoder;         // hidden ReLU, linear 72-dim output
  NormStats norm;

  int history() const { return arch.history; }
  int input_dim() const { return arch.input_dim(); }

  template <typename Fn>
  void for_each_layer(Fn&& fn) {
    for (auto& l : encoder) fn(l);
    for (auto& l : translation_decoder) fn(l);
    for (auto& l : pose_decoder) fn(l);
  }
  template <typename Fn>
  void for_each_layer(Fn&& fn) const {
    for (const auto& l : encoder) fn(l);
    for (const auto& l : translation_decoder) fn(l);
    for (const auto& l : pose_decoder) fn(l);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_layer([&](const DenseLayer& l) { n += static_cast<std::size_t>(l.weight.size() + l.bias.size()); });
    return n;
  }

  void validate() const {
    if (arch.history < 1) throw InvalidArgument("motion model: history must be >= 1");
    if (encoder.empty() || encoder.size() != arch.encoder_widths.size()) {
      throw InvalidArgument("motion model: encoder layers do not match architecture");
    }
    Eigen::Index in = input_dim();
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      const auto& l = encoder[i];
      if (l.weight.cols() != in || l.weight.rows() != arch.encoder_widths[i] || l.bias.size() != l.weight.rows()) {
        throw InvalidArgument("motion model: inconsistent encoder layer " + std::to_string(i));
      }
      in = l.weight.rows();
    }
    auto check_decoder = [&](const std::array<DenseLayer, 2>& d, Eigen::Index out, const char* name) {
      if (d[0].weight.cols() != in || d[0].weight.rows() != arch.decoder_width || d[0].bias.size() != arch.decoder_width ||
          d[1].weight.cols() != arch.decoder_width || d[1].weight.rows() != out || d[1].bias.size() != out) {
        throw InvalidArgument(std::string("motion model: inconsistent ") + name + " decoder");
      }
    };
    check_decoder(translation_decoder, 3, "translation");
    check_decoder(pose_decoder, kFullPoseDim, "pose");
    if (norm.input_mean.size() != input_dim() || norm.input_std.size() != input_dim()) {
      throw InvalidArgument("motion model: normalisation size mismatch");
    }
    if ((norm.input_std.array() <= 0).any() || (norm.translation_std.array() <= 0).any() ||
        (norm.pose_scale.array() <= 0).any()) {
      throw InvalidArgument("motion model: normalisation scales must be positive");
    }
  }

  bool operator==(const MotionModelNet& o) const {
    return arch == o.arch && encoder == o.encoder && translation_decoder == o.translation_decoder &&
           pose_decoder == o.pose_decoder && norm == o.norm;
  }
};

namespace detail {

inline DenseLayer kaiming_layer(int in, int out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  DenseLayer l;
  l.weight.resize(out, in);
  for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = u(rng);
  }
  l.bias = Eigen::VectorXd::Zero(out);
  return l;
}

}  // namespace detail

// Fresh network with uniform fan-in (Kaiming) initialisation and identity
// normalisation.
inline MotionModelNet make_motion_model(const MotionArchitecture& arch, std::uint64_t seed) {
  if (arch.history < 1 || arch.encoder_widths.empty() || arch.decoder_width < 1) {
    throw InvalidArgument("motion model: invalid architecture");
  }
  std::mt19937_64 rng(seed);
  MotionModelNet net;
  net.arch = arch;
  int in = arch.input_dim();
  for (int w : arch.encoder_widths) {
    if (w < 1) throw InvalidArgument("motion model: invalid encoder width");
    net.encoder.push_back(detail::kaiming_layer(in, w, rng));
    in = w;
  }
  net.translation_decoder = {detail::kaiming_layer(in, arch.decoder_width, rng),
                             detail::kaiming_layer(arch.decoder_width, 3, rng)};
  net.pose_decoder = {detail::kaiming_layer(in, arch.decoder_width, rng),
                      detail::kaiming_layer(arch.decoder_width, kFullPoseDim, rng)};
  net.norm.input_mean = Eigen::VectorXd::Zero(arch.input_dim());
  net.norm.input_std = Eigen::VectorXd::Ones(arch.input_dim());
  return net;
}

// ---------------------------------------------------------------------------
// Frame conventions shared by training data and the motion factor.

// History entry i carries the root orientation of frame i expressed relative
// to the most recent frame (so the last entry's root part is zero), followed
// by that frame's posture.
inline std::vector<FullPoseVector> relative_history(std::span<const Mat3> root_rotations,
                                                    std::span<const PostureVector> postures) {
  if (root_rotations.size() != postures.size() || root_rotations.empty()) {
    throw InvalidArgument("relative_history: inconsistent history");
  }
  const Mat3 last_t = root_rotations.back().transpose();
  std::vector<FullPoseVector> out(postures.size());
  for (std::size_t i = 0; i < postures.size(); ++i) {
    out[i].head<3>() = i + 1 == postures.size() ? Vec3::Zero() : so3_log(last_t * root_rotations[i]);
    out[i].tail<kPostureDim>() = postures[i];
  }
  return out;
}

inline FullPoseVector relative_target(const Mat3& last_root, const Mat3& target_root, const PostureVector& posture) {
  FullPoseVector p;
  p.head<3>() = so3_log(last_root.transpose() * target_root);
  p.tail<kPostureDim>() = posture;
  return p;
}

// Displacement of the body centre from frame k-1 to k, expressed in H_{k-1}.
inline Vec3 relative_translation(const Pose6D& previous, const Vec3& current_position) {
  return previous.rotation().transpose() * (current_position - previous.r);
}

// ---------------------------------------------------------------------------

struct MotionSample {
  std::vector<FullPoseVector> history;
  ShapeVector beta = ShapeVector::Zero();
  FullPoseVector target_pose = FullPoseVector::Zero();
  Vec3 target_translation = Vec3::Zero();  // metres, in H_{k-1}
};

struct MotionPrediction {
  Vec3 translation = Vec3::Zero();
  FullPoseVector pose = FullPoseVector::Zero();
};

inline Eigen::VectorXd assemble_input(std::span<const FullPoseVector> history, const ShapeVector& beta) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(history.size()) * kFullPoseDim + kShapeDim);
  for (std::size_t i = 0; i < history.size(); ++i) x.segment<kFullPoseDim>(static_cast<Eigen::Index>(i) * kFullPoseDim) = history[i];
  x.tail<kShapeDim>() = beta;
  return x;
}

// Activations of one forward pass over a batch (one sample per column).
struct ForwardTrace {
  Eigen::MatrixXd input;                    // normalised input
  std::vector<Eigen::MatrixXd> encoder_pre;  // pre-activations
  std::vector<Eigen::MatrixXd> encoder_out;  // post-ReLU
  Eigen::MatrixXd trans_hidden_pre, trans_hidden, trans_out;
  Eigen::MatrixXd pose_hidden_pre, pose_hidden, pose_out;
};

namespace detail {

inline Eigen::MatrixXd affine(const DenseLayer& l, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z = l.weight * x;
  z.colwise() += l.bias;
  return z;
}

inline Eigen::MatrixXd relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

inline Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& grad, const Eigen::MatrixXd& pre) {
  return (pre.array() > 0.0).select(grad, 0.0);
}

}  // namespace detail

inline ForwardTrace forward_normalized(const MotionModelNet& net, Eigen::MatrixXd normalized_input) {
  ForwardTrace t;
  t.input = std::move(normalized_input);
  const Eigen::MatrixXd* x = &t.input;
  for (const auto& l : net.encoder) {
    t.encoder_pre.push_back(detail::affine(l, *x));
    t.encoder_out.push_back(detail::relu(t.encoder_pre.back()));
    x = &t.encoder_out.back();
  }
  t.trans_hidden_pre = detail::affine(net.translation_decoder[0], *x);
  t.trans_hidden = detail::relu(t.trans_hidden_pre);
  t.trans_out = detail::affine(net.translation_decoder[1], t.trans_hidden);
  t.pose_hidden_pre = detail::affine(net.pose_decoder[0], *x);
  t.pose_hidden = detail::relu(t.pose_hidden_pre);
  t.pose_out = detail::affine(net.pose_decoder[1], t.pose_hidden);
  return t;
}

inline Eigen::MatrixXd normalize_inputs(const MotionModelNet& net, const Eigen::MatrixXd& raw) {
  return (raw.colwise() - net.norm.input_mean).array().colwise() / net.norm.input_std.array();
}

inline Eigen::VectorXd denormalize_inputs(const MotionModelNet& net, const Eigen::VectorXd& normalized) {
  return normalized.cwiseProduct(net.norm.input_std) + net.norm.input_mean;
}

inline ForwardTrace forward_trace(const MotionModelNet& net, const Eigen::VectorXd& raw_input) {
  if (raw_input.size() != net.input_dim()) throw InvalidArgument("motion model: input size mismatch");
  return forward_normalized(net, normalize_inputs(net, raw_input));
}

inline MotionPrediction prediction_from_trace(const MotionModelNet& net, const ForwardTrace& t, const Eigen::VectorXd& raw_input,
                                              Eigen::Index col = 0) {
  MotionPrediction p;
  p.translation = net.norm.translation_mean + net.norm.translation_std.cwiseProduct(t.trans_out.col(col).head<3>());
  const FullPoseVector last = raw_input.segment<kFullPoseDim>((net.history() - 1) * kFullPoseDim);
  p.pose = last + net.norm.pose_scale.cwiseProduct(t.pose_out.col(col).head<kFullPoseDim>());
  return p;
}

inline MotionPrediction forward(const MotionModelNet& net, std::span<const FullPoseVector> history, const ShapeVector& beta) {
  if (static_cast<int>(history.size()) != net.history()) {
    throw InvalidArgument("motion model: history length " + std::to_string(history.size()) + ", expected " +
                          std::to_string(net.history()));
  }
  const Eigen::VectorXd x = assemble_input(history, beta);
  return prediction_from_trace(net, forward_trace(net, x), x);
}

// Loss in physical units: ||dt||^2 + ||dpose||^2 / 24. No robust kernel.
inline double loss(const MotionPrediction& pred, const MotionSample& target) {
  return (pred.translation - target.target_translation).squaredNorm() +
         kPoseLossWeight * (pred.pose - target.target_pose).squaredNorm();
}

// ---------------------------------------------------------------------------
// Reverse mode.

using NetGradients = MotionModelNet;  // same layer shapes; norm unused

inline NetGradients zero_gradients(const MotionModelNet& net) {
  NetGradients g = net;
  g.for_each_layer([](DenseLayer& l) {
    l.weight.setZero();
    l.bias.setZero();
  });
  return g;
}

// Backpropagates output gradients (w.r.t. the normalised decoder outputs)
// through the trace. Accumulates parameter gradients into grads when given
// and returns the gradient w.r.t. the normalised input.
inline Eigen::MatrixXd backward(const MotionModelNet& net, const ForwardTrace& t, const Eigen::MatrixXd& d_trans_out,
                                const Eigen::MatrixXd& d_pose_out, NetGradients* grads) {
  const Eigen::Index depth = static_cast<Eigen::Index>(net.encoder.size());
  const Eigen::MatrixXd& h = t.encoder_out.back();

  auto decoder_back = [&](const std::array<DenseLayer, 2>& dec, const Eigen::MatrixXd& hidden_pre,
                          const Eigen::MatrixXd& hidden, const Eigen::MatrixXd& d_out, std::array<DenseLayer, 2>* g) {
    if (g) {
      (*g)[1].weight.noalias() += d_out * hidden.transpose();
      (*g)[1].bias += d_out.rowwise().sum();
    }
    const Eigen::MatrixXd d_hidden = detail::relu_backward(dec[1].weight.transpose() * d_out, hidden_pre);
    if (g) {
      (*g)[0].weight.noalias() += d_hidden * h.transpose();
      (*g)[0].bias += d_hidden.rowwise().sum();
    }
    return Eigen::MatrixXd(dec[0].weight.transpose() * d_hidden);
  };

  Eigen::MatrixXd d_h = decoder_back(net.translation_decoder, t.trans_hidden_pre, t.trans_hidden, d_trans_out,
                                     grads ? &grads->translation_decoder : nullptr);
  d_h += decoder_back(net.pose_decoder, t.pose_hidden_pre, t.pose_hidden, d_pose_out, grads ? &grads->pose_decoder : nullptr);

  for (Eigen::Index i = depth - 1; i >= 0; --i) {
    const Eigen::MatrixXd d_pre = detail::relu_backward(d_h, t.encoder_pre[static_cast<std::size_t>(i)]);
    const Eigen::MatrixXd& below = i == 0 ? t.input : t.encoder_out[static_cast<std::size_t>(i - 1)];
    if (grads) {
      grads->encoder[static_cast<std::size_t>(i)].weight.noalias() += d_pre * below.transpose();
      grads->encoder[static_cast<std::size_t>(i)].bias += d_pre.rowwise().sum();
    }
    d_h = net.encoder[static_cast<std::size_t>(i)].weight.transpose() * d_pre;
  }
  return d_h;
}

// Gradient of sum_c (cot_t.col(c) . translation + cot_p.col(c) . pose) with
// respect to the raw (un-normalised) input, including the residual path to
// the most recent pose. Returns input_dim x m.
inline Eigen::MatrixXd input_vjp(const MotionModelNet& net, const ForwardTrace& t, const Eigen::MatrixXd& cot_t,
                                 const Eigen::MatrixXd& cot_p) {
  const Eigen::MatrixXd d_trans = net.norm.translation_std.asDiagonal() * cot_t;
  const Eigen::MatrixXd d_pose = net.norm.pose_scale.asDiagonal() * cot_p;
  Eigen::MatrixXd d_in = backward(net, t, d_trans, d_pose, nullptr);
  d_in = net.norm.input_std.cwiseInverse().asDiagonal() * d_in;
  d_in.middleRows((net.history() - 1) * kFullPoseDim, kFullPoseDim) += cot_p;
  return d_in;
}

// Normalised training targets for one sample.
struct NormalizedTargets {
  Vec3 translation;
  FullPoseVector pose;
};

inline NormalizedTargets normalize_targets(const MotionModelNet& net, const MotionSample& s) {
  return {(s.target_translation - net.norm.translation_mean).cwiseQuotient(net.norm.translation_std),
          (s.target_pose - s.history.back()).cwiseQuotient(net.norm.pose_scale)};
}

// Training objective for one sample: the translation + pose/24 loss evaluated
// on normalised outputs.
inline double training_loss(const MotionModelNet& net, const MotionSample& s) {
  const Eigen::VectorXd x = assemble_input(s.history, s.beta);
  const ForwardTrace t = forward_trace(net, x);
  const NormalizedTargets y = normalize_targets(net, s);
  return (t.trans_out.col(0) - y.translation).squaredNorm() +
         kPoseLossWeight * (t.pose_out.col(0) - y.pose).squaredNorm();
}

inline NetGradients backprop_gradients(const MotionModelNet& net, const MotionSample& s) {
  const Eigen::VectorXd x = assemble_input(s.history, s.beta);
  const ForwardTrace t = forward_trace(net, x);
  const NormalizedTargets y = normalize_targets(net, s);
  const Eigen::MatrixXd d_trans = 2.0 * (t.trans_out.col(0) - y.translation);
  const Eigen::MatrixXd d_pose = 2.0 * kPoseLossWeight * (t.pose_out.col(0) - y.pose);
  NetGradients g = zero_gradients(net);
  backward(net, t, d_trans, d_pose, &g);
  return g;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  int epochs = 50;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double lr_decay = 0.95;  // multiplied into the learning rate after every epoch
  bool recalibrate_bias = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double validation_fraction = 0.2;
  std::size_t min_samples = 1000;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> train_loss;       // mean normalised loss per epoch
  std::vector<double> validation_loss;  // after each epoch
  int best_epoch = -1;
  double best_validation_loss = 0.0;
  std::size_t train_samples = 0;
  std::size_t validation_samples = 0;
};

inline NormStats compute_norm_stats(std::span<const MotionSample> samples, const std::vector<std::size_t>& idx, int history) {
  const int in_dim = history * kFullPoseDim + kShapeDim;
  const double n = static_cast<double>(idx.size());
  NormStats s;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(in_dim), sq = Eigen::VectorXd::Zero(in_dim);
  Vec3 tsum = Vec3::Zero(), tsq = Vec3::Zero();
  FullPoseVector psq = FullPoseVector::Zero();
  for (auto i : idx) {
    const Eigen::VectorXd x = assemble_input(samples[i].history, samples[i].beta);
    sum += x;
    sq += x.cwiseAbs2();
    tsum += samples[i].target_translation;
    tsq += samples[i].target_translation.cwiseAbs2();
    psq += (samples[i].target_pose - samples[i].history.back()).cwiseAbs2();
  }
  auto safe_std = [](double v) { return v > 1e-16 ? std::sqrt(v) : 1.0; };
  s.input_mean = sum / n;
  s.input_std = (sq / n - s.input_mean.cwiseAbs2()).unaryExpr(safe_std);
  s.translation_mean = tsum / n;
  s.translation_std = (tsq / n - s.translation_mean.cwiseAbs2()).unaryExpr(safe_std);
  s.pose_scale = (psq / n).unaryExpr(safe_std);
  return s;
}

namespace detail {

struct AdamState {
  std::vector<DenseLayer> m, v;
  long step = 0;
};

inline std::vector<DenseLayer*> layer_ptrs(MotionModelNet& net) {
  std::vector<DenseLayer*> out;
  net.for_each_layer([&](DenseLayer& l) { out.push_back(&l); });
  return out;
}

}  // namespace detail

// Adam on mini-batches; returns the weights of the epoch with the lowest
// validation loss. Deterministic for a fixed seed. A non-empty validation set
// replaces the random split of the samples.
inline MotionModelNet train(std::span<const MotionSample> samples, std::span<const MotionSample> validation,
                            const MotionArchitecture& arch, const TrainConfig& cfg, TrainReport* report = nullptr) {
  if (samples.empty()) throw InvalidArgument("train: empty dataset");
  if (samples.size() < cfg.min_samples) {
    throw InvalidArgument("train: need at least " + std::to_string(cfg.min_samples) + " samples");
  }
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw InvalidArgument("train: invalid epoch or batch settings");
  for (auto set : {samples, validation}) {
    for (const auto& s : set) {
      if (static_cast<int>(s.history.size()) != arch.history) throw InvalidArgument("train: sample history length mismatch");
    }
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const bool split = validation.empty();
  const auto n_val =
      split ? static_cast<std::size_t>(std::round(cfg.validation_fraction * static_cast<double>(samples.size()))) : 0;
  std::vector<std::size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  if (train_idx.empty()) throw InvalidArgument("train: no training samples after split");
  if (!split) {
    val_idx.resize(validation.size());
    std::iota(val_idx.begin(), val_idx.end(), 0);
  }

  MotionModelNet net = make_motion_model(arch, rng());
  net.norm = compute_norm_stats(samples, train_idx, arch.history);

  const Eigen::Index in_dim = arch.input_dim();
  auto pack = [&](std::span<const MotionSample> set, const std::vector<std::size_t>& idx, Eigen::MatrixXd& x,
                  Eigen::MatrixXd& yt, Eigen::MatrixXd& yp) {
    const auto n = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd raw(in_dim, n);
    yt.resize(3, n);
    yp.resize(kFullPoseDim, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      const auto& s = set[idx[static_cast<std::size_t>(c)]];
      raw.col(c) = assemble_input(s.history, s.beta);
      const NormalizedTargets y = normalize_targets(net, s);
      yt.col(c) = y.translation;
      yp.col(c) = y.pose;
    }
    x = normalize_inputs(net, raw);
  };
  Eigen::MatrixXd x_train, t_train, p_train, x_val, t_val, p_val;
  pack(samples, train_idx, x_train, t_train, p_train);
  pack(split ? samples : validation, val_idx, x_val, t_val, p_val);

  auto batch_loss = [](const ForwardTrace& tr, const Eigen::MatrixXd& yt, const Eigen::MatrixXd& yp) {
    return (tr.trans_out - yt).squaredNorm() + kPoseLossWeight * (tr.pose_out - yp).squaredNorm();
  };
  auto evaluate = [&](const MotionModelNet& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& yt, const Eigen::MatrixXd& yp) {
    if (x.cols() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index start = 0; start < x.cols(); start += 1024) {
      const Eigen::Index len = std::min<Eigen::Index>(1024, x.cols() - start);
      const ForwardTrace tr = forward_normalized(m, x.middleCols(start, len));
      total += batch_loss(tr, yt.middleCols(start, len), yp.middleCols(start, len));
    }
    return total / static_cast<double>(x.cols());
  };

  detail::AdamState adam;
  for (DenseLayer* l : detail::layer_ptrs(net)) {
    adam.m.push_back({Eigen::MatrixXd::Zero(l->weight.rows(), l->weight.cols()), Eigen::VectorXd::Zero(l->bias.size())});
  }
  adam.v = adam.m;

  TrainReport rep;
  rep.train_samples = train_idx.size();
  rep.validation_samples = val_idx.size();
  MotionModelNet best = net;
  double best_val = std::numeric_limits<double>::infinity();

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(x_train.cols()));
  std::iota(perm.begin(), perm.end(), 0);
  Eigen::MatrixXd xb, tb, pb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len = std::min(perm.size() - start, static_cast<std::size_t>(cfg.batch_size));
      xb.resize(in_dim, static_cast<Eigen::Index>(len));
      tb.resize(3, static_cast<Eigen::Index>(len));
      pb.resize(kFullPoseDim, static_cast<Eigen::Index>(len));
      for (std::size_t c = 0; c < len; ++c) {
        const Eigen::Index src = perm[start + c];
        xb.col(static_cast<Eigen::Index>(c)) = x_train.col(src);
        tb.col(static_cast<Eigen::Index>(c)) = t_train.col(src);
        pb.col(static_cast<Eigen::Index>(c)) = p_train.col(src);
      }
      const ForwardTrace tr = forward_normalized(net, xb);
      epoch_loss += batch_loss(tr, tb, pb);
      const double inv = 1.0 / static_cast<double>(len);
      NetGradients g = zero_gradients(net);
      backward(net, tr, 2.0 * inv * (tr.trans_out - tb), 2.0 * kPoseLossWeight * inv * (tr.pose_out - pb), &g);

      ++adam.step;
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.step));
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.step));
      const double step_size = cfg.learning_rate * std::pow(cfg.lr_decay, epoch) / bc1;
      auto params = detail::layer_ptrs(net);
      auto grads = detail::layer_ptrs(g);
      for (std::size_t li = 0; li < params.size(); ++li) {
        auto update = [&](auto& p, const auto& gr, auto& m, auto& v) {
          m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * gr;
          v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * gr.cwiseAbs2();
          p.array() -= step_size * m.array() / ((v.array() / bc2).sqrt() + cfg.adam_epsilon);
        };
        update(params[li]->weight, grads[li]->weight, adam.m[li].weight, adam.v[li].weight);
        update(params[li]->bias, grads[li]->bias, adam.m[li].bias, adam.v[li].bias);
      }
    }
    rep.train_loss.push_back(epoch_loss / static_cast<double>(perm.size()));
    const double val = val_idx.empty() ? rep.train_loss.back() : evaluate(net, x_val, t_val, p_val);
    rep.validation_loss.push_back(val);
    if (val < best_val) {
      best_val = val;
      best = net;
      rep.best_epoch = epoch;
    }
  }
  // Remove the mean translation error left on held-back data by shifting the
  // output bias of the translation head.
  if (cfg.recalibrate_bias) {
    const Eigen::MatrixXd& xs = val_idx.empty() ? x_train : x_val;
    const Eigen::MatrixXd& ts = val_idx.empty() ? t_train : t_val;
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (Eigen::Index start = 0; start < xs.cols(); start += 1024) {
      const Eigen::Index len = std::min<Eigen::Index>(1024, xs.cols() - start);
      const ForwardTrace tr = forward_normalized(best, xs.middleCols(start, len));
      mean += (tr.trans_out - ts.middleCols(start, len)).rowwise().sum();
    }
    best.translation_decoder[1].bias -= mean / static_cast<double>(xs.cols());
    rep.best_validation_loss = evaluate(best, x_val, t_val, p_val);
  } else {
    rep.best_validation_loss = best_val;
  }
  if (report) *report = std::move(rep);
  return best;
}

inline MotionModelNet train(std::span<const MotionSample> samples, const MotionArchitecture& arch, const TrainConfig& cfg,
                            TrainReport* report = nullptr) {
  return train(samples, {}, arch, cfg, report);
}

// ---------------------------------------------------------------------------
// Serialization: a single JSON document holding architecture, weights and
// normalisation statistics. Matrices are stored row-major and flattened.

inline constexpr const char* kMotionModelSchema = "bodyslam.motion_model";

namespace detail {

inline json layer_to_json(const DenseLayer& l) {
  json j;
  j["rows"] = l.weight.rows();
  j["cols"] = l.weight.cols();
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = l.weight;
  j["weight"] = std::vector<double>(rm.data(), rm.data() + rm.size());
  j["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
  return j;
}

inline DenseLayer layer_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto w = j.at("weight").get<std::vector<double>>();
  const auto b = j.at("bias").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
    throw FormatError("motion model: layer size mismatch");
  }
  DenseLayer l;
  l.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w.data(), rows, cols);
  l.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
  return l;
}

}  // namespace detail

inline json motion_model_to_json(const MotionModelNet& net) {
  json j;
  j["schema"] = kMotionModelSchema;
  j["version"] = 1;
  j["architecture"] = {{"history", net.arch.history},
                       {"encoder_widths", net.arch.encoder_widths},
                       {"decoder_width", net.arch.decoder_width}};
  j["norm"] = {{"input_mean", to_json_array(net.norm.input_mean)},
               {"input_std", to_json_array(net.norm.input_std)},
               {"translation_mean", to_json_array(net.norm.translation_mean)},
               {"translation_std", to_json_array(net.norm.translation_std)},
               {"pose_scale", to_json_array(net.norm.pose_scale)}};
  for (const auto& l : net.encoder) j["encoder"].push_back(detail::layer_to_json(l));
  for (const auto& l : net.translation_decoder) j["translation_decoder"].push_back(detail::layer_to_json(l));
  for (const auto& l : net.pose_decoder) j["pose_decoder"].push_back(detail::layer_to_json(l));
  return j;
}

inline MotionModelNet motion_model_from_json(const json& j) {
  check_schema(j, kMotionModelSchema, 1);
  MotionModelNet net;
  try {
    const auto& a = j.at("architecture");
    net.arch.history = a.at("history").get<int>();
    net.arch.encoder_widths = a.at("encoder_widths").get<std::vector<int>>();
    net.arch.decoder_width = a.at("decoder_width").get<int>();
    const auto& n = j.at("norm");
    net.norm.input_mean = from_json_array<Eigen::VectorXd>(n.at("input_mean"), net.input_dim());
    net.norm.input_std = from_json_array<Eigen::VectorXd>(n.at("input_std"), net.input_dim());
    net.norm.translation_mean = from_json_array<Vec3>(n.at("translation_mean"));
    net.norm.translation_std = from_json_array<Vec3>(n.at("translation_std"));
    net.norm.pose_scale = from_json_array<FullPoseVector>(n.at("pose_scale"));
    for (const auto& l : j.at("encoder")) net.encoder.push_back(detail::layer_from_json(l));
    const auto& td = j.at("translation_decoder");
    const auto& pd = j.at("pose_decoder");
    if (td.size() != 2 || pd.size() != 2) throw FormatError("motion model: decoders need two layers");
    net.translation_decoder = {detail::layer_from_json(td[0]), detail::layer_from_json(td[1])};
    net.pose_decoder = {detail::layer_from_json(pd[0]), detail::layer_from_json(pd[1])};
  } catch (const json::exception& e) {
    throw FormatError(std::string("motion model: ") + e.what());
  }
  try {
    net.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  return net;
}

inline void save_motion_model(const std::string& path, const MotionModelNet& net) {
  write_text_file(path, motion_model_to_json(net).dump() + "\n");
}

inline MotionModelNet load_motion_model(const std::string& path) { return motion_model_from_json(read_json_file(path)); }

}  // namespace bodyslam
