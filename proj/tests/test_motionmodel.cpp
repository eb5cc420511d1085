#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "bodyslam/experiments.hpp"
#include "test_util.hpp"

using namespace bodyslam;
using namespace bodyslam::testing;

namespace {

MotionSample random_sample(Rng& r, int history) {
  MotionSample s;
  for (int i = 0; i < history; ++i) {
    FullPoseVector h;
    for (int d = 0; d < kFullPoseDim; ++d) h[d] = r.normal(0.3);
    s.history.push_back(h);
  }
  for (int d = 0; d < kShapeDim; ++d) s.beta[d] = r.normal(0.5);
  for (int d = 0; d < kFullPoseDim; ++d) s.target_pose[d] = r.normal(0.3);
  s.target_translation = r.normal3(0.02);
  return s;
}

// Non-trivial normalisation so the tests exercise it.
MotionModelNet scrambled_net(std::uint64_t seed) {
  MotionModelNet net = tiny_net(seed);
  Rng r(seed + 100);
  for (int i = 0; i < net.input_dim(); ++i) {
    net.norm.input_mean[i] = r.normal(0.2);
    net.norm.input_std[i] = r.uniform(0.5, 2.0);
  }
  net.norm.translation_mean = r.normal3(0.01);
  net.norm.translation_std = Vec3(0.02, 0.03, 0.01);
  for (int d = 0; d < kFullPoseDim; ++d) net.norm.pose_scale[d] = r.uniform(0.05, 0.2);
  net.for_each_layer([&](DenseLayer& l) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = r.normal(0.1);
  });
  return net;
}

std::vector<MotionSample> gait_samples(int sequences, int frames, std::uint64_t seed) {
  GaitDatasetConfig g;
  g.sequences = sequences;
  g.frames = frames;
  g.seed = seed;
  return generate_gait_dataset(body(), g);
}

}  // namespace

TEST(Architecture, InputDimensionForTwoFrames) {
  MotionArchitecture a;
  EXPECT_EQ(a.input_dim(), 154);
  const MotionModelNet net = make_motion_model(a, 0);
  EXPECT_NO_THROW(net.validate());
  EXPECT_EQ(net.encoder.size(), 3u);
  EXPECT_EQ(net.encoder[0].weight.cols(), 154);
  EXPECT_EQ(net.encoder[2].weight.rows(), 1024);
}

TEST(Architecture, HistoryLengthsBuildValidNets) {
  for (int n : {2, 4, 8, 16}) {
    MotionArchitecture a;
    a.history = n;
    a.encoder_widths = {16, 16, 16};
    a.decoder_width = 8;
    const MotionModelNet net = make_motion_model(a, 1);
    EXPECT_NO_THROW(net.validate()) << n;
    EXPECT_EQ(net.input_dim(), n * 72 + 10);
  }
}

TEST(Architecture, InvalidShapesRejected) {
  MotionArchitecture a;
  a.history = 0;
  EXPECT_THROW(make_motion_model(a, 0), InvalidArgument);
  MotionModelNet net = tiny_net(1);
  net.encoder[1].weight.resize(3, 3);
  EXPECT_THROW(net.validate(), InvalidArgument);
}

TEST(Forward, ZeroDecodersGiveResidualAndMean) {
  MotionModelNet net = scrambled_net(2);
  for (auto* dec : {&net.translation_decoder, &net.pose_decoder}) {
    for (auto& l : *dec) {
      l.weight.setZero();
      l.bias.setZero();
    }
  }
  Rng r(3);
  const MotionSample s = random_sample(r, 2);
  const MotionPrediction p = forward(net, s.history, s.beta);
  EXPECT_EQ(p.pose, s.history.back());
  EXPECT_EQ(p.translation, net.norm.translation_mean);
}

TEST(Forward, ResidualIdentityWithZeroedPoseOutputLayer) {
  MotionModelNet net = scrambled_net(4);
  net.pose_decoder[1].weight.setZero();
  net.pose_decoder[1].bias.setZero();
  Rng r(5);
  for (int i = 0; i < 50; ++i) {
    const MotionSample s = random_sample(r, 2);
    EXPECT_EQ(forward(net, s.history, s.beta).pose, s.history.back());
  }
}

TEST(Forward, HistoryLengthMismatchThrows) {
  const MotionModelNet net = tiny_net(1);
  Rng r(1);
  const MotionSample s = random_sample(r, 3);
  EXPECT_THROW(forward(net, s.history, s.beta), InvalidArgument);
}

TEST(Forward, NormalisationRoundTrip) {
  const MotionModelNet net = scrambled_net(6);
  Rng r(7);
  Eigen::VectorXd x(net.input_dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = r.normal(1.0);
  EXPECT_LT((denormalize_inputs(net, normalize_inputs(net, x)) - x).norm(), 1e-9);
}

TEST(Forward, BatchMatchesSingle) {
  const MotionModelNet net = scrambled_net(8);
  Rng r(9);
  Eigen::MatrixXd raw(net.input_dim(), 4);
  std::vector<MotionSample> ss;
  for (int c = 0; c < 4; ++c) {
    ss.push_back(random_sample(r, 2));
    raw.col(c) = assemble_input(ss.back().history, ss.back().beta);
  }
  const ForwardTrace t = forward_normalized(net, normalize_inputs(net, raw));
  for (int c = 0; c < 4; ++c) {
    const MotionPrediction a = prediction_from_trace(net, t, raw.col(c), c);
    const MotionPrediction b = forward(net, ss[static_cast<std::size_t>(c)].history, ss[static_cast<std::size_t>(c)].beta);
    EXPECT_LT((a.translation - b.translation).norm(), 1e-12);
    EXPECT_LT((a.pose - b.pose).norm(), 1e-12);
  }
}

// Golden output for fixed weights and input. Set BODYSLAM_UPDATE_GOLDEN=1
// to rewrite the file.
TEST(Forward, GoldenOutput) {
  const std::string path = std::string(BODYSLAM_TEST_DATA_DIR) + "/motion_golden.txt";
  const MotionModelNet net = scrambled_net(12);
  Rng r(13);
  const MotionSample s = random_sample(r, 2);
  const MotionPrediction p = forward(net, s.history, s.beta);
  std::string text;
  char buf[64];
  for (int i = 0; i < 3; ++i) {
    std::snprintf(buf, sizeof buf, "%a\n", p.translation[i]);
    text += buf;
  }
  for (int i = 0; i < kFullPoseDim; ++i) {
    std::snprintf(buf, sizeof buf, "%a\n", p.pose[i]);
    text += buf;
  }
  if (std::getenv("BODYSLAM_UPDATE_GOLDEN") || !std::filesystem::exists(path)) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream(path) << text;
  }
  std::ifstream in(path);
  const std::string stored((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(stored, text);
}

TEST(Loss, HandComputedValues) {
  MotionSample t;
  t.target_translation = Vec3(0.1, 0.2, 0.3);
  t.target_pose = FullPoseVector::Constant(0.5);
  MotionPrediction p{t.target_translation, t.target_pose};
  EXPECT_EQ(loss(p, t), 0.0);
  p.translation.x() += 0.1;
  EXPECT_NEAR(loss(p, t), 0.01, 1e-15);
  p.translation = t.target_translation;
  p.pose[7] += 1.0;
  EXPECT_NEAR(loss(p, t), 1.0 / 24.0, 1e-15);
}

TEST(Backprop, MatchesFiniteDifferencesOnWidthEightNet) {
  const MotionModelNet net = scrambled_net(20);
  Rng r(21);
  for (int trial = 0; trial < 3; ++trial) {
    const MotionSample s = random_sample(r, 2);
    const NetGradients g = backprop_gradients(net, s);
    MotionModelNet probe = net;
    std::vector<DenseLayer*> pl = detail::layer_ptrs(probe);
    NetGradients gc = g;
    std::vector<DenseLayer*> gl = detail::layer_ptrs(gc);
    double worst = 0.0;
    const double h = 1e-4;
    for (std::size_t li = 0; li < pl.size(); ++li) {
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
      for (Eigen::Index i = 0; i < pl[li]->weight.size(); ++i) check(pl[li]->weight.data()[i], gl[li]->weight.data()[i]);
      for (Eigen::Index i = 0; i < pl[li]->bias.size(); ++i) check(pl[li]->bias[i], gl[li]->bias[i]);
    }
    EXPECT_LT(worst, 1e-3) << trial;
  }
}

TEST(Backprop, ZeroLossGivesZeroGradient) {
  const MotionModelNet net = scrambled_net(22);
  Rng r(23);
  MotionSample s = random_sample(r, 2);
  const MotionPrediction p = forward(net, s.history, s.beta);
  s.target_translation = p.translation;
  s.target_pose = p.pose;
  EXPECT_LT(training_loss(net, s), 1e-20);
  const NetGradients g = backprop_gradients(net, s);
  g.for_each_layer([](const DenseLayer& l) {
    EXPECT_LT(l.weight.norm(), 1e-10);
    EXPECT_LT(l.bias.norm(), 1e-10);
  });
}

TEST(Backprop, DecodersAreSeparate) {
  // Only the translation target is off: the pose decoder gets no gradient.
  const MotionModelNet net = scrambled_net(24);
  Rng r(25);
  MotionSample s = random_sample(r, 2);
  s.target_pose = forward(net, s.history, s.beta).pose;
  const NetGradients g = backprop_gradients(net, s);
  for (const auto& l : g.pose_decoder) {
    EXPECT_LT(l.weight.norm(), 1e-12);
    EXPECT_LT(l.bias.norm(), 1e-12);
  }
  EXPECT_GT(g.translation_decoder[1].weight.norm(), 0.0);
}

TEST(Backprop, InputVectorJacobianMatchesFiniteDifferences) {
  const MotionModelNet net = scrambled_net(26);
  Rng r(27);
  const MotionSample s = random_sample(r, 2);
  const Eigen::VectorXd x = assemble_input(s.history, s.beta);
  const Vec3 ct = r.normal3(1.0);
  FullPoseVector cp;
  for (int d = 0; d < kFullPoseDim; ++d) cp[d] = r.normal(1.0);
  auto f = [&](const Eigen::VectorXd& in) {
    const MotionPrediction p = prediction_from_trace(net, forward_trace(net, in), in);
    return ct.dot(p.translation) + cp.dot(p.pose);
  };
  const Eigen::MatrixXd g = input_vjp(net, forward_trace(net, x), ct, cp);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += 1e-6;
    xm[i] -= 1e-6;
    const double fd = (f(xp) - f(xm)) / 2e-6;
    worst = std::max(worst, std::abs(fd - g(i, 0)) / std::max(1.0, std::abs(fd)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Serialization, JsonRoundTripIsExact) {
  const MotionModelNet net = scrambled_net(30);
  const MotionModelNet back = motion_model_from_json(motion_model_to_json(net));
  EXPECT_TRUE(back == net);
  const std::string path = ::testing::TempDir() + "/mm_roundtrip.json";
  save_motion_model(path, net);
  EXPECT_TRUE(load_motion_model(path) == net);
}

TEST(Serialization, WrongSchemaRejected) {
  json j = motion_model_to_json(tiny_net(1));
  j["schema"] = "something.else";
  EXPECT_THROW(motion_model_from_json(j), FormatError);
  j = motion_model_to_json(tiny_net(1));
  j["version"] = 99;
  EXPECT_THROW(motion_model_from_json(j), FormatError);
}

TEST(Training, RejectsEmptyOrSmallDatasets) {
  MotionArchitecture a;
  a.encoder_widths = {8, 8, 8};
  a.decoder_width = 8;
  EXPECT_THROW(train({}, a, TrainConfig{}), InvalidArgument);
  const auto few = gait_samples(2, 20, 1);
  EXPECT_THROW(train(few, a, TrainConfig{}), InvalidArgument);
}

class TrainedSmallNet : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    arch_ = new MotionArchitecture;
    arch_->encoder_widths = {64, 64, 64};
    arch_->decoder_width = 32;
    cfg_ = new TrainConfig;
    cfg_->epochs = 8;
    cfg_->batch_size = 64;
    samples_ = new std::vector<MotionSample>(gait_samples(60, 32, 3));
    report_ = new TrainReport;
    net_ = new MotionModelNet(train(*samples_, *arch_, *cfg_, report_));
  }
  static void TearDownTestSuite() {
    delete arch_;
    delete cfg_;
    delete samples_;
    delete report_;
    delete net_;
  }
  static MotionArchitecture* arch_;
  static TrainConfig* cfg_;
  static std::vector<MotionSample>* samples_;
  static TrainReport* report_;
  static MotionModelNet* net_;
};

MotionArchitecture* TrainedSmallNet::arch_ = nullptr;
TrainConfig* TrainedSmallNet::cfg_ = nullptr;
std::vector<MotionSample>* TrainedSmallNet::samples_ = nullptr;
TrainReport* TrainedSmallNet::report_ = nullptr;
MotionModelNet* TrainedSmallNet::net_ = nullptr;

TEST_F(TrainedSmallNet, SplitsEightyTwenty) {
  EXPECT_EQ(report_->validation_samples, static_cast<std::size_t>(std::round(0.2 * samples_->size())));
  EXPECT_EQ(report_->train_samples + report_->validation_samples, samples_->size());
}

TEST_F(TrainedSmallNet, LossDecreasesOverFirstEpochs) {
  ASSERT_GE(report_->train_loss.size(), 5u);
  for (int e = 1; e < 5; ++e) EXPECT_LT(report_->train_loss[e], report_->train_loss[e - 1]) << e;
}

TEST_F(TrainedSmallNet, ReturnsBestValidationEpoch) {
  ASSERT_GE(report_->best_epoch, 0);
  const double best = *std::min_element(report_->validation_loss.begin(), report_->validation_loss.end());
  EXPECT_EQ(report_->validation_loss[static_cast<std::size_t>(report_->best_epoch)], best);
}

TEST_F(TrainedSmallNet, NormalisationFromData) {
  EXPECT_NO_THROW(net_->validate());
  EXPECT_GT(net_->norm.translation_std.minCoeff(), 0.0);
  EXPECT_NE(net_->norm.input_mean, Eigen::VectorXd::Zero(net_->input_dim()));
}

TEST_F(TrainedSmallNet, BitIdenticalRetraining) {
  const MotionModelNet again = train(*samples_, *arch_, *cfg_);
  EXPECT_TRUE(again == *net_);
}

TEST_F(TrainedSmallNet, BeatsConstantVelocityOnHeldOutGait) {
  GaitDatasetConfig g;
  g.sequences = 20;
  g.frames = 60;
  g.seed = 4242;
  const MotionEvalResult r = evaluate_motion_model(*net_, body(), g);
  EXPECT_LT(r.mean_error, r.constant_velocity_error);
  EXPECT_LT(r.ratio, 0.3);
}

TEST(Training, ExplicitValidationSet) {
  MotionArchitecture a;
  a.encoder_widths = {16, 16, 16};
  a.decoder_width = 8;
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto samples = gait_samples(40, 32, 5);
  const auto validation = gait_samples(5, 32, 6);
  TrainReport rep;
  train(samples, validation, a, cfg, &rep);
  EXPECT_EQ(rep.train_samples, samples.size());
  EXPECT_EQ(rep.validation_samples, validation.size());
  EXPECT_EQ(rep.validation_loss.size(), 2u);
}
