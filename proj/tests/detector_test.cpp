// Copyright 2026 The LPU-SFOD Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "lpu/detector.hpp"

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

namespace lpu {
namespace {

TEST(SoftmaxTest, UniformForEqualLogits) {
  const Eigen::Vector2d p = softmax(Eigen::Vector2d(0.0, 0.0));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(SoftmaxTest, LogTwoGapGivesTwoToOne) {
  const Eigen::Vector2d p = softmax(Eigen::Vector2d(std::log(2.0), 0.0));
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxTest, StableForHugeLogits) {
  const Eigen::Vector3d p = softmax(Eigen::Vector3d(1000.0, 999.0, -1000.0));
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-15);
  EXPECT_NEAR(p[0] / p[1], std::exp(1.0), 1e-12);
}

TEST(ForwardTest, ZeroParamsGiveUniformOutput) {
  const auto params = ModelParams::zeros(4, 3, 5);
  const auto out = forward(params, Eigen::Vector4d(1, -2, 3, 0.5));
  for (int c = 0; c < 5; ++c) EXPECT_DOUBLE_EQ(out.probs[c], 0.2);
  EXPECT_TRUE(out.embedding.isZero());
}

TEST(ForwardTest, DimensionMismatchThrows) {
  const auto params = ModelParams::zeros(4, 3, 5);
  EXPECT_THROW(forward(params, Eigen::Vector3d(1, 2, 3)), ContractViolation);
  EXPECT_THROW(forward_batch(params, Eigen::MatrixXd::Zero(2, 3)), ContractViolation);
}

TEST(ForwardTest, BatchMatchesSingleSample) {
  const auto params = init_params(6, 5, 4, 1, 0.5);
  Rng rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd x(7, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const RoiBatch batch = forward_batch(params, x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto single = forward(params, Eigen::VectorXd(x.row(i).transpose()));
    EXPECT_TRUE(batch.probs.row(i).transpose().isApprox(single.probs, 1e-14));
    EXPECT_TRUE(batch.embedding.row(i).transpose().isApprox(single.embedding, 1e-14));
  }
}

TEST(ForwardTest, FloatInstantiationAgreesWithDouble) {
  const auto pd = init_params(3, 4, 3, 5, 0.5);
  ModelParamsT<float> pf{pd.w1.cast<float>(), pd.b1.cast<float>(), pd.w2.cast<float>(),
                         pd.b2.cast<float>()};
  const Eigen::Vector3d x(0.3, -0.2, 1.1);
  const auto od = forward(pd, x);
  const auto of = forward(pf, Eigen::Vector3f(x.cast<float>()));
  EXPECT_TRUE(od.probs.cast<float>().isApprox(of.probs, 1e-5f));
}

TEST(BackwardTest, MatchesFiniteDifferences) {
  // Linear probe loss sum(R .* logits) + sum(E .* embedding) exercises both
  // upstream paths.
  const auto params = init_params(5, 4, 3, 7, 0.6);
  Rng rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd x(6, 5), r(6, 3), e(6, 4);
  for (auto* m : {&x, &r, &e})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n(rng);
  auto loss = [&](const ModelParams& p) {
    const RoiBatch b = forward_batch(p, x);
    return (r.array() * b.logits.array()).sum() + (e.array() * b.embedding.array()).sum();
  };
  ModelParams grads = params.zeros_like();
  backward(params, x, forward_batch(params, x), r, e, grads);
  const double h = 1e-6;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ModelParams plus = params, minus = params;
    plus.coord(i) += h;
    minus.coord(i) -= h;
    const double numeric = (loss(plus) - loss(minus)) / (2 * h);
    EXPECT_NEAR(grads.coord(i), numeric, 1e-7 * std::max(1.0, std::abs(numeric))) << "coord " << i;
  }
}

TEST(BackwardTest, AccumulatesIntoExistingGradient) {
  const auto params = init_params(3, 2, 2, 1, 0.4);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 3);
  const Eigen::MatrixXd r = Eigen::MatrixXd::Ones(2, 2);
  const RoiBatch cache = forward_batch(params, x);
  ModelParams once = params.zeros_like(), twice = params.zeros_like();
  backward(params, x, cache, r, Eigen::MatrixXd(), once);
  backward(params, x, cache, r, Eigen::MatrixXd(), twice);
  backward(params, x, cache, r, Eigen::MatrixXd(), twice);
  once *= 2.0;
  EXPECT_TRUE(once.w1.isApprox(twice.w1));
  EXPECT_TRUE(once.b2.isApprox(twice.b2));
}

TEST(SgdTest, FirstStepMovesByLearningRate) {
  ModelParams p = ModelParams::zeros(1, 1, 1);
  ModelParams g = p.zeros_like();
  g.w1(0, 0) = 1.0;
  OptimizerState opt(1e-3, 0.9, p);
  sgd_step(p, g, opt);
  EXPECT_DOUBLE_EQ(p.w1(0, 0), -0.001);
  EXPECT_EQ(p.b1[0], 0.0);
  // Velocity becomes 0.9 * 1 + 1 = 1.9.
  sgd_step(p, g, opt);
  EXPECT_NEAR(p.w1(0, 0), -0.001 - 0.0019, 1e-15);
}

TEST(SgdTest, NonFiniteGradientThrowsAndLeavesParams) {
  ModelParams p = init_params(2, 2, 2, 3);
  const ModelParams before = p;
  ModelParams g = p.zeros_like();
  g.b2[1] = std::nan("");
  OptimizerState opt(1e-3, 0.9, p);
  EXPECT_THROW(sgd_step(p, g, opt), DivergenceError);
  EXPECT_EQ(p, before);
}

TEST(SgdTest, RejectsBadHyperparameters) {
  const auto p = ModelParams::zeros(1, 1, 1);
  EXPECT_THROW(OptimizerState(0.0, 0.9, p), ContractViolation);
  EXPECT_THROW(OptimizerState(1e-3, 1.0, p), ContractViolation);
}

TEST(EmaTest, ScalarExamples) {
  ModelParams t = ModelParams::zeros(1, 1, 1), s = t;
  t.w1(0, 0) = 1.0;
  ema_update(t, s, 0.996);
  EXPECT_DOUBLE_EQ(t.w1(0, 0), 0.996);
  ModelParams t2 = t;
  ema_update(t2, s, 1.0);
  EXPECT_EQ(t2, t);
  ema_update(t2, s, 0.0);
  EXPECT_EQ(t2, s);
}

TEST(EmaPropertyTest, EntrywiseConvexCombination) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ModelParams t = init_params(4, 3, 3, seed, 1.0);
    const ModelParams s = init_params(4, 3, 3, seed + 1000, 1.0);
    const ModelParams before = t;
    const double alpha = double(seed % 11) / 10.0;
    ema_update(t, s, alpha);
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_GE(t.coord(i), std::min(before.coord(i), s.coord(i)) - 1e-15);
      EXPECT_LE(t.coord(i), std::max(before.coord(i), s.coord(i)) + 1e-15);
    }
  }
}

TEST(EmaTest, RejectsBadInputs) {
  ModelParams t = ModelParams::zeros(1, 1, 1);
  EXPECT_THROW(ema_update(t, ModelParams::zeros(2, 1, 1), 0.5), ContractViolation);
  EXPECT_THROW(ema_update(t, t, 1.5), ContractViolation);
}

TEST(DetectionsTest, ArgmaxTraceExample) {
  Eigen::MatrixXd probs(1, 3);
  probs << 0.7, 0.2, 0.1;
  const auto dets = detections_from_probs({{0, 0, 10, 10}}, probs, 0.5);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].category, 0);
  EXPECT_DOUBLE_EQ(dets[0].confidence, 0.7);
  EXPECT_EQ(dets[0].proposal_index, 0u);
}

TEST(DetectionsTest, BackgroundArgmaxDropped) {
  Eigen::MatrixXd probs(2, 3);
  probs << 0.3, 0.2, 0.5,  //
      0.05, 0.05, 0.9;
  EXPECT_TRUE(detections_from_probs({{0, 0, 1, 1}, {2, 2, 3, 3}}, probs, 0.5).empty());
}

TEST(DetectionsTest, PerCategoryNmsAndOrdering) {
  Eigen::MatrixXd probs(4, 3);
  probs << 0.6, 0.3, 0.1,  // cat 0
      0.8, 0.1, 0.1,       // cat 0, same place, higher score
      0.1, 0.7, 0.2,       // cat 1, same place: different category survives
      0.1, 0.85, 0.05;     // cat 1 elsewhere
  const std::vector<BBox> boxes{{0, 0, 10, 10}, {0, 0, 10, 10}, {0, 0, 10, 10}, {50, 50, 60, 60}};
  const auto dets = detections_from_probs(boxes, probs, 0.5);
  ASSERT_EQ(dets.size(), 3u);
  EXPECT_EQ(dets[0].proposal_index, 3u);
  EXPECT_EQ(dets[1].proposal_index, 1u);
  EXPECT_EQ(dets[2].proposal_index, 2u);
}

TEST(DetectionsTest, AlwaysBackgroundModelGivesNothing) {
  ModelParams p = ModelParams::zeros(3, 2, 3);
  p.b2[2] = 10.0;
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 3);
  const std::vector<BBox> boxes(5, BBox{0, 0, 1, 1});
  EXPECT_TRUE(predict_detections(p, boxes, x, 0.5).empty());
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  const auto p = init_params(16, 8, 5, 12, 0.3);
  std::stringstream ss;
  write_checkpoint(ss, p);
  EXPECT_EQ(read_checkpoint(ss), p);
}

TEST(CheckpointTest, RejectsWrongMagicAndTruncation) {
  std::istringstream bad("NOT-A-CHECKPOINT\n1 1 1\n");
  EXPECT_THROW(read_checkpoint(bad), std::runtime_error);
  std::stringstream ss;
  write_checkpoint(ss, init_params(2, 2, 2, 1));
  const std::string text = ss.str();
  std::istringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(read_checkpoint(truncated), std::runtime_error);
}

}  // namespace
}  // namespace lpu
