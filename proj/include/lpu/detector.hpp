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


#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lpu/error.hpp"
#include "lpu/geometry.hpp"
#include "lpu/synthworld.hpp"

namespace lpu {

/// Weights of the one-hidden-layer ROI classification head:
///   embedding = tanh(w1 * x + b1), logits = w2 * embedding + b2.
/// The last output is background.
template <typename Scalar>
struct ModelParamsT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix w1;  // h x d
  Vector b1;  // h
  Matrix w2;  // (C+1) x h
  Vector b2;  // C+1

  static ModelParamsT zeros(int input_dim, int hidden_dim, int num_outputs) {
    return {Matrix::Zero(hidden_dim, input_dim), Vector::Zero(hidden_dim),
            Matrix::Zero(num_outputs, hidden_dim), Vector::Zero(num_outputs)};
  }
  ModelParamsT zeros_like() const {
    return zeros(input_dim(), hidden_dim(), num_outputs());
  }

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden_dim() const { return static_cast<int>(w1.rows()); }
  int num_outputs() const { return static_cast<int>(w2.rows()); }

  std::size_t size() const {
    return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
  }

  /// Flat view over every coordinate (w1, b1, w2, b2; storage order).
  Scalar& coord(std::size_t i) { return const_cast<Scalar&>(std::as_const(*this).coord(i)); }
  const Scalar& coord(std::size_t i) const {
    auto idx = static_cast<Eigen::Index>(i);
    if (idx < w1.size()) return w1.data()[idx];
    idx -= w1.size();
    if (idx < b1.size()) return b1.data()[idx];
    idx -= b1.size();
    if (idx < w2.size()) return w2.data()[idx];
    idx -= w2.size();
    return b2.data()[idx];
  }

  bool same_shape(const ModelParamsT& o) const {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && w2.rows() == o.w2.rows() &&
           w2.cols() == o.w2.cols() && b1.size() == o.b1.size() && b2.size() == o.b2.size();
  }
  bool all_finite() const {
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
  }

  ModelParamsT& operator+=(const ModelParamsT& o) {
    w1 += o.w1;
    b1 += o.b1;
    w2 += o.w2;
    b2 += o.b2;
    return *this;
  }
  ModelParamsT& operator*=(Scalar s) {
    w1 *= s;
    b1 *= s;
    w2 *= s;
    b2 *= s;
    return *this;
  }

  friend bool operator==(const ModelParamsT& a, const ModelParamsT& b) {
    return a.same_shape(b) && a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2;
  }
};

using ModelParams = ModelParamsT<double>;

/// Uniform init in [-scale, scale] from `seed`.
ModelParams init_params(int input_dim, int hidden_dim, int num_outputs, std::uint64_t seed,
                        double scale = 0.1);

template <typename Scalar>
struct RoiOutputT {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> embedding;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> logits;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> probs;
};
using RoiOutput = RoiOutputT<double>;

/// Row-per-sample forward results for a batch of features.
struct RoiBatch {
  Eigen::MatrixXd embedding;  // N x h
  Eigen::MatrixXd logits;     // N x (C+1)
  Eigen::MatrixXd probs;      // N x (C+1)

  Eigen::Index size() const { return probs.rows(); }
};

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

template <typename Scalar, typename Derived>
RoiOutputT<Scalar> forward(const ModelParamsT<Scalar>& params,
                           const Eigen::MatrixBase<Derived>& feature) {
  if (feature.size() != params.input_dim())
    throw ContractViolation("forward: feature length does not match the model input dimension");
  RoiOutputT<Scalar> out;
  out.embedding = (params.w1 * feature + params.b1).array().tanh();
  out.logits = params.w2 * out.embedding + params.b2;
  out.probs = softmax(out.logits);
  return out;
}

/// Batched forward over the rows of `features`.
RoiBatch forward_batch(const ModelParams& params, const Eigen::MatrixXd& features);

/// Backpropagates row-wise upstream gradients on logits and embeddings through
/// the head and accumulates the parameter gradient into `grads`. Either
/// upstream matrix may be empty.
void backward(const ModelParams& params, const Eigen::MatrixXd& features, const RoiBatch& cache,
              const Eigen::MatrixXd& d_logits, const Eigen::MatrixXd& d_embedding,
              ModelParams& grads);

struct OptimizerState {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  ModelParams velocity;

  OptimizerState() = default;
  OptimizerState(double lr, double mom, const ModelParams& like);
};

/// Momentum SGD descent step: v <- m*v + g; p <- p - lr*v.
/// Throws DivergenceError (and leaves params untouched) on a non-finite gradient.
void sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state);

/// teacher <- alpha * teacher + (1 - alpha) * student, entrywise.
template <typename Scalar>
void ema_update(ModelParamsT<Scalar>& teacher, const ModelParamsT<Scalar>& student, Scalar alpha) {
  if (!teacher.same_shape(student)) throw ContractViolation("ema_update: shape mismatch");
  if (!(alpha >= Scalar(0) && alpha <= Scalar(1)))
    throw ContractViolation("ema_update: alpha must lie in [0, 1]");
  const Scalar beta = Scalar(1) - alpha;
  teacher.w1 = alpha * teacher.w1 + beta * student.w1;
  teacher.b1 = alpha * teacher.b1 + beta * student.b1;
  teacher.w2 = alpha * teacher.w2 + beta * student.w2;
  teacher.b2 = alpha * teacher.b2 + beta * student.b2;
}

struct Detection {
  BBox box;
  int category = 0;
  double confidence = 0.0;
  std::size_t proposal_index = 0;
};

/// Turns per-proposal class probabilities into detections: proposals whose
/// overall argmax is background are dropped, the rest scored by their best
/// foreground probability, NMS'd per category and sorted by confidence.
std::vector<Detection> detections_from_probs(const std::vector<BBox>& boxes,
                                             const Eigen::MatrixXd& probs, double nms_threshold);

std::vector<Detection> predict_detections(const ModelParams& params, const std::vector<BBox>& boxes,
                                          const Eigen::MatrixXd& features, double nms_threshold);

std::vector<Detection> predict_detections(const ModelParams& params, const DomainConfig& cfg,
                                          const Scene& scene, const std::vector<Proposal>& proposals,
                                          View view, double nms_threshold, Rng& rng);

// Checkpoint: "LPU-CHECKPOINT 1" magic line, "d h outputs", then w1 rows, b1,
// w2 rows, b2, one line each, row-major, %.17g.
void write_checkpoint(std::ostream& os, const ModelParams& params);
ModelParams read_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace lpu
