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

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

namespace lpu {

ModelParams init_params(int input_dim, int hidden_dim, int num_outputs, std::uint64_t seed,
                        double scale) {
  ModelParams p = ModelParams::zeros(input_dim, hidden_dim, num_outputs);
  Rng rng = make_rng(seed, {0x1417});
  std::uniform_real_distribution<double> u(-scale, scale);
  for (std::size_t i = 0; i < p.size(); ++i) p.coord(i) = u(rng);
  return p;
}

RoiBatch forward_batch(const ModelParams& params, const Eigen::MatrixXd& features) {
  if (features.cols() != params.input_dim())
    throw ContractViolation("forward_batch: feature width does not match the model input dimension");
  RoiBatch out;
  out.embedding = ((features * params.w1.transpose()).rowwise() + params.b1.transpose()).array().tanh();
  out.logits = (out.embedding * params.w2.transpose()).rowwise() + params.b2.transpose();
  out.probs.resize(out.logits.rows(), out.logits.cols());
  for (Eigen::Index i = 0; i < out.logits.rows(); ++i)
    out.probs.row(i) = softmax(out.logits.row(i).transpose()).transpose();
  return out;
}

void backward(const ModelParams& params, const Eigen::MatrixXd& features, const RoiBatch& cache,
              const Eigen::MatrixXd& d_logits, const Eigen::MatrixXd& d_embedding,
              ModelParams& grads) {
  const Eigen::Index n = features.rows();
  Eigen::MatrixXd d_emb = Eigen::MatrixXd::Zero(n, params.hidden_dim());
  if (d_logits.size() > 0) {
    if (d_logits.rows() != n || d_logits.cols() != params.num_outputs())
      throw ContractViolation("backward: d_logits shape mismatch");
    grads.w2.noalias() += d_logits.transpose() * cache.embedding;
    grads.b2 += d_logits.colwise().sum().transpose();
    d_emb.noalias() += d_logits * params.w2;
  }
  if (d_embedding.size() > 0) {
    if (d_embedding.rows() != n || d_embedding.cols() != params.hidden_dim())
      throw ContractViolation("backward: d_embedding shape mismatch");
    d_emb += d_embedding;
  }
  const Eigen::MatrixXd d_pre =
      (d_emb.array() * (1.0 - cache.embedding.array().square())).matrix();
  grads.w1.noalias() += d_pre.transpose() * features;
  grads.b1 += d_pre.colwise().sum().transpose();
}

OptimizerState::OptimizerState(double lr, double mom, const ModelParams& like)
    : learning_rate(lr), momentum(mom), velocity(like.zeros_like()) {
  if (!(lr > 0.0)) throw ContractViolation("learning rate must be > 0");
  if (!(mom >= 0.0 && mom < 1.0)) throw ContractViolation("momentum must lie in [0, 1)");
}

void sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
  if (!params.same_shape(grads)) throw ContractViolation("sgd_step: gradient shape mismatch");
  if (!grads.all_finite()) throw DivergenceError("sgd_step: non-finite gradient, step aborted");
  if (!state.velocity.same_shape(params)) state.velocity = params.zeros_like();
  state.velocity *= state.momentum;
  state.velocity += grads;
  ModelParams delta = state.velocity;
  delta *= -state.learning_rate;
  params += delta;
}

std::vector<Detection> detections_from_probs(const std::vector<BBox>& boxes,
                                             const Eigen::MatrixXd& probs, double nms_threshold) {
  if (static_cast<Eigen::Index>(boxes.size()) != probs.rows())
    throw ContractViolation("detections_from_probs: one probability row per box required");
  const Eigen::Index bg = probs.cols() - 1;
  std::vector<Detection> candidates;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    if (best == bg) continue;
    Eigen::Index cat = 0;
    const double conf = probs.row(i).head(bg).maxCoeff(&cat);
    candidates.push_back({boxes[static_cast<std::size_t>(i)], static_cast<int>(cat), conf,
                          static_cast<std::size_t>(i)});
  }
  std::vector<Detection> out;
  for (Eigen::Index c = 0; c < bg; ++c) {
    std::vector<ScoredBox> scored;
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      if (candidates[k].category != c) continue;
      scored.push_back({candidates[k].box, candidates[k].confidence});
      members.push_back(k);
    }
    for (std::size_t kept : nms(scored, nms_threshold)) out.push_back(candidates[members[kept]]);
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.proposal_index < b.proposal_index;
  });
  return out;
}

std::vector<Detection> predict_detections(const ModelParams& params, const std::vector<BBox>& boxes,
                                          const Eigen::MatrixXd& features, double nms_threshold) {
  if (boxes.empty()) return {};
  return detections_from_probs(boxes, forward_batch(params, features).probs, nms_threshold);
}

std::vector<Detection> predict_detections(const ModelParams& params, const DomainConfig& cfg,
                                          const Scene& scene, const std::vector<Proposal>& proposals,
                                          View view, double nms_threshold, Rng& rng) {
  const auto boxes = boxes_of(proposals);
  return predict_detections(params, boxes, extract_features(cfg, scene, boxes, view, rng),
                            nms_threshold);
}

namespace {

constexpr const char* kCheckpointMagic = "LPU-CHECKPOINT 1";

template <typename M>
void write_rows(std::ostream& os, const M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      os << (c ? " " : "") << fmt::format("{:.17g}", m(r, c));
    os << '\n';
  }
}

template <typename M>
void read_rows(std::istream& is, M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      if (!(is >> m(r, c))) throw std::runtime_error("checkpoint: truncated weights");
}

}  // namespace

void write_checkpoint(std::ostream& os, const ModelParams& p) {
  os << kCheckpointMagic << '\n'
     << p.input_dim() << ' ' << p.hidden_dim() << ' ' << p.num_outputs() << '\n';
  write_rows(os, p.w1);
  write_rows(os, p.b1.transpose());
  write_rows(os, p.w2);
  write_rows(os, p.b2.transpose());
}

ModelParams read_checkpoint(std::istream& is) {
  std::string magic;
  std::getline(is, magic);
  if (magic != kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic header");
  int d = 0, h = 0, k = 0;
  if (!(is >> d >> h >> k) || d < 1 || h < 1 || k < 2)
    throw std::runtime_error("checkpoint: bad dimensions");
  ModelParams p = ModelParams::zeros(d, h, k);
  read_rows(is, p.w1);
  Eigen::RowVectorXd b1(h);
  read_rows(is, b1);
  read_rows(is, p.w2);
  Eigen::RowVectorXd b2(k);
  read_rows(is, b2);
  p.b1 = b1.transpose();
  p.b2 = b2.transpose();
  if (!p.all_finite()) throw std::runtime_error("checkpoint: non-finite weights");
  return p;
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_checkpoint(os, params);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("missing checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace lpu
