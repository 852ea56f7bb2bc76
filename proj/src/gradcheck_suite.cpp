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


#include "lpu/gradcheck_suite.hpp"

#include <algorithm>
#include <ostream>

#include <fmt/format.h>

#include "lpu/detector.hpp"
#include "lpu/synthworld.hpp"

namespace lpu {
namespace {

// A scene with one object, proposals jittered around it (so the matched set
// overlaps), random hard labels and teacher outputs from a perturbed model.
StepInputs random_inputs(const DomainConfig& domain, const ModelParams& student, Rng& rng) {
  Scene scene = generate_scene(domain, Domain::kTarget, rng());
  scene.objects.resize(1);
  ProposalParams pp;
  pp.n_jitter = 6;
  pp.n_random = 6;
  pp.jitter_sigma = 0.1;
  const auto boxes = boxes_of(generate_proposals(domain, scene, pp, rng));

  StepInputs in;
  in.features = extract_features(domain, scene, boxes, View::kStrong, rng);
  std::uniform_int_distribution<int> label(-1, domain.num_categories);
  for (std::size_t i = 0; i < boxes.size(); ++i) in.hard_labels.push_back(label(rng));

  ModelParams teacher = student;
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (std::size_t i = 0; i < teacher.size(); ++i) teacher.coord(i) += jitter(rng);
  const RoiBatch t = forward_batch(teacher, extract_features(domain, scene, boxes, View::kWeak, rng));

  for (std::size_t i = 0; i < static_cast<std::size_t>(pp.n_jitter); ++i) in.matched.push_back(i);
  in.matched.push_back(boxes.size() - 1);  // a random box, usually disjoint
  const auto np = static_cast<Eigen::Index>(in.matched.size());
  in.teacher_probs.resize(np, t.probs.cols());
  in.teacher_embedding.resize(np, t.embedding.cols());
  for (Eigen::Index i = 0; i < np; ++i) {
    const auto row = static_cast<Eigen::Index>(in.matched[std::size_t(i)]);
    in.teacher_probs.row(i) = t.probs.row(row);
    in.teacher_embedding.row(i) = t.embedding.row(row);
    in.matched_boxes.push_back(boxes[std::size_t(row)]);
  }
  in.partners = nearest_neighbor(in.matched_boxes);
  return in;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& opt) {
  WorldParams wp;
  const DomainConfig domain = make_domain(wp, opt.seed);
  Rng rng = make_rng(opt.seed, {0x6C5});
  std::vector<GradCheckCase> cases;
  for (int b = 0; b < opt.batches; ++b) {
    const ModelParams student = init_params(domain.feature_dim, 32, domain.num_outputs(),
                                            derive_seed(opt.seed, {std::uint64_t(b)}), 0.3);
    const StepInputs base = random_inputs(domain, student, rng);

    struct Term {
      const char* name;
      ObjectiveWeights weights;
      bool student_partner;
    };
    const Term terms[] = {
        {"high", {0.0, 0.0, opt.tau, false, false, false}, false},
        {"pst", {1.0, 0.0, opt.tau, true, false, false}, false},
        {"lscl", {0.0, 1.0, opt.tau, false, true, false}, false},
        {"lscl-student", {0.0, 1.0, opt.tau, false, true, false}, true},
        {"lscl-normalized", {0.0, 1.0, opt.tau, false, true, true}, false},
        {"lscl-keyden", {0.0, 1.0, opt.tau, false, true, false, true}, true},
        {"total", {1.0, 0.1, opt.tau, true, true, false}, false},
        {"total-default", {1.0, 0.1, opt.tau, true, true, true, true}, false},  // AdaptConfig defaults
    };
    for (const auto& term : terms) {
      StepInputs in = base;
      in.partner_from_student = term.student_partner;
      if (std::string(term.name) != "high" && !std::string(term.name).starts_with("total"))
        std::fill(in.hard_labels.begin(), in.hard_labels.end(), -1);
      ModelParams grads;
      evaluate_objective(student, in, term.weights, &grads);
      const auto loss = [&](const ModelParams& p) {
        const LossReport r = evaluate_objective(p, in, term.weights, nullptr);
        if (std::string(term.name) == "pst") return r.l_pst;
        if (std::string(term.name).starts_with("lscl")) return r.l_lscl;
        return r.l_total;
      };
      GradCheckOptions go;
      go.step = opt.step;
      go.tolerance = opt.tolerance;
      go.max_coords = opt.coords;
      go.seed = derive_seed(opt.seed, {std::uint64_t(b), 0xC0});
      cases.push_back({b, term.name, grad_check(loss, student, grads, go)});
    }
  }
  return cases;
}

void write_gradcheck_report(std::ostream& os, const std::vector<GradCheckCase>& cases) {
  os << "batch,term,coords,max_rel_err,status\n";
  for (const auto& c : cases)
    os << fmt::format("{},{},{},{:.3e},{}\n", c.batch, c.term, c.report.coords_checked,
                      c.report.max_rel_err, c.report.passed ? "PASS" : "FAIL");
  for (const auto& c : cases) {
    if (c.report.passed) continue;
    os << fmt::format("# worst coordinates for batch {} term {}\n", c.batch, c.term);
    c.report.write(os);
  }
}

}  // namespace lpu
