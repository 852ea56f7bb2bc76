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


// Command-line front end: data generation, training, evaluation, the
// experiment matrices and diagnostics.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lpu/adapt.hpp"
#include "lpu/detector.hpp"
#include "lpu/error.hpp"
#include "lpu/experiment.hpp"
#include "lpu/gradcheck_suite.hpp"
#include "lpu/metrics.hpp"
#include "lpu/synthworld.hpp"

namespace fs = std::filesystem;
using namespace lpu;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string data_dir;
  std::string checkpoint;
  std::uint64_t seed = 1;
  int seeds = 5;
  int jobs = 1;
  std::string study = "ablation";
  std::string param;
  std::string values;
  int scene = 0;
  int object = 0;
  int steps = 10;
  int batches = 10;
  std::size_t coords = 200;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Config snapshot, seeds and input hashes; the hash excludes timestamps and
/// worker counts so it only changes with the inputs.
class Manifest {
 public:
  Manifest(std::string command, const ExperimentConfig& cfg, std::vector<std::uint64_t> seeds,
           fs::path out)
      : command_(std::move(command)), seeds_(std::move(seeds)), out_(std::move(out)), started_(utc_now()) {
    snapshot_ = config_snapshot(cfg);
  }

  void add_input(const fs::path& p) { inputs_.emplace_back(p.filename().string(), content_hash(read_file(p))); }

  std::string hash() const { return content_hash(canonical()); }

  void write() const {
    std::ofstream os(out_ / "manifest.txt", std::ios::binary);
    os << "hash = " << hash() << "\n" << canonical();
    os << "output_dir = " << out_.string() << "\n";
    os << "started = " << started_ << "\nfinished = " << utc_now() << "\n";
  }

  std::ofstream open_csv(const std::string& name) const {
    std::ofstream os(out_ / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (out_ / name).string());
    os << "# manifest " << hash() << "\n";
    return os;
  }

 private:
  std::string canonical() const {
    std::string s = "command = " + command_ + "\nseeds =";
    for (auto v : seeds_) s += " " + std::to_string(v);
    s += "\n";
    for (const auto& [k, v] : snapshot_) s += k + " = " + v + "\n";
    for (const auto& [name, h] : inputs_) s += "input " + name + " = " + h + "\n";
    return s;
  }

  std::string command_;
  std::vector<std::uint64_t> seeds_;
  fs::path out_;
  std::string started_;
  std::vector<std::pair<std::string, std::string>> snapshot_;
  std::vector<std::pair<std::string, std::string>> inputs_;
};

ExperimentConfig load_config(const Options& o) {
  ExperimentConfig cfg;
  if (!o.config_path.empty()) apply_config_file(cfg, o.config_path);
  for (const auto& s : o.overrides) apply_override(cfg, s);
  cfg.adapt.seed = o.seed;
  validate_config(cfg);
  return cfg;
}

fs::path out_dir(const Options& o) {
  fs::path p = o.out;
  if (p.empty()) {
    const char* root = std::getenv("LPU_OUT_ROOT");
    p = root ? root : "out";
  }
  fs::create_directories(p);
  return p;
}

fs::path data_dir(const Options& o, const fs::path& out) {
  return o.data_dir.empty() ? out : fs::path(o.data_dir);
}

fs::path require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw UsageError(fmt::format("missing {} '{}'", what, p.string()));
  return p;
}

fs::path checkpoint_path(const Options& o, const fs::path& data, const char* fallback) {
  return require_file(o.checkpoint.empty() ? data / fallback : fs::path(o.checkpoint), "checkpoint");
}

int cmd_gen_data(const Options& o) {
  const auto cfg = load_config(o);
  const auto out = out_dir(o);
  const auto domain = make_domain(cfg.world, o.seed);
  const auto data = generate_dataset(domain, cfg.n_source, cfg.n_target, cfg.n_eval, o.seed);
  save_scenes((out / "source.txt").string(), data.source);
  save_scenes((out / "target.txt").string(), data.target);
  save_scenes((out / "eval.txt").string(), data.target_eval);
  Manifest m("gen-data", cfg, {o.seed}, out);
  m.write();
  std::cout << fmt::format("wrote {} source, {} target, {} eval scenes to {}\n", data.source.size(),
                           data.target.size(), data.target_eval.size(), out.string());
  return 0;
}

int cmd_pretrain(const Options& o) {
  const auto cfg = load_config(o);
  const auto out = out_dir(o);
  const auto src = require_file(data_dir(o, out) / "source.txt", "source split");
  const auto domain = make_domain(cfg.world, o.seed);
  PretrainConfig pre = cfg.pretrain;
  pre.seed = o.seed;
  const auto model = pretrain_source(domain, load_scenes(src.string()), pre);
  save_checkpoint((out / "source_model.ckpt").string(), model);
  Manifest m("pretrain", cfg, {o.seed}, out);
  m.add_input(src);
  m.write();
  std::cout << "wrote " << (out / "source_model.ckpt").string() << "\n";
  return 0;
}

int cmd_adapt(const Options& o) {
  const auto cfg = load_config(o);
  const auto out = out_dir(o);
  const auto data = data_dir(o, out);
  const auto tgt = require_file(data / "target.txt", "target split");
  const auto ev = require_file(data / "eval.txt", "eval split");
  const auto ckpt = checkpoint_path(o, data, "source_model.ckpt");
  const auto domain = make_domain(cfg.world, o.seed);
  const auto target = load_scenes(tgt.string());
  const auto eval_scenes = load_scenes(ev.string());
  const auto source_model = load_checkpoint(ckpt.string());

  VariantRun run;
  run.config_id = "adapt";
  run.seed = o.seed;
  run.adapt = adapt_target(domain, source_model, target, cfg.adapt, [&](const ModelParams& p) {
    return evaluate_model(p, domain, eval_scenes, cfg);
  });
  save_checkpoint((out / "student.ckpt").string(), run.adapt.student);
  save_checkpoint((out / "teacher.ckpt").string(), run.adapt.teacher);
  Manifest m("adapt", cfg, {o.seed}, out);
  m.add_input(tgt);
  m.add_input(ev);
  m.add_input(ckpt);
  auto csv = m.open_csv("adapt_log.csv");
  write_epoch_log_header(csv, domain.num_categories);
  write_epoch_log_rows(csv, run, domain.num_categories);
  m.write();
  if (run.adapt.diverged) throw DivergenceError(run.adapt.diagnostic + " (last good checkpoint saved)");
  if (!run.adapt.log.empty() && run.adapt.log.back().eval)
    std::cout << fmt::format("final teacher mAP {:.4f}\n", run.adapt.log.back().eval->map);
  return 0;
}

int cmd_eval(const Options& o) {
  const auto cfg = load_config(o);
  const auto out = out_dir(o);
  const auto data = data_dir(o, out);
  const auto ev = require_file(data / "eval.txt", "eval split");
  const auto ckpt = checkpoint_path(o, data, "teacher.ckpt");
  const auto domain = make_domain(cfg.world, o.seed);
  const auto result = evaluate_model(load_checkpoint(ckpt.string()), domain, load_scenes(ev.string()), cfg);
  Manifest m("eval", cfg, {o.seed}, out);
  m.add_input(ev);
  m.add_input(ckpt);
  auto csv = m.open_csv("eval.csv");
  write_eval_csv(csv, result);
  m.write();
  std::cout << fmt::format("mAP {:.4f}\n", result.map);
  return 0;
}

void write_study(const Manifest& m, const std::string& prefix, const StudyResult& r, int num_categories) {
  {
    auto csv = m.open_csv(prefix + ".csv");
    write_study_summary(csv, r);
  }
  {
    auto csv = m.open_csv(prefix + "_seeds.csv");
    write_study_seeds(csv, r);
  }
  auto csv = m.open_csv(prefix + "_log.csv");
  write_epoch_log_header(csv, num_categories);
  for (const auto& run : r.runs) write_epoch_log_rows(csv, run, num_categories);
}

int cmd_ablate(const Options& o) {
  const auto cfg = load_config(o);
  const auto out = out_dir(o);
  const auto seeds = seed_list(o.seed, o.seeds);
  const auto variants = study_variants(o.study, cfg.adapt);
  const auto result = run_study(cfg, variants, seeds, o.jobs);
  Manifest m("ablate " + o.study, cfg, seeds, out);
  write_study(m, o.study, result, cfg.world.num_categories);
  m.write();
  double src = 0.0;
  for (double v : result.source_maps) src += v;
  std::cout << fmt::format("source_only mean mAP {:.4f}\n", src / static_cast<double>(seeds.size()));
  for (const auto& row : result.rows)
    std::cout << fmt::format("{:<14} mean mAP {:.4f} (sd {:.4f})\n", row.config_id, row.mean, row.stddev);
  return 0;
}

int cmd_sweep(const Options& o) {
  if (o.param.empty() || o.values.empty()) throw UsageError("sweep needs --param and --values");
  const auto base = load_config(o);
  const auto out = out_dir(o);
  const auto seeds = seed_list(o.seed, o.seeds);
  std::vector<std::string> values;
  std::stringstream ss(o.values);
  for (std::string v; std::getline(ss, v, ',');) values.push_back(v);

  Manifest m(fmt::format("sweep {} {}", o.param, o.values), base, seeds, out);
  auto csv = m.open_csv("sweep.csv");
  csv << "param,value,n_seeds,mAP_mean,mAP_std\n";
  StudyResult all;
  for (const auto& v : values) {
    ExperimentConfig cfg = base;
    set_config_value(cfg, o.param, v);
    validate_config(cfg);
    const auto r = run_study(cfg, {{fmt::format("{}={}", o.param, v), cfg.adapt}}, seeds, o.jobs);
    csv << fmt::format("{},{},{},{:.6f},{:.6f}\n", o.param, v, seeds.size(), r.rows[0].mean, r.rows[0].stddev);
    std::cout << fmt::format("{}={} mean mAP {:.4f}\n", o.param, v, r.rows[0].mean);
  }
  m.write();
  return 0;
}

ModelParams model_for_diagnosis(const Options& o, const ExperimentConfig& cfg, const DomainConfig& domain,
                                const fs::path& data, Manifest& m) {
  if (!o.checkpoint.empty() || fs::exists(data / "source_model.ckpt")) {
    const auto ckpt = checkpoint_path(o, data, "source_model.ckpt");
    m.add_input(ckpt);
    return load_checkpoint(ckpt.string());
  }
  PretrainConfig pre = cfg.pretrain;
  pre.seed = o.seed;
  const auto src = require_file(data / "source.txt", "source split");
  m.add_input(src);
  return pretrain_source(domain, load_scenes(src.string()), pre);
}

int cmd_diagnose_bins(const Options& o) {
  const auto cfg = load_config(o);
  const auto out = out_dir(o);
  const auto data = data_dir(o, out);
  const auto ev = require_file(data / "eval.txt", "eval split");
  const auto domain = make_domain(cfg.world, o.seed);
  Manifest m("diagnose-bins", cfg, {o.seed}, out);
  m.add_input(ev);
  const auto model = model_for_diagnosis(o, cfg, domain, data, m);
  BinDiagnosticOptions bo;
  bo.proposals = cfg.eval_proposals;
  bo.fg_iou_threshold = cfg.adapt.fg_iou_threshold;
  bo.nms_threshold = cfg.eval_nms;
  bo.seed = o.seed;
  const auto bins = assignment_accuracy_bins(model, domain, load_scenes(ev.string()), default_bin_edges(), bo);
  auto csv = m.open_csv("bins.csv");
  write_bins_csv(csv, bins);
  m.write();
  std::vector<double> idx, acc;
  for (std::size_t b = 0; b < bins.size(); ++b)
    if (!bins[b].empty()) {
      idx.push_back(static_cast<double>(b));
      acc.push_back(bins[b].accuracy);
    }
  if (idx.size() >= 2) std::cout << fmt::format("spearman(bin, accuracy) = {:.4f}\n", spearman(idx, acc));
  return 0;
}

int cmd_diagnose_slide(const Options& o) {
  const auto cfg = load_config(o);
  const auto out = out_dir(o);
  const auto data = data_dir(o, out);
  const auto ev = require_file(data / "eval.txt", "eval split");
  const auto domain = make_domain(cfg.world, o.seed);
  Manifest m("diagnose-slide", cfg, {o.seed}, out);
  m.add_input(ev);
  const auto model = model_for_diagnosis(o, cfg, domain, data, m);
  const auto scenes = load_scenes(ev.string());
  if (o.scene < 0 || o.scene >= static_cast<int>(scenes.size())) throw UsageError("--scene out of range");
  const Scene& scene = scenes[static_cast<std::size_t>(o.scene)];
  if (o.object < 0 || o.object >= static_cast<int>(scene.objects.size())) throw UsageError("--object out of range");
  const BBox gt = scene.objects[static_cast<std::size_t>(o.object)].box;
  Rng rng = make_rng(o.seed, {0x511DE, scene.seed});
  const auto curve = slide_diagnostic(model, domain, scene, gt, horizontal_shift_for_iou(gt, 0.5), o.steps, rng);
  auto csv = m.open_csv("slide.csv");
  write_slide_csv(csv, curve);
  m.write();
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const auto cfg = load_config(o);
  const auto out = out_dir(o);
  GradCheckSuiteOptions go;
  go.batches = o.batches;
  go.coords = o.coords;
  go.tau = cfg.adapt.tau;
  go.seed = o.seed;
  const auto cases = run_gradcheck_suite(go);
  Manifest m("gradcheck", cfg, {o.seed}, out);
  std::ofstream os(out / "gradcheck.txt", std::ios::binary);
  os << "# manifest " << m.hash() << "\n";
  write_gradcheck_report(os, cases);
  m.write();
  double worst = 0.0;
  bool ok = true;
  for (const auto& c : cases) {
    worst = std::max(worst, c.report.max_rel_err);
    ok = ok && c.report.passed;
  }
  std::cout << fmt::format("gradcheck: {} cases, max rel err {:.3e} -> {}\n", cases.size(), worst,
                           ok ? "PASS" : "FAIL");
  if (!ok) {
    std::cerr << fmt::format("error: gradcheck: max relative error {:.3e} exceeds {:.0e}\n", worst, go.tolerance);
    return 1;
  }
  return 0;
}

void add_common(CLI::App* app, Options& o) {
  app->add_option("--config", o.config_path, "key = value config file");
  app->add_option("--set", o.overrides, "override, key=value (repeatable)");
  app->add_option("--out", o.out, "output directory (default $LPU_OUT_ROOT or ./out)");
  app->add_option("--seed", o.seed, "run seed (first seed for multi-seed commands)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-confidence pseudo-label utilization for source-free detection adaptation"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "generate source/target/eval scenes");
  auto* pre = app.add_subcommand("pretrain", "train the source model");
  auto* ada = app.add_subcommand("adapt", "adapt a source model to target scenes");
  auto* eva = app.add_subcommand("eval", "evaluate a checkpoint on the eval split");
  auto* abl = app.add_subcommand("ablate", "run a multi-seed study (ablation|thresholds|mixup)");
  auto* swp = app.add_subcommand("sweep", "sweep one config key over values");
  auto* bins = app.add_subcommand("diagnose-bins", "label-assignment accuracy per confidence bin");
  auto* slide = app.add_subcommand("diagnose-slide", "confidence along a horizontal box slide");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  for (auto* s : {gen, pre, ada, eva, abl, swp, bins, slide, grad}) add_common(s, o);
  for (auto* s : {pre, ada, eva, bins, slide}) s->add_option("--data", o.data_dir, "directory holding the scene splits");
  for (auto* s : {ada, eva, bins, slide}) s->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  for (auto* s : {abl, swp}) {
    s->add_option("--seeds", o.seeds, "number of seeds")->check(CLI::PositiveNumber);
    s->add_option("--jobs", o.jobs, "worker slots")->check(CLI::PositiveNumber);
  }
  abl->add_option("--study", o.study, "ablation | thresholds | mixup");
  swp->add_option("--param", o.param, "config key to sweep");
  swp->add_option("--values", o.values, "comma-separated values");
  slide->add_option("--scene", o.scene, "eval scene index");
  slide->add_option("--object", o.object, "object index within the scene");
  slide->add_option("--steps", o.steps, "interpolation steps")->check(CLI::PositiveNumber);
  grad->add_option("--batches", o.batches, "random batches")->check(CLI::PositiveNumber);
  grad->add_option("--coords", o.coords, "coordinates sampled per check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*pre) return cmd_pretrain(o);
    if (*ada) return cmd_adapt(o);
    if (*eva) return cmd_eval(o);
    if (*abl) return cmd_ablate(o);
    if (*swp) return cmd_sweep(o);
    if (*bins) return cmd_diagnose_bins(o);
    if (*slide) return cmd_diagnose_slide(o);
    if (*grad) return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: config: key=" << (e.key().empty() ? "-" : e.key()) << ": " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "error: divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
