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


#include "lpu/experiment.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "lpu/error.hpp"

namespace lpu {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  if (!(is >> out) || !(is >> std::ws).eof())
    throw ConfigError(key, fmt::format("key '{}': cannot parse '{}'", key, value));
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError(key, fmt::format("key '{}': expected true/false, got '{}'", key, value));
}

struct Entry {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Entry number_entry(T ExperimentConfig::*outer) {
  return {[outer](const ExperimentConfig& c) { return fmt::format("{}", c.*outer); },
          [outer](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*outer = parse_number<T>(k, v);
          }};
}

template <typename Accessor>
Entry field_entry(Accessor access) {
  using T = std::remove_reference_t<decltype(access(std::declval<ExperimentConfig&>()))>;
  return {[access](const ExperimentConfig& c) {
            auto& mut = const_cast<ExperimentConfig&>(c);
            if constexpr (std::is_same_v<T, bool>) return std::string(access(mut) ? "true" : "false");
            else return fmt::format("{}", access(mut));
          },
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>) access(c) = parse_bool(k, v);
            else access(c) = parse_number<T>(k, v);
          }};
}

#define LPU_FIELD(expr) field_entry([](ExperimentConfig& c) -> auto& { return c.expr; })

const std::vector<std::pair<std::string, Entry>>& registry() {
  static const std::vector<std::pair<std::string, Entry>> entries = [] {
    std::vector<std::pair<std::string, Entry>> e;
    e.emplace_back("num_categories", LPU_FIELD(world.num_categories));
    e.emplace_back("feature_dim", LPU_FIELD(world.feature_dim));
    e.emplace_back("prototype_scale", LPU_FIELD(world.prototype_scale));
    e.emplace_back("offset_norm", LPU_FIELD(world.offset_norm));
    e.emplace_back("offset_fade", LPU_FIELD(world.offset_fade));
    e.emplace_back("object_fade_max", LPU_FIELD(world.object_fade_max));
    e.emplace_back("feature_noise_sigma", LPU_FIELD(world.feature_noise_sigma));
    e.emplace_back("weak_aug_sigma", LPU_FIELD(world.weak_aug_sigma));
    e.emplace_back("strong_aug_sigma", LPU_FIELD(world.strong_aug_sigma));
    e.emplace_back("scene_width", LPU_FIELD(world.scene_width));
    e.emplace_back("scene_height", LPU_FIELD(world.scene_height));
    e.emplace_back("min_objects", LPU_FIELD(world.min_objects));
    e.emplace_back("max_objects", LPU_FIELD(world.max_objects));
    e.emplace_back("min_object_size", LPU_FIELD(world.min_object_size));
    e.emplace_back("max_object_size", LPU_FIELD(world.max_object_size));
    e.emplace_back("min_distractors", LPU_FIELD(world.min_distractors));
    e.emplace_back("max_distractors", LPU_FIELD(world.max_distractors));
    e.emplace_back("distractor_blend", LPU_FIELD(world.distractor_blend));
    e.emplace_back("source_distractors", LPU_FIELD(world.source_distractors));
    e.emplace_back("n_source", number_entry(&ExperimentConfig::n_source));
    e.emplace_back("n_target", number_entry(&ExperimentConfig::n_target));
    e.emplace_back("n_eval", number_entry(&ExperimentConfig::n_eval));
    e.emplace_back("hidden_dim", LPU_FIELD(pretrain.hidden_dim));
    e.emplace_back("pretrain_epochs", LPU_FIELD(pretrain.epochs));
    e.emplace_back("pretrain_lr", LPU_FIELD(pretrain.learning_rate));
    e.emplace_back("pretrain_momentum", LPU_FIELD(pretrain.momentum));
    e.emplace_back("n_jitter", field_entry([](ExperimentConfig& c) -> auto& { return c.adapt.proposals.n_jitter; }));
    e.emplace_back("n_random", field_entry([](ExperimentConfig& c) -> auto& { return c.adapt.proposals.n_random; }));
    e.emplace_back("jitter_sigma", field_entry([](ExperimentConfig& c) -> auto& { return c.adapt.proposals.jitter_sigma; }));
    e.emplace_back("sigma_h", LPU_FIELD(adapt.sigma_high));
    e.emplace_back("sigma_l", LPU_FIELD(adapt.sigma_low));
    e.emplace_back("lambda_pst", LPU_FIELD(adapt.lambda_pst));
    e.emplace_back("lambda_lscl", LPU_FIELD(adapt.lambda_lscl));
    e.emplace_back("tau", LPU_FIELD(adapt.tau));
    e.emplace_back("alpha", LPU_FIELD(adapt.alpha));
    e.emplace_back("lr", LPU_FIELD(adapt.learning_rate));
    e.emplace_back("momentum", LPU_FIELD(adapt.momentum));
    e.emplace_back("epochs", LPU_FIELD(adapt.epochs));
    e.emplace_back("batch_size", LPU_FIELD(adapt.batch_size));
    e.emplace_back("enable_pst", LPU_FIELD(adapt.enable_pst));
    e.emplace_back("enable_lscl", LPU_FIELD(adapt.enable_lscl));
    e.emplace_back("mixup",
                   Entry{[](const ExperimentConfig& c) { return std::string(to_string(c.adapt.mixup)); },
                         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                           try {
                             c.adapt.mixup = parse_mixup_strategy(v);
                           } catch (const std::invalid_argument& ex) {
                             throw ConfigError(k, fmt::format("key '{}': {}", k, ex.what()));
                           }
                         }});
    e.emplace_back("normalize_contrastive", LPU_FIELD(adapt.normalize_contrastive));
    e.emplace_back("lscl_key_in_denominator", LPU_FIELD(adapt.lscl_key_in_denominator));
    e.emplace_back("exclude_low_from_high", LPU_FIELD(adapt.exclude_low_from_high));
    e.emplace_back("fg_iou", LPU_FIELD(adapt.fg_iou_threshold));
    e.emplace_back("match_iou", LPU_FIELD(adapt.match_iou_threshold));
    e.emplace_back("nms_iou", LPU_FIELD(adapt.nms_threshold));
    e.emplace_back("seed", LPU_FIELD(adapt.seed));
    return e;
  }();
  return entries;
}

#undef LPU_FIELD

const Entry& find_entry(const std::string& key) {
  for (const auto& [k, e] : registry())
    if (k == key) return e;
  throw ConfigError(key, fmt::format("unknown key '{}'", key));
}

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_entry(key).set(cfg, key, trim(value));
  // Proposal settings are shared by pretraining, adaptation and evaluation.
  cfg.pretrain.proposals = cfg.adapt.proposals;
  cfg.eval_proposals = cfg.adapt.proposals;
  cfg.pretrain.fg_iou_threshold = cfg.adapt.fg_iou_threshold;
  cfg.eval_nms = cfg.adapt.nms_threshold;
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) {
  return find_entry(key).get(cfg);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, e] : registry()) keys.push_back(k);
  return keys;
}

std::vector<std::pair<std::string, std::string>> config_snapshot(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, e] : registry()) out.emplace_back(k, e.get(cfg));
  return out;
}

void apply_config_stream(ExperimentConfig& cfg, std::istream& is, const std::string& origin) {
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", fmt::format("{}:{}: expected 'key = value'", origin, line_no));
    set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config", "cannot read config file " + path);
  apply_config_stream(cfg, is, path);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError(assignment, fmt::format("override '{}' is not key=value", assignment));
  set_config_value(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void validate_config(const ExperimentConfig& cfg) {
  cfg.adapt.validate();
  if (cfg.n_source < 1) throw ConfigError("n_source", "n_source must be >= 1");
  if (cfg.n_target < 1) throw ConfigError("n_target", "n_target must be >= 1");
  if (cfg.n_eval < 1) throw ConfigError("n_eval", "n_eval must be >= 1");
  if (cfg.pretrain.hidden_dim < 1) throw ConfigError("hidden_dim", "hidden_dim must be >= 1");
  if (cfg.pretrain.epochs < 0) throw ConfigError("pretrain_epochs", "pretrain_epochs must be >= 0");
  if (cfg.adapt.proposals.n_jitter < 0) throw ConfigError("n_jitter", "n_jitter must be >= 0");
  if (cfg.adapt.proposals.n_random < 0) throw ConfigError("n_random", "n_random must be >= 0");
  if (cfg.world.weak_aug_sigma < 0.0 || cfg.world.strong_aug_sigma < cfg.world.weak_aug_sigma)
    throw ConfigError("strong_aug_sigma", "require strong_aug_sigma >= weak_aug_sigma >= 0");
  try {
    make_domain(cfg.world, 0);
  } catch (const std::invalid_argument& ex) {
    throw ConfigError("world", ex.what());
  }
}

SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedContext ctx;
  ctx.seed = seed;
  ctx.domain = make_domain(cfg.world, seed);
  ctx.data = generate_dataset(ctx.domain, cfg.n_source, cfg.n_target, cfg.n_eval, seed);
  PretrainConfig pre = cfg.pretrain;
  pre.seed = seed;
  ctx.source_model = pretrain_source(ctx.domain, ctx.data.source, pre);
  return ctx;
}

EvalResult evaluate_model(const ModelParams& model, const DomainConfig& domain,
                          const std::vector<Scene>& scenes, const ExperimentConfig& cfg) {
  std::vector<EvalScene> eval;
  eval.reserve(scenes.size());
  for (const auto& scene : scenes) {
    Rng rng = make_rng(scene.seed, {0xE7A1});
    const auto proposals = generate_proposals(domain, scene, cfg.eval_proposals, rng);
    EvalScene es;
    es.ground_truth = scene.objects;
    if (!proposals.empty())
      es.detections = predict_detections(model, domain, scene, proposals, View::kWeak, cfg.eval_nms, rng);
    eval.push_back(std::move(es));
  }
  return average_precision(eval, domain.num_categories, 0.5);
}

VariantRun run_variant(const SeedContext& ctx, const ExperimentConfig& cfg,
                       const std::string& config_id, AdaptConfig adapt) {
  adapt.seed = ctx.seed;
  VariantRun run;
  run.config_id = config_id;
  run.seed = ctx.seed;
  run.source_map = evaluate_model(ctx.source_model, ctx.domain, ctx.data.target_eval, cfg).map;
  const Evaluator eval = [&](const ModelParams& m) {
    return evaluate_model(m, ctx.domain, ctx.data.target_eval, cfg);
  };
  run.adapt = adapt_target(ctx.domain, ctx.source_model, ctx.data.target, adapt, eval);
  run.final_eval = adapt.epochs > 0 && !run.adapt.log.empty() && run.adapt.log.back().eval
                       ? *run.adapt.log.back().eval
                       : eval(run.adapt.teacher);
  return run;
}

std::vector<Variant> study_variants(const std::string& study, const AdaptConfig& base) {
  auto make = [&](double sh, double sl, bool pst, bool lscl) {
    AdaptConfig a = base;
    a.sigma_high = sh;
    a.sigma_low = sl;
    a.enable_pst = pst;
    a.enable_lscl = lscl;
    return a;
  };
  const double sh = base.sigma_high;
  const double sl = base.sigma_low;
  if (study == "ablation")
    return {{"mt", make(sh, sh, false, false)},
            {"mt+pst", make(sh, sl, true, false)},
            {"mt+lscl", make(sh, sl, false, true)},
            {"mt+pst+lscl", make(sh, sl, true, true)}};
  if (study == "thresholds")
    return {{fmt::format("single_{}", sh), make(sh, sh, false, false)},
            {fmt::format("single_{}", sl), make(sl, sl, false, false)},
            {fmt::format("lpu_1_{}", sl), make(1.0, sl, true, true)},
            {fmt::format("lpu_{}_{}", sh, sl), make(sh, sl, true, true)}};
  if (study == "mixup") {
    std::vector<Variant> out;
    for (auto m : {MixupStrategy::kRandom, MixupStrategy::kCls, MixupStrategy::kIou,
                   MixupStrategy::kRandomStudent, MixupStrategy::kClsStudent,
                   MixupStrategy::kIouStudent}) {
      AdaptConfig a = make(sh, sl, true, true);
      a.mixup = m;
      out.push_back({to_string(m), a});
    }
    return out;
  }
  throw ConfigError("study", fmt::format("unknown study '{}' (ablation|thresholds|mixup)", study));
}

std::vector<std::uint64_t> seed_list(std::uint64_t first, int count) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < count; ++i) seeds.push_back(first + static_cast<std::uint64_t>(i));
  return seeds;
}

StudyResult run_study(const ExperimentConfig& cfg, const std::vector<Variant>& variants,
                      const std::vector<std::uint64_t>& seeds, int jobs) {
  validate_config(cfg);
  for (const auto& v : variants) v.adapt.validate();
  StudyResult result;
  result.seeds = seeds;
  const auto contexts =
      parallel_map(seeds.size(), jobs, [&](std::size_t i) { return prepare_seed(cfg, seeds[i]); });
  const std::size_t n_runs = variants.size() * seeds.size();
  result.runs = parallel_map(n_runs, jobs, [&](std::size_t r) {
    const auto& v = variants[r / seeds.size()];
    return run_variant(contexts[r % seeds.size()], cfg, v.id, v.adapt);
  });
  for (std::size_t s = 0; s < seeds.size(); ++s)
    result.source_maps.push_back(result.runs.empty() ? 0.0 : result.runs[s].source_map);
  for (std::size_t v = 0; v < variants.size(); ++v) {
    StudyRow row;
    row.config_id = variants[v].id;
    for (std::size_t s = 0; s < seeds.size(); ++s)
      row.maps.push_back(result.runs[v * seeds.size() + s].final_eval.map);
    const double n = static_cast<double>(row.maps.size());
    row.mean = std::accumulate(row.maps.begin(), row.maps.end(), 0.0) / n;
    double ss = 0.0;
    for (double m : row.maps) ss += (m - row.mean) * (m - row.mean);
    row.stddev = row.maps.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    result.rows.push_back(std::move(row));
  }
  return result;
}

void write_epoch_log_header(std::ostream& os, int num_categories) {
  os << "epoch,seed,config_id,mAP";
  for (int c = 0; c < num_categories; ++c) os << ",AP_" << c;
  os << ",L_h,L_pst,L_lscl,N_p_mean,high_count_mean,low_count_mean\n";
}

void write_epoch_log_rows(std::ostream& os, const VariantRun& run, int num_categories) {
  for (const auto& e : run.adapt.log) {
    os << fmt::format("{},{},{}", e.epoch, run.seed, run.config_id);
    if (e.eval) {
      os << fmt::format(",{:.6f}", e.eval->map);
      for (double ap : e.eval->ap) os << fmt::format(",{:.6f}", ap);
    } else {
      os << ",";
      for (int c = 0; c < num_categories; ++c) os << ",";
    }
    os << fmt::format(",{:.6f},{:.6f},{:.6f},{:.4f},{:.4f},{:.4f}\n", e.l_high, e.l_pst, e.l_lscl,
                      e.num_matched, e.high_count, e.low_count);
  }
}

void write_study_summary(std::ostream& os, const StudyResult& r) {
  os << "config_id,n_seeds,mAP_mean,mAP_std\n";
  for (const auto& row : r.rows)
    os << fmt::format("{},{},{:.6f},{:.6f}\n", row.config_id, row.maps.size(), row.mean, row.stddev);
}

void write_study_seeds(std::ostream& os, const StudyResult& r) {
  os << "config_id,seed,mAP\n";
  for (std::size_t s = 0; s < r.seeds.size(); ++s)
    os << fmt::format("source_only,{},{:.6f}\n", r.seeds[s], r.source_maps[s]);
  for (const auto& row : r.rows)
    for (std::size_t s = 0; s < r.seeds.size(); ++s)
      os << fmt::format("{},{},{:.6f}\n", row.config_id, r.seeds[s], row.maps[s]);
}

std::string content_hash(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace lpu
