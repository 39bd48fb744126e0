#pragma once
// End-to-end pipeline: synthesize data, split it across experts, train the
// experts, pick mixture coefficients four ways, fine-tune each prior and
// report curves and summaries.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glue/baselines.hpp"
#include "glue/checkpoint.hpp"
#include "glue/data.hpp"
#include "glue/report.hpp"
#include "glue/spsa.hpp"
#include "glue/train.hpp"

namespace glue {

struct TrainingConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  AdamConfig adam;
};

enum class MixMethod { data_size = 1, proxy = 2, full_grad = 3, glue = 4 };

inline std::string_view to_string(MixMethod m) {
  switch (m) {
    case MixMethod::data_size: return "data-size";
    case MixMethod::proxy: return "proxy";
    case MixMethod::full_grad: return "full-grad";
    case MixMethod::glue: return "glue";
  }
  return "?";
}

inline MixMethod parse_method(std::string_view s) {
  if (s == "data-size" || s == "1") return MixMethod::data_size;
  if (s == "proxy" || s == "2") return MixMethod::proxy;
  if (s == "full-grad" || s == "3") return MixMethod::full_grad;
  if (s == "glue" || s == "4") return MixMethod::glue;
  throw ConfigError("unknown alpha method '" + std::string(s) + "'");
}

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  DatasetSpec dataset;
  SplitSpec split;
  ArchSpec arch{{20, 64, 64, 5}};
  TrainingConfig expert_training{40, 64, {1e-3, 0.9, 0.999, 1e-8}};
  OptimConfig alpha;
  SpsaConfig spsa;
  TrainingConfig finetune{20, 64, {3e-4, 0.9, 0.999, 1e-8}};
  std::vector<MixMethod> methods{MixMethod::data_size, MixMethod::proxy, MixMethod::full_grad,
                                 MixMethod::glue};
  /// All experts start from one shared initialization.
  bool shared_expert_init = true;
  /// Every expert is replaced by expert 0 (blending becomes alpha-invariant).
  bool identical_experts = false;
  /// Expert 0 is trained on an IID target-domain pool instead of a source split.
  bool target_trained_expert = false;
  /// Output directory; empty keeps everything in memory.
  std::string out_dir;

  void validate() const {
    if (seeds.empty()) throw ConfigError("need at least one seed");
    dataset.validate();
    split.validate();
    arch.validate();
    if (arch.input_dim() != dataset.d_in) throw ConfigError("arch input dim != dataset d_in");
    if (arch.output_dim() != dataset.classes) throw ConfigError("arch output dim != class count");
    if (arch.output != OutputKind::logits) throw ConfigError("pipeline needs a classifier");
    expert_training.adam.validate();
    finetune.adam.validate();
    alpha.validate();
    spsa.validate();
    if (expert_training.batch_size == 0 || finetune.batch_size == 0) {
      throw ConfigError("batch sizes must be positive");
    }
  }
};

// JSON <-> config. Missing keys keep their defaults.
namespace detail {

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

inline void read_training(const nlohmann::json& j, TrainingConfig& t) {
  read_key(j, "epochs", t.epochs);
  read_key(j, "batch_size", t.batch_size);
  read_key(j, "lr", t.adam.lr);
  read_key(j, "beta1", t.adam.beta1);
  read_key(j, "beta2", t.adam.beta2);
  read_key(j, "epsilon", t.adam.epsilon);
}

inline nlohmann::json training_json(const TrainingConfig& t) {
  return {{"epochs", t.epochs},         {"batch_size", t.batch_size}, {"lr", t.adam.lr},
          {"beta1", t.adam.beta1},       {"beta2", t.adam.beta2},     {"epsilon", t.adam.epsilon}};
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::read_key;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  read_key(j, "seeds", c.seeds);
  read_key(j, "out_dir", c.out_dir);
  read_key(j, "shared_expert_init", c.shared_expert_init);
  read_key(j, "identical_experts", c.identical_experts);
  read_key(j, "target_trained_expert", c.target_trained_expert);
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    if (d.contains("kind")) c.dataset.kind = parse_dataset_kind(d["kind"].get<std::string>());
    read_key(d, "d_in", c.dataset.d_in);
    read_key(d, "classes", c.dataset.classes);
    read_key(d, "class_separation", c.dataset.class_separation);
    read_key(d, "clusters_per_class", c.dataset.clusters_per_class);
    read_key(d, "noise", c.dataset.noise);
    read_key(d, "file_path", c.dataset.file_path);
    read_key(d, "seed", c.dataset.seed);
    if (d.contains("sizes")) {
      const auto& s = d["sizes"];
      read_key(s, "source_pool", c.dataset.sizes.source_pool);
      read_key(s, "alpha", c.dataset.sizes.alpha);
      read_key(s, "validation", c.dataset.sizes.validation);
      read_key(s, "finetune", c.dataset.sizes.finetune);
      read_key(s, "test", c.dataset.sizes.test);
    }
    if (d.contains("shift")) {
      read_key(d["shift"], "mean_shift_scale", c.dataset.shift.mean_shift_scale);
      read_key(d["shift"], "rotation_angle", c.dataset.shift.rotation_angle);
    }
  }
  if (j.contains("split")) {
    read_key(j["split"], "experts", c.split.experts);
    read_key(j["split"], "dirichlet_concentration", c.split.dirichlet_concentration);
    read_key(j["split"], "per_expert_budget", c.split.per_expert_budget);
  }
  if (j.contains("arch")) {
    std::vector<std::size_t> sizes = c.arch.layer_sizes;
    std::string act(to_string(c.arch.activation));
    read_key(j["arch"], "layer_sizes", sizes);
    read_key(j["arch"], "activation", act);
    c.arch = ArchSpec(sizes, parse_activation(act), OutputKind::logits);
  }
  if (j.contains("expert_training")) detail::read_training(j["expert_training"], c.expert_training);
  if (j.contains("finetune")) detail::read_training(j["finetune"], c.finetune);
  if (j.contains("alpha")) {
    const auto& a = j["alpha"];
    read_key(a, "eta", c.alpha.eta);
    read_key(a, "beta1", c.alpha.beta1);
    read_key(a, "beta2", c.alpha.beta2);
    read_key(a, "epsilon", c.alpha.epsilon);
    read_key(a, "steps", c.alpha.steps);
    read_key(a, "batch_size", c.alpha.batch_size);
    if (a.contains("plateau")) {
      const auto& p = a["plateau"];
      read_key(p, "enabled", c.alpha.plateau.enabled);
      read_key(p, "eval_every", c.alpha.plateau.eval_every);
      read_key(p, "patience", c.alpha.plateau.patience);
      read_key(p, "min_delta", c.alpha.plateau.min_delta);
    }
  }
  if (j.contains("spsa")) {
    const auto& s = j["spsa"];
    read_key(s, "mu", c.spsa.mu);
    read_key(s, "m", c.spsa.m);
    read_key(s, "dimension_scaling", c.spsa.dimension_scaling);
    if (s.contains("distribution")) c.spsa.distribution = parse_distribution(s["distribution"].get<std::string>());
  }
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j["methods"]) {
      c.methods.push_back(m.is_number_integer() ? parse_method(std::to_string(m.get<int>()))
                                                : parse_method(m.get<std::string>()));
    }
  }
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json methods = nlohmann::json::array();
  for (auto m : c.methods) methods.push_back(std::string(to_string(m)));
  return {
      {"seeds", c.seeds},
      {"out_dir", c.out_dir},
      {"shared_expert_init", c.shared_expert_init},
      {"identical_experts", c.identical_experts},
      {"target_trained_expert", c.target_trained_expert},
      {"dataset",
       {{"kind", std::string(to_string(c.dataset.kind))},
        {"d_in", c.dataset.d_in},
        {"classes", c.dataset.classes},
        {"class_separation", c.dataset.class_separation},
        {"clusters_per_class", c.dataset.clusters_per_class},
        {"noise", c.dataset.noise},
        {"file_path", c.dataset.file_path},
        {"seed", c.dataset.seed},
        {"sizes",
         {{"source_pool", c.dataset.sizes.source_pool},
          {"alpha", c.dataset.sizes.alpha},
          {"validation", c.dataset.sizes.validation},
          {"finetune", c.dataset.sizes.finetune},
          {"test", c.dataset.sizes.test}}},
        {"shift",
         {{"mean_shift_scale", c.dataset.shift.mean_shift_scale},
          {"rotation_angle", c.dataset.shift.rotation_angle}}}}},
      {"split",
       {{"experts", c.split.experts},
        {"dirichlet_concentration", c.split.dirichlet_concentration},
        {"per_expert_budget", c.split.per_expert_budget}}},
      {"arch", {{"layer_sizes", c.arch.layer_sizes}, {"activation", std::string(to_string(c.arch.activation))}}},
      {"expert_training", detail::training_json(c.expert_training)},
      {"finetune", detail::training_json(c.finetune)},
      {"alpha",
       {{"eta", c.alpha.eta},
        {"beta1", c.alpha.beta1},
        {"beta2", c.alpha.beta2},
        {"epsilon", c.alpha.epsilon},
        {"steps", c.alpha.steps},
        {"batch_size", c.alpha.batch_size},
        {"plateau",
         {{"enabled", c.alpha.plateau.enabled},
          {"eval_every", c.alpha.plateau.eval_every},
          {"patience", c.alpha.plateau.patience},
          {"min_delta", c.alpha.plateau.min_delta}}}}},
      {"spsa",
       {{"mu", c.spsa.mu},
        {"m", c.spsa.m},
        {"dimension_scaling", c.spsa.dimension_scaling},
        {"distribution", std::string(to_string(c.spsa.distribution))}}},
      {"methods", std::move(methods)},
  };
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  try {
    return config_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

struct FinetuneResult {
  ParamVector params;
  RunReport report;
};

/// Full-parameter training from theta_star with alpha fixed. Epoch 0 in the
/// report is the zero-shot prior; test metrics use their own counters.
inline FinetuneResult finetune(const ArchSpec& arch, const ParamVector& theta_star,
                               const Dataset& target_train, const TrainingConfig& cfg,
                               std::uint64_t seed, const Dataset& test_set) {
  const auto start = std::chrono::steady_clock::now();
  FinetuneResult out;
  out.report.phase = "finetune";
  out.report.config = detail::training_json(cfg);
  out.report.config["seed"] = seed;
  PassCounters eval_counters;
  PassCounters& counters = out.report.counters;
  std::vector<EpochRecord> epochs;
  auto record = [&](std::size_t epoch, const ParamVector& p) {
    const Metrics m = evaluate(arch, p, test_set, eval_counters);
    epochs.push_back({epoch, 0.0, m.accuracy, m.loss, counters, detail::elapsed_ms(start)});
  };
  record(0, theta_star);
  auto trained = fit(arch, theta_star, target_train, cfg.epochs, cfg.batch_size, cfg.adam, seed,
                     counters, record);
  for (std::size_t e = 0; e < epochs.size(); ++e) epochs[e].train_loss = trained.epoch_loss[e];
  out.report.epochs = std::move(epochs);
  out.params = std::move(trained.params);
  out.report.phase_wall_ms["finetune"] = detail::elapsed_ms(start);
  return out;
}

struct MethodOutcome {
  MixMethod method = MixMethod::glue;
  std::vector<double> alpha;
  Metrics zero_shot;
  Metrics final_metrics;
  RunReport alpha_report;
  RunReport finetune_report;
  std::vector<double> proxy_accuracies;
  bool degenerate = false;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::vector<Metrics> expert_test;
  std::vector<ExpertSplit> splits;
  std::vector<MethodOutcome> methods;
};

struct ExperimentBundle {
  std::vector<SeedOutcome> seeds;
  nlohmann::json summary;
};

struct SeedArtifacts {
  SynthData data;
  std::vector<ExpertSplit> splits;
  ExpertBank bank;
};

// Seeds derived from one run seed.
namespace seeds {
inline std::uint64_t split(std::uint64_t s) { return derive_seed(s, 10); }
inline std::uint64_t init(std::uint64_t s) { return derive_seed(s, 11); }
inline std::uint64_t expert(std::uint64_t s, std::size_t i) { return derive_seed(s, 20 + i); }
inline std::uint64_t schedule(std::uint64_t s) { return derive_seed(s, 1000); }
inline std::uint64_t directions(std::uint64_t s) { return derive_seed(s, 1001); }
inline std::uint64_t finetune(std::uint64_t s) { return derive_seed(s, 1002); }
}  // namespace seeds

template <class Fn>
auto run_phase(const char* phase, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (Error& e) {
    e.tag_phase(phase);
    throw;
  }
}

/// Data, splits and trained experts for one run seed.
inline SeedArtifacts prepare_experts(const ExperimentConfig& cfg, std::uint64_t seed) {
  DatasetSpec ds = cfg.dataset;
  if (cfg.target_trained_expert) ds.sizes.target_expert = cfg.split.per_expert_budget;
  SynthData data = run_phase("synth", [&] { return synth_dataset(ds); });
  auto splits = run_phase("split", [&] {
    std::mt19937_64 rng(seeds::split(seed));
    return dirichlet_split(data.source_pool, cfg.split, rng);
  });
  std::vector<ParamVector> experts;
  std::vector<ExpertMeta> meta;
  run_phase("train-experts", [&] {
    for (std::size_t i = 0; i < splits.size(); ++i) {
      const Dataset& train = (cfg.target_trained_expert && i == 0) ? data.target_expert_pool : splits[i].data;
      if (cfg.identical_experts && i > 0) {
        experts.push_back(experts.front());
        meta.push_back(meta.front());
        continue;
      }
      const auto init = init_params(cfg.arch, cfg.shared_expert_init ? seeds::init(seed) : seeds::expert(seed, i) ^ 1);
      experts.push_back(train_expert(cfg.arch, init, train, cfg.expert_training.epochs,
                                     cfg.expert_training.batch_size, cfg.expert_training.adam,
                                     seeds::expert(seed, i)));
      meta.push_back({train.size(), std::nullopt});
    }
  });
  return {std::move(data), std::move(splits), ExpertBank(cfg.arch, std::move(experts), std::move(meta))};
}

/// Mixture coefficients by one method. Configs 3 and 4 share the minibatch
/// schedule seed.
inline MethodOutcome choose_alpha(const ExperimentConfig& cfg, std::uint64_t seed, MixMethod method,
                                  const ExpertBank& bank, const SynthData& data) {
  MethodOutcome out;
  out.method = method;
  const Dataset* validation = cfg.alpha.plateau.enabled ? &data.validation : nullptr;
  switch (method) {
    case MixMethod::data_size:
      out.alpha = alpha_data_size(bank);
      break;
    case MixMethod::proxy: {
      PassCounters c;
      auto w = alpha_proxy_accuracy(bank, data.validation, c);
      out.alpha = std::move(w.alpha);
      out.proxy_accuracies = std::move(w.accuracies);
      out.degenerate = w.degenerate;
      break;
    }
    case MixMethod::full_grad: {
      auto r = learn_alpha_fullgrad(bank, data.alpha_set, cfg.alpha, seeds::schedule(seed), validation);
      out.alpha = std::move(r.alpha);
      out.alpha_report = std::move(r.report);
      break;
    }
    case MixMethod::glue: {
      SpsaConfig spsa = cfg.spsa;
      spsa.seed = seeds::directions(seed);
      auto r = learn_alpha_glue(bank, data.alpha_set, spsa, cfg.alpha, seeds::schedule(seed), validation);
      out.alpha = std::move(r.alpha);
      out.alpha_report = std::move(r.report);
      break;
    }
  }
  if (out.degenerate) out.alpha_report.flags.push_back("proxy_all_zero_uniform_fallback");
  return out;
}

namespace detail {

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline nlohmann::json summarize(const ExperimentConfig& cfg, const std::vector<SeedOutcome>& runs) {
  nlohmann::json methods = nlohmann::json::object();
  for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
    std::vector<double> zero, fin, step_ms;
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& run : runs) {
      const auto& m = run.methods[k];
      zero.push_back(m.zero_shot.accuracy);
      fin.push_back(m.final_metrics.accuracy);
      if (!m.alpha_report.steps.empty()) {
        step_ms.push_back(m.alpha_report.phase_wall_ms.begin()->second /
                          static_cast<double>(m.alpha_report.steps.size()));
      }
      per_seed.push_back({{"seed", run.seed},
                          {"alpha", m.alpha},
                          {"zero_shot_accuracy", m.zero_shot.accuracy},
                          {"zero_shot_loss", m.zero_shot.loss},
                          {"final_accuracy", m.final_metrics.accuracy},
                          {"final_loss", m.final_metrics.loss},
                          {"alpha_counters", to_json(m.alpha_report.counters)},
                          {"flags", m.alpha_report.flags}});
    }
    nlohmann::json entry = {{"config_id", static_cast<int>(cfg.methods[k])},
                            {"mean_zero_shot_accuracy", mean(zero)},
                            {"mean_final_accuracy", mean(fin)},
                            {"per_seed", std::move(per_seed)}};
    if (!step_ms.empty()) entry["mean_alpha_step_ms"] = mean(step_ms);
    methods[std::string(to_string(cfg.methods[k]))] = std::move(entry);
  }
  return {{"methods", std::move(methods)}, {"seeds", cfg.seeds}};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw DataError("cannot write '" + p.string() + "'");
  os << text;
}

}  // namespace detail

/// Runs the whole protocol for every configured seed. With an out_dir it
/// writes checkpoints, curves.csv, summary.json/.csv and status.json; a failed
/// run leaves status.json marked incomplete with the failing phase.
inline ExperimentBundle run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  const bool write = !cfg.out_dir.empty();
  const fs::path root(cfg.out_dir);
  if (write) {
    fs::create_directories(root);
    detail::write_text(root / "config.json", to_json(cfg).dump(2));
    detail::write_text(root / "status.json", nlohmann::json{{"complete", false}}.dump(2));
  }
  ExperimentBundle bundle;
  try {
    std::ofstream curves;
    if (write) {
      curves.open(root / "curves.csv");
      curves << kCurveCsvHeader << '\n';
    }
    for (const auto seed : cfg.seeds) {
      SeedOutcome run;
      run.seed = seed;
      SeedArtifacts art = prepare_experts(cfg, seed);
      PassCounters eval_counters;
      for (const auto& e : art.bank.experts()) {
        run.expert_test.push_back(evaluate(cfg.arch, e, art.data.test, eval_counters));
      }
      const fs::path seed_dir = root / ("seed_" + std::to_string(seed));
      if (write) {
        run_phase("write", [&] {
          fs::create_directories(seed_dir / "experts");
          for (std::size_t i = 0; i < art.bank.size(); ++i) {
            save_checkpoint((seed_dir / "experts" / ("expert_" + std::to_string(i) + ".glpk")).string(),
                            cfg.arch, art.bank.expert(i),
                            {i, art.bank.meta(i).train_size, std::nullopt, seed});
          }
        });
      }
      for (const auto method : cfg.methods) {
        MethodOutcome m = run_phase("learn-alpha", [&] { return choose_alpha(cfg, seed, method, art.bank, art.data); });
        const ParamVector theta_star = blend(art.bank, m.alpha);
        auto ft = run_phase("finetune", [&] {
          return finetune(cfg.arch, theta_star, art.data.finetune, cfg.finetune, seeds::finetune(seed), art.data.test);
        });
        m.zero_shot = {ft.report.epochs.front().test_accuracy, ft.report.epochs.front().test_loss};
        m.final_metrics = {ft.report.epochs.back().test_accuracy, ft.report.epochs.back().test_loss};
        m.finetune_report = std::move(ft.report);
        if (write) {
          run_phase("write", [&] {
            const int id = static_cast<int>(method);
            const fs::path dir = seed_dir / ("config_" + std::to_string(id));
            fs::create_directories(dir);
            save_checkpoint((dir / "theta_star.glpk").string(), cfg.arch, theta_star, {std::nullopt, 0, std::nullopt, seed});
            save_checkpoint((dir / "finetuned.glpk").string(), cfg.arch, ft.params, {std::nullopt, 0, std::nullopt, seed});
            write_curve_rows(curves, id, seed, m.alpha_report);
            write_curve_rows(curves, id, seed, m.finetune_report);
            detail::write_text(dir / "alpha_report.json", to_json(m.alpha_report).dump(2));
            detail::write_text(dir / "finetune_report.json", to_json(m.finetune_report).dump(2));
          });
        }
        run.methods.push_back(std::move(m));
      }
      run.splits = std::move(art.splits);
      bundle.seeds.push_back(std::move(run));
    }
    bundle.summary = detail::summarize(cfg, bundle.seeds);
    if (write) {
      detail::write_text(root / "summary.json", bundle.summary.dump(2));
      std::ostringstream table;
      table << "method,config_id,mean_zero_shot_accuracy,mean_final_accuracy\n";
      for (auto& [name, entry] : bundle.summary["methods"].items()) {
        table << name << ',' << entry["config_id"] << ',' << entry["mean_zero_shot_accuracy"] << ','
              << entry["mean_final_accuracy"] << '\n';
      }
      detail::write_text(root / "summary.csv", table.str());
      detail::write_text(root / "status.json", nlohmann::json{{"complete", true}}.dump(2));
    }
  } catch (const Error& e) {
    if (write) {
      detail::write_text(root / "status.json",
                         nlohmann::json{{"complete", false}, {"failed_phase", e.phase()}, {"error", e.what()}}.dump(2));
    }
    throw;
  }
  return bundle;
}

}  // namespace glue
