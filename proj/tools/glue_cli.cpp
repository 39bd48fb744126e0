// Command-line front end: pipeline stages, the full experiment, and analyses.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "glue/glue.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string data;
  std::optional<double> mu;
  std::optional<std::size_t> m;
  bool dimension_scaling = false;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> epochs;

  std::string data_dir() const { return data.empty() ? out : data; }
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON experiment config");
  cmd->add_option("--seed", o.seed, "run seed (overrides the config's seed list)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--data", o.data, "input directory (defaults to --out)");
  cmd->add_option("--mu", o.mu, "SPSA perturbation radius");
  cmd->add_option("--m", o.m, "SPSA directions per step");
  cmd->add_flag("--dimension-scaling", o.dimension_scaling, "scale the SPSA estimate by K");
  cmd->add_option("--steps", o.steps, "alpha-learning step budget");
  cmd->add_option("--epochs", o.epochs, "training epochs");
}

glue::ExperimentConfig resolve_config(const CommonOptions& o) {
  glue::ExperimentConfig cfg = o.config.empty() ? glue::ExperimentConfig{} : glue::load_config(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  if (o.mu) cfg.spsa.mu = *o.mu;
  if (o.m) cfg.spsa.m = *o.m;
  if (o.dimension_scaling) cfg.spsa.dimension_scaling = true;
  if (o.steps) cfg.alpha.steps = *o.steps;
  return cfg;
}

std::uint64_t run_seed(const glue::ExperimentConfig& cfg) { return cfg.seeds.front(); }

void write_json(const fs::path& p, const json& j) {
  std::ofstream os(p);
  if (!os) throw glue::DataError("cannot write '" + p.string() + "'");
  os << j.dump(2) << '\n';
}

std::vector<glue::ParamVector> load_experts(const fs::path& dir, const glue::ArchSpec& arch,
                                            std::vector<glue::ExpertMeta>& meta) {
  std::vector<glue::ParamVector> experts;
  for (std::size_t i = 0;; ++i) {
    const fs::path p = dir / ("expert_" + std::to_string(i) + ".glpk");
    if (!fs::exists(p)) break;
    auto ck = glue::load_checkpoint(p.string());
    if (!(ck.arch == arch)) throw glue::ConfigError("expert checkpoint architecture differs from config");
    experts.push_back(std::move(ck.params));
    meta.push_back({ck.meta.train_size, ck.meta.proxy_accuracy});
  }
  if (experts.empty()) throw glue::DataError("no expert_<i>.glpk checkpoints in '" + dir.string() + "'");
  return experts;
}

int cmd_synth(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  glue::DatasetSpec spec = cfg.dataset;
  if (o.seed) spec.seed = *o.seed;
  if (cfg.target_trained_expert) spec.sizes.target_expert = cfg.split.per_expert_budget;
  const auto data = glue::synth_dataset(spec);
  fs::create_directories(o.out);
  const fs::path out(o.out);
  glue::write_dataset_csv((out / "source_pool.csv").string(), data.source_pool);
  glue::write_dataset_csv((out / "alpha.csv").string(), data.alpha_set);
  glue::write_dataset_csv((out / "validation.csv").string(), data.validation);
  glue::write_dataset_csv((out / "finetune.csv").string(), data.finetune);
  glue::write_dataset_csv((out / "test.csv").string(), data.test);
  if (!data.target_expert_pool.empty()) {
    glue::write_dataset_csv((out / "target_expert.csv").string(), data.target_expert_pool);
  }
  write_json(out / "dataset.json", glue::to_json(cfg)["dataset"]);
  std::cout << json{{"source_pool", data.source_pool.size()}, {"alpha", data.alpha_set.size()},
                    {"validation", data.validation.size()}, {"finetune", data.finetune.size()},
                    {"test", data.test.size()}}.dump()
            << '\n';
  return 0;
}

int cmd_split(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  const fs::path in(o.data_dir());
  const auto pool = glue::read_dataset_csv((in / "source_pool.csv").string());
  std::mt19937_64 rng(glue::seeds::split(run_seed(cfg)));
  const auto splits = glue::dirichlet_split(pool, cfg.split, rng);
  fs::create_directories(o.out);
  json info = json::array();
  for (std::size_t i = 0; i < splits.size(); ++i) {
    glue::write_dataset_csv((fs::path(o.out) / ("expert_data_" + std::to_string(i) + ".csv")).string(),
                            splits[i].data);
    info.push_back({{"expert", i},
                    {"size", splits[i].data.size()},
                    {"sampled_proportions", splits[i].sampled_proportions},
                    {"realized_proportions", splits[i].realized_proportions},
                    {"retries", splits[i].retries},
                    {"rescaled", splits[i].rescaled}});
  }
  write_json(fs::path(o.out) / "split.json", info);
  std::cout << info.dump() << '\n';
  return 0;
}

int cmd_train_experts(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  if (o.epochs) cfg.expert_training.epochs = *o.epochs;
  const auto seed = run_seed(cfg);
  const fs::path in(o.data_dir());
  fs::create_directories(o.out);
  json info = json::array();
  for (std::size_t i = 0;; ++i) {
    const fs::path p = in / ("expert_data_" + std::to_string(i) + ".csv");
    if (!fs::exists(p)) break;
    const auto train = glue::read_dataset_csv(p.string());
    const auto init = glue::init_params(cfg.arch, cfg.shared_expert_init ? glue::seeds::init(seed)
                                                                         : glue::seeds::expert(seed, i) ^ 1);
    const auto params = glue::train_expert(cfg.arch, init, train, cfg.expert_training.epochs,
                                           cfg.expert_training.batch_size, cfg.expert_training.adam,
                                           glue::seeds::expert(seed, i));
    glue::save_checkpoint((fs::path(o.out) / ("expert_" + std::to_string(i) + ".glpk")).string(), cfg.arch,
                          params, {i, train.size(), std::nullopt, seed});
    info.push_back({{"expert", i}, {"train_size", train.size()}});
  }
  if (info.empty()) throw glue::DataError("no expert_data_<i>.csv files in '" + in.string() + "'");
  std::cout << info.dump() << '\n';
  return 0;
}

int cmd_learn_alpha(const CommonOptions& o, const std::string& method_name, const std::string& experts_dir) {
  auto cfg = resolve_config(o);
  const auto seed = run_seed(cfg);
  const auto method = glue::parse_method(method_name);
  const fs::path in(o.data_dir());
  std::vector<glue::ExpertMeta> meta;
  auto experts = load_experts(experts_dir.empty() ? in : fs::path(experts_dir), cfg.arch, meta);
  const glue::ExpertBank bank(cfg.arch, std::move(experts), std::move(meta));
  glue::SynthData data;
  data.alpha_set = glue::read_dataset_csv((in / "alpha.csv").string());
  data.validation = glue::read_dataset_csv((in / "validation.csv").string());
  auto outcome = glue::choose_alpha(cfg, seed, method, bank, data);
  const auto theta = glue::blend(bank, outcome.alpha);
  fs::create_directories(o.out);
  const fs::path out(o.out);
  glue::save_checkpoint((out / "theta_star.glpk").string(), cfg.arch, theta, {std::nullopt, 0, std::nullopt, seed});
  json result = {{"method", method_name},
                 {"alpha", outcome.alpha},
                 {"counters", glue::to_json(outcome.alpha_report.counters)},
                 {"proxy_accuracies", outcome.proxy_accuracies},
                 {"degenerate", outcome.degenerate}};
  write_json(out / "alpha.json", result);
  if (!outcome.alpha_report.steps.empty()) {
    write_json(out / "alpha_report.json", glue::to_json(outcome.alpha_report));
    std::ofstream csv(out / "alpha_curve.csv");
    csv << glue::kCurveCsvHeader << '\n';
    glue::write_curve_rows(csv, static_cast<int>(method), seed, outcome.alpha_report);
  }
  std::cout << result.dump() << '\n';
  return 0;
}

int cmd_finetune(const CommonOptions& o, const std::string& checkpoint) {
  auto cfg = resolve_config(o);
  if (o.epochs) cfg.finetune.epochs = *o.epochs;
  const auto seed = run_seed(cfg);
  const fs::path in(o.data_dir());
  const auto ck = glue::load_checkpoint(checkpoint.empty() ? (in / "theta_star.glpk").string() : checkpoint);
  const auto train = glue::read_dataset_csv((in / "finetune.csv").string());
  const auto test = glue::read_dataset_csv((in / "test.csv").string());
  auto ft = glue::finetune(ck.arch, ck.params, train, cfg.finetune, glue::seeds::finetune(seed), test);
  fs::create_directories(o.out);
  const fs::path out(o.out);
  glue::save_checkpoint((out / "finetuned.glpk").string(), ck.arch, ft.params, {std::nullopt, 0, std::nullopt, seed});
  write_json(out / "finetune_report.json", glue::to_json(ft.report));
  std::ofstream csv(out / "finetune_curve.csv");
  csv << glue::kCurveCsvHeader << '\n';
  glue::write_curve_rows(csv, 0, seed, ft.report);
  std::cout << json{{"zero_shot_accuracy", ft.report.epochs.front().test_accuracy},
                    {"final_accuracy", ft.report.epochs.back().test_accuracy}}.dump()
            << '\n';
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& dataset) {
  const auto ck = glue::load_checkpoint(checkpoint);
  const auto data = glue::read_dataset_csv(dataset);
  glue::PassCounters counters;
  const auto m = glue::evaluate(ck.arch, ck.params, data, counters);
  std::cout << json{{"accuracy", m.accuracy}, {"loss", m.loss}}.dump() << '\n';
  return 0;
}

int cmd_run(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  if (o.epochs) cfg.finetune.epochs = *o.epochs;
  cfg.out_dir = o.out;
  const auto bundle = glue::run_experiment(cfg);
  std::cout << bundle.summary.dump(2) << '\n';
  return 0;
}

// Small random blended-MLP instance for estimator checks.
struct Instance {
  glue::ExpertBank bank;
  glue::Batch batch;
  std::vector<double> beta;
};

Instance random_instance(std::size_t k, std::uint64_t seed) {
  const glue::ArchSpec arch({6, 8, 3}, glue::Activation::tanh);
  std::vector<glue::ParamVector> experts;
  for (std::size_t i = 0; i < k; ++i) experts.push_back(glue::init_params(arch, glue::derive_seed(seed, i)));
  std::mt19937_64 rng(glue::derive_seed(seed, 99));
  std::normal_distribution<double> normal;
  glue::Batch batch;
  batch.inputs = glue::Matrix(16, 6);
  for (auto& v : batch.inputs.data()) v = normal(rng);
  std::uniform_int_distribution<std::size_t> lab(0, 2);
  for (std::size_t r = 0; r < 16; ++r) batch.labels.push_back(lab(rng));
  std::vector<double> beta(k);
  for (auto& b : beta) b = 0.5 * normal(rng);
  return {glue::ExpertBank(arch, std::move(experts)), std::move(batch), std::move(beta)};
}

json analyze_variance(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  const std::size_t samples = 20000;
  json identity = json::array();
  bool all_pass = true;
  for (auto [k, m] : std::vector<std::pair<std::size_t, std::size_t>>{{2, 1}, {4, 1}, {4, 4}, {8, 1}}) {
    std::vector<double> g(k);
    for (std::size_t i = 0; i < k; ++i) g[i] = 1.0 + 0.25 * static_cast<double>(i % 3);
    auto linear = [&](std::span<const double> z) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * z[i];
      return s;
    };
    glue::SpsaConfig spsa = cfg.spsa;
    spsa.m = m;
    std::mt19937_64 rng(glue::derive_seed(run_seed(cfg), k * 10 + m));
    const std::vector<double> x(k, 0.0);
    const auto est = glue::mc_variance(linear, x, g, spsa, samples, rng);
    const bool pass = std::abs(est.empirical_mse / est.exact_mse - 1.0) <= 0.03;
    all_pass = all_pass && pass;
    identity.push_back({{"K", k}, {"m", m}, {"empirical_mse", est.empirical_mse},
                        {"exact_mse", est.exact_mse}, {"reference_mse", est.reference_mse},
                        {"pass", pass}});
  }
  json bound = json::array();
  std::size_t within = 0;
  const std::size_t instances = 20;
  for (std::size_t s = 0; s < instances; ++s) {
    auto inst = random_instance(4, glue::derive_seed(run_seed(cfg), 500 + s));
    glue::SpsaConfig spsa = cfg.spsa;
    spsa.mu = o.mu.value_or(1e-3);
    std::mt19937_64 rng(glue::derive_seed(run_seed(cfg), 700 + s));
    const auto r = glue::mc_variance(inst.bank, inst.beta, inst.batch, spsa, 2000, rng);
    const bool ok = r.estimate.empirical_mse <= 1.1 * r.bound;
    within += ok;
    bound.push_back({{"instance", s}, {"empirical_mse", r.estimate.empirical_mse}, {"bound", r.bound},
                     {"sigma_max", r.sigma_max}, {"grad_theta_norm", r.grad_theta_norm}, {"pass", ok}});
  }
  const bool bound_pass = static_cast<double>(within) >= 0.95 * static_cast<double>(instances);
  return {{"inputs", {{"samples", samples}, {"instances", instances}, {"mu", o.mu.value_or(1e-3)}}},
          {"outputs", {{"moment_identity", identity}, {"variance_bound", bound}}},
          {"checks", {{"moment_identity", all_pass}, {"variance_bound_95pct", bound_pass}}}};
}

json analyze_cost(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  std::vector<glue::ParamVector> experts;
  std::vector<glue::ExpertMeta> meta;
  if (!o.data.empty() && fs::exists(fs::path(o.data) / "expert_0.glpk")) {
    experts = load_experts(o.data, cfg.arch, meta);
  } else {
    for (std::size_t i = 0; i < cfg.split.experts; ++i) {
      experts.push_back(glue::init_params(cfg.arch, glue::derive_seed(run_seed(cfg), i)));
    }
  }
  const glue::ExpertBank bank(cfg.arch, std::move(experts), std::move(meta));
  glue::DatasetSpec spec = cfg.dataset;
  const auto data = glue::synth_dataset(spec);
  std::vector<std::size_t> idx(std::min(cfg.alpha.batch_size, data.alpha_set.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto batch = glue::gather(data.alpha_set, idx);
  const std::size_t reps = o.steps.value_or(300);
  const auto samples = glue::measure_costs(bank, batch, reps);
  const auto fitted = glue::fit_cost_model(samples, bank.size());
  const auto model = glue::cost_model(fitted);
  const double spsa_step = samples[4].seconds / static_cast<double>(reps);
  const double full_step = samples[5].seconds / static_cast<double>(reps);
  const bool sign_match = (model.gap > 0.0) == (full_step - spsa_step > 0.0);
  return {{"inputs", {{"reps", reps}, {"K", bank.size()}, {"param_count", bank.param_count()}, {"batch", batch.size()}}},
          {"outputs",
           {{"fitted", {{"F", fitted.forward}, {"gamma", fitted.gamma}, {"C_mix", fitted.c_mix}, {"D_alpha", fitted.d_alpha}}},
            {"T_full", model.t_full},
            {"T_spsa", model.t_spsa},
            {"gap", model.gap},
            {"measured_full_step_s", full_step},
            {"measured_spsa_step_s", spsa_step}}},
          {"checks", {{"gap_sign_matches_measurement", sign_match}}}};
}

json analyze_bias(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  std::mt19937_64 rng(run_seed(cfg));
  const std::vector<double> mus{1e-1, 5e-2, 1e-2, 5e-3, 1e-3};
  const std::vector<double> one{1.0};
  auto quartic = [](std::span<const double> z) { return std::pow(z[0], 4); };
  auto quadratic = [](std::span<const double> z) { return z[0] * z[0]; };
  const auto q4 = glue::bias_slope(quartic, one, std::vector<double>{4.0}, mus, 1, rng);
  const auto q2 = glue::bias_slope(quadratic, one, std::vector<double>{2.0}, mus, 1, rng);
  const bool slope_ok = q4.slope >= 1.8 && q4.slope <= 2.2;
  return {{"inputs", {{"mus", mus}}},
          {"outputs",
           {{"quartic", {{"errors", q4.errors}, {"slope", q4.slope}}},
            {"quadratic", {{"errors", q2.errors}, {"exact", q2.exact}}}}},
          {"checks", {{"quartic_slope_in_1.8_2.2", slope_ok}, {"quadratic_exact", q2.exact}}}};
}

int cmd_analyze(const CommonOptions& o, const std::string& what) {
  json result;
  if (what == "variance") result = analyze_variance(o);
  else if (what == "cost") result = analyze_cost(o);
  else if (what == "bias") result = analyze_bias(o);
  else throw glue::ConfigError("unknown analysis '" + what + "'");
  if (!o.out.empty() && o.out != ".") {
    fs::create_directories(o.out);
    write_json(fs::path(o.out) / ("analyze_" + what + ".json"), result);
  }
  std::cout << result.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn convex mixtures of pretrained experts with two-point SPSA"};
  app.require_subcommand(1);

  CommonOptions synth_o, split_o, train_o, learn_o, ft_o, run_o, analyze_o;
  auto* synth = app.add_subcommand("synth", "generate source/target datasets as CSV");
  add_common(synth, synth_o);
  auto* split = app.add_subcommand("split", "Dirichlet non-IID split of the source pool");
  add_common(split, split_o);
  auto* train = app.add_subcommand("train-experts", "train one expert per split");
  add_common(train, train_o);

  auto* learn = app.add_subcommand("learn-alpha", "determine mixture coefficients");
  add_common(learn, learn_o);
  std::string method = "glue";
  std::string experts_dir;
  learn->add_option("--method", method, "data-size | proxy | full-grad | glue")
      ->check(CLI::IsMember({"data-size", "proxy", "full-grad", "glue"}));
  learn->add_option("--experts", experts_dir, "directory of expert_<i>.glpk (defaults to --data)");

  auto* ft = app.add_subcommand("finetune", "fine-tune a blended prior");
  add_common(ft, ft_o);
  std::string ft_checkpoint;
  ft->add_option("--checkpoint", ft_checkpoint, "prior checkpoint (defaults to <data>/theta_star.glpk)");

  auto* eval = app.add_subcommand("evaluate", "accuracy and loss of a checkpoint on a CSV dataset");
  std::string eval_checkpoint, eval_dataset;
  eval->add_option("--checkpoint", eval_checkpoint)->required();
  eval->add_option("--dataset", eval_dataset)->required();

  auto* run = app.add_subcommand("run", "full pipeline over all configured seeds");
  add_common(run, run_o);

  auto* analyze = app.add_subcommand("analyze", "estimator and cost analyses");
  add_common(analyze, analyze_o);
  std::string analysis;
  analyze->add_option("what", analysis, "variance | cost | bias")
      ->required()
      ->check(CLI::IsMember({"variance", "cost", "bias"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(glue::ExitCode::config);
  }

  try {
    if (*synth) return cmd_synth(synth_o);
    if (*split) return cmd_split(split_o);
    if (*train) return cmd_train_experts(train_o);
    if (*learn) return cmd_learn_alpha(learn_o, method, experts_dir);
    if (*ft) return cmd_finetune(ft_o, ft_checkpoint);
    if (*eval) return cmd_evaluate(eval_checkpoint, eval_dataset);
    if (*run) return cmd_run(run_o);
    if (*analyze) return cmd_analyze(analyze_o, analysis);
  } catch (const glue::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(glue::ExitCode::data);
  }
  return 0;
}
