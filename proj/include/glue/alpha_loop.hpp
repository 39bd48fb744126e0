#pragma once
// Shared minibatch loop for learning mixture coefficients in beta-space.
// The gradient source (two-point probes or backprop) is a callable.

#include <chrono>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "glue/blend.hpp"
#include "glue/report.hpp"
#include "glue/train.hpp"

namespace glue {

/// Optional early stop on validation loss.
struct PlateauConfig {
  bool enabled = false;
  std::size_t eval_every = 25;
  std::size_t patience = 5;
  double min_delta = 1e-4;
};

/// Adam settings for the mixture coefficients.
struct OptimConfig {
  double eta = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  std::size_t steps = 500;
  std::size_t batch_size = 64;
  PlateauConfig plateau;

  AdamConfig adam() const { return {eta, beta1, beta2, epsilon}; }

  void validate() const {
    adam().validate();
    if (steps == 0) throw ConfigError("step budget must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
  }
};

struct AlphaResult {
  std::vector<double> alpha;
  ParamVector theta;
  RunReport report;
};

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

/// `step_gradient(state, batch, counters)` returns {grad_beta, train_loss}.
template <class StepGradient>
AlphaResult run_alpha_loop(const ExpertBank& bank, const Dataset& train, const OptimConfig& optim,
                           std::uint64_t seed, const Dataset* validation, std::string phase,
                           StepGradient&& step_gradient) {
  if (train.empty()) throw ConfigError("alpha-learning set is empty");
  optim.validate();
  const auto start = std::chrono::steady_clock::now();
  const AdamConfig adam = optim.adam();
  const LossKind kind = bank.arch().default_loss();

  MixtureState state = MixtureState::uniform(bank.size());
  MinibatchSchedule schedule(train.size(), optim.batch_size, seed);
  AlphaResult result;
  result.report.phase = std::move(phase);
  result.report.config = {{"eta", optim.eta},           {"beta1", optim.beta1},
                          {"beta2", optim.beta2},       {"epsilon", optim.epsilon},
                          {"steps", optim.steps},       {"batch_size", optim.batch_size},
                          {"seed", seed},               {"plateau", optim.plateau.enabled}};
  PassCounters& counters = result.report.counters;

  // Validation probes run on their own counters so the learning tallies stay exact.
  PassCounters validation_counters;
  ParamVector validation_buffer;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t t = 1; t <= optim.steps; ++t) {
    const std::uint64_t epoch = schedule.epoch();
    const Batch batch = gather(train, schedule.next());
    auto [grad_beta, loss] = step_gradient(state, batch, counters);
    state.adam_step(grad_beta, adam);
    result.report.steps.push_back(
        {t, epoch, loss, state.alpha(), counters, elapsed_ms(start)});

    if (optim.plateau.enabled && validation && t % optim.plateau.eval_every == 0) {
      blend_into(bank, state.alpha(), validation_buffer, validation_counters);
      const double v =
          loss_at(bank.arch(), validation_buffer, *validation, kind, validation_counters);
      if (v < best - optim.plateau.min_delta) {
        best = v;
        stale = 0;
      } else if (++stale >= optim.plateau.patience) {
        result.report.flags.push_back("plateau_stop_at_step_" + std::to_string(t));
        break;
      }
    }
  }

  result.alpha = state.alpha();
  PassCounters scratch;
  result.theta = blend(bank, result.alpha, scratch);
  result.report.phase_wall_ms[result.report.phase] = elapsed_ms(start);
  return result;
}

}  // namespace detail
}  // namespace glue
