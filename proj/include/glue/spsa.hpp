#pragma once
// Two-point SPSA estimation of the mixture gradient and the forward-only
// learning loop built on it. Nothing here calls the backward path.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "glue/alpha_loop.hpp"
#include "glue/blend.hpp"

namespace glue {

enum class DirectionDistribution { gaussian_sphere, rademacher_normalized };

inline std::string_view to_string(DirectionDistribution d) {
  return d == DirectionDistribution::gaussian_sphere ? "gaussian_sphere" : "rademacher_normalized";
}

inline DirectionDistribution parse_distribution(std::string_view s) {
  if (s == "gaussian_sphere") return DirectionDistribution::gaussian_sphere;
  if (s == "rademacher_normalized") return DirectionDistribution::rademacher_normalized;
  throw ConfigError("unknown direction distribution '" + std::string(s) + "'");
}

struct SpsaConfig {
  double mu = 1e-2;
  std::size_t m = 1;
  DirectionDistribution distribution = DirectionDistribution::gaussian_sphere;
  std::uint64_t seed = 0;
  /// Multiply the estimate by K, which makes the unit-sphere estimator unbiased.
  bool dimension_scaling = false;

  void validate() const {
    if (!(mu > 0.0) || !std::isfinite(mu)) throw ConfigError("perturbation radius mu must be > 0");
    if (m == 0) throw ConfigError("direction count m must be >= 1");
  }
};

/// Unit-norm random direction in R^K.
template <class Rng>
std::vector<double> sample_direction(std::size_t k, Rng& rng, DirectionDistribution dist) {
  if (k == 0) throw ConfigError("direction dimension must be >= 1");
  std::vector<double> u(k);
  if (dist == DirectionDistribution::rademacher_normalized) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(k));
    std::bernoulli_distribution coin(0.5);
    for (auto& x : u) x = coin(rng) ? scale : -scale;
    return u;
  }
  std::normal_distribution<double> normal;
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : u) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : u) x /= norm;
  return u;
}

/// (L+ - L-) / (2 mu).
inline double directional_diff(double loss_plus, double loss_minus, double mu) {
  if (!(mu > 0.0)) throw ConfigError("perturbation radius mu must be > 0");
  return (loss_plus - loss_minus) / (2.0 * mu);
}

struct ProbePair {
  double plus = 0.0;
  double minus = 0.0;
};

/// f(x + mu u) and f(x - mu u) for an arbitrary objective over R^K.
template <class Objective>
ProbePair probe_pair(Objective&& f, std::span<const double> x, std::span<const double> u,
                     double mu) {
  std::vector<double> z(x.begin(), x.end());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + mu * u[i];
  const double plus = f(std::span<const double>(z));
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - mu * u[i];
  const double minus = f(std::span<const double>(z));
  return {plus, minus};
}

/// d(x; u) * u for one fixed direction.
template <class Objective>
std::vector<double> directional_estimate(Objective&& f, std::span<const double> x,
                                         std::span<const double> u, double mu) {
  const auto probes = probe_pair(f, x, u, mu);
  const double d = directional_diff(probes.plus, probes.minus, mu);
  std::vector<double> g(u.begin(), u.end());
  for (auto& v : g) v *= d;
  return g;
}

struct GradientEstimate {
  std::vector<double> gradient;
  /// Mean of (L+ + L-)/2 over the m probe pairs.
  double mean_loss = 0.0;
};

/// (1/m) sum_r d(x; u_r) u_r with fresh directions, times K if dimension_scaling.
template <class Objective, class Rng>
GradientEstimate estimate_gradient(Objective&& f, std::span<const double> x,
                                   const SpsaConfig& spsa, Rng& rng) {
  spsa.validate();
  const std::size_t k = x.size();
  GradientEstimate est{std::vector<double>(k, 0.0), 0.0};
  for (std::size_t r = 0; r < spsa.m; ++r) {
    const auto u = sample_direction(k, rng, spsa.distribution);
    const auto probes = probe_pair(f, x, u, spsa.mu);
    const double d = directional_diff(probes.plus, probes.minus, spsa.mu);
    for (std::size_t i = 0; i < k; ++i) est.gradient[i] += d * u[i];
    est.mean_loss += 0.5 * (probes.plus + probes.minus);
  }
  const double scale = (spsa.dimension_scaling ? static_cast<double>(k) : 1.0) /
                       static_cast<double>(spsa.m);
  for (auto& g : est.gradient) g *= scale;
  est.mean_loss /= static_cast<double>(spsa.m);
  return est;
}

/// Loss of the blended network at softmax(beta) on one batch, as an objective
/// over beta. Both probes of a step reuse one blend buffer.
class BlendedLoss {
 public:
  BlendedLoss(const ExpertBank& bank, const Batch& batch, LossKind kind, PassCounters& counters)
      : bank_(bank), batch_(batch), kind_(kind), counters_(counters) {
    check_loss_compat(bank.arch(), kind);
  }

  double operator()(std::span<const double> beta) {
    blend_into(bank_, softmax_map(beta), buffer_, counters_);
    return loss_at(bank_.arch(), buffer_, batch_, kind_, counters_);
  }

 private:
  const ExpertBank& bank_;
  const Batch& batch_;
  LossKind kind_;
  PassCounters& counters_;
  ParamVector buffer_;
};

/// Losses at blend(softmax(beta +- mu u)): two blends, two forwards, no backward.
inline ProbePair two_point_eval(const ExpertBank& bank, std::span<const double> beta,
                                std::span<const double> u, double mu, const Batch& batch,
                                LossKind kind, PassCounters& counters) {
  if (beta.size() != bank.size() || u.size() != bank.size()) {
    throw ShapeError("beta / direction length != number of experts");
  }
  BlendedLoss objective(bank, batch, kind, counters);
  return probe_pair(objective, beta, u, mu);
}

/// Two-point estimate of the beta-gradient on one batch; 2m forwards.
template <class Rng>
GradientEstimate estimate_gradient(const ExpertBank& bank, std::span<const double> beta,
                                   const Batch& batch, const SpsaConfig& spsa, Rng& rng,
                                   LossKind kind, PassCounters& counters) {
  if (beta.size() != bank.size()) throw ShapeError("beta length != number of experts");
  BlendedLoss objective(bank, batch, kind, counters);
  return estimate_gradient(objective, beta, spsa, rng);
}

/// One forward-only Adam step on beta.
template <class Rng>
MixtureState spsa_step(MixtureState state, const ExpertBank& bank, const Batch& batch,
                       const SpsaConfig& spsa, const OptimConfig& optim, Rng& rng,
                       PassCounters& counters, double* loss_out = nullptr) {
  const auto est =
      estimate_gradient(bank, state.beta(), batch, spsa, rng, bank.arch().default_loss(), counters);
  state.adam_step(est.gradient, optim.adam());
  if (loss_out) *loss_out = est.mean_loss;
  return state;
}

/// Learns alpha from alpha = 1/K with two-point probes. Minibatch order is
/// seeded by `seed`; directions are drawn from a stream seeded by spsa.seed.
/// The reported per-step train loss is the probe-pair mean, so the forward
/// counter grows by exactly 2m per step.
inline AlphaResult learn_alpha_glue(const ExpertBank& bank, const Dataset& train,
                                    const SpsaConfig& spsa, const OptimConfig& optim,
                                    std::uint64_t seed, const Dataset* validation = nullptr) {
  spsa.validate();
  std::mt19937_64 directions(spsa.seed);
  const LossKind kind = bank.arch().default_loss();
  auto result = detail::run_alpha_loop(
      bank, train, optim, seed, validation, "glue",
      [&](const MixtureState& state, const Batch& batch, PassCounters& counters) {
        auto est = estimate_gradient(bank, state.beta(), batch, spsa, directions, kind, counters);
        return std::make_pair(std::move(est.gradient), est.mean_loss);
      });
  result.report.config["mu"] = spsa.mu;
  result.report.config["m"] = spsa.m;
  result.report.config["distribution"] = std::string(to_string(spsa.distribution));
  result.report.config["spsa_seed"] = spsa.seed;
  result.report.config["dimension_scaling"] = spsa.dimension_scaling;
  return result;
}

}  // namespace glue
