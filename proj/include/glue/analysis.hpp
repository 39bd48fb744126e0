#pragma once
// Per-step cost model and Monte-Carlo checks of the two-point estimator's
// moments, variance bound and O(mu^2) bias.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "glue/baselines.hpp"
#include "glue/spsa.hpp"

namespace glue {

/// Forward cost F, backward/forward ratio gamma, blend cost C_mix and the
/// K-inner-product cost D_alpha, all in the same unit.
struct CostModel {
  double forward = 1.0;
  double gamma = 2.0;
  double c_mix = 0.0;
  double d_alpha = 0.0;

  void validate() const {
    if (forward < 0.0 || c_mix < 0.0 || d_alpha < 0.0) throw ConfigError("costs must be >= 0");
    if (gamma < 1.0) throw ConfigError("gamma must be >= 1");
  }
};

struct CostBreakdown {
  double t_full = 0.0;
  double t_spsa = 0.0;
  double gap = 0.0;
};

/// T_full = (1+gamma)F + C_mix + D_alpha, T_spsa = 2(F + C_mix),
/// gap = (gamma-1)F - C_mix + D_alpha.
inline CostBreakdown cost_model(const CostModel& cm) {
  cm.validate();
  CostBreakdown out;
  out.t_full = (1.0 + cm.gamma) * cm.forward + cm.c_mix + cm.d_alpha;
  out.t_spsa = 2.0 * (cm.forward + cm.c_mix);
  out.gap = (cm.gamma - 1.0) * cm.forward - cm.c_mix + cm.d_alpha;
  return out;
}

/// Blend cost at which one probe pair costs as much as a full-gradient step.
inline double break_even_c_mix(const CostModel& cm) {
  return (cm.gamma - 1.0) * cm.forward + cm.d_alpha;
}

/// Wall time of a workload with the given operation counts.
struct TimingSample {
  PassCounters counts;
  double seconds = 0.0;
};

/// Least-squares unit costs (forward, backward, blend, inner product) from
/// timed workloads. D_alpha is reported for `k` inner products.
inline CostModel fit_cost_model(std::span<const TimingSample> samples, std::size_t k) {
  if (samples.size() < 4) throw ConfigError("cost fit needs at least 4 timing samples");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(samples.size()), 4);
  Eigen::VectorXd b(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& c = samples[i].counts;
    const auto r = static_cast<Eigen::Index>(i);
    a(r, 0) = static_cast<double>(c.forwards);
    a(r, 1) = static_cast<double>(c.backwards);
    a(r, 2) = static_cast<double>(c.blends);
    a(r, 3) = static_cast<double>(c.inner_products);
    b(r) = samples[i].seconds;
  }
  const Eigen::VectorXd x = a.colPivHouseholderQr().solve(b);
  CostModel cm;
  cm.forward = std::max(x(0), 0.0);
  cm.gamma = cm.forward > 0.0 ? std::max(x(1) / cm.forward, 1.0) : 1.0;
  cm.c_mix = std::max(x(2), 0.0);
  cm.d_alpha = std::max(x(3), 0.0) * static_cast<double>(k);
  return cm;
}

/// Times forward, backward, blend and inner-product workloads plus whole
/// probe-pair and full-gradient steps on `batch`, `reps` times each.
inline std::vector<TimingSample> measure_costs(const ExpertBank& bank, const Batch& batch,
                                               std::size_t reps) {
  using clock = std::chrono::steady_clock;
  const LossKind kind = bank.arch().default_loss();
  const auto alpha = MixtureState::uniform(bank.size()).alpha();
  const ParamVector theta = blend(bank, alpha);
  std::vector<TimingSample> out;
  auto time = [&](auto&& body) {
    PassCounters c;
    const auto t0 = clock::now();
    for (std::size_t r = 0; r < reps; ++r) body(c);
    out.push_back({c, std::chrono::duration<double>(clock::now() - t0).count()});
  };
  time([&](PassCounters& c) { (void)forward(bank.arch(), theta, batch, c); });
  time([&](PassCounters& c) { (void)grad_params(bank.arch(), theta, batch, kind, c); });
  ParamVector buffer;
  time([&](PassCounters& c) { blend_into(bank, alpha, buffer, c); });
  time([&](PassCounters& c) { (void)expert_inner_products(bank, theta.values, c); });
  SpsaConfig spsa;
  std::mt19937_64 rng(7);
  time([&](PassCounters& c) {
    (void)estimate_gradient(bank, MixtureState::uniform(bank.size()).beta(), batch, spsa, rng,
                            kind, c);
  });
  time([&](PassCounters& c) { (void)grad_alpha_full(bank, alpha, batch, kind, c); });
  return out;
}

/// ((K-1)/(mK)) sigma_max^2 ||grad_theta L||^2. The O(mu^2) remainder is not
/// included; `mu` only documents the radius the bound is quoted at.
inline double variance_bound(std::size_t k, std::size_t m, double sigma_max,
                             double grad_theta_norm, [[maybe_unused]] double mu = 0.0) {
  if (k == 0 || m == 0) throw ConfigError("variance bound needs K >= 1 and m >= 1");
  const double kk = static_cast<double>(k);
  return (kk - 1.0) / (static_cast<double>(m) * kk) * sigma_max * sigma_max * grad_theta_norm *
         grad_theta_norm;
}

/// First-order E||g_bar - g||^2 / ||g||^2 for unit isotropic directions. Without
/// dimension scaling E[g_hat] = g/K, so the mean-squared error carries a bias
/// term; with scaling the estimator is unbiased.
inline double estimator_mse_factor(std::size_t k, std::size_t m, bool dimension_scaling) {
  const double kk = static_cast<double>(k);
  const double mm = static_cast<double>(m);
  if (dimension_scaling) return (kk - 1.0) / mm;
  const double bias = (kk - 1.0) / kk;
  return bias * bias + (kk - 1.0) / (mm * kk * kk);
}

struct VarianceEstimate {
  double empirical_mse = 0.0;
  /// ((K-1)/(mK)) ||g||^2.
  double reference_mse = 0.0;
  /// estimator_mse_factor(K, m, scaling) ||g||^2.
  double exact_mse = 0.0;
  double grad_norm_sq = 0.0;
  std::vector<double> mean_estimate;
  std::size_t samples = 0;
};

/// Monte-Carlo E||g_bar - g||^2 of the estimator on `f` at `x`, against the
/// exact gradient `g`.
template <class Objective, class Rng>
VarianceEstimate mc_variance(Objective&& f, std::span<const double> x, std::span<const double> g,
                             const SpsaConfig& spsa, std::size_t n_samples, Rng& rng) {
  if (n_samples < 1000) throw ConfigError("mc_variance needs at least 1000 samples");
  if (g.size() != x.size()) throw ShapeError("gradient length != point length");
  const std::size_t k = x.size();
  VarianceEstimate out;
  out.samples = n_samples;
  out.mean_estimate.assign(k, 0.0);
  for (double v : g) out.grad_norm_sq += v * v;
  double sum_sq = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const auto est = estimate_gradient(f, x, spsa, rng);
    double e = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double diff = est.gradient[i] - g[i];
      e += diff * diff;
      out.mean_estimate[i] += est.gradient[i];
    }
    sum_sq += e;
  }
  const double n = static_cast<double>(n_samples);
  out.empirical_mse = sum_sq / n;
  for (auto& v : out.mean_estimate) v /= n;
  const double kk = static_cast<double>(k);
  out.reference_mse = (kk - 1.0) / (static_cast<double>(spsa.m) * kk) * out.grad_norm_sq;
  out.exact_mse = estimator_mse_factor(k, spsa.m, spsa.dimension_scaling) * out.grad_norm_sq;
  return out;
}

struct BankVarianceEstimate {
  VarianceEstimate estimate;
  std::vector<double> exact_grad_beta;
  double grad_theta_norm = 0.0;
  double sigma_max = 0.0;
  /// variance_bound(K, m, sigma_max, ||grad_theta L||, mu).
  double bound = 0.0;
};

/// Estimator MSE in beta-space on a blended network, with the exact
/// beta-gradient from backprop as reference.
template <class Rng>
BankVarianceEstimate mc_variance(const ExpertBank& bank, std::span<const double> beta,
                                 const Batch& batch, const SpsaConfig& spsa,
                                 std::size_t n_samples, Rng& rng) {
  const LossKind kind = bank.arch().default_loss();
  BankVarianceEstimate out;
  PassCounters counters;
  const auto alpha = softmax_map(beta);
  const ParamVector theta = blend(bank, alpha, counters);
  const ParamVector grad_theta = grad_params(bank.arch(), theta, batch, kind, counters);
  double norm_sq = 0.0;
  for (double v : grad_theta.values) norm_sq += v * v;
  out.grad_theta_norm = std::sqrt(norm_sq);
  out.exact_grad_beta =
      softmax_pullback(alpha, expert_inner_products(bank, grad_theta.values, counters));
  out.sigma_max = sigma_max(bank);
  out.bound = variance_bound(bank.size(), spsa.m, out.sigma_max, out.grad_theta_norm, spsa.mu);
  BlendedLoss objective(bank, batch, kind, counters);
  out.estimate = mc_variance(objective, beta, out.exact_grad_beta, spsa, n_samples, rng);
  return out;
}

struct BiasFit {
  std::vector<double> mus;
  /// Mean |d(mu) - g^T u| over the sampled directions, per mu.
  std::vector<double> errors;
  /// Log-log least-squares slope; NaN when exact.
  double slope = std::numeric_limits<double>::quiet_NaN();
  /// Every error is below 1e-12: the symmetric difference is exact here.
  bool exact = false;
};

/// Bias order of the symmetric difference: for each mu, the mean over
/// `n_directions` fixed directions of |d(mu) - g^T u|, then a log-log fit.
template <class Objective, class Rng>
BiasFit bias_slope(Objective&& f, std::span<const double> x, std::span<const double> g,
                   std::span<const double> mus, std::size_t n_directions, Rng& rng,
                   DirectionDistribution dist = DirectionDistribution::gaussian_sphere) {
  if (mus.size() < 3) throw ConfigError("bias fit needs at least 3 radii");
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (double mu : mus) {
    if (!(mu > 0.0)) throw ConfigError("radii must be positive");
    lo = std::min(lo, mu);
    hi = std::max(hi, mu);
  }
  if (hi / lo < 100.0 * (1.0 - 1e-9)) throw ConfigError("radii must span at least two decades");
  if (n_directions == 0) throw ConfigError("need at least one direction");

  std::vector<std::vector<double>> dirs;
  for (std::size_t r = 0; r < n_directions; ++r) dirs.push_back(sample_direction(x.size(), rng, dist));

  BiasFit fit;
  fit.mus.assign(mus.begin(), mus.end());
  for (double mu : mus) {
    double err = 0.0;
    for (const auto& u : dirs) {
      const auto p = probe_pair(f, x, u, mu);
      double gu = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) gu += g[i] * u[i];
      err += std::abs(directional_diff(p.plus, p.minus, mu) - gu);
    }
    fit.errors.push_back(err / static_cast<double>(dirs.size()));
  }
  fit.exact = std::all_of(fit.errors.begin(), fit.errors.end(), [](double e) { return e < 1e-12; });
  if (fit.exact) return fit;

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(mus.size());
  for (std::size_t i = 0; i < mus.size(); ++i) {
    const double lx = std::log(fit.mus[i]);
    const double ly = std::log(std::max(fit.errors[i], std::numeric_limits<double>::min()));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return fit;
}

}  // namespace glue
