#pragma once
// Heuristic and backprop-based ways of choosing the mixture coefficients:
// data-size weighting, proxy-accuracy weighting and full-gradient learning.

#include <numeric>
#include <vector>

#include "glue/alpha_loop.hpp"
#include "glue/blend.hpp"

namespace glue {

/// alpha_i = n_i / sum_j n_j.
inline std::vector<double> alpha_data_size(const ExpertBank& bank) {
  std::vector<double> alpha(bank.size());
  double total = 0.0;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto n = bank.meta(i).train_size;
    if (n == 0) throw ConfigError("expert " + std::to_string(i) + " has no training-set size");
    alpha[i] = static_cast<double>(n);
    total += alpha[i];
  }
  for (auto& a : alpha) a /= total;
  return alpha;
}

/// alpha_i proportional to given accuracies; uniform when they are all zero.
inline std::vector<double> normalize_accuracies(std::span<const double> acc, bool* degenerate) {
  const double total = std::accumulate(acc.begin(), acc.end(), 0.0);
  std::vector<double> alpha(acc.size());
  const bool zero = !(total > 0.0);
  if (degenerate) *degenerate = zero;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (acc[i] < 0.0) throw ConfigError("negative accuracy");
    alpha[i] = zero ? 1.0 / static_cast<double>(acc.size()) : acc[i] / total;
  }
  return alpha;
}

struct ProxyWeights {
  std::vector<double> alpha;
  std::vector<double> accuracies;
  /// Every expert scored zero; alpha fell back to uniform.
  bool degenerate = false;
};

/// Scores each expert on the proxy set (one forward each) and normalizes.
inline ProxyWeights alpha_proxy_accuracy(const ExpertBank& bank, const Dataset& proxy_set,
                                         PassCounters& counters) {
  if (proxy_set.empty()) throw ConfigError("proxy set is empty");
  ProxyWeights out;
  out.accuracies.reserve(bank.size());
  for (const auto& e : bank.experts()) {
    out.accuracies.push_back(evaluate(bank.arch(), e, proxy_set, counters).accuracy);
  }
  out.alpha = normalize_accuracies(out.accuracies, &out.degenerate);
  return out;
}

/// Exact alpha-gradient [<grad_theta L, theta_i>]_i at theta(alpha): one
/// blend, one forward, one backward and K inner products.
inline std::vector<double> grad_alpha_full(const ExpertBank& bank, std::span<const double> alpha,
                                           const Batch& batch, LossKind kind,
                                           PassCounters& counters, double* loss_out = nullptr) {
  check_loss_compat(bank.arch(), kind);
  const ParamVector theta = blend(bank, alpha, counters);
  const ParamVector g = grad_params(bank.arch(), theta, batch, kind, counters, loss_out);
  return expert_inner_products(bank, g.values, counters);
}

/// Exact beta-gradient, softmax_pullback(alpha, grad_alpha_full).
inline std::vector<double> grad_beta_full(const ExpertBank& bank, std::span<const double> beta,
                                          const Batch& batch, LossKind kind,
                                          PassCounters& counters, double* loss_out = nullptr) {
  const auto alpha = softmax_map(beta);
  return softmax_pullback(alpha, grad_alpha_full(bank, alpha, batch, kind, counters, loss_out));
}

/// Same loop as learn_alpha_glue with the backprop gradient; one forward and
/// one backward per step.
inline AlphaResult learn_alpha_fullgrad(const ExpertBank& bank, const Dataset& train,
                                        const OptimConfig& optim, std::uint64_t seed,
                                        const Dataset* validation = nullptr) {
  const LossKind kind = bank.arch().default_loss();
  return detail::run_alpha_loop(
      bank, train, optim, seed, validation, "fullgrad",
      [&](const MixtureState& state, const Batch& batch, PassCounters& counters) {
        double loss = 0.0;
        auto g = softmax_pullback(state.alpha(),
                                  grad_alpha_full(bank, state.alpha(), batch, kind, counters, &loss));
        return std::make_pair(std::move(g), loss);
      });
}

}  // namespace glue
