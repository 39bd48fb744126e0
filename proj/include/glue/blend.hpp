#pragma once
// Expert bank, convex blending, softmax reparameterization and the spectral
// norm of the bank.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "glue/adam.hpp"
#include "glue/nn.hpp"

namespace glue {

struct ExpertMeta {
  std::size_t train_size = 0;
  std::optional<double> proxy_accuracy;
};

/// K fixed experts sharing one architecture. Immutable after construction.
class ExpertBank {
 public:
  ExpertBank(ArchSpec arch, std::vector<ParamVector> experts, std::vector<ExpertMeta> meta = {})
      : arch_(std::move(arch)), experts_(std::move(experts)), meta_(std::move(meta)) {
    arch_.validate();
    if (experts_.empty()) throw ConfigError("expert bank needs at least one expert");
    if (meta_.empty()) meta_.resize(experts_.size());
    if (meta_.size() != experts_.size()) throw ConfigError("expert metadata count != expert count");
    for (const auto& e : experts_) check_params(arch_, e);
  }

  std::size_t size() const noexcept { return experts_.size(); }
  std::size_t param_count() const noexcept { return arch_.param_count(); }
  const ArchSpec& arch() const noexcept { return arch_; }
  const ParamVector& expert(std::size_t i) const { return experts_.at(i); }
  const std::vector<ParamVector>& experts() const noexcept { return experts_; }
  const ExpertMeta& meta(std::size_t i) const { return meta_.at(i); }

 private:
  ArchSpec arch_;
  std::vector<ParamVector> experts_;
  std::vector<ExpertMeta> meta_;
};

namespace detail {
inline void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite entry in ") + what);
  }
}
}  // namespace detail

/// out = sum_i alpha_i * theta_i. Reuses `out`'s storage; counts one blend.
inline void blend_into(const ExpertBank& bank, std::span<const double> alpha, ParamVector& out,
                       PassCounters& counters) {
  if (alpha.size() != bank.size()) {
    throw ShapeError("alpha has " + std::to_string(alpha.size()) + " entries for " +
                     std::to_string(bank.size()) + " experts");
  }
  detail::check_finite(alpha, "alpha");
  const std::size_t p = bank.param_count();
  out.arch_id = bank.arch().fingerprint();
  out.values.assign(p, 0.0);
  double* y = out.values.data();
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const double a = alpha[i];
    const double* x = bank.expert(i).values.data();
    for (std::size_t k = 0; k < p; ++k) y[k] += a * x[k];
  }
  ++counters.blends;
}

inline ParamVector blend(const ExpertBank& bank, std::span<const double> alpha,
                         PassCounters& counters) {
  ParamVector out;
  blend_into(bank, alpha, out, counters);
  return out;
}

inline ParamVector blend(const ExpertBank& bank, std::span<const double> alpha) {
  PassCounters scratch;
  return blend(bank, alpha, scratch);
}

/// Max-subtracted softmax.
inline std::vector<double> softmax_map(std::span<const double> beta) {
  if (beta.empty()) throw ShapeError("softmax of an empty vector");
  detail::check_finite(beta, "beta");
  const double m = *std::max_element(beta.begin(), beta.end());
  std::vector<double> alpha(beta.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < beta.size(); ++i) {
    alpha[i] = std::exp(beta[i] - m);
    sum += alpha[i];
  }
  for (double& a : alpha) a /= sum;
  return alpha;
}

/// Chain rule through softmax: grad_beta_i = alpha_i * (grad_alpha_i - <alpha, grad_alpha>).
inline std::vector<double> softmax_pullback(std::span<const double> alpha,
                                            std::span<const double> grad_alpha) {
  if (alpha.size() != grad_alpha.size()) throw ShapeError("alpha / gradient length mismatch");
  double mean = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) mean += alpha[i] * grad_alpha[i];
  std::vector<double> out(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) out[i] = alpha[i] * (grad_alpha[i] - mean);
  return out;
}

/// [<v, theta_1>, ..., <v, theta_K>]; counts K inner products.
inline std::vector<double> expert_inner_products(const ExpertBank& bank, std::span<const double> v,
                                                 PassCounters& counters) {
  if (v.size() != bank.param_count()) throw ShapeError("vector length != parameter count");
  std::vector<double> out(bank.size(), 0.0);
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto& x = bank.expert(i).values;
    double acc = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) acc += v[k] * x[k];
    out[i] = acc;
  }
  counters.inner_products += bank.size();
  return out;
}

/// Theta^T Theta, row-major K x K.
inline std::vector<double> gram_matrix(const ExpertBank& bank) {
  const std::size_t k = bank.size();
  std::vector<double> g(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      const auto& a = bank.expert(i).values;
      const auto& b = bank.expert(j).values;
      double acc = 0.0;
      for (std::size_t p = 0; p < a.size(); ++p) acc += a[p] * b[p];
      g[i * k + j] = acc;
      g[j * k + i] = acc;
    }
  }
  return g;
}

/// Largest singular value of Theta by power iteration on the K x K Gram
/// matrix. Zero for an all-zero bank.
inline double sigma_max(const ExpertBank& bank) {
  const std::size_t k = bank.size();
  const auto g = gram_matrix(bank);
  double trace = 0.0;
  for (std::size_t i = 0; i < k; ++i) trace += g[i * k + i];
  if (trace == 0.0) return 0.0;

  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> normal;
  std::vector<double> v(k);
  for (auto& x : v) x = normal(rng);

  auto normalize = [](std::vector<double>& x) {
    double n = 0.0;
    for (double e : x) n += e * e;
    n = std::sqrt(n);
    if (n > 0.0) {
      for (double& e : x) e /= n;
    }
    return n;
  };
  normalize(v);

  std::vector<double> w(k);
  double lambda = 0.0;
  for (int it = 0; it < 1000; ++it) {
    for (std::size_t i = 0; i < k; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += g[i * k + j] * v[j];
      w[i] = acc;
    }
    double rayleigh = 0.0;
    for (std::size_t i = 0; i < k; ++i) rayleigh += v[i] * w[i];
    if (normalize(w) == 0.0) {
      // Start vector fell in the null space; restart on the heaviest column.
      std::size_t best = 0;
      for (std::size_t i = 1; i < k; ++i) {
        if (g[i * k + i] > g[best * k + best]) best = i;
      }
      std::fill(v.begin(), v.end(), 0.0);
      v[best] = 1.0;
      continue;
    }
    v.swap(w);
    const bool converged = it > 0 && std::abs(rayleigh - lambda) <= 1e-15 * std::abs(rayleigh);
    lambda = rayleigh;
    if (converged) break;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

/// Mixture coefficients. beta is the source of truth; alpha = softmax(beta)
/// is recomputed on every write. Also carries Adam moments and a step count.
class MixtureState {
 public:
  explicit MixtureState(std::vector<double> beta)
      : beta_(std::move(beta)), m1_(beta_.size(), 0.0), m2_(beta_.size(), 0.0) {
    alpha_ = softmax_map(beta_);
  }

  /// beta = 0, so alpha = (1/K) 1.
  static MixtureState uniform(std::size_t k) {
    if (k == 0) throw ConfigError("mixture over zero experts");
    return MixtureState(std::vector<double>(k, 0.0));
  }

  std::size_t size() const noexcept { return beta_.size(); }
  const std::vector<double>& beta() const noexcept { return beta_; }
  const std::vector<double>& alpha() const noexcept { return alpha_; }
  const std::vector<double>& first_moment() const noexcept { return m1_; }
  const std::vector<double>& second_moment() const noexcept { return m2_; }
  std::uint64_t step() const noexcept { return step_; }

  void set_beta(std::vector<double> beta) {
    if (beta.size() != beta_.size()) throw ShapeError("beta length changed");
    auto alpha = softmax_map(beta);
    beta_ = std::move(beta);
    alpha_ = std::move(alpha);
  }

  /// One Adam step on beta with `grad_beta`.
  void adam_step(std::span<const double> grad_beta, const AdamConfig& cfg) {
    if (grad_beta.size() != beta_.size()) throw ShapeError("gradient length != K");
    detail::check_finite(grad_beta, "beta gradient");
    auto beta = beta_;
    adam_update(beta, grad_beta, m1_, m2_, step_ + 1, cfg);
    set_beta(std::move(beta));
    ++step_;
  }

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> m1_;
  std::vector<double> m2_;
  std::uint64_t step_ = 0;
};

}  // namespace glue
