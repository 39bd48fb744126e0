#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "glue/errors.hpp"

namespace glue {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("Adam learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("Adam moment decay rates must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  }
};

/// One bias-corrected Adam update. `step` is the 1-based index of this update.
inline void adam_update(std::span<double> x, std::span<const double> grad, std::span<double> m1,
                        std::span<double> m2, std::uint64_t step, const AdamConfig& cfg) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < x.size(); ++i) {
    m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
    m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = m1[i] / c1;
    const double vhat = m2[i] / c2;
    x[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

/// Adam with owned moment buffers.
class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m1_(n, 0.0), m2_(n, 0.0) { cfg_.validate(); }

  void step(std::span<double> x, std::span<const double> grad) {
    adam_update(x, grad, m1_, m2_, ++steps_, cfg_);
  }

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m1_;
  std::vector<double> m2_;
  std::uint64_t steps_ = 0;
};

}  // namespace glue
