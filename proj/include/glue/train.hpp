#pragma once
// Minibatch scheduling and plain gradient training of a network.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "glue/adam.hpp"
#include "glue/nn.hpp"

namespace glue {

/// Endless stream of minibatch index sets: each epoch is a fresh seeded
/// shuffle of [0, n), cut into chunks of `batch_size` (the last may be short).
class MinibatchSchedule {
 public:
  MinibatchSchedule(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : order_(n), batch_size_(batch_size), rng_(seed) {
    if (n == 0) throw ConfigError("minibatch schedule over an empty set");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::vector<std::size_t> next() {
    if (cursor_ >= order_.size()) {
      ++epoch_;
      reshuffle();
    }
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return idx;
  }

  /// Epoch the next call to next() draws from finishes before returning.
  bool at_epoch_end() const noexcept { return cursor_ >= order_.size(); }
  std::uint64_t epoch() const noexcept { return epoch_; }
  std::size_t batches_per_epoch() const noexcept {
    return (order_.size() + batch_size_ - 1) / batch_size_;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
};

struct TrainOutcome {
  ParamVector params;
  /// Full-dataset loss before training followed by one entry per epoch.
  std::vector<double> epoch_loss;
};

/// Adam training on the arch's default loss. Deterministic given `seed`.
/// `on_epoch(epoch, params)` runs after each epoch when provided.
template <class EpochCallback>
TrainOutcome fit(const ArchSpec& arch, const ParamVector& init, const Dataset& dataset,
                 std::size_t epochs, std::size_t batch_size, const AdamConfig& adam,
                 std::uint64_t seed, PassCounters& counters, EpochCallback&& on_epoch) {
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  check_params(arch, init);
  const LossKind kind = arch.default_loss();
  TrainOutcome out{init, {}};
  PassCounters eval_counters;
  out.epoch_loss.push_back(loss_at(arch, out.params, dataset, kind, eval_counters));
  if (epochs == 0) return out;

  Adam opt(arch.param_count(), adam);
  MinibatchSchedule schedule(dataset.size(), batch_size, seed);
  for (std::size_t e = 1; e <= epochs; ++e) {
    for (std::size_t k = 0; k < schedule.batches_per_epoch(); ++k) {
      const auto idx = schedule.next();
      const Batch batch = gather(dataset, idx);
      const ParamVector g = grad_params(arch, out.params, batch, kind, counters);
      opt.step(out.params.values, g.values);
    }
    out.epoch_loss.push_back(loss_at(arch, out.params, dataset, kind, eval_counters));
    on_epoch(e, out.params);
  }
  return out;
}

inline TrainOutcome fit(const ArchSpec& arch, const ParamVector& init, const Dataset& dataset,
                        std::size_t epochs, std::size_t batch_size, const AdamConfig& adam,
                        std::uint64_t seed, PassCounters& counters) {
  return fit(arch, init, dataset, epochs, batch_size, adam, seed, counters,
             [](std::size_t, const ParamVector&) {});
}

/// Trains one expert from `init`; zero epochs returns `init` unchanged.
inline ParamVector train_expert(const ArchSpec& arch, const ParamVector& init,
                                const Dataset& dataset, std::size_t epochs,
                                std::size_t batch_size, const AdamConfig& adam,
                                std::uint64_t seed) {
  PassCounters counters;
  return fit(arch, init, dataset, epochs, batch_size, adam, seed, counters).params;
}

}  // namespace glue
