#pragma once
// Small task fixtures shared by the suites.

#include <cstdint>
#include <random>
#include <vector>

#include "glue/blend.hpp"
#include "glue/train.hpp"

namespace fixture {

// Gaussian blobs around fixed class centers, labels drawn from `labels`.
inline glue::Dataset blobs(std::size_t n, std::size_t d, std::size_t classes,
                           const std::vector<std::size_t>& labels, std::uint64_t seed,
                           double spread = 1.0) {
  std::mt19937_64 centers_rng(1234);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> centers(classes, std::vector<double>(d));
  for (auto& c : centers) {
    for (auto& v : c) v = 2.0 * normal(centers_rng);
  }
  std::mt19937_64 rng(seed);
  glue::Dataset out;
  out.inputs = glue::Matrix(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t y = labels[r % labels.size()];
    for (std::size_t j = 0; j < d; ++j) out.inputs(r, j) = centers[y][j] + spread * normal(rng);
    out.labels.push_back(y);
  }
  return out;
}

inline std::vector<std::size_t> all_labels(std::size_t classes) {
  std::vector<std::size_t> l(classes);
  for (std::size_t i = 0; i < classes; ++i) l[i] = i;
  return l;
}

// Expert 0 sees only classes {0, 1}; expert 1 sees the full target task.
// Both start from one shared initialization.
struct Separation {
  glue::ArchSpec arch{{6, 16, 4}};
  glue::ExpertBank bank;
  glue::Dataset train;
  glue::Dataset held_out;
};

inline Separation separation_scenario() {
  const glue::ArchSpec arch({6, 16, 4});
  const auto init = glue::init_params(arch, 5);
  const auto narrow = blobs(400, 6, 4, {0, 1}, 11);
  const auto full = blobs(400, 6, 4, all_labels(4), 12);
  glue::AdamConfig adam{1e-2, 0.9, 0.999, 1e-8};
  auto e0 = glue::train_expert(arch, init, narrow, 15, 32, adam, 13);
  auto e1 = glue::train_expert(arch, init, full, 15, 32, adam, 14);
  glue::ExpertBank bank(arch, {e0, e1}, {{400, {}}, {400, {}}});
  return {arch, bank, blobs(600, 6, 4, all_labels(4), 15), blobs(600, 6, 4, all_labels(4), 16)};
}

}  // namespace fixture
