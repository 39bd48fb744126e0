#pragma once
// Test-only reference computations, written independently of the library's
// code paths: straight-line network arithmetic, finite differences, dense
// SVD and brute-force grid search.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "glue/blend.hpp"
#include "glue/nn.hpp"

namespace oracle {

// Plain nested-loop forward for an MLP with the documented parameter layout.
inline std::vector<std::vector<double>> mlp_forward(const glue::ArchSpec& arch,
                                                    const std::vector<double>& theta,
                                                    const glue::Matrix& x) {
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::vector<double> h(x.row(r).begin(), x.row(r).end());
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < arch.layer_sizes.size(); ++l) {
      const std::size_t nin = arch.layer_sizes[l];
      const std::size_t nout = arch.layer_sizes[l + 1];
      std::vector<double> z(nout);
      for (std::size_t o = 0; o < nout; ++o) {
        double s = theta[off + nout * nin + o];
        for (std::size_t i = 0; i < nin; ++i) s += theta[off + o * nin + i] * h[i];
        const bool hidden = l + 2 < arch.layer_sizes.size();
        if (hidden) s = arch.activation == glue::Activation::relu ? std::max(0.0, s) : std::tanh(s);
        z[o] = s;
      }
      off += nout * nin + nout;
      h = z;
    }
    out.push_back(h);
  }
  return out;
}

// Sum of per-sample cross-entropies (naive log of softmax probabilities), divided by b.
inline double cross_entropy(const std::vector<std::vector<double>>& logits,
                            const std::vector<std::size_t>& labels) {
  double total = 0.0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    double m = logits[r][0];
    for (double v : logits[r]) m = std::max(m, v);
    double z = 0.0;
    for (double v : logits[r]) z += std::exp(v - m);
    total += -std::log(std::exp(logits[r][labels[r]] - m) / z);
  }
  return total / static_cast<double>(logits.size());
}

inline double mlp_loss(const glue::ArchSpec& arch, const std::vector<double>& theta,
                       const glue::Batch& batch) {
  return cross_entropy(mlp_forward(arch, theta, batch.inputs), batch.labels);
}

// Central finite-difference gradient of f at x.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

// Largest singular value of the P x K matrix whose columns are the experts.
inline double dense_sigma_max(const glue::ExpertBank& bank) {
  Eigen::MatrixXd theta(static_cast<Eigen::Index>(bank.param_count()),
                        static_cast<Eigen::Index>(bank.size()));
  for (std::size_t k = 0; k < bank.size(); ++k) {
    for (std::size_t p = 0; p < bank.param_count(); ++p) {
      theta(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)) = bank.expert(k).values[p];
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(theta);
  return svd.singularValues()(0);
}

// Every simplex point with coordinates on a 1/steps lattice.
inline std::vector<std::vector<double>> simplex_grid(std::size_t k, std::size_t steps) {
  std::vector<std::vector<double>> out;
  std::vector<std::size_t> c(k, 0);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t left) {
    if (i + 1 == k) {
      c[i] = left;
      std::vector<double> a(k);
      for (std::size_t j = 0; j < k; ++j) a[j] = static_cast<double>(c[j]) / static_cast<double>(steps);
      out.push_back(a);
      return;
    }
    for (std::size_t v = 0; v <= left; ++v) {
      c[i] = v;
      rec(i + 1, left - v);
    }
  };
  rec(0, steps);
  return out;
}

inline glue::Batch random_batch(std::size_t b, std::size_t d, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<std::size_t> lab(0, classes - 1);
  glue::Batch batch;
  batch.inputs = glue::Matrix(b, d);
  for (auto& v : batch.inputs.data()) v = normal(rng);
  for (std::size_t r = 0; r < b; ++r) batch.labels.push_back(lab(rng));
  return batch;
}

inline glue::ParamVector random_params(const glue::ArchSpec& arch, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  glue::ParamVector p(arch);
  for (auto& v : p.values) v = normal(rng);
  return p;
}

}  // namespace oracle
