#pragma once
// Deterministic MLP engine over flat parameter vectors.
//
// Parameter layout: for each layer in order, the weight matrix (out x in,
// row-major) followed by the bias vector (out). Hidden layers apply the
// configured activation; the output layer is affine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glue/errors.hpp"
#include "glue/matrix.hpp"

namespace glue {

enum class Activation { relu, tanh };
enum class OutputKind { logits, scalar };
enum class LossKind { cross_entropy, squared_error };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
inline std::string_view to_string(OutputKind o) {
  return o == OutputKind::logits ? "logits" : "scalar";
}
inline std::string_view to_string(LossKind k) {
  return k == LossKind::cross_entropy ? "cross_entropy" : "squared_error";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline OutputKind parse_output_kind(std::string_view s) {
  if (s == "logits") return OutputKind::logits;
  if (s == "scalar") return OutputKind::scalar;
  throw ConfigError("unknown output kind '" + std::string(s) + "'");
}

/// Forward/backward/blend/inner-product tallies owned by one evaluation context.
struct PassCounters {
  std::uint64_t forwards = 0;
  std::uint64_t backwards = 0;
  std::uint64_t blends = 0;
  std::uint64_t inner_products = 0;

  friend bool operator==(const PassCounters&, const PassCounters&) = default;
};

inline PassCounters operator-(const PassCounters& a, const PassCounters& b) {
  return {a.forwards - b.forwards, a.backwards - b.backwards, a.blends - b.blends,
          a.inner_products - b.inner_products};
}

/// Fully connected architecture: input dim, hidden widths, output dim.
struct ArchSpec {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::relu;
  OutputKind output = OutputKind::logits;

  ArchSpec() = default;
  ArchSpec(std::vector<std::size_t> sizes, Activation act = Activation::relu,
           OutputKind out = OutputKind::logits)
      : layer_sizes(std::move(sizes)), activation(act), output(out) {
    validate();
  }

  void validate() const {
    if (layer_sizes.size() < 2) throw ConfigError("architecture needs at least one layer");
    for (auto s : layer_sizes) {
      if (s == 0) throw ConfigError("layer sizes must be positive");
    }
  }

  std::size_t layer_count() const noexcept { return layer_sizes.size() - 1; }
  std::size_t input_dim() const noexcept { return layer_sizes.front(); }
  std::size_t output_dim() const noexcept { return layer_sizes.back(); }

  std::size_t param_count() const noexcept {
    std::size_t p = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
      p += layer_sizes[l + 1] * (layer_sizes[l] + 1);
    }
    return p;
  }

  /// Stable FNV-1a identity of the architecture, stored in every ParamVector.
  std::uint64_t fingerprint() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    };
    mix(layer_sizes.size());
    for (auto s : layer_sizes) mix(s);
    mix(static_cast<std::uint64_t>(activation));
    mix(static_cast<std::uint64_t>(output));
    return h;
  }

  LossKind default_loss() const noexcept {
    return output == OutputKind::logits ? LossKind::cross_entropy : LossKind::squared_error;
  }

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// Flat parameters of one network instantiation.
struct ParamVector {
  std::vector<double> values;
  std::uint64_t arch_id = 0;

  ParamVector() = default;
  ParamVector(const ArchSpec& arch, double fill = 0.0)
      : values(arch.param_count(), fill), arch_id(arch.fingerprint()) {}
  ParamVector(const ArchSpec& arch, std::vector<double> v)
      : values(std::move(v)), arch_id(arch.fingerprint()) {
    if (values.size() != arch.param_count()) {
      throw ShapeError("parameter vector length " + std::to_string(values.size()) +
                       " does not match architecture (" + std::to_string(arch.param_count()) +
                       ")");
    }
  }

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

inline void check_params(const ArchSpec& arch, const ParamVector& params) {
  if (params.arch_id != arch.fingerprint() || params.size() != arch.param_count()) {
    throw ShapeError("parameters belong to a different architecture");
  }
  for (double v : params.values) {
    if (!std::isfinite(v)) throw NumericError("non-finite parameter");
  }
}

/// A minibatch (or a whole dataset): inputs plus class labels or regression targets.
struct Batch {
  Matrix inputs;
  std::vector<std::size_t> labels;
  Matrix targets;

  std::size_t size() const noexcept { return inputs.rows(); }
  bool empty() const noexcept { return inputs.rows() == 0; }
};

using Dataset = Batch;

/// Rows `rows` of `source`, in the given order.
inline Batch gather(const Batch& source, std::span<const std::size_t> rows) {
  Batch out;
  out.inputs = Matrix(rows.size(), source.inputs.cols());
  if (!source.labels.empty()) out.labels.reserve(rows.size());
  if (!source.targets.empty()) out.targets = Matrix(rows.size(), source.targets.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    if (r >= source.size()) throw ShapeError("row index out of range");
    std::copy_n(source.inputs.row(r).begin(), source.inputs.cols(), out.inputs.row(i).begin());
    if (!source.labels.empty()) out.labels.push_back(source.labels[r]);
    if (!source.targets.empty()) {
      std::copy_n(source.targets.row(r).begin(), source.targets.cols(),
                  out.targets.row(i).begin());
    }
  }
  return out;
}

/// Concatenates two datasets with identical column layout.
inline Batch concat(const Batch& a, const Batch& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.inputs.cols() != b.inputs.cols()) throw ShapeError("cannot concatenate: input dims differ");
  Batch out;
  out.inputs = Matrix(a.size() + b.size(), a.inputs.cols());
  std::copy(a.inputs.data().begin(), a.inputs.data().end(), out.inputs.data().begin());
  std::copy(b.inputs.data().begin(), b.inputs.data().end(),
            out.inputs.data().begin() + static_cast<std::ptrdiff_t>(a.inputs.data().size()));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  if (a.targets.rows() > 0 || b.targets.rows() > 0) {
    if (a.targets.rows() != a.size() || b.targets.rows() != b.size() ||
        a.targets.cols() != b.targets.cols()) {
      throw ShapeError("cannot concatenate: targets missing or of different widths");
    }
    out.targets = Matrix(a.size() + b.size(), a.targets.cols());
    std::copy(a.targets.data().begin(), a.targets.data().end(), out.targets.data().begin());
    std::copy(b.targets.data().begin(), b.targets.data().end(),
              out.targets.data().begin() + static_cast<std::ptrdiff_t>(a.targets.data().size()));
  }
  return out;
}

namespace detail {

inline void check_batch(const ArchSpec& arch, const Batch& batch) {
  if (batch.size() == 0) throw ShapeError("empty batch");
  if (batch.inputs.cols() != arch.input_dim()) {
    throw ShapeError("batch input dim " + std::to_string(batch.inputs.cols()) +
                     " does not match architecture input dim " +
                     std::to_string(arch.input_dim()));
  }
}

inline double activate(Activation a, double z) noexcept {
  return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// Derivative expressed through the pre-activation.
inline double activate_grad(Activation a, double z) noexcept {
  if (a == Activation::relu) return z > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(z);
  return 1.0 - t * t;
}

// out = in * W^T + b, W is (n_out x n_in) row-major at `w`. Accumulates
// over a transposed copy of W so the inner loop is a contiguous axpy.
inline Matrix affine(const Matrix& in, const double* w, const double* b, std::size_t n_out) {
  const std::size_t n_in = in.cols();
  std::vector<double> wt(n_in * n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    for (std::size_t i = 0; i < n_in; ++i) wt[i * n_out + o] = w[o * n_in + i];
  }
  Matrix out(in.rows(), n_out);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const double* x = in.row(r).data();
    double* y = out.row(r).data();
    std::copy_n(b, n_out, y);
    for (std::size_t i = 0; i < n_in; ++i) {
      const double xi = x[i];
      const double* wi = wt.data() + i * n_out;
      for (std::size_t o = 0; o < n_out; ++o) y[o] += wi[o] * xi;
    }
  }
  return out;
}

// Runs the network, optionally keeping every layer input and pre-activation.
inline Matrix run_layers(const ArchSpec& arch, const ParamVector& params, const Batch& batch,
                         std::vector<Matrix>* layer_inputs, std::vector<Matrix>* pre_acts) {
  const double* p = params.values.data();
  Matrix h = batch.inputs;
  const std::size_t layers = arch.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t n_in = arch.layer_sizes[l];
    const std::size_t n_out = arch.layer_sizes[l + 1];
    const double* w = p;
    const double* b = p + n_out * n_in;
    p = b + n_out;
    Matrix z = affine(h, w, b, n_out);
    if (layer_inputs) layer_inputs->push_back(std::move(h));
    if (l + 1 == layers) return z;
    if (pre_acts) pre_acts->push_back(z);
    for (auto& v : z.data()) v = activate(arch.activation, v);
    h = std::move(z);
  }
  return h;
}

inline void check_loss_kind(const Matrix& predictions, const Batch& batch, LossKind kind) {
  if (predictions.rows() != batch.size()) throw ShapeError("prediction rows != batch size");
  if (kind == LossKind::cross_entropy) {
    if (batch.labels.size() != batch.size()) throw LabelError("batch has no class labels");
    for (auto y : batch.labels) {
      if (y >= predictions.cols()) {
        throw LabelError("label " + std::to_string(y) + " outside [0, " +
                         std::to_string(predictions.cols()) + ")");
      }
    }
  } else {
    if (batch.targets.rows() != batch.size() || batch.targets.cols() != predictions.cols()) {
      throw ShapeError("regression targets do not match predictions");
    }
  }
}

inline double log_sum_exp(std::span<const double> z) noexcept {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

inline void check_loss_compat(const ArchSpec& arch, LossKind kind) {
  if (kind == LossKind::cross_entropy && arch.output != OutputKind::logits) {
    throw ConfigError("cross-entropy requires a logits output");
  }
  if (kind == LossKind::squared_error && arch.output != OutputKind::scalar) {
    throw ConfigError("squared error requires a scalar/vector regression output");
  }
}

/// Network outputs (b x C) for the batch. Bit-deterministic; counts one forward.
inline Matrix forward(const ArchSpec& arch, const ParamVector& params, const Batch& batch,
                      PassCounters& counters) {
  check_params(arch, params);
  detail::check_batch(arch, batch);
  ++counters.forwards;
  return detail::run_layers(arch, params, batch, nullptr, nullptr);
}

/// Mean per-sample loss. Cross-entropy uses max-subtracted log-sum-exp;
/// squared error sums over output coordinates.
inline double loss_eval(const Matrix& predictions, const Batch& batch, LossKind kind) {
  detail::check_loss_kind(predictions, batch, kind);
  double total = 0.0;
  for (std::size_t r = 0; r < predictions.rows(); ++r) {
    const auto z = predictions.row(r);
    if (kind == LossKind::cross_entropy) {
      total += detail::log_sum_exp(z) - z[batch.labels[r]];
    } else {
      const auto t = batch.targets.row(r);
      for (std::size_t c = 0; c < z.size(); ++c) total += (z[c] - t[c]) * (z[c] - t[c]);
    }
  }
  return total / static_cast<double>(predictions.rows());
}

inline double loss_at(const ArchSpec& arch, const ParamVector& params, const Batch& batch,
                      LossKind kind, PassCounters& counters) {
  return loss_eval(forward(arch, params, batch, counters), batch, kind);
}

/// Exact reverse-mode gradient of loss_eval(forward(...)). Counts one forward
/// and one backward. Writes the loss to `loss_out` when given.
inline ParamVector grad_params(const ArchSpec& arch, const ParamVector& params,
                               const Batch& batch, LossKind kind, PassCounters& counters,
                               double* loss_out = nullptr) {
  check_params(arch, params);
  detail::check_batch(arch, batch);
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
  const std::size_t layers = arch.layer_count();
  inputs.reserve(layers);
  pre.reserve(layers);
  ++counters.forwards;
  Matrix out = detail::run_layers(arch, params, batch, &inputs, &pre);
  if (loss_out) *loss_out = loss_eval(out, batch, kind);
  else detail::check_loss_kind(out, batch, kind);
  ++counters.backwards;

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  // delta = dL/d(output pre-activation)
  Matrix delta(out.rows(), out.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const auto z = out.row(r);
    auto d = delta.row(r);
    if (kind == LossKind::cross_entropy) {
      const double lse = detail::log_sum_exp(z);
      for (std::size_t c = 0; c < z.size(); ++c) d[c] = std::exp(z[c] - lse) * inv_b;
      d[batch.labels[r]] -= inv_b;
    } else {
      const auto t = batch.targets.row(r);
      for (std::size_t c = 0; c < z.size(); ++c) d[c] = 2.0 * (z[c] - t[c]) * inv_b;
    }
  }

  ParamVector grad(arch);
  std::vector<std::size_t> offsets(layers);
  for (std::size_t l = 0, off = 0; l < layers; ++l) {
    offsets[l] = off;
    off += arch.layer_sizes[l + 1] * (arch.layer_sizes[l] + 1);
  }

  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t n_in = arch.layer_sizes[l];
    const std::size_t n_out = arch.layer_sizes[l + 1];
    const double* w = params.values.data() + offsets[l];
    double* gw = grad.values.data() + offsets[l];
    double* gb = gw + n_out * n_in;
    const Matrix& a = inputs[l];
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      const double* dr = delta.row(r).data();
      const double* ar = a.row(r).data();
      for (std::size_t o = 0; o < n_out; ++o) {
        const double d = dr[o];
        gb[o] += d;
        double* gwo = gw + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) gwo[i] += d * ar[i];
      }
    }
    if (l == 0) break;
    Matrix prev(delta.rows(), n_in);
    const Matrix& z = pre[l - 1];
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      const double* dr = delta.row(r).data();
      double* pr = prev.row(r).data();
      for (std::size_t o = 0; o < n_out; ++o) {
        const double d = dr[o];
        const double* wo = w + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) pr[i] += d * wo[i];
      }
      for (std::size_t i = 0; i < n_in; ++i) pr[i] *= detail::activate_grad(arch.activation, z(r, i));
    }
    delta = std::move(prev);
  }
  return grad;
}

/// Uniform fan-in initialization (He for relu, Glorot for tanh), zero biases.
inline ParamVector init_params(const ArchSpec& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamVector params(arch);
  double* p = params.values.data();
  for (std::size_t l = 0; l < arch.layer_count(); ++l) {
    const std::size_t n_in = arch.layer_sizes[l];
    const std::size_t n_out = arch.layer_sizes[l + 1];
    const double limit = arch.activation == Activation::relu
                             ? std::sqrt(6.0 / static_cast<double>(n_in))
                             : std::sqrt(6.0 / static_cast<double>(n_in + n_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < n_out * n_in; ++i) *p++ = dist(rng);
    p += n_out;
  }
  return params;
}

struct Metrics {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> row) noexcept {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

/// Accuracy and mean loss of `params` on a labelled set.
inline Metrics evaluate(const ArchSpec& arch, const ParamVector& params, const Dataset& test_set,
                        PassCounters& counters) {
  if (test_set.empty()) throw ConfigError("evaluation set is empty");
  const Matrix out = forward(arch, params, test_set, counters);
  const LossKind kind = arch.default_loss();
  Metrics m;
  m.loss = loss_eval(out, test_set, kind);
  if (kind == LossKind::cross_entropy) {
    std::size_t correct = 0;
    for (std::size_t r = 0; r < out.rows(); ++r) correct += argmax(out.row(r)) == test_set.labels[r];
    m.accuracy = static_cast<double>(correct) / static_cast<double>(out.rows());
  }
  return m;
}

}  // namespace glue
