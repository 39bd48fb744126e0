#pragma once
// Synthetic source/target datasets with a controllable domain shift,
// Dirichlet non-IID expert splits, and CSV dataset I/O.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "glue/nn.hpp"

namespace glue {

/// splitmix64 finalizer; derives independent stream seeds from one seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum class DatasetKind { gaussian_mixture, two_spirals, file };

inline std::string_view to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::gaussian_mixture: return "gaussian_mixture";
    case DatasetKind::two_spirals: return "two_spirals";
    case DatasetKind::file: return "file";
  }
  return "?";
}

inline DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "gaussian_mixture") return DatasetKind::gaussian_mixture;
  if (s == "two_spirals") return DatasetKind::two_spirals;
  if (s == "file") return DatasetKind::file;
  throw ConfigError("unknown dataset kind '" + std::string(s) + "'");
}

/// Applied to every target-domain split: rotate coordinate pairs (0,1),
/// (2,3), ... by `rotation_angle`, then translate by `mean_shift_scale`
/// along a fixed seeded unit direction.
struct DomainShift {
  double mean_shift_scale = 0.0;
  double rotation_angle = 0.0;
};

struct SplitSizes {
  std::size_t source_pool = 4000;
  std::size_t alpha = 2000;
  std::size_t validation = 500;
  std::size_t finetune = 300;
  std::size_t test = 2000;
  /// Extra target-domain pool for training an on-target expert; 0 disables it.
  std::size_t target_expert = 0;
};

struct DatasetSpec {
  DatasetKind kind = DatasetKind::gaussian_mixture;
  std::size_t d_in = 20;
  std::size_t classes = 5;
  SplitSizes sizes;
  DomainShift shift{1.0, 0.3};
  // gaussian_mixture: cluster centres ~ N(0, separation^2 I), points = centre + noise * N(0, I).
  double class_separation = 0.8;
  std::size_t clusters_per_class = 4;
  double noise = 1.0;
  std::string file_path;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw ConfigError("need at least 2 classes");
    if (d_in == 0) throw ConfigError("input dimension must be positive");
    if (kind == DatasetKind::two_spirals && d_in < 2) throw ConfigError("spirals need d_in >= 2");
    if (sizes.source_pool == 0 || sizes.alpha == 0 || sizes.validation == 0 ||
        sizes.finetune == 0 || sizes.test == 0) {
      throw ConfigError("split sizes must be positive");
    }
    if (!std::isfinite(shift.mean_shift_scale) || !std::isfinite(shift.rotation_angle)) {
      throw ConfigError("domain shift must be finite");
    }
    if (clusters_per_class == 0) throw ConfigError("clusters_per_class must be positive");
    if (!(noise >= 0.0) || !(class_separation >= 0.0)) throw ConfigError("scales must be >= 0");
    if (kind == DatasetKind::file && file_path.empty()) throw ConfigError("file dataset needs a path");
  }
};

/// Source pool plus disjoint target-domain splits.
struct SynthData {
  Dataset source_pool;
  Dataset alpha_set;
  Dataset validation;
  Dataset finetune;
  Dataset test;
  Dataset target_expert_pool;
};

namespace detail {

inline std::vector<double> shift_direction(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 101));
  std::normal_distribution<double> normal;
  std::vector<double> v(d);
  double n = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

inline void apply_shift(Dataset& data, const DomainShift& shift, std::uint64_t seed) {
  const std::size_t d = data.inputs.cols();
  const double c = std::cos(shift.rotation_angle);
  const double s = std::sin(shift.rotation_angle);
  const auto dir = shift_direction(d, seed);
  for (std::size_t r = 0; r < data.size(); ++r) {
    auto x = data.inputs.row(r);
    if (shift.rotation_angle != 0.0) {
      for (std::size_t i = 0; i + 1 < d; i += 2) {
        const double a = x[i];
        const double b = x[i + 1];
        x[i] = c * a - s * b;
        x[i + 1] = s * a + c * b;
      }
    }
    for (std::size_t i = 0; i < d; ++i) x[i] += shift.mean_shift_scale * dir[i];
  }
}

class Generator {
 public:
  explicit Generator(const DatasetSpec& spec) : spec_(spec) {
    std::mt19937_64 rng(derive_seed(spec.seed, 100));
    std::normal_distribution<double> normal(0.0, spec.class_separation);
    centres_.resize(spec.classes * spec.clusters_per_class);
    for (auto& c : centres_) {
      c.resize(spec.d_in);
      for (auto& x : c) x = normal(rng);
    }
  }

  /// `balanced` cycles labels 0..C-1; otherwise labels are IID uniform.
  Dataset draw(std::size_t n, std::uint64_t stream, bool balanced) const {
    std::mt19937_64 rng(derive_seed(spec_.seed, stream));
    std::uniform_int_distribution<std::size_t> label_dist(0, spec_.classes - 1);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Dataset out;
    out.inputs = Matrix(n, spec_.d_in);
    out.labels.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t y = balanced ? r % spec_.classes : label_dist(rng);
      out.labels[r] = y;
      auto x = out.inputs.row(r);
      if (spec_.kind == DatasetKind::gaussian_mixture) {
        std::uniform_int_distribution<std::size_t> cl(0, spec_.clusters_per_class - 1);
        const auto& c = centres_[y * spec_.clusters_per_class + cl(rng)];
        for (std::size_t i = 0; i < spec_.d_in; ++i) x[i] = c[i] + spec_.noise * normal(rng);
      } else {
        // One spiral arm per class in the first two coordinates.
        const double t = unit(rng);
        const double angle = 3.0 * std::numbers::pi * t +
                             2.0 * std::numbers::pi * static_cast<double>(y) /
                                 static_cast<double>(spec_.classes);
        const double radius = 0.2 + 2.0 * t;
        x[0] = radius * std::cos(angle) + 0.1 * spec_.noise * normal(rng);
        x[1] = radius * std::sin(angle) + 0.1 * spec_.noise * normal(rng);
        for (std::size_t i = 2; i < spec_.d_in; ++i) x[i] = 0.1 * spec_.noise * normal(rng);
      }
    }
    // Balanced sets are shuffled so minibatches are not label-ordered.
    if (balanced) {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      out = gather(out, order);
    }
    return out;
  }

 private:
  const DatasetSpec& spec_;
  std::vector<std::vector<double>> centres_;
};

}  // namespace detail

/// Reads "x_0,...,x_{d-1},label" rows. A non-numeric first line is skipped as a header.
inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  Dataset out;
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    bool numeric = true;
    while (pos <= line.size()) {
      const std::size_t end = std::min(line.find(',', pos), line.size());
      double v = 0.0;
      const char* b = line.data() + pos;
      const char* e = line.data() + end;
      while (b < e && *b == ' ') ++b;
      auto [ptr, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || ptr != e) numeric = false;
      row.push_back(v);
      pos = end + 1;
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw DataError("non-numeric value in '" + path + "' row " + std::to_string(rows + 1));
    }
    first = false;
    if (row.size() < 2) throw DataError("dataset rows need features and a label");
    if (cols == 0) cols = row.size();
    if (row.size() != cols) throw DataError("ragged row in '" + path + "'");
    const double label = row.back();
    if (label < 0.0 || label != std::floor(label)) throw LabelError("labels must be non-negative integers");
    out.labels.push_back(static_cast<std::size_t>(label));
    values.insert(values.end(), row.begin(), row.end() - 1);
    ++rows;
  }
  if (rows == 0) throw DataError("dataset '" + path + "' is empty");
  out.inputs = Matrix(rows, cols - 1);
  out.inputs.data() = std::move(values);
  return out;
}

inline void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write dataset '" + path + "'");
  char buf[64];
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (double v : data.inputs.row(r)) {
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      os.write(buf, res.ptr - buf);
      os.put(',');
    }
    os << data.labels.at(r) << '\n';
  }
  if (!os) throw DataError("failed writing dataset '" + path + "'");
}

inline std::size_t class_count(const Dataset& data) {
  std::size_t c = 0;
  for (auto y : data.labels) c = std::max(c, y + 1);
  return c;
}

/// Builds the source pool and the shifted target splits. Deterministic given
/// spec.seed; each split draws from its own stream so changing one size or
/// the shift leaves the other draws untouched.
inline SynthData synth_dataset(const DatasetSpec& spec) {
  spec.validate();
  SynthData out;
  if (spec.kind != DatasetKind::file) {
    detail::Generator gen(spec);
    out.source_pool = gen.draw(spec.sizes.source_pool, 1, false);
    out.alpha_set = gen.draw(spec.sizes.alpha, 2, false);
    out.validation = gen.draw(spec.sizes.validation, 3, false);
    out.finetune = gen.draw(spec.sizes.finetune, 4, false);
    out.test = gen.draw(spec.sizes.test, 5, true);
    if (spec.sizes.target_expert > 0) out.target_expert_pool = gen.draw(spec.sizes.target_expert, 6, false);
  } else {
    const Dataset all = read_dataset_csv(spec.file_path);
    if (all.inputs.cols() != spec.d_in) throw ShapeError("file feature count != d_in");
    if (class_count(all) > spec.classes) throw LabelError("file labels exceed configured classes");
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(spec.seed, 1));
    std::shuffle(order.begin(), order.end(), rng);
    const auto& s = spec.sizes;
    const std::size_t head = s.source_pool + s.alpha + s.validation + s.finetune + s.target_expert;
    if (head + s.test > all.size()) throw DataError("file has too few rows for the requested splits");
    std::size_t cursor = 0;
    auto take = [&](std::size_t n) {
      std::span<const std::size_t> idx(order.data() + cursor, n);
      cursor += n;
      return gather(all, idx);
    };
    out.source_pool = take(s.source_pool);
    out.alpha_set = take(s.alpha);
    out.validation = take(s.validation);
    out.finetune = take(s.finetune);
    if (s.target_expert > 0) out.target_expert_pool = take(s.target_expert);
    // Class-balanced test set from the remaining rows.
    std::vector<std::vector<std::size_t>> per_class(spec.classes);
    for (std::size_t i = cursor; i < order.size(); ++i) per_class[all.labels[order[i]]].push_back(order[i]);
    std::vector<std::size_t> test_idx;
    std::vector<std::size_t> next(spec.classes, 0);
    for (std::size_t r = 0; r < s.test; ++r) {
      const std::size_t c = r % spec.classes;
      if (next[c] >= per_class[c].size()) throw DataError("file cannot supply a class-balanced test set");
      test_idx.push_back(per_class[c][next[c]++]);
    }
    out.test = gather(all, test_idx);
  }
  for (Dataset* d : {&out.alpha_set, &out.validation, &out.finetune, &out.test, &out.target_expert_pool}) {
    if (!d->empty()) detail::apply_shift(*d, spec.shift, spec.seed);
  }
  return out;
}

struct SplitSpec {
  std::size_t experts = 4;
  double dirichlet_concentration = 0.5;
  std::size_t per_expert_budget = 500;
  std::uint64_t seed = 0;

  void validate() const {
    if (experts == 0) throw ConfigError("need at least one expert");
    if (!(dirichlet_concentration > 0.0) || !std::isfinite(dirichlet_concentration)) {
      throw ConfigError("Dirichlet concentration must be positive");
    }
    if (per_expert_budget == 0) throw ConfigError("per-expert budget must be positive");
  }
};

struct ExpertSplit {
  std::vector<std::size_t> indices;
  Dataset data;
  std::vector<double> sampled_proportions;
  std::vector<double> realized_proportions;
  std::size_t retries = 0;
  /// Proportions could not be met after the retries; counts were rescaled to availability.
  bool rescaled = false;
};

/// Dirichlet(concentration * 1) sample, computed in log space so tiny
/// concentrations do not underflow to an all-zero draw.
template <class Rng>
std::vector<double> sample_dirichlet(std::size_t k, double concentration, Rng& rng) {
  std::vector<double> logs(k);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool boost = concentration < 1.0;
  std::gamma_distribution<double> gamma(boost ? concentration + 1.0 : concentration, 1.0);
  for (auto& l : logs) {
    double g = gamma(rng);
    while (g == 0.0) g = gamma(rng);
    l = std::log(g);
    if (boost) {
      double u = unit(rng);
      while (u == 0.0) u = unit(rng);
      l += std::log(u) / concentration;
    }
  }
  const double m = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (auto& l : logs) {
    l = std::exp(l - m);
    sum += l;
  }
  for (auto& l : logs) l /= sum;
  return logs;
}

/// Integer counts summing to `total` that follow `p` (largest remainder),
/// never exceeding `capacity` when given.
inline std::vector<std::size_t> allocate_counts(std::span<const double> p, std::size_t total,
                                                std::span<const std::size_t> capacity = {}) {
  const std::size_t k = p.size();
  std::vector<std::size_t> counts(k, 0);
  std::vector<bool> open(k, true);
  std::size_t remaining = total;
  // Water-filling: repeat while some class hits its cap.
  while (remaining > 0) {
    double mass = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (open[c]) mass += p[c];
    }
    std::vector<std::size_t> open_idx;
    for (std::size_t c = 0; c < k; ++c) {
      if (open[c]) open_idx.push_back(c);
    }
    if (open_idx.empty()) throw DataError("not enough items to fill the budget");
    std::vector<double> share(k, 0.0);
    for (auto c : open_idx) {
      share[c] = mass > 0.0 ? p[c] / mass * static_cast<double>(remaining)
                            : static_cast<double>(remaining) / static_cast<double>(open_idx.size());
    }
    std::vector<std::size_t> add(k, 0);
    std::size_t assigned = 0;
    for (auto c : open_idx) {
      add[c] = static_cast<std::size_t>(std::floor(share[c]));
      assigned += add[c];
    }
    std::vector<std::size_t> order = open_idx;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return share[a] - std::floor(share[a]) > share[b] - std::floor(share[b]);
    });
    for (std::size_t i = 0; assigned < remaining; ++i, ++assigned) ++add[order[i % order.size()]];

    bool capped = false;
    for (auto c : open_idx) {
      std::size_t want = counts[c] + add[c];
      if (!capacity.empty() && want >= capacity[c]) {
        if (want > capacity[c]) capped = true;
        want = capacity[c];
        open[c] = false;
      }
      remaining -= want - counts[c];
      counts[c] = want;
    }
    if (!capped) break;
  }
  return counts;
}

/// K expert datasets of exactly `per_expert_budget` items each, class
/// proportions drawn from Dirichlet(concentration * 1_C). Sampling is without
/// replacement within an expert; experts may overlap.
template <class Rng>
std::vector<ExpertSplit> dirichlet_split(const Dataset& pool, const SplitSpec& split, Rng& rng) {
  split.validate();
  if (split.per_expert_budget > pool.size()) throw ConfigError("per-expert budget exceeds pool size");
  const std::size_t classes = class_count(pool);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[pool.labels[i]].push_back(i);
  std::vector<std::size_t> available(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    if (by_class[c].empty()) throw DataError("pool is missing class " + std::to_string(c));
    available[c] = by_class[c].size();
  }

  std::vector<ExpertSplit> out(split.experts);
  for (auto& e : out) {
    std::vector<std::size_t> counts;
    for (;;) {
      e.sampled_proportions = sample_dirichlet(classes, split.dirichlet_concentration, rng);
      counts = allocate_counts(e.sampled_proportions, split.per_expert_budget);
      bool fits = true;
      for (std::size_t c = 0; c < classes; ++c) fits = fits && counts[c] <= available[c];
      if (fits) break;
      if (e.retries == 10) {
        counts = allocate_counts(e.sampled_proportions, split.per_expert_budget, available);
        e.rescaled = true;
        break;
      }
      ++e.retries;
    }
    e.realized_proportions.assign(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      // Partial Fisher-Yates over a copy of the class's indices.
      auto candidates = by_class[c];
      for (std::size_t j = 0; j < counts[c]; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, candidates.size() - 1);
        std::swap(candidates[j], candidates[pick(rng)]);
        e.indices.push_back(candidates[j]);
      }
      e.realized_proportions[c] =
          static_cast<double>(counts[c]) / static_cast<double>(split.per_expert_budget);
    }
    std::shuffle(e.indices.begin(), e.indices.end(), rng);
    e.data = gather(pool, e.indices);
  }
  return out;
}

}  // namespace glue
