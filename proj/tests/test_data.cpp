#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "glue/data.hpp"
#include "glue/train.hpp"

using namespace glue;

namespace {
DatasetSpec small_spec(std::size_t d = 6) {
  DatasetSpec spec;
  spec.d_in = d;
  spec.classes = 3;
  spec.sizes = {600, 400, 100, 100, 300, 0};
  spec.seed = 5;
  return spec;
}

Dataset class_pool(std::size_t classes, std::size_t per_class) {
  Dataset pool;
  pool.inputs = Matrix(classes * per_class, 1);
  for (std::size_t i = 0; i < classes * per_class; ++i) {
    pool.inputs(i, 0) = static_cast<double>(i);
    pool.labels.push_back(i % classes);
  }
  return pool;
}
}  // namespace

TEST(Synth, DeterministicGivenSeed) {
  const auto a = synth_dataset(small_spec());
  const auto b = synth_dataset(small_spec());
  EXPECT_EQ(a.alpha_set.inputs, b.alpha_set.inputs);
  EXPECT_EQ(a.test.labels, b.test.labels);
  auto other = small_spec();
  other.seed = 6;
  EXPECT_FALSE(synth_dataset(other).source_pool.inputs == a.source_pool.inputs);
}

TEST(Synth, SplitSizesAndBalancedTest) {
  const auto d = synth_dataset(small_spec());
  EXPECT_EQ(d.source_pool.size(), 600u);
  EXPECT_EQ(d.alpha_set.size(), 400u);
  EXPECT_EQ(d.validation.size(), 100u);
  EXPECT_EQ(d.finetune.size(), 100u);
  EXPECT_EQ(d.test.size(), 300u);
  EXPECT_TRUE(d.target_expert_pool.empty());
  std::vector<int> per_class(3, 0);
  for (auto y : d.test.labels) ++per_class[y];
  for (int n : per_class) EXPECT_EQ(n, 100);
}

TEST(Synth, ZeroShiftMatchesSourceDistribution) {
  auto spec = small_spec();
  spec.shift = {0.0, 0.0};
  spec.sizes.source_pool = 6000;
  spec.sizes.alpha = 6000;
  const auto d = synth_dataset(spec);
  for (std::size_t j = 0; j < spec.d_in; ++j) {
    double ms = 0.0, mt = 0.0;
    for (std::size_t r = 0; r < 6000; ++r) {
      ms += d.source_pool.inputs(r, j) / 6000.0;
      mt += d.alpha_set.inputs(r, j) / 6000.0;
    }
    EXPECT_NEAR(ms, mt, 0.1) << j;
  }
}

TEST(Synth, HalfTurnRotationNegatesInputs) {
  auto plain = small_spec(2);
  plain.shift = {0.0, 0.0};
  auto turned = plain;
  turned.shift = {0.0, std::numbers::pi};
  const auto a = synth_dataset(plain);
  const auto b = synth_dataset(turned);
  ASSERT_EQ(a.alpha_set.labels, b.alpha_set.labels);
  for (std::size_t i = 0; i < a.alpha_set.inputs.data().size(); ++i) {
    EXPECT_NEAR(b.alpha_set.inputs.data()[i], -a.alpha_set.inputs.data()[i], 1e-12);
  }
  EXPECT_EQ(a.source_pool.inputs, b.source_pool.inputs);
}

TEST(Synth, LargerShiftHurtsSourceProbe) {
  auto spec = small_spec(4);
  spec.class_separation = 2.0;
  spec.clusters_per_class = 1;
  spec.sizes.test = 1500;
  std::vector<double> acc;
  for (double scale : {0.0, 1.0, 2.0}) {
    spec.shift = {scale, 0.0};
    const auto d = synth_dataset(spec);
    const ArchSpec probe({4, 3});
    const auto p = train_expert(probe, init_params(probe, 1), d.source_pool, 30, 32,
                                {1e-2, 0.9, 0.999, 1e-8}, 2);
    PassCounters c;
    acc.push_back(evaluate(probe, p, d.test, c).accuracy);
  }
  EXPECT_GT(acc[0], acc[1]);
  EXPECT_GT(acc[1], acc[2]);
}

TEST(Synth, SpiralsAndValidation) {
  auto spec = small_spec(2);
  spec.kind = DatasetKind::two_spirals;
  EXPECT_EQ(synth_dataset(spec).source_pool.inputs.cols(), 2u);
  auto bad = small_spec();
  bad.classes = 1;
  EXPECT_THROW(synth_dataset(bad), ConfigError);
  bad = small_spec();
  bad.sizes.test = 0;
  EXPECT_THROW(synth_dataset(bad), ConfigError);
}

TEST(DatasetCsv, Roundtrip) {
  const auto path = (std::filesystem::temp_directory_path() / "glue_data_roundtrip.csv").string();
  const auto d = synth_dataset(small_spec()).validation;
  write_dataset_csv(path, d);
  const auto back = read_dataset_csv(path);
  EXPECT_EQ(back.labels, d.labels);
  ASSERT_EQ(back.inputs.cols(), d.inputs.cols());
  for (std::size_t i = 0; i < d.inputs.data().size(); ++i) {
    EXPECT_EQ(back.inputs.data()[i], d.inputs.data()[i]);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(read_dataset_csv(path), DataError);
}

TEST(Dirichlet, ExactBudgetPerExpert) {
  const auto pool = class_pool(5, 1000);
  std::mt19937_64 rng(1);
  const auto experts = dirichlet_split(pool, {10, 0.5, 2000, 0}, rng);
  ASSERT_EQ(experts.size(), 10u);
  for (const auto& e : experts) {
    EXPECT_EQ(e.data.size(), 2000u);
    std::vector<std::size_t> sorted = e.indices;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
    double sum = 0.0;
    for (double p : e.realized_proportions) sum += p;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Dirichlet, RealizedWithinRoundingOfSampled) {
  const auto pool = class_pool(5, 2000);
  std::mt19937_64 rng(2);
  for (const auto& e : dirichlet_split(pool, {20, 0.5, 333, 0}, rng)) {
    if (e.rescaled) continue;
    std::vector<std::size_t> tally(5, 0);
    for (auto y : e.data.labels) ++tally[y];
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_LE(std::abs(e.realized_proportions[c] - e.sampled_proportions[c]), 5.0 / 333.0);
      EXPECT_DOUBLE_EQ(e.realized_proportions[c], tally[c] / 333.0);
    }
  }
}

TEST(Dirichlet, LargeConcentrationIsNearUniform) {
  const auto pool = class_pool(5, 1000);
  std::mt19937_64 rng(3);
  for (const auto& e : dirichlet_split(pool, {20, 1e6, 2000, 0}, rng)) {
    for (double p : e.realized_proportions) EXPECT_NEAR(p, 0.2, 0.01);
  }
}

TEST(Dirichlet, SmallConcentrationIsSkewed) {
  const auto pool = class_pool(5, 1000);
  std::mt19937_64 rng(4);
  bool skewed = false;
  for (const auto& e : dirichlet_split(pool, {20, 0.01, 500, 0}, rng)) {
    skewed = skewed || *std::max_element(e.realized_proportions.begin(), e.realized_proportions.end()) >= 0.8;
  }
  EXPECT_TRUE(skewed);
}

TEST(Dirichlet, ExhaustedClassIsRescaledAndFlagged) {
  // Class 0 has only 10 items; a tiny concentration puts most mass on one class.
  Dataset pool;
  pool.inputs = Matrix(1010, 1);
  for (std::size_t i = 0; i < 1010; ++i) pool.labels.push_back(i < 10 ? 0 : 1 + i % 2);
  std::mt19937_64 rng(5);
  bool flagged = false;
  for (const auto& e : dirichlet_split(pool, {40, 0.01, 600, 0}, rng)) {
    EXPECT_EQ(e.data.size(), 600u);
    std::size_t zeros = 0;
    for (auto y : e.data.labels) zeros += y == 0;
    EXPECT_LE(zeros, 10u);
    flagged = flagged || e.rescaled;
    EXPECT_LE(e.retries, 10u);
  }
  EXPECT_TRUE(flagged);
}

TEST(Dirichlet, SampleSumsToOne) {
  std::mt19937_64 rng(6);
  for (double conc : {1e-3, 0.1, 1.0, 10.0}) {
    const auto p = sample_dirichlet(7, conc, rng);
    double s = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(AllocateCounts, LargestRemainder) {
  EXPECT_EQ(allocate_counts(std::vector<double>{0.5, 0.3, 0.2}, 10), (std::vector<std::size_t>{5, 3, 2}));
  EXPECT_EQ(allocate_counts(std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}, 10),
            (std::vector<std::size_t>{4, 3, 3}));
  const std::vector<std::size_t> cap{2, 100, 100};
  EXPECT_EQ(allocate_counts(std::vector<double>{0.8, 0.1, 0.1}, 10, cap), (std::vector<std::size_t>{2, 4, 4}));
}

TEST(Dirichlet, InvalidSpecs) {
  const auto pool = class_pool(3, 10);
  std::mt19937_64 rng(7);
  EXPECT_THROW(dirichlet_split(pool, {2, 0.0, 5, 0}, rng), ConfigError);
  EXPECT_THROW(dirichlet_split(pool, {2, 0.5, 31, 0}, rng), ConfigError);
  EXPECT_THROW(dirichlet_split(pool, {0, 0.5, 5, 0}, rng), ConfigError);
}
