#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>

#include "fedlws/data.hpp"
#include "fedlws/error.hpp"
#include "support.hpp"

namespace fedlws {
namespace {

SyntheticSpec small_spec(std::uint64_t seed, double noise = 1.0) {
    SyntheticSpec s;
    s.num_classes = 4;
    s.samples_per_class = 30;
    s.test_samples_per_class = 10;
    s.feature_dim = 6;
    s.noise_std = noise;
    s.seed = seed;
    return s;
}

Dataset balanced(std::size_t classes, std::size_t per_class) {
    SyntheticSpec s = small_spec(0);
    s.num_classes = classes;
    s.samples_per_class = per_class;
    return make_synthetic(s).train;
}

void expect_set_partition(const Partition& p, std::size_t n) {
    std::vector<int> seen(n, 0);
    for (const auto& a : p.assignments) {
        EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
        for (auto i : a) {
            ASSERT_LT(i, n);
            ++seen[i];
        }
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST(Synthetic, ZeroNoiseSamplesEqualClassMean) {
    for (auto kind : {SyntheticKind::gaussian, SyntheticKind::blobs}) {
        SyntheticSpec s = small_spec(3, 0.0);
        s.kind = kind;
        const SplitDataset d = make_synthetic(s);
        const auto sample = static_cast<Eigen::Index>(shape_size(d.train.sample_shape()));
        for (std::size_t i = 0; i < d.train.size(); ++i) {
            const auto c = static_cast<Eigen::Index>(d.train.labels[i]);
            EXPECT_EQ(d.train.inputs.data().segment(static_cast<Eigen::Index>(i) * sample, sample),
                      d.class_means.inputs.data().segment(c * sample, sample));
        }
    }
}

TEST(Synthetic, ShapesAndLabels) {
    SyntheticSpec s = small_spec(1);
    const SplitDataset d = make_synthetic(s);
    EXPECT_EQ(d.train.inputs.shape(), (Shape{120, 6}));
    EXPECT_EQ(d.test.inputs.shape(), (Shape{40, 6}));
    EXPECT_NO_THROW(d.train.check());
    s.kind = SyntheticKind::blobs;
    s.channels = 2;
    s.height = 5;
    s.width = 4;
    EXPECT_EQ(make_synthetic(s).train.inputs.shape(), (Shape{120, 2, 5, 4}));
}

TEST(Synthetic, DeterministicInSeed) {
    const SplitDataset a = make_synthetic(small_spec(5));
    const SplitDataset b = make_synthetic(small_spec(5));
    EXPECT_EQ(a.train.inputs, b.train.inputs);
    EXPECT_EQ(a.test.inputs, b.test.inputs);
    EXPECT_EQ(a.train.labels, b.train.labels);
    EXPECT_NE(a.train.inputs, make_synthetic(small_spec(6)).train.inputs);
}

TEST(Synthetic, NearestCentroidSeparatesLowNoiseData) {
    SyntheticSpec s = small_spec(2, 0.1);
    s.num_classes = 10;
    s.feature_dim = 32;
    const SplitDataset d = make_synthetic(s);
    const auto means = d.class_means.inputs.matrix();
    const auto x = d.test.inputs.matrix();
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index best = 0;
        (means.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
        correct += static_cast<Label>(best) == d.test.labels[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    EXPECT_GT(static_cast<double>(correct) / static_cast<double>(x.rows()), 0.95);
}

TEST(Csv, ReadsRowsInOrder) {
    testing::TempDir tmp;
    testing::write_file(tmp / "d.csv", "label,f0,f1\n1,0.5,-1\n0,2,3e-1\n");
    const Dataset d = load_csv(tmp / "d.csv", 2);
    EXPECT_EQ(d.labels, (std::vector<Label>{1, 0}));
    EXPECT_EQ(d.inputs.shape(), (Shape{2, 2}));
    EXPECT_EQ(d.inputs[3], 0.3);
}

TEST(Csv, RejectsMalformedInput) {
    testing::TempDir tmp;
    testing::write_file(tmp / "a.csv", "f0,label\n1,0\n");
    testing::write_file(tmp / "b.csv", "label,f0\n5,1\n");
    testing::write_file(tmp / "c.csv", "label,f0,f1\n0,1\n");
    EXPECT_THROW(load_csv(tmp / "a.csv", 2), FormatError);
    EXPECT_ANY_THROW(load_csv(tmp / "b.csv", 2));
    EXPECT_THROW(load_csv(tmp / "c.csv", 2), FormatError);
    EXPECT_THROW(load_csv(tmp / "missing.csv", 2), FormatError);
}

TEST(Partition, SingleClientGetsEverything) {
    const Dataset d = balanced(3, 10);
    const Partition p = dirichlet_partition(d, {0.5, 1, 0, 2, 100});
    ASSERT_EQ(p.num_clients(), 1u);
    std::vector<std::size_t> all(d.size());
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(p.assignments[0], all);
}

TEST(Partition, IsSetPartitionForRandomSpecs) {
    const Dataset d = balanced(5, 40);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const double alpha = std::vector<double>{0.05, 0.1, 0.5, 1.0, 100.0}[seed % 5];
        const std::size_t k = 2 + seed % 9;
        const Partition p = dirichlet_partition(d, {alpha, k, seed, 1, 1000});
        ASSERT_EQ(p.num_clients(), k);
        expect_set_partition(p, d.size());
        for (const auto& a : p.assignments) EXPECT_GE(a.size(), 1u);
    }
}

TEST(Partition, DeterministicInSeed) {
    const Dataset d = balanced(4, 25);
    EXPECT_EQ(dirichlet_partition(d, {0.3, 6, 4}).assignments, dirichlet_partition(d, {0.3, 6, 4}).assignments);
    EXPECT_NE(dirichlet_partition(d, {0.3, 6, 4}).assignments, dirichlet_partition(d, {0.3, 6, 5}).assignments);
}

TEST(Partition, LargeAlphaMatchesGlobalDistribution) {
    const Dataset d = balanced(10, 200);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Partition p = dirichlet_partition(d, {1e6, 4, seed});
        for (const auto& a : p.assignments) {
            std::vector<double> counts(10, 0.0);
            for (auto i : a) counts[static_cast<std::size_t>(d.labels[i])] += 1.0;
            for (double c : counts) EXPECT_NEAR(c / static_cast<double>(a.size()), 0.1, 0.05);
        }
    }
}

TEST(Partition, MinimumSamplesHonoured) {
    const Dataset d = balanced(10, 20);
    const Partition p = dirichlet_partition(d, {0.1, 20, 3, 4, 1000});
    for (const auto& a : p.assignments) EXPECT_GE(a.size(), 4u);
    expect_set_partition(p, d.size());
}

TEST(Partition, RejectsInfeasibleSpecs) {
    const Dataset d = balanced(2, 5);
    EXPECT_THROW(dirichlet_partition(d, {0.5, 4, 0, 3}), ConfigError);
    EXPECT_THROW(dirichlet_partition(d, {0.0, 2, 0}), ConfigError);
    EXPECT_THROW(dirichlet_partition(d, {0.5, 0, 0}), ConfigError);
    // Feasible in count but practically unreachable at tiny alpha with one retry.
    EXPECT_THROW(dirichlet_partition(balanced(10, 20), {0.01, 20, 0, 10, 1}), ConfigError);
}

TEST(Heterogeneity, DisjointClassesGiveOneHalf) {
    const Dataset d = balanced(2, 10);
    Partition p;
    p.assignments.resize(2);
    for (std::size_t i = 0; i < d.size(); ++i) p.assignments[static_cast<std::size_t>(d.labels[i])].push_back(i);
    EXPECT_DOUBLE_EQ(heterogeneity_stat(p, d), 0.5);
}

TEST(Heterogeneity, IdenticalDistributionsGiveZero) {
    const Dataset d = balanced(2, 10);
    Partition p;
    p.assignments.resize(2);
    for (std::size_t i = 0; i < d.size(); ++i) p.assignments[i % 2 == 0 ? 0 : 1].push_back(i);
    // Class-major layout: alternating indices split each class evenly.
    EXPECT_DOUBLE_EQ(heterogeneity_stat(p, d), 0.0);
}

TEST(Heterogeneity, DecreasesWithAlpha) {
    const Dataset d = balanced(10, 100);
    double low = 0.0, mid = 0.0, high = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        low += heterogeneity_stat(dirichlet_partition(d, {0.1, 20, seed}), d);
        mid += heterogeneity_stat(dirichlet_partition(d, {0.5, 20, seed}), d);
        high += heterogeneity_stat(dirichlet_partition(d, {100.0, 20, seed}), d);
    }
    EXPECT_GT(low, mid);
    EXPECT_GT(mid, high);
    EXPECT_GE(high, 0.0);
    EXPECT_LE(low, 5.0);
}

}  // namespace
}  // namespace fedlws
