#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "fedlws/checkpoint.hpp"
#include "fedlws/error.hpp"
#include "fedlws/tensor.hpp"
#include "support.hpp"

namespace fedlws {
namespace {

ModelParams random_params(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dim(1, 5);
    std::uniform_int_distribution<int> count(1, 4);
    std::normal_distribution<double> normal(0.0, 10.0);
    ModelParams p;
    const int groups = count(rng);
    for (int g = 0; g < groups; ++g) {
        LayerGroup group{"layer-" + std::to_string(g) + "\xc3\xa9", {}};
        const int tensors = count(rng) % 2 + 1;
        for (int t = 0; t < tensors; ++t) {
            Shape shape;
            const int rank = count(rng);
            for (int r = 0; r < rank; ++r) shape.push_back(dim(rng));
            Tensor x(shape);
            for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
            group.tensors.push_back(std::move(x));
        }
        p.layers.push_back(std::move(group));
    }
    return p;
}

TEST(Tensor, RejectsMismatchedData) {
    EXPECT_THROW(Tensor(Shape{2, 3}, Vector::Zero(5)), ContractError);
    EXPECT_EQ(Tensor(Shape{2, 3}).size(), 6);
}

TEST(Tensor, MatrixViewIsRowMajor) {
    Tensor t(Shape{2, 3});
    t.data() << 1, 2, 3, 4, 5, 6;
    EXPECT_EQ(t.matrix()(1, 0), 4.0);
    EXPECT_EQ(t.matrix()(0, 2), 3.0);
}

TEST(ModelParams, CompatibilityIsPositional) {
    std::mt19937_64 rng(1);
    const ModelParams a = random_params(rng);
    ModelParams b = a;
    EXPECT_TRUE(compatible(a, b));
    b.layers[0].name += "x";
    EXPECT_FALSE(compatible(a, b));
    EXPECT_THROW(require_compatible(a, b, "test"), ContractError);
    b = a;
    b.layers[0].tensors.push_back(Tensor(Shape{1}));
    EXPECT_FALSE(compatible(a, b));
}

TEST(ModelParams, NormsAndArithmetic) {
    ModelParams p{{{"a", {Tensor({2}, (Vector(2) << 3, 0).finished())}}, {"b", {Tensor({1}, Vector::Constant(1, 4))}}}};
    EXPECT_EQ(norm(p), 5.0);
    EXPECT_EQ(norm(p.layers[0]), 3.0);
    ModelParams q = zeros_like(p);
    EXPECT_EQ(norm(q), 0.0);
    axpy(2.0, p, q);
    EXPECT_EQ(norm(q), 10.0);
    EXPECT_EQ(norm(difference(q, p)), 5.0);
    EXPECT_EQ(squared_distance(q.layers[1], p.layers[1]), 16.0);
    scale(q, 0.5);
    EXPECT_EQ(q, p);
    EXPECT_EQ(flatten(p).size(), 3);
    EXPECT_EQ(num_elements(p), 3u);
    EXPECT_TRUE(all_finite(p));
    q.layers[1].tensors[0][0] = std::nan("");
    EXPECT_FALSE(all_finite(q));
}

TEST(Checkpoint, RoundTripIsBitExact) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        ModelParams p = random_params(rng);
        Vector edge(2);
        edge << -0.0, 5e-324;
        p.layers.push_back({"edge", {Tensor({2}, edge)}});
        std::stringstream buf;
        write_checkpoint(buf, p);
        const ModelParams q = read_checkpoint(buf);
        ASSERT_EQ(p, q);
        EXPECT_TRUE(std::signbit(q.layers.back().tensors[0][0]));
        EXPECT_EQ(q.layers.back().tensors[0][1], 5e-324);
    }
}

TEST(Checkpoint, LayoutIsLittleEndian) {
    const ModelParams p{{{"w", {Tensor({1}, Vector::Constant(1, 1.0))}}}};
    std::stringstream buf;
    write_checkpoint(buf, p);
    const std::string bytes = buf.str();
    ASSERT_EQ(bytes.size(), 8u + 8 + 8 + 1 + 8 + 8 + 8 + 8);
    EXPECT_EQ(bytes.substr(0, 8), "FLWSCKP1");
    EXPECT_EQ(bytes[8], 1);   // group count
    EXPECT_EQ(bytes[16], 1);  // name length
    EXPECT_EQ(bytes[24], 'w');
    EXPECT_EQ(bytes[25], 1);  // tensor count
    // 1.0 = 0x3ff0000000000000, little-endian: last byte 0x3f.
    EXPECT_EQ(static_cast<unsigned char>(bytes.back()), 0x3f);
    EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 2]), 0xf0);
}

TEST(Checkpoint, RejectsCorruptInput) {
    std::mt19937_64 rng(3);
    std::stringstream buf;
    write_checkpoint(buf, random_params(rng));
    const std::string good = buf.str();

    std::stringstream bad_magic("FLWSCKP2" + good.substr(8));
    EXPECT_THROW(read_checkpoint(bad_magic), FormatError);
    std::stringstream truncated(good.substr(0, good.size() - 3));
    EXPECT_THROW(read_checkpoint(truncated), FormatError);
    std::stringstream trailing(good + "x");
    EXPECT_THROW(read_checkpoint(trailing), FormatError);
}

TEST(Checkpoint, FileRoundTrip) {
    testing::TempDir tmp;
    std::mt19937_64 rng(4);
    const ModelParams p = random_params(rng);
    save_checkpoint(tmp / "m.ckpt", p);
    EXPECT_EQ(load_checkpoint(tmp / "m.ckpt"), p);
    EXPECT_THROW(load_checkpoint(tmp / "missing.ckpt"), FormatError);
}

}  // namespace
}  // namespace fedlws
