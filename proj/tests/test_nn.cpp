#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fedlws/error.hpp"
#include "fedlws/nn.hpp"
#include "fedlws/rng.hpp"

namespace fedlws {
namespace {

ModelSpec mlp_spec(std::vector<std::size_t> sizes, std::uint64_t seed = 0) {
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.layer_sizes = std::move(sizes);
    s.num_classes = s.layer_sizes.back();
    s.init_seed = seed;
    return s;
}

ModelSpec cnn_spec(std::uint64_t seed = 0) {
    ModelSpec s;
    s.kind = ModelKind::cnn;
    s.input_channels = 2;
    s.input_height = 5;
    s.input_width = 6;
    s.conv_channels = {3, 4};
    s.kernel_size = 3;
    s.dense_hidden = {7};
    s.num_classes = 4;
    s.init_seed = seed;
    return s;
}

Tensor random_inputs(Shape shape, std::uint64_t seed) {
    Tensor x(std::move(shape));
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
    return x;
}

Shape batch_shape(const ModelSpec& spec, std::size_t batch) {
    Shape s{batch};
    const Shape sample = input_shape(spec);
    s.insert(s.end(), sample.begin(), sample.end());
    return s;
}

// Straight-line evaluation with scalar loops over (channel, row, column).
std::vector<std::vector<double>> reference_forward(const ModelParams& p, const Tensor& x) {
    const std::size_t batch = x.dim(0);
    std::vector<std::vector<double>> out;
    for (std::size_t n = 0; n < batch; ++n) {
        std::vector<double> act;
        std::size_t l = 0;
        if (p.layers[0].tensors[0].rank() == 4) {
            std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
            std::vector<double> img(c * h * w);
            for (std::size_t i = 0; i < img.size(); ++i) img[i] = x[static_cast<Eigen::Index>(n * img.size() + i)];
            for (; l < p.layers.size() && p.layers[l].tensors[0].rank() == 4; ++l) {
                const Tensor& wt = p.layers[l].tensors[0];
                const Tensor& b = p.layers[l].tensors[1];
                const std::size_t oc = wt.dim(0), k = wt.dim(2);
                const long pad = static_cast<long>(k / 2);
                std::vector<double> conv(oc * h * w);
                for (std::size_t o = 0; o < oc; ++o) {
                    for (std::size_t y = 0; y < h; ++y) {
                        for (std::size_t xx = 0; xx < w; ++xx) {
                            double s = b[static_cast<Eigen::Index>(o)];
                            for (std::size_t ic = 0; ic < c; ++ic) {
                                for (std::size_t ky = 0; ky < k; ++ky) {
                                    for (std::size_t kx = 0; kx < k; ++kx) {
                                        const long iy = static_cast<long>(y + ky) - pad;
                                        const long ix = static_cast<long>(xx + kx) - pad;
                                        if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                                        s += wt[static_cast<Eigen::Index>(((o * c + ic) * k + ky) * k + kx)] *
                                             img[(ic * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
                                    }
                                }
                            }
                            conv[(o * h + y) * w + xx] = std::max(s, 0.0);
                        }
                    }
                }
                if (h >= 2 && w >= 2) {
                    const std::size_t ph = h / 2, pw = w / 2;
                    std::vector<double> pooled(oc * ph * pw);
                    for (std::size_t o = 0; o < oc; ++o) {
                        for (std::size_t y = 0; y < ph; ++y) {
                            for (std::size_t xx = 0; xx < pw; ++xx) {
                                double m = -1e300;
                                for (std::size_t dy = 0; dy < 2; ++dy) {
                                    for (std::size_t dx = 0; dx < 2; ++dx) {
                                        m = std::max(m, conv[(o * h + 2 * y + dy) * w + 2 * xx + dx]);
                                    }
                                }
                                pooled[(o * ph + y) * pw + xx] = m;
                            }
                        }
                    }
                    conv = std::move(pooled);
                    h = ph;
                    w = pw;
                }
                img = std::move(conv);
                c = oc;
            }
            act = std::move(img);
        } else {
            for (std::size_t i = 0; i < x.dim(1); ++i) act.push_back(x[static_cast<Eigen::Index>(n * x.dim(1) + i)]);
        }
        for (; l < p.layers.size(); ++l) {
            const Tensor& wt = p.layers[l].tensors[0];
            const Tensor& b = p.layers[l].tensors[1];
            std::vector<double> next(wt.dim(0));
            for (std::size_t o = 0; o < wt.dim(0); ++o) {
                double s = b[static_cast<Eigen::Index>(o)];
                for (std::size_t i = 0; i < wt.dim(1); ++i) s += wt[static_cast<Eigen::Index>(o * wt.dim(1) + i)] * act[i];
                next[o] = l + 1 < p.layers.size() ? std::max(s, 0.0) : s;
            }
            act = std::move(next);
        }
        out.push_back(std::move(act));
    }
    return out;
}

void expect_matches_reference(const ModelParams& p, const Tensor& x) {
    const Tensor logits = forward(p, x);
    const auto ref = reference_forward(p, x);
    ASSERT_EQ(logits.dim(0), ref.size());
    for (std::size_t n = 0; n < ref.size(); ++n) {
        ASSERT_EQ(logits.dim(1), ref[n].size());
        for (std::size_t j = 0; j < ref[n].size(); ++j) {
            EXPECT_NEAR(logits.matrix()(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(j)), ref[n][j], 1e-12);
        }
    }
}

double max_fd_error(const ModelParams& params, const Tensor& x, const std::vector<Label>& y, std::uint64_t seed) {
    const ModelParams grads = loss_and_grad(params, x, y).grads;
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        for (std::size_t t = 0; t < params.layers[l].tensors.size(); ++t) {
            const auto n = params.layers[l].tensors[t].size();
            std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
            for (int s = 0; s < 32; ++s) {
                const Eigen::Index i = pick(rng);
                ModelParams p = params;
                double& w = p.layers[l].tensors[t][i];
                const double w0 = w;
                w = w0 + 1e-5;
                const double up = loss_and_grad(p, x, y).loss;
                w = w0 - 1e-5;
                const double down = loss_and_grad(p, x, y).loss;
                const double numeric = (up - down) / 2e-5;
                const double analytic = grads.layers[l].tensors[t][i];
                worst = std::max(worst, std::abs(analytic - numeric) /
                                            std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
            }
        }
    }
    return worst;
}

TEST(InitModel, MlpShapes) {
    const ModelParams p = init_model(mlp_spec({4, 8, 3}));
    ASSERT_EQ(p.layers.size(), 2u);
    EXPECT_EQ(p.layers[0].name, "fc1");
    EXPECT_EQ(p.layers[0].tensors[0].shape(), (Shape{8, 4}));
    EXPECT_EQ(p.layers[0].tensors[1].shape(), (Shape{8}));
    EXPECT_EQ(p.layers[1].tensors[0].shape(), (Shape{3, 8}));
    EXPECT_EQ(p.layers[1].tensors[1].shape(), (Shape{3}));
}

TEST(InitModel, CnnShapes) {
    const ModelParams p = init_model(cnn_spec());
    ASSERT_EQ(p.layers.size(), 4u);
    EXPECT_EQ(p.layers[0].name, "conv1");
    EXPECT_EQ(p.layers[0].tensors[0].shape(), (Shape{3, 2, 3, 3}));
    EXPECT_EQ(p.layers[1].tensors[0].shape(), (Shape{4, 3, 3, 3}));
    // 5x6 -> 2x3 -> 1x1
    EXPECT_EQ(p.layers[2].tensors[0].shape(), (Shape{7, 4}));
    EXPECT_EQ(p.layers[3].tensors[0].shape(), (Shape{4, 7}));
}

TEST(InitModel, DeterministicInSeed) {
    EXPECT_EQ(init_model(mlp_spec({5, 6, 2}, 9)), init_model(mlp_spec({5, 6, 2}, 9)));
    EXPECT_EQ(init_model(cnn_spec(4)), init_model(cnn_spec(4)));
    EXPECT_NE(init_model(mlp_spec({5, 6, 2}, 9)), init_model(mlp_spec({5, 6, 2}, 10)));
}

TEST(InitModel, FanInBoundsAndZeroBias) {
    const ModelParams p = init_model(mlp_spec({16, 9, 3}, 2));
    const double bound = 1.0 / std::sqrt(16.0);
    EXPECT_LE(p.layers[0].tensors[0].data().cwiseAbs().maxCoeff(), bound);
    EXPECT_EQ(p.layers[0].tensors[1].data().cwiseAbs().maxCoeff(), 0.0);
}

TEST(InitModel, RejectsZeroSizedLayer) {
    EXPECT_THROW(init_model(mlp_spec({4, 0, 3})), ConfigError);
    ModelSpec bad = cnn_spec();
    bad.kernel_size = 2;
    EXPECT_THROW(init_model(bad), ConfigError);
}

TEST(Forward, ZeroWeightsGiveZeroLogits) {
    ModelParams p = init_model(mlp_spec({4, 8, 3}));
    scale(p, 0.0);
    const Tensor logits = forward(p, random_inputs({5, 4}, 1));
    EXPECT_EQ(logits.shape(), (Shape{5, 3}));
    EXPECT_EQ(logits.data().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, IdentityDenseLayerPassesInputThrough) {
    Tensor w({3, 3});
    w.matrix().setIdentity();
    const ModelParams p{{{"fc1", {w, Tensor({3})}}}};
    Tensor x({1, 3});
    x.data() << 1.0, 1.0, 1.0;
    EXPECT_EQ(forward(p, x), x);
}

TEST(Forward, MlpMatchesScalarReference) {
    expect_matches_reference(init_model(mlp_spec({6, 5, 4, 3}, 3)), random_inputs({4, 6}, 2));
}

TEST(Forward, CnnMatchesScalarReference) {
    const ModelSpec spec = cnn_spec(7);
    ModelParams p = init_model(spec);
    // Non-zero biases exercise the bias path.
    for (auto& g : p.layers) g.tensors[1].data().setConstant(0.05);
    expect_matches_reference(p, random_inputs(batch_shape(spec, 3), 4));
}

TEST(Forward, RejectsShapeMismatch) {
    const ModelParams p = init_model(mlp_spec({4, 8, 3}));
    EXPECT_THROW(forward(p, random_inputs({2, 5}, 0)), ContractError);
    EXPECT_THROW(forward(init_model(cnn_spec()), random_inputs({2, 60}, 0)), ContractError);
}

TEST(Loss, UniformLogitsGiveLogC) {
    ModelParams p = init_model(mlp_spec({4, 8, 7}));
    scale(p, 0.0);
    const std::vector<Label> y{0, 3, 6};
    EXPECT_NEAR(loss_and_grad(p, random_inputs({3, 4}, 1), y).loss, std::log(7.0), 1e-15);
}

TEST(Loss, RejectsEmptyBatchAndBadLabels) {
    const ModelParams p = init_model(mlp_spec({4, 8, 3}));
    EXPECT_THROW(loss_and_grad(p, Tensor({0, 4}), std::vector<Label>{}), ContractError);
    EXPECT_THROW(loss_and_grad(p, random_inputs({1, 4}, 0), std::vector<Label>{3}), ContractError);
}

TEST(Loss, MlpGradientMatchesFiniteDifferences) {
    const ModelParams p = init_model(mlp_spec({6, 10, 8, 4}, 11));
    EXPECT_LT(max_fd_error(p, random_inputs({5, 6}, 3), {0, 1, 2, 3, 1}, 17), 1e-4);
}

TEST(Loss, CnnGradientMatchesFiniteDifferences) {
    const ModelSpec spec = cnn_spec(12);
    EXPECT_LT(max_fd_error(init_model(spec), random_inputs(batch_shape(spec, 3), 5), {0, 3, 2}, 18), 1e-4);
}

TEST(Loss, DuplicatedBatchLeavesLossAndGradientUnchanged) {
    const ModelParams p = init_model(mlp_spec({5, 7, 3}, 4));
    const Tensor x = random_inputs({4, 5}, 6);
    const std::vector<Label> y{0, 2, 1, 2};
    Tensor xx({8, 5});
    xx.data() << x.data(), x.data();
    std::vector<Label> yy = y;
    yy.insert(yy.end(), y.begin(), y.end());

    const LossAndGrad a = loss_and_grad(p, x, y);
    const LossAndGrad b = loss_and_grad(p, xx, yy);
    EXPECT_NEAR(a.loss, b.loss, 1e-12);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        for (std::size_t t = 0; t < 2; ++t) {
            EXPECT_LT((a.grads.layers[l].tensors[t].data() - b.grads.layers[l].tensors[t].data()).cwiseAbs().maxCoeff(),
                      1e-12);
        }
    }
}

TEST(Sgd, EffectiveLearningRateDecaysPerRound) {
    const SgdConfig cfg{0.08, 0.9, 5e-4, 0.99};
    EXPECT_EQ(cfg.effective_lr(0), 0.08);
    EXPECT_NEAR(cfg.effective_lr(3), 0.08 * 0.99 * 0.99 * 0.99, 1e-17);
}

TEST(Sgd, PlainStepOnScalar) {
    ModelParams w{{{"w", {Tensor({1}, Vector::Constant(1, 1.0))}}}};
    const ModelParams g{{{"w", {Tensor({1}, Vector::Constant(1, 0.5))}}}};
    SgdState state;
    sgd_step(w, g, state, SgdConfig{0.1, 0.0, 0.0, 1.0}, 0);
    EXPECT_DOUBLE_EQ(w.layers[0].tensors[0][0], 0.95);
}

TEST(Sgd, ZeroLearningRateOnlyUpdatesMomentum) {
    ModelParams w{{{"w", {Tensor({2}, Vector::Constant(2, 1.0))}}}};
    const ModelParams before = w;
    const ModelParams g{{{"w", {Tensor({2}, Vector::Constant(2, 0.5))}}}};
    SgdState state;
    sgd_step(w, g, state, SgdConfig{0.0, 0.9, 0.0, 1.0}, 0);
    EXPECT_EQ(w, before);
    ASSERT_EQ(state.velocity.layers.size(), 1u);
    EXPECT_EQ(state.velocity.layers[0].tensors[0][0], 0.5);
}

TEST(Sgd, TwoStepMomentumRecursionOnQuadratic) {
    // f(w) = w^2, so g = 2w; lr 0.1, momentum 0.9, wd 0.1, w0 = 1.
    // v1 = 2 + 0.1 = 2.1, w1 = 0.79; v2 = 0.9*2.1 + 1.58 + 0.079 = 3.549, w2 = 0.4351.
    ModelParams w{{{"w", {Tensor({1}, Vector::Constant(1, 1.0))}}}};
    SgdState state;
    const SgdConfig cfg{0.1, 0.9, 0.1, 1.0};
    for (int step = 0; step < 2; ++step) {
        ModelParams g = w;
        scale(g, 2.0);
        sgd_step(w, g, state, cfg, 0);
    }
    EXPECT_NEAR(w.layers[0].tensors[0][0], 0.4351, 1e-15);
}

TEST(Sgd, TrainingReducesLossOnSeparableData) {
    ModelParams p = init_model(mlp_spec({2, 8, 2}, 5));
    Tensor x({40, 2});
    std::vector<Label> y(40);
    Rng rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < 40; ++i) {
        const Label c = static_cast<Label>(i % 2);
        x.matrix()(static_cast<Eigen::Index>(i), 0) = (c == 0 ? -2.0 : 2.0) + 0.3 * u(rng);
        x.matrix()(static_cast<Eigen::Index>(i), 1) = u(rng);
        y[i] = c;
    }
    const double initial = loss_and_grad(p, x, y).loss;
    SgdState state;
    const SgdConfig cfg{0.05, 0.9, 5e-4, 1.0};
    for (int step = 0; step < 200; ++step) sgd_step(p, loss_and_grad(p, x, y).grads, state, cfg, 0);
    EXPECT_LT(loss_and_grad(p, x, y).loss, initial);
    EXPECT_EQ(evaluate(p, x, y).accuracy, 1.0);
}

TEST(Sgd, TrajectoryIsDeterministic) {
    auto train = [] {
        ModelParams p = init_model(cnn_spec(8));
        const Tensor x = random_inputs(batch_shape(cnn_spec(), 4), 9);
        const std::vector<Label> y{0, 1, 2, 3};
        SgdState state;
        for (int step = 0; step < 5; ++step) sgd_step(p, loss_and_grad(p, x, y).grads, state, SgdConfig{}, step);
        return p;
    };
    EXPECT_EQ(train(), train());
}

}  // namespace
}  // namespace fedlws
