#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedlws/tensor.hpp"

namespace fedlws {

using Label = std::int32_t;

enum class ModelKind { mlp, cnn };

/// Architecture description. The resulting ModelParams are self-describing:
/// rank-2 weights are dense layers, rank-4 weights are convolutions, so
/// forward() needs no spec.
///
/// mlp: layer_sizes = [inputs, hidden..., num_classes], ReLU between layers.
/// cnn: each conv block is a same-padded stride-1 convolution, ReLU and a 2x2
///      max-pool (skipped once a spatial side drops below 2), followed by
///      dense layers [flattened, dense_hidden..., num_classes].
struct ModelSpec {
    ModelKind kind = ModelKind::mlp;
    std::vector<std::size_t> layer_sizes;

    std::size_t input_channels = 1;
    std::size_t input_height = 0;
    std::size_t input_width = 0;
    std::vector<std::size_t> conv_channels;
    std::size_t kernel_size = 3;
    std::vector<std::size_t> dense_hidden;

    std::size_t num_classes = 0;
    std::uint64_t init_seed = 0;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Throws ConfigError listing every malformed field.
void validate(const ModelSpec& spec);

/// Shape of a single input sample (without the batch dimension).
Shape input_shape(const ModelSpec& spec);

/// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
ModelParams init_model(const ModelSpec& spec);

/// Logits of shape (batch, num_classes).
Tensor forward(const ModelParams& params, const Tensor& inputs);

struct LossAndGrad {
    double loss = 0.0;
    ModelParams grads;
};

/// Mean softmax cross-entropy over the batch and its gradient.
LossAndGrad loss_and_grad(const ModelParams& params, const Tensor& inputs, std::span<const Label> labels);

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

Evaluation evaluate(const ModelParams& params, const Tensor& inputs, std::span<const Label> labels);

/// Mean cross-entropy of already computed logits.
double cross_entropy(const Tensor& logits, std::span<const Label> labels);

struct SgdConfig {
    double learning_rate = 0.08;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lr_decay_per_round = 0.99;

    double effective_lr(int round) const;

    friend bool operator==(const SgdConfig&, const SgdConfig&) = default;
};

/// Momentum buffers. Empty until the first step.
struct SgdState {
    ModelParams velocity;
};

/// Classic momentum SGD with coupled weight decay:
///   g <- g + wd*w;  v <- m*v + g;  w <- w - lr_t*v
void sgd_step(ModelParams& params, const ModelParams& grads, SgdState& state, const SgdConfig& cfg, int round);

}  // namespace fedlws
