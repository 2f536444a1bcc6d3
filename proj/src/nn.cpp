#include "fedlws/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fedlws/rng.hpp"

namespace fedlws {

namespace {

using Index = Eigen::Index;

std::size_t pooled(std::size_t side, bool pool) { return pool ? side / 2 : side; }

bool pools(std::size_t h, std::size_t w) { return h >= 2 && w >= 2; }

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

LayerGroup dense_group(std::string name, std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return {std::move(name), {uniform_tensor({out, in}, bound, rng), Tensor(Shape{out})}};
}

// Activations of the conv stack are stored as (channels, batch*height*width)
// row-major matrices; column index = n*H*W + y*W + x.
struct ConvGeometry {
    Index channels = 0;
    Index batch = 0;
    Index height = 0;
    Index width = 0;
};

Matrix im2col(const Matrix& act, const ConvGeometry& g, Index k) {
    const Index pad = k / 2;
    const Index hw = g.height * g.width;
    Matrix cols = Matrix::Zero(g.channels * k * k, g.batch * hw);
    for (Index c = 0; c < g.channels; ++c) {
        for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) {
                const Index row = (c * k + ky) * k + kx;
                for (Index n = 0; n < g.batch; ++n) {
                    for (Index y = 0; y < g.height; ++y) {
                        const Index iy = y + ky - pad;
                        if (iy < 0 || iy >= g.height) continue;
                        for (Index x = 0; x < g.width; ++x) {
                            const Index ix = x + kx - pad;
                            if (ix < 0 || ix >= g.width) continue;
                            cols(row, n * hw + y * g.width + x) = act(c, n * hw + iy * g.width + ix);
                        }
                    }
                }
            }
        }
    }
    return cols;
}

Matrix col2im(const Matrix& cols, const ConvGeometry& g, Index k) {
    const Index pad = k / 2;
    const Index hw = g.height * g.width;
    Matrix act = Matrix::Zero(g.channels, g.batch * hw);
    for (Index c = 0; c < g.channels; ++c) {
        for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) {
                const Index row = (c * k + ky) * k + kx;
                for (Index n = 0; n < g.batch; ++n) {
                    for (Index y = 0; y < g.height; ++y) {
                        const Index iy = y + ky - pad;
                        if (iy < 0 || iy >= g.height) continue;
                        for (Index x = 0; x < g.width; ++x) {
                            const Index ix = x + kx - pad;
                            if (ix < 0 || ix >= g.width) continue;
                            act(c, n * hw + iy * g.width + ix) += cols(row, n * hw + y * g.width + x);
                        }
                    }
                }
            }
        }
    }
    return act;
}

struct ConvCache {
    ConvGeometry in;
    Index kernel = 0;
    Matrix cols;
    Matrix pre_activation;
    bool pooled = false;
    std::vector<Index> argmax;
};

struct DenseCache {
    Matrix input;
    Matrix pre_activation;
    bool relu = false;
};

/// Forward pass that keeps what backprop needs.
class Network {
public:
    Network(const ModelParams& params, const Tensor& inputs) : params_(params) {
        if (params.layers.empty()) throw ContractError("forward: model has no layers");
        for (const auto& g : params.layers) {
            if (g.tensors.size() != 2) throw ContractError("forward: layer '" + g.name + "' must hold weight and bias");
        }
        run(inputs);
    }

    const Matrix& logits() const { return logits_; }

    ModelParams backward(const Matrix& dlogits) const {
        ModelParams grads = zeros_like(params_);
        Matrix grad = dlogits;
        const std::size_t n_conv = conv_.size();
        for (std::size_t d = dense_.size(); d-- > 0;) {
            const auto& cache = dense_[d];
            auto& gl = grads.layers[n_conv + d];
            if (cache.relu) grad = (cache.pre_activation.array() > 0.0).select(grad, 0.0);
            gl.tensors[0].matrix() = grad.transpose() * cache.input;
            gl.tensors[1].data() = grad.colwise().sum().transpose();
            if (d > 0 || n_conv > 0) grad = grad * params_.layers[n_conv + d].tensors[0].matrix();
        }
        if (n_conv == 0) return grads;

        // (batch, C*H*W) -> (C, batch*H*W)
        {
            const auto& last = conv_.back();
            const Index c = last.pre_activation.rows();
            const Index h = last.pooled ? last.in.height / 2 : last.in.height;
            const Index w = last.pooled ? last.in.width / 2 : last.in.width;
            grad = unflatten(grad, c, last.in.batch, h * w);
        }
        for (std::size_t c = n_conv; c-- > 0;) {
            const auto& cache = conv_[c];
            if (cache.pooled) {
                Matrix up = Matrix::Zero(cache.pre_activation.rows(), cache.pre_activation.cols());
                for (Index ch = 0; ch < grad.rows(); ++ch) {
                    for (Index j = 0; j < grad.cols(); ++j) {
                        up(ch, cache.argmax[static_cast<std::size_t>(ch * grad.cols() + j)]) += grad(ch, j);
                    }
                }
                grad = std::move(up);
            }
            grad = (cache.pre_activation.array() > 0.0).select(grad, 0.0);
            auto& gl = grads.layers[c];
            const auto& weight = params_.layers[c].tensors[0];
            const Index out = static_cast<Index>(weight.dim(0));
            Eigen::Map<Matrix> dw(gl.tensors[0].data().data(), out, weight.size() / out);
            dw = grad * cache.cols.transpose();
            gl.tensors[1].data() = grad.rowwise().sum();
            if (c > 0) {
                Eigen::Map<const Matrix> wm(weight.data().data(), out, weight.size() / out);
                Matrix dcols = wm.transpose() * grad;
                grad = col2im(dcols, cache.in, cache.kernel);
            }
        }
        return grads;
    }

private:
    static Matrix unflatten(const Matrix& flat, Index channels, Index batch, Index hw) {
        Matrix act(channels, batch * hw);
        for (Index n = 0; n < batch; ++n) {
            for (Index c = 0; c < channels; ++c) {
                act.block(c, n * hw, 1, hw) = flat.block(n, c * hw, 1, hw);
            }
        }
        return act;
    }

    void run(const Tensor& inputs) {
        const auto& first = params_.layers.front().tensors[0];
        Matrix act;
        std::size_t l = 0;

        if (first.rank() == 4) {
            if (inputs.rank() != 4) {
                throw ContractError("forward: convolutional model expects (batch, C, H, W) inputs, got " +
                                    shape_string(inputs.shape()));
            }
            ConvGeometry g{static_cast<Index>(inputs.dim(1)), static_cast<Index>(inputs.dim(0)),
                           static_cast<Index>(inputs.dim(2)), static_cast<Index>(inputs.dim(3))};
            const Index hw = g.height * g.width;
            act.resize(g.channels, g.batch * hw);
            for (Index n = 0; n < g.batch; ++n) {
                for (Index c = 0; c < g.channels; ++c) {
                    act.block(c, n * hw, 1, hw) =
                        inputs.data().segment((n * g.channels + c) * hw, hw).transpose();
                }
            }
            for (; l < params_.layers.size() && params_.layers[l].tensors[0].rank() == 4; ++l) {
                act = conv_block(l, act, g);
            }
            // (C, batch*H*W) -> (batch, C*H*W)
            const Index hw2 = g.height * g.width;
            Matrix flat(g.batch, g.channels * hw2);
            for (Index n = 0; n < g.batch; ++n) {
                for (Index c = 0; c < g.channels; ++c) {
                    flat.block(n, c * hw2, 1, hw2) = act.block(c, n * hw2, 1, hw2);
                }
            }
            act = std::move(flat);
        } else {
            if (inputs.rank() != 2) {
                throw ContractError("forward: dense model expects (batch, features) inputs, got " +
                                    shape_string(inputs.shape()));
            }
            act = inputs.matrix();
        }

        for (; l < params_.layers.size(); ++l) {
            const auto& group = params_.layers[l];
            const auto& w = group.tensors[0];
            if (w.rank() != 2) throw ContractError("forward: layer '" + group.name + "' follows a dense layer but is not dense");
            if (static_cast<Index>(w.dim(1)) != act.cols()) {
                throw ContractError("forward: layer '" + group.name + "' expects " + std::to_string(w.dim(1)) +
                                    " inputs, got " + std::to_string(act.cols()));
            }
            DenseCache cache;
            cache.relu = l + 1 < params_.layers.size();
            Matrix z = act * w.matrix().transpose();
            z.rowwise() += group.tensors[1].data().transpose();
            cache.input = std::move(act);
            if (cache.relu) {
                act = z.cwiseMax(0.0);
                cache.pre_activation = std::move(z);
            } else {
                act = std::move(z);
            }
            dense_.push_back(std::move(cache));
        }
        logits_ = std::move(act);
    }

    Matrix conv_block(std::size_t l, const Matrix& act, ConvGeometry& g) {
        const auto& group = params_.layers[l];
        const auto& w = group.tensors[0];
        if (static_cast<Index>(w.dim(1)) != g.channels || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0) {
            throw ContractError("forward: conv layer '" + group.name + "' weight " + shape_string(w.shape()) +
                                " does not fit " + std::to_string(g.channels) + " input channels");
        }
        ConvCache cache;
        cache.in = g;
        cache.kernel = static_cast<Index>(w.dim(2));
        cache.cols = im2col(act, g, cache.kernel);
        const Index out = static_cast<Index>(w.dim(0));
        Eigen::Map<const Matrix> wm(w.data().data(), out, w.size() / out);
        Matrix z = wm * cache.cols;
        z.colwise() += group.tensors[1].data();
        Matrix a = z.cwiseMax(0.0);
        cache.pre_activation = std::move(z);

        g.channels = out;
        cache.pooled = pools(static_cast<std::size_t>(g.height), static_cast<std::size_t>(g.width));
        if (cache.pooled) {
            const Index oh = g.height / 2;
            const Index ow = g.width / 2;
            Matrix p(out, g.batch * oh * ow);
            cache.argmax.resize(static_cast<std::size_t>(p.size()));
            for (Index c = 0; c < out; ++c) {
                for (Index n = 0; n < g.batch; ++n) {
                    for (Index y = 0; y < oh; ++y) {
                        for (Index x = 0; x < ow; ++x) {
                            Index best = n * g.height * g.width + (2 * y) * g.width + 2 * x;
                            for (Index dy = 0; dy < 2; ++dy) {
                                for (Index dx = 0; dx < 2; ++dx) {
                                    const Index idx = n * g.height * g.width + (2 * y + dy) * g.width + 2 * x + dx;
                                    if (a(c, idx) > a(c, best)) best = idx;
                                }
                            }
                            const Index j = n * oh * ow + y * ow + x;
                            p(c, j) = a(c, best);
                            cache.argmax[static_cast<std::size_t>(c * p.cols() + j)] = best;
                        }
                    }
                }
            }
            g.height = oh;
            g.width = ow;
            a = std::move(p);
        }
        conv_.push_back(std::move(cache));
        return a;
    }

    const ModelParams& params_;
    std::vector<ConvCache> conv_;
    std::vector<DenseCache> dense_;
    Matrix logits_;
};

void check_labels(const Matrix& logits, std::span<const Label> labels) {
    if (labels.empty()) throw ContractError("loss: empty batch");
    if (static_cast<Index>(labels.size()) != logits.rows()) {
        throw ContractError("loss: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(logits.rows()) + " samples");
    }
    for (Label y : labels) {
        if (y < 0 || y >= logits.cols()) throw ContractError("loss: label " + std::to_string(y) + " out of range");
    }
}

// Row-wise log-softmax.
Matrix log_softmax(const Matrix& logits) {
    Matrix out = logits;
    for (Index i = 0; i < out.rows(); ++i) {
        const double m = out.row(i).maxCoeff();
        const double lse = m + std::log((out.row(i).array() - m).exp().sum());
        out.row(i).array() -= lse;
    }
    return out;
}

double mean_nll(const Matrix& logp, std::span<const Label> labels) {
    double loss = 0.0;
    for (Index i = 0; i < logp.rows(); ++i) loss -= logp(i, labels[static_cast<std::size_t>(i)]);
    return loss / static_cast<double>(logp.rows());
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

void validate(const ModelSpec& spec) {
    std::vector<std::string> errors;
    auto any_zero = [](const std::vector<std::size_t>& v) { return std::find(v.begin(), v.end(), 0u) != v.end(); };
    if (spec.num_classes == 0) errors.push_back("model.num_classes: must be positive");
    if (spec.kind == ModelKind::mlp) {
        if (spec.layer_sizes.size() < 2) errors.push_back("model.layer_sizes: needs at least input and output sizes");
        if (any_zero(spec.layer_sizes)) errors.push_back("model.layer_sizes: zero-sized layer");
        if (!spec.layer_sizes.empty() && spec.layer_sizes.back() != spec.num_classes) {
            errors.push_back("model.layer_sizes: last size must equal num_classes");
        }
    } else {
        if (spec.input_channels == 0 || spec.input_height == 0 || spec.input_width == 0) {
            errors.push_back("model.input: channels, height and width must be positive");
        }
        if (spec.conv_channels.empty() || spec.conv_channels.size() > 3) {
            errors.push_back("model.conv_channels: between 1 and 3 conv layers required");
        }
        if (any_zero(spec.conv_channels)) errors.push_back("model.conv_channels: zero-sized layer");
        if (spec.kernel_size == 0 || spec.kernel_size % 2 == 0) errors.push_back("model.kernel_size: must be odd");
        if (spec.dense_hidden.size() > 1) errors.push_back("model.dense_hidden: at most one hidden dense layer");
        if (any_zero(spec.dense_hidden)) errors.push_back("model.dense_hidden: zero-sized layer");
    }
    if (!errors.empty()) throw ConfigError(std::move(errors));
}

Shape input_shape(const ModelSpec& spec) {
    if (spec.kind == ModelKind::mlp) return {spec.layer_sizes.at(0)};
    return {spec.input_channels, spec.input_height, spec.input_width};
}

ModelParams init_model(const ModelSpec& spec) {
    validate(spec);
    Rng rng = make_rng(spec.init_seed, {stream::kInit});
    ModelParams params;
    if (spec.kind == ModelKind::mlp) {
        for (std::size_t i = 0; i + 1 < spec.layer_sizes.size(); ++i) {
            params.layers.push_back(
                dense_group("fc" + std::to_string(i + 1), spec.layer_sizes[i], spec.layer_sizes[i + 1], rng));
        }
        return params;
    }

    std::size_t channels = spec.input_channels;
    std::size_t h = spec.input_height;
    std::size_t w = spec.input_width;
    const std::size_t k = spec.kernel_size;
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
        const std::size_t out = spec.conv_channels[i];
        const double bound = 1.0 / std::sqrt(static_cast<double>(channels * k * k));
        params.layers.push_back(
            {"conv" + std::to_string(i + 1), {uniform_tensor({out, channels, k, k}, bound, rng), Tensor(Shape{out})}});
        const bool pool = pools(h, w);
        h = pooled(h, pool);
        w = pooled(w, pool);
        channels = out;
    }
    std::size_t in = channels * h * w;
    std::size_t idx = 1;
    for (std::size_t hidden : spec.dense_hidden) {
        params.layers.push_back(dense_group("fc" + std::to_string(idx++), in, hidden, rng));
        in = hidden;
    }
    params.layers.push_back(dense_group("fc" + std::to_string(idx), in, spec.num_classes, rng));
    return params;
}

Tensor forward(const ModelParams& params, const Tensor& inputs) {
    Network net(params, inputs);
    const Matrix& z = net.logits();
    Tensor out(Shape{static_cast<std::size_t>(z.rows()), static_cast<std::size_t>(z.cols())});
    out.matrix() = z;
    return out;
}

double cross_entropy(const Tensor& logits, std::span<const Label> labels) {
    const Matrix z = logits.matrix();
    check_labels(z, labels);
    return mean_nll(log_softmax(z), labels);
}

LossAndGrad loss_and_grad(const ModelParams& params, const Tensor& inputs, std::span<const Label> labels) {
    if (labels.empty() || inputs.size() == 0) throw ContractError("loss_and_grad: empty batch");
    Network net(params, inputs);
    const Matrix& z = net.logits();
    check_labels(z, labels);
    const Matrix logp = log_softmax(z);
    LossAndGrad out;
    out.loss = mean_nll(logp, labels);
    Matrix dz = logp.array().exp();
    for (Index i = 0; i < dz.rows(); ++i) dz(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    dz /= static_cast<double>(dz.rows());
    out.grads = net.backward(dz);
    return out;
}

Evaluation evaluate(const ModelParams& params, const Tensor& inputs, std::span<const Label> labels) {
    Network net(params, inputs);
    const Matrix& z = net.logits();
    check_labels(z, labels);
    Evaluation ev;
    ev.loss = mean_nll(log_softmax(z), labels);
    std::size_t correct = 0;
    for (Index i = 0; i < z.rows(); ++i) {
        Index arg = 0;
        z.row(i).maxCoeff(&arg);
        if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(z.rows());
    return ev;
}

double SgdConfig::effective_lr(int round) const {
    return learning_rate * std::pow(lr_decay_per_round, static_cast<double>(round));
}

void sgd_step(ModelParams& params, const ModelParams& grads, SgdState& state, const SgdConfig& cfg, int round) {
    require_compatible(params, grads, "sgd_step");
    if (state.velocity.layers.empty()) {
        state.velocity = zeros_like(params);
    } else {
        require_compatible(params, state.velocity, "sgd_step");
    }
    const double lr = cfg.effective_lr(round);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        for (std::size_t i = 0; i < params.layers[l].tensors.size(); ++i) {
            auto& w = params.layers[l].tensors[i].data();
            auto& v = state.velocity.layers[l].tensors[i].data();
            const auto& g = grads.layers[l].tensors[i].data();
            v = cfg.momentum * v + g + cfg.weight_decay * w;
            w -= lr * v;
        }
    }
}

}  // namespace fedlws
