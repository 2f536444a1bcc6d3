#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fedlws/error.hpp"

namespace fedlws {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major tensor. Storage is a contiguous Eigen column vector so every
/// element-wise operation can be written as an Eigen expression.
template <typename Scalar>
class BasicTensor {
public:
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatrixMap = Eigen::Map<Matrix>;
    using ConstMatrixMap = Eigen::Map<const Matrix>;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape)
        : shape_(std::move(shape)), data_(Vector::Zero(static_cast<Eigen::Index>(shape_size(shape_)))) {}

    BasicTensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::size_t>(data_.size()) != shape_size(shape_)) {
            throw ContractError("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    Eigen::Index size() const noexcept { return data_.size(); }

    Vector& data() noexcept { return data_; }
    const Vector& data() const noexcept { return data_; }

    Scalar& operator[](Eigen::Index i) { return data_[i]; }
    Scalar operator[](Eigen::Index i) const { return data_[i]; }

    /// View as a (dim(0), size/dim(0)) row-major matrix.
    MatrixMap matrix() {
        const auto rows = static_cast<Eigen::Index>(shape_.empty() ? 1 : shape_[0]);
        return MatrixMap(data_.data(), rows, rows == 0 ? 0 : data_.size() / rows);
    }
    ConstMatrixMap matrix() const {
        const auto rows = static_cast<Eigen::Index>(shape_.empty() ? 1 : shape_[0]);
        return ConstMatrixMap(data_.data(), rows, rows == 0 ? 0 : data_.size() / rows);
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    Vector data_;
};

/// One conceptual layer: its weight tensor followed by its bias tensor, if any.
template <typename Scalar>
struct BasicLayerGroup {
    std::string name;
    std::vector<BasicTensor<Scalar>> tensors;

    friend bool operator==(const BasicLayerGroup&, const BasicLayerGroup&) = default;
};

template <typename Scalar>
struct BasicModelParams {
    std::vector<BasicLayerGroup<Scalar>> layers;

    std::size_t num_layers() const noexcept { return layers.size(); }

    friend bool operator==(const BasicModelParams&, const BasicModelParams&) = default;
};

using Tensor = BasicTensor<double>;
using LayerGroup = BasicLayerGroup<double>;
using ModelParams = BasicModelParams<double>;
using Vector = Tensor::Vector;
using Matrix = Tensor::Matrix;

template <typename Scalar>
bool compatible(const BasicLayerGroup<Scalar>& a, const BasicLayerGroup<Scalar>& b) {
    if (a.name != b.name || a.tensors.size() != b.tensors.size()) return false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        if (a.tensors[i].shape() != b.tensors[i].shape()) return false;
    }
    return true;
}

/// Names, group sizes and every shape match positionally.
template <typename Scalar>
bool compatible(const BasicModelParams<Scalar>& a, const BasicModelParams<Scalar>& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (!compatible(a.layers[l], b.layers[l])) return false;
    }
    return true;
}

template <typename Scalar>
void require_compatible(const BasicModelParams<Scalar>& a, const BasicModelParams<Scalar>& b,
                        const char* context) {
    if (!compatible(a, b)) {
        throw ContractError(std::string(context) + ": model parameters are not aggregation-compatible");
    }
}

template <typename Scalar>
std::size_t num_elements(const BasicLayerGroup<Scalar>& g) {
    std::size_t n = 0;
    for (const auto& t : g.tensors) n += static_cast<std::size_t>(t.size());
    return n;
}

template <typename Scalar>
std::size_t num_elements(const BasicModelParams<Scalar>& p) {
    std::size_t n = 0;
    for (const auto& g : p.layers) n += num_elements(g);
    return n;
}

template <typename Scalar>
Scalar squared_norm(const BasicLayerGroup<Scalar>& g) {
    Scalar s{0};
    for (const auto& t : g.tensors) s += t.data().squaredNorm();
    return s;
}

/// L2 norm over the flattened concatenation of the group's tensors.
template <typename Scalar>
Scalar norm(const BasicLayerGroup<Scalar>& g) {
    using std::sqrt;
    return sqrt(squared_norm(g));
}

template <typename Scalar>
Scalar squared_norm(const BasicModelParams<Scalar>& p) {
    Scalar s{0};
    for (const auto& g : p.layers) s += squared_norm(g);
    return s;
}

template <typename Scalar>
Scalar norm(const BasicModelParams<Scalar>& p) {
    using std::sqrt;
    return sqrt(squared_norm(p));
}

/// ‖a_l − b_l‖², without materialising the difference.
template <typename Scalar>
Scalar squared_distance(const BasicLayerGroup<Scalar>& a, const BasicLayerGroup<Scalar>& b) {
    Scalar s{0};
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        s += (a.tensors[i].data() - b.tensors[i].data()).squaredNorm();
    }
    return s;
}

template <typename Scalar>
BasicModelParams<Scalar> zeros_like(const BasicModelParams<Scalar>& p) {
    BasicModelParams<Scalar> out;
    out.layers.reserve(p.layers.size());
    for (const auto& g : p.layers) {
        BasicLayerGroup<Scalar> z{g.name, {}};
        for (const auto& t : g.tensors) z.tensors.emplace_back(t.shape());
        out.layers.push_back(std::move(z));
    }
    return out;
}

/// y += alpha * x
template <typename Scalar>
void axpy(Scalar alpha, const BasicModelParams<Scalar>& x, BasicModelParams<Scalar>& y) {
    for (std::size_t l = 0; l < y.layers.size(); ++l) {
        for (std::size_t i = 0; i < y.layers[l].tensors.size(); ++i) {
            y.layers[l].tensors[i].data() += alpha * x.layers[l].tensors[i].data();
        }
    }
}

template <typename Scalar>
void scale(BasicLayerGroup<Scalar>& g, Scalar factor) {
    for (auto& t : g.tensors) t.data() *= factor;
}

template <typename Scalar>
void scale(BasicModelParams<Scalar>& p, Scalar factor) {
    for (auto& g : p.layers) scale(g, factor);
}

/// Element-wise a − b.
template <typename Scalar>
BasicModelParams<Scalar> difference(const BasicModelParams<Scalar>& a, const BasicModelParams<Scalar>& b) {
    require_compatible(a, b, "difference");
    BasicModelParams<Scalar> out = a;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        for (std::size_t i = 0; i < out.layers[l].tensors.size(); ++i) {
            out.layers[l].tensors[i].data() -= b.layers[l].tensors[i].data();
        }
    }
    return out;
}

template <typename Scalar>
typename BasicTensor<Scalar>::Vector flatten(const BasicLayerGroup<Scalar>& g) {
    typename BasicTensor<Scalar>::Vector v(static_cast<Eigen::Index>(num_elements(g)));
    Eigen::Index offset = 0;
    for (const auto& t : g.tensors) {
        v.segment(offset, t.size()) = t.data();
        offset += t.size();
    }
    return v;
}

template <typename Scalar>
typename BasicTensor<Scalar>::Vector flatten(const BasicModelParams<Scalar>& p) {
    typename BasicTensor<Scalar>::Vector v(static_cast<Eigen::Index>(num_elements(p)));
    Eigen::Index offset = 0;
    for (const auto& g : p.layers) {
        for (const auto& t : g.tensors) {
            v.segment(offset, t.size()) = t.data();
            offset += t.size();
        }
    }
    return v;
}

template <typename Scalar>
bool all_finite(const BasicModelParams<Scalar>& p) {
    for (const auto& g : p.layers) {
        for (const auto& t : g.tensors) {
            if (!t.data().allFinite()) return false;
        }
    }
    return true;
}

}  // namespace fedlws
