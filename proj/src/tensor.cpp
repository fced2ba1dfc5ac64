#include "stripmlp/tensor.hpp"

#include <cmath>
#include <sstream>

namespace stripmlp {

Index shape_numel(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << shape[i] << (i + 1 < shape.size() ? "," : "");
    }
    os << ")";
    return os.str();
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    double* p = t.mut();
    for (Index i = 0; i < t.numel(); ++i) {
        p[i] = value;
    }
    return t;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("reshape from " + shape_str(shape_) + " to " + shape_str(shape) +
                         " changes element count");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

bool Tensor::all_finite() const {
    const double* p = data();
    const Index n = numel();
    for (Index i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) {
            return false;
        }
    }
    return true;
}

void Tensor::ensure_finite(const std::string& context) const {
    if (!all_finite()) {
        throw NumericError(context + ": non-finite value in tensor of shape " +
                           shape_str(shape_));
    }
}

void Tensor::validate() const {
    for (Index d : shape_) {
        if (d < 0) {
            throw ShapeError("negative dimension in shape " + shape_str(shape_));
        }
    }
}

Index Tensor::offset(std::initializer_list<Index> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
        throw ShapeError("index rank mismatch for shape " + shape_str(shape_));
    }
    Index off = 0;
    int axis = 0;
    for (Index i : idx) {
        if (i < 0 || i >= shape_[static_cast<std::size_t>(axis)]) {
            throw ShapeError("index out of bounds for shape " + shape_str(shape_));
        }
        off = off * shape_[static_cast<std::size_t>(axis)] + i;
        ++axis;
    }
    return off;
}

void ConvSpec::validate() const {
    if (in_channels <= 0 || out_channels <= 0) {
        throw ConfigError("conv channels must be positive");
    }
    if (kernel_h <= 0 || kernel_w <= 0 || stride_h <= 0 || stride_w <= 0) {
        throw ConfigError("conv kernel and stride must be positive");
    }
    if (pad_h < 0 || pad_w < 0) {
        throw ConfigError("conv padding must be non-negative");
    }
    if (groups <= 0 || in_channels % groups != 0 || out_channels % groups != 0) {
        throw ConfigError("conv channels (" + std::to_string(in_channels) + "," +
                          std::to_string(out_channels) + ") not divisible by groups " +
                          std::to_string(groups));
    }
}

Index ConvSpec::out_h(Index in_h) const {
    const Index span = in_h + 2 * pad_h - kernel_h;
    if (span < 0 || span % stride_h != 0) {
        throw ConfigError("conv output height is not integral for input " +
                          std::to_string(in_h));
    }
    return span / stride_h + 1;
}

Index ConvSpec::out_w(Index in_w) const {
    const Index span = in_w + 2 * pad_w - kernel_w;
    if (span < 0 || span % stride_w != 0) {
        throw ConfigError("conv output width is not integral for input " +
                          std::to_string(in_w));
    }
    return span / stride_w + 1;
}

}  // namespace stripmlp
