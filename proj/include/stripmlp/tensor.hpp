#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace stripmlp {

using Index = std::int64_t;
using Shape = std::vector<Index>;

//! Base class for every error this library throws.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

//! Incompatible tensor shapes at an operation boundary.
class ShapeError : public Error {
public:
    using Error::Error;
};

//! Invalid layer/model configuration (divisibility, bad kernel, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

//! A kernel produced or consumed a non-finite value.
class NumericError : public Error {
public:
    using Error::Error;
};

//! API misuse (e.g. backward from a non-scalar).
class UsageError : public Error {
public:
    using Error::Error;
};

//! File / serialization failure.
class IoError : public Error {
public:
    using Error::Error;
};

//! Malformed dataset contents.
class DataError : public Error {
public:
    using Error::Error;
};

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

//! Dense row-major tensor of 64-bit floats.
//!
//! Values are immutable once a tensor escapes the producing operation;
//! copies share the underlying buffer. mut() is only legal while the
//! buffer has a single owner (i.e. during construction of a result).
class Tensor {
public:
    Tensor() : data_(std::make_shared<std::vector<double>>()) {}

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(
              static_cast<std::size_t>(shape_numel(shape_)), 0.0)) {
        validate();
    }

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(std::move(values))) {
        validate();
        if (static_cast<Index>(data_->size()) != shape_numel(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_->size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    Index numel() const { return static_cast<Index>(data_->size()); }
    Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool defined() const { return !shape_.empty() || !data_->empty(); }

    const double* data() const { return data_->data(); }

    //! Mutable access; requires unique ownership of the buffer.
    double* mut() {
        if (data_.use_count() != 1) {
            detach_copy();
        }
        return data_->data();
    }

    double value() const {
        if (numel() != 1) {
            throw UsageError("value() requires a single-element tensor, got shape " +
                             shape_str(shape_));
        }
        return (*data_)[0];
    }

    double at(std::initializer_list<Index> idx) const { return data()[offset(idx)]; }

    //! Deep copy with a fresh buffer.
    Tensor clone() const { return Tensor(shape_, *data_); }

    //! Same buffer under a new shape; element count must match.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const;
    void ensure_finite(const std::string& context) const;

private:
    void validate() const;
    void detach_copy() { data_ = std::make_shared<std::vector<double>>(*data_); }
    Index offset(std::initializer_list<Index> idx) const;

    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
};

//! Grouped 2-D cross-correlation description.
struct ConvSpec {
    Index in_channels = 0;
    Index out_channels = 0;
    Index kernel_h = 1, kernel_w = 1;
    Index stride_h = 1, stride_w = 1;
    Index pad_h = 0, pad_w = 0;
    Index groups = 1;
    bool has_bias = true;

    void validate() const;
    Index out_h(Index in_h) const;
    Index out_w(Index in_w) const;
    //! Weight tensor shape: [out, in/groups, kh, kw].
    Shape weight_shape() const {
        return {out_channels, in_channels / groups, kernel_h, kernel_w};
    }
    Index weight_count() const {
        return out_channels * (in_channels / groups) * kernel_h * kernel_w;
    }
    Index bias_count() const { return has_bias ? out_channels : 0; }
    Index param_count() const { return weight_count() + bias_count(); }
    //! Multiply-accumulate count for one sample at the given input size.
    Index flops(Index in_h, Index in_w) const {
        return out_h(in_h) * out_w(in_w) * out_channels * (in_channels / groups) *
               kernel_h * kernel_w;
    }
};

}  // namespace stripmlp
