#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "stripmlp/autograd.hpp"
#include "stripmlp/tensor.hpp"

namespace stripmlp {

enum class ParamRole { Weight, Bias, NormGain, NormShift, Buffer };

struct ParamEntry {
    std::string name;
    autograd::Var var;
    ParamRole role = ParamRole::Weight;
    bool trainable = true;
    //! Weight-decay eligibility: multiplicative weights only; biases and
    //! normalization gains/shifts are exempt.
    bool decay = false;
};

//! Named, ordered collection of learnable tensors and buffers. Iteration
//! order is registration order and therefore deterministic.
class ParamStore {
public:
    autograd::Var add(std::string name, Tensor value, ParamRole role);
    //! Non-trainable state (running statistics).
    autograd::Var add_buffer(std::string name, Tensor value);

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<ParamEntry>& entries() { return entries_; }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const ParamEntry& at(const std::string& name) const;
    ParamEntry& at(const std::string& name);

    Index parameter_count() const;  // trainable entries
    Index weight_count() const;     // entries with role Weight + norm gains/shifts
    Index bias_count() const;

    void zero_grad() const;

private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

//! Deterministic source for parameter initialization and data synthesis.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double normal(double mean = 0.0, double sigma = 1.0) {
        std::normal_distribution<double> d(mean, sigma);
        return d(gen_);
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen_);
    }
    std::uint64_t next() { return gen_(); }

    //! Normal(0, sigma) resampled until within two sigmas.
    Tensor trunc_normal(Shape shape, double sigma);

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace stripmlp
