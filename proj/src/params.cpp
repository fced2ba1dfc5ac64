#include "stripmlp/params.hpp"

namespace stripmlp {

autograd::Var ParamStore::add(std::string name, Tensor value, ParamRole role) {
    if (index_.count(name) != 0) {
        throw ConfigError("duplicate parameter name: " + name);
    }
    ParamEntry entry;
    entry.name = std::move(name);
    entry.role = role;
    entry.trainable = role != ParamRole::Buffer;
    entry.decay = role == ParamRole::Weight;
    entry.var = autograd::leaf(std::move(value), entry.trainable, entry.name);
    index_[entry.name] = entries_.size();
    entries_.push_back(entry);
    return entries_.back().var;
}

autograd::Var ParamStore::add_buffer(std::string name, Tensor value) {
    return add(std::move(name), std::move(value), ParamRole::Buffer);
}

const ParamEntry& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ConfigError("unknown parameter: " + name);
    }
    return entries_[it->second];
}

ParamEntry& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ConfigError("unknown parameter: " + name);
    }
    return entries_[it->second];
}

Index ParamStore::parameter_count() const {
    Index n = 0;
    for (const ParamEntry& e : entries_) {
        if (e.trainable) {
            n += e.var->value.numel();
        }
    }
    return n;
}

Index ParamStore::weight_count() const {
    Index n = 0;
    for (const ParamEntry& e : entries_) {
        if (e.role == ParamRole::Weight || e.role == ParamRole::NormGain ||
            e.role == ParamRole::NormShift) {
            n += e.var->value.numel();
        }
    }
    return n;
}

Index ParamStore::bias_count() const {
    Index n = 0;
    for (const ParamEntry& e : entries_) {
        if (e.role == ParamRole::Bias) {
            n += e.var->value.numel();
        }
    }
    return n;
}

void ParamStore::zero_grad() const {
    for (const ParamEntry& e : entries_) {
        e.var->clear_grad();
    }
}

Tensor Rng::trunc_normal(Shape shape, double sigma) {
    Tensor t(std::move(shape));
    double* p = t.mut();
    std::normal_distribution<double> dist(0.0, sigma);
    for (Index i = 0; i < t.numel(); ++i) {
        double v = dist(gen_);
        while (std::abs(v) > 2.0 * sigma) {
            v = dist(gen_);
        }
        p[i] = v;
    }
    return t;
}

}  // namespace stripmlp
