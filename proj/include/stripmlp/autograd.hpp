#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stripmlp/kernels.hpp"
#include "stripmlp/tensor.hpp"

namespace stripmlp::autograd {

class Node;
using Var = std::shared_ptr<Node>;

//! One vertex of the dynamic tape: a value plus the rule that maps its
//! upstream gradient onto its parents. Graphs are rebuilt every forward
//! pass and are confined to a single logical thread.
class Node {
public:
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<Var> parents;
    std::function<void(const Tensor&)> backprop;
    std::string label;

    void clear_grad() {
        grad = Tensor();
        has_grad = false;
    }
};

//! Leaf with no parents; requires_grad marks it as a trainable input.
Var leaf(Tensor value, bool requires_grad, std::string label = "");
Var constant(Tensor value);

//! Gradient tracking is on by default; a NoGradGuard suspends it for the
//! current thread so inference builds no graph and frees intermediates.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

//! Add g into v's gradient accumulator (summation on fan-out).
void accumulate(const Var& v, const Tensor& g);

//! Reverse sweep from a scalar loss; every reachable node is visited once
//! in reverse topological order. Gradients land on requires_grad leaves.
void backward(const Var& loss);

// Differentiable wrappers over the dense kernels ----------------------------

Var linear(const Var& x, const Var& w, const Var& b);
Var conv2d(const Var& x, const ConvSpec& spec, const Var& w, const Var& b);
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, bool update_running,
                 double eps = 1e-5, double momentum = 0.1);
Var gelu(const Var& x);
Var softmax_axis(const Var& x, int axis);
Var global_avg_pool(const Var& x);
Var permute(const Var& x, std::vector<int> perm);
Var reshape(const Var& x, Shape shape);
Var concat(const std::vector<Var>& parts, int axis);
std::vector<Var> split(const Var& x, int axis, std::vector<Index> sizes);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sqrt_elem(const Var& a);
Var sum_all(const Var& a);
Var sum_spatial(const Var& x);
Var row_mean_broadcast(const Var& nc);
Var scale_channels(const Var& x, const Var& s);
Var channel_affine(const Var& x, const Var& gain, const Var& shift);
Var cross_entropy(const Var& logits, const std::vector<int>& labels, double smoothing);

// Verification oracle --------------------------------------------------------

//! Compare the analytic gradient of `target` against central differences.
//!
//! build() must reconstruct the same scalar graph from the current leaf
//! values on every call (no running-stat updates inside). Returns the
//! maximum over coordinates of |g_fd - g| / max(1, |g|).
double finite_diff_check(const std::function<Var()>& build, const Var& target,
                         double eps = 1e-5);

}  // namespace stripmlp::autograd
