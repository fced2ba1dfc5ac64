#pragma once

#include <optional>
#include <vector>

#include "stripmlp/tensor.hpp"

namespace stripmlp::ops {

// ---------------------------------------------------------------------------
// Dense kernels. All of them produce fresh tensors, never alias inputs,
// and verify the result is finite. Reduction order per output element is
// fixed, so results do not depend on the worker count.
// ---------------------------------------------------------------------------

//! y[r,o] = sum_i x[r,i] * w[o,i] + b[o]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& grad,
                     Tensor* dx, Tensor* dw, Tensor* db);

//! Grouped cross-correlation with zero padding, NCHW layout.
Tensor conv2d(const Tensor& x, const ConvSpec& spec, const Tensor& w, const Tensor* b);
void conv2d_backward(const Tensor& x, const ConvSpec& spec, const Tensor& w,
                     const Tensor& grad, Tensor* dx, Tensor* dw, Tensor* db);

//! Per-channel batch normalization over (N,H,W).
//!
//! Train mode normalizes with biased batch statistics (epsilon added to the
//! variance) and, when update_running is set, folds them into the running
//! stats with the given momentum (unbiased variance, matching the usual
//! convention). Eval mode normalizes with the running stats.
struct BnResult {
    Tensor y;
    Tensor mean;     // statistics actually used, per channel
    Tensor inv_std;  // 1/sqrt(var + eps)
};
BnResult batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      Tensor& running_mean, Tensor& running_var, bool training,
                      bool update_running, double eps, double momentum);
void batch_norm2d_backward(const Tensor& x, const Tensor& gamma, const Tensor& mean,
                           const Tensor& inv_std, bool training, const Tensor& grad,
                           Tensor* dx, Tensor* dgamma, Tensor* dbeta);

//! Exact x * Phi(x) with the Gaussian CDF in erf form.
Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& grad);

//! Max-subtracted exponentials normalized along the given axis.
Tensor softmax_axis(const Tensor& x, int axis);
Tensor softmax_backward(const Tensor& y, const Tensor& grad, int axis);

//! Mean over spatial positions: (N,C,H,W) -> (N,C).
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& grad, Index h, Index w);

// Pure data movement -------------------------------------------------------

Tensor permute(const Tensor& x, const std::vector<int>& perm);
std::vector<int> inverse_permutation(const std::vector<int>& perm);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<Index>& sizes);

// Elementwise and broadcast helpers ----------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sqrt_elem(const Tensor& a);
Tensor sum_all(const Tensor& a);  // -> shape {1}

//! Sum over spatial positions: (N,C,H,W) -> (N,C).
Tensor sum_spatial(const Tensor& x);
Tensor broadcast_spatial(const Tensor& nc, Index h, Index w);  // (N,C) -> (N,C,H,W)

//! Replace each row of an (N,C) tensor by its mean, keeping the shape.
Tensor row_mean_broadcast(const Tensor& nc);

//! Sum over batch and spatial positions: (N,C,H,W) -> (C).
Tensor sum_nhw(const Tensor& x);

//! y[n,c,h,w] = x[n,c,h,w] * s[n,c]
Tensor scale_channels(const Tensor& x, const Tensor& s);

//! y[n,c,h,w] = x[n,c,h,w] * gain[c] + shift[c]
Tensor channel_affine(const Tensor& x, const Tensor& gain, const Tensor& shift);

//! Mean cross-entropy of logits against integer labels with label smoothing.
//! Returns the scalar loss; softmax probabilities are written to *probs
//! when requested (used by the backward pass).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                     double smoothing, Tensor* probs);
Tensor cross_entropy_backward(const Tensor& probs, const std::vector<int>& labels,
                              double smoothing, double upstream);

}  // namespace stripmlp::ops
