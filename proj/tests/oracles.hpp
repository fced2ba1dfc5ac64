#pragma once

// Reference implementations used only by tests. Each oracle is a direct
// transcription of the defining formula, written independently of the
// library kernels it checks (no im2col, no packing tricks).

#include <cmath>
#include <random>
#include <vector>

#include "stripmlp/tensor.hpp"

namespace oracle {

using stripmlp::ConvSpec;
using stripmlp::Index;
using stripmlp::Shape;
using stripmlp::Tensor;

inline double& at4(std::vector<double>& v, const Shape& s, Index a, Index b, Index c,
                   Index d) {
    return v[static_cast<std::size_t>(((a * s[1] + b) * s[2] + c) * s[3] + d)];
}

inline double get4(const Tensor& t, Index a, Index b, Index c, Index d) {
    const Shape& s = t.shape();
    return t.data()[((a * s[1] + b) * s[2] + c) * s[3] + d];
}

//! Grouped cross-correlation by quintuple loop over output coordinates.
inline Tensor naive_conv2d(const Tensor& x, const ConvSpec& sp, const Tensor& w,
                           const Tensor* bias) {
    const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const Index oh = sp.out_h(h), ow = sp.out_w(wd);
    const Index cig = cin / sp.groups, cog = sp.out_channels / sp.groups;
    Shape os{n, sp.out_channels, oh, ow};
    std::vector<double> out(static_cast<std::size_t>(stripmlp::shape_numel(os)), 0.0);
    for (Index ni = 0; ni < n; ++ni) {
        for (Index co = 0; co < sp.out_channels; ++co) {
            const Index g = co / cog;
            for (Index yo = 0; yo < oh; ++yo) {
                for (Index xo = 0; xo < ow; ++xo) {
                    double acc = bias ? bias->data()[co] : 0.0;
                    for (Index ci = 0; ci < cig; ++ci) {
                        for (Index ky = 0; ky < sp.kernel_h; ++ky) {
                            for (Index kx = 0; kx < sp.kernel_w; ++kx) {
                                const Index yi = yo * sp.stride_h + ky - sp.pad_h;
                                const Index xi = xo * sp.stride_w + kx - sp.pad_w;
                                if (yi < 0 || yi >= h || xi < 0 || xi >= wd) {
                                    continue;
                                }
                                acc += get4(x, ni, g * cig + ci, yi, xi) *
                                       get4(w, co, ci, ky, kx);
                            }
                        }
                    }
                    at4(out, os, ni, co, yo, xo) = acc;
                }
            }
        }
    }
    return Tensor(os, std::move(out));
}

//! Explicit im2col followed by a plain triple-loop matmul (groups = 1).
inline Tensor im2col_matmul_conv(const Tensor& x, const ConvSpec& sp, const Tensor& w,
                                 const Tensor* bias) {
    const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const Index oh = sp.out_h(h), ow = sp.out_w(wd);
    const Index k = cin * sp.kernel_h * sp.kernel_w;
    Shape os{n, sp.out_channels, oh, ow};
    std::vector<double> out(static_cast<std::size_t>(stripmlp::shape_numel(os)), 0.0);
    for (Index ni = 0; ni < n; ++ni) {
        std::vector<double> col(static_cast<std::size_t>(k * oh * ow), 0.0);
        Index row = 0;
        for (Index ci = 0; ci < cin; ++ci) {
            for (Index ky = 0; ky < sp.kernel_h; ++ky) {
                for (Index kx = 0; kx < sp.kernel_w; ++kx, ++row) {
                    Index pos = 0;
                    for (Index yo = 0; yo < oh; ++yo) {
                        for (Index xo = 0; xo < ow; ++xo, ++pos) {
                            const Index yi = yo * sp.stride_h + ky - sp.pad_h;
                            const Index xi = xo * sp.stride_w + kx - sp.pad_w;
                            if (yi >= 0 && yi < h && xi >= 0 && xi < wd) {
                                col[static_cast<std::size_t>(row * oh * ow + pos)] =
                                    get4(x, ni, ci, yi, xi);
                            }
                        }
                    }
                }
            }
        }
        for (Index co = 0; co < sp.out_channels; ++co) {
            for (Index pos = 0; pos < oh * ow; ++pos) {
                double acc = bias ? bias->data()[co] : 0.0;
                for (Index kk = 0; kk < k; ++kk) {
                    acc += w.data()[co * k + kk] *
                           col[static_cast<std::size_t>(kk * oh * ow + pos)];
                }
                at4(out, os, ni, co, pos / ow, pos % ow) = acc;
            }
        }
    }
    return Tensor(os, std::move(out));
}

//! Plain per-axis MLP: every column j of each slice mapped by the same
//! matrix (out[:,j] = W * x[:,j]) when column_axis, rows otherwise.
inline Tensor axial_mlp(const Tensor& x, const Tensor& w, bool column_axis) {
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    Shape os = x.shape();
    std::vector<double> out(static_cast<std::size_t>(x.numel()), 0.0);
    for (Index ni = 0; ni < n; ++ni) {
        for (Index ci = 0; ci < c; ++ci) {
            if (column_axis) {
                for (Index j = 0; j < wd; ++j) {
                    for (Index o = 0; o < h; ++o) {
                        double acc = 0.0;
                        for (Index i = 0; i < h; ++i) {
                            acc += w.data()[o * h + i] * get4(x, ni, ci, i, j);
                        }
                        at4(out, os, ni, ci, o, j) = acc;
                    }
                }
            } else {
                for (Index i = 0; i < h; ++i) {
                    for (Index o = 0; o < wd; ++o) {
                        double acc = 0.0;
                        for (Index jj = 0; jj < wd; ++jj) {
                            acc += w.data()[o * wd + jj] * get4(x, ni, ci, i, jj);
                        }
                        at4(out, os, ni, ci, i, o) = acc;
                    }
                }
            }
        }
    }
    return Tensor(os, std::move(out));
}

//! CGSMM reference, written directly from the strip-layer equations.
//!
//! Channel patches follow the strided split c = slice * P + patch. Stage
//! order: row-direction strip map (full mix over W, 3-tap band over H),
//! fuse with the original input (2C -> C pointwise), column-direction
//! strip map (full mix over H, k-tap band over W), second fuse with the
//! original input. Strip weights per patch are [L, k*L] with the band
//! concatenation ordered tap-major, biases per patch are [L].
struct CgsmmOracleParams {
    // weight_row[p][o * (k*W) + t*W + i], bias_row[p][o]
    std::vector<std::vector<double>> weight_row, weight_col;
    std::vector<std::vector<double>> bias_row, bias_col;
    // fuse weights are [C, 2C]; first C input channels = mixed, last C = original
    std::vector<double> fuse_row_w, fuse_row_b;
    std::vector<double> fuse_col_w, fuse_col_b;
};

inline Tensor cgsmm_reference(const Tensor& x, const CgsmmOracleParams& pr, Index patches,
                              Index strip_k) {
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const Index half = (strip_k - 1) / 2;
    const Shape s4 = x.shape();
    auto patch_of = [&](Index ci) { return ci % patches; };

    // Row-direction map: out[h, o] = sum_t sum_i W[o, t*W+i] * in[h + t - half, i]
    std::vector<double> mixed(static_cast<std::size_t>(x.numel()), 0.0);
    for (Index ni = 0; ni < n; ++ni) {
        for (Index ci = 0; ci < c; ++ci) {
            const Index p = patch_of(ci);
            for (Index hh = 0; hh < h; ++hh) {
                for (Index o = 0; o < w; ++o) {
                    double acc = pr.bias_row[static_cast<std::size_t>(p)]
                                            [static_cast<std::size_t>(o)];
                    for (Index t = 0; t < strip_k; ++t) {
                        const Index hi = hh + t - half;
                        if (hi < 0 || hi >= h) {
                            continue;
                        }
                        for (Index i = 0; i < w; ++i) {
                            acc += pr.weight_row[static_cast<std::size_t>(p)]
                                                [static_cast<std::size_t>(
                                                     o * strip_k * w + t * w + i)] *
                                   get4(x, ni, ci, hi, i);
                        }
                    }
                    at4(mixed, s4, ni, ci, hh, o) = acc;
                }
            }
        }
    }

    auto fuse = [&](const std::vector<double>& m, const std::vector<double>& fw,
                    const std::vector<double>& fb) {
        std::vector<double> out(static_cast<std::size_t>(x.numel()), 0.0);
        for (Index ni = 0; ni < n; ++ni) {
            for (Index co = 0; co < c; ++co) {
                for (Index hh = 0; hh < h; ++hh) {
                    for (Index ww = 0; ww < w; ++ww) {
                        double acc = fb[static_cast<std::size_t>(co)];
                        for (Index ci = 0; ci < c; ++ci) {
                            acc += fw[static_cast<std::size_t>(co * 2 * c + ci)] *
                                   m[static_cast<std::size_t>(
                                       ((ni * c + ci) * h + hh) * w + ww)];
                            acc += fw[static_cast<std::size_t>(co * 2 * c + c + ci)] *
                                   get4(x, ni, ci, hh, ww);
                        }
                        out[static_cast<std::size_t>(((ni * c + co) * h + hh) * w + ww)] =
                            acc;
                    }
                }
            }
        }
        return out;
    };

    std::vector<double> fused = fuse(mixed, pr.fuse_row_w, pr.fuse_row_b);

    // Column-direction map on the fused feature.
    std::vector<double> mixed2(static_cast<std::size_t>(x.numel()), 0.0);
    for (Index ni = 0; ni < n; ++ni) {
        for (Index ci = 0; ci < c; ++ci) {
            const Index p = patch_of(ci);
            for (Index o = 0; o < h; ++o) {
                for (Index ww = 0; ww < w; ++ww) {
                    double acc = pr.bias_col[static_cast<std::size_t>(p)]
                                            [static_cast<std::size_t>(o)];
                    for (Index t = 0; t < strip_k; ++t) {
                        const Index wi = ww + t - half;
                        if (wi < 0 || wi >= w) {
                            continue;
                        }
                        for (Index i = 0; i < h; ++i) {
                            acc += pr.weight_col[static_cast<std::size_t>(p)]
                                                [static_cast<std::size_t>(
                                                     o * strip_k * h + t * h + i)] *
                                   fused[static_cast<std::size_t>(
                                       ((ni * c + ci) * h + i) * w + wi)];
                        }
                    }
                    at4(mixed2, s4, ni, ci, o, ww) = acc;
                }
            }
        }
    }

    std::vector<double> out = fuse(mixed2, pr.fuse_col_w, pr.fuse_col_b);
    return Tensor(s4, std::move(out));
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(static_cast<std::size_t>(stripmlp::shape_numel(shape)));
    for (double& x : v) {
        x = dist(rng);
    }
    return Tensor(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (Index i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

inline double max_abs(const Tensor& a) {
    double m = 0.0;
    for (Index i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a.data()[i]));
    }
    return m;
}

//! ||a - b||_inf / max(1, ||b||_inf)
inline double rel_diff(const Tensor& a, const Tensor& b) {
    return max_abs_diff(a, b) / std::max(1.0, max_abs(b));
}

}  // namespace oracle
