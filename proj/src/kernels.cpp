#include "stripmlp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stripmlp/threading.hpp"

namespace stripmlp::ops {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require(bool cond, const char* msg) {
    if (!cond) {
        throw ShapeError(msg);
    }
}

// C[M,N] += A[M,K] * B[K,N]; deterministic k-order per output element.
void mm_nn_acc(const double* a, const double* b, double* c, Index m, Index k, Index n) {
    for (Index i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (Index kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) {
                continue;
            }
            const double* brow = b + kk * n;
            for (Index j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
void mm_nt_acc(const double* a, const double* b, double* c, Index m, Index k, Index n) {
    for (Index i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (Index j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (Index kk = 0; kk < k; ++kk) {
                acc += arow[kk] * brow[kk];
            }
            c[i * n + j] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
void mm_tn_acc(const double* a, const double* b, double* c, Index m, Index k, Index n) {
    for (Index kk = 0; kk < k; ++kk) {
        const double* arow = a + kk * m;
        const double* brow = b + kk * n;
        for (Index i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) {
                continue;
            }
            double* crow = c + i * n;
            for (Index j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

struct ConvDims {
    Index n, cin, h, w, oh, ow, cig, cog, k, positions;
};

ConvDims conv_dims(const Tensor& x, const ConvSpec& sp) {
    sp.validate();
    require(x.rank() == 4, "conv2d expects an NCHW input");
    if (x.dim(1) != sp.in_channels) {
        throw ConfigError("conv2d input has " + std::to_string(x.dim(1)) +
                          " channels, spec expects " + std::to_string(sp.in_channels));
    }
    ConvDims d;
    d.n = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.oh = sp.out_h(d.h);
    d.ow = sp.out_w(d.w);
    d.cig = sp.in_channels / sp.groups;
    d.cog = sp.out_channels / sp.groups;
    d.k = d.cig * sp.kernel_h * sp.kernel_w;
    d.positions = d.oh * d.ow;
    return d;
}

// col[(ci,kh,kw), (oh,ow)] for one (sample, group) slice.
void im2col(const double* x, const ConvSpec& sp, const ConvDims& d, double* col) {
    Index row = 0;
    for (Index ci = 0; ci < d.cig; ++ci) {
        const double* plane = x + ci * d.h * d.w;
        for (Index ky = 0; ky < sp.kernel_h; ++ky) {
            for (Index kx = 0; kx < sp.kernel_w; ++kx, ++row) {
                double* out = col + row * d.positions;
                for (Index yo = 0; yo < d.oh; ++yo) {
                    const Index yi = yo * sp.stride_h + ky - sp.pad_h;
                    if (yi < 0 || yi >= d.h) {
                        std::fill(out + yo * d.ow, out + (yo + 1) * d.ow, 0.0);
                        continue;
                    }
                    const double* src = plane + yi * d.w;
                    double* dst = out + yo * d.ow;
                    for (Index xo = 0; xo < d.ow; ++xo) {
                        const Index xi = xo * sp.stride_w + kx - sp.pad_w;
                        dst[xo] = (xi >= 0 && xi < d.w) ? src[xi] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-add of a column matrix back onto the input slice.
void col2im_acc(const double* col, const ConvSpec& sp, const ConvDims& d, double* x) {
    Index row = 0;
    for (Index ci = 0; ci < d.cig; ++ci) {
        double* plane = x + ci * d.h * d.w;
        for (Index ky = 0; ky < sp.kernel_h; ++ky) {
            for (Index kx = 0; kx < sp.kernel_w; ++kx, ++row) {
                const double* src = col + row * d.positions;
                for (Index yo = 0; yo < d.oh; ++yo) {
                    const Index yi = yo * sp.stride_h + ky - sp.pad_h;
                    if (yi < 0 || yi >= d.h) {
                        continue;
                    }
                    double* dst = plane + yi * d.w;
                    for (Index xo = 0; xo < d.ow; ++xo) {
                        const Index xi = xo * sp.stride_w + kx - sp.pad_w;
                        if (xi >= 0 && xi < d.w) {
                            dst[xi] += src[yo * d.ow + xo];
                        }
                    }
                }
            }
        }
    }
}

bool is_pointwise(const ConvSpec& sp) {
    return sp.kernel_h == 1 && sp.kernel_w == 1 && sp.stride_h == 1 && sp.stride_w == 1 &&
           sp.pad_h == 0 && sp.pad_w == 0;
}

Tensor map_unary(const Tensor& x, double (*fn)(double), const char* ctx) {
    Tensor y(x.shape());
    double* out = y.mut();
    const double* in = x.data();
    for (Index i = 0; i < x.numel(); ++i) {
        out[i] = fn(in[i]);
    }
    y.ensure_finite(ctx);
    return y;
}

Tensor zip_binary(const Tensor& a, const Tensor& b, double (*fn)(double, double),
                  const char* ctx) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(ctx) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
    Tensor y(a.shape());
    double* out = y.mut();
    const double* pa = a.data();
    const double* pb = b.data();
    for (Index i = 0; i < a.numel(); ++i) {
        out[i] = fn(pa[i], pb[i]);
    }
    y.ensure_finite(ctx);
    return y;
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
    require(x.rank() == 2 && w.rank() == 2, "linear expects rank-2 operands");
    require(x.dim(1) == w.dim(1), "linear inner dimensions disagree");
    const Index rows = x.dim(0), in = x.dim(1), out = w.dim(0);
    if (b != nullptr) {
        require(b->rank() == 1 && b->dim(0) == out, "linear bias has wrong length");
    }
    Tensor y({rows, out});
    double* py = y.mut();
    if (b != nullptr) {
        for (Index r = 0; r < rows; ++r) {
            std::memcpy(py + r * out, b->data(), static_cast<std::size_t>(out) * sizeof(double));
        }
    }
    const double* px = x.data();
    const double* pw = w.data();
    parallel_for(rows, [&](Index r0, Index r1) {
        mm_nt_acc(px + r0 * in, pw, py + r0 * out, r1 - r0, in, out);
    });
    y.ensure_finite("linear");
    return y;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& grad, Tensor* dx,
                     Tensor* dw, Tensor* db) {
    const Index rows = x.dim(0), in = x.dim(1), out = w.dim(0);
    if (dx != nullptr) {
        *dx = Tensor({rows, in});
        double* p = dx->mut();
        parallel_for(rows, [&](Index r0, Index r1) {
            mm_nn_acc(grad.data() + r0 * out, w.data(), p + r0 * in, r1 - r0, out, in);
        });
    }
    if (dw != nullptr) {
        *dw = Tensor({out, in});
        mm_tn_acc(grad.data(), x.data(), dw->mut(), out, rows, in);
    }
    if (db != nullptr) {
        *db = Tensor({out});
        double* p = db->mut();
        for (Index r = 0; r < rows; ++r) {
            for (Index o = 0; o < out; ++o) {
                p[o] += grad.data()[r * out + o];
            }
        }
    }
}

Tensor conv2d(const Tensor& x, const ConvSpec& sp, const Tensor& w, const Tensor* b) {
    const ConvDims d = conv_dims(x, sp);
    if (w.shape() != sp.weight_shape()) {
        throw ShapeError("conv2d weight shape " + shape_str(w.shape()) + " != expected " +
                         shape_str(sp.weight_shape()));
    }
    if (b != nullptr) {
        require(b->rank() == 1 && b->dim(0) == sp.out_channels, "conv bias length mismatch");
    }
    Tensor y({d.n, sp.out_channels, d.oh, d.ow});
    double* py = y.mut();
    const double* px = x.data();
    const double* pw = w.data();
    const bool pointwise = is_pointwise(sp);

    parallel_for(d.n, [&](Index n0, Index n1) {
        std::vector<double> col;
        if (!pointwise) {
            col.resize(static_cast<std::size_t>(d.k * d.positions));
        }
        for (Index ni = n0; ni < n1; ++ni) {
            for (Index g = 0; g < sp.groups; ++g) {
                const double* xs = px + (ni * d.cin + g * d.cig) * d.h * d.w;
                double* ys = py + (ni * sp.out_channels + g * d.cog) * d.positions;
                if (b != nullptr) {
                    for (Index co = 0; co < d.cog; ++co) {
                        std::fill(ys + co * d.positions, ys + (co + 1) * d.positions,
                                  b->data()[g * d.cog + co]);
                    }
                }
                const double* cols = xs;
                if (!pointwise) {
                    im2col(xs, sp, d, col.data());
                    cols = col.data();
                }
                mm_nn_acc(pw + g * d.cog * d.k, cols, ys, d.cog, d.k, d.positions);
            }
        }
    });
    y.ensure_finite("conv2d");
    return y;
}

void conv2d_backward(const Tensor& x, const ConvSpec& sp, const Tensor& w,
                     const Tensor& grad, Tensor* dx, Tensor* dw, Tensor* db) {
    const ConvDims d = conv_dims(x, sp);
    const double* pg = grad.data();
    if (db != nullptr) {
        *db = Tensor({sp.out_channels});
        double* p = db->mut();
        for (Index ni = 0; ni < d.n; ++ni) {
            for (Index co = 0; co < sp.out_channels; ++co) {
                const double* gs = pg + (ni * sp.out_channels + co) * d.positions;
                for (Index s = 0; s < d.positions; ++s) {
                    p[co] += gs[s];
                }
            }
        }
    }
    if (dx != nullptr) {
        *dx = Tensor(x.shape());
    }
    if (dw != nullptr) {
        *dw = Tensor(sp.weight_shape());
    }
    if (dx == nullptr && dw == nullptr) {
        return;
    }
    const bool pointwise = is_pointwise(sp);
    std::vector<double> col, dcol;
    if (!pointwise) {
        col.resize(static_cast<std::size_t>(d.k * d.positions));
        dcol.resize(static_cast<std::size_t>(d.k * d.positions));
    }
    // Serial over samples: dw accumulation order stays fixed.
    for (Index ni = 0; ni < d.n; ++ni) {
        for (Index g = 0; g < sp.groups; ++g) {
            const double* xs = x.data() + (ni * d.cin + g * d.cig) * d.h * d.w;
            const double* gs = pg + (ni * sp.out_channels + g * d.cog) * d.positions;
            if (dw != nullptr) {
                const double* cols = xs;
                if (!pointwise) {
                    im2col(xs, sp, d, col.data());
                    cols = col.data();
                }
                mm_nt_acc(gs, cols, dw->mut() + g * d.cog * d.k, d.cog, d.positions, d.k);
            }
            if (dx != nullptr) {
                double* dxs = dx->mut() + (ni * d.cin + g * d.cig) * d.h * d.w;
                if (pointwise) {
                    mm_tn_acc(w.data() + g * d.cog * d.k, gs, dxs, d.k, d.cog, d.positions);
                } else {
                    std::fill(dcol.begin(), dcol.end(), 0.0);
                    mm_tn_acc(w.data() + g * d.cog * d.k, gs, dcol.data(), d.k, d.cog,
                              d.positions);
                    col2im_acc(dcol.data(), sp, d, dxs);
                }
            }
        }
    }
}

BnResult batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      Tensor& running_mean, Tensor& running_var, bool training,
                      bool update_running, double eps, double momentum) {
    require(x.rank() == 4, "batch_norm2d expects NCHW");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    require(gamma.numel() == c && beta.numel() == c, "batch_norm2d affine length mismatch");
    require(running_mean.numel() == c && running_var.numel() == c,
            "batch_norm2d running stats length mismatch");
    const Index m = n * h * w;
    if (training && m < 1) {
        throw ConfigError("batch_norm2d train mode needs at least one position");
    }

    BnResult r;
    r.mean = Tensor({c});
    r.inv_std = Tensor({c});
    double* pm = r.mean.mut();
    double* pis = r.inv_std.mut();
    const Index plane = h * w;

    if (training) {
        std::vector<double> var(static_cast<std::size_t>(c), 0.0);
        for (Index ci = 0; ci < c; ++ci) {
            double mean = 0.0;
            for (Index ni = 0; ni < n; ++ni) {
                const double* p = x.data() + (ni * c + ci) * plane;
                for (Index s = 0; s < plane; ++s) {
                    mean += p[s];
                }
            }
            mean /= static_cast<double>(m);
            double v = 0.0;
            for (Index ni = 0; ni < n; ++ni) {
                const double* p = x.data() + (ni * c + ci) * plane;
                for (Index s = 0; s < plane; ++s) {
                    const double dlt = p[s] - mean;
                    v += dlt * dlt;
                }
            }
            v /= static_cast<double>(m);
            pm[ci] = mean;
            var[static_cast<std::size_t>(ci)] = v;
            pis[ci] = 1.0 / std::sqrt(v + eps);
        }
        if (update_running) {
            Tensor nm({c});
            Tensor nv({c});
            double* qm = nm.mut();
            double* qv = nv.mut();
            const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1)
                                        : 1.0;
            for (Index ci = 0; ci < c; ++ci) {
                qm[ci] = (1.0 - momentum) * running_mean.data()[ci] + momentum * pm[ci];
                qv[ci] = (1.0 - momentum) * running_var.data()[ci] +
                         momentum * var[static_cast<std::size_t>(ci)] * unbias;
            }
            running_mean = nm;
            running_var = nv;
        }
    } else {
        for (Index ci = 0; ci < c; ++ci) {
            pm[ci] = running_mean.data()[ci];
            pis[ci] = 1.0 / std::sqrt(running_var.data()[ci] + eps);
        }
    }

    r.y = Tensor(x.shape());
    double* py = r.y.mut();
    parallel_for(n * c, [&](Index b0, Index b1) {
        for (Index bc = b0; bc < b1; ++bc) {
            const Index ci = bc % c;
            const double a = gamma.data()[ci] * pis[ci];
            const double sh = beta.data()[ci] - a * pm[ci];
            const double* p = x.data() + bc * plane;
            double* q = py + bc * plane;
            for (Index s = 0; s < plane; ++s) {
                q[s] = a * p[s] + sh;
            }
        }
    });
    r.y.ensure_finite("batch_norm2d");
    return r;
}

void batch_norm2d_backward(const Tensor& x, const Tensor& gamma, const Tensor& mean,
                           const Tensor& inv_std, bool training, const Tensor& grad,
                           Tensor* dx, Tensor* dgamma, Tensor* dbeta) {
    const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    const Index m = n * plane;
    Tensor sum_g({c});
    Tensor sum_gx({c});  // sum of grad * normalized(x)
    double* sg = sum_g.mut();
    double* sgx = sum_gx.mut();
    for (Index ni = 0; ni < n; ++ni) {
        for (Index ci = 0; ci < c; ++ci) {
            const double* px = x.data() + (ni * c + ci) * plane;
            const double* pg = grad.data() + (ni * c + ci) * plane;
            const double mu = mean.data()[ci];
            const double is = inv_std.data()[ci];
            double a = 0.0, bsum = 0.0;
            for (Index s = 0; s < plane; ++s) {
                a += pg[s];
                bsum += pg[s] * (px[s] - mu) * is;
            }
            sg[ci] += a;
            sgx[ci] += bsum;
        }
    }
    if (dbeta != nullptr) {
        *dbeta = sum_g.clone();
    }
    if (dgamma != nullptr) {
        *dgamma = sum_gx.clone();
    }
    if (dx == nullptr) {
        return;
    }
    *dx = Tensor(x.shape());
    double* pdx = dx->mut();
    for (Index ni = 0; ni < n; ++ni) {
        for (Index ci = 0; ci < c; ++ci) {
            const double* px = x.data() + (ni * c + ci) * plane;
            const double* pg = grad.data() + (ni * c + ci) * plane;
            double* pd = pdx + (ni * c + ci) * plane;
            const double mu = mean.data()[ci];
            const double is = inv_std.data()[ci];
            const double ga = gamma.data()[ci];
            if (training) {
                const double mg = sg[ci] / static_cast<double>(m);
                const double mgx = sgx[ci] / static_cast<double>(m);
                for (Index s = 0; s < plane; ++s) {
                    const double xhat = (px[s] - mu) * is;
                    pd[s] = ga * is * (pg[s] - mg - xhat * mgx);
                }
            } else {
                for (Index s = 0; s < plane; ++s) {
                    pd[s] = ga * is * pg[s];
                }
            }
        }
    }
}

namespace {
double gelu_one(double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); }
}  // namespace

Tensor gelu(const Tensor& x) { return map_unary(x, &gelu_one, "gelu"); }

Tensor gelu_backward(const Tensor& x, const Tensor& grad) {
    Tensor dx(x.shape());
    double* pd = dx.mut();
    const double* px = x.data();
    const double* pg = grad.data();
    for (Index i = 0; i < x.numel(); ++i) {
        const double v = px[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        pd[i] = pg[i] * (cdf + v * pdf);
    }
    return dx;
}

namespace {
struct AxisDims {
    Index outer, len, inner;
};

AxisDims axis_dims(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank()) {
        throw UsageError("axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(x.shape()));
    }
    AxisDims d{1, x.dim(axis), 1};
    for (int i = 0; i < axis; ++i) {
        d.outer *= x.dim(i);
    }
    for (int i = axis + 1; i < x.rank(); ++i) {
        d.inner *= x.dim(i);
    }
    return d;
}
}  // namespace

Tensor softmax_axis(const Tensor& x, int axis) {
    const AxisDims d = axis_dims(x, axis);
    Tensor y(x.shape());
    double* py = y.mut();
    const double* px = x.data();
    for (Index o = 0; o < d.outer; ++o) {
        for (Index in = 0; in < d.inner; ++in) {
            const Index base = o * d.len * d.inner + in;
            double mx = px[base];
            for (Index l = 1; l < d.len; ++l) {
                mx = std::max(mx, px[base + l * d.inner]);
            }
            double total = 0.0;
            for (Index l = 0; l < d.len; ++l) {
                const double e = std::exp(px[base + l * d.inner] - mx);
                py[base + l * d.inner] = e;
                total += e;
            }
            for (Index l = 0; l < d.len; ++l) {
                py[base + l * d.inner] /= total;
            }
        }
    }
    y.ensure_finite("softmax_axis");
    return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& grad, int axis) {
    const AxisDims d = axis_dims(y, axis);
    Tensor dx(y.shape());
    double* pd = dx.mut();
    const double* py = y.data();
    const double* pg = grad.data();
    for (Index o = 0; o < d.outer; ++o) {
        for (Index in = 0; in < d.inner; ++in) {
            const Index base = o * d.len * d.inner + in;
            double dot = 0.0;
            for (Index l = 0; l < d.len; ++l) {
                dot += pg[base + l * d.inner] * py[base + l * d.inner];
            }
            for (Index l = 0; l < d.len; ++l) {
                const Index i = base + l * d.inner;
                pd[i] = py[i] * (pg[i] - dot);
            }
        }
    }
    return dx;
}

Tensor global_avg_pool(const Tensor& x) {
    require(x.rank() == 4, "global_avg_pool expects NCHW");
    const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    require(plane >= 1, "global_avg_pool needs at least one position");
    Tensor y({n, c});
    double* py = y.mut();
    for (Index bc = 0; bc < n * c; ++bc) {
        const double* p = x.data() + bc * plane;
        double acc = 0.0;
        for (Index s = 0; s < plane; ++s) {
            acc += p[s];
        }
        py[bc] = acc / static_cast<double>(plane);
    }
    y.ensure_finite("global_avg_pool");
    return y;
}

Tensor global_avg_pool_backward(const Tensor& grad, Index h, Index w) {
    const Index n = grad.dim(0), c = grad.dim(1), plane = h * w;
    Tensor dx({n, c, h, w});
    double* pd = dx.mut();
    const double inv = 1.0 / static_cast<double>(plane);
    for (Index bc = 0; bc < n * c; ++bc) {
        const double v = grad.data()[bc] * inv;
        std::fill(pd + bc * plane, pd + (bc + 1) * plane, v);
    }
    return dx;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r) {
        throw UsageError("permutation rank mismatch");
    }
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    Shape oshape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const int p = perm[static_cast<std::size_t>(i)];
        if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) {
            throw UsageError("invalid permutation");
        }
        seen[static_cast<std::size_t>(p)] = true;
        oshape[static_cast<std::size_t>(i)] = x.dim(p);
    }
    std::vector<Index> in_strides(static_cast<std::size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i) {
        in_strides[static_cast<std::size_t>(i)] =
            in_strides[static_cast<std::size_t>(i + 1)] * x.dim(i + 1);
    }
    std::vector<Index> step(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        step[static_cast<std::size_t>(i)] =
            in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    Tensor y(oshape);
    double* py = y.mut();
    const double* px = x.data();
    const Index total = x.numel();
    std::vector<Index> idx(static_cast<std::size_t>(r), 0);
    Index src = 0;
    for (Index flat = 0; flat < total; ++flat) {
        py[flat] = px[src];
        for (int axis = r - 1; axis >= 0; --axis) {
            idx[static_cast<std::size_t>(axis)] += 1;
            src += step[static_cast<std::size_t>(axis)];
            if (idx[static_cast<std::size_t>(axis)] < oshape[static_cast<std::size_t>(axis)]) {
                break;
            }
            src -= step[static_cast<std::size_t>(axis)] * oshape[static_cast<std::size_t>(axis)];
            idx[static_cast<std::size_t>(axis)] = 0;
        }
    }
    return y;
}

std::vector<int> inverse_permutation(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
    }
    return inv;
}

Tensor reshape(const Tensor& x, Shape shape) { return x.reshaped(std::move(shape)); }

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) {
        throw UsageError("concat of zero tensors");
    }
    const int r = parts[0].rank();
    if (axis < 0 || axis >= r) {
        throw UsageError("concat axis out of range");
    }
    Shape oshape = parts[0].shape();
    Index axis_total = 0;
    for (const Tensor& t : parts) {
        if (t.rank() != r) {
            throw ShapeError("concat rank mismatch");
        }
        for (int i = 0; i < r; ++i) {
            if (i != axis && t.dim(i) != oshape[static_cast<std::size_t>(i)]) {
                throw ShapeError("concat off-axis dimensions disagree: " +
                                 shape_str(t.shape()) + " vs " + shape_str(oshape));
            }
        }
        axis_total += t.dim(axis);
    }
    oshape[static_cast<std::size_t>(axis)] = axis_total;
    Index outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) {
        outer *= oshape[static_cast<std::size_t>(i)];
    }
    for (int i = axis + 1; i < r; ++i) {
        inner *= oshape[static_cast<std::size_t>(i)];
    }
    Tensor y(oshape);
    double* py = y.mut();
    Index dst_off = 0;
    for (const Tensor& t : parts) {
        const Index block = t.dim(axis) * inner;
        for (Index o = 0; o < outer; ++o) {
            std::memcpy(py + o * axis_total * inner + dst_off, t.data() + o * block,
                        static_cast<std::size_t>(block) * sizeof(double));
        }
        dst_off += block;
    }
    return y;
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<Index>& sizes) {
    const int r = x.rank();
    if (axis < 0 || axis >= r) {
        throw UsageError("split axis out of range");
    }
    Index total = 0;
    for (Index s : sizes) {
        total += s;
    }
    if (total != x.dim(axis)) {
        throw ShapeError("split sizes sum to " + std::to_string(total) + ", axis has " +
                         std::to_string(x.dim(axis)));
    }
    Index outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) {
        outer *= x.dim(i);
    }
    for (int i = axis + 1; i < r; ++i) {
        inner *= x.dim(i);
    }
    std::vector<Tensor> out;
    out.reserve(sizes.size());
    Index src_off = 0;
    for (Index s : sizes) {
        Shape oshape = x.shape();
        oshape[static_cast<std::size_t>(axis)] = s;
        Tensor t(oshape);
        double* pt = t.mut();
        const Index block = s * inner;
        for (Index o = 0; o < outer; ++o) {
            std::memcpy(pt + o * block, x.data() + o * x.dim(axis) * inner + src_off,
                        static_cast<std::size_t>(block) * sizeof(double));
        }
        src_off += block;
        out.push_back(std::move(t));
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return zip_binary(a, b, [](double x, double y) { return x + y; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return zip_binary(a, b, [](double x, double y) { return x - y; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return zip_binary(a, b, [](double x, double y) { return x * y; }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
    return zip_binary(a, b, [](double x, double y) { return x / y; }, "div");
}

Tensor scale(const Tensor& a, double s) {
    Tensor y(a.shape());
    double* py = y.mut();
    for (Index i = 0; i < a.numel(); ++i) {
        py[i] = a.data()[i] * s;
    }
    y.ensure_finite("scale");
    return y;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor y(a.shape());
    double* py = y.mut();
    for (Index i = 0; i < a.numel(); ++i) {
        py[i] = a.data()[i] + s;
    }
    y.ensure_finite("add_scalar");
    return y;
}

Tensor sqrt_elem(const Tensor& a) {
    return map_unary(a, [](double v) { return std::sqrt(v); }, "sqrt");
}

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (Index i = 0; i < a.numel(); ++i) {
        acc += a.data()[i];
    }
    Tensor y = Tensor::scalar(acc);
    y.ensure_finite("sum_all");
    return y;
}

Tensor sum_spatial(const Tensor& x) {
    require(x.rank() == 4, "sum_spatial expects NCHW");
    const Index nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor y({x.dim(0), x.dim(1)});
    double* py = y.mut();
    for (Index bc = 0; bc < nc; ++bc) {
        double acc = 0.0;
        const double* p = x.data() + bc * plane;
        for (Index s = 0; s < plane; ++s) {
            acc += p[s];
        }
        py[bc] = acc;
    }
    y.ensure_finite("sum_spatial");
    return y;
}

Tensor broadcast_spatial(const Tensor& nc, Index h, Index w) {
    require(nc.rank() == 2, "broadcast_spatial expects (N,C)");
    Tensor y({nc.dim(0), nc.dim(1), h, w});
    double* py = y.mut();
    const Index plane = h * w;
    for (Index bc = 0; bc < nc.numel(); ++bc) {
        std::fill(py + bc * plane, py + (bc + 1) * plane, nc.data()[bc]);
    }
    return y;
}

Tensor row_mean_broadcast(const Tensor& nc) {
    require(nc.rank() == 2, "row_mean_broadcast expects (N,C)");
    const Index n = nc.dim(0), c = nc.dim(1);
    Tensor y({n, c});
    double* py = y.mut();
    for (Index i = 0; i < n; ++i) {
        double acc = 0.0;
        for (Index j = 0; j < c; ++j) {
            acc += nc.data()[i * c + j];
        }
        const double mean = acc / static_cast<double>(c);
        for (Index j = 0; j < c; ++j) {
            py[i * c + j] = mean;
        }
    }
    y.ensure_finite("row_mean_broadcast");
    return y;
}

Tensor sum_nhw(const Tensor& x) {
    require(x.rank() == 4, "sum_nhw expects NCHW");
    const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor y({c});
    double* py = y.mut();
    for (Index ni = 0; ni < n; ++ni) {
        for (Index ci = 0; ci < c; ++ci) {
            const double* p = x.data() + (ni * c + ci) * plane;
            double acc = 0.0;
            for (Index s = 0; s < plane; ++s) {
                acc += p[s];
            }
            py[ci] += acc;
        }
    }
    y.ensure_finite("sum_nhw");
    return y;
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
    require(x.rank() == 4 && s.rank() == 2, "scale_channels expects NCHW and (N,C)");
    require(x.dim(0) == s.dim(0) && x.dim(1) == s.dim(1),
            "scale_channels batch/channel mismatch");
    const Index plane = x.dim(2) * x.dim(3);
    Tensor y(x.shape());
    double* py = y.mut();
    for (Index bc = 0; bc < s.numel(); ++bc) {
        const double f = s.data()[bc];
        const double* p = x.data() + bc * plane;
        double* q = py + bc * plane;
        for (Index i = 0; i < plane; ++i) {
            q[i] = p[i] * f;
        }
    }
    y.ensure_finite("scale_channels");
    return y;
}

Tensor channel_affine(const Tensor& x, const Tensor& gain, const Tensor& shift) {
    require(x.rank() == 4, "channel_affine expects NCHW");
    const Index c = x.dim(1), plane = x.dim(2) * x.dim(3);
    require(gain.numel() == c && shift.numel() == c, "channel_affine length mismatch");
    Tensor y(x.shape());
    double* py = y.mut();
    for (Index bc = 0; bc < x.dim(0) * c; ++bc) {
        const Index ci = bc % c;
        const double a = gain.data()[ci], b = shift.data()[ci];
        const double* p = x.data() + bc * plane;
        double* q = py + bc * plane;
        for (Index i = 0; i < plane; ++i) {
            q[i] = a * p[i] + b;
        }
    }
    y.ensure_finite("channel_affine");
    return y;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, double smoothing,
                     Tensor* probs) {
    require(logits.rank() == 2, "cross_entropy expects (N,K) logits");
    const Index n = logits.dim(0), k = logits.dim(1);
    if (static_cast<Index>(labels.size()) != n) {
        throw ShapeError("cross_entropy label count mismatch");
    }
    Tensor p = softmax_axis(logits, 1);
    const double off = smoothing / static_cast<double>(k);
    const double on = 1.0 - smoothing + off;
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        if (label < 0 || label >= k) {
            throw DataError("label " + std::to_string(label) + " out of range for " +
                            std::to_string(k) + " classes");
        }
        // log-sum-exp via the already max-stabilized softmax
        const double* row = logits.data() + i * k;
        double mx = row[0];
        for (Index j = 1; j < k; ++j) {
            mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (Index j = 0; j < k; ++j) {
            z += std::exp(row[j] - mx);
        }
        const double lse = mx + std::log(z);
        double dot = 0.0;
        for (Index j = 0; j < k; ++j) {
            const double q = (j == label) ? on : off;
            dot += q * row[j];
        }
        total += lse - dot;
    }
    if (probs != nullptr) {
        *probs = p;
    }
    Tensor y = Tensor::scalar(total / static_cast<double>(n));
    y.ensure_finite("cross_entropy");
    return y;
}

Tensor cross_entropy_backward(const Tensor& probs, const std::vector<int>& labels,
                              double smoothing, double upstream) {
    const Index n = probs.dim(0), k = probs.dim(1);
    const double off = smoothing / static_cast<double>(k);
    const double on = 1.0 - smoothing + off;
    Tensor dx(probs.shape());
    double* pd = dx.mut();
    const double f = upstream / static_cast<double>(n);
    for (Index i = 0; i < n; ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        for (Index j = 0; j < k; ++j) {
            const double q = (j == label) ? on : off;
            pd[i * k + j] = f * (probs.data()[i * k + j] - q);
        }
    }
    return dx;
}

}  // namespace stripmlp::ops
