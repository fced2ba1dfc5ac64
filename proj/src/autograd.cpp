#include "stripmlp/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace stripmlp::autograd {

namespace {

thread_local bool g_grad_enabled = true;

bool any_requires(const std::vector<Var>& parents) {
    for (const Var& p : parents) {
        if (p && p->requires_grad) {
            return true;
        }
    }
    return false;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(const Tensor&)> rule,
              const char* label) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->label = label;
    if (g_grad_enabled && any_requires(parents)) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backprop = std::move(rule);
    }
    return node;
}

// Zero tensor of `full` shape with `g` placed at `offset` along `axis`.
Tensor embed_slice(const Tensor& g, int axis, Index offset, const Shape& full) {
    Tensor out(full);
    Index outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) {
        outer *= full[static_cast<std::size_t>(i)];
    }
    for (int i = axis + 1; i < static_cast<int>(full.size()); ++i) {
        inner *= full[static_cast<std::size_t>(i)];
    }
    const Index span = g.dim(axis) * inner;
    const Index stride = full[static_cast<std::size_t>(axis)] * inner;
    double* p = out.mut();
    for (Index o = 0; o < outer; ++o) {
        std::memcpy(p + o * stride + offset * inner, g.data() + o * span,
                    static_cast<std::size_t>(span) * sizeof(double));
    }
    return out;
}

}  // namespace

Var leaf(Tensor value, bool requires_grad, std::string label) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->label = std::move(label);
    return node;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void accumulate(const Var& v, const Tensor& g) {
    if (!v || !v->requires_grad) {
        return;
    }
    if (!v->value.same_shape(g)) {
        throw ShapeError("gradient shape " + shape_str(g.shape()) +
                         " does not match value shape " + shape_str(v->value.shape()) +
                         (v->label.empty() ? "" : " of " + v->label));
    }
    if (v->has_grad) {
        v->grad = ops::add(v->grad, g);
    } else {
        v->grad = g;
        v->has_grad = true;
    }
}

void backward(const Var& loss) {
    if (!loss) {
        throw UsageError("backward on empty node");
    }
    if (loss->value.numel() != 1) {
        throw UsageError("backward requires a scalar loss, got shape " +
                         shape_str(loss->value.shape()));
    }
    if (!loss->requires_grad) {
        return;
    }
    // Iterative post-order DFS over requires_grad ancestors.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next].get();
            ++next;
            if (parent != nullptr && parent->requires_grad &&
                visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    accumulate(loss, Tensor::full(loss->value.shape(), 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop && node->has_grad) {
            node->backprop(node->grad);
        }
    }
}

Var linear(const Var& x, const Var& w, const Var& b) {
    Tensor y = ops::linear(x->value, w->value, b ? &b->value : nullptr);
    std::vector<Var> parents{x, w};
    if (b) {
        parents.push_back(b);
    }
    return make_node(
        std::move(y), std::move(parents),
        [x, w, b](const Tensor& g) {
            Tensor dx, dw, db;
            ops::linear_backward(x->value, w->value, g, x->requires_grad ? &dx : nullptr,
                                 w->requires_grad ? &dw : nullptr,
                                 (b && b->requires_grad) ? &db : nullptr);
            if (x->requires_grad) {
                accumulate(x, dx);
            }
            if (w->requires_grad) {
                accumulate(w, dw);
            }
            if (b && b->requires_grad) {
                accumulate(b, db);
            }
        },
        "linear");
}

Var conv2d(const Var& x, const ConvSpec& spec, const Var& w, const Var& b) {
    Tensor y = ops::conv2d(x->value, spec, w->value, b ? &b->value : nullptr);
    std::vector<Var> parents{x, w};
    if (b) {
        parents.push_back(b);
    }
    return make_node(
        std::move(y), std::move(parents),
        [x, w, b, spec](const Tensor& g) {
            Tensor dx, dw, db;
            ops::conv2d_backward(x->value, spec, w->value, g,
                                 x->requires_grad ? &dx : nullptr,
                                 w->requires_grad ? &dw : nullptr,
                                 (b && b->requires_grad) ? &db : nullptr);
            if (x->requires_grad) {
                accumulate(x, dx);
            }
            if (w->requires_grad) {
                accumulate(w, dw);
            }
            if (b && b->requires_grad) {
                accumulate(b, db);
            }
        },
        "conv2d");
}

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, bool update_running, double eps,
                 double momentum) {
    ops::BnResult r = ops::batch_norm2d(x->value, gamma->value, beta->value, running_mean,
                                        running_var, training, update_running, eps,
                                        momentum);
    Tensor mean = r.mean;
    Tensor inv_std = r.inv_std;
    return make_node(
        std::move(r.y), {x, gamma, beta},
        [x, gamma, beta, mean, inv_std, training](const Tensor& g) {
            Tensor dx, dgamma, dbeta;
            ops::batch_norm2d_backward(x->value, gamma->value, mean, inv_std, training, g,
                                       x->requires_grad ? &dx : nullptr,
                                       gamma->requires_grad ? &dgamma : nullptr,
                                       beta->requires_grad ? &dbeta : nullptr);
            if (x->requires_grad) {
                accumulate(x, dx);
            }
            if (gamma->requires_grad) {
                accumulate(gamma, dgamma);
            }
            if (beta->requires_grad) {
                accumulate(beta, dbeta);
            }
        },
        "batch_norm2d");
}

Var gelu(const Var& x) {
    return make_node(
        ops::gelu(x->value), {x},
        [x](const Tensor& g) { accumulate(x, ops::gelu_backward(x->value, g)); }, "gelu");
}

Var softmax_axis(const Var& x, int axis) {
    Tensor y = ops::softmax_axis(x->value, axis);
    Tensor saved = y;
    return make_node(
        std::move(y), {x},
        [x, saved, axis](const Tensor& g) {
            accumulate(x, ops::softmax_backward(saved, g, axis));
        },
        "softmax");
}

Var global_avg_pool(const Var& x) {
    const Index h = x->value.dim(2), w = x->value.dim(3);
    return make_node(
        ops::global_avg_pool(x->value), {x},
        [x, h, w](const Tensor& g) {
            accumulate(x, ops::global_avg_pool_backward(g, h, w));
        },
        "global_avg_pool");
}

Var permute(const Var& x, std::vector<int> perm) {
    Tensor y = ops::permute(x->value, perm);
    return make_node(
        std::move(y), {x},
        [x, perm](const Tensor& g) {
            accumulate(x, ops::permute(g, ops::inverse_permutation(perm)));
        },
        "permute");
}

Var reshape(const Var& x, Shape shape) {
    Tensor y = ops::reshape(x->value, std::move(shape));
    Shape original = x->value.shape();
    return make_node(
        std::move(y), {x},
        [x, original](const Tensor& g) { accumulate(x, ops::reshape(g, original)); },
        "reshape");
}

Var concat(const std::vector<Var>& parts, int axis) {
    std::vector<Tensor> values;
    values.reserve(parts.size());
    std::vector<Index> sizes;
    for (const Var& p : parts) {
        values.push_back(p->value);
        sizes.push_back(p->value.dim(axis));
    }
    Tensor y = ops::concat(values, axis);
    return make_node(
        std::move(y), parts,
        [parts, sizes, axis](const Tensor& g) {
            std::vector<Tensor> grads = ops::split(g, axis, sizes);
            for (std::size_t i = 0; i < parts.size(); ++i) {
                accumulate(parts[i], grads[i]);
            }
        },
        "concat");
}

std::vector<Var> split(const Var& x, int axis, std::vector<Index> sizes) {
    std::vector<Tensor> pieces = ops::split(x->value, axis, sizes);
    std::vector<Var> out;
    out.reserve(pieces.size());
    Index offset = 0;
    const Shape full = x->value.shape();
    for (Tensor& piece : pieces) {
        const Index here = offset;
        offset += piece.dim(axis);
        out.push_back(make_node(
            std::move(piece), {x},
            [x, axis, here, full](const Tensor& g) {
                accumulate(x, embed_slice(g, axis, here, full));
            },
            "split"));
    }
    return out;
}

Var add(const Var& a, const Var& b) {
    return make_node(
        ops::add(a->value, b->value), {a, b},
        [a, b](const Tensor& g) {
            accumulate(a, g);
            accumulate(b, g);
        },
        "add");
}

Var sub(const Var& a, const Var& b) {
    return make_node(
        ops::sub(a->value, b->value), {a, b},
        [a, b](const Tensor& g) {
            accumulate(a, g);
            accumulate(b, ops::scale(g, -1.0));
        },
        "sub");
}

Var mul(const Var& a, const Var& b) {
    return make_node(
        ops::mul(a->value, b->value), {a, b},
        [a, b](const Tensor& g) {
            if (a->requires_grad) {
                accumulate(a, ops::mul(g, b->value));
            }
            if (b->requires_grad) {
                accumulate(b, ops::mul(g, a->value));
            }
        },
        "mul");
}

Var div(const Var& a, const Var& b) {
    Tensor y = ops::div(a->value, b->value);
    Tensor saved = y;
    return make_node(
        std::move(y), {a, b},
        [a, b, saved](const Tensor& g) {
            if (a->requires_grad) {
                accumulate(a, ops::div(g, b->value));
            }
            if (b->requires_grad) {
                accumulate(b, ops::scale(ops::div(ops::mul(g, saved), b->value), -1.0));
            }
        },
        "div");
}

Var scale(const Var& a, double s) {
    return make_node(
        ops::scale(a->value, s), {a},
        [a, s](const Tensor& g) { accumulate(a, ops::scale(g, s)); }, "scale");
}

Var add_scalar(const Var& a, double s) {
    return make_node(
        ops::add_scalar(a->value, s), {a},
        [a](const Tensor& g) { accumulate(a, g); }, "add_scalar");
}

Var sqrt_elem(const Var& a) {
    Tensor y = ops::sqrt_elem(a->value);
    Tensor saved = y;
    return make_node(
        std::move(y), {a},
        [a, saved](const Tensor& g) {
            accumulate(a, ops::div(ops::scale(g, 0.5), saved));
        },
        "sqrt");
}

Var sum_all(const Var& a) {
    Shape shape = a->value.shape();
    return make_node(
        ops::sum_all(a->value), {a},
        [a, shape](const Tensor& g) { accumulate(a, Tensor::full(shape, g.value())); },
        "sum_all");
}

Var sum_spatial(const Var& x) {
    const Index h = x->value.dim(2), w = x->value.dim(3);
    return make_node(
        ops::sum_spatial(x->value), {x},
        [x, h, w](const Tensor& g) { accumulate(x, ops::broadcast_spatial(g, h, w)); },
        "sum_spatial");
}

Var row_mean_broadcast(const Var& nc) {
    return make_node(
        ops::row_mean_broadcast(nc->value), {nc},
        [nc](const Tensor& g) { accumulate(nc, ops::row_mean_broadcast(g)); },
        "row_mean_broadcast");
}

Var scale_channels(const Var& x, const Var& s) {
    return make_node(
        ops::scale_channels(x->value, s->value), {x, s},
        [x, s](const Tensor& g) {
            if (x->requires_grad) {
                accumulate(x, ops::scale_channels(g, s->value));
            }
            if (s->requires_grad) {
                accumulate(s, ops::sum_spatial(ops::mul(g, x->value)));
            }
        },
        "scale_channels");
}

Var channel_affine(const Var& x, const Var& gain, const Var& shift) {
    return make_node(
        ops::channel_affine(x->value, gain->value, shift->value), {x, gain, shift},
        [x, gain, shift](const Tensor& g) {
            if (x->requires_grad) {
                Tensor zero({gain->value.numel()});
                accumulate(x, ops::channel_affine(g, gain->value, zero));
            }
            if (gain->requires_grad) {
                accumulate(gain, ops::sum_nhw(ops::mul(g, x->value)));
            }
            if (shift->requires_grad) {
                accumulate(shift, ops::sum_nhw(g));
            }
        },
        "channel_affine");
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels, double smoothing) {
    Tensor probs;
    Tensor loss = ops::cross_entropy(logits->value, labels, smoothing, &probs);
    return make_node(
        std::move(loss), {logits},
        [logits, probs, labels, smoothing](const Tensor& g) {
            accumulate(logits,
                       ops::cross_entropy_backward(probs, labels, smoothing, g.value()));
        },
        "cross_entropy");
}

double finite_diff_check(const std::function<Var()>& build, const Var& target, double eps) {
    target->clear_grad();
    Var loss = build();
    if (!loss->value.all_finite()) {
        throw NumericError("finite_diff_check: non-finite function value");
    }
    backward(loss);
    Tensor analytic =
        target->has_grad ? target->grad : Tensor::zeros(target->value.shape());

    const Tensor original = target->value;
    double max_err = 0.0;
    for (Index i = 0; i < original.numel(); ++i) {
        Tensor plus = original.clone();
        plus.mut()[i] += eps;
        Tensor minus = original.clone();
        minus.mut()[i] -= eps;

        double f_plus = 0.0, f_minus = 0.0;
        {
            NoGradGuard guard;
            target->value = plus;
            f_plus = build()->value.value();
            target->value = minus;
            f_minus = build()->value.value();
            target->value = original;
        }
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
            throw NumericError("finite_diff_check: non-finite perturbed value");
        }
        const double fd = (f_plus - f_minus) / (2.0 * eps);
        const double g = analytic.data()[i];
        max_err = std::max(max_err, std::abs(fd - g) / std::max(1.0, std::abs(g)));
    }
    return max_err;
}

}  // namespace stripmlp::autograd
