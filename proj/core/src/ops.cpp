#include "mmtrain/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mmtrain::ops {

namespace {

using detail::ImplPtr;

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t->requires_grad(); });
}

// Records `out` on the active tape when some input needs a gradient. The
// backward rule receives the output gradient and accumulates into inputs.
template <typename Fn>
void record(const char* name, std::initializer_list<const Tensor*> inputs, const Tensor& out,
            Fn&& rule) {
    Tape* tape = active_tape();
    if (tape == nullptr || !any_requires_grad(inputs)) return;
    const ImplPtr out_impl = out.impl();
    out_impl->requires_grad = true;
    Tape::Record rec;
    rec.op = name;
    for (const Tensor* t : inputs) rec.inputs.push_back(t->impl());
    rec.output = out_impl;
    rec.backward = [out_raw = out_impl.get(), rule = std::forward<Fn>(rule)]() {
        rule(static_cast<const std::vector<double>&>(out_raw->grad));
    };
    tape->record(std::move(rec));
}

// Gradient slot of an input if it participates in differentiation.
double* grad_slot(const Tensor& t) {
    const auto& impl = t.impl();
    if (!impl->requires_grad) return nullptr;
    impl->ensure_grad();
    return impl->grad.data();
}

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> a_index;
    std::vector<std::size_t> b_index;
};

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    auto padded = [rank](const Shape& s) {
        Shape p(rank - s.size(), 1);
        p.insert(p.end(), s.begin(), s.end());
        return p;
    };
    const Shape pa = padded(a);
    const Shape pb = padded(b);
    BroadcastPlan plan;
    plan.out.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] == pb[i] || pb[i] == 1) {
            plan.out[i] = pa[i];
        } else if (pa[i] == 1) {
            plan.out[i] = pb[i];
        } else {
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                             shape_str(b));
        }
    }
    auto strides = [rank](const Shape& p) {
        std::vector<std::size_t> s(rank, 0);
        std::size_t acc = 1;
        for (std::size_t i = rank; i-- > 0;) {
            s[i] = p[i] == 1 ? 0 : acc;
            acc *= p[i];
        }
        return s;
    };
    const auto sa = strides(pa);
    const auto sb = strides(pb);
    const std::size_t n = numel_of(plan.out);
    plan.a_index.resize(n);
    plan.b_index.resize(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t k = 0; k < n; ++k) {
        plan.a_index[k] = ia;
        plan.b_index[k] = ib;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < plan.out[d]) {
                ia += sa[d];
                ib += sb[d];
                break;
            }
            ia -= sa[d] * (plan.out[d] - 1);
            ib -= sb[d] * (plan.out[d] - 1);
            idx[d] = 0;
        }
    }
    return plan;
}

// Shared implementation of broadcasting binary ops. `fwd(x, y)` is the value,
// `dx(x, y, g)` / `dy(x, y, g)` the partial contributions.
template <typename F, typename DX, typename DY>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F fwd, DX dx, DY dy) {
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(name, a.shape(), b.shape()));
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<double> out(plan->a_index.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = fwd(ad[plan->a_index[k]], bd[plan->b_index[k]]);
    }
    Tensor result(plan->out, std::move(out));
    record(name, {&a, &b}, result, [a, b, plan, dx, dy](const std::vector<double>& g) {
        double* ga = grad_slot(a);
        double* gb = grad_slot(b);
        const auto ad = a.data();
        const auto bd = b.data();
        for (std::size_t k = 0; k < g.size(); ++k) {
            const double x = ad[plan->a_index[k]];
            const double y = bd[plan->b_index[k]];
            if (ga) ga[plan->a_index[k]] += dx(x, y, g[k]);
            if (gb) gb[plan->b_index[k]] += dy(x, y, g[k]);
        }
    });
    return result;
}

// Elementwise unary op; `dfdx(x, y)` receives input and output values.
template <typename F, typename D>
Tensor unary(const char* name, const Tensor& a, F fwd, D dfdx) {
    const auto ad = a.data();
    std::vector<double> out(ad.size());
    std::transform(ad.begin(), ad.end(), out.begin(), fwd);
    Tensor result(a.shape(), std::move(out));
    record(name, {&a}, result, [a, y = result.impl(), dfdx](const std::vector<double>& g) {
        double* ga = grad_slot(a);
        if (!ga) return;
        const auto ad = a.data();
        for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * dfdx(ad[k], y->data[k]);
    });
    return result;
}

std::size_t normalize_axis(const char* op, const Tensor& a, int axis) {
    const int r = static_cast<int>(a.rank());
    const int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(a.shape()));
    }
    return static_cast<std::size_t>(ax);
}

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;
    Shape reduced;
};

AxisSplit split_axis(const Tensor& a, std::size_t ax, bool keepdim) {
    AxisSplit s;
    const auto& sh = a.shape();
    for (std::size_t i = 0; i < ax; ++i) s.outer *= sh[i];
    s.len = sh[ax];
    for (std::size_t i = ax + 1; i < sh.size(); ++i) s.inner *= sh[i];
    for (std::size_t i = 0; i < sh.size(); ++i) {
        if (i == ax) {
            if (keepdim) s.reduced.push_back(1);
        } else {
            s.reduced.push_back(sh[i]);
        }
    }
    return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double g) { return g * y; },
        [](double x, double, double g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double g) { return g / y; },
        [](double x, double y, double g) { return -g * x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        "scale", a, [factor](double x) { return x * factor; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(
        "add_scalar", a, [value](double x) { return x + value; },
        [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) {
    return unary(
        "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t k = b.shape()[0];
    const std::size_t n = b.shape()[1];
    const std::size_t rows = a.numel() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(rows * n, 0.0);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double* o = out.data() + r * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[r * k + p];
            const double* brow = bd.data() + p * n;
            for (std::size_t c = 0; c < n; ++c) o[c] += av * brow[c];
        }
    }
    Tensor result(std::move(out_shape), std::move(out));
    record("matmul", {&a, &b}, result, [a, b, rows, k, n](const std::vector<double>& g) {
        double* ga = grad_slot(a);
        double* gb = grad_slot(b);
        const auto ad = a.data();
        const auto bd = b.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double* brow = bd.data() + p * n;
                if (ga) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < n; ++c) acc += gr[c] * brow[c];
                    ga[r * k + p] += acc;
                }
                if (gb) {
                    const double av = ad[r * k + p];
                    double* gbrow = gb + p * n;
                    for (std::size_t c = 0; c < n; ++c) gbrow[c] += av * gr[c];
                }
            }
        }
    });
    return result;
}

Tensor tanh(const Tensor& a) {
    return unary(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
    return unary(
        "softplus", a,
        [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
        [](double x, double) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        });
}

Tensor sqrt(const Tensor& a) {
    for (double x : a.data()) {
        if (x < 0.0) {
            throw DomainError("sqrt: negative input " + std::to_string(x) + " in tensor of shape " +
                              shape_str(a.shape()));
        }
    }
    return unary(
        "sqrt", a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

Tensor log(const Tensor& a) {
    for (double x : a.data()) {
        if (!(x > 0.0)) {
            throw DomainError("log: non-positive input " + std::to_string(x) +
                              " in tensor of shape " + shape_str(a.shape()));
        }
    }
    return unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor abs(const Tensor& a) {
    return unary(
        "abs", a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    if (a.rank() == 0 || a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
        throw ShapeError("concat_last: leading axes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const std::size_t na = a.shape().back();
    const std::size_t nb = b.shape().back();
    const std::size_t rows = na == 0 ? b.numel() / std::max<std::size_t>(nb, 1) : a.numel() / na;
    Shape out_shape = a.shape();
    out_shape.back() = na + nb;
    std::vector<double> out;
    out.reserve(rows * (na + nb));
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t r = 0; r < rows; ++r) {
        out.insert(out.end(), ad.begin() + r * na, ad.begin() + (r + 1) * na);
        out.insert(out.end(), bd.begin() + r * nb, bd.begin() + (r + 1) * nb);
    }
    Tensor result(std::move(out_shape), std::move(out));
    record("concat_last", {&a, &b}, result, [a, b, rows, na, nb](const std::vector<double>& g) {
        double* ga = grad_slot(a);
        double* gb = grad_slot(b);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * (na + nb);
            if (ga) {
                for (std::size_t c = 0; c < na; ++c) ga[r * na + c] += gr[c];
            }
            if (gb) {
                for (std::size_t c = 0; c < nb; ++c) gb[r * nb + c] += gr[na + c];
            }
        }
    });
    return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor result(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
    record("reshape", {&a}, result, [a](const std::vector<double>& g) {
        double* ga = grad_slot(a);
        if (!ga) return;
        for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
    });
    return result;
}

Tensor sum(const Tensor& a, int axis, bool keepdim) {
    const auto ax = normalize_axis("sum", a, axis);
    const AxisSplit s = split_axis(a, ax, keepdim);
    const auto ad = a.data();
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t l = 0; l < s.len; ++l) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                out[o * s.inner + i] += ad[(o * s.len + l) * s.inner + i];
            }
        }
    }
    Tensor result(s.reduced, std::move(out));
    record("sum", {&a}, result, [a, s](const std::vector<double>& g) {
        double* ga = grad_slot(a);
        if (!ga) return;
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t l = 0; l < s.len; ++l) {
                for (std::size_t i = 0; i < s.inner; ++i) {
                    ga[(o * s.len + l) * s.inner + i] += g[o * s.inner + i];
                }
            }
        }
    });
    return result;
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
    const auto ax = normalize_axis("mean", a, axis);
    if (a.shape()[ax] == 0) throw ShapeError("mean: empty axis in shape " + shape_str(a.shape()));
    return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(a.shape()[ax]));
}

Tensor variance(const Tensor& a, int axis, bool keepdim) {
    const auto ax = normalize_axis("variance", a, axis);
    const AxisSplit s = split_axis(a, ax, keepdim);
    if (s.len == 0) {
        throw ShapeError("variance: axis length must be >= 1, shape " + shape_str(a.shape()));
    }
    const double n = static_cast<double>(s.len);
    const auto ad = a.data();
    auto means = std::make_shared<std::vector<double>>(s.outer * s.inner, 0.0);
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            double m = 0.0;
            for (std::size_t l = 0; l < s.len; ++l) m += ad[(o * s.len + l) * s.inner + i];
            m /= n;
            double v = 0.0;
            for (std::size_t l = 0; l < s.len; ++l) {
                const double d = ad[(o * s.len + l) * s.inner + i] - m;
                v += d * d;
            }
            (*means)[o * s.inner + i] = m;
            out[o * s.inner + i] = v / n;
        }
    }
    Tensor result(s.reduced, std::move(out));
    record("variance", {&a}, result, [a, s, means, n](const std::vector<double>& g) {
        double* ga = grad_slot(a);
        if (!ga) return;
        const auto ad = a.data();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                const double m = (*means)[o * s.inner + i];
                const double gi = g[o * s.inner + i];
                for (std::size_t l = 0; l < s.len; ++l) {
                    const std::size_t k = (o * s.len + l) * s.inner + i;
                    ga[k] += gi * 2.0 * (ad[k] - m) / n;
                }
            }
        }
    });
    return result;
}

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    Tensor result = Tensor::scalar(acc);
    record("sum_all", {&a}, result, [a](const std::vector<double>& g) {
        double* ga = grad_slot(a);
        if (!ga) return;
        for (std::size_t k = 0; k < a.numel(); ++k) ga[k] += g[0];
    });
    return result;
}

Tensor mean_all(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mse: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    return mean_all(square(sub(a, b)));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const Tensor centered = sub(x, mean(x, -1, true));
    const Tensor stddev = sqrt(add_scalar(variance(x, -1, true), eps));
    return add(mul(div(centered, stddev), gain), bias);
}

}  // namespace mmtrain::ops
