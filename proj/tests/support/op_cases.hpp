#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmtrain/ops.hpp"
#include "test_support.hpp"

namespace mmtrain::testing {

struct InputSpec {
    double lo = -1.0;
    double hi = 1.0;
    // Keeps samples at least this far from zero (kinks of relu/abs, poles of div).
    double min_abs = 0.0;
};

/// One op kind with a generator for random input shapes.
struct OpCase {
    std::string name;
    std::vector<InputSpec> specs;
    std::function<std::vector<Shape>(Rng&)> shapes;
    std::function<Tensor(const std::vector<Tensor>&)> fn;
};

inline std::size_t rand_dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 4) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline std::vector<OpCase> op_cases() {
    using V = std::vector<Tensor>;
    const InputSpec any{};
    const InputSpec pos{0.2, 2.0, 0.0};
    const InputSpec nz{-1.0, 1.0, 0.1};
    auto same2 = [](Rng& r) {
        Shape s{rand_dim(r), rand_dim(r)};
        return std::vector<Shape>{s, s};
    };
    auto one3 = [](Rng& r) { return std::vector<Shape>{{rand_dim(r), rand_dim(r), rand_dim(r)}}; };
    // [B, L, d] with a trailing-axis vector
    auto bcast_vec = [](Rng& r) {
        const std::size_t d = rand_dim(r);
        return std::vector<Shape>{{rand_dim(r), rand_dim(r), d}, {d}};
    };
    // [B, d] with a [B, 1] column
    auto bcast_col = [](Rng& r) {
        const std::size_t b = rand_dim(r);
        return std::vector<Shape>{{b, rand_dim(r)}, {b, 1}};
    };

    std::vector<OpCase> cases = {
        {"add", {any, any}, same2, [](const V& x) { return ops::add(x[0], x[1]); }},
        {"add_broadcast_vec", {any, any}, bcast_vec, [](const V& x) { return ops::add(x[0], x[1]); }},
        {"sub", {any, any}, same2, [](const V& x) { return ops::sub(x[0], x[1]); }},
        {"sub_broadcast_col", {any, any}, bcast_col, [](const V& x) { return ops::sub(x[0], x[1]); }},
        {"mul", {any, any}, same2, [](const V& x) { return ops::mul(x[0], x[1]); }},
        {"mul_broadcast_vec", {any, any}, bcast_vec, [](const V& x) { return ops::mul(x[0], x[1]); }},
        {"div", {any, pos}, same2, [](const V& x) { return ops::div(x[0], x[1]); }},
        {"div_broadcast_col", {any, pos}, bcast_col, [](const V& x) { return ops::div(x[0], x[1]); }},
        {"scale", {any}, one3, [](const V& x) { return ops::scale(x[0], -1.7); }},
        {"add_scalar", {any}, one3, [](const V& x) { return ops::add_scalar(x[0], 0.3); }},
        {"neg", {any}, one3, [](const V& x) { return ops::neg(x[0]); }},
        {"matmul_2d", {any, any},
         [](Rng& r) {
             const std::size_t k = rand_dim(r);
             return std::vector<Shape>{{rand_dim(r), k}, {k, rand_dim(r)}};
         },
         [](const V& x) { return ops::matmul(x[0], x[1]); }},
        {"matmul_3d", {any, any},
         [](Rng& r) {
             const std::size_t k = rand_dim(r);
             return std::vector<Shape>{{rand_dim(r), rand_dim(r), k}, {k, rand_dim(r)}};
         },
         [](const V& x) { return ops::matmul(x[0], x[1]); }},
        {"tanh", {InputSpec{-2.0, 2.0}}, one3, [](const V& x) { return ops::tanh(x[0]); }},
        {"relu", {nz}, one3, [](const V& x) { return ops::relu(x[0]); }},
        {"sigmoid", {InputSpec{-3.0, 3.0}}, one3, [](const V& x) { return ops::sigmoid(x[0]); }},
        {"softplus", {InputSpec{-3.0, 3.0}}, one3, [](const V& x) { return ops::softplus(x[0]); }},
        {"sqrt", {pos}, one3, [](const V& x) { return ops::sqrt(x[0]); }},
        {"log", {pos}, one3, [](const V& x) { return ops::log(x[0]); }},
        {"exp", {any}, one3, [](const V& x) { return ops::exp(x[0]); }},
        {"abs", {nz}, one3, [](const V& x) { return ops::abs(x[0]); }},
        {"square", {any}, one3, [](const V& x) { return ops::square(x[0]); }},
        {"concat_last", {any, any},
         [](Rng& r) {
             const std::size_t b = rand_dim(r);
             const std::size_t l = rand_dim(r);
             return std::vector<Shape>{{b, l, rand_dim(r)}, {b, l, rand_dim(r)}};
         },
         [](const V& x) { return ops::concat_last(x[0], x[1]); }},
        {"reshape", {any}, one3,
         [](const V& x) { return ops::reshape(x[0], {x[0].numel()}); }},
        {"sum_axis0", {any}, one3, [](const V& x) { return ops::sum(x[0], 0); }},
        {"sum_axis1_keepdim", {any}, one3, [](const V& x) { return ops::sum(x[0], 1, true); }},
        {"mean_last", {any}, one3, [](const V& x) { return ops::mean(x[0], -1); }},
        {"mean_axis1", {any}, one3, [](const V& x) { return ops::mean(x[0], 1); }},
        {"variance_last", {any}, one3, [](const V& x) { return ops::variance(x[0], -1); }},
        {"variance_axis0_keepdim", {any}, one3, [](const V& x) { return ops::variance(x[0], 0, true); }},
        {"sum_all", {any}, one3, [](const V& x) { return ops::sum_all(x[0]); }},
        {"mean_all", {any}, one3, [](const V& x) { return ops::mean_all(x[0]); }},
        {"mse", {any, any},
         [](Rng& r) {
             Shape s{rand_dim(r), rand_dim(r), rand_dim(r)};
             return std::vector<Shape>{s, s};
         },
         [](const V& x) { return ops::mse(x[0], x[1]); }},
        {"linear", {any, any, any},
         [](Rng& r) {
             const std::size_t in = rand_dim(r);
             const std::size_t out = rand_dim(r);
             return std::vector<Shape>{{rand_dim(r), rand_dim(r), in}, {in, out}, {out}};
         },
         [](const V& x) { return ops::linear(x[0], x[1], x[2]); }},
        {"layer_norm", {any, any, any},
         [](Rng& r) {
             const std::size_t d = rand_dim(r, 2, 5);
             return std::vector<Shape>{{rand_dim(r), rand_dim(r), d}, {d}, {d}};
         },
         [](const V& x) { return ops::layer_norm(x[0], x[1], x[2]); }},
    };
    return cases;
}

inline double sample_value(const InputSpec& spec, Rng& rng) {
    std::uniform_real_distribution<double> dist(spec.lo, spec.hi);
    while (true) {
        const double x = dist(rng);
        if (std::abs(x) >= spec.min_abs) return x;
    }
}

/// Max relative error (analytic vs central differences, h = 1e-5) over every
/// input entry of one random instance of `c`. The scalar loss is a random
/// weighted sum of the op's output so every output entry carries gradient.
inline double check_op_instance(const OpCase& c, Rng& rng, double h = 1e-5) {
    const auto shapes = c.shapes(rng);
    std::vector<Tensor> inputs;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        std::vector<double> v(numel_of(shapes[i]));
        for (double& x : v) x = sample_value(c.specs[i], rng);
        Tensor t(shapes[i], std::move(v));
        t.set_requires_grad(true);
        inputs.push_back(t);
    }
    Tensor probe;
    {
        NoGradScope no_grad;
        probe = random_tensor(c.fn(inputs).shape(), rng);
    }
    auto loss_of = [&] { return ops::sum_all(ops::mul(c.fn(inputs), probe)); };

    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = loss_of();
    }
    tape.backward(loss);

    double worst = 0.0;
    for (auto& x : inputs) {
        const std::vector<double> analytic(x.grad().begin(), x.grad().end());
        const auto numeric = numeric_grad(
            [&] {
                NoGradScope no_grad;
                return loss_of().item();
            },
            x, h);
        worst = std::max(worst, max_rel_error(analytic, numeric));
    }
    return worst;
}

}  // namespace mmtrain::testing
