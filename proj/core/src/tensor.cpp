#include "mmtrain/tensor.hpp"

#include <atomic>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace mmtrain {

namespace {

std::atomic<std::uint64_t> g_next_node_id{1};
thread_local Tape* t_active_tape = nullptr;

detail::ImplPtr make_impl(Shape shape, std::vector<double> values) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->node_id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
    return impl;
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor() : impl_(make_impl({0}, {})) {}

Tensor::Tensor(Shape shape, std::vector<double> values) {
    if (numel_of(shape) != values.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    }
    impl_ = make_impl(std::move(shape), std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
    const auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
    }
    return impl_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    }
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

Tensor Tensor::clone() const {
    auto impl = make_impl(impl_->shape, impl_->data);
    impl->grad = impl_->grad;
    impl->requires_grad = impl_->requires_grad;
    return wrap(std::move(impl));
}

Tensor Tensor::detach() const { return wrap(make_impl(impl_->shape, impl_->data)); }

Tensor Tensor::wrap(detail::ImplPtr impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

void Tape::record(Record rec) { records_.push_back(std::move(rec)); }

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (records_.empty()) {
        throw ContractError("backward: tape is empty");
    }

    std::unordered_set<const detail::TensorImpl*> seen;
    auto reset = [&seen](const detail::ImplPtr& p) {
        if (seen.insert(p.get()).second) p->grad.assign(p->data.size(), 0.0);
    };
    for (const auto& rec : records_) {
        for (const auto& in : rec.inputs) reset(in);
        reset(rec.output);
    }
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = 1.0;

    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (it->backward) it->backward();
    }
    records_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(t_active_tape) { t_active_tape = nullptr; }
NoGradScope::~NoGradScope() { t_active_tape = previous_; }

Tape* active_tape() { return t_active_tape; }

void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

}  // namespace mmtrain
