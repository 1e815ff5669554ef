#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmtrain {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Raised when op inputs do not conform to the op's shape rule.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised for out-of-domain arguments (log/sqrt of negative values).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Raised when a caller breaks an API precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until allocated
    bool requires_grad = false;
    std::uint64_t node_id = 0;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

/// Dense float-64 tensor in row-major order.
///
/// A Tensor is a handle: copies share storage, so a parameter handed to an op
/// and the parameter held by the registry are the same node. Use clone() for
/// an independent deep copy.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }
    /// Size of axis `axis`; negative values count from the back.
    std::size_t dim(int axis) const;

    std::span<const double> data() const { return impl_->data; }
    std::span<double> data() { return impl_->data; }
    double item() const;
    double operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);

    bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> grad() { return impl_->grad; }
    /// Allocates (if needed) and zeroes the gradient slot.
    void zero_grad();

    std::uint64_t node_id() const { return impl_->node_id; }

    Tensor clone() const;
    Tensor detach() const;

    bool same_node(const Tensor& other) const { return impl_ == other.impl_; }

    const detail::ImplPtr& impl() const { return impl_; }
    static Tensor wrap(detail::ImplPtr impl);

private:
    detail::ImplPtr impl_;
};

/// Ordered record of the ops executed while gradients are enabled.
class Tape {
public:
    struct Record {
        std::string op;
        std::vector<detail::ImplPtr> inputs;
        detail::ImplPtr output;
        std::function<void()> backward;
    };

    void record(Record rec);
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const std::vector<Record>& records() const { return records_; }
    void clear() { records_.clear(); }

    /// Reverse sweep from a scalar loss. Every tensor touched by the tape gets
    /// a freshly zeroed gradient before the sweep; the tape is consumed.
    void backward(const Tensor& loss);

private:
    std::vector<Record> records_;
};

/// Installs a tape as the thread's active recorder for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Suspends recording on this thread.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

/// Convenience for the common case of a tape owned by the caller.
void backward(Tape& tape, const Tensor& loss);

}  // namespace mmtrain
