#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace cpga {

using Shape = std::vector<std::size_t>;

/// Scalar width of a computation. Every tensor in one graph shares it;
/// there is no implicit promotion between the two.
enum class Precision { single, double_precision };

template <typename T>
constexpr Precision precision_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? Precision::single : Precision::double_precision;
}

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);
void validate_shape(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

/// One recorded operation. The node owns its inputs but never its output,
/// so the graph is freed as soon as the last handle to the result drops.
template <typename T>
struct GradNode {
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::shared_ptr<GradNode<T>> node;

    /// Gradient buffer of an input during backward, or nullptr when the
    /// input does not participate in differentiation.
    T* grad_buffer() {
        if (!requires_grad) return nullptr;
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad.data();
    }
};

bool grad_mode_enabled();
void set_grad_mode(bool enabled);

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_enabled()) { detail::set_grad_mode(false); }
    ~NoGradGuard() { detail::set_grad_mode(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy. Data is treated as immutable once produced by an op, except
/// for parameters updated by an optimizer between steps.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using Impl = detail::TensorImpl<T>;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data);

    static Tensor zeros(const Shape& shape);
    static Tensor ones(const Shape& shape);
    static Tensor full(const Shape& shape, T value);
    static Tensor scalar(T value) { return full({1}, value); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    /// Writable view for leaf tensors (parameters, test fixtures).
    std::span<T> mutable_data() { return impl_->data; }
    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool value);
    bool is_leaf() const { return impl_->node == nullptr; }
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
    /// calls until zero_grad().
    void backward() const;

    Tensor detach() const;
    Tensor clone() const { return detach(); }

    const std::shared_ptr<Impl>& impl() const { return impl_; }
    static Tensor from_impl(std::shared_ptr<Impl> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

private:
    std::shared_ptr<Impl> impl_;
};

/// Name/tensor pair used for parameter enumeration and serialization.
template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedTensor<T>>;

template <typename T>
std::size_t count_elements(const ParameterList<T>& params) {
    std::size_t total = 0;
    for (const auto& p : params) total += p.tensor.numel();
    return total;
}

template <typename T>
void zero_grads(const ParameterList<T>& params) {
    for (const auto& p : params) Tensor<T>(p.tensor).zero_grad();
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cpga
