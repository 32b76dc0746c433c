#include "cpga/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace cpga {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor dimensions must be >= 1, got " + to_string(shape));
}

namespace detail {
namespace {
thread_local bool g_grad_mode = true;
}
bool grad_mode_enabled() { return g_grad_mode; }
void set_grad_mode(bool enabled) { g_grad_mode = enabled; }
}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<Impl>()) {
    validate_shape(shape);
    if (cpga::numel(shape) != data.size())
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         to_string(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape) {
    return full(shape, T(0));
}

template <typename T>
Tensor<T> Tensor<T>::ones(const Shape& shape) {
    return full(shape, T(1));
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value) {
    validate_shape(shape);
    return Tensor(shape, std::vector<T>(cpga::numel(shape), value));
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape()));
    return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != ndim()) throw ShapeError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= impl_->shape[axis]) throw ShapeError("index out of range");
        flat = flat * impl_->shape[axis] + i;
        ++axis;
    }
    return impl_->data[flat];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
    if (!is_leaf()) throw std::logic_error("requires_grad can only be changed on leaf tensors");
    impl_->requires_grad = value;
    if (!value) impl_->grad.clear();
    return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(impl_->shape, impl_->data);
}

template <typename T>
void Tensor<T>::backward() const {
    if (numel() != 1)
        throw ShapeError("backward() needs a scalar loss, got shape " + to_string(shape()));
    if (!impl_->requires_grad) throw std::logic_error("backward() on a tensor that does not require grad");

    // Post-order DFS yields a topological order: inputs before consumers.
    std::vector<Impl*> order;
    std::unordered_set<Impl*> visited;
    std::vector<std::pair<Impl*, std::size_t>> stack{{impl_.get(), 0}};
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (node->node && next < node->node->inputs.size()) {
            Impl* child = node->node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    impl_->grad_buffer()[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Impl* t = *it;
        if (!t->node) continue;
        if (t->grad.empty()) continue;  // nothing flowed into this node
        t->node->backward(*t);
        t->grad.clear();
        t->grad.shrink_to_fit();
    }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace cpga
