#include "tensor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dhr {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_next_seq = 1;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
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

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace detail {

template <typename T>
std::vector<T>& Node<T>::grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
}

template <typename T>
void check_finite(std::span<const T> values, const char* op_name) {
    for (T v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + op_name);
        }
    }
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward_fn,
                      const char* op_name) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError(std::string(op_name) + ": buffer does not match shape " +
                             shape_str(shape));
    }
    check_finite<T>(data, op_name);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->seq = g_next_seq++;
    if (g_grad_enabled) {
        bool any = std::any_of(parents.begin(), parents.end(),
                               [](const auto& p) { return p && p->requires_grad; });
        if (any) {
            node->requires_grad = true;
            node->parents = std::move(parents);
            node->backward = std::move(backward_fn);
        }
    }
    return Tensor<T>(std::move(node));
}

}  // namespace detail

namespace {

template <typename T>
std::shared_ptr<detail::Node<T>> make_leaf(const Shape& shape, std::vector<T> values,
                                           bool requires_grad) {
    for (std::size_t e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    detail::check_finite<T>(values, "tensor construction");
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = shape;
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    node->seq = g_next_seq++;
    return node;
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape) {
    return Tensor(make_leaf<T>(shape, std::vector<T>(shape_numel(shape), T(0)), false));
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value) {
    return Tensor(make_leaf<T>(shape, std::vector<T>(shape_numel(shape), value), false));
}

template <typename T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::vector<T> values) {
    return Tensor(make_leaf<T>(shape, std::move(values), false));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
    return Tensor(make_leaf<T>({1}, {value}, false));
}

template <typename T>
Tensor<T> Tensor<T>::param(const Shape& shape, std::vector<T> values) {
    return Tensor(make_leaf<T>(shape, std::move(values), true));
}

template <typename T>
const detail::Node<T>& Tensor<T>::checked() const {
    if (!node_) throw UsageError("use of an undefined tensor");
    return *node_;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    return checked().shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
    return checked().data.size();
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
    return checked().data;
}

template <typename T>
std::span<T> Tensor<T>::leaf_data() {
    checked();
    if (!node_->is_leaf()) throw UsageError("leaf_data() on an op output");
    return node_->data;
}

template <typename T>
bool Tensor<T>::requires_grad() const {
    return checked().requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    checked();
    if (!node_->is_leaf()) throw UsageError("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
    return *this;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
    return checked().is_leaf();
}

template <typename T>
bool Tensor<T>::has_grad() const {
    const auto& n = checked();
    return !n.grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    return checked().grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
    checked();
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
    const auto& n = checked();
    if (n.data.size() != 1) throw UsageError("item() on tensor of shape " + shape_str(n.shape));
    return n.data[0];
}

template <typename T>
T Tensor<T>::at_index(std::span<const std::size_t> index) const {
    const auto& n = checked();
    if (index.size() != n.shape.size()) {
        throw DimensionError("index rank mismatch for shape " + shape_str(n.shape));
    }
    std::size_t flat = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= n.shape[i]) throw DimensionError("index out of range");
        flat = flat * n.shape[i] + index[i];
    }
    return n.data[flat];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    const auto& n = checked();
    return Tensor(make_leaf<T>(n.shape, n.data, false));
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw UsageError("backward() on an undefined tensor");
    if (loss.numel() != 1) {
        throw UsageError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) throw UsageError("backward() on a tensor without gradient tracking");

    using NodeT = detail::Node<T>;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<NodeT*> stack{loss.node().get()};
    while (!stack.empty()) {
        NodeT* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p && p->requires_grad && !seen.count(p.get())) stack.push_back(p.get());
        }
    }
    // Creation order is a valid topological order of the tape.
    std::sort(order.begin(), order.end(), [](const NodeT* a, const NodeT* b) { return a->seq > b->seq; });

    for (NodeT* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
    }
    loss.node()->grad_buffer()[0] += T(1);
    for (NodeT* n : order) {
        if (!n->is_leaf()) n->backward(*n);
    }
}

template struct detail::Node<float>;
template struct detail::Node<double>;
template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template Tensor<float> detail::make_result<float>(Shape, std::vector<float>,
                                                  std::vector<std::shared_ptr<detail::Node<float>>>,
                                                  std::function<void(detail::Node<float>&)>, const char*);
template Tensor<double> detail::make_result<double>(Shape, std::vector<double>,
                                                    std::vector<std::shared_ptr<detail::Node<double>>>,
                                                    std::function<void(detail::Node<double>&)>, const char*);
template void detail::check_finite<float>(std::span<const float>, const char*);
template void detail::check_finite<double>(std::span<const double>, const char*);

}  // namespace dhr
