#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tensor/errors.hpp"

namespace dhr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the autodiff graph. Data is immutable once a node has been
// used as an input; only leaves may be rewritten (optimizer updates, finite
// differences), and only while no graph built on them is being differentiated.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }
    std::vector<T>& grad_buffer();
};

}  // namespace detail

// Dense row-major tensor handle. Copies share the underlying node; values are
// never mutated in place once a tensor participates in a graph, so sharing is
// observationally the same as copying.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, T value);
    static Tensor from(const Shape& shape, std::vector<T> values);
    static Tensor scalar(T value);
    // Leaf that participates in gradient tracking.
    static Tensor param(const Shape& shape, std::vector<T> values);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t ndim() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const T> data() const;
    // Mutable view of a leaf's values. Throws UsageError for op outputs.
    std::span<T> leaf_data();

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const T> grad() const;
    void zero_grad();

    T item() const;
    template <typename... Index>
    T at(Index... index) const {
        const std::size_t idx[] = {static_cast<std::size_t>(index)...};
        return at_index(std::span<const std::size_t>(idx, sizeof...(Index)));
    }
    T at_index(std::span<const std::size_t> index) const;

    Tensor detach() const;

    const NodePtr& node() const { return node_; }

private:
    const detail::Node<T>& checked() const;

    NodePtr node_;
};

// Gradient tape switch. While a guard is alive on a thread, ops on that
// thread record no graph edges.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Populates grad on every reachable leaf with requires_grad. Leaf grads
// accumulate across calls until zero_grad().
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

// Builds an op output. The backward closure is attached only when some
// parent requires grad and the tape is enabled. Throws NumericError when the
// produced values are not finite.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward_fn,
                      const char* op_name);

template <typename T>
void check_finite(std::span<const T> values, const char* op_name);

}  // namespace detail

}  // namespace dhr
