#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Operations on tensors
// that require gradients record their parents and a backward closure; calling
// backward() on a scalar walks that graph in reverse topological order and
// accumulates gradients into every reachable grad-enabled leaf.
//
// A graph belongs to the thread that built it. Leaf parameters can be shared
// read-only across threads between optimizer steps.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmae {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename Real>
struct TensorNode {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // empty until something is accumulated
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    Real* grad_data() {
        if (grad.empty()) {
            grad.assign(value.size(), Real{0});
        }
        return grad.data();
    }
};

template <typename Real>
class Tensor {
public:
    using value_type = Real;
    using Node = TensorNode<Real>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real fill, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<Real> data, bool requires_grad = false);
    static Tensor scalar(Real value, bool requires_grad = false);

    [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
    [[nodiscard]] const Shape& shape() const { return node_->shape; }
    [[nodiscard]] std::size_t rank() const { return node_->shape.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const;
    [[nodiscard]] std::size_t numel() const { return node_->value.size(); }

    [[nodiscard]] std::span<const Real> data() const { return node_->value; }
    /// Direct write access for optimizers and loaders; bypasses the graph.
    [[nodiscard]] std::span<Real> mutable_data() { return node_->value; }
    [[nodiscard]] std::span<const Real> grad() const { return node_->grad; }
    [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }

    [[nodiscard]] bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    void set_requires_grad(bool enabled);

    [[nodiscard]] Real item() const;
    [[nodiscard]] Tensor detach() const;
    void zero_grad();

    [[nodiscard]] Node& node() const { return *node_; }
    [[nodiscard]] const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Accumulates d(loss)/d(leaf) into every reachable grad-enabled leaf.
/// Gradients of intermediate nodes are recomputed on each call, so calling
/// twice without zeroing doubles the leaf gradients.
template <typename Real>
void backward(const Tensor<Real>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace lmae
