#include "lmae/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace lmae {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), Real{0}, requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real fill, bool requires_grad) {
    auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<Real>(n, fill), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::from_data(Shape shape, std::vector<Real> data, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) {
            throw ShapeError("tensor: zero extent in shape " + shape_to_string(shape));
        }
    }
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor: shape " + shape_to_string(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " elements but " + std::to_string(data.size()) + " values were given");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor{std::move(node)};
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

template <typename Real>
std::size_t Tensor<Real>::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape()));
    }
    return node_->shape[axis];
}

template <typename Real>
void Tensor<Real>::set_requires_grad(bool enabled) {
    if (!node_->is_leaf) {
        throw std::logic_error("set_requires_grad: only leaf tensors can toggle gradient tracking");
    }
    node_->requires_grad = enabled;
}

template <typename Real>
Real Tensor<Real>::item() const {
    if (numel() != 1) {
        throw ShapeError("item: tensor of shape " + shape_to_string(shape()) + " is not a scalar");
    }
    return node_->value[0];
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
    return from_data(shape(), node_->value, false);
}

template <typename Real>
void Tensor<Real>::zero_grad() {
    node_->grad.clear();
}

template <typename Real>
void backward(const Tensor<Real>& loss) {
    using Node = TensorNode<Real>;
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " +
                         (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        throw std::logic_error("backward: loss does not depend on any grad-enabled tensor");
    }

    // Iterative post-order DFS; `order` ends up parents-before-children.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node_ptr().get(), 0);
    visited.insert(loss.node_ptr().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order) {
        if (!node->is_leaf) {
            node->grad.clear();
        }
    }
    loss.node().grad_data()[0] += Real{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) {
            node->backward_fn(*node);
        }
    }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace lmae
