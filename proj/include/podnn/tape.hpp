#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "podnn/tensor.hpp"

namespace podnn {

// Reverse-mode tape over whole tensors. Ops are recorded eagerly: forward
// values are computed at record time, each node carries a closure that
// pushes adjoints into its inputs. Nodes are created in topological order,
// so one reverse sweep over the node array is a valid backward pass.
template <class S>
class TapeT {
public:
    using Id = int32_t;

    struct Node {
        TensorT<S> value;
        TensorT<S> grad;
        bool has_grad = false;
        bool needs_grad = false;
        std::function<void(TapeT&)> backward;
    };

    Id leaf(TensorT<S> value, bool needs_grad) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id constant(TensorT<S> value) { return leaf(std::move(value), false); }

    Id record(TensorT<S> value, bool needs_grad, std::function<void(TapeT&)> backward) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        if (needs_grad) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    const TensorT<S>& val(Id id) const { return nodes_[check(id)].value; }

    bool needs(Id id) const { return nodes_[check(id)].needs_grad; }

    // Adjoint accumulator, allocated (zeroed) on first touch.
    TensorT<S>& grad_acc(Id id) {
        Node& n = nodes_[check(id)];
        if (!n.has_grad) {
            n.grad = TensorT<S>(n.value.shape);
            n.has_grad = true;
        }
        return n.grad;
    }

    bool has_grad(Id id) const { return nodes_[check(id)].has_grad; }

    // Gradient of a node after backward(); zeros if it was never reached.
    TensorT<S> grad_or_zero(Id id) const {
        const Node& n = nodes_[check(id)];
        if (n.has_grad) return n.grad;
        return TensorT<S>(n.value.shape);
    }

    // Backpropagate from a scalar loss node through everything recorded so far.
    void backward(Id loss) {
        const Node& ln = nodes_[check(loss)];
        if (ln.value.size() != 1) {
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        ln.value.shape_str());
        }
        if (!ln.needs_grad) {
            throw std::invalid_argument("backward: loss does not depend on any differentiable input");
        }
        grad_acc(loss)[0] += S(1);
        run_reverse(loss);
    }

    // Backward from an arbitrary node with an explicit seed adjoint (tests).
    void backward_seeded(Id node, const TensorT<S>& seed) {
        if (seed.shape != nodes_[check(node)].value.shape) {
            throw std::invalid_argument("backward_seeded: seed shape mismatch");
        }
        TensorT<S>& g = grad_acc(node);
        for (int64_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
        run_reverse(node);
    }

    // Drop adjoints but keep values; lets several backward passes reuse one
    // recorded forward.
    void zero_grads() {
        for (Node& n : nodes_) {
            n.grad = TensorT<S>();
            n.has_grad = false;
        }
    }

    void clear() { nodes_.clear(); }

    size_t size() const { return nodes_.size(); }

private:
    void run_reverse(Id from) {
        for (Id i = from; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.has_grad && n.backward) n.backward(*this);
        }
    }

    Id check(Id id) const {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
            throw std::invalid_argument("tape: node id out of range");
        }
        return id;
    }

    std::vector<Node> nodes_;
};

using Tape = TapeT<double>;
using TapeF = TapeT<float>;

} // namespace podnn
