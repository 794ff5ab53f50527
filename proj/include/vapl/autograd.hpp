#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vapl/tensor.hpp"

namespace vapl {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Gradients of a scalar loss keyed by parameter name.
class Gradients {
public:
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return grads_.contains(name); }
    const std::map<std::string, Tensor>& all() const { return grads_; }
    std::size_t size() const { return grads_.size(); }
    // Entries whose name starts with `prefix`, with the prefix stripped.
    Gradients subset(const std::string& prefix) const;

private:
    friend class Tape;
    std::map<std::string, Tensor> grads_;
};

// Reverse-mode recording. Nodes are appended in evaluation order, so reverse
// index order is a valid topological order for the backward sweep.
class Tape {
public:
    // Receives the output gradient, the parent values, and one gradient slot per
    // parent (nullptr when that parent does not need a gradient).
    using BackwardFn = std::function<void(const Tensor& gout, const std::vector<const Tensor*>& inputs,
                                          const std::vector<Tensor*>& gins)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    // Named trainable leaf. Names must be unique on a tape.
    Var param(const std::string& name, const Tensor& value);
    // Unnamed leaf that still collects a gradient (used for input-gradient checks).
    Var variable(Tensor value);

    Var record(Tensor value, std::vector<Var> parents, BackwardFn backward);

    // Runs the backward sweep from a single-element loss and returns the
    // gradient of every named parameter on the tape.
    Gradients backward(Var loss);
    // Gradient of any leaf or intermediate after backward(); zero if unreached.
    const Tensor& grad(Var v) const;

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }
    bool has_param(const std::string& name) const { return param_ids_.contains(name); }

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::map<std::string, std::size_t> param_ids_;
};

// Differentiable ops. Shapes are checked eagerly and reported as ShapeError.
namespace ag {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sum(Var a);
// Squared Frobenius norm, sum of squares of every element.
Var square_sum(Var a);
Var abs(Var a);
Var relu(Var a);
Var reshape(Var a, Shape shape);
// [B, ...] -> [B, rest]
Var flatten(Var a);
Var conv2d(Var x, Var w, Var b, std::size_t pad);
Var maxpool2(Var x);
Var linear(Var x, Var w, Var b);
// x[M,In] times w[Out,In]^T, no bias.
Var matmul_t(Var x, Var w);
Var exp(Var a);
// 1 + tanh(a), elementwise; range (0, 2).
Var one_plus_tanh(Var a);
// image[B,C,H,W] times mask[B,H,W] broadcast over channels.
Var mask_channels(Var image, Var mask);
// -sum_n log(max(softmax(logits)[n, y_n], eps)) over rows of [B,K] logits.
Var cross_entropy_sum(Var logits, const Tensor& onehot, double eps);
// Sum of a list of single-element vars in list order.
Var add_n(const std::vector<Var>& terms);

}  // namespace ag

}  // namespace vapl
