#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation applied to its Vars together with a
// backward closure. backward() walks the records in reverse creation order.
// Parameters enter through Tape::param(); their gradients are kept on the
// tape (models stay const during a forward pass) and read back with
// gradients().

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "segb/numerics/matrix.hpp"
#include "segb/numerics/param_set.hpp"

namespace segb::nn {

class Tape;

class Var {
public:
    Var() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    const Matrix& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    // Value of a 1 x 1 Var.
    double item() const;
    Tape& tape() const { return *tape_; }
    std::uint32_t id() const noexcept { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

class Tape {
public:
    // Receives the gradient of the loss w.r.t. the node's output.
    using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }

    Var constant(Matrix value);
    Var param(const Parameter& p);

    // Records an op output. `fn` is dropped when no input requires a gradient.
    Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
    Var record(Matrix value, std::span<const Var> inputs, BackwardFn fn);

    void backward(Var loss);

    bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }
    // Gradient buffer of a node, allocated on first use.
    Matrix& grad(const Var& v);
    const Matrix& value(const Var& v) const { return nodes_[v.id_].value; }

    // Gradient of the last backward() w.r.t. a parameter; zeros if unused.
    Matrix param_grad(const Parameter& p) const;
    std::vector<Matrix> gradients(const ParamSet& params) const;

    std::size_t node_count() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        BackwardFn backward;
        const Parameter* param = nullptr;
    };

    Var push(Node node);

    bool grad_enabled_;
    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

}  // namespace segb::nn
