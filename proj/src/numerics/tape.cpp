#include "segb/numerics/tape.hpp"

#include "segb/error.hpp"

namespace segb::nn {

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::item() const {
    const Matrix& m = value();
    if (m.size() != 1) throw Error(ErrorCode::invalid_input, "item() on a non-scalar Var");
    return m[0];
}

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::param(const Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Node n;
    n.value = p.value;
    n.requires_grad = grad_enabled_;
    n.param = &p;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id_);
    return v;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    if (grad_enabled_) {
        for (const Var& in : inputs) {
            if (in.tape_ != this) throw Error(ErrorCode::invalid_input, "Var from another tape");
            if (nodes_[in.id_].requires_grad) {
                n.requires_grad = true;
                break;
            }
        }
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
}

Matrix& Tape::grad(const Var& v) {
    Node& n = nodes_[v.id_];
    if (n.grad.size() != n.value.size() || n.grad.rows() != n.value.rows())
        n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(Var loss) {
    if (!grad_enabled_) throw Error(ErrorCode::invalid_input, "backward() on a no-grad tape");
    if (loss.tape_ != this || nodes_[loss.id_].value.size() != 1)
        throw Error(ErrorCode::invalid_input, "backward() needs a scalar loss from this tape");
    for (auto& n : nodes_) n.grad = Matrix();
    if (!nodes_[loss.id_].requires_grad) return;
    grad(loss)[0] = 1.0;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.empty()) continue;
        n.backward(*this, n.grad);
    }
}

Matrix Tape::param_grad(const Parameter& p) const {
    auto it = param_nodes_.find(&p);
    if (it == param_nodes_.end()) return Matrix(p.value.rows(), p.value.cols());
    const Node& n = nodes_[it->second];
    if (n.grad.empty()) return Matrix(p.value.rows(), p.value.cols());
    return n.grad;
}

std::vector<Matrix> Tape::gradients(const ParamSet& params) const {
    std::vector<Matrix> out;
    out.reserve(params.count());
    for (const auto& p : params) out.push_back(param_grad(p));
    return out;
}

}  // namespace segb::nn
