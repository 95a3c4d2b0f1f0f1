#include "segb/numerics/param_set.hpp"

#include <cmath>

#include "segb/error.hpp"

namespace segb::nn {

std::size_t ParamSet::add(std::string name, Matrix init) {
    if (index_.count(name) != 0)
        throw Error(ErrorCode::configuration, "duplicate parameter name: " + name);
    const std::size_t idx = params_.size();
    index_.emplace(name, idx);
    params_.push_back(Parameter{std::move(name), std::move(init)});
    return idx;
}

std::size_t ParamSet::add_normal(std::string name, std::size_t rows, std::size_t cols,
                                 double stddev, SeededStream& rng) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = stddev * rng.normal();
    return add(std::move(name), std::move(m));
}

std::size_t ParamSet::add_constant(std::string name, std::size_t rows, std::size_t cols,
                                   double value) {
    return add(std::move(name), Matrix(rows, cols, value));
}

std::size_t ParamSet::size() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

std::size_t ParamSet::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorCode::schema_mismatch, "unknown parameter: " + name);
    return it->second;
}

std::vector<double> ParamSet::flatten() const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& p : params_) out.insert(out.end(), p.value.values().begin(), p.value.values().end());
    return out;
}

void ParamSet::unflatten(std::span<const double> flat) {
    if (flat.size() != size())
        throw Error(ErrorCode::invalid_input, "flat parameter vector has wrong length");
    std::size_t off = 0;
    for (auto& p : params_) {
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = flat[off + i];
        off += p.value.size();
    }
}

bool ParamSet::same_layout(const ParamSet& other) const {
    if (params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& a = params_[i];
        const auto& b = other.params_[i];
        if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
            return false;
    }
    return true;
}

double ParamSet::distance(const ParamSet& a, const ParamSet& b) {
    if (!a.same_layout(b)) throw Error(ErrorCode::invalid_input, "parameter layouts differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
        const auto& x = a.params_[i].value;
        const auto& y = b.params_[i].value;
        for (std::size_t j = 0; j < x.size(); ++j) acc += (x[j] - y[j]) * (x[j] - y[j]);
    }
    return std::sqrt(acc);
}

bool ParamSet::operator==(const ParamSet& other) const {
    if (!same_layout(other)) return false;
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].value.storage() != other.params_[i].value.storage()) return false;
    return true;
}

}  // namespace segb::nn
