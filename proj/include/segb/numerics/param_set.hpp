#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "segb/numerics/matrix.hpp"
#include "segb/numerics/seeded_stream.hpp"

namespace segb::nn {

struct Parameter {
    std::string name;
    Matrix value;
};

// Named, ordered parameter arrays. Indices handed out by add() stay valid for
// the lifetime of the set and across copies, so models refer to parameters
// by index and a copied ParamSet is a full snapshot.
class ParamSet {
public:
    std::size_t add(std::string name, Matrix init);
    std::size_t add_normal(std::string name, std::size_t rows, std::size_t cols, double stddev,
                           SeededStream& rng);
    std::size_t add_constant(std::string name, std::size_t rows, std::size_t cols, double value);

    std::size_t count() const noexcept { return params_.size(); }
    // Total number of scalar entries.
    std::size_t size() const noexcept;

    Parameter& operator[](std::size_t i) { return params_[i]; }
    const Parameter& operator[](std::size_t i) const { return params_[i]; }
    std::size_t index_of(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    std::vector<double> flatten() const;
    void unflatten(std::span<const double> flat);

    // Euclidean distance between two sets with identical layout.
    static double distance(const ParamSet& a, const ParamSet& b);
    bool same_layout(const ParamSet& other) const;

    bool operator==(const ParamSet& other) const;

private:
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace segb::nn
