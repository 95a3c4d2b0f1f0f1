#pragma once

// Differentiable operations on Tape Vars.
//
// Binary elementwise ops accept either equal shapes or a 1 x m right-hand side
// that is broadcast across the rows of the left-hand side.

#include <cstddef>
#include <span>
#include <vector>

#include "segb/numerics/tape.hpp"

namespace segb {
class SeededStream;
}

namespace segb::nn {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var minimum(Var a, Var b);
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var neg(Var a);

Var gelu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
// Gradient is zero where the input lies outside [lo, hi].
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// Multi-head scaled dot-product attention over rows of q, k, v (tokens x
// width). With causal = true token i attends to tokens j <= i only. A
// nonzero block splits the rows into independent sequences of that length.
Var attention(Var q, Var k, Var v, std::size_t heads, bool causal = true, std::size_t block = 0);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t first, std::size_t count);
Var slice_cols(Var a, std::size_t first, std::size_t count);
Var gather_rows(Var a, std::span<const std::size_t> rows);

// Inverted dropout; identity when p == 0.
Var dropout(Var a, double p, SeededStream& rng);

// Copy of the value that blocks gradient flow.
Var detach(Var a);

// |tau - 1[u < 0]| * u^2, elementwise.
Var expectile(Var u, double tau);

// min(r * A, clip(r, 1 - eps, 1 + eps) * A) elementwise, A held constant.
Var clipped_surrogate(Var ratio, const Matrix& advantages, double eps);

}  // namespace segb::nn
