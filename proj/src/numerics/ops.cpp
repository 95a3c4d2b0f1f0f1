#include "segb/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "segb/error.hpp"
#include "segb/kernels.hpp"
#include "segb/numerics/seeded_stream.hpp"

namespace segb::nn {
namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw Error(ErrorCode::invalid_input,
                std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
}

// True when b is broadcast across the rows of a.
bool check_binary(const char* op, const Matrix& a, const Matrix& b) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return false;
    if (b.rows() == 1 && b.cols() == a.cols()) return true;
    shape_error(op, a, b);
}

// Sums g into target, collapsing rows when target is a broadcast row.
void accumulate(Matrix& target, const Matrix& g, bool broadcast) {
    if (!broadcast) {
        kernels::active().axpy(1.0, g.data(), target.data(), g.size());
        return;
    }
    for (std::size_t r = 0; r < g.rows(); ++r)
        kernels::active().axpy(1.0, g.row(r), target.data(), g.cols());
}

template <typename F, typename D>
Var unary(Var a, F f, D dfdx) {
    const Matrix& av = a.value();
    Matrix out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    return a.tape().record(std::move(out), {a}, [a, dfdx](Tape& t, const Matrix& g) {
        if (!t.requires_grad(a)) return;
        const Matrix& x = t.value(a);
        Matrix& ga = t.grad(a);
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * dfdx(x[i]);
    });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Var matmul(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
    const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
    Matrix out(n, m);
    kernels::active().gemm_nn(av.data(), bv.data(), out.data(), n, k, m);
    return a.tape().record(std::move(out), {a, b}, [a, b, n, k, m](Tape& t, const Matrix& g) {
        const auto& kt = kernels::active();
        if (t.requires_grad(a)) kt.gemm_nt(g.data(), t.value(b).data(), t.grad(a).data(), n, k, m);
        if (t.requires_grad(b)) kt.gemm_tn(t.value(a).data(), g.data(), t.grad(b).data(), n, k, m);
    });
}

Var add(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const bool bc = check_binary("add", av, bv);
    Matrix out = av;
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) += bc ? bv(0, c) : bv(r, c);
    return a.tape().record(std::move(out), {a, b}, [a, b, bc](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) accumulate(t.grad(a), g, false);
        if (t.requires_grad(b)) accumulate(t.grad(b), g, bc);
    });
}

Var sub(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const bool bc = check_binary("sub", av, bv);
    Matrix out = av;
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) -= bc ? bv(0, c) : bv(r, c);
    return a.tape().record(std::move(out), {a, b}, [a, b, bc](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) accumulate(t.grad(a), g, false);
        if (t.requires_grad(b)) {
            Matrix ng = g;
            for (std::size_t i = 0; i < ng.size(); ++i) ng[i] = -ng[i];
            accumulate(t.grad(b), ng, bc);
        }
    });
}

Var mul(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const bool bc = check_binary("mul", av, bv);
    Matrix out = av;
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) *= bc ? bv(0, c) : bv(r, c);
    return a.tape().record(std::move(out), {a, b}, [a, b, bc](Tape& t, const Matrix& g) {
        const Matrix& x = t.value(a);
        const Matrix& y = t.value(b);
        if (t.requires_grad(a)) {
            Matrix& ga = t.grad(a);
            for (std::size_t r = 0; r < x.rows(); ++r)
                for (std::size_t c = 0; c < x.cols(); ++c)
                    ga(r, c) += g(r, c) * (bc ? y(0, c) : y(r, c));
        }
        if (t.requires_grad(b)) {
            Matrix& gb = t.grad(b);
            for (std::size_t r = 0; r < x.rows(); ++r)
                for (std::size_t c = 0; c < x.cols(); ++c) {
                    const double v = g(r, c) * x(r, c);
                    if (bc) gb(0, c) += v;
                    else gb(r, c) += v;
                }
        }
    });
}

Var minimum(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("minimum", av, bv);
    Matrix out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::min(av[i], bv[i]);
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
        const Matrix& x = t.value(a);
        const Matrix& y = t.value(b);
        const bool ga_on = t.requires_grad(a), gb_on = t.requires_grad(b);
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] <= y[i]) {
                if (ga_on) t.grad(a)[i] += g[i];
            } else if (gb_on) {
                t.grad(b)[i] += g[i];
            }
        }
    });
}

Var scale(Var a, double c) {
    return unary(a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Var add_const(Var a, double c) {
    return unary(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var gelu(Var a) {
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x) {
            return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
}

Var tanh(Var a) {
    return unary(
        a, [](double x) { return std::tanh(x); },
        [](double x) {
            const double th = std::tanh(x);
            return 1.0 - th * th;
        });
}

Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var square(Var a) {
    return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var clamp(Var a, double lo, double hi) {
    return unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Var sum(Var a) {
    const Matrix& av = a.value();
    double s = 0.0;
    for (double v : av.values()) s += v;
    return a.tape().record(Matrix::scalar(s), {a}, [a](Tape& t, const Matrix& g) {
        if (!t.requires_grad(a)) return;
        Matrix& ga = t.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Matrix& xv = x.value();
    const Matrix& gv = gamma.value();
    const Matrix& bv = beta.value();
    const std::size_t n = xv.rows(), d = xv.cols();
    if (gv.size() != d || bv.size() != d) shape_error("layer_norm", xv, gv);
    Matrix xhat(n, d);
    std::vector<double> inv_std(n);
    Matrix out(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = xv.row(r);
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += row[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) {
            xhat(r, c) = (row[c] - mu) * inv_std[r];
            out(r, c) = xhat(r, c) * gv[c] + bv[c];
        }
    }
    return x.tape().record(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](
            Tape& t, const Matrix& g) {
            const Matrix& gv = t.value(gamma);
            if (t.requires_grad(gamma) || t.requires_grad(beta)) {
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) {
                        if (t.requires_grad(gamma)) t.grad(gamma)[c] += g(r, c) * xhat(r, c);
                        if (t.requires_grad(beta)) t.grad(beta)[c] += g(r, c);
                    }
            }
            if (!t.requires_grad(x)) return;
            Matrix& gx = t.grad(x);
            std::vector<double> dxhat(d);
            for (std::size_t r = 0; r < n; ++r) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    dxhat[c] = g(r, c) * gv[c];
                    m1 += dxhat[c];
                    m2 += dxhat[c] * xhat(r, c);
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                for (std::size_t c = 0; c < d; ++c)
                    gx(r, c) += inv_std[r] * (dxhat[c] - m1 - xhat(r, c) * m2);
            }
        });
}

Var attention(Var q, Var k, Var v, std::size_t heads, bool causal, std::size_t block) {
    const Matrix& qv = q.value();
    const Matrix& kv = k.value();
    const Matrix& vv = v.value();
    const std::size_t n = qv.rows(), width = qv.cols();
    if (kv.rows() != n || vv.rows() != n || kv.cols() != width || vv.cols() != width)
        shape_error("attention", qv, kv);
    if (heads == 0 || width % heads != 0)
        throw Error(ErrorCode::configuration, "attention: width not divisible by heads");
    if (block != 0 && n % block != 0)
        throw Error(ErrorCode::invalid_input, "attention: token count not a multiple of the block size");
    const std::size_t span = block == 0 ? n : block;
    const std::size_t d = width / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const auto& kt = kernels::active();

    // probs[h] is n x span; row i holds the softmax over the keys of its
    // block, column c standing for key first(i) + c.
    auto first = [span](std::size_t i) { return i / span * span; };
    auto end = [span, causal](std::size_t i) { return causal ? i + 1 : i / span * span + span; };
    std::vector<Matrix> probs(heads, Matrix(n, span));
    Matrix out(n, width);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * d;
        Matrix& p = probs[h];
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j0 = first(i), j1 = end(i);
            double* pi = p.row(i) - j0;
            double mx = -INFINITY;
            for (std::size_t j = j0; j < j1; ++j) {
                pi[j] = kt.dot(qv.row(i) + off, kv.row(j) + off, d) * inv_sqrt_d;
                mx = std::max(mx, pi[j]);
            }
            double z = 0.0;
            for (std::size_t j = j0; j < j1; ++j) {
                pi[j] = std::exp(pi[j] - mx);
                z += pi[j];
            }
            for (std::size_t j = j0; j < j1; ++j) {
                pi[j] /= z;
                kt.axpy(pi[j], vv.row(j) + off, out.row(i) + off, d);
            }
        }
    }
    return q.tape().record(
        std::move(out), {q, k, v},
        [q, k, v, probs = std::move(probs), n, heads, d, inv_sqrt_d, first, end](Tape& t, const Matrix& g) {
            const auto& kt = kernels::active();
            const Matrix& qv = t.value(q);
            const Matrix& kv = t.value(k);
            const Matrix& vv = t.value(v);
            const bool gq = t.requires_grad(q), gk = t.requires_grad(k), gv = t.requires_grad(v);
            std::vector<double> ds(n);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = h * d;
                const Matrix& p = probs[h];
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t j0 = first(i), j1 = end(i);
                    const double* pi = p.row(i) - j0;
                    const double* gi = g.row(i) + off;
                    double weighted = 0.0;
                    for (std::size_t j = j0; j < j1; ++j) {
                        ds[j] = kt.dot(gi, vv.row(j) + off, d);
                        weighted += pi[j] * ds[j];
                        if (gv) kt.axpy(pi[j], gi, t.grad(v).row(j) + off, d);
                    }
                    for (std::size_t j = j0; j < j1; ++j) {
                        const double s = pi[j] * (ds[j] - weighted) * inv_sqrt_d;
                        if (s == 0.0) continue;
                        if (gq) kt.axpy(s, kv.row(j) + off, t.grad(q).row(i) + off, d);
                        if (gk) kt.axpy(s, qv.row(i) + off, t.grad(k).row(j) + off, d);
                    }
                }
            }
        });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw Error(ErrorCode::invalid_input, "concat_cols: no inputs");
    const std::size_t n = parts[0].rows();
    std::size_t width = 0;
    for (const Var& p : parts) {
        if (p.rows() != n) shape_error("concat_cols", parts[0].value(), p.value());
        width += p.cols();
    }
    Matrix out(n, width);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Matrix& pv = p.value();
        for (std::size_t r = 0; r < n; ++r)
            std::copy(pv.row(r), pv.row(r) + pv.cols(), out.row(r) + off);
        offsets.push_back(off);
        off += pv.cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return parts[0].tape().record(
        std::move(out), parts, [inputs, offsets](Tape& t, const Matrix& g) {
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                if (!t.requires_grad(inputs[i])) continue;
                Matrix& gi = t.grad(inputs[i]);
                for (std::size_t r = 0; r < gi.rows(); ++r)
                    for (std::size_t c = 0; c < gi.cols(); ++c) gi(r, c) += g(r, offsets[i] + c);
            }
        });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw Error(ErrorCode::invalid_input, "concat_rows: no inputs");
    const std::size_t width = parts[0].cols();
    std::size_t n = 0;
    for (const Var& p : parts) {
        if (p.cols() != width) shape_error("concat_rows", parts[0].value(), p.value());
        n += p.rows();
    }
    std::vector<double> data;
    data.reserve(n * width);
    std::vector<std::size_t> offsets;
    for (const Var& p : parts) {
        offsets.push_back(data.size());
        data.insert(data.end(), p.value().values().begin(), p.value().values().end());
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return parts[0].tape().record(
        Matrix(n, width, std::move(data)), parts, [inputs, offsets](Tape& t, const Matrix& g) {
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                if (!t.requires_grad(inputs[i])) continue;
                Matrix& gi = t.grad(inputs[i]);
                kernels::active().axpy(1.0, g.data() + offsets[i], gi.data(), gi.size());
            }
        });
}

Var slice_rows(Var a, std::size_t first, std::size_t count) {
    const Matrix& av = a.value();
    if (first + count > av.rows())
        throw Error(ErrorCode::index_out_of_range, "slice_rows out of range");
    Matrix out(count, av.cols(),
               std::vector<double>(av.row(first), av.row(first) + count * av.cols()));
    return a.tape().record(std::move(out), {a}, [a, first](Tape& t, const Matrix& g) {
        if (!t.requires_grad(a)) return;
        kernels::active().axpy(1.0, g.data(), t.grad(a).row(first), g.size());
    });
}

Var slice_cols(Var a, std::size_t first, std::size_t count) {
    const Matrix& av = a.value();
    if (first + count > av.cols())
        throw Error(ErrorCode::index_out_of_range, "slice_cols out of range");
    Matrix out(av.rows(), count);
    for (std::size_t r = 0; r < av.rows(); ++r)
        std::copy(av.row(r) + first, av.row(r) + first + count, out.row(r));
    return a.tape().record(std::move(out), {a}, [a, first, count](Tape& t, const Matrix& g) {
        if (!t.requires_grad(a)) return;
        Matrix& ga = t.grad(a);
        for (std::size_t r = 0; r < ga.rows(); ++r)
            for (std::size_t c = 0; c < count; ++c) ga(r, first + c) += g(r, c);
    });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
    const Matrix& av = a.value();
    Matrix out(rows.size(), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= av.rows()) throw Error(ErrorCode::index_out_of_range, "gather_rows");
        std::copy(av.row(rows[i]), av.row(rows[i]) + av.cols(), out.row(i));
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return a.tape().record(std::move(out), {a}, [a, idx](Tape& t, const Matrix& g) {
        if (!t.requires_grad(a)) return;
        Matrix& ga = t.grad(a);
        for (std::size_t i = 0; i < idx.size(); ++i)
            kernels::active().axpy(1.0, g.row(i), ga.row(idx[i]), g.cols());
    });
}

Var dropout(Var a, double p, SeededStream& rng) {
    if (p <= 0.0) return a;
    if (p >= 1.0) throw Error(ErrorCode::configuration, "dropout probability must be < 1");
    const Matrix& av = a.value();
    Matrix mask(av.rows(), av.cols());
    Matrix out(av.rows(), av.cols());
    const double keep = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < av.size(); ++i) {
        mask[i] = rng.uniform() < p ? 0.0 : keep;
        out[i] = av[i] * mask[i];
    }
    return a.tape().record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& t, const Matrix& g) {
        if (!t.requires_grad(a)) return;
        Matrix& ga = t.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * mask[i];
    });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

Var expectile(Var u, double tau) {
    return unary(
        u, [tau](double x) { return (x < 0.0 ? 1.0 - tau : tau) * x * x; },
        [tau](double x) { return 2.0 * (x < 0.0 ? 1.0 - tau : tau) * x; });
}

Var clipped_surrogate(Var ratio, const Matrix& advantages, double eps) {
    const Matrix& rv = ratio.value();
    if (rv.size() != advantages.size()) shape_error("clipped_surrogate", rv, advantages);
    Matrix out(rv.rows(), rv.cols());
    Matrix slope(rv.rows(), rv.cols());
    for (std::size_t i = 0; i < rv.size(); ++i) {
        const double r = rv[i];
        const double a = advantages[i];
        const double clipped = std::clamp(r, 1.0 - eps, 1.0 + eps);
        const double unclipped_term = r * a;
        const double clipped_term = clipped * a;
        if (unclipped_term <= clipped_term) {
            out[i] = unclipped_term;
            slope[i] = a;
        } else {
            out[i] = clipped_term;
            slope[i] = (r > 1.0 - eps && r < 1.0 + eps) ? a : 0.0;
        }
    }
    return ratio.tape().record(std::move(out), {ratio},
                               [ratio, slope = std::move(slope)](Tape& t, const Matrix& g) {
                                   if (!t.requires_grad(ratio)) return;
                                   Matrix& gr = t.grad(ratio);
                                   for (std::size_t i = 0; i < gr.size(); ++i) gr[i] += g[i] * slope[i];
                               });
}

}  // namespace segb::nn
