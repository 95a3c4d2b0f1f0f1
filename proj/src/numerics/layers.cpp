#include "segb/numerics/layers.hpp"

#include <cmath>

#include "segb/error.hpp"

namespace segb::nn {

Linear Linear::create(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out,
                      SeededStream& rng, double init_scale) {
    Linear l;
    const double stddev = init_scale / std::sqrt(static_cast<double>(in));
    l.weight = ps.add_normal(name + ".w", in, out, stddev, rng);
    l.bias = ps.add_constant(name + ".b", 1, out, 0.0);
    return l;
}

Var Linear::operator()(Tape& t, const ParamSet& ps, Var x) const {
    return add(matmul(x, t.param(ps[weight])), t.param(ps[bias]));
}

LayerNorm LayerNorm::create(ParamSet& ps, const std::string& name, std::size_t width) {
    LayerNorm ln;
    ln.gain = ps.add_constant(name + ".g", 1, width, 1.0);
    ln.bias = ps.add_constant(name + ".b", 1, width, 0.0);
    return ln;
}

Var LayerNorm::operator()(Tape& t, const ParamSet& ps, Var x) const {
    return layer_norm(x, t.param(ps[gain]), t.param(ps[bias]));
}

TransformerBlock TransformerBlock::create(ParamSet& ps, const std::string& name,
                                          const TransformerConfig& cfg, SeededStream& rng) {
    if (cfg.heads == 0 || cfg.embed % cfg.heads != 0)
        throw Error(ErrorCode::configuration, "embedding width must be divisible by head count");
    const std::size_t e = cfg.embed;
    // Residual-branch outputs start small so the stack begins near identity.
    const double resid_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.layers));
    TransformerBlock b;
    b.ln1 = LayerNorm::create(ps, name + ".ln1", e);
    b.q = Linear::create(ps, name + ".q", e, e, rng);
    b.k = Linear::create(ps, name + ".k", e, e, rng);
    b.v = Linear::create(ps, name + ".v", e, e, rng);
    b.proj = Linear::create(ps, name + ".proj", e, e, rng, resid_scale);
    b.ln2 = LayerNorm::create(ps, name + ".ln2", e);
    b.fc = Linear::create(ps, name + ".fc", e, 4 * e, rng);
    b.out = Linear::create(ps, name + ".out", 4 * e, e, rng, resid_scale);
    return b;
}

Var TransformerBlock::operator()(Tape& t, const ParamSet& ps, Var x, const TransformerConfig& cfg,
                                 SeededStream* dropout_rng, std::size_t block) const {
    Var h = ln1(t, ps, x);
    Var a = proj(t, ps, attention(q(t, ps, h), k(t, ps, h), v(t, ps, h), cfg.heads, true, block));
    if (dropout_rng != nullptr) a = dropout(a, cfg.dropout, *dropout_rng);
    x = add(x, a);
    Var m = out(t, ps, gelu(fc(t, ps, ln2(t, ps, x))));
    if (dropout_rng != nullptr) m = dropout(m, cfg.dropout, *dropout_rng);
    return add(x, m);
}

CausalTransformer CausalTransformer::create(ParamSet& ps, const std::string& name,
                                            const TransformerConfig& cfg, SeededStream& rng) {
    CausalTransformer tr;
    tr.config = cfg;
    tr.positions = ps.add_normal(name + ".pos", cfg.max_tokens, cfg.embed, 0.02, rng);
    for (std::size_t i = 0; i < cfg.layers; ++i)
        tr.blocks.push_back(TransformerBlock::create(ps, name + ".h" + std::to_string(i), cfg, rng));
    tr.final_ln = LayerNorm::create(ps, name + ".lnf", cfg.embed);
    return tr;
}

Var CausalTransformer::operator()(Tape& t, const ParamSet& ps, Var tokens,
                                  SeededStream* dropout_rng) const {
    const std::size_t n = tokens.rows();
    if (n == 0 || n > config.max_tokens)
        throw Error(ErrorCode::invalid_input, "token count " + std::to_string(n) +
                                                  " outside [1, " + std::to_string(config.max_tokens) + "]");
    Var x = add(tokens, slice_rows(t.param(ps[positions]), 0, n));
    if (dropout_rng != nullptr) x = dropout(x, config.dropout, *dropout_rng);
    for (const auto& b : blocks) x = b(t, ps, x, config, dropout_rng);
    return final_ln(t, ps, x);
}

Var CausalTransformer::batched(Tape& t, const ParamSet& ps, Var tokens, std::size_t block,
                               SeededStream* dropout_rng) const {
    const std::size_t n = tokens.rows();
    if (block == 0 || block > config.max_tokens || n == 0 || n % block != 0)
        throw Error(ErrorCode::invalid_input, "batched transformer: bad block size " + std::to_string(block));
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i % block;
    Var x = add(tokens, gather_rows(t.param(ps[positions]), pos));
    if (dropout_rng != nullptr) x = dropout(x, config.dropout, *dropout_rng);
    for (const auto& b : blocks) x = b(t, ps, x, config, dropout_rng, block);
    return final_ln(t, ps, x);
}

Mlp Mlp::create(ParamSet& ps, const std::string& name, std::size_t in, std::size_t hidden,
                std::size_t out, SeededStream& rng) {
    Mlp m;
    m.l1 = Linear::create(ps, name + ".l1", in, hidden, rng);
    m.l2 = Linear::create(ps, name + ".l2", hidden, hidden, rng);
    m.l3 = Linear::create(ps, name + ".l3", hidden, out, rng);
    return m;
}

Var Mlp::operator()(Tape& t, const ParamSet& ps, Var x) const {
    return l3(t, ps, gelu(l2(t, ps, gelu(l1(t, ps, x)))));
}

}  // namespace segb::nn
