#pragma once

// Parameterised building blocks. Each layer registers its arrays in a
// ParamSet under a name prefix and keeps only indices, so a model is a
// ParamSet plus a small layout struct and can be copied freely.

#include <cstddef>
#include <string>
#include <vector>

#include "segb/numerics/ops.hpp"
#include "segb/numerics/param_set.hpp"
#include "segb/numerics/seeded_stream.hpp"

namespace segb::nn {

struct Linear {
    std::size_t weight = 0;  // in x out
    std::size_t bias = 0;    // 1 x out

    static Linear create(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out,
                         SeededStream& rng, double init_scale = 1.0);
    Var operator()(Tape& t, const ParamSet& ps, Var x) const;
};

struct LayerNorm {
    std::size_t gain = 0;
    std::size_t bias = 0;

    static LayerNorm create(ParamSet& ps, const std::string& name, std::size_t width);
    Var operator()(Tape& t, const ParamSet& ps, Var x) const;
};

struct TransformerConfig {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t embed = 32;
    std::size_t max_tokens = 64;
    double dropout = 0.0;
};

// Pre-norm GPT block: x + Attn(LN(x)), then x + MLP(LN(x)) with GELU.
struct TransformerBlock {
    LayerNorm ln1;
    Linear q, k, v, proj;
    LayerNorm ln2;
    Linear fc, out;

    static TransformerBlock create(ParamSet& ps, const std::string& name, const TransformerConfig& cfg,
                                   SeededStream& rng);
    Var operator()(Tape& t, const ParamSet& ps, Var x, const TransformerConfig& cfg,
                   SeededStream* dropout_rng, std::size_t block = 0) const;
};

// Causal transformer over pre-embedded tokens. Adds learned positional
// embeddings, runs the blocks and a final LayerNorm.
struct CausalTransformer {
    TransformerConfig config;
    std::size_t positions = 0;  // max_tokens x embed
    std::vector<TransformerBlock> blocks;
    LayerNorm final_ln;

    static CausalTransformer create(ParamSet& ps, const std::string& name, const TransformerConfig& cfg,
                                    SeededStream& rng);
    // tokens: n x embed with n <= max_tokens. dropout_rng == nullptr disables dropout.
    Var operator()(Tape& t, const ParamSet& ps, Var tokens, SeededStream* dropout_rng = nullptr) const;
    // tokens: (batch * block) x embed, one independent sequence per block of
    // rows. Shorter sequences are padded at the end; causality keeps the
    // padding invisible to the real tokens.
    Var batched(Tape& t, const ParamSet& ps, Var tokens, std::size_t block,
                SeededStream* dropout_rng = nullptr) const;
};

// Two hidden layers with GELU.
struct Mlp {
    Linear l1, l2, l3;

    static Mlp create(ParamSet& ps, const std::string& name, std::size_t in, std::size_t hidden,
                      std::size_t out, SeededStream& rng);
    Var operator()(Tape& t, const ParamSet& ps, Var x) const;
};

}  // namespace segb::nn
