#pragma once

#include <random>
#include <string>
#include <vector>

#include "bdcd/autograd.hpp"

namespace bdcd::nn {

using ag::Var;

/// Flat registry of named parameters; registration order is the canonical
/// iteration order for optimizers and checkpoints.
class ParamStore {
public:
    Var add(const std::string& name, Tensor t);
    Var* find(const std::string& name);
    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
    long total_params() const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, Var>> items_;
};

struct Conv2d {
    Var w, b;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& prefix, long cin, long cout, long k,
           std::mt19937_64& rng);
    Var forward(const Var& x) const { return ag::conv2d(x, w, b); }
};

struct Linear {
    Var w, b;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, long din, long dout, std::mt19937_64& rng);
    Var forward(const Var& x) const { return ag::linear(x, w, b); }
};

/// Per-position layernorm over the channel axis of a (C,H,W) map.
struct ChannelNorm {
    Var g, b;
    ChannelNorm() = default;
    ChannelNorm(ParamStore& ps, const std::string& prefix, long c);
    Var forward(const Var& x) const { return ag::channel_layernorm(x, g, b); }
};

struct LayerNorm {
    Var g, b;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& prefix, long d);
    Var forward(const Var& x) const { return ag::layernorm_lastdim(x, g, b); }
};

/// conv3x3 -> norm -> relu, twice.
struct ConvBlock {
    Conv2d c1, c2;
    ChannelNorm n1, n2;
    ConvBlock() = default;
    ConvBlock(ParamStore& ps, const std::string& prefix, long cin, long cout,
              std::mt19937_64& rng);
    Var forward(const Var& x) const;
};

struct MultiheadAttention {
    Linear wq, wk, wv, wo;
    long heads = 1;
    MultiheadAttention() = default;
    MultiheadAttention(ParamStore& ps, const std::string& prefix, long dim, long heads,
                       std::mt19937_64& rng);
    Var forward(const Var& q_in, const Var& kv_in) const;
};

/// Pre-norm transformer layer; cross-attention when a context is supplied.
struct TransformerLayer {
    LayerNorm ln1, ln_ctx, ln2;
    MultiheadAttention attn;
    Linear ff1, ff2;
    bool cross = false;
    TransformerLayer() = default;
    TransformerLayer(ParamStore& ps, const std::string& prefix, long dim, long heads, bool cross,
                     std::mt19937_64& rng);
    Var forward(const Var& x) const;                   // self-attention
    Var forward(const Var& x, const Var& ctx) const;   // cross-attention
};

}  // namespace bdcd::nn
