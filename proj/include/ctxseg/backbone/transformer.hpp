#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "ctxseg/tensor/checkpoint.hpp"
#include "ctxseg/tensor/ops.hpp"

namespace ctxseg {

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;

    static LayerNormParams identity(std::size_t width);
    Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta, 1e-5); }
};

struct LinearParams {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static LinearParams init(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain = 1.0);
    Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
};

/// Dropout draws for one forward pass. Off unless `training`.
struct ForwardContext {
    bool training = false;
    std::uint64_t dropout_seed = 0;
};

struct TransformerLayerOptions {
    std::size_t heads = 4;
    double dropout = 0.0;
    bool layernorm_first = true;
};

/// Encoder block: self-attention + GELU MLP, each with a residual.
/// Pre-norm (layernorm_first) is the CLIP arrangement; post-norm applies
/// the norm after each residual sum.
struct TransformerLayer {
    LayerNormParams ln_attn;
    ops::AttentionParams attn;
    LayerNormParams ln_mlp;
    LinearParams fc_in;
    LinearParams fc_out;

    static TransformerLayer init(std::size_t width, std::size_t hidden, std::mt19937_64& rng);

    Tensor forward(const Tensor& x, const TransformerLayerOptions& options,
                   const ForwardContext& ctx = {}, std::uint64_t dropout_stream = 0) const;

    void append_parameters(ParameterList& out, const std::string& prefix) const;
    TransformerLayer clone() const;
};

LayerNormParams clone(const LayerNormParams& p);
LinearParams clone(const LinearParams& p);

}  // namespace ctxseg
