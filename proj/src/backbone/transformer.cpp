#include "ctxseg/backbone/transformer.hpp"

#include <cmath>

namespace ctxseg {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

LayerNormParams LayerNormParams::identity(std::size_t width) {
    return {Tensor({width}, 1.0), Tensor({width}, 0.0)};
}

LinearParams LinearParams::init(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain) {
    return {Tensor::randn({in, out}, rng, gain / std::sqrt(static_cast<double>(in))), Tensor({out}, 0.0)};
}

TransformerLayer TransformerLayer::init(std::size_t width, std::size_t hidden, std::mt19937_64& rng) {
    TransformerLayer layer;
    layer.ln_attn = LayerNormParams::identity(width);
    auto qkv = LinearParams::init(width, 3 * width, rng);
    auto out = LinearParams::init(width, width, rng, 0.5);
    layer.attn = {qkv.weight, qkv.bias, out.weight, out.bias};
    layer.ln_mlp = LayerNormParams::identity(width);
    layer.fc_in = LinearParams::init(width, hidden, rng);
    layer.fc_out = LinearParams::init(hidden, width, rng, 0.5);
    return layer;
}

Tensor TransformerLayer::forward(const Tensor& x, const TransformerLayerOptions& options,
                                 const ForwardContext& ctx, std::uint64_t dropout_stream) const {
    const bool drop = ctx.training && options.dropout > 0.0;
    auto maybe_drop = [&](const Tensor& t, std::uint64_t site) {
        return drop ? ops::dropout(t, options.dropout, mix(mix(ctx.dropout_seed, dropout_stream), site)) : t;
    };
    auto attention = [&](const Tensor& t) { return ops::multi_head_attention(t, options.heads, attn); };
    auto mlp = [&](const Tensor& t) { return fc_out(ops::gelu(fc_in(t))); };

    if (options.layernorm_first) {
        Tensor h = ops::add(x, maybe_drop(attention(ln_attn(x)), 0));
        return ops::add(h, maybe_drop(mlp(ln_mlp(h)), 1));
    }
    Tensor h = ln_attn(ops::add(x, maybe_drop(attention(x), 0)));
    return ln_mlp(ops::add(h, maybe_drop(mlp(h), 1)));
}

void TransformerLayer::append_parameters(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + "ln_attn.gamma", ln_attn.gamma});
    out.push_back({prefix + "ln_attn.beta", ln_attn.beta});
    out.push_back({prefix + "attn.w_qkv", attn.w_qkv});
    out.push_back({prefix + "attn.b_qkv", attn.b_qkv});
    out.push_back({prefix + "attn.w_out", attn.w_out});
    out.push_back({prefix + "attn.b_out", attn.b_out});
    out.push_back({prefix + "ln_mlp.gamma", ln_mlp.gamma});
    out.push_back({prefix + "ln_mlp.beta", ln_mlp.beta});
    out.push_back({prefix + "fc_in.weight", fc_in.weight});
    out.push_back({prefix + "fc_in.bias", fc_in.bias});
    out.push_back({prefix + "fc_out.weight", fc_out.weight});
    out.push_back({prefix + "fc_out.bias", fc_out.bias});
}

LayerNormParams clone(const LayerNormParams& p) { return {p.gamma.clone(), p.beta.clone()}; }
LinearParams clone(const LinearParams& p) { return {p.weight.clone(), p.bias.clone()}; }

TransformerLayer TransformerLayer::clone() const {
    TransformerLayer c;
    c.ln_attn = ctxseg::clone(ln_attn);
    c.attn = {attn.w_qkv.clone(), attn.b_qkv.clone(), attn.w_out.clone(), attn.b_out.clone()};
    c.ln_mlp = ctxseg::clone(ln_mlp);
    c.fc_in = ctxseg::clone(fc_in);
    c.fc_out = ctxseg::clone(fc_out);
    return c;
}

}  // namespace ctxseg
