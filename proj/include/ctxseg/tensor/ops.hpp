#pragma once

#include <cstdint>
#include <vector>

#include "ctxseg/tensor/tensor.hpp"

// Differentiable operations. Sequences are [tokens, width]; images are
// [channels, height, width]. There is no implicit broadcasting: the only
// broadcasts are the explicit row/column forms below.
namespace ctxseg::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// Multiplies every element of x by the single element of s.
Tensor scale_by(const Tensor& x, const Tensor& s);

// x[s,d] (+|*) v[d], applied to each row.
Tensor add_row(const Tensor& x, const Tensor& v);
Tensor mul_row(const Tensor& x, const Tensor& v);

// x[s,in] * w[in,out] + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Inverted dropout with a mask drawn from `seed`; the same seed always
// yields the same mask.
Tensor dropout(const Tensor& x, double p, std::uint64_t seed);

struct AttentionParams {
    Tensor w_qkv;  // [d, 3d]
    Tensor b_qkv;  // [3d]
    Tensor w_out;  // [d, d]
    Tensor b_out;  // [d]
};

// Scaled dot-product attention over a packed [s, 3d] q|k|v buffer,
// bidirectional, heads split along the width. Returns [s, d].
Tensor attention_core(const Tensor& qkv, std::size_t heads);

// Softmax weights [heads, s, s] of attention_core, for inspection.
std::vector<double> attention_weights(const Tensor& qkv, std::size_t heads);

Tensor multi_head_attention(const Tensor& x, std::size_t heads, const AttentionParams& params);

// Cross-correlation with zero padding. x[c_in,h,w], kernel[c_out,c_in,kh,kw],
// optional bias[c_out] (pass an empty tensor to skip).
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t padding);

// Bilinear resize by an integer factor, align-corners=false.
Tensor bilinear_upsample(const Tensor& x, std::size_t factor);

// Rearranges per-patch tiles [grid*grid, c*p*p] (channel-major inside a
// tile) into an image [c, grid*p, grid*p].
Tensor tiles_to_image(const Tensor& tiles, std::size_t grid, std::size_t patch, std::size_t channels);

}  // namespace ctxseg::ops
