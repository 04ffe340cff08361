#pragma once

#include <cstddef>
#include <cstdint>

namespace ctxseg {

/// Dimensions of the miniature dual encoder and decoder.
struct BackboneConfig {
    std::size_t text_width = 32;    // H_l
    std::size_t vision_width = 32;  // H_v
    std::size_t joint_width = 32;   // H_vl
    std::size_t text_layers = 4;    // K_l
    std::size_t vision_layers = 4;  // K_v
    std::size_t max_text_tokens = 16;
    std::size_t patch_size = 8;
    std::size_t image_size = 64;
    std::size_t vocab_size = 256;
    std::size_t text_heads = 4;
    std::size_t vision_heads = 4;
    std::size_t decoder_layers = 2;
    std::size_t decoder_channels = 3;  // penultimate feature map; 3 ties the unembedding to the patch filters
    std::size_t mlp_ratio = 4;
    std::size_t upsampler_kernel = 5;
    std::uint64_t seed = 20240531;

    void validate() const;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
    std::size_t max_prompt_depth() const;  // min(K_l, K_v)
};

}  // namespace ctxseg
