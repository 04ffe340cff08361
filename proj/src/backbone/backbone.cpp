#include "ctxseg/backbone/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace ctxseg {

namespace {

// Smooth patch filters standing in for pretrained ones: the lowest-frequency
// 2D DCT functions of each color plane, in order of frequency and
// interleaved across colors, then rotated by a random orthogonal matrix.
// Columns are orthonormal. Layout matches patchify: [c][py][px].
Tensor smooth_patch_filters(std::size_t patch, std::size_t width, std::mt19937_64& rng) {
    const std::size_t dim = 3 * patch * patch;
    std::vector<std::pair<std::size_t, std::size_t>> freqs;
    for (std::size_t total = 0; total <= 2 * (patch - 1); ++total)
        for (std::size_t u = 0; u <= total; ++u)
            if (u < patch && total - u < patch) freqs.emplace_back(u, total - u);

    auto dct = [patch](std::size_t f, std::size_t x) {
        const double n = static_cast<double>(patch);
        const double scale = f == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        return scale * std::cos(std::numbers::pi * (static_cast<double>(x) + 0.5) * static_cast<double>(f) / n);
    };

    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(dim, width);
    for (std::size_t j = 0; j < width; ++j) {
        const std::size_t color = j % 3;
        const auto [u, v] = freqs[j / 3];
        for (std::size_t y = 0; y < patch; ++y)
            for (std::size_t x = 0; x < patch; ++x)
                basis((color * patch + y) * patch + x, j) = dct(v, y) * dct(u, x);
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd g(width, width);
    for (std::size_t i = 0; i < width; ++i)
        for (std::size_t j = 0; j < width; ++j) g(i, j) = normal(rng);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd filters = basis * q;

    std::vector<double> data(dim * width);
    for (std::size_t r = 0; r < dim; ++r)
        for (std::size_t j = 0; j < width; ++j) data[r * width + j] = filters(r, j);
    return Tensor({dim, width}, std::move(data));
}

}  // namespace

void BackboneConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("backbone config: " + what);
    };
    require(patch_size > 0 && image_size % patch_size == 0, "image_size must be a multiple of patch_size");
    require(text_layers >= 1 && vision_layers >= 1, "layer counts must be at least 1");
    require(text_heads > 0 && text_width % text_heads == 0, "text_heads must divide text_width");
    require(vision_heads > 0 && vision_width % vision_heads == 0, "vision_heads must divide vision_width");
    require(text_width > 0 && vision_width > 0 && joint_width > 0, "widths must be positive");
    require(vocab_size >= 256, "byte-level tokenizer needs vocab_size >= 256");
    require(max_text_tokens >= 2, "max_text_tokens must hold BOS and EOS");
    require(decoder_channels > 0 && mlp_ratio > 0, "decoder_channels and mlp_ratio must be positive");
    require(upsampler_kernel % 2 == 1, "upsampler_kernel must be odd");
    require(vision_width <= patch_dim(), "vision_width cannot exceed the patch dimension");
}

std::size_t BackboneConfig::max_prompt_depth() const { return std::min(text_layers, vision_layers); }

Backbone::Backbone(BackboneConfig config) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    const auto& c = config_;
    const std::size_t hl = c.text_width, hv = c.vision_width, hvl = c.joint_width;

    text_.token_embedding = Tensor::randn({c.vocab_size, hl}, rng, 0.02);
    text_.positional = Tensor::randn({c.max_text_tokens, hl}, rng, 0.01);
    for (std::size_t i = 0; i < c.text_layers; ++i)
        text_.layers.push_back(TransformerLayer::init(hl, c.mlp_ratio * hl, rng));
    text_.projection = Tensor::randn({hl, hvl}, rng, 1.0 / std::sqrt(static_cast<double>(hl)));

    image_.patch_projection = smooth_patch_filters(c.patch_size, hv, rng);
    image_.positional = Tensor::randn({1 + c.num_patches(), hv}, rng, 0.1);
    image_.class_embedding = Tensor::randn({hv}, rng, 1.0 / std::sqrt(static_cast<double>(hv)));
    for (std::size_t i = 0; i < c.vision_layers; ++i)
        image_.layers.push_back(TransformerLayer::init(hv, c.mlp_ratio * hv, rng));
    image_.projection = Tensor::randn({hv, hvl}, rng, 1.0 / std::sqrt(static_cast<double>(hv)));

    decoder_.conditioning = LinearParams::init(hvl, hv, rng, 0.3);
    std::fill(decoder_.conditioning.bias.data().begin(), decoder_.conditioning.bias.data().end(), 1.0);
    for (std::size_t i = 0; i < c.decoder_layers; ++i)
        decoder_.layers.push_back(TransformerLayer::init(hv, c.mlp_ratio * hv, rng));
    decoder_.norm = LayerNormParams::identity(hv);
    if (c.decoder_channels == 3) {
        // tied to the patch embedding, so a token decodes back to its smooth patch
        decoder_.unembed = {ops::transpose(image_.patch_projection).detach(), Tensor({c.patch_dim()}, 0.0)};
    } else {
        decoder_.unembed = LinearParams::init(hv, c.decoder_channels * c.patch_size * c.patch_size, rng);
    }
    decoder_.head_kernel = Tensor::randn({1, c.decoder_channels, 1, 1}, rng,
                                         1.0 / std::sqrt(static_cast<double>(c.decoder_channels)));
    decoder_.head_bias = Tensor({1}, 0.0);

    const std::size_t k = c.upsampler_kernel;
    decoder_.upsampler.kernel = Tensor::randn({1, c.decoder_channels, k, k}, rng,
                                              1.0 / std::sqrt(static_cast<double>(c.decoder_channels * k * k)));
    decoder_.upsampler.bias = Tensor({1}, 0.0);
    decoder_.upsampler.residual_factor = Tensor({1}, 0.5);
}

TextEncoding Backbone::encode_text(const TokenIds& tokens, const PromptPlan* prompts, SlotTrace* trace) const {
    const std::size_t eos = eos_position(tokens);
    TokenIds used(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(eos) + 1);
    if (used.size() > config_.max_text_tokens) {
        throw TruncationError("token sequence of length " + std::to_string(used.size()) +
                              " exceeds the text encoder limit " + std::to_string(config_.max_text_tokens));
    }
    PromptPlan none;
    const PromptPlan& plan = prompts ? *prompts : none;
    if (!plan.empty() && plan.depth() > config_.text_layers) {
        throw ConfigError("textual prompt depth " + std::to_string(plan.depth()) + " exceeds " +
                          std::to_string(config_.text_layers) + " text layers");
    }

    Tensor seq = ops::add(ops::gather_rows(text_.token_embedding, used),
                          ops::slice_rows(text_.positional, 0, used.size()));
    const TransformerLayerOptions options{config_.text_heads, 0.0, true};
    for (std::size_t i = 0; i < text_.layers.size(); ++i) {
        Tensor input = inject_textual(i, seq, plan);
        seq = text_.layers[i].forward(input, options);
        if (trace) {
            const SlotSource src = slot_source(i, plan);
            trace->push_back({i, input.dim(0), 0, src == SlotSource::none ? 0 : plan.length, src, input, seq});
        }
    }
    const std::size_t offset = plan.empty() ? 0 : plan.length;
    const std::size_t row = offset + eos;
    Tensor sentence = ops::slice_rows(seq, row, row + 1);
    Tensor z = ops::reshape(ops::matmul(sentence, text_.projection), {config_.joint_width});
    return {z, seq, row};
}

Tensor Backbone::patchify(const Tensor& image) const {
    const std::size_t s = config_.image_size, p = config_.patch_size, g = config_.grid();
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != s || image.dim(2) != s) {
        throw ShapeError("image " + shape_to_string(image.shape()) + " does not match [3," +
                         std::to_string(s) + "," + std::to_string(s) + "]");
    }
    std::vector<double> out(g * g * 3 * p * p);
    auto d = image.data();
    std::size_t k = 0;
    for (std::size_t ty = 0; ty < g; ++ty)
        for (std::size_t tx = 0; tx < g; ++tx)
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        out[k++] = d[(c * s + ty * p + py) * s + tx * p + px];
    return Tensor({g * g, 3 * p * p}, std::move(out));
}

ImageEncoding Backbone::encode_image(const Tensor& image, const PromptPlan* prompts, SlotTrace* trace) const {
    PromptPlan none;
    const PromptPlan& plan = prompts ? *prompts : none;
    if (!plan.empty() && plan.depth() > config_.vision_layers) {
        throw ConfigError("visual prompt depth " + std::to_string(plan.depth()) + " exceeds " +
                          std::to_string(config_.vision_layers) + " vision layers");
    }
    const std::size_t n = config_.num_patches();
    Tensor tokens = ops::add(ops::matmul(patchify(image), image_.patch_projection),
                             ops::slice_rows(image_.positional, 1, 1 + n));
    Tensor cls = ops::add(ops::reshape(image_.class_embedding, {1, config_.vision_width}),
                          ops::slice_rows(image_.positional, 0, 1));
    Tensor seq = ops::concat_rows({cls, tokens});

    const TransformerLayerOptions options{config_.vision_heads, 0.0, true};
    for (std::size_t i = 0; i < image_.layers.size(); ++i) {
        Tensor input = inject_visual(i, seq, plan);
        seq = image_.layers[i].forward(input, options);
        if (trace) {
            const SlotSource src = slot_source(i, plan);
            const std::size_t count = src == SlotSource::none ? 0 : plan.length;
            trace->push_back({i, input.dim(0), input.dim(0) - count, count, src, input, seq});
        }
    }
    Tensor z = ops::reshape(ops::matmul(ops::slice_rows(seq, 0, 1), image_.projection), {config_.joint_width});
    return {z, ops::slice_rows(seq, 1, 1 + n), seq};
}

DecodeOutput Backbone::decode(const Tensor& patch_tokens, const Tensor& z_text, bool use_upsampler) const {
    const auto& c = config_;
    if (patch_tokens.rank() != 2 || patch_tokens.dim(0) != c.num_patches() || patch_tokens.dim(1) != c.vision_width) {
        throw ShapeError("decoder expects patch tokens [" + std::to_string(c.num_patches()) + "," +
                         std::to_string(c.vision_width) + "], got " + shape_to_string(patch_tokens.shape()));
    }
    if (z_text.numel() != c.joint_width) {
        throw ShapeError("decoder expects a text embedding of width " + std::to_string(c.joint_width) + ", got " +
                         shape_to_string(z_text.shape()));
    }
    Tensor modulation = ops::reshape(decoder_.conditioning(ops::reshape(z_text, {1, c.joint_width})), {c.vision_width});
    Tensor x = ops::mul_row(patch_tokens, modulation);
    const TransformerLayerOptions options{c.vision_heads, 0.0, true};
    for (const auto& layer : decoder_.layers) x = layer.forward(x, options);
    x = decoder_.norm(x);
    Tensor features = ops::gelu(ops::tiles_to_image(decoder_.unembed(x), c.grid(), c.patch_size, c.decoder_channels));
    Tensor body = ops::conv2d(features, decoder_.head_kernel, decoder_.head_bias, 0);
    Tensor logits = body;
    if (use_upsampler) {
        const auto& up = decoder_.upsampler;
        const std::size_t factor = c.image_size / features.dim(1);
        Tensor residual = ops::conv2d(ops::bilinear_upsample(features, factor), up.kernel, up.bias,
                                      (c.upsampler_kernel - 1) / 2);
        logits = ops::add(body, ops::scale_by(residual, up.residual_factor));
    }
    const Shape out{c.image_size, c.image_size};
    return {ops::reshape(logits, out), ops::reshape(body, out), features};
}

ParameterList Backbone::frozen_parameters() const {
    ParameterList out;
    out.push_back({"text.token_embedding", text_.token_embedding});
    out.push_back({"text.positional", text_.positional});
    for (std::size_t i = 0; i < text_.layers.size(); ++i)
        text_.layers[i].append_parameters(out, "text.layers." + std::to_string(i) + ".");
    out.push_back({"text.projection", text_.projection});

    out.push_back({"image.patch_projection", image_.patch_projection});
    out.push_back({"image.positional", image_.positional});
    out.push_back({"image.class_embedding", image_.class_embedding});
    for (std::size_t i = 0; i < image_.layers.size(); ++i)
        image_.layers[i].append_parameters(out, "image.layers." + std::to_string(i) + ".");
    out.push_back({"image.projection", image_.projection});

    out.push_back({"decoder.conditioning.weight", decoder_.conditioning.weight});
    out.push_back({"decoder.conditioning.bias", decoder_.conditioning.bias});
    for (std::size_t i = 0; i < decoder_.layers.size(); ++i)
        decoder_.layers[i].append_parameters(out, "decoder.layers." + std::to_string(i) + ".");
    out.push_back({"decoder.norm.gamma", decoder_.norm.gamma});
    out.push_back({"decoder.norm.beta", decoder_.norm.beta});
    out.push_back({"decoder.unembed.weight", decoder_.unembed.weight});
    out.push_back({"decoder.unembed.bias", decoder_.unembed.bias});
    out.push_back({"decoder.head.kernel", decoder_.head_kernel});
    out.push_back({"decoder.head.bias", decoder_.head_bias});
    return out;
}

ParameterList Backbone::upsampler_parameters() const {
    return {{"upsampler.kernel", decoder_.upsampler.kernel},
            {"upsampler.bias", decoder_.upsampler.bias},
            {"upsampler.residual_factor", decoder_.upsampler.residual_factor}};
}

Backbone Backbone::clone() const {
    Backbone b;
    b.config_ = config_;
    b.text_ = {text_.token_embedding.clone(), text_.positional.clone(), {}, text_.projection.clone()};
    for (const auto& l : text_.layers) b.text_.layers.push_back(l.clone());
    b.image_ = {image_.patch_projection.clone(), image_.positional.clone(), image_.class_embedding.clone(), {},
                image_.projection.clone()};
    for (const auto& l : image_.layers) b.image_.layers.push_back(l.clone());
    b.decoder_.conditioning = ctxseg::clone(decoder_.conditioning);
    for (const auto& l : decoder_.layers) b.decoder_.layers.push_back(l.clone());
    b.decoder_.norm = ctxseg::clone(decoder_.norm);
    b.decoder_.unembed = ctxseg::clone(decoder_.unembed);
    b.decoder_.head_kernel = decoder_.head_kernel.clone();
    b.decoder_.head_bias = decoder_.head_bias.clone();
    b.decoder_.upsampler = {decoder_.upsampler.kernel.clone(), decoder_.upsampler.bias.clone(),
                            decoder_.upsampler.residual_factor.clone()};
    return b;
}

}  // namespace ctxseg
