#include <cmath>
#include <filesystem>
#include <limits>

#include "ctxseg/training/train.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace ctxseg;
using ctxseg::testing::grad_check;

namespace {

BackboneConfig small_config() {
    BackboneConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    return c;
}

Dataset small_dataset() {
    SyntheticTaskSpec spec;
    spec.image_size = 16;
    spec.train_samples = 8;
    spec.val_samples = 4;
    spec.test_samples = 4;
    return generate_dataset(spec);
}

TrainRunConfig small_run(PromptKind kind, std::size_t steps) {
    TrainRunConfig cfg;
    cfg.kind = kind;
    cfg.steps = steps;
    cfg.batch_size = 4;
    cfg.micro_batch = 2;
    cfg.eval_every = 2;
    return cfg;
}

Tensor logits_param(std::vector<double> v) {
    const std::size_t n = v.size();
    Tensor t({n}, std::move(v));
    t.set_requires_grad(true);
    return t;
}

Mask mask_from(std::size_t h, std::size_t w, const std::vector<int>& ones) {
    Mask m(h, w);
    for (int i : ones) m.data[static_cast<std::size_t>(i)] = 1;
    return m;
}

}  // namespace

TEST_CASE("dice loss hand example") {
    const std::vector<double> p{1, 1, 0, 0}, g{1, 0, 0, 0};
    CHECK(std::abs(dice_loss_value(p, g, 0.0) - 1.0 / 3.0) <= 1e-12);
    CHECK(std::abs(dice_loss_value(g, g, 0.0)) <= 1e-12);
    CHECK(dice_loss_value(p, g, 1.0) == doctest::Approx(1.0 - 3.0 / 4.0).epsilon(1e-12));
}

TEST_CASE("dice loss on saturated logits vanishes as smoothing vanishes") {
    Tensor logits({2, 2}, {40, -40, -40, 40});
    Tensor mask({2, 2}, {1, 0, 0, 1});
    CHECK(dice_loss(logits, mask, 1e-9).item() < 1e-12);
    CHECK(dice_loss(logits, mask, 0.0).item() < 1e-12);
    CHECK_THROWS_AS(dice_loss(logits, Tensor({4}), 1.0), ShapeError);
}

TEST_CASE("bce reference values") {
    Tensor zero({3, 3});
    Tensor mask({3, 3}, {1, 0, 1, 0, 0, 1, 1, 1, 0});
    CHECK(bce_loss(zero, mask).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    Tensor sat({3, 3});
    for (std::size_t i = 0; i < 9; ++i) sat.data()[i] = mask[i] > 0.5 ? 20.0 : -20.0;
    CHECK(bce_loss(sat, mask).item() < 1e-8);
    Tensor huge({1}, {-800.0});
    CHECK(std::isfinite(bce_loss(huge, Tensor({1}, {1.0})).item()));
}

TEST_CASE("loss gradients match finite differences") {
    std::mt19937_64 rng(5);
    Tensor logits = Tensor::randn({6, 5}, rng, 1.5);
    logits.set_requires_grad(true);
    Tensor mask({6, 5});
    for (std::size_t i = 0; i < mask.numel(); i += 3) mask.data()[i] = 1.0;
    auto d = grad_check([&] { return dice_loss(logits, mask, 1.0); }, {{"logits", logits}}, 1e-6);
    CHECK(d.max_rel_error < 1e-6);
    auto b = grad_check([&] { return bce_loss(logits, mask); }, {{"logits", logits}}, 1e-6);
    CHECK(b.max_rel_error < 1e-6);
    auto c = grad_check([&] { return combined_loss(logits, mask, {}); }, {{"logits", logits}}, 1e-6);
    CHECK(c.max_rel_error < 1e-6);
}

TEST_CASE("combined loss weighting") {
    LossConfig cfg;
    CHECK(std::abs(combine(0.5, 0.3, cfg) - 0.56) <= 1e-12);
    LossConfig dice_only{1.0, 0.0, 1.0};
    std::mt19937_64 rng(2);
    Tensor logits = Tensor::randn({4, 4}, rng, 2.0);
    Tensor mask({4, 4});
    mask.data()[3] = mask.data()[7] = 1.0;
    CHECK(combined_loss(logits, mask, dice_only).item() == dice_loss(logits, mask, 1.0).item());
    CHECK(combined_loss(logits, mask, cfg).item() >= 0.0);
    CHECK(combined_loss(logits, mask, cfg).item() ==
          doctest::Approx(dice_loss(logits, mask, 1.0).item() + 0.2 * bce_loss(logits, mask).item()).epsilon(1e-12));
    LossConfig bad{-1.0, 0.2, 1.0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("dice score") {
    auto a = mask_from(2, 4, {0, 1, 2, 3});
    CHECK(dice_score(a, a) == 1.0);
    CHECK(dice_score(a, mask_from(2, 4, {4, 5})) == 0.0);
    CHECK(dice_score(mask_from(2, 4, {0, 1, 4, 5}), a) == 0.5);
    CHECK(dice_score(Mask(2, 4), Mask(2, 4)) == 1.0);
    CHECK(dice_score(Mask(2, 4), a) == 0.0);
    auto pred = predict_mask(Tensor({2, 2}, {0.0, -1e-9, 3.0, -2.0}));
    CHECK(pred.data == std::vector<std::uint8_t>{1, 0, 1, 0});
}

TEST_CASE("AdamW single scalar step") {
    Tensor theta = logits_param({1.0});
    ParameterList params{{"theta", theta}};
    AdamW opt(params, {0.1, 0.0});
    backward(ops::sum(theta));
    opt.step(params);
    CHECK(theta[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(opt.first_moment(0)[0] == doctest::Approx(0.1));
    CHECK(opt.second_moment(0)[0] == doctest::Approx(0.001));
}

TEST_CASE("AdamW without gradient or decay leaves parameters alone") {
    Tensor theta = logits_param({1.0, -2.0, 3.5});
    ParameterList params{{"theta", theta}};
    AdamW opt(params, {0.1, 0.0});
    for (int i = 0; i < 5; ++i) opt.step(params);
    CHECK(std::vector<double>(theta.data().begin(), theta.data().end()) == std::vector<double>{1.0, -2.0, 3.5});
}

TEST_CASE("AdamW decoupled decay shrinks geometrically") {
    Tensor theta = logits_param({2.0});
    ParameterList params{{"theta", theta}};
    const double lr = 0.01, wd = 0.5;
    AdamW opt(params, {lr, wd});
    for (int i = 0; i < 20; ++i) opt.step(params);
    CHECK(theta[0] == doctest::Approx(2.0 * std::pow(1.0 - lr * wd, 20)).epsilon(1e-12));
}

TEST_CASE("AdamW contract errors") {
    Tensor a = logits_param({1.0});
    Tensor b = logits_param({1.0, 2.0});
    AdamW opt({{"a", a}}, {});
    CHECK_THROWS_AS(opt.step({{"b", b}}), ContractError);
    CHECK_THROWS_AS(opt.step({{"a", a}, {"b", b}}), ContractError);
    CHECK_THROWS_AS(AdamW({{"frozen", Tensor({1})}}, {}), ContractError);
    CHECK_THROWS_AS(AdamWConfig({-1.0}).validate(), ConfigError);
}

TEST_CASE("zero steps keep the initial prompts") {
    Backbone b(small_config());
    auto data = small_dataset();
    for (auto kind : {PromptKind::coop, PromptKind::maple}) {
        auto cfg = small_run(kind, 0);
        auto art = train(b, data, cfg);
        auto init = init_prompts(kind, cfg.prompt_length, cfg.prompt_depth, b, cfg.init, cfg.coupler,
                                 prompt_init_seed(cfg.seed));
        ParameterList expected = trainable_parameters(init, b, true);
        CHECK(serialize_checkpoint(art.trainable) == serialize_checkpoint(expected));
        CHECK(art.metrics.empty());
    }
}

TEST_CASE("training is deterministic for a seed") {
    Backbone b(small_config());
    auto data = small_dataset();
    auto cfg = small_run(PromptKind::shared_attention, 4);
    auto x = train(b, data, cfg);
    auto y = train(b, data, cfg);
    CHECK(serialize_checkpoint(x.trainable) == serialize_checkpoint(y.trainable));
    REQUIRE(x.metrics.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(x.metrics[i].loss == y.metrics[i].loss);
        CHECK(x.metrics[i].val_dice == y.metrics[i].val_dice);
    }
    cfg.seed = 1;
    auto z = train(b, data, cfg);
    CHECK(serialize_checkpoint(x.trainable) != serialize_checkpoint(z.trainable));
}

TEST_CASE("training leaves the backbone untouched and logs metrics") {
    Backbone b(small_config());
    const auto before = serialize_checkpoint(b.frozen_parameters());
    const auto upsampler_before = serialize_checkpoint(b.upsampler_parameters());
    auto data = small_dataset();
    for (auto kind : kAllPromptKinds) {
        auto art = train(b, data, small_run(kind, 3));
        CHECK(art.backbone_checksum_before == art.backbone_checksum_after);
        CHECK(serialize_checkpoint(art.model.frozen_parameters()) == before);
        CHECK(art.metrics.size() == 3);
        CHECK(art.metrics.back().val_dice.has_value());
    }
    CHECK(serialize_checkpoint(b.frozen_parameters()) == before);
    CHECK(serialize_checkpoint(b.upsampler_parameters()) == upsampler_before);
}

TEST_CASE("upsampler is trained only when enabled") {
    Backbone b(small_config());
    auto data = small_dataset();
    auto cfg = small_run(PromptKind::coop, 2);
    auto on = train(b, data, cfg);
    CHECK(serialize_checkpoint(on.model.upsampler_parameters()) != serialize_checkpoint(b.upsampler_parameters()));
    cfg.use_upsampler = false;
    auto off = train(b, data, cfg);
    CHECK(off.trainable.size() == 1);
    CHECK(serialize_checkpoint(off.model.upsampler_parameters()) == serialize_checkpoint(b.upsampler_parameters()));
}

TEST_CASE("a mutated backbone weight is a freeze violation") {
    Backbone b(small_config());
    auto data = small_dataset();
    auto cfg = small_run(PromptKind::vpt, 4);
    cfg.mutate_backbone_at = 1;
    CHECK_THROWS_AS(train(b, data, cfg), FreezeViolation);

    Backbone thawed = b.clone();
    Tensor(thawed.text().projection).set_requires_grad(true);
    CHECK_THROWS_AS(FreezeLedger::check_flags(thawed), FreezeViolation);
}

TEST_CASE("metrics log round-trips") {
    std::vector<MetricRecord> m{{1, 0.5, 0.25, 1e-3, {}, {}}, {2, 0.4, 0.5, 1e-3, 0.6, 0.55}};
    const auto path = std::filesystem::temp_directory_path() / "ctxseg_metrics_test.jsonl";
    write_metrics(path, m);
    auto back = read_metrics(path);
    REQUIRE(back.size() == 2);
    CHECK(back[1].loss == 0.4);
    CHECK(back[1].val_dice == 0.55);
    CHECK_FALSE(back[0].train_dice.has_value());
    std::filesystem::remove(path);
}

TEST_CASE("run config validation") {
    auto cfg = small_run(PromptKind::coop, 1);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    Backbone b(small_config());
    CHECK_THROWS_AS(train(b, Dataset{}, small_run(PromptKind::coop, 1)), ConfigError);
}
