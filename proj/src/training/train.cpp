#include "ctxseg/training/train.hpp"

#include <fstream>

#include "json.hpp"

namespace ctxseg {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t prompt_init_seed(std::uint64_t run_seed) { return mix(run_seed, 1); }

FreezeLedger::FreezeLedger(const Backbone& backbone) {
    const auto params = backbone.frozen_parameters();
    bytes_ = serialize_checkpoint(params);
    checksum_ = checkpoint_checksum(params);
}

void FreezeLedger::verify(const Backbone& backbone) const {
    const auto params = backbone.frozen_parameters();
    const std::string now = serialize_checkpoint(params);
    if (now == bytes_) return;
    const auto before = deserialize_checkpoint(bytes_);
    for (const auto& p : params) {
        auto it = before.find(p.name);
        if (it == before.end() || it->second.shape() != p.tensor.shape() ||
            !std::equal(it->second.data().begin(), it->second.data().end(), p.tensor.data().begin())) {
            throw FreezeViolation("frozen backbone parameter '" + p.name + "' changed during training");
        }
    }
    throw FreezeViolation("frozen backbone serialization changed during training");
}

void FreezeLedger::check_flags(const Backbone& backbone) {
    for (const auto& p : backbone.frozen_parameters()) {
        if (p.tensor.requires_grad()) throw FreezeViolation("frozen backbone parameter '" + p.name + "' is trainable");
        if (p.tensor.has_grad()) throw FreezeViolation("frozen backbone parameter '" + p.name + "' holds a gradient");
    }
}

void TrainRunConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (micro_batch == 0) throw ConfigError("micro_batch must be at least 1");
    if (prompt_length == 0) throw ConfigError("prompt length must be at least 1");
    optimizer.validate();
    loss.validate();
}

PreparedSample prepare(const SegmentationSample& sample, const ChannelStats& stats, std::size_t max_tokens) {
    return {to_tensor(normalize(sample.image, stats)), tokenize(sample.phrase, max_tokens), mask_to_tensor(sample.mask),
            sample.mask};
}

double evaluate(const Backbone& backbone, const PromptState* state, const std::vector<SegmentationSample>& samples,
                const ChannelStats& stats, bool use_upsampler) {
    if (samples.empty()) return 0.0;
    NoGradGuard guard;
    double total = 0.0;
    for (const auto& s : samples) {
        const auto p = prepare(s, stats, backbone.config().max_text_tokens);
        const auto out = forward(backbone, state, p.image, p.tokens, use_upsampler);
        total += dice_score(predict_mask(out.logits()), p.truth);
    }
    return total / static_cast<double>(samples.size());
}

TrainedArtifacts train(const Backbone& backbone, const Dataset& data, const TrainRunConfig& cfg,
                       const StepCallback& on_step) {
    cfg.validate();
    if (data.train.empty()) throw ConfigError("training split is empty");
    FreezeLedger::check_flags(backbone);

    TrainedArtifacts art{init_prompts(cfg.kind, cfg.prompt_length, cfg.prompt_depth, backbone, cfg.init, cfg.coupler,
                                      prompt_init_seed(cfg.seed)),
                         backbone.clone()};
    Backbone& model = art.model;
    const FreezeLedger ledger(model);
    art.backbone_checksum_before = ledger.checksum();
    for (auto& p : model.upsampler_parameters()) {
        p.tensor.zero_grad();
        p.tensor.set_requires_grad(cfg.use_upsampler);
    }
    art.trainable = trainable_parameters(art.state, model, cfg.use_upsampler);
    FreezeLedger::check_flags(model);
    AdamW opt(art.trainable, cfg.optimizer);
    art.stats = compute_stats(data.train);

    std::mt19937_64 rng(mix(cfg.seed, 2));
    std::vector<std::size_t> order(data.train.size());
    std::size_t cursor = order.size();
    auto next_index = [&]() {
        if (cursor == order.size()) {
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        return order[cursor++];
    };

    const std::size_t max_tokens = model.config().max_text_tokens;
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        for (auto& p : art.trainable) p.tensor.zero_grad();
        double loss_sum = 0.0, dice_sum = 0.0;
        for (std::size_t begin = 0; begin < cfg.batch_size; begin += cfg.micro_batch) {
            const std::size_t end = std::min(cfg.batch_size, begin + cfg.micro_batch);
            Tensor micro;
            for (std::size_t j = begin; j < end; ++j) {
                const auto& raw = data.train[next_index()];
                const auto p = prepare(cfg.augment ? augment(raw, rng) : raw, art.stats, max_tokens);
                const ForwardContext ctx{true, mix(cfg.seed, (step - 1) * cfg.batch_size + j + 3)};
                const auto out = forward(model, &art.state, p.image, p.tokens, cfg.use_upsampler, ctx);
                Tensor l = combined_loss(out.logits(), p.mask, cfg.loss);
                loss_sum += l.item();
                dice_sum += dice_score(predict_mask(out.logits()), p.truth);
                micro = j == begin ? l : ops::add(micro, l);
            }
            backward(ops::scale(micro, inv_batch));
        }
        opt.step(art.trainable);
        FreezeLedger::check_flags(model);

        if (cfg.mutate_backbone_at && *cfg.mutate_backbone_at == step) {
            Tensor victim = model.frozen_parameters().front().tensor;
            victim.data()[0] += 1e-3;
        }

        MetricRecord rec{step, loss_sum * inv_batch, dice_sum * inv_batch, cfg.optimizer.learning_rate, {}, {}};
        const bool eval_now = (cfg.eval_every != 0 && step % cfg.eval_every == 0) || step == cfg.steps;
        if (eval_now) {
            ledger.verify(model);
            rec.train_dice = evaluate(model, &art.state, data.train, art.stats, cfg.use_upsampler);
            if (!data.val.empty()) rec.val_dice = evaluate(model, &art.state, data.val, art.stats, cfg.use_upsampler);
        }
        art.metrics.push_back(rec);
        if (on_step) on_step(rec);
    }

    ledger.verify(model);
    art.backbone_checksum_after = FreezeLedger(model).checksum();
    art.train_dice = evaluate(model, &art.state, data.train, art.stats, cfg.use_upsampler);
    art.val_dice = evaluate(model, &art.state, data.val, art.stats, cfg.use_upsampler);
    art.test_dice = evaluate(model, &art.state, data.test, art.stats, cfg.use_upsampler);
    return art;
}

void write_metrics(const std::filesystem::path& path, const std::vector<MetricRecord>& metrics) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& m : metrics) {
        nlohmann::json j = {{"step", m.step}, {"loss", m.loss}, {"dice", m.dice}, {"lr", m.lr}};
        if (m.train_dice) j["train_dice"] = *m.train_dice;
        if (m.val_dice) j["val_dice"] = *m.val_dice;
        out << j.dump() << '\n';
    }
}

std::vector<MetricRecord> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<MetricRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        MetricRecord m{j.at("step").get<std::size_t>(), j.at("loss").get<double>(), j.at("dice").get<double>(),
                       j.at("lr").get<double>(), {}, {}};
        if (j.contains("train_dice")) m.train_dice = j["train_dice"].get<double>();
        if (j.contains("val_dice")) m.val_dice = j["val_dice"].get<double>();
        out.push_back(m);
    }
    return out;
}

}  // namespace ctxseg
