#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxseg/dataio/preprocess.hpp"
#include "ctxseg/prompts/model.hpp"
#include "ctxseg/training/loss.hpp"
#include "ctxseg/training/optimizer.hpp"

namespace ctxseg {

struct FreezeViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Snapshot of every frozen backbone parameter, compared byte for byte.
class FreezeLedger {
public:
    explicit FreezeLedger(const Backbone& backbone);

    std::uint64_t checksum() const { return checksum_; }
    // Throws FreezeViolation naming the first changed tensor.
    void verify(const Backbone& backbone) const;
    // Throws FreezeViolation when a frozen tensor is marked trainable.
    static void check_flags(const Backbone& backbone);

private:
    std::string bytes_;
    std::uint64_t checksum_ = 0;
};

struct TrainRunConfig {
    std::size_t steps = 500;
    std::size_t batch_size = 32;   // effective batch
    std::size_t micro_batch = 4;   // samples per backward pass
    std::uint64_t seed = 0;
    PromptKind kind = PromptKind::coop;
    std::size_t prompt_length = 4;  // B
    std::size_t prompt_depth = 1;   // J
    InitMode init = InitMode::gaussian;
    CouplerConfig coupler;
    bool use_upsampler = true;
    std::size_t eval_every = 50;  // 0 disables periodic evaluation
    bool augment = true;
    AdamWConfig optimizer;
    LossConfig loss;
    // Test hook: perturbs one frozen weight after this step.
    std::optional<std::size_t> mutate_backbone_at;

    void validate() const;
};

struct MetricRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double dice = 0.0;  // thresholded dice of the step's batch
    double lr = 0.0;
    std::optional<double> train_dice;  // full train split, at eval steps
    std::optional<double> val_dice;
};

struct TrainedArtifacts {
    TrainedArtifacts(PromptState s, Backbone m) : state(std::move(s)), model(std::move(m)) {}

    PromptState state;
    ParameterList trainable;  // prompts, couplers, meta-net, upsampler when enabled
    Backbone model;           // working copy holding the trained upsampler
    ChannelStats stats;
    std::vector<MetricRecord> metrics;
    std::uint64_t backbone_checksum_before = 0;
    std::uint64_t backbone_checksum_after = 0;
    double train_dice = 0.0;
    double val_dice = 0.0;
    double test_dice = 0.0;
};

/// Sample prepared for the model: normalized image tensor, tokens, mask.
struct PreparedSample {
    Tensor image;
    TokenIds tokens;
    Tensor mask;
    Mask truth;
};

PreparedSample prepare(const SegmentationSample& sample, const ChannelStats& stats, std::size_t max_tokens);

// Mean thresholded dice; state may be null for the untuned model.
double evaluate(const Backbone& backbone, const PromptState* state, const std::vector<SegmentationSample>& samples,
                const ChannelStats& stats, bool use_upsampler);

// Seed handed to init_prompts for a run seeded with `run_seed`.
std::uint64_t prompt_init_seed(std::uint64_t run_seed);

using StepCallback = std::function<void(const MetricRecord&)>;

/// Trains prompts (and the upsampler when enabled) against a frozen copy of
/// `backbone`. The caller's backbone is never modified.
TrainedArtifacts train(const Backbone& backbone, const Dataset& data, const TrainRunConfig& cfg,
                       const StepCallback& on_step = {});

void write_metrics(const std::filesystem::path& path, const std::vector<MetricRecord>& metrics);
std::vector<MetricRecord> read_metrics(const std::filesystem::path& path);

}  // namespace ctxseg
