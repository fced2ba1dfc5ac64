#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stripmlp/data.hpp"
#include "stripmlp/model.hpp"

namespace stripmlp::train {

struct OptimConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
    double clip_norm = 0.0;  // 0 disables clipping
};

//! Per-parameter first/second moments plus the shared step counter.
//! Decay applies only to decay-eligible tensors (multiplicative weights);
//! normalization gains/shifts and all biases are exempt.
struct OptimState {
    OptimConfig cfg;
    std::vector<Tensor> m, v;  // parallel to the store's entries
    Index step = 0;

    void initialize(const ParamStore& store);
    bool initialized() const { return !m.empty(); }
};

//! One decoupled-decay update: theta <- theta*(1 - lr*wd) before the
//! bias-corrected moment update.
void adamw_step(ParamStore& store, OptimState& state, double lr);

struct Schedule {
    double base_lr = 1e-3;
    Index warmup_epochs = 30;
    Index total_epochs = 300;
    double min_lr = 1e-5;
    double warmup_start_lr = 1e-6;
    void validate() const;
};

//! Linear warmup to base_lr, then cosine decay to min_lr. `step` counts
//! optimizer updates; warmup ends exactly at warmup_epochs*steps_per_epoch
//! and the cosine lands exactly on min_lr at total_epochs*steps_per_epoch.
double lr_at(const Schedule& sched, Index step, Index steps_per_epoch);

struct RunSettings {
    Index epochs = 3;
    Index batch_size = 32;
    std::uint64_t seed = 42;
    double label_smoothing = 0.1;
    Index max_steps = 0;                // 0 = no cap
    Index checkpoint_every_epochs = 0;  // 0 = final checkpoint only
    std::string out_dir;                // metrics/checkpoints; empty = keep in memory
    data::AugmentPolicy augment;
    data::Normalization norm;
    double stop_at_train_top1 = -1.0;  // early stop once reached (<0 = off)
};

struct StepRecord {
    Index step = 0;
    Index epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct EpochRecord {
    Index epoch = 0;
    double top1 = 0.0;
};

struct TrainResult {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;  // train-set top-1, eval mode
    Index steps_run = 0;
    bool reached_stop = false;
};

//! Deterministic under a fixed seed in serial mode: shuffling,
//! augmentation, and reductions all derive from RunSettings::seed.
TrainResult train(StripMlpModel& model, const data::Dataset& train_set,
                  const Schedule& sched, const OptimConfig& optim, const RunSettings& run);

//! Top-1 accuracy with ties resolved to the lowest class index.
double evaluate(const StripMlpModel& model, const data::Dataset& ds, Index batch_size,
                const data::Normalization& norm);
double evaluate_logits(const std::function<Tensor(const Tensor&)>& logits_fn,
                       const data::Dataset& ds, Index batch_size,
                       const data::Normalization& norm);

//! Model tensors plus (optionally) optimizer moments in one container.
void save_checkpoint(const std::string& path, const StripMlpModel& model,
                     const OptimState* optim);
void load_checkpoint(const std::string& path, StripMlpModel& model, OptimState* optim);

}  // namespace stripmlp::train
