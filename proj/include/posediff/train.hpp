#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "posediff/data.hpp"
#include "posediff/diffusion.hpp"
#include "posediff/models.hpp"
#include "posediff/tensor.hpp"

// Two-stage learning: pre-train encoder + regression head on the pose
// regression loss, then train encoder + both heads jointly on the sum of the
// regression and denoising score-matching losses. scratch mode trains the
// diffusion path alone from random initialization.

namespace posediff::train {

enum class Mode { pretrain, joint, scratch };

Mode parse_mode(const std::string& name);

struct TrainConfig {
    std::size_t batch = 192;
    std::size_t epochs = 20;
    double base_lr = 1e-3;
    std::uint64_t warmup_steps = 500;
    double decay_rate = 0.98;
    std::uint64_t decay_every = 1000;
    Mode mode = Mode::pretrain;
    bool symmetric_loss = true;  // use the y-axis rotation loss for symmetric categories
    std::size_t checkpoint_every = 0;  // epochs; 0 = only final
    std::uint64_t seed = 1;
    double t_end = 1e-3;
    diff::NoiseSchedule sched;
    // validation sampling (single guided sample per item)
    std::size_t val_steps = 50;
    diff::GuidanceSchedule val_guidance{diff::GuidanceKind::exponential, 1.0, 4.0};
    std::size_t val_every = 1;  // epochs; 0 disables validation
    // joint mode requires an init checkpoint unless explicitly overridden
    bool allow_uninitialized_joint = false;

    std::string out_dir;  // checkpoints and the log land here when non-empty
};

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

struct EpochRecord {
    std::size_t epoch = 0;
    double loss_reg = 0.0;
    double loss_dsm = 0.0;
    double map_5_2 = 0.0;
    double map_10_2 = 0.0;
    double map_10_5 = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    void write_csv(const std::string& path) const;
    // same content without the wall-clock column (deterministic view)
    std::string deterministic_csv() const;
};

// Spec-level regression loss: geodesic (or y-axis) rotation term plus squared
// Euclidean translation term.
double loss_regression(const se3::Pose& pred, const se3::Pose& gt, bool symmetric);

struct TrainResult {
    ad::ParamStore params;
    TrainLog log;
    std::size_t epochs_run = 0;
};

TrainResult pretrain(const data::DatasetFile& train_set, const TrainConfig& cfg);
TrainResult joint_train(const data::DatasetFile& train_set, const data::DatasetFile& val_set,
                        const TrainConfig& cfg, const ad::ParamStore& init);
TrainResult scratch_train(const data::DatasetFile& train_set, const data::DatasetFile& val_set,
                          const TrainConfig& cfg);

// Validation metric used during training: mAP from one guided sample per item.
struct ValScores {
    double map_5_2 = 0.0, map_10_2 = 0.0, map_10_5 = 0.0;
};
ValScores validate(const models::FrozenModel& model, const data::DatasetFile& val_set,
                   const TrainConfig& cfg, std::uint64_t seed);

// Exposed for tests: builds the per-batch losses on the autodiff graph.
struct BatchLosses {
    ad::Tensor loss_reg;    // scalar
    ad::Tensor loss_dsm;    // scalar
    ad::Tensor loss_total;  // scalar
};
BatchLosses build_batch_losses(const ad::ParamStore& ps, const data::DatasetFile& ds,
                               const std::vector<std::size_t>& batch_idx, const TrainConfig& cfg,
                               Rng& rng, bool with_reg, bool with_dsm);

}  // namespace posediff::train
