#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "posediff/data.hpp"
#include "posediff/diffusion.hpp"
#include "posediff/models.hpp"
#include "posediff/rng.hpp"
#include "posediff/se3.hpp"

// Metrics and diagnostics: mAP at angle/translation thresholds, the
// multi-sample mean-pooling baseline, circular statistics for symmetric
// objects, and CSV/SVG exports for distribution and trajectory plots.

namespace posediff::eval {

struct ErrorPair {
    double rot_err = 0.0;    // radians
    double trans_err = 0.0;  // meters
};

ErrorPair pose_error(const se3::Pose& pred, const se3::Pose& gt, bool symmetric);

// Percent of pairs with rot_err <= n_deg and trans_err <= m_cm (inclusive).
double map_at(std::span<const ErrorPair> results, double n_deg, double m_cm);

struct AggregationConfig {
    std::size_t k = 50;
    double delta = 60.0;  // retained percent, selection is uniform random
};

se3::Pose aggregate_mean_pool(std::span<const se3::Pose> candidates, const AggregationConfig& cfg,
                              Rng& rng);

struct ModeStats {
    std::vector<double> yaw;      // free angle about the symmetry axis, per sample
    double resultant_length = 0;  // |mean exp(i yaw)|
    double circular_std = 0;      // sqrt(-2 ln resultant)
    bool uniform = false;         // resultant < 0.1
    double off_axis_mean = 0;     // mean residual axis misalignment (radians)
    std::size_t occupied_modes = 0;
};

ModeStats mode_stats(std::span<const se3::Pose> samples, const se3::Pose& gt);

// Writes <base>.csv (yaw_lon,pitch_lat,roll_color) and <base>.svg (Mollweide
// scatter, roll as hue, ground truth at the center).
void export_rotation_distribution(std::span<const se3::Pose> samples, const se3::Pose& gt,
                                  const std::string& base_path);

struct TrajStats {
    std::vector<double> t, rot_mean, rot_std, trans_mean, trans_std;
};

TrajStats trajectory_stats(const std::vector<diff::Trajectory>& trajs, const se3::Pose& gt);

// Writes <base>_<label>.csv per run and a combined <base>.svg band plot.
void export_trajectory_errors(
    const std::vector<std::pair<std::string, const std::vector<diff::Trajectory>*>>& runs,
    const se3::Pose& gt, const std::string& base_path);

// ---- batched sampling over dataset records ----

struct SampledPoses {
    std::vector<se3::Pose> poses;  // records x candidates, row-major
    std::vector<bool> degenerate;  // aligned; degenerate entries hold identity
};

SampledPoses sample_poses_full(const models::FrozenModel& model,
                               std::span<const data::SceneSample> records,
                               std::size_t candidates, const diff::SamplerConfig& cfg,
                               std::uint64_t seed);

// Convenience: degenerate entries are kept as identity poses (they count as
// misses downstream).
std::vector<se3::Pose> sample_poses(const models::FrozenModel& model,
                                    std::span<const data::SceneSample> records,
                                    std::size_t candidates, const diff::SamplerConfig& cfg,
                                    std::uint64_t seed);

// Trajectories for one record, many chains (used for trajectory statistics).
std::vector<diff::Trajectory> sample_trajectories(const models::FrozenModel& model,
                                                  const data::SceneSample& record,
                                                  std::size_t chains,
                                                  const diff::SamplerConfig& cfg,
                                                  std::uint64_t seed);

// ---- evaluation tables ----

struct EvalRow {
    std::string label;
    double map_5_2 = 0, map_10_2 = 0, map_10_5 = 0;
};

struct EvalOptions {
    diff::SamplerConfig sampler;  // guidance used for the guided row
    std::size_t k = 50;
    double delta = 60.0;
    std::uint64_t seed = 1;
};

// Rows: single guided sample, single unguided sample, K-sample mean-pool
// (unguided, no ranker).
std::vector<EvalRow> evaluate_all(const models::FrozenModel& model,
                                  std::span<const data::SceneSample> records,
                                  const EvalOptions& opt);

// One row per schedule in {none, constant, linear, exponential}, single
// sample each.
std::vector<EvalRow> compare_schedules(const models::FrozenModel& model,
                                       std::span<const data::SceneSample> records,
                                       const diff::SamplerConfig& base, double w_min, double w_max,
                                       std::uint64_t seed);

std::string format_table(std::span<const EvalRow> rows);
void write_rows_csv(std::span<const EvalRow> rows, const std::string& path);

ErrorPair error_for(const se3::Pose& pred, const data::SceneSample& rec);

}  // namespace posediff::eval
