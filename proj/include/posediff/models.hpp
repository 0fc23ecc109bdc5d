#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

#include "posediff/diffusion.hpp"
#include "posediff/rng.hpp"
#include "posediff/se3.hpp"
#include "posediff/tensor.hpp"

// The three networks: point-cloud encoder (per-point MLP 3-64-128-1024 with
// max-pool), regression head (1024-512-512-9), and diffusion head (time MLP
// to 128, pose MLP to 256, trunk 1408-512-512-9). The trunk predicts
// sigma_t * score; diffusion_score divides by sigma_t.

namespace posediff::models {

inline constexpr std::size_t kPointsPerCloud = 1024;
inline constexpr std::size_t kFeatureDim = 1024;
inline constexpr std::size_t kTimeEmbedDim = 128;
inline constexpr std::size_t kPoseEmbedDim = 256;
inline constexpr std::size_t kTrunkInDim = kFeatureDim + kTimeEmbedDim + kPoseEmbedDim;

// Parameter namespaces: "enc.", "reg.", "diff."
ad::ParamStore init_params(Rng& rng);
ad::ParamStore init_encoder_params(Rng& rng);
ad::ParamStore init_regression_params(Rng& rng);
ad::ParamStore init_diffusion_params(Rng& rng);

// Sinusoidal features of log sigma(t); length kTimeEmbedDim.
std::vector<double> time_features(double t, const diff::NoiseSchedule& sched);

// ---- graph builders (training path) ----

// pts: [(B*1024) x 3] -> [B x 1024]
ad::Tensor encoder_graph(const ad::ParamStore& ps, const ad::Tensor& pts, std::size_t n_clouds);

// feat: [B x 1024] -> [B x 9]
ad::Tensor regression_graph(const ad::ParamStore& ps, const ad::Tensor& feat);

// Differentiable Gram-Schmidt columns of a [B x 6] rotation representation.
struct GsCols {
    ad::Tensor b1, b2, b3;  // each [B x 3]
};
GsCols gs_columns_graph(const ad::Tensor& rot6);

// feat: [B x 1024], ts: per-item time, xt: [B x 9] noisy poses (constant).
// Returns the trunk output, i.e. sigma_t * score, shape [B x 9].
ad::Tensor diffusion_trunk_graph(const ad::ParamStore& ps, const ad::Tensor& feat,
                                 const std::vector<double>& ts, const ad::Tensor& xt,
                                 const diff::NoiseSchedule& sched);

ad::Tensor time_embed_graph(const ad::ParamStore& ps, const ad::Tensor& raw_feats);
ad::Tensor pose_embed_graph(const ad::ParamStore& ps, const ad::Tensor& x);

// ---- frozen fast inference ----

class FrozenModel {
public:
    FrozenModel(const ad::ParamStore& ps, const diff::NoiseSchedule& sched);

    bool has_encoder() const { return has_enc_; }
    bool has_regression() const { return has_reg_; }
    bool has_diffusion() const { return has_diff_; }
    const diff::NoiseSchedule& schedule() const { return sched_; }

    // points: 1024 x 3 row-major -> feat: 1024 values
    void encode(const double* points, double* feat) const;
    void encode_many(const double* points, std::size_t n_clouds, double* feats) const;

    se3::Pose regress(const double* feat) const;

    // feats: [M x 1024], xs: [M x 9] -> out: [M x 9] score (already / sigma_t)
    void score_rows(const double* feats, const double* xs, std::size_t m, double t,
                    double* out) const;

    diff::Vec9 score(const double* feat, const diff::Vec9& x, double t) const;

private:
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Mat e1W_, e2W_, e3W_, r1W_, r2W_, r3W_;
    Mat t1W_, t2W_, p1W_, p2W_, d1W_, d2W_, d3W_;
    Eigen::VectorXd e1b_, e2b_, e3b_, r1b_, r2b_, r3b_;
    Eigen::VectorXd t1b_, t2b_, p1b_, p2b_, d1b_, d2b_, d3b_;
    bool has_enc_ = false, has_reg_ = false, has_diff_ = false;
    diff::NoiseSchedule sched_;
};

// diff::ScoreField over a frozen model and one bound condition feature.
class LearnedScoreField final : public diff::ScoreField {
public:
    LearnedScoreField(const FrozenModel& model, std::vector<double> feature)
        : model_(model), feat_(std::move(feature)) {}
    diff::Vec9 eval(const diff::Vec9& x, double t) const override {
        return model_.score(feat_.data(), x, t);
    }

private:
    const FrozenModel& model_;
    std::vector<double> feat_;
};

// Batched field: row i is conditioned on feature row i.
class LearnedBatchField final : public diff::BatchScoreField {
public:
    LearnedBatchField(const FrozenModel& model, std::vector<double> features, std::size_t rows)
        : model_(model), feats_(std::move(features)), rows_(rows) {
        if (feats_.size() != rows_ * kFeatureDim)
            throw DimensionError("LearnedBatchField: feature buffer size mismatch");
    }
    std::size_t rows() const override { return rows_; }
    void eval_rows(const double* xs, double t, double* out) const override {
        model_.score_rows(feats_.data(), xs, rows_, t, out);
    }

private:
    const FrozenModel& model_;
    std::vector<double> feats_;
    std::size_t rows_;
};

// ---- spec-level single-instance ops ----

std::vector<double> encode(const std::vector<double>& points, const ad::ParamStore& ps);
std::vector<double> time_embed(double t, const ad::ParamStore& ps,
                               const diff::NoiseSchedule& sched);
std::vector<double> pose_embed(const diff::Vec9& x, const ad::ParamStore& ps);
se3::Pose regress(const std::vector<double>& feature, const ad::ParamStore& ps);
diff::Vec9 diffusion_score(const std::vector<double>& feature, const diff::Vec9& x, double t,
                           const ad::ParamStore& ps, const diff::NoiseSchedule& sched);

}  // namespace posediff::models
