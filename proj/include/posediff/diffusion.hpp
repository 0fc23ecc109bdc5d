#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "posediff/common.hpp"
#include "posediff/rng.hpp"
#include "posediff/se3.hpp"

namespace posediff::diff {

using Vec9 = se3::PoseVec9;

// Variance-exploding schedule: sigma(t) = sigma_min * (sigma_max/sigma_min)^t.
// The DSM weighting is fixed to lambda(t) = sigma_t^2.
struct NoiseSchedule {
    double sigma_min = 0.01;
    double sigma_max = 50.0;
};

double sigma(double t, const NoiseSchedule& sched);
double sigma_dot(double t, const NoiseSchedule& sched);  // sigma(t) * ln(max/min)

enum class GuidanceKind { none, constant, linear, exponential };

struct GuidanceSchedule {
    GuidanceKind kind = GuidanceKind::none;
    double w_min = 1.0;
    double w_max = 1.0;
    double exp_rate = 5.0;  // fixed by the exponential schedule; override is non-default
};

double guidance_weight(double t, const GuidanceSchedule& g);

GuidanceKind parse_guidance_kind(const std::string& name);
std::string guidance_kind_name(GuidanceKind k);

// Conditional score evaluator; the conditioning observation is bound at
// construction time.
class ScoreField {
public:
    virtual ~ScoreField() = default;
    virtual Vec9 eval(const Vec9& x, double t) const = 0;
};

Vec9 perturb(const Vec9& x0, double t, const Vec9& noise, const NoiseSchedule& sched);

// lambda(t) * || s(x_t,t) + (x_t - x0)/sigma_t^2 ||^2  ==  || sigma_t*s + noise ||^2
double dsm_loss(const ScoreField& field, const Vec9& x0, double t, const Vec9& noise,
                const NoiseSchedule& sched);

Vec9 scaled_score(const ScoreField& field, const Vec9& x, double t, const GuidanceSchedule& g);

Vec9 euler_ode_step(const Vec9& x, double t, double dt, const ScoreField& field,
                    const GuidanceSchedule& g, const NoiseSchedule& sched);

Vec9 ddim_step(const Vec9& x, double t, double t_prev, const ScoreField& field,
               const GuidanceSchedule& g, double eta, const NoiseSchedule& sched,
               const Vec9& rng_noise);

enum class SamplerMethod { euler_ode, ddim };

struct SamplerConfig {
    SamplerMethod method = SamplerMethod::euler_ode;
    std::size_t num_steps = 500;
    double eta = 0.0;
    double t_start = 1.0;
    double t_end = 1e-3;
    GuidanceSchedule guidance;
    NoiseSchedule sched;
};

struct Trajectory {
    std::vector<std::pair<double, Vec9>> states;  // t strictly decreasing, num_steps+1 entries
    std::optional<se3::Pose> final_pose;          // empty when unpack was degenerate
    bool degenerate = false;
};

Trajectory sample(const ScoreField& field, const SamplerConfig& cfg, Rng& rng);

// score of N(mu, S0 + sigma_t^2 I), S0 diagonal
Vec9 analytic_gaussian_score(const Vec9& x, double t, const Vec9& mu, const Vec9& s0_diag,
                             const NoiseSchedule& sched);

struct MixtureComponent {
    double weight;
    Vec9 mu;
};

// exact score of the sigma_t-smoothed isotropic Gaussian mixture
Vec9 analytic_mixture_score(const Vec9& x, double t, std::span<const MixtureComponent> comps,
                            double sigma0, const NoiseSchedule& sched);

class GaussianScoreField final : public ScoreField {
public:
    GaussianScoreField(Vec9 mu, Vec9 s0_diag, NoiseSchedule sched)
        : mu_(mu), s0_(s0_diag), sched_(sched) {}
    Vec9 eval(const Vec9& x, double t) const override {
        return analytic_gaussian_score(x, t, mu_, s0_, sched_);
    }

private:
    Vec9 mu_, s0_;
    NoiseSchedule sched_;
};

class MixtureScoreField final : public ScoreField {
public:
    MixtureScoreField(std::vector<MixtureComponent> comps, double sigma0, NoiseSchedule sched);
    Vec9 eval(const Vec9& x, double t) const override {
        return analytic_mixture_score(x, t, comps_, sigma0_, sched_);
    }

private:
    std::vector<MixtureComponent> comps_;
    double sigma0_;
    NoiseSchedule sched_;
};

// Row-batched evaluator for lockstep sampling of many chains.
class BatchScoreField {
public:
    virtual ~BatchScoreField() = default;
    virtual std::size_t rows() const = 0;
    // xs, out: rows() x 9 row-major
    virtual void eval_rows(const double* xs, double t, double* out) const = 0;
};

// Adapts any per-sample field to the batched interface (one field, many chains).
class RepeatedField final : public BatchScoreField {
public:
    RepeatedField(const ScoreField& f, std::size_t rows) : f_(f), rows_(rows) {}
    std::size_t rows() const override { return rows_; }
    void eval_rows(const double* xs, double t, double* out) const override;

private:
    const ScoreField& f_;
    std::size_t rows_;
};

// Samples rows() chains in lockstep on the shared time grid. Chain i draws
// its noise from rng.split(i), so results do not depend on batching.
struct BatchResult {
    std::vector<Vec9> finals;
    std::vector<bool> degenerate;
    std::vector<Trajectory> trajectories;  // filled only when record_trajectories
};

BatchResult sample_batch(const BatchScoreField& field, const SamplerConfig& cfg, const Rng& rng,
                         bool record_trajectories = false, std::uint64_t stream_offset = 0);

// CSV columns: t, x1..x9, rot_err_rad, trans_err_m (error columns need gt)
void export_trajectory_csv(const Trajectory& traj, const std::optional<se3::Pose>& gt,
                           const std::string& path);

}  // namespace posediff::diff
