#include "posediff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace posediff::diff {

double sigma(double t, const NoiseSchedule& sched) {
    return sched.sigma_min * std::pow(sched.sigma_max / sched.sigma_min, t);
}

double sigma_dot(double t, const NoiseSchedule& sched) {
    return sigma(t, sched) * std::log(sched.sigma_max / sched.sigma_min);
}

double guidance_weight(double t, const GuidanceSchedule& g) {
    switch (g.kind) {
        case GuidanceKind::none:
            return 1.0;
        case GuidanceKind::constant:
            return g.w_max;
        case GuidanceKind::linear:
            return g.w_max + (g.w_min - g.w_max) * t;
        case GuidanceKind::exponential:
            return g.w_min + (g.w_max - g.w_min) * std::exp(-g.exp_rate * t);
    }
    return 1.0;
}

GuidanceKind parse_guidance_kind(const std::string& name) {
    if (name == "none") return GuidanceKind::none;
    if (name == "constant") return GuidanceKind::constant;
    if (name == "linear") return GuidanceKind::linear;
    if (name == "exponential") return GuidanceKind::exponential;
    throw ContractError("unknown guidance schedule '" + name + "'");
}

std::string guidance_kind_name(GuidanceKind k) {
    switch (k) {
        case GuidanceKind::none: return "none";
        case GuidanceKind::constant: return "constant";
        case GuidanceKind::linear: return "linear";
        case GuidanceKind::exponential: return "exponential";
    }
    return "?";
}

Vec9 perturb(const Vec9& x0, double t, const Vec9& noise, const NoiseSchedule& sched) {
    const double s = sigma(t, sched);
    Vec9 out;
    for (int i = 0; i < 9; ++i) out[i] = x0[i] + s * noise[i];
    return out;
}

double dsm_loss(const ScoreField& field, const Vec9& x0, double t, const Vec9& noise,
                const NoiseSchedule& sched) {
    const double s = sigma(t, sched);
    const Vec9 xt = perturb(x0, t, noise, sched);
    const Vec9 sc = field.eval(xt, t);
    double acc = 0.0;
    for (int i = 0; i < 9; ++i) {
        const double r = s * sc[i] + noise[i];
        acc += r * r;
    }
    return acc;
}

Vec9 scaled_score(const ScoreField& field, const Vec9& x, double t, const GuidanceSchedule& g) {
    const double w = guidance_weight(t, g);
    Vec9 s = field.eval(x, t);
    for (auto& v : s) v *= w;
    return s;
}

Vec9 euler_ode_step(const Vec9& x, double t, double dt, const ScoreField& field,
                    const GuidanceSchedule& g, const NoiseSchedule& sched) {
    const Vec9 s = scaled_score(field, x, t, g);
    const double coef = sigma(t, sched) * sigma_dot(t, sched) * dt;
    Vec9 out;
    for (int i = 0; i < 9; ++i) out[i] = x[i] - coef * s[i];
    return out;
}

Vec9 ddim_step(const Vec9& x, double t, double t_prev, const ScoreField& field,
               const GuidanceSchedule& g, double eta, const NoiseSchedule& sched,
               const Vec9& rng_noise) {
    const double st = sigma(t, sched);
    const double sp = sigma(t_prev, sched);
    const double w = guidance_weight(t, g);
    const Vec9 s = field.eval(x, t);
    const double root = std::sqrt(std::max(0.0, sp * sp - eta * sp * eta * sp));
    Vec9 out;
    for (int i = 0; i < 9; ++i)
        out[i] = x[i] + st * st * (w * s[i]) + root * (-s[i] * st) + eta * sp * rng_noise[i];
    return out;
}

namespace {

std::vector<double> time_grid(const SamplerConfig& cfg) {
    std::vector<double> ts(cfg.num_steps + 1);
    const double span = cfg.t_start - cfg.t_end;
    for (std::size_t k = 0; k <= cfg.num_steps; ++k)
        ts[k] = cfg.t_start - span * static_cast<double>(k) / static_cast<double>(cfg.num_steps);
    ts.back() = cfg.t_end;
    return ts;
}

}  // namespace

Trajectory sample(const ScoreField& field, const SamplerConfig& cfg, Rng& rng) {
    if (cfg.num_steps < 1) throw ContractError("sample: num_steps must be >= 1");
    if (cfg.t_end <= 0.0) throw ContractError("sample: t_end must be positive");
    const auto ts = time_grid(cfg);
    Trajectory traj;
    traj.states.reserve(ts.size());

    Vec9 x;
    const double s0 = sigma(cfg.t_start, cfg.sched);
    for (auto& v : x) v = s0 * rng.normal();
    traj.states.emplace_back(ts[0], x);

    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
        const double t = ts[k], tp = ts[k + 1];
        if (cfg.method == SamplerMethod::euler_ode) {
            x = euler_ode_step(x, t, tp - t, field, cfg.guidance, cfg.sched);
        } else {
            Vec9 eps{};
            if (cfg.eta > 0.0)
                for (auto& v : eps) v = rng.normal();
            x = ddim_step(x, t, tp, field, cfg.guidance, cfg.eta, cfg.sched, eps);
        }
        traj.states.emplace_back(tp, x);
    }

    try {
        traj.final_pose = se3::pose_unpack(x);
    } catch (const DegenerateInputError&) {
        traj.degenerate = true;
    }
    return traj;
}

Vec9 analytic_gaussian_score(const Vec9& x, double t, const Vec9& mu, const Vec9& s0_diag,
                             const NoiseSchedule& sched) {
    const double s2 = sigma(t, sched) * sigma(t, sched);
    Vec9 out;
    for (int i = 0; i < 9; ++i) out[i] = -(x[i] - mu[i]) / (s0_diag[i] + s2);
    return out;
}

Vec9 analytic_mixture_score(const Vec9& x, double t, std::span<const MixtureComponent> comps,
                            double sigma0, const NoiseSchedule& sched) {
    const double s = sigma(t, sched);
    const double var = sigma0 * sigma0 + s * s;
    // responsibilities via log-sum-exp
    double max_log = -1e300;
    std::vector<double> logs(comps.size());
    for (std::size_t k = 0; k < comps.size(); ++k) {
        double d2 = 0.0;
        for (int i = 0; i < 9; ++i) {
            const double d = x[i] - comps[k].mu[i];
            d2 += d * d;
        }
        logs[k] = std::log(comps[k].weight) - d2 / (2.0 * var);
        max_log = std::max(max_log, logs[k]);
    }
    double z = 0.0;
    for (auto& l : logs) {
        l = std::exp(l - max_log);
        z += l;
    }
    Vec9 out{};
    for (std::size_t k = 0; k < comps.size(); ++k) {
        const double r = logs[k] / z;
        for (int i = 0; i < 9; ++i) out[i] -= r * (x[i] - comps[k].mu[i]) / var;
    }
    return out;
}

MixtureScoreField::MixtureScoreField(std::vector<MixtureComponent> comps, double sigma0,
                                     NoiseSchedule sched)
    : comps_(std::move(comps)), sigma0_(sigma0), sched_(sched) {
    double total = 0.0;
    for (const auto& c : comps_) {
        if (c.weight <= 0.0) throw ContractError("mixture weights must be positive");
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("mixture weights must sum to 1");
}

void RepeatedField::eval_rows(const double* xs, double t, double* out) const {
    for (std::size_t i = 0; i < rows_; ++i) {
        Vec9 x;
        std::copy(xs + i * 9, xs + i * 9 + 9, x.begin());
        const Vec9 s = f_.eval(x, t);
        std::copy(s.begin(), s.end(), out + i * 9);
    }
}

BatchResult sample_batch(const BatchScoreField& field, const SamplerConfig& cfg, const Rng& rng,
                         bool record_trajectories, std::uint64_t stream_offset) {
    if (cfg.num_steps < 1) throw ContractError("sample_batch: num_steps must be >= 1");
    const std::size_t M = field.rows();
    const auto ts = time_grid(cfg);

    std::vector<Rng> streams;
    streams.reserve(M);
    for (std::size_t i = 0; i < M; ++i) streams.push_back(rng.split(stream_offset + i));

    std::vector<double> x(M * 9), sc(M * 9);
    const double s0 = sigma(cfg.t_start, cfg.sched);
    for (std::size_t i = 0; i < M; ++i)
        for (int j = 0; j < 9; ++j) x[i * 9 + j] = s0 * streams[i].normal();

    BatchResult res;
    if (record_trajectories) {
        res.trajectories.resize(M);
        for (std::size_t i = 0; i < M; ++i) {
            res.trajectories[i].states.reserve(ts.size());
            Vec9 v;
            std::copy(&x[i * 9], &x[i * 9] + 9, v.begin());
            res.trajectories[i].states.emplace_back(ts[0], v);
        }
    }

    const double lnr = std::log(cfg.sched.sigma_max / cfg.sched.sigma_min);
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
        const double t = ts[k], tp = ts[k + 1];
        field.eval_rows(x.data(), t, sc.data());
        const double w = guidance_weight(t, cfg.guidance);
        if (cfg.method == SamplerMethod::euler_ode) {
            const double st = sigma(t, cfg.sched);
            const double coef = st * (st * lnr) * (tp - t);
            for (std::size_t i = 0; i < M * 9; ++i) x[i] -= coef * w * sc[i];
        } else {
            const double st = sigma(t, cfg.sched);
            const double sp = sigma(tp, cfg.sched);
            const double root = std::sqrt(std::max(0.0, sp * sp * (1.0 - cfg.eta * cfg.eta)));
            const double drift = st * st * w - root * st;
            if (cfg.eta > 0.0) {
                for (std::size_t i = 0; i < M; ++i)
                    for (int j = 0; j < 9; ++j)
                        x[i * 9 + j] += drift * sc[i * 9 + j] + cfg.eta * sp * streams[i].normal();
            } else {
                for (std::size_t i = 0; i < M * 9; ++i) x[i] += drift * sc[i];
            }
        }
        if (record_trajectories) {
            for (std::size_t i = 0; i < M; ++i) {
                Vec9 v;
                std::copy(&x[i * 9], &x[i * 9] + 9, v.begin());
                res.trajectories[i].states.emplace_back(tp, v);
            }
        }
    }

    res.finals.resize(M);
    res.degenerate.assign(M, false);
    for (std::size_t i = 0; i < M; ++i) {
        std::copy(&x[i * 9], &x[i * 9] + 9, res.finals[i].begin());
        if (record_trajectories) {
            try {
                res.trajectories[i].final_pose = se3::pose_unpack(res.finals[i]);
            } catch (const DegenerateInputError&) {
                res.trajectories[i].degenerate = true;
                res.degenerate[i] = true;
            }
        } else {
            try {
                (void)se3::pose_unpack(res.finals[i]);
            } catch (const DegenerateInputError&) {
                res.degenerate[i] = true;
            }
        }
    }
    return res;
}

void export_trajectory_csv(const Trajectory& traj, const std::optional<se3::Pose>& gt,
                           const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out << "t,x1,x2,x3,x4,x5,x6,x7,x8,x9,rot_err_rad,trans_err_m\n";
    char buf[32];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (const auto& [t, x] : traj.states) {
        emit(t);
        for (int i = 0; i < 9; ++i) {
            out << ',';
            emit(x[i]);
        }
        if (gt) {
            double rot = std::numeric_limits<double>::quiet_NaN();
            double trans = std::numeric_limits<double>::quiet_NaN();
            try {
                const se3::Pose p = se3::pose_unpack(x);
                rot = se3::geodesic_distance(p.rotation, gt->rotation);
                const se3::Vec3 d = {p.translation[0] - gt->translation[0],
                                     p.translation[1] - gt->translation[1],
                                     p.translation[2] - gt->translation[2]};
                trans = se3::norm(d);
            } catch (const DegenerateInputError&) {
            }
            out << ',';
            emit(rot);
            out << ',';
            emit(trans);
        } else {
            out << ",,";
        }
        out << '\n';
    }
}

}  // namespace posediff::diff
