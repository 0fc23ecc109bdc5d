#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "posediff/diffusion.hpp"
#include "posediff/rng.hpp"

using namespace posediff;
namespace diff = posediff::diff;
using diff::Vec9;

namespace {

Vec9 vfill(double v) {
    Vec9 x;
    x.fill(v);
    return x;
}

double vdist(const Vec9& a, const Vec9& b) {
    double acc = 0;
    for (int i = 0; i < 9; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc);
}

}  // namespace

TEST_CASE("sigma: endpoints and geometric midpoint") {
    diff::NoiseSchedule s;  // 0.01 .. 50
    CHECK(diff::sigma(0.0, s) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(diff::sigma(1.0, s) == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(diff::sigma(0.5, s) == doctest::Approx(std::sqrt(0.01 * 50.0)).epsilon(1e-12));
    CHECK(diff::sigma(0.5, s) == doctest::Approx(0.7071).epsilon(1e-4));
    // strictly increasing
    double prev = 0.0;
    for (int i = 0; i <= 50; ++i) {
        const double v = diff::sigma(i / 50.0, s);
        CHECK(v > prev);
        prev = v;
    }
}

TEST_CASE("perturb: zero noise, Monte-Carlo variance, high-t decorrelation") {
    diff::NoiseSchedule sched;
    const Vec9 x0 = {0.3, -0.2, 0.5, 0.1, 0.9, -0.4, 0.05, -0.1, 0.2};
    CHECK(vdist(diff::perturb(x0, 0.37, vfill(0.0), sched), x0) == 0.0);

    Rng rng(101);
    const double t = 0.4;
    const double s = diff::sigma(t, sched);
    const int n = 100000;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        Vec9 noise;
        for (auto& v : noise) v = rng.normal();
        const Vec9 xt = diff::perturb(x0, t, noise, sched);
        for (int j = 0; j < 9; ++j) var += (xt[j] - x0[j]) * (xt[j] - x0[j]);
    }
    var /= 9.0 * n;
    CHECK(var == doctest::Approx(s * s).epsilon(0.02));

    // at t=1 the output is noise dominated: corr(x_t, x0) tiny for unit-ish x0
    double num = 0.0, d1 = 0.0, d2 = 0.0;
    for (int i = 0; i < n; ++i) {
        Vec9 noise;
        for (auto& v : noise) v = rng.normal();
        const Vec9 xt = diff::perturb(x0, 1.0, noise, sched);
        for (int j = 0; j < 9; ++j) {
            num += xt[j] * x0[j];
            d1 += xt[j] * xt[j];
            d2 += x0[j] * x0[j];
        }
    }
    CHECK(std::abs(num / std::sqrt(d1 * d2)) < 0.05);
}

TEST_CASE("dsm_loss: optimal per-sample score and zero field") {
    diff::NoiseSchedule sched;
    const Vec9 x0 = {1, 0, 0, 0, 1, 0, 0.1, 0.2, 0.3};
    Rng rng(7);
    Vec9 noise;
    for (auto& v : noise) v = rng.normal();
    const double t = 0.6;
    const double s = diff::sigma(t, sched);

    struct Optimal final : diff::ScoreField {
        Vec9 noise;
        double sigma;
        Vec9 eval(const Vec9&, double) const override {
            Vec9 out;
            for (int i = 0; i < 9; ++i) out[i] = -noise[i] / sigma;
            return out;
        }
    } opt;
    opt.noise = noise;
    opt.sigma = s;
    CHECK(diff::dsm_loss(opt, x0, t, noise, sched) == doctest::Approx(0.0).epsilon(1e-20));

    struct Zero final : diff::ScoreField {
        Vec9 eval(const Vec9&, double) const override { return vfill(0.0); }
    } zero;
    double n2 = 0;
    for (double v : noise) n2 += v * v;
    CHECK(diff::dsm_loss(zero, x0, t, noise, sched) == doctest::Approx(n2).epsilon(1e-12));
}

TEST_CASE("dsm minimization over a linear field recovers the Gaussian score") {
    // independent least-squares oracle: per coordinate fit s(x) = a x + b by
    // minimizing || sigma (a x_t + b) + eps ||^2 over samples
    diff::NoiseSchedule sched;
    Rng rng(11);
    const double t = 0.5;
    const double s = diff::sigma(t, sched);
    const double mu = 0.7, var0 = 0.25;
    const int n = 100000;
    double sx = 0, sxx = 0, sy = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        const double x0 = mu + std::sqrt(var0) * rng.normal();
        const double eps = rng.normal();
        const double xt = x0 + s * eps;
        const double y = -eps / s;  // regression target
        sx += xt;
        sxx += xt * xt;
        sy += y;
        sxy += xt * y;
    }
    const double a = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double b = (sy - a * sx) / n;

    const double a_true = -1.0 / (var0 + s * s);
    const double b_true = mu / (var0 + s * s);
    double rms = 0.0;
    int cnt = 0;
    for (double x = mu - 2; x <= mu + 2; x += 0.1) {
        const double d = (a * x + b) - (a_true * x + b_true);
        rms += d * d;
        ++cnt;
    }
    rms = std::sqrt(rms / cnt);
    CHECK(rms < 1e-2);
}

TEST_CASE("guidance_weight: all schedules, exact endpoints") {
    diff::GuidanceSchedule none;
    CHECK(diff::guidance_weight(0.3, none) == 1.0);

    diff::GuidanceSchedule c{diff::GuidanceKind::constant, 1.0, 4.0};
    CHECK(diff::guidance_weight(0.0, c) == 4.0);
    CHECK(diff::guidance_weight(1.0, c) == 4.0);

    diff::GuidanceSchedule lin{diff::GuidanceKind::linear, 1.0, 4.0};
    CHECK(diff::guidance_weight(1.0, lin) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(diff::guidance_weight(0.0, lin) == doctest::Approx(4.0).epsilon(1e-15));

    diff::GuidanceSchedule e{diff::GuidanceKind::exponential, 1.0, 4.0};
    CHECK(diff::guidance_weight(0.0, e) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(diff::guidance_weight(1.0, e) ==
          doctest::Approx(1.0 + 3.0 * std::exp(-5.0)).epsilon(1e-15));
    CHECK(diff::guidance_weight(1.0, e) == doctest::Approx(1.02021).epsilon(1e-5));
    // strictly decreasing in t, bounded in [w_min, w_max]
    double prev = 5.0;
    for (int i = 0; i <= 40; ++i) {
        const double w = diff::guidance_weight(i / 40.0, e);
        CHECK(w < prev);
        CHECK(w >= 1.0);
        CHECK(w <= 4.0);
        prev = w;
    }
}

TEST_CASE("scaled_score: direction preserved, norm ratio exact") {
    diff::NoiseSchedule sched;
    diff::GaussianScoreField field(vfill(0.2), vfill(0.04), sched);
    const Vec9 x = {0.9, -0.3, 0.2, 0.4, 0.8, -0.2, 0.1, -0.5, 0.3};
    const double t = 0.3;

    diff::GuidanceSchedule none;
    const Vec9 s0 = diff::scaled_score(field, x, t, none);
    const Vec9 raw = field.eval(x, t);
    for (int i = 0; i < 9; ++i) CHECK(s0[i] == raw[i]);

    diff::GuidanceSchedule e{diff::GuidanceKind::exponential, 1.0, 4.0};
    const Vec9 s1 = diff::scaled_score(field, x, t, e);
    const double w = diff::guidance_weight(t, e);
    double n1 = 0, n0 = 0;
    for (int i = 0; i < 9; ++i) {
        n1 += s1[i] * s1[i];
        n0 += raw[i] * raw[i];
    }
    CHECK(std::sqrt(n1 / n0) == doctest::Approx(w).epsilon(1e-12));
    for (int i = 0; i < 9; ++i) CHECK(s1[i] == doctest::Approx(w * raw[i]).epsilon(1e-12));
}

namespace {

struct ZeroField final : diff::ScoreField {
    Vec9 eval(const Vec9&, double) const override { return vfill(0.0); }
};

}  // namespace

TEST_CASE("euler_ode_step: zero score leaves x unchanged") {
    diff::NoiseSchedule sched;
    ZeroField zero;
    const Vec9 x = vfill(0.7);
    const Vec9 y = diff::euler_ode_step(x, 0.8, -0.002, zero, {}, sched);
    for (int i = 0; i < 9; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("euler ODE with point-mass score converges to the target") {
    diff::NoiseSchedule sched;
    const Vec9 mu = {0.5, -0.1, 0.8, -0.3, 0.6, 0.2, 0.1, -0.2, 0.25};
    diff::GaussianScoreField field(mu, vfill(0.0), sched);  // point mass
    diff::SamplerConfig cfg;
    cfg.num_steps = 200;
    double mean_err = 0.0;
    const int seeds = 20;
    for (int k = 0; k < seeds; ++k) {
        Rng rng(900 + k);
        const auto traj = diff::sample(field, cfg, rng);
        CHECK(traj.states.size() == cfg.num_steps + 1);
        mean_err += vdist(traj.states.back().second, mu);
    }
    mean_err /= seeds;
    CHECK(mean_err < 3.0 * diff::sigma(cfg.t_end, sched));
}

TEST_CASE("euler ODE shows first-order convergence (Richardson)") {
    diff::NoiseSchedule sched;
    const Vec9 mu = vfill(0.0);
    diff::GaussianScoreField field(mu, vfill(0.0), sched);
    const double t_end = 1e-3;

    // exact transport: x(t_end) = x(1) * sigma(t_end)/sigma(1)
    Vec9 x1;
    Rng rng(55);
    for (auto& v : x1) v = diff::sigma(1.0, sched) * rng.normal();
    const double shrink = diff::sigma(t_end, sched) / diff::sigma(1.0, sched);

    auto run = [&](std::size_t steps) {
        Vec9 x = x1;
        for (std::size_t k = 0; k < steps; ++k) {
            const double t = 1.0 - (1.0 - t_end) * k / steps;
            const double tp = 1.0 - (1.0 - t_end) * (k + 1) / steps;
            x = diff::euler_ode_step(x, t, tp - t, field, {}, sched);
        }
        double err = 0.0;
        for (int i = 0; i < 9; ++i) {
            const double exact = x1[i] * shrink;
            err += (x[i] - exact) * (x[i] - exact);
        }
        return std::sqrt(err);
    };
    const double e100 = run(100), e200 = run(200), e400 = run(400);
    const double slope1 = std::log2(e100 / e200);
    const double slope2 = std::log2(e200 / e400);
    CHECK(slope1 == doctest::Approx(1.0).epsilon(0.3));
    CHECK(slope2 == doctest::Approx(1.0).epsilon(0.3));
}

TEST_CASE("ddim_step: eta=0 deterministic, zero score fixes x") {
    diff::NoiseSchedule sched;
    ZeroField zero;
    const Vec9 x = vfill(-0.4);
    const Vec9 y = diff::ddim_step(x, 0.5, 0.49, zero, {}, 0.0, sched, vfill(123.0));
    for (int i = 0; i < 9; ++i) CHECK(y[i] == x[i]);

    // eta=0 ignores the injected noise entirely
    diff::GaussianScoreField field(vfill(0.1), vfill(0.01), sched);
    const Vec9 a = diff::ddim_step(x, 0.5, 0.49, field, {}, 0.0, sched, vfill(0.0));
    const Vec9 b = diff::ddim_step(x, 0.5, 0.49, field, {}, 0.0, sched, vfill(77.0));
    for (int i = 0; i < 9; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("ddim with exact point-mass score transports exactly at eta=0") {
    diff::NoiseSchedule sched;
    const Vec9 mu = vfill(0.3);
    diff::GaussianScoreField field(mu, vfill(0.0), sched);
    Vec9 x = vfill(25.0);
    const double t = 0.8, tp = 0.5;
    const Vec9 y = diff::ddim_step(x, t, tp, field, {}, 0.0, sched, vfill(0.0));
    const double ratio = diff::sigma(tp, sched) / diff::sigma(t, sched);
    for (int i = 0; i < 9; ++i)
        CHECK(y[i] - mu[i] == doctest::Approx((x[i] - mu[i]) * ratio).epsilon(1e-10));
}

TEST_CASE("sample: determinism, trajectory length, guidance beats none on point mass") {
    diff::NoiseSchedule sched;
    const Vec9 mu = {1, 0, 0, 0, 1, 0, 0.1, -0.1, 0.2};
    diff::GaussianScoreField field(mu, vfill(0.0), sched);

    diff::SamplerConfig cfg;
    cfg.num_steps = 100;
    Rng r1(5), r2(5);
    const auto t1 = diff::sample(field, cfg, r1);
    const auto t2 = diff::sample(field, cfg, r2);
    REQUIRE(t1.states.size() == 101);
    for (std::size_t k = 0; k < t1.states.size(); ++k) {
        CHECK(t1.states[k].first == t2.states[k].first);
        for (int i = 0; i < 9; ++i) CHECK(t1.states[k].second[i] == t2.states[k].second[i]);
    }

    diff::SamplerConfig guided = cfg;
    guided.guidance = {diff::GuidanceKind::exponential, 1.0, 4.0};
    double err_g = 0, err_n = 0;
    for (int k = 0; k < 100; ++k) {
        Rng ra(3000 + k), rb(3000 + k);
        err_g += vdist(diff::sample(field, guided, ra).states.back().second, mu);
        err_n += vdist(diff::sample(field, cfg, rb).states.back().second, mu);
    }
    CHECK(err_g < err_n);
}

TEST_CASE("analytic_gaussian_score: zero at mean, point-mass reduction") {
    diff::NoiseSchedule sched;
    const Vec9 mu = vfill(0.4);
    const Vec9 z = diff::analytic_gaussian_score(mu, 0.5, mu, vfill(0.3), sched);
    for (int i = 0; i < 9; ++i) CHECK(z[i] == 0.0);

    const Vec9 x = vfill(1.0);
    const double t = 0.5;
    const double s2 = diff::sigma(t, sched) * diff::sigma(t, sched);
    const Vec9 sc = diff::analytic_gaussian_score(x, t, mu, vfill(0.0), sched);
    for (int i = 0; i < 9; ++i)
        CHECK(sc[i] == doctest::Approx(-(x[i] - mu[i]) / s2).epsilon(1e-12));
}

TEST_CASE("analytic_mixture_score: reduction and midpoint symmetry") {
    diff::NoiseSchedule sched;
    const double s0 = 0.2;
    Vec9 muA = vfill(0.0), muB = vfill(0.0);
    muA[0] = 0.5;
    muB[0] = -0.5;

    std::vector<diff::MixtureComponent> single{{1.0, muA}};
    const Vec9 x = {0.2, 0.1, -0.3, 0.4, 0.9, -0.2, 0.3, 0.1, -0.4};
    const Vec9 m1 = diff::analytic_mixture_score(x, 0.4, single, s0, sched);
    const Vec9 g1 = diff::analytic_gaussian_score(x, 0.4, muA, vfill(s0 * s0), sched);
    for (int i = 0; i < 9; ++i) CHECK(m1[i] == doctest::Approx(g1[i]).epsilon(1e-12));

    std::vector<diff::MixtureComponent> two{{0.5, muA}, {0.5, muB}};
    Vec9 mid = vfill(0.0);
    mid[3] = 0.7;  // off-axis offset, still equidistant from both modes
    const Vec9 m2 = diff::analytic_mixture_score(mid, 0.2, two, s0, sched);
    CHECK(std::abs(m2[0]) < 1e-14);

    std::vector<diff::MixtureComponent> bad{{0.5, muA}, {0.6, muB}};
    CHECK_THROWS_AS(diff::MixtureScoreField(bad, s0, sched), ContractError);
}

TEST_CASE("dsm optimality: analytic score beats perturbed scores") {
    diff::NoiseSchedule sched;
    const Vec9 mu = vfill(0.2);
    const Vec9 s0 = vfill(0.09);
    diff::GaussianScoreField field(mu, s0, sched);

    struct Perturbed final : diff::ScoreField {
        const diff::ScoreField* base;
        Vec9 delta;
        Vec9 eval(const Vec9& x, double t) const override {
            Vec9 s = base->eval(x, t);
            for (int i = 0; i < 9; ++i) s[i] += delta[i];
            return s;
        }
    };

    Rng rng(2025);
    const int n = 10000;
    std::vector<Vec9> x0s(n), noises(n);
    std::vector<double> ts(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 9; ++j) {
            x0s[i][j] = mu[j] + std::sqrt(s0[j]) * rng.normal();
            noises[i][j] = rng.normal();
        }
        ts[i] = 1e-3 + (1.0 - 1e-3) * rng.uniform();
    }
    auto avg_loss = [&](const diff::ScoreField& f) {
        double acc = 0;
        for (int i = 0; i < n; ++i) acc += diff::dsm_loss(f, x0s[i], ts[i], noises[i], sched);
        return acc / n;
    };
    const double base_loss = avg_loss(field);
    for (int trial = 0; trial < 5; ++trial) {
        Perturbed p;
        p.base = &field;
        double n2 = 0;
        for (int j = 0; j < 9; ++j) {
            p.delta[j] = rng.normal();
            n2 += p.delta[j] * p.delta[j];
        }
        const double scale = 0.1 / std::sqrt(n2 / 9.0);  // RMS 0.1
        for (int j = 0; j < 9; ++j) p.delta[j] *= scale;
        CHECK(base_loss < avg_loss(p));
    }
}

TEST_CASE("sample_batch matches per-chain sampling and honors stream offsets") {
    diff::NoiseSchedule sched;
    const Vec9 mu = vfill(0.1);
    diff::GaussianScoreField field(mu, vfill(0.04), sched);
    diff::SamplerConfig cfg;
    cfg.num_steps = 50;

    diff::RepeatedField rf(field, 6);
    const Rng base(77);
    const auto full = diff::sample_batch(rf, cfg, base, false, 0);

    diff::RepeatedField rf2(field, 3);
    const auto tail = diff::sample_batch(rf2, cfg, base, false, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 9; ++j) CHECK(tail.finals[i][j] == full.finals[3 + i][j]);
}

TEST_CASE("trajectory csv export: row count and columns") {
    diff::NoiseSchedule sched;
    diff::GaussianScoreField field(vfill(0.0), vfill(0.01), sched);
    diff::SamplerConfig cfg;
    cfg.num_steps = 20;
    Rng rng(8);
    const auto traj = diff::sample(field, cfg, rng);
    const std::string path =
        (std::filesystem::temp_directory_path() / "pd_traj_test.csv").string();
    se3::Pose gt;
    gt.rotation.m = se3::Mat3::identity();
    gt.translation = {0, 0, 0};
    diff::export_trajectory_csv(traj, gt, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,x1,x2,x3,x4,x5,x6,x7,x8,x9,rot_err_rad,trans_err_m");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 21);
}
