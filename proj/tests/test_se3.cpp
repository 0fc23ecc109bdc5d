#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "posediff/rng.hpp"
#include "posediff/se3.hpp"

using namespace posediff;
namespace se3 = posediff::se3;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TEST_CASE("rot_to_6d: identity and 90 degrees about z") {
    const auto id6 = se3::rot_to_6d(se3::Rotation{se3::Mat3::identity()});
    const se3::Rot6D want_id = {1, 0, 0, 0, 1, 0};
    for (int i = 0; i < 6; ++i) CHECK(id6[i] == doctest::Approx(want_id[i]));

    const auto r = se3::rot_to_6d(se3::rot_z(kPi / 2));
    const se3::Rot6D want = {0, 1, 0, -1, 0, 0};
    for (int i = 0; i < 6; ++i) CHECK(r[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("gs_orthonormalize: hand case and degenerate input") {
    const se3::Rotation r = se3::gs_orthonormalize({2, 0, 0, 1, 1, 0});
    const auto id = se3::Mat3::identity();
    for (int i = 0; i < 9; ++i) CHECK(r.m.m[i] == doctest::Approx(id.m[i]).epsilon(1e-12));

    CHECK_THROWS_AS(se3::gs_orthonormalize({1, 1, 0, 2, 2, 0}), DegenerateInputError);
    CHECK_THROWS_AS(se3::gs_orthonormalize({0, 0, 0, 1, 0, 0}), DegenerateInputError);
}

TEST_CASE("round trip gs(rot_to_6d(R)) = R over 1000 Haar rotations") {
    Rng rng(42);
    double max_dev = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const se3::Rotation r = se3::sample_uniform_rotation(rng);
        const se3::Rotation back = se3::gs_orthonormalize(se3::rot_to_6d(r));
        for (int j = 0; j < 9; ++j) max_dev = std::max(max_dev, std::abs(back.m.m[j] - r.m.m[j]));
        CHECK(r.is_valid(1e-9));
    }
    CHECK(max_dev < 1e-9);
}

TEST_CASE("gs output is orthonormal det +1 for random non-degenerate 6-vectors") {
    Rng rng(43);
    for (int i = 0; i < 500; ++i) {
        se3::Rot6D v;
        for (auto& c : v) c = rng.normal();
        se3::Rotation r;
        try {
            r = se3::gs_orthonormalize(v);
        } catch (const DegenerateInputError&) {
            continue;  // generic inputs never hit this
        }
        CHECK(r.is_valid(1e-9));
    }
}

TEST_CASE("geodesic distance: zero, half turn, sweep") {
    const se3::Rotation id{se3::Mat3::identity()};
    Rng rng(5);
    const se3::Rotation r = se3::sample_uniform_rotation(rng);
    CHECK(se3::geodesic_distance(r, r) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(se3::geodesic_distance(se3::rot_z(kPi), id) == doctest::Approx(kPi));

    for (int i = 0; i <= 100; ++i) {
        const double theta = -kPi + 1e-9 + (2 * kPi - 2e-9) * i / 100.0;
        CHECK(se3::geodesic_distance(se3::rot_z(theta), id) ==
              doctest::Approx(std::abs(theta)).epsilon(1e-9));
    }
}

TEST_CASE("geodesic distance: symmetric and bounded by pi") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const auto a = se3::sample_uniform_rotation(rng);
        const auto b = se3::sample_uniform_rotation(rng);
        const double d1 = se3::geodesic_distance(a, b);
        const double d2 = se3::geodesic_distance(b, a);
        CHECK(d1 == doctest::Approx(d2).epsilon(1e-12));
        CHECK(d1 >= 0.0);
        CHECK(d1 <= kPi);
    }
}

TEST_CASE("y_axis_distance: symmetry invariance and quarter turn") {
    Rng rng(9);
    for (int i = 0; i < 100; ++i) {
        const auto r = se3::sample_uniform_rotation(rng);
        const double phi = rng.uniform(-kPi, kPi);
        se3::Rotation ry;
        ry.m = r.m * se3::rot_y(phi).m;
        CHECK(se3::y_axis_distance(ry, r) <= 1e-12);
    }
    const se3::Rotation id{se3::Mat3::identity()};
    CHECK(se3::y_axis_distance(se3::rot_x(kPi / 2), id) == doctest::Approx(kPi / 2));
}

TEST_CASE("y_axis_distance equals min geodesic over the free yaw (property sweep)") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = se3::sample_uniform_rotation(rng);
        const auto b = se3::sample_uniform_rotation(rng);
        const double yd = se3::y_axis_distance(a, b);
        double best = 1e9;
        const int steps = 2000;
        for (int i = 0; i < steps; ++i) {
            const double phi = -kPi + 2 * kPi * i / steps;
            se3::Rotation cand;
            cand.m = a.m * se3::rot_y(phi).m;
            best = std::min(best, se3::geodesic_distance(cand, b));
        }
        CHECK(yd == doctest::Approx(best).epsilon(5e-3));
    }
}

TEST_CASE("sample_uniform_rotation: validity, Haar mean distance, column means") {
    Rng rng(2024);
    const int n = 100000;
    double mean_dist = 0.0;
    double col_means[9] = {0};
    se3::Rotation prev = se3::sample_uniform_rotation(rng);
    CHECK(prev.is_valid(1e-9));
    for (int i = 0; i < n; ++i) {
        const auto r = se3::sample_uniform_rotation(rng);
        if (i < 100) CHECK(r.is_valid(1e-9));
        mean_dist += se3::geodesic_distance(prev, r);
        for (int j = 0; j < 9; ++j) col_means[j] += r.m.m[j];
        prev = r;
    }
    mean_dist /= n;
    // the quadrature oracle agrees with the closed form pi/2 + 2/pi
    const double oracle = oracles::haar_mean_angle_quadrature();
    CHECK(oracle == doctest::Approx(kPi / 2 + 2 / kPi).epsilon(1e-10));
    CHECK(mean_dist == doctest::Approx(oracle).epsilon(0.01 / oracle));
    for (int j = 0; j < 9; ++j) CHECK(std::abs(col_means[j] / n) < 0.01);
}

TEST_CASE("pose pack/unpack round trip") {
    Rng rng(77);
    for (int i = 0; i < 100; ++i) {
        se3::Pose p;
        p.rotation = se3::sample_uniform_rotation(rng);
        p.translation = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
        const se3::Pose q = se3::pose_unpack(se3::pose_pack(p));
        for (int j = 0; j < 9; ++j)
            CHECK(q.rotation.m.m[j] == doctest::Approx(p.rotation.m.m[j]).epsilon(1e-12));
        for (int j = 0; j < 3; ++j) CHECK(q.translation[j] == p.translation[j]);
    }

    const se3::Pose u = se3::pose_unpack({2, 0, 0, 1, 1, 0, 0.1, 0.2, 0.3});
    const auto id = se3::Mat3::identity();
    for (int j = 0; j < 9; ++j) CHECK(u.rotation.m.m[j] == doctest::Approx(id.m[j]));
    CHECK(u.translation[0] == 0.1);
    CHECK(u.translation[1] == 0.2);
    CHECK(u.translation[2] == 0.3);

    se3::Pose idp;
    idp.rotation.m = se3::Mat3::identity();
    idp.translation = {0, 0, 0};
    const auto packed = se3::pose_pack(idp);
    const se3::PoseVec9 want = {1, 0, 0, 0, 1, 0, 0, 0, 0};
    for (int j = 0; j < 9; ++j) CHECK(packed[j] == want[j]);
}
