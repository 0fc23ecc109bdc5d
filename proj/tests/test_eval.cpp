#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "oracles.hpp"
#include "posediff/eval.hpp"

using namespace posediff;
namespace eval = posediff::eval;

namespace {
constexpr double kPi = 3.14159265358979323846;

se3::Pose make_pose(const se3::Rotation& r, se3::Vec3 t) {
    se3::Pose p;
    p.rotation = r;
    p.translation = t;
    return p;
}
}  // namespace

TEST_CASE("pose_error: identity, symmetry, five degrees") {
    Rng rng(1);
    const auto gt = make_pose(se3::sample_uniform_rotation(rng), {0.1, 0.2, -0.1});
    const auto e0 = eval::pose_error(gt, gt, false);
    CHECK(e0.rot_err == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(e0.trans_err == 0.0);

    auto spun = gt;
    spun.rotation.m = gt.rotation.m * se3::rot_y(1.0).m;
    CHECK(eval::pose_error(spun, gt, true).rot_err <= 1e-12);

    auto five = gt;
    five.rotation.m = gt.rotation.m * se3::rot_z(5.0 * kPi / 180.0).m;
    CHECK(eval::pose_error(five, gt, false).rot_err == doctest::Approx(0.08727).epsilon(1e-4));
}

TEST_CASE("map_at: perfect, boundary inclusive, mixed, monotone, empty") {
    std::vector<eval::ErrorPair> perfect(10, {0.0, 0.0});
    CHECK(eval::map_at(perfect, 5, 2) == 100.0);

    std::vector<eval::ErrorPair> boundary{{5.0 * kPi / 180.0, 0.02}};
    CHECK(eval::map_at(boundary, 5, 2) == 100.0);  // <= counts as success

    std::vector<eval::ErrorPair> mixed{{4.0 * kPi / 180.0, 0.01}, {6.0 * kPi / 180.0, 0.01}};
    CHECK(eval::map_at(mixed, 5, 2) == 50.0);

    // monotone in both thresholds
    Rng rng(3);
    std::vector<eval::ErrorPair> random(200);
    for (auto& e : random) e = {rng.uniform(0, kPi), rng.uniform(0, 0.1)};
    double prev = -1.0;
    for (const double deg : {1.0, 2.0, 5.0, 10.0, 30.0, 180.0}) {
        const double v = eval::map_at(random, deg, 2.0);
        CHECK(v >= prev);
        prev = v;
    }
    prev = -1.0;
    for (const double cm : {0.5, 1.0, 2.0, 5.0, 10.0}) {
        const double v = eval::map_at(random, 10.0, cm);
        CHECK(v >= prev);
        prev = v;
    }

    CHECK_THROWS_AS(eval::map_at({}, 5, 2), EmptyInputError);
}

TEST_CASE("aggregate_mean_pool: identity on equal candidates for any delta and seed") {
    Rng rng(5);
    const auto pose = make_pose(se3::sample_uniform_rotation(rng), {0.05, -0.1, 0.2});
    for (const double delta : {10.0, 60.0, 100.0}) {
        for (const std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
            std::vector<se3::Pose> cands(20, pose);
            Rng r(seed);
            const auto out = eval::aggregate_mean_pool(cands, {20, delta}, r);
            for (int i = 0; i < 9; ++i)
                CHECK(out.rotation.m.m[i] == doctest::Approx(pose.rotation.m.m[i]).epsilon(1e-12));
            for (int i = 0; i < 3; ++i)
                CHECK(out.translation[i] == doctest::Approx(pose.translation[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("aggregate_mean_pool: symmetric pair averages to the bisector") {
    const double theta = 10.0 * kPi / 180.0;
    std::vector<se3::Pose> cands{make_pose(se3::rot_z(theta), {0.1, 0, 0}),
                                 make_pose(se3::rot_z(-theta), {0.1, 0, 0})};
    Rng rng(7);
    const auto out = eval::aggregate_mean_pool(cands, {2, 100.0}, rng);
    const auto id = se3::Mat3::identity();
    for (int i = 0; i < 9; ++i) CHECK(out.rotation.m.m[i] == doctest::Approx(id.m[i]).epsilon(1e-12));
    CHECK(out.rotation.is_valid(1e-12));
}

TEST_CASE("aggregate_mean_pool: antipodal spread is degenerate, size mismatch rejected") {
    // two half-turns about orthogonal axes plus identity: mean matrix is
    // diag-dominant negative-trace and rank deficient
    std::vector<se3::Pose> cands{make_pose(se3::rot_x(kPi), {0, 0, 0}),
                                 make_pose(se3::rot_y(kPi), {0, 0, 0})};
    Rng rng(9);
    CHECK_THROWS_AS(eval::aggregate_mean_pool(cands, {2, 100.0}, rng),
                    AggregationDegenerateError);

    std::vector<se3::Pose> three(3, make_pose(se3::rot_x(0.1), {0, 0, 0}));
    CHECK_THROWS_AS(eval::aggregate_mean_pool(three, {5, 60.0}, rng), ContractError);
}

TEST_CASE("mode_stats: uniform ring, collapsed set, off-axis residual") {
    Rng rng(11);
    const auto gt = make_pose(se3::sample_uniform_rotation(rng), {0, 0, 0});

    // uniform ring about the y axis
    std::vector<se3::Pose> ring;
    const int n = 64;
    for (int i = 0; i < n; ++i) {
        se3::Pose p = gt;
        p.rotation.m = gt.rotation.m * se3::rot_y(-kPi + 2 * kPi * i / n).m;
        ring.push_back(p);
    }
    const auto st = eval::mode_stats(ring, gt);
    CHECK(st.uniform);
    CHECK(st.resultant_length < 0.1);
    CHECK(st.off_axis_mean <= 1e-9);
    // oracle agreement on the yaw sample
    const auto oc = oracles::circular_stats(st.yaw);
    CHECK(st.resultant_length == doctest::Approx(oc.resultant).epsilon(1e-12));
    CHECK(st.circular_std == doctest::Approx(oc.std_dev).epsilon(1e-12));

    // all samples equal: zero circular std
    std::vector<se3::Pose> same(8, gt);
    const auto st2 = eval::mode_stats(same, gt);
    CHECK(st2.circular_std == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(!st2.uniform);
    CHECK(st2.occupied_modes == 1);

    CHECK_THROWS_AS(eval::mode_stats(std::vector<se3::Pose>{gt}, gt), ContractError);
}

TEST_CASE("mode_stats: invariant under a global y rotation, counts two modes") {
    Rng rng(13);
    const auto base = make_pose(se3::sample_uniform_rotation(rng), {0, 0, 0});
    std::vector<se3::Pose> two;
    for (int i = 0; i < 10; ++i) {
        se3::Pose p = base;
        p.rotation.m = base.rotation.m * se3::rot_y(i < 5 ? 0.02 * i : kPi + 0.02 * i).m;
        two.push_back(p);
    }
    const auto st = eval::mode_stats(two, base);
    CHECK(st.occupied_modes == 2);

    // rotate everything (gt and samples) by the same Ry
    const double phi = 0.83;
    auto gt2 = base;
    gt2.rotation.m = base.rotation.m * se3::rot_y(phi).m;
    std::vector<se3::Pose> moved;
    for (const auto& p : two) {
        se3::Pose q = p;
        q.rotation.m = p.rotation.m * se3::rot_y(phi).m;
        moved.push_back(q);
    }
    // note: applying the free rotation on the object side commutes with the
    // yaw extraction, so the dispersion statistics are unchanged
    const auto st2 = eval::mode_stats(moved, gt2);
    CHECK(st2.circular_std == doctest::Approx(st.circular_std).epsilon(1e-9));
    CHECK(st2.resultant_length == doctest::Approx(st.resultant_length).epsilon(1e-9));
}

TEST_CASE("export_rotation_distribution: csv rows, identity at center, ring locus") {
    const auto dir = std::filesystem::temp_directory_path();
    Rng rng(15);
    const auto gt = make_pose(se3::sample_uniform_rotation(rng), {0, 0, 0});

    // identity-only samples project to the origin
    std::vector<se3::Pose> only{gt, gt, gt};
    const std::string base1 = (dir / "pd_dist_id").string();
    eval::export_rotation_distribution(only, gt, base1);
    std::ifstream csv(base1 + ".csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "yaw_lon,pitch_lat,roll_color");
    int rows = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        ++rows;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        CHECK(std::abs(std::stod(line.substr(0, c1))) < 1e-9);
        CHECK(std::abs(std::stod(line.substr(c1 + 1, c2 - c1 - 1))) < 1e-9);
    }
    CHECK(rows == 3);

    // a y ring maps to a horizontal locus: pitch column is zero
    std::vector<se3::Pose> ring;
    for (int i = 0; i < 12; ++i) {
        se3::Pose p = gt;
        p.rotation.m = gt.rotation.m * se3::rot_y(-2.8 + 0.5 * i).m;
        ring.push_back(p);
    }
    const std::string base2 = (dir / "pd_dist_ring").string();
    eval::export_rotation_distribution(ring, gt, base2);
    std::ifstream csv2(base2 + ".csv");
    std::getline(csv2, line);
    while (std::getline(csv2, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        const double pitch = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        CHECK(std::abs(pitch) < 1e-9);
    }
    CHECK(std::filesystem::exists(base2 + ".svg"));
}

TEST_CASE("trajectory_stats: single trajectory has zero std, grids must match") {
    diff::Trajectory t1;
    se3::Pose gt = make_pose(se3::Rotation{se3::Mat3::identity()}, {0, 0, 0});
    for (int k = 0; k < 5; ++k) {
        diff::Vec9 x = {1, 0, 0, 0, 1, 0, 0.1 * k, 0, 0};
        t1.states.emplace_back(1.0 - 0.2 * k, x);
    }
    const auto st = eval::trajectory_stats({t1}, gt);
    CHECK(st.t.size() == 5);
    for (double v : st.rot_std) CHECK(v == 0.0);
    for (double v : st.trans_std) CHECK(v == 0.0);

    diff::Trajectory t2 = t1;
    t2.states.pop_back();
    CHECK_THROWS_AS(eval::trajectory_stats({t1, t2}, gt), ContractError);

    const std::string base = (std::filesystem::temp_directory_path() / "pd_trajstats").string();
    std::vector<diff::Trajectory> one{t1};
    eval::export_trajectory_errors({{"guided", &one}}, gt, base);
    std::ifstream csv(base + "_guided.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "t,rot_mean,rot_std,trans_mean,trans_std");
    int rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 5);
    CHECK(std::filesystem::exists(base + ".svg"));
}

TEST_CASE("deterministic exports: identical bytes on rerun") {
    const auto dir = std::filesystem::temp_directory_path();
    Rng rng(17);
    const auto gt = make_pose(se3::sample_uniform_rotation(rng), {0, 0, 0});
    std::vector<se3::Pose> samples;
    for (int i = 0; i < 9; ++i)
        samples.push_back(make_pose(se3::sample_uniform_rotation(rng), {0, 0, 0}));
    const std::string b1 = (dir / "pd_det1").string(), b2 = (dir / "pd_det2").string();
    eval::export_rotation_distribution(samples, gt, b1);
    eval::export_rotation_distribution(samples, gt, b2);
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    CHECK(slurp(b1 + ".csv") == slurp(b2 + ".csv"));
    CHECK(slurp(b1 + ".svg") == slurp(b2 + ".svg"));
}
