#include "posediff/eval.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace posediff::eval {

namespace {
constexpr double kPi = 3.14159265358979323846;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace

ErrorPair pose_error(const se3::Pose& pred, const se3::Pose& gt, bool symmetric) {
    ErrorPair e;
    e.rot_err = symmetric ? se3::y_axis_distance(pred.rotation, gt.rotation)
                          : se3::geodesic_distance(pred.rotation, gt.rotation);
    se3::Vec3 d;
    for (int i = 0; i < 3; ++i) d[i] = pred.translation[i] - gt.translation[i];
    e.trans_err = se3::norm(d);
    return e;
}

ErrorPair error_for(const se3::Pose& pred, const data::SceneSample& rec) {
    return pose_error(pred, rec.gt_pose, rec.symmetry == data::Symmetry::y_continuous);
}

double map_at(std::span<const ErrorPair> results, double n_deg, double m_cm) {
    if (results.empty()) throw EmptyInputError("map_at: empty result list");
    const double rot_thr = n_deg * kPi / 180.0;
    const double trans_thr = m_cm / 100.0;
    std::size_t hits = 0;
    for (const auto& e : results)
        if (e.rot_err <= rot_thr && e.trans_err <= trans_thr) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(results.size());
}

se3::Pose aggregate_mean_pool(std::span<const se3::Pose> candidates, const AggregationConfig& cfg,
                              Rng& rng) {
    if (candidates.size() != cfg.k)
        throw ContractError("aggregate_mean_pool: expected " + std::to_string(cfg.k) +
                            " candidates, got " + std::to_string(candidates.size()));
    if (cfg.delta <= 0.0 || cfg.delta > 100.0)
        throw ContractError("aggregate_mean_pool: delta must be in (0, 100]");
    const std::size_t keep = static_cast<std::size_t>(
        std::ceil(static_cast<double>(cfg.k) * cfg.delta / 100.0));

    std::vector<std::size_t> idx(cfg.k);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < keep; ++i)
        std::swap(idx[i], idx[i + rng.uniform_index(cfg.k - i)]);

    se3::Vec3 t{};
    Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < keep; ++i) {
        const auto& p = candidates[idx[i]];
        for (int j = 0; j < 3; ++j) t[j] += p.translation[j];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m(r, c) += p.rotation.m(r, c);
    }
    for (auto& v : t) v /= static_cast<double>(keep);
    m /= static_cast<double>(keep);

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (svd.singularValues()(2) < 1e-6)
        throw AggregationDegenerateError(
            "aggregate_mean_pool: chordal mean is rank deficient (smallest singular value " +
            fmt(svd.singularValues()(2)) + " over " + std::to_string(keep) + " retained of " +
            std::to_string(cfg.k) + " candidates)");
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() > 0 ? 1.0 : -1.0;
    const Eigen::Matrix3d rproj = svd.matrixU() * d * svd.matrixV().transpose();

    se3::Pose out;
    out.translation = t;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out.rotation.m(r, c) = rproj(r, c);
    return out;
}

namespace {

// free angle of the relative rotation about the object's y axis
double yaw_about_y(const se3::Rotation& gt, const se3::Rotation& sample) {
    const se3::Mat3 q = gt.m.transposed() * sample.m;
    return std::atan2(q(0, 2) - q(2, 0), q(0, 0) + q(2, 2));
}

}  // namespace

ModeStats mode_stats(std::span<const se3::Pose> samples, const se3::Pose& gt) {
    if (samples.size() < 2) throw ContractError("mode_stats: needs at least 2 samples");
    ModeStats st;
    st.yaw.reserve(samples.size());
    double cs = 0.0, sn = 0.0, off = 0.0;
    for (const auto& p : samples) {
        const double a = yaw_about_y(gt.rotation, p.rotation);
        st.yaw.push_back(a);
        cs += std::cos(a);
        sn += std::sin(a);
        off += se3::y_axis_distance(p.rotation, gt.rotation);
    }
    const double n = static_cast<double>(samples.size());
    st.resultant_length = std::sqrt(cs * cs + sn * sn) / n;
    st.uniform = st.resultant_length < 0.1;
    st.circular_std = std::sqrt(-2.0 * std::log(std::max(st.resultant_length, 1e-300)));
    st.off_axis_mean = off / n;

    // occupied modes: circular gap clustering with a 60 degree threshold
    std::vector<double> sorted = st.yaw;
    std::sort(sorted.begin(), sorted.end());
    const double gap_thr = kPi / 3.0;
    std::size_t clusters = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double prev = i == 0 ? sorted.back() - 2 * kPi : sorted[i - 1];
        if (sorted[i] - prev > gap_thr) ++clusters;
    }
    st.occupied_modes = std::max<std::size_t>(clusters, 1);
    return st;
}

// ---- Mollweide export ----

namespace {

// intrinsic Y-X-Z angles: R = Ry(yaw) Rx(pitch) Rz(roll)
void yxz_angles(const se3::Mat3& q, double& yaw, double& pitch, double& roll) {
    const double sb = -q(1, 2);
    pitch = std::asin(std::clamp(sb, -1.0, 1.0));
    if (std::abs(sb) < 1.0 - 1e-9) {
        yaw = std::atan2(q(0, 2), q(2, 2));
        roll = std::atan2(q(1, 0), q(1, 1));
    } else {  // gimbal: fold roll into yaw
        yaw = std::atan2(-q(2, 0), q(0, 0));
        roll = 0.0;
    }
}

void mollweide(double lon, double lat, double& x, double& y) {
    double th = lat;
    for (int it = 0; it < 32; ++it) {
        const double f = 2 * th + std::sin(2 * th) - kPi * std::sin(lat);
        const double df = 2 + 2 * std::cos(2 * th);
        if (std::abs(df) < 1e-12) break;
        const double step = f / df;
        th -= step;
        if (std::abs(step) < 1e-13) break;
    }
    constexpr double sqrt2 = 1.4142135623730951;
    x = 2.0 * sqrt2 / kPi * lon * std::cos(th);
    y = sqrt2 * std::sin(th);
}

}  // namespace

void export_rotation_distribution(std::span<const se3::Pose> samples, const se3::Pose& gt,
                                  const std::string& base_path) {
    if (samples.empty()) throw EmptyInputError("export_rotation_distribution: no samples");
    std::ofstream csv(base_path + ".csv", std::ios::trunc);
    if (!csv) throw FormatError(base_path + ".csv: cannot open for writing");
    csv << "yaw_lon,pitch_lat,roll_color\n";

    const double w = 640, h = 340, cx = w / 2, cy = h / 2;
    const double sx = (w / 2 - 20) / (2 * 1.4142135623730951);
    const double sy = (h / 2 - 20) / 1.4142135623730951;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\">\n<ellipse cx=\"" << cx << "\" cy=\"" << cy << "\" rx=\"" << 2 * 1.4142135623730951 * sx
        << "\" ry=\"" << 1.4142135623730951 * sy
        << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";

    for (const auto& p : samples) {
        const se3::Mat3 rel = gt.rotation.m.transposed() * p.rotation.m;
        double yaw, pitch, roll;
        yxz_angles(rel, yaw, pitch, roll);
        csv << fmt(yaw) << ',' << fmt(pitch) << ',' << fmt(roll) << '\n';
        double px, py;
        mollweide(yaw, pitch, px, py);
        const int hue = static_cast<int>((roll + kPi) / (2 * kPi) * 360.0) % 360;
        svg << "<circle cx=\"" << cx + px * sx << "\" cy=\"" << cy - py * sy
            << "\" r=\"3\" fill=\"hsl(" << hue << ",70%,50%)\" fill-opacity=\"0.8\"/>\n";
    }
    // ground truth at the center-referenced location (identity -> origin)
    svg << "<path d=\"M " << cx - 6 << " " << cy << " H " << cx + 6 << " M " << cx << " "
        << cy - 6 << " V " << cy + 6 << "\" stroke=\"black\" stroke-width=\"2\"/>\n</svg>\n";
    std::ofstream svgf(base_path + ".svg", std::ios::trunc);
    if (!svgf) throw FormatError(base_path + ".svg: cannot open for writing");
    svgf << svg.str();
}

// ---- trajectory statistics ----

TrajStats trajectory_stats(const std::vector<diff::Trajectory>& trajs, const se3::Pose& gt) {
    if (trajs.empty()) throw EmptyInputError("trajectory_stats: no trajectories");
    const std::size_t T = trajs[0].states.size();
    for (const auto& tr : trajs)
        if (tr.states.size() != T)
            throw ContractError("trajectory_stats: trajectories do not share a time grid");
    for (std::size_t k = 0; k < T; ++k)
        for (const auto& tr : trajs)
            if (std::abs(tr.states[k].first - trajs[0].states[k].first) > 1e-12)
                throw ContractError("trajectory_stats: trajectories do not share a time grid");

    TrajStats st;
    st.t.resize(T);
    st.rot_mean.resize(T);
    st.rot_std.resize(T);
    st.trans_mean.resize(T);
    st.trans_std.resize(T);
    std::vector<double> rots(trajs.size()), trans(trajs.size());
    for (std::size_t k = 0; k < T; ++k) {
        st.t[k] = trajs[0].states[k].first;
        for (std::size_t j = 0; j < trajs.size(); ++j) {
            const auto& x = trajs[j].states[k].second;
            double rot = kPi;
            try {
                const se3::Pose p = se3::pose_unpack(x);
                rot = se3::geodesic_distance(p.rotation, gt.rotation);
            } catch (const DegenerateInputError&) {
            }
            const se3::Vec3 d = {x[6] - gt.translation[0], x[7] - gt.translation[1],
                                 x[8] - gt.translation[2]};
            rots[j] = rot;
            trans[j] = se3::norm(d);
        }
        const double n = static_cast<double>(trajs.size());
        double rm = 0, tm = 0;
        for (std::size_t j = 0; j < trajs.size(); ++j) {
            rm += rots[j];
            tm += trans[j];
        }
        rm /= n;
        tm /= n;
        double rv = 0, tv = 0;
        for (std::size_t j = 0; j < trajs.size(); ++j) {
            rv += (rots[j] - rm) * (rots[j] - rm);
            tv += (trans[j] - tm) * (trans[j] - tm);
        }
        st.rot_mean[k] = rm;
        st.rot_std[k] = std::sqrt(rv / n);
        st.trans_mean[k] = tm;
        st.trans_std[k] = std::sqrt(tv / n);
    }
    return st;
}

namespace {

void polyline(std::ostringstream& svg, const std::vector<double>& xs, const std::vector<double>& ys,
              const std::string& color, double width) {
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width
        << "\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) svg << xs[i] << ',' << ys[i] << ' ';
    svg << "\"/>\n";
}

}  // namespace

void export_trajectory_errors(
    const std::vector<std::pair<std::string, const std::vector<diff::Trajectory>*>>& runs,
    const se3::Pose& gt, const std::string& base_path) {
    if (runs.empty()) throw EmptyInputError("export_trajectory_errors: no runs");
    std::vector<TrajStats> stats;
    for (const auto& [label, trajs] : runs) {
        TrajStats st = trajectory_stats(*trajs, gt);
        std::ofstream csv(base_path + "_" + label + ".csv", std::ios::trunc);
        if (!csv) throw FormatError(base_path + "_" + label + ".csv: cannot open for writing");
        csv << "t,rot_mean,rot_std,trans_mean,trans_std\n";
        for (std::size_t k = 0; k < st.t.size(); ++k)
            csv << fmt(st.t[k]) << ',' << fmt(st.rot_mean[k]) << ',' << fmt(st.rot_std[k]) << ','
                << fmt(st.trans_mean[k]) << ',' << fmt(st.trans_std[k]) << '\n';
        stats.push_back(std::move(st));
    }

    // one band plot: rotation error vs t (t decreasing to the right)
    const double w = 640, h = 360, ml = 50, mr = 10, mt = 10, mb = 30;
    double ymax = 1e-9;
    for (const auto& st : stats)
        for (std::size_t k = 0; k < st.t.size(); ++k)
            ymax = std::max(ymax, st.rot_mean[k] + st.rot_std[k]);
    const char* colors[] = {"#2a9d2a", "#3366cc", "#cc3333", "#aa7700"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\">\n";
    for (std::size_t r = 0; r < stats.size(); ++r) {
        const auto& st = stats[r];
        const std::size_t T = st.t.size();
        auto X = [&](std::size_t k) {
            return ml + (w - ml - mr) * (st.t[0] - st.t[k]) / (st.t[0] - st.t[T - 1]);
        };
        auto Y = [&](double v) { return h - mb - (h - mt - mb) * (v / ymax); };
        // std band
        svg << "<path fill=\"" << colors[r % 4] << "\" fill-opacity=\"0.18\" stroke=\"none\" d=\"M";
        for (std::size_t k = 0; k < T; ++k)
            svg << ' ' << X(k) << ' ' << Y(st.rot_mean[k] + st.rot_std[k]);
        for (std::size_t k = T; k-- > 0;)
            svg << ' ' << X(k) << ' ' << Y(std::max(0.0, st.rot_mean[k] - st.rot_std[k]));
        svg << " Z\"/>\n";
        std::vector<double> xs(T), ys(T);
        for (std::size_t k = 0; k < T; ++k) {
            xs[k] = X(k);
            ys[k] = Y(st.rot_mean[k]);
        }
        polyline(svg, xs, ys, colors[r % 4], 1.6);
        svg << "<text x=\"" << ml + 8 << "\" y=\"" << mt + 16 + 16 * r << "\" fill=\""
            << colors[r % 4] << "\" font-size=\"13\">" << runs[r].first << "</text>\n";
    }
    svg << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
        << h - mb << "\" stroke=\"#333\"/>\n<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\""
        << ml << "\" y2=\"" << h - mb << "\" stroke=\"#333\"/>\n";
    svg << "<text x=\"" << w / 2 << "\" y=\"" << h - 8
        << "\" font-size=\"12\" text-anchor=\"middle\">t (T to 0)</text>\n";
    svg << "<text x=\"14\" y=\"" << h / 2
        << "\" font-size=\"12\" transform=\"rotate(-90 14 " << h / 2
        << ")\" text-anchor=\"middle\">rotation error (rad)</text>\n</svg>\n";
    std::ofstream svgf(base_path + ".svg", std::ios::trunc);
    if (!svgf) throw FormatError(base_path + ".svg: cannot open for writing");
    svgf << svg.str();
}

// ---- batched sampling ----

namespace {

std::vector<double> encode_records(const models::FrozenModel& model,
                                   std::span<const data::SceneSample> records) {
    const std::size_t n = records.size();
    std::vector<double> feats(n * models::kFeatureDim);
    const int workers = std::min<int>(worker_count(), static_cast<int>(n) == 0 ? 1 : static_cast<int>(n));
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    auto run = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            model.encode(records[i].points.data(), feats.data() + i * models::kFeatureDim);
        }
    };
    if (workers <= 1) {
        run();
    } else {
        for (int t = 0; t < workers; ++t) pool.emplace_back(run);
        for (auto& th : pool) th.join();
    }
    return feats;
}

}  // namespace

SampledPoses sample_poses_full(const models::FrozenModel& model,
                               std::span<const data::SceneSample> records, std::size_t candidates,
                               const diff::SamplerConfig& cfg, std::uint64_t seed) {
    const std::size_t n = records.size();
    const std::size_t total = n * candidates;
    SampledPoses out;
    out.poses.resize(total);
    out.degenerate.assign(total, false);
    if (total == 0) return out;

    const std::vector<double> feats = encode_records(model, records);
    const Rng base(seed);

    const std::size_t max_rows = 2048;
    const std::size_t items_per_chunk = std::max<std::size_t>(1, max_rows / candidates);
    for (std::size_t lo = 0; lo < n; lo += items_per_chunk) {
        const std::size_t hi = std::min(n, lo + items_per_chunk);
        const std::size_t rows = (hi - lo) * candidates;
        std::vector<double> rep(rows * models::kFeatureDim);
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t c = 0; c < candidates; ++c)
                std::copy(feats.begin() + i * models::kFeatureDim,
                          feats.begin() + (i + 1) * models::kFeatureDim,
                          rep.begin() + ((i - lo) * candidates + c) * models::kFeatureDim);
        models::LearnedBatchField field(model, std::move(rep), rows);
        const auto res = diff::sample_batch(field, cfg, base, /*record_trajectories=*/false,
                                            /*stream_offset=*/lo * candidates);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t g = lo * candidates + r;
            if (res.degenerate[r]) {
                out.degenerate[g] = true;
                out.poses[g].rotation.m = se3::Mat3::identity();
                out.poses[g].translation = {0, 0, 0};
            } else {
                out.poses[g] = se3::pose_unpack(res.finals[r]);
            }
        }
    }
    return out;
}

std::vector<se3::Pose> sample_poses(const models::FrozenModel& model,
                                    std::span<const data::SceneSample> records,
                                    std::size_t candidates, const diff::SamplerConfig& cfg,
                                    std::uint64_t seed) {
    return sample_poses_full(model, records, candidates, cfg, seed).poses;
}

std::vector<diff::Trajectory> sample_trajectories(const models::FrozenModel& model,
                                                  const data::SceneSample& record,
                                                  std::size_t chains,
                                                  const diff::SamplerConfig& cfg,
                                                  std::uint64_t seed) {
    std::vector<double> feat(models::kFeatureDim);
    model.encode(record.points.data(), feat.data());
    std::vector<double> rep(chains * models::kFeatureDim);
    for (std::size_t c = 0; c < chains; ++c)
        std::copy(feat.begin(), feat.end(), rep.begin() + c * models::kFeatureDim);
    models::LearnedBatchField field(model, std::move(rep), chains);
    auto res = diff::sample_batch(field, cfg, Rng(seed), /*record_trajectories=*/true);
    return std::move(res.trajectories);
}

// ---- tables ----

namespace {

EvalRow row_from_errors(const std::string& label, std::vector<ErrorPair>& errs) {
    EvalRow row;
    row.label = label;
    row.map_5_2 = map_at(errs, 5.0, 2.0);
    row.map_10_2 = map_at(errs, 10.0, 2.0);
    row.map_10_5 = map_at(errs, 10.0, 5.0);
    return row;
}

constexpr double kInf = 1e30;

}  // namespace

std::vector<EvalRow> evaluate_all(const models::FrozenModel& model,
                                  std::span<const data::SceneSample> records,
                                  const EvalOptions& opt) {
    std::vector<EvalRow> rows;
    const std::size_t n = records.size();

    diff::SamplerConfig guided = opt.sampler;
    diff::SamplerConfig unguided = opt.sampler;
    unguided.guidance.kind = diff::GuidanceKind::none;

    {
        const auto sp = sample_poses_full(model, records, 1, guided, opt.seed);
        std::vector<ErrorPair> errs(n);
        for (std::size_t i = 0; i < n; ++i)
            errs[i] = sp.degenerate[i] ? ErrorPair{kPi, kInf} : error_for(sp.poses[i], records[i]);
        rows.push_back(row_from_errors(
            "guided k=1 (" + diff::guidance_kind_name(guided.guidance.kind) + ")", errs));
    }
    {
        const auto sp = sample_poses_full(model, records, 1, unguided, opt.seed + 1);
        std::vector<ErrorPair> errs(n);
        for (std::size_t i = 0; i < n; ++i)
            errs[i] = sp.degenerate[i] ? ErrorPair{kPi, kInf} : error_for(sp.poses[i], records[i]);
        rows.push_back(row_from_errors("unguided k=1", errs));
    }
    {
        const auto sp = sample_poses_full(model, records, opt.k, unguided, opt.seed + 2);
        AggregationConfig agg{opt.k, opt.delta};
        Rng rng(opt.seed + 3);
        std::vector<ErrorPair> errs(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<se3::Pose> cands(sp.poses.begin() + i * opt.k,
                                         sp.poses.begin() + (i + 1) * opt.k);
            try {
                const se3::Pose p = aggregate_mean_pool(cands, agg, rng);
                errs[i] = error_for(p, records[i]);
            } catch (const AggregationDegenerateError&) {
                errs[i] = {kPi, kInf};
            }
        }
        char label[80];
        std::snprintf(label, sizeof label, "mean-pool k=%zu delta=%g (unguided)", opt.k, opt.delta);
        rows.push_back(row_from_errors(label, errs));
    }
    return rows;
}

std::vector<EvalRow> compare_schedules(const models::FrozenModel& model,
                                       std::span<const data::SceneSample> records,
                                       const diff::SamplerConfig& base, double w_min, double w_max,
                                       std::uint64_t seed) {
    std::vector<EvalRow> rows;
    const diff::GuidanceKind kinds[] = {diff::GuidanceKind::none, diff::GuidanceKind::constant,
                                        diff::GuidanceKind::linear, diff::GuidanceKind::exponential};
    for (const auto kind : kinds) {
        diff::SamplerConfig cfg = base;
        cfg.guidance.kind = kind;
        cfg.guidance.w_min = w_min;
        cfg.guidance.w_max = w_max;
        const auto sp = sample_poses_full(model, records, 1, cfg, seed);
        std::vector<ErrorPair> errs(records.size());
        for (std::size_t i = 0; i < records.size(); ++i)
            errs[i] = sp.degenerate[i] ? ErrorPair{kPi, kInf} : error_for(sp.poses[i], records[i]);
        rows.push_back(row_from_errors(diff::guidance_kind_name(kind), errs));
    }
    return rows;
}

std::string format_table(std::span<const EvalRow> rows) {
    std::size_t width = 12;
    for (const auto& r : rows) width = std::max(width, r.label.size());
    std::ostringstream os;
    os << std::string(width, ' ') << "   5d2cm  10d2cm  10d5cm\n";
    char buf[64];
    for (const auto& r : rows) {
        os << r.label << std::string(width - r.label.size(), ' ');
        std::snprintf(buf, sizeof buf, "  %6.1f  %6.1f  %6.1f\n", r.map_5_2, r.map_10_2, r.map_10_5);
        os << buf;
    }
    return os.str();
}

void write_rows_csv(std::span<const EvalRow> rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out << "label,map_5_2,map_10_2,map_10_5\n";
    for (const auto& r : rows)
        out << r.label << ',' << fmt(r.map_5_2) << ',' << fmt(r.map_10_2) << ',' << fmt(r.map_10_5)
            << '\n';
}

}  // namespace posediff::eval
