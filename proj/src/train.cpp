#include "posediff/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "posediff/eval.hpp"

namespace posediff::train {

Mode parse_mode(const std::string& name) {
    if (name == "pretrain") return Mode::pretrain;
    if (name == "joint") return Mode::joint;
    if (name == "scratch") return Mode::scratch;
    throw ContractError("unknown training mode '" + name + "'");
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;  // shared file with generator keys
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "batch") cfg.batch = std::stoull(val);
        else if (key == "epochs") cfg.epochs = std::stoull(val);
        else if (key == "base_lr") cfg.base_lr = std::stod(val);
        else if (key == "warmup_steps") cfg.warmup_steps = std::stoull(val);
        else if (key == "decay_rate") cfg.decay_rate = std::stod(val);
        else if (key == "decay_every") cfg.decay_every = std::stoull(val);
        else if (key == "mode") cfg.mode = parse_mode(val);
        else if (key == "symmetric_loss") cfg.symmetric_loss = (val == "on" || val == "1" || val == "true");
        else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoull(val);
        else if (key == "train_seed") cfg.seed = std::stoull(val);
        else if (key == "t_end") cfg.t_end = std::stod(val);
        else if (key == "sigma_min") cfg.sched.sigma_min = std::stod(val);
        else if (key == "sigma_max") cfg.sched.sigma_max = std::stod(val);
        else if (key == "val_steps") cfg.val_steps = std::stoull(val);
        else if (key == "val_every") cfg.val_every = std::stoull(val);
        else if (key == "val_wmin") cfg.val_guidance.w_min = std::stod(val);
        else if (key == "val_wmax") cfg.val_guidance.w_max = std::stod(val);
        else if (key == "allow_uninitialized_joint")
            cfg.allow_uninitialized_joint = (val == "on" || val == "1" || val == "true");
        else if (key == "out_dir") cfg.out_dir = val;
    }
    if (cfg.batch < 1) throw ContractError("train config: batch must be >= 1");
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path + ": cannot open");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_train_config(text);
}

void TrainLog::write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out << "epoch,loss_reg,loss_dsm,map_5_2,map_10_2,map_10_5,seconds\n";
    char buf[32];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (const auto& e : epochs) {
        out << e.epoch << ',';
        emit(e.loss_reg); out << ',';
        emit(e.loss_dsm); out << ',';
        emit(e.map_5_2); out << ',';
        emit(e.map_10_2); out << ',';
        emit(e.map_10_5); out << ',';
        emit(e.seconds); out << '\n';
    }
}

std::string TrainLog::deterministic_csv() const {
    std::ostringstream out;
    out << "epoch,loss_reg,loss_dsm,map_5_2,map_10_2,map_10_5\n";
    char buf[32];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (const auto& e : epochs) {
        out << e.epoch << ',';
        emit(e.loss_reg); out << ',';
        emit(e.loss_dsm); out << ',';
        emit(e.map_5_2); out << ',';
        emit(e.map_10_2); out << ',';
        emit(e.map_10_5); out << '\n';
    }
    return out.str();
}

double loss_regression(const se3::Pose& pred, const se3::Pose& gt, bool symmetric) {
    const double lr = symmetric ? se3::y_axis_distance(pred.rotation, gt.rotation)
                                : se3::geodesic_distance(pred.rotation, gt.rotation);
    double lt = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double d = pred.translation[i] - gt.translation[i];
        lt += d * d;
    }
    return lr + lt;
}

BatchLosses build_batch_losses(const ad::ParamStore& ps, const data::DatasetFile& ds,
                               const std::vector<std::size_t>& batch_idx, const TrainConfig& cfg,
                               Rng& rng, bool with_reg, bool with_dsm) {
    const std::size_t B = batch_idx.size();
    const std::size_t P = models::kPointsPerCloud;

    std::vector<double> pts(B * P * 3);
    std::vector<double> gt_cols(B * 9), gt_y(B * 3), gt_t(B * 3), mask(B), inv_mask(B);
    std::vector<double> x0(B * 9);
    for (std::size_t i = 0; i < B; ++i) {
        const auto& rec = ds.records[batch_idx[i]];
        std::copy(rec.points.begin(), rec.points.end(), pts.begin() + i * P * 3);
        const auto& R = rec.gt_pose.rotation.m;
        for (int c = 0; c < 3; ++c) {
            const se3::Vec3 col = R.col(c);
            for (int j = 0; j < 3; ++j) gt_cols[i * 9 + c * 3 + j] = col[j];
        }
        const se3::Vec3 ycol = R.col(1);
        for (int j = 0; j < 3; ++j) gt_y[i * 3 + j] = ycol[j];
        for (int j = 0; j < 3; ++j) gt_t[i * 3 + j] = rec.gt_pose.translation[j];
        const bool sym = cfg.symmetric_loss && rec.symmetry == data::Symmetry::y_continuous;
        mask[i] = sym ? 1.0 : 0.0;
        inv_mask[i] = sym ? 0.0 : 1.0;
        const se3::PoseVec9 packed = se3::pose_pack(rec.gt_pose);
        std::copy(packed.begin(), packed.end(), x0.begin() + i * 9);
    }

    const ad::Tensor pts_t = ad::Tensor::from_data({B * P, 3}, std::move(pts));
    const ad::Tensor feat = models::encoder_graph(ps, pts_t, B);

    BatchLosses out;
    if (with_reg) {
        const ad::Tensor out9 = models::regression_graph(ps, feat);
        const auto gs = models::gs_columns_graph(ad::slice_cols(out9, 0, 6));
        const ad::Tensor rhat = ad::concat_cols({gs.b1, gs.b2, gs.b3});
        const ad::Tensor gt_cols_t = ad::Tensor::from_data({B, 9}, std::move(gt_cols));
        const ad::Tensor tr = ad::row_dot(rhat, gt_cols_t);
        const ad::Tensor geo = ad::acos_clamped(ad::scale(ad::add_const(tr, -1.0), 0.5));
        const ad::Tensor gt_y_t = ad::Tensor::from_data({B, 3}, std::move(gt_y));
        const ad::Tensor ysim = ad::acos_clamped(ad::row_dot(gs.b2, gt_y_t));
        const ad::Tensor mask_t = ad::Tensor::from_data({B, 1}, std::move(mask));
        const ad::Tensor inv_mask_t = ad::Tensor::from_data({B, 1}, std::move(inv_mask));
        const ad::Tensor l_rot = ad::add(ad::mul(mask_t, ysim), ad::mul(inv_mask_t, geo));
        const ad::Tensor tpred = ad::slice_cols(out9, 6, 9);
        const ad::Tensor gt_t_t = ad::Tensor::from_data({B, 3}, std::move(gt_t));
        const ad::Tensor dt = ad::sub(tpred, gt_t_t);
        const ad::Tensor l_trans = ad::row_dot(dt, dt);
        out.loss_reg = ad::mean(ad::add(l_rot, l_trans));
    } else {
        out.loss_reg = ad::Tensor::scalar(0.0);
    }

    if (with_dsm) {
        std::vector<double> ts(B), xt(B * 9), noise(B * 9);
        for (std::size_t i = 0; i < B; ++i) {
            // t uniform on (t_end, 1], one (t, noise) pair per item
            ts[i] = 1.0 - (1.0 - cfg.t_end) * rng.uniform();
            const double s = diff::sigma(ts[i], cfg.sched);
            for (int j = 0; j < 9; ++j) {
                const double n = rng.normal();
                noise[i * 9 + j] = n;
                xt[i * 9 + j] = x0[i * 9 + j] + s * n;
            }
        }
        const ad::Tensor xt_t = ad::Tensor::from_data({B, 9}, std::move(xt));
        const ad::Tensor trunk = models::diffusion_trunk_graph(ps, feat, ts, xt_t, cfg.sched);
        const ad::Tensor noise_t = ad::Tensor::from_data({B, 9}, std::move(noise));
        const ad::Tensor resid = ad::add(trunk, noise_t);
        out.loss_dsm = ad::mean(ad::row_dot(resid, resid));
    } else {
        out.loss_dsm = ad::Tensor::scalar(0.0);
    }

    out.loss_total = ad::add(out.loss_reg, out.loss_dsm);
    return out;
}

ValScores validate(const models::FrozenModel& model, const data::DatasetFile& val_set,
                   const TrainConfig& cfg, std::uint64_t seed) {
    diff::SamplerConfig scfg;
    scfg.method = diff::SamplerMethod::euler_ode;
    scfg.num_steps = cfg.val_steps;
    scfg.t_end = cfg.t_end;
    scfg.guidance = cfg.val_guidance;
    scfg.sched = cfg.sched;
    const auto poses =
        eval::sample_poses(model, val_set.records, /*candidates=*/1, scfg, seed);
    std::vector<eval::ErrorPair> errs(val_set.records.size());
    for (std::size_t i = 0; i < val_set.records.size(); ++i)
        errs[i] = eval::pose_error(poses[i], val_set.records[i].gt_pose,
                                   val_set.records[i].symmetry == data::Symmetry::y_continuous);
    ValScores v;
    v.map_5_2 = eval::map_at(errs, 5.0, 2.0);
    v.map_10_2 = eval::map_at(errs, 10.0, 2.0);
    v.map_10_5 = eval::map_at(errs, 10.0, 5.0);
    return v;
}

namespace {

struct Trainer {
    const data::DatasetFile& train_set;
    const data::DatasetFile* val_set;
    TrainConfig cfg;
    bool with_reg;
    bool with_dsm;

    TrainResult run(ad::ParamStore params) {
        Rng rng(cfg.seed);
        ad::AdamState adam;
        TrainResult res;
        TrainLog& log = res.log;
        std::uint64_t global_step = 0;

        std::vector<std::size_t> order(train_set.records.size());
        std::iota(order.begin(), order.end(), 0);

        const std::string ckpt_path =
            cfg.out_dir.empty() ? std::string() : cfg.out_dir + "/checkpoint.bin";
        if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

        for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            // deterministic shuffle
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.uniform_index(i)]);

            double sum_reg = 0.0, sum_dsm = 0.0;
            std::size_t n_batches = 0;
            for (std::size_t off = 0; off < order.size(); off += cfg.batch) {
                const std::size_t hi = std::min(order.size(), off + cfg.batch);
                const std::vector<std::size_t> idx(order.begin() + off, order.begin() + hi);
                auto losses = build_batch_losses(params, train_set, idx, cfg, rng, with_reg, with_dsm);
                const double lr_v = losses.loss_reg.item();
                const double ld_v = losses.loss_dsm.item();
                if (!std::isfinite(lr_v) || !std::isfinite(ld_v))
                    throw ContractError("training diverged: non-finite loss at epoch " +
                                        std::to_string(epoch) +
                                        " (last-good checkpoint retained)");
                sum_reg += lr_v;
                sum_dsm += ld_v;
                ++n_batches;
                params.zero_grad();
                losses.loss_total.backward();
                ++global_step;
                const double lr = ad::lr_at(global_step, cfg.base_lr, cfg.warmup_steps,
                                            cfg.decay_rate, cfg.decay_every);
                ad::adam_step(params, adam, lr);
            }

            EpochRecord rec;
            rec.epoch = epoch;
            rec.loss_reg = sum_reg / static_cast<double>(n_batches);
            rec.loss_dsm = sum_dsm / static_cast<double>(n_batches);
            if (val_set && cfg.val_every > 0 && with_dsm &&
                (epoch % cfg.val_every == 0 || epoch == cfg.epochs)) {
                const models::FrozenModel frozen(params, cfg.sched);
                const ValScores v = validate(frozen, *val_set, cfg, cfg.seed ^ (epoch * 0x9e37ULL));
                rec.map_5_2 = v.map_5_2;
                rec.map_10_2 = v.map_10_2;
                rec.map_10_5 = v.map_10_5;
            }
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log.epochs.push_back(rec);

            if (!ckpt_path.empty() &&
                ((cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) ||
                 epoch == cfg.epochs)) {
                params.save(ckpt_path);
                adam.save(ckpt_path + ".opt");
                log.write_csv(cfg.out_dir + "/train_log.csv");
            }
            res.epochs_run = epoch;
        }
        if (!cfg.out_dir.empty()) log.write_csv(cfg.out_dir + "/train_log.csv");
        res.params = std::move(params);
        return res;
    }
};

}  // namespace

TrainResult pretrain(const data::DatasetFile& train_set, const TrainConfig& cfg) {
    Rng init_rng(cfg.seed ^ 0x5eedULL);
    ad::ParamStore params = models::init_encoder_params(init_rng);
    for (auto& [name, t] : models::init_regression_params(init_rng)) params.add(name, t);
    Trainer tr{train_set, nullptr, cfg, /*with_reg=*/true, /*with_dsm=*/false};
    return tr.run(std::move(params));
}

TrainResult joint_train(const data::DatasetFile& train_set, const data::DatasetFile& val_set,
                        const TrainConfig& cfg, const ad::ParamStore& init) {
    Rng init_rng(cfg.seed ^ 0x5eedULL);
    ad::ParamStore params = models::init_encoder_params(init_rng);
    for (auto& [name, t] : models::init_regression_params(init_rng)) params.add(name, t);
    for (auto& [name, t] : models::init_diffusion_params(init_rng)) params.add(name, t);
    if (init.size() == 0) {
        if (!cfg.allow_uninitialized_joint)
            throw ContractError("joint training requires a pretrain checkpoint "
                                "(set allow_uninitialized_joint to override)");
    } else {
        params.load_values_from(init);  // encoder + regression head weights
    }
    Trainer tr{train_set, &val_set, cfg, /*with_reg=*/true, /*with_dsm=*/true};
    return tr.run(std::move(params));
}

TrainResult scratch_train(const data::DatasetFile& train_set, const data::DatasetFile& val_set,
                          const TrainConfig& cfg) {
    Rng init_rng(cfg.seed ^ 0x5eedULL);
    ad::ParamStore params = models::init_encoder_params(init_rng);
    for (auto& [name, t] : models::init_diffusion_params(init_rng)) params.add(name, t);
    Trainer tr{train_set, &val_set, cfg, /*with_reg=*/false, /*with_dsm=*/true};
    return tr.run(std::move(params));
}

}  // namespace posediff::train
