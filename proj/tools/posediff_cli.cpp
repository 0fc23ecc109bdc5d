#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "posediff/data.hpp"
#include "posediff/diffusion.hpp"
#include "posediff/eval.hpp"
#include "posediff/models.hpp"
#include "posediff/train.hpp"

namespace pd = posediff;

namespace {

struct SamplerFlags {
    std::string guidance = "exponential";
    double wmin = 1.0;
    double wmax = 4.0;
    std::size_t steps = 100;
    std::string sampler = "euler";
    double eta = 0.0;
    std::uint64_t seed = 1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--guidance", guidance, "none|constant|linear|exponential");
        cmd->add_option("--wmin", wmin, "minimum guidance weight");
        cmd->add_option("--wmax", wmax, "maximum guidance weight");
        cmd->add_option("--steps", steps, "sampling steps");
        cmd->add_option("--sampler", sampler, "euler|ddim");
        cmd->add_option("--eta", eta, "DDIM stochasticity in [0,1]");
        cmd->add_option("--seed", seed, "random seed");
    }

    pd::diff::SamplerConfig config(const pd::train::TrainConfig& tcfg) const {
        pd::diff::SamplerConfig cfg;
        if (sampler == "euler") cfg.method = pd::diff::SamplerMethod::euler_ode;
        else if (sampler == "ddim") cfg.method = pd::diff::SamplerMethod::ddim;
        else throw pd::ContractError("unknown sampler '" + sampler + "'");
        cfg.num_steps = steps;
        cfg.eta = eta;
        cfg.t_end = tcfg.t_end;
        cfg.sched = tcfg.sched;
        cfg.guidance.kind = pd::diff::parse_guidance_kind(guidance);
        cfg.guidance.w_min = wmin;
        cfg.guidance.w_max = wmax;
        return cfg;
    }
};

pd::train::TrainConfig config_or_default(const std::string& path) {
    if (path.empty()) return pd::train::TrainConfig{};
    return pd::train::load_train_config(path);
}

int run(int argc, char** argv) {
    CLI::App app{"conditional score-based diffusion for 6D pose estimation on point clouds"};
    app.require_subcommand(1);

    std::string config_path, data_path, val_path, out_path, ckpt_path, init_path;
    std::size_t k = 50, count = 8;
    double delta = 60.0;
    std::uint64_t gen_seed = 0;
    bool have_gen_seed = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--config", config_path, "generator config (key=value)")->required();
    gen->add_option("--out", out_path, "output dataset file")->required();
    gen->add_option("--seed", gen_seed, "override the config seed")->each([&](const std::string&) {
        have_gen_seed = true;
    });

    auto* pre = app.add_subcommand("pretrain", "pre-train encoder + regression head");
    pre->add_option("--config", config_path, "train config")->required();
    pre->add_option("--data", data_path, "training dataset")->required();
    pre->add_option("--out", out_path, "output directory")->required();

    auto* joint = app.add_subcommand("train-joint", "joint training from a pretrain checkpoint");
    joint->add_option("--config", config_path, "train config")->required();
    joint->add_option("--data", data_path, "training dataset")->required();
    joint->add_option("--val", val_path, "validation dataset")->required();
    joint->add_option("--init", init_path, "pretrain checkpoint");
    joint->add_option("--out", out_path, "output directory")->required();

    auto* scratch = app.add_subcommand("train-scratch", "diffusion-only training from scratch");
    scratch->add_option("--config", config_path, "train config")->required();
    scratch->add_option("--data", data_path, "training dataset")->required();
    scratch->add_option("--val", val_path, "validation dataset")->required();
    scratch->add_option("--out", out_path, "output directory")->required();

    SamplerFlags sample_flags, eval_flags, dist_flags, sched_flags;

    auto* smp = app.add_subcommand("sample", "write guided/unguided trajectory CSVs");
    smp->add_option("--checkpoint", ckpt_path)->required();
    smp->add_option("--data", data_path)->required();
    smp->add_option("--out", out_path, "output directory")->required();
    smp->add_option("--config", config_path, "train config (schedule fields)");
    smp->add_option("--count", count, "number of records to sample");
    sample_flags.attach(smp);

    auto* ev = app.add_subcommand("eval", "mAP table: guided k=1, unguided k=1, mean-pool");
    ev->add_option("--checkpoint", ckpt_path)->required();
    ev->add_option("--data", data_path)->required();
    ev->add_option("--config", config_path, "train config (schedule fields)");
    ev->add_option("--out", out_path, "also write CSV here");
    ev->add_option("--k", k, "mean-pool candidate count");
    ev->add_option("--delta", delta, "retained percent for mean-pooling");
    eval_flags.attach(ev);

    auto* dist = app.add_subcommand("export-dist", "50-sample rotation distribution exports");
    dist->add_option("--checkpoint", ckpt_path)->required();
    dist->add_option("--data", data_path)->required();
    dist->add_option("--out", out_path, "output directory")->required();
    dist->add_option("--config", config_path, "train config (schedule fields)");
    dist->add_option("--count", count, "symmetric instances to export");
    dist_flags.attach(dist);

    auto* cmp = app.add_subcommand("compare-schedules", "table over the four guidance schedules");
    cmp->add_option("--checkpoint", ckpt_path)->required();
    cmp->add_option("--data", data_path)->required();
    cmp->add_option("--config", config_path, "train config (schedule fields)");
    cmp->add_option("--out", out_path, "also write CSV here");
    sched_flags.attach(cmp);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }

    if (gen->parsed()) {
        pd::data::GenConfig cfg = pd::data::load_gen_config(config_path);
        const std::uint64_t seed = have_gen_seed ? gen_seed : cfg.seed;
        cfg.seed = seed;
        const auto ds = pd::data::generate_dataset(cfg, seed);
        pd::data::save_dataset(ds, out_path);
        std::printf("wrote %zu records (%zu categories) to %s\n", ds.records.size(),
                    cfg.categories.size(), out_path.c_str());
        return 0;
    }

    if (pre->parsed() || joint->parsed() || scratch->parsed()) {
        pd::train::TrainConfig cfg = pd::train::load_train_config(config_path);
        cfg.out_dir = out_path;
        const auto train_set = pd::data::load_dataset(data_path);
        pd::train::TrainResult res;
        if (pre->parsed()) {
            cfg.mode = pd::train::Mode::pretrain;
            res = pd::train::pretrain(train_set, cfg);
        } else {
            const auto val_set = pd::data::load_dataset(val_path);
            if (joint->parsed()) {
                cfg.mode = pd::train::Mode::joint;
                pd::ad::ParamStore init;
                if (!init_path.empty()) init = pd::ad::ParamStore::load(init_path);
                res = pd::train::joint_train(train_set, val_set, cfg, init);
            } else {
                cfg.mode = pd::train::Mode::scratch;
                res = pd::train::scratch_train(train_set, val_set, cfg);
            }
        }
        const auto& last = res.log.epochs.back();
        std::printf("done: %zu epochs, loss_reg=%.4f loss_dsm=%.4f map_10_5=%.1f\n", res.epochs_run,
                    last.loss_reg, last.loss_dsm, last.map_10_5);
        return 0;
    }

    // remaining subcommands need a checkpoint + dataset
    const pd::train::TrainConfig tcfg = config_or_default(config_path);
    const pd::ad::ParamStore params = pd::ad::ParamStore::load(ckpt_path);
    const pd::models::FrozenModel model(params, tcfg.sched);
    const auto ds = pd::data::load_dataset(data_path);

    if (smp->parsed()) {
        std::filesystem::create_directories(out_path);
        const auto cfg = sample_flags.config(tcfg);
        pd::diff::SamplerConfig unguided = cfg;
        unguided.guidance.kind = pd::diff::GuidanceKind::none;
        const std::size_t n = std::min<std::size_t>(count, ds.records.size());
        for (std::size_t i = 0; i < n; ++i) {
            const auto& rec = ds.records[i];
            const auto tg = pd::eval::sample_trajectories(model, rec, 1, cfg, sample_flags.seed + i);
            const auto tu =
                pd::eval::sample_trajectories(model, rec, 1, unguided, sample_flags.seed + i);
            pd::diff::export_trajectory_csv(
                tg[0], rec.gt_pose, out_path + "/traj_" + std::to_string(i) + "_guided.csv");
            pd::diff::export_trajectory_csv(
                tu[0], rec.gt_pose, out_path + "/traj_" + std::to_string(i) + "_unguided.csv");
        }
        std::printf("wrote %zu guided/unguided trajectory pairs to %s\n", n, out_path.c_str());
        return 0;
    }

    if (ev->parsed()) {
        pd::eval::EvalOptions opt;
        opt.sampler = eval_flags.config(tcfg);
        opt.k = k;
        opt.delta = delta;
        opt.seed = eval_flags.seed;
        const auto rows = pd::eval::evaluate_all(model, ds.records, opt);
        std::fputs(pd::eval::format_table(rows).c_str(), stdout);
        if (!out_path.empty()) pd::eval::write_rows_csv(rows, out_path);
        return 0;
    }

    if (dist->parsed()) {
        std::filesystem::create_directories(out_path);
        const auto cfg = dist_flags.config(tcfg);
        std::size_t exported = 0;
        for (std::size_t i = 0; i < ds.records.size() && exported < count; ++i) {
            const auto& rec = ds.records[i];
            if (rec.symmetry != pd::data::Symmetry::y_continuous) continue;
            std::vector<pd::data::SceneSample> one{rec};
            const auto poses = pd::eval::sample_poses(model, one, 50, cfg, dist_flags.seed + i);
            pd::eval::export_rotation_distribution(
                poses, rec.gt_pose,
                out_path + "/dist_" + pd::data::category_name(rec.category) + "_" +
                    std::to_string(i));
            ++exported;
        }
        std::printf("exported %zu rotation distributions to %s\n", exported, out_path.c_str());
        return 0;
    }

    if (cmp->parsed()) {
        auto base = sched_flags.config(tcfg);
        const auto rows = pd::eval::compare_schedules(model, ds.records, base, sched_flags.wmin,
                                                      sched_flags.wmax, sched_flags.seed);
        std::fputs(pd::eval::format_table(rows).c_str(), stdout);
        if (!out_path.empty()) pd::eval::write_rows_csv(rows, out_path);
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const pd::FormatError& e) {
        std::fprintf(stderr, "data/format error: %s\n", e.what());
        return 2;
    } catch (const pd::DegenerateInputError& e) {
        std::fprintf(stderr, "degenerate computation: %s\n", e.what());
        return 3;
    } catch (const pd::DegenerateViewError& e) {
        std::fprintf(stderr, "degenerate computation: %s\n", e.what());
        return 3;
    } catch (const pd::AggregationDegenerateError& e) {
        std::fprintf(stderr, "degenerate computation: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
