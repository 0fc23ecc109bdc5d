#include "posediff/models.hpp"

#include <cmath>

namespace posediff::models {

namespace {

constexpr std::size_t kEncH1 = 64, kEncH2 = 128;
constexpr std::size_t kHeadH = 512;
constexpr std::size_t kFreqs = kTimeEmbedDim / 2;

void add_linear(ad::ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t out,
                double weight_std, Rng& rng) {
    ps.add(prefix + ".W", ad::randn({in, out}, weight_std, rng));
    ps.add(prefix + ".b", ad::Tensor::zeros({out}, /*requires_grad=*/true));
}

double he_std(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

ad::Tensor dense(const ad::ParamStore& ps, const std::string& prefix, const ad::Tensor& x) {
    return ad::linear(x, ps.at(prefix + ".W"), ps.at(prefix + ".b"));
}

}  // namespace

ad::ParamStore init_encoder_params(Rng& rng) {
    ad::ParamStore ps;
    add_linear(ps, "enc.l1", 3, kEncH1, he_std(3), rng);
    add_linear(ps, "enc.l2", kEncH1, kEncH2, he_std(kEncH1), rng);
    add_linear(ps, "enc.l3", kEncH2, kFeatureDim, he_std(kEncH2), rng);
    return ps;
}

ad::ParamStore init_regression_params(Rng& rng) {
    ad::ParamStore ps;
    add_linear(ps, "reg.l1", kFeatureDim, kHeadH, he_std(kFeatureDim), rng);
    add_linear(ps, "reg.l2", kHeadH, kHeadH, he_std(kHeadH), rng);
    add_linear(ps, "reg.l3", kHeadH, 9, 0.01, rng);
    // identity-pose bias keeps gs_orthonormalize well defined from step zero
    auto b = ps.at("reg.l3.b").data();
    b[0] = 1.0;
    b[4] = 1.0;
    return ps;
}

ad::ParamStore init_diffusion_params(Rng& rng) {
    ad::ParamStore ps;
    add_linear(ps, "diff.time.l1", kTimeEmbedDim, kTimeEmbedDim, he_std(kTimeEmbedDim), rng);
    add_linear(ps, "diff.time.l2", kTimeEmbedDim, kTimeEmbedDim, he_std(kTimeEmbedDim), rng);
    add_linear(ps, "diff.pose.l1", 9, kPoseEmbedDim, he_std(9), rng);
    add_linear(ps, "diff.pose.l2", kPoseEmbedDim, kPoseEmbedDim, he_std(kPoseEmbedDim), rng);
    add_linear(ps, "diff.trunk.l1", kTrunkInDim, kHeadH, he_std(kTrunkInDim), rng);
    add_linear(ps, "diff.trunk.l2", kHeadH, kHeadH, he_std(kHeadH), rng);
    // near-zero output layer: the initial score is tiny but every upstream
    // parameter still receives gradient on the first step
    add_linear(ps, "diff.trunk.l3", kHeadH, 9, 1e-4, rng);
    return ps;
}

ad::ParamStore init_params(Rng& rng) {
    ad::ParamStore ps = init_encoder_params(rng);
    for (auto& [name, t] : init_regression_params(rng)) ps.add(name, t);
    for (auto& [name, t] : init_diffusion_params(rng)) ps.add(name, t);
    return ps;
}

std::vector<double> time_features(double t, const diff::NoiseSchedule& sched) {
    const double u = std::log(diff::sigma(t, sched));
    std::vector<double> f(kTimeEmbedDim);
    for (std::size_t k = 0; k < kFreqs; ++k) {
        // frequencies geometric in [0.1, 10]
        const double w =
            0.1 * std::pow(100.0, static_cast<double>(k) / static_cast<double>(kFreqs - 1));
        f[2 * k] = std::sin(w * u);
        f[2 * k + 1] = std::cos(w * u);
    }
    return f;
}

ad::Tensor encoder_graph(const ad::ParamStore& ps, const ad::Tensor& pts, std::size_t n_clouds) {
    if (pts.cols() != 3 || pts.rows() != n_clouds * kPointsPerCloud)
        throw DimensionError("encoder_graph: expected [" + std::to_string(n_clouds * kPointsPerCloud) +
                             "x3] points, got [" + std::to_string(pts.rows()) + "x" +
                             std::to_string(pts.cols()) + "]");
    ad::Tensor h = ad::relu(dense(ps, "enc.l1", pts));
    h = ad::relu(dense(ps, "enc.l2", h));
    h = dense(ps, "enc.l3", h);
    return ad::segment_max_pool(h, kPointsPerCloud);
}

ad::Tensor regression_graph(const ad::ParamStore& ps, const ad::Tensor& feat) {
    ad::Tensor h = ad::relu(dense(ps, "reg.l1", feat));
    h = ad::relu(dense(ps, "reg.l2", h));
    return dense(ps, "reg.l3", h);
}

GsCols gs_columns_graph(const ad::Tensor& rot6) {
    const ad::Tensor a1 = ad::slice_cols(rot6, 0, 3);
    const ad::Tensor a2 = ad::slice_cols(rot6, 3, 6);
    const ad::Tensor b1 = ad::row_scale(a1, ad::rsqrt(ad::row_dot(a1, a1)));
    const ad::Tensor proj = ad::row_dot(b1, a2);
    const ad::Tensor u = ad::sub(a2, ad::row_scale(b1, proj));
    const ad::Tensor b2 = ad::row_scale(u, ad::rsqrt(ad::row_dot(u, u)));
    return {b1, b2, ad::row_cross(b1, b2)};
}

ad::Tensor time_embed_graph(const ad::ParamStore& ps, const ad::Tensor& raw_feats) {
    ad::Tensor h = ad::relu(dense(ps, "diff.time.l1", raw_feats));
    return dense(ps, "diff.time.l2", h);
}

ad::Tensor pose_embed_graph(const ad::ParamStore& ps, const ad::Tensor& x) {
    ad::Tensor h = ad::relu(dense(ps, "diff.pose.l1", x));
    return dense(ps, "diff.pose.l2", h);
}

ad::Tensor diffusion_trunk_graph(const ad::ParamStore& ps, const ad::Tensor& feat,
                                 const std::vector<double>& ts, const ad::Tensor& xt,
                                 const diff::NoiseSchedule& sched) {
    const std::size_t B = feat.rows();
    if (ts.size() != B || xt.rows() != B || xt.cols() != 9)
        throw DimensionError("diffusion_trunk_graph: batch size mismatch");
    std::vector<double> raw(B * kTimeEmbedDim);
    for (std::size_t i = 0; i < B; ++i) {
        const auto f = time_features(ts[i], sched);
        std::copy(f.begin(), f.end(), raw.begin() + i * kTimeEmbedDim);
    }
    const ad::Tensor raw_t = ad::Tensor::from_data({B, kTimeEmbedDim}, std::move(raw));
    const ad::Tensor temb = time_embed_graph(ps, raw_t);
    const ad::Tensor pemb = pose_embed_graph(ps, xt);
    ad::Tensor h = ad::concat_cols({feat, temb, pemb});
    h = ad::relu(dense(ps, "diff.trunk.l1", h));
    h = ad::relu(dense(ps, "diff.trunk.l2", h));
    return dense(ps, "diff.trunk.l3", h);
}

// ---- FrozenModel ----

FrozenModel::FrozenModel(const ad::ParamStore& ps, const diff::NoiseSchedule& sched)
    : sched_(sched) {
    auto mat = [&](const std::string& name) {
        const ad::Tensor& t = ps.at(name);
        Mat m(t.rows(), t.cols());
        std::copy(t.data().begin(), t.data().end(), m.data());
        return m;
    };
    auto vec = [&](const std::string& name) {
        const ad::Tensor& t = ps.at(name);
        Eigen::VectorXd v(t.numel());
        std::copy(t.data().begin(), t.data().end(), v.data());
        return v;
    };
    if (ps.contains("enc.l1.W")) {
        has_enc_ = true;
        e1W_ = mat("enc.l1.W"); e1b_ = vec("enc.l1.b");
        e2W_ = mat("enc.l2.W"); e2b_ = vec("enc.l2.b");
        e3W_ = mat("enc.l3.W"); e3b_ = vec("enc.l3.b");
    }
    if (ps.contains("reg.l1.W")) {
        has_reg_ = true;
        r1W_ = mat("reg.l1.W"); r1b_ = vec("reg.l1.b");
        r2W_ = mat("reg.l2.W"); r2b_ = vec("reg.l2.b");
        r3W_ = mat("reg.l3.W"); r3b_ = vec("reg.l3.b");
    }
    if (ps.contains("diff.trunk.l1.W")) {
        has_diff_ = true;
        t1W_ = mat("diff.time.l1.W"); t1b_ = vec("diff.time.l1.b");
        t2W_ = mat("diff.time.l2.W"); t2b_ = vec("diff.time.l2.b");
        p1W_ = mat("diff.pose.l1.W"); p1b_ = vec("diff.pose.l1.b");
        p2W_ = mat("diff.pose.l2.W"); p2b_ = vec("diff.pose.l2.b");
        d1W_ = mat("diff.trunk.l1.W"); d1b_ = vec("diff.trunk.l1.b");
        d2W_ = mat("diff.trunk.l2.W"); d2b_ = vec("diff.trunk.l2.b");
        d3W_ = mat("diff.trunk.l3.W"); d3b_ = vec("diff.trunk.l3.b");
    }
}

void FrozenModel::encode(const double* points, double* feat) const {
    encode_many(points, 1, feat);
}

void FrozenModel::encode_many(const double* points, std::size_t n_clouds, double* feats) const {
    if (!has_enc_) throw ContractError("FrozenModel: encoder parameters missing");
    const std::size_t R = n_clouds * kPointsPerCloud;
    Eigen::Map<const Mat> pts(points, R, 3);
    Mat h1 = (pts * e1W_).rowwise() + e1b_.transpose();
    h1 = h1.cwiseMax(0.0);
    Mat h2 = (h1 * e2W_).rowwise() + e2b_.transpose();
    h2 = h2.cwiseMax(0.0);
    Mat h3 = (h2 * e3W_).rowwise() + e3b_.transpose();
    Eigen::Map<Mat> out(feats, n_clouds, kFeatureDim);
    for (std::size_t c = 0; c < n_clouds; ++c)
        out.row(c) = h3.middleRows(c * kPointsPerCloud, kPointsPerCloud).colwise().maxCoeff();
}

se3::Pose FrozenModel::regress(const double* feat) const {
    if (!has_reg_) throw ContractError("FrozenModel: regression parameters missing");
    Eigen::Map<const Eigen::RowVectorXd> f(feat, kFeatureDim);
    Eigen::RowVectorXd h = (f * r1W_) + r1b_.transpose();
    h = h.cwiseMax(0.0);
    Eigen::RowVectorXd h2 = (h * r2W_) + r2b_.transpose();
    h2 = h2.cwiseMax(0.0);
    Eigen::RowVectorXd o = (h2 * r3W_) + r3b_.transpose();
    se3::PoseVec9 v;
    for (int i = 0; i < 9; ++i) v[i] = o[i];
    return se3::pose_unpack(v);
}

void FrozenModel::score_rows(const double* feats, const double* xs, std::size_t m, double t,
                             double* out) const {
    if (!has_diff_) throw ContractError("FrozenModel: diffusion parameters missing");
    const auto tf = time_features(t, sched_);
    Eigen::Map<const Eigen::RowVectorXd> raw(tf.data(), kTimeEmbedDim);
    Eigen::RowVectorXd th = ((raw * t1W_) + t1b_.transpose()).cwiseMax(0.0);
    Eigen::RowVectorXd temb = (th * t2W_) + t2b_.transpose();

    Eigen::Map<const Mat> x(xs, m, 9);
    Mat ph = ((x * p1W_).rowwise() + p1b_.transpose()).cwiseMax(0.0);
    Mat pemb = (ph * p2W_).rowwise() + p2b_.transpose();

    Mat trunk_in(m, kTrunkInDim);
    trunk_in.leftCols(kFeatureDim) = Eigen::Map<const Mat>(feats, m, kFeatureDim);
    trunk_in.middleCols(kFeatureDim, kTimeEmbedDim) = temb.replicate(m, 1);
    trunk_in.rightCols(kPoseEmbedDim) = pemb;

    Mat h = ((trunk_in * d1W_).rowwise() + d1b_.transpose()).cwiseMax(0.0);
    Mat h2 = ((h * d2W_).rowwise() + d2b_.transpose()).cwiseMax(0.0);
    Mat o = (h2 * d3W_).rowwise() + d3b_.transpose();
    const double inv_sigma = 1.0 / diff::sigma(t, sched_);
    Eigen::Map<Mat>(out, m, 9) = o * inv_sigma;
}

diff::Vec9 FrozenModel::score(const double* feat, const diff::Vec9& x, double t) const {
    diff::Vec9 out;
    score_rows(feat, x.data(), 1, t, out.data());
    return out;
}

// ---- spec-level single-instance ops ----

std::vector<double> encode(const std::vector<double>& points, const ad::ParamStore& ps) {
    if (points.size() != kPointsPerCloud * 3)
        throw DimensionError("encode: expected 1024x3 points, got " +
                             std::to_string(points.size() / 3) + " rows");
    // graph path (differentiable when called inside a training step)
    const ad::Tensor pts = ad::Tensor::from_data({kPointsPerCloud, 3}, points);
    const ad::Tensor feat = encoder_graph(ps, pts, 1);
    return {feat.data().begin(), feat.data().end()};
}

std::vector<double> time_embed(double t, const ad::ParamStore& ps,
                               const diff::NoiseSchedule& sched) {
    const auto raw = time_features(t, sched);
    const ad::Tensor rt = ad::Tensor::from_data({1, kTimeEmbedDim}, raw);
    const ad::Tensor emb = time_embed_graph(ps, rt);
    return {emb.data().begin(), emb.data().end()};
}

std::vector<double> pose_embed(const diff::Vec9& x, const ad::ParamStore& ps) {
    const ad::Tensor xt = ad::Tensor::from_data({1, 9}, {x.begin(), x.end()});
    const ad::Tensor emb = pose_embed_graph(ps, xt);
    return {emb.data().begin(), emb.data().end()};
}

se3::Pose regress(const std::vector<double>& feature, const ad::ParamStore& ps) {
    if (feature.size() != kFeatureDim)
        throw DimensionError("regress: feature length " + std::to_string(feature.size()) +
                             ", expected " + std::to_string(kFeatureDim));
    const ad::Tensor f = ad::Tensor::from_data({1, kFeatureDim}, feature);
    const ad::Tensor out = regression_graph(ps, f);
    se3::PoseVec9 v;
    std::copy(out.data().begin(), out.data().end(), v.begin());
    return se3::pose_unpack(v);
}

diff::Vec9 diffusion_score(const std::vector<double>& feature, const diff::Vec9& x, double t,
                           const ad::ParamStore& ps, const diff::NoiseSchedule& sched) {
    if (feature.size() != kFeatureDim)
        throw DimensionError("diffusion_score: feature length mismatch");
    const ad::Tensor f = ad::Tensor::from_data({1, kFeatureDim}, feature);
    const ad::Tensor xt = ad::Tensor::from_data({1, 9}, {x.begin(), x.end()});
    const ad::Tensor trunk = diffusion_trunk_graph(ps, f, {t}, xt, sched);
    const double inv_sigma = 1.0 / diff::sigma(t, sched);
    diff::Vec9 out;
    for (int i = 0; i < 9; ++i) out[i] = trunk.data()[i] * inv_sigma;
    return out;
}

}  // namespace posediff::models
