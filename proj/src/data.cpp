#include "posediff/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace posediff::data {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Category parse_category(const std::string& name) {
    if (name == "box") return Category::box;
    if (name == "cylinder") return Category::cylinder;
    if (name == "cone") return Category::cone;
    if (name == "ellipsoid") return Category::ellipsoid;
    throw ContractError("unknown category '" + name + "'");
}

std::string category_name(Category c) {
    switch (c) {
        case Category::box: return "box";
        case Category::cylinder: return "cylinder";
        case Category::cone: return "cone";
        case Category::ellipsoid: return "ellipsoid";
    }
    return "?";
}

Symmetry category_symmetry(Category c) {
    return (c == Category::cylinder || c == Category::cone) ? Symmetry::y_continuous
                                                            : Symmetry::none;
}

// ---- surface sampling ----

namespace {

SurfacePoint sample_box(const std::array<double, 3>& size, Rng& rng) {
    const double hx = size[0] / 2, hy = size[1] / 2, hz = size[2] / 2;
    // face areas: +-x: sy*sz, +-y: sx*sz, +-z: sx*sy
    const double ax = size[1] * size[2], ay = size[0] * size[2], az = size[0] * size[1];
    const double total = 2 * (ax + ay + az);
    double u = rng.uniform() * total;
    const double su = rng.uniform(-1.0, 1.0), sv = rng.uniform(-1.0, 1.0);
    SurfacePoint sp{};
    if (u < 2 * ax) {
        const double sign = u < ax ? 1.0 : -1.0;
        sp.p = {sign * hx, su * hy, sv * hz};
        sp.n = {sign, 0, 0};
    } else if (u < 2 * ax + 2 * ay) {
        u -= 2 * ax;
        const double sign = u < ay ? 1.0 : -1.0;
        sp.p = {su * hx, sign * hy, sv * hz};
        sp.n = {0, sign, 0};
    } else {
        u -= 2 * ax + 2 * ay;
        const double sign = u < az ? 1.0 : -1.0;
        sp.p = {su * hx, sv * hy, sign * hz};
        sp.n = {0, 0, sign};
    }
    return sp;
}

SurfacePoint sample_cylinder(const std::array<double, 3>& size, Rng& rng) {
    const double r = size[0] / 2, h = size[1];
    const double lateral = 2 * kPi * r * h, cap = kPi * r * r;
    const double total = lateral + 2 * cap;
    const double u = rng.uniform() * total;
    SurfacePoint sp{};
    if (u < lateral) {
        const double th = rng.uniform(0.0, 2 * kPi);
        sp.p = {r * std::cos(th), rng.uniform(-h / 2, h / 2), r * std::sin(th)};
        sp.n = {std::cos(th), 0, std::sin(th)};
    } else {
        const double sign = (u - lateral) < cap ? 1.0 : -1.0;
        const double rr = r * std::sqrt(rng.uniform());
        const double th = rng.uniform(0.0, 2 * kPi);
        sp.p = {rr * std::cos(th), sign * h / 2, rr * std::sin(th)};
        sp.n = {0, sign, 0};
    }
    return sp;
}

SurfacePoint sample_cone(const std::array<double, 3>& size, Rng& rng) {
    const double r = size[0] / 2, h = size[1];
    const double slant = std::sqrt(r * r + h * h);
    const double lateral = kPi * r * slant, base = kPi * r * r;
    const double total = lateral + base;
    const double u = rng.uniform() * total;
    SurfacePoint sp{};
    if (u < lateral) {
        const double f = std::sqrt(rng.uniform());  // area density grows linearly from apex
        const double th = rng.uniform(0.0, 2 * kPi);
        const double rr = r * f;
        const double y = h / 2 - h * f;  // apex at +h/2
        const double inv = 1.0 / slant;
        sp.p = {rr * std::cos(th), y, rr * std::sin(th)};
        sp.n = {h * std::cos(th) * inv, r * inv, h * std::sin(th) * inv};
    } else {
        const double rr = r * std::sqrt(rng.uniform());
        const double th = rng.uniform(0.0, 2 * kPi);
        sp.p = {rr * std::cos(th), -h / 2, rr * std::sin(th)};
        sp.n = {0, -1, 0};
    }
    return sp;
}

SurfacePoint sample_ellipsoid(const std::array<double, 3>& size, Rng& rng) {
    const double a = size[0] / 2, b = size[1] / 2, c = size[2] / 2;
    const double wmax = std::max({b * c, a * c, a * b});
    for (;;) {
        double u0 = rng.normal(), u1 = rng.normal(), u2 = rng.normal();
        const double n = std::sqrt(u0 * u0 + u1 * u1 + u2 * u2);
        if (n < 1e-12) continue;
        u0 /= n;
        u1 /= n;
        u2 /= n;
        const double w = std::sqrt(b * c * u0 * (b * c * u0) + a * c * u1 * (a * c * u1) +
                                   a * b * u2 * (a * b * u2));
        if (rng.uniform() * wmax > w) continue;
        SurfacePoint sp{};
        sp.p = {a * u0, b * u1, c * u2};
        se3::Vec3 g = {u0 / a, u1 / b, u2 / c};
        const double gn = se3::norm(g);
        sp.n = {g[0] / gn, g[1] / gn, g[2] / gn};
        return sp;
    }
}

}  // namespace

std::vector<SurfacePoint> surface_points(const ShapeSpec& spec, std::size_t n, Rng& rng) {
    if (n < 1) throw ContractError("surface_points: n must be >= 1");
    std::vector<SurfacePoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        switch (spec.category) {
            case Category::box: out.push_back(sample_box(spec.size, rng)); break;
            case Category::cylinder: out.push_back(sample_cylinder(spec.size, rng)); break;
            case Category::cone: out.push_back(sample_cone(spec.size, rng)); break;
            case Category::ellipsoid: out.push_back(sample_ellipsoid(spec.size, rng)); break;
        }
    }
    return out;
}

SceneSample render_partial(const ShapeSpec& spec, const se3::Pose& pose, const se3::Vec3& view_dir,
                           std::size_t n_out, double jitter_sigma, Rng& rng) {
    const std::size_t n_surface = std::max<std::size_t>(n_out, 2048);
    const auto surf = surface_points(spec, n_surface, rng);

    std::vector<se3::Vec3> visible;
    visible.reserve(surf.size());
    for (const auto& sp : surf) {
        const se3::Vec3 wn = pose.rotation.m.apply(sp.n);
        if (se3::dot(wn, view_dir) < 0.0) {
            const se3::Vec3 wp = pose.rotation.m.apply(sp.p);
            visible.push_back({wp[0] + pose.translation[0], wp[1] + pose.translation[1],
                               wp[2] + pose.translation[2]});
        }
    }
    if (visible.size() < 32)
        throw DegenerateViewError("render_partial: only " + std::to_string(visible.size()) +
                                  " visible points");

    SceneSample s;
    s.points.resize(n_out * 3);
    for (std::size_t i = 0; i < n_out; ++i) {
        const auto& p = visible[rng.uniform_index(visible.size())];
        for (int j = 0; j < 3; ++j)
            s.points[i * 3 + j] = p[j] + jitter_sigma * rng.normal();
    }
    s.gt_pose = pose;
    s.category = spec.category;
    s.symmetry = category_symmetry(spec.category);
    return s;
}

se3::Pose sample_gt_pose(Rng& rng, const Workspace& ws) {
    se3::Pose p;
    p.rotation = se3::sample_uniform_rotation(rng);
    for (auto& c : p.translation) c = rng.uniform(-ws.half_extent, ws.half_extent);
    return p;
}

se3::Rotation canonicalize_rotation(Category c, const se3::Rotation& r) {
    auto flip = [](int axis) {
        se3::Rotation s;
        s.m = se3::Mat3::identity();
        for (int i = 0; i < 3; ++i)
            if (i != axis) s.m(i, i) = -1.0;
        return s;
    };
    switch (c) {
        case Category::cone:
            return r;
        case Category::cylinder: {
            // pick the representative whose y axis has nonnegative camera z
            const se3::Vec3 y = r.m.col(1);
            double key = y[2];
            if (key == 0.0) key = y[0] != 0.0 ? y[0] : y[1];
            if (key >= 0.0) return r;
            se3::Rotation out;
            out.m = r.m * flip(0).m;
            return out;
        }
        case Category::box:
        case Category::ellipsoid: {
            se3::Rotation best = r;
            double best_trace = r.m.trace();
            for (int axis = 0; axis < 3; ++axis) {
                se3::Rotation cand;
                cand.m = r.m * flip(axis).m;
                const double tr = cand.m.trace();
                if (tr > best_trace) {
                    best_trace = tr;
                    best = cand;
                }
            }
            return best;
        }
    }
    return r;
}

// ---- config ----

std::string GenConfig::echo() const {
    std::ostringstream os;
    os << "categories=";
    for (std::size_t i = 0; i < categories.size(); ++i) {
        if (i) os << ',';
        os << category_name(categories[i]);
    }
    os << "\ncount_per_category=" << count_per_category;
    char buf[64];
    auto num = [&](const char* k, double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << '\n' << k << '=' << buf;
    };
    num("size_min", size_min);
    num("size_max", size_max);
    num("min_dim_gap", min_dim_gap);
    num("jitter", jitter);
    num("workspace", workspace);
    os << "\nn_surface=" << n_surface;
    os << "\nseed=" << seed;
    os << '\n';
    return os.str();
}

GenConfig parse_gen_config(const std::string& text) {
    GenConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("config: expected key=value, got '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "categories") {
            cfg.categories.clear();
            std::istringstream cs(val);
            std::string item;
            while (std::getline(cs, item, ',')) cfg.categories.push_back(parse_category(item));
        } else if (key == "count_per_category") {
            cfg.count_per_category = std::stoull(val);
        } else if (key == "size_min") {
            cfg.size_min = std::stod(val);
        } else if (key == "size_max") {
            cfg.size_max = std::stod(val);
        } else if (key == "min_dim_gap") {
            cfg.min_dim_gap = std::stod(val);
        } else if (key == "jitter") {
            cfg.jitter = std::stod(val);
        } else if (key == "workspace") {
            cfg.workspace = std::stod(val);
        } else if (key == "n_surface") {
            cfg.n_surface = std::stoull(val);
        } else if (key == "seed") {
            cfg.seed = std::stoull(val);
        }
        // unknown keys are tolerated: the file may be shared with the trainer
    }
    return cfg;
}

GenConfig load_gen_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path + ": cannot open");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_gen_config(text);
}

// ---- generation ----

namespace {

std::array<double, 3> draw_sizes(Category c, const GenConfig& cfg, Rng& rng) {
    std::array<double, 3> s{};
    if (c == Category::cylinder || c == Category::cone) {
        s[0] = rng.uniform(cfg.size_min, cfg.size_max);  // diameter
        s[1] = rng.uniform(cfg.size_min, cfg.size_max);  // height
        s[2] = s[0];
        return s;
    }
    // distinct dims keep the flip canonicalization well separated
    for (int attempt = 0; attempt < 256; ++attempt) {
        for (auto& v : s) v = rng.uniform(cfg.size_min, cfg.size_max);
        std::array<double, 3> sorted = s;
        std::sort(sorted.begin(), sorted.end());
        if (sorted[1] >= sorted[0] * (1.0 + cfg.min_dim_gap) &&
            sorted[2] >= sorted[1] * (1.0 + cfg.min_dim_gap))
            return s;
    }
    // fall back to a fixed well-separated shape
    s = {cfg.size_min, (cfg.size_min + cfg.size_max) / 2, cfg.size_max};
    return s;
}

}  // namespace

DatasetFile generate_dataset(const GenConfig& config, std::uint64_t seed) {
    DatasetFile ds;
    ds.config = config;
    ds.seed = seed;
    const Rng master(seed);
    const Workspace ws{config.workspace};
    const se3::Vec3 view = {0.0, 0.0, 1.0};

    std::uint64_t record_index = 0;
    for (const auto cat : config.categories) {
        std::uint64_t produced = 0;
        for (std::size_t i = 0; i < config.count_per_category; ++i, ++record_index) {
            Rng rec_rng = master.split(record_index);
            ShapeSpec spec;
            spec.category = cat;
            spec.size = draw_sizes(cat, config, rec_rng);
            spec.instance_seed = rec_rng.next_u64();

            for (;;) {
                se3::Pose pose = sample_gt_pose(rec_rng, ws);
                pose.rotation = canonicalize_rotation(cat, pose.rotation);
                try {
                    SceneSample s = render_partial(spec, pose, view, kCloudPoints, config.jitter,
                                                   rec_rng);
                    ds.records.push_back(std::move(s));
                    break;
                } catch (const DegenerateViewError&) {
                    // redraw the pose from the same stream
                }
            }
            ++produced;
        }
        ds.per_category_counts.push_back(produced);
    }
    return ds;
}

// ---- binary io (PDLDATA1) ----

namespace {

constexpr char kDataMagic[8] = {'P', 'D', 'L', 'D', 'A', 'T', 'A', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}

struct Reader {
    std::string buf;
    std::size_t pos = 0;
    std::string path;
    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw FormatError(path + ": truncated at byte offset " + std::to_string(pos));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        const std::uint64_t v = u64();
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_dataset(const DatasetFile& ds, const std::string& path) {
    std::string buf(kDataMagic, 8);
    put_u64(buf, ds.records.size());
    put_u32(buf, static_cast<std::uint32_t>(ds.config.categories.size()));
    for (std::size_t i = 0; i < ds.config.categories.size(); ++i) {
        const std::string name = category_name(ds.config.categories[i]);
        put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf.append(name);
        put_u64(buf, i < ds.per_category_counts.size() ? ds.per_category_counts[i] : 0);
    }
    const std::string echo = ds.config.echo();
    put_u64(buf, echo.size());
    buf.append(echo);
    put_u64(buf, ds.seed);
    for (const auto& r : ds.records) {
        buf.push_back(static_cast<char>(r.category));
        buf.push_back(static_cast<char>(r.symmetry));
        for (int i = 0; i < 9; ++i) put_f64(buf, r.gt_pose.rotation.m.m[i]);
        for (int i = 0; i < 3; ++i) put_f64(buf, r.gt_pose.translation[i]);
        if (r.points.size() != kCloudPoints * 3)
            throw ContractError("save_dataset: record does not hold 1024x3 points");
        for (double v : r.points) put_f64(buf, v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError(path + ": write failed");
}

DatasetFile load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open");
    Reader r;
    r.path = path;
    r.buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (r.bytes(8) != std::string(kDataMagic, 8))
        throw FormatError(path + ": bad magic at byte offset 0");
    DatasetFile ds;
    const std::uint64_t count = r.u64();
    const std::uint32_t ncat = r.u32();
    ds.config.categories.clear();
    for (std::uint32_t i = 0; i < ncat; ++i) {
        const std::uint32_t nlen = r.u32();
        ds.config.categories.push_back(parse_category(r.bytes(nlen)));
        ds.per_category_counts.push_back(r.u64());
    }
    const std::uint64_t echo_len = r.u64();
    ds.config = parse_gen_config(r.bytes(echo_len));
    ds.seed = r.u64();
    ds.records.resize(count);
    for (auto& rec : ds.records) {
        rec.category = static_cast<Category>(r.bytes(1)[0]);
        rec.symmetry = static_cast<Symmetry>(r.bytes(1)[0]);
        for (int i = 0; i < 9; ++i) rec.gt_pose.rotation.m.m[i] = r.f64();
        for (int i = 0; i < 3; ++i) rec.gt_pose.translation[i] = r.f64();
        rec.points.resize(kCloudPoints * 3);
        for (auto& v : rec.points) v = r.f64();
    }
    if (r.pos != r.buf.size())
        throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.pos));
    return ds;
}

}  // namespace posediff::data
