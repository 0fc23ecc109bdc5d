#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "posediff/common.hpp"
#include "posediff/rng.hpp"
#include "posediff/se3.hpp"

// Synthetic category-level dataset: partial, posed point clouds with
// ground-truth poses and symmetry flags. Partiality comes from back-face
// culling against a view direction; clouds are resampled with replacement to
// exactly 1024 points and jittered.

namespace posediff::data {

enum class Category : std::uint8_t { box = 0, cylinder = 1, cone = 2, ellipsoid = 3 };
enum class Symmetry : std::uint8_t { none = 0, y_continuous = 1 };

Category parse_category(const std::string& name);
std::string category_name(Category c);
Symmetry category_symmetry(Category c);

struct ShapeSpec {
    Category category = Category::box;
    // bounding extents per axis (meters): box (sx,sy,sz); cylinder/cone
    // (diameter, height, diameter); ellipsoid diameters
    std::array<double, 3> size{0.1, 0.1, 0.1};
    std::uint64_t instance_seed = 0;
};

struct SurfacePoint {
    se3::Vec3 p;
    se3::Vec3 n;  // unit outward normal
};

// Area-weighted uniform samples on the shape surface (canonical frame).
std::vector<SurfacePoint> surface_points(const ShapeSpec& spec, std::size_t n, Rng& rng);

inline constexpr std::size_t kCloudPoints = 1024;

struct SceneSample {
    std::vector<double> points;  // kCloudPoints x 3, camera frame, row-major
    se3::Pose gt_pose;
    Category category = Category::box;
    Symmetry symmetry = Symmetry::none;
};

SceneSample render_partial(const ShapeSpec& spec, const se3::Pose& pose, const se3::Vec3& view_dir,
                           std::size_t n_out, double jitter_sigma, Rng& rng);

struct Workspace {
    double half_extent = 0.3;  // translations uniform in [-h, h]^3
};

se3::Pose sample_gt_pose(Rng& rng, const Workspace& ws);

// Deterministic representative of the pose within the shape's discrete
// symmetry group (box/ellipsoid: the three 180-degree flips; cylinder: the
// upside-down flip). Labels stay consistent across symmetric views so the
// conditional pose distribution is learnable; the continuous y symmetry is
// left free.
se3::Rotation canonicalize_rotation(Category c, const se3::Rotation& r);

struct GenConfig {
    std::vector<Category> categories{Category::box, Category::cylinder, Category::cone,
                                     Category::ellipsoid};
    std::size_t count_per_category = 500;
    double size_min = 0.08;
    double size_max = 0.26;
    double min_dim_gap = 0.2;  // min relative gap between sorted box/ellipsoid dims
    double jitter = 0.002;
    double workspace = 0.3;
    std::size_t n_surface = 4096;
    std::uint64_t seed = 1;

    std::string echo() const;  // canonical key=value text
};

GenConfig parse_gen_config(const std::string& text);
GenConfig load_gen_config(const std::string& path);

struct DatasetFile {
    GenConfig config;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> per_category_counts;  // aligned with config.categories
    std::vector<SceneSample> records;
};

DatasetFile generate_dataset(const GenConfig& config, std::uint64_t seed);
void save_dataset(const DatasetFile& ds, const std::string& path);
DatasetFile load_dataset(const std::string& path);

}  // namespace posediff::data
