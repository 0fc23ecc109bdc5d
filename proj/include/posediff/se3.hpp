#pragma once

#include <array>
#include <cstddef>

#include "posediff/common.hpp"
#include "posediff/rng.hpp"

namespace posediff::se3 {

using Vec3 = std::array<double, 3>;
using Rot6D = std::array<double, 6>;     // first two columns of a rotation candidate
using PoseVec9 = std::array<double, 9>;  // Rot6D followed by translation

struct Mat3 {
    std::array<double, 9> m{};  // row-major

    double& operator()(int r, int c) { return m[r * 3 + c]; }
    double operator()(int r, int c) const { return m[r * 3 + c]; }

    static Mat3 identity();
    Mat3 transposed() const;
    double trace() const { return m[0] + m[4] + m[8]; }
    double det() const;
    Vec3 col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }
    Vec3 apply(const Vec3& v) const;
};

Mat3 operator*(const Mat3& a, const Mat3& b);

struct Rotation {
    Mat3 m;

    // RtR = I and det = +1, both within tol
    bool is_valid(double tol = 1e-9) const;
};

struct Pose {
    Rotation rotation;
    Vec3 translation{};
};

Rotation rot_x(double angle);
Rotation rot_y(double angle);
Rotation rot_z(double angle);

Rot6D rot_to_6d(const Rotation& r);

// Gram-Schmidt style orthonormalization of the 6D representation; throws
// DegenerateInputError when the first column vanishes or the columns are
// parallel (residual below 1e-12).
Rotation gs_orthonormalize(const Rot6D& v);

double geodesic_distance(const Rotation& a, const Rotation& b);

// Angle between the images of e_y; invariant under rotations about y.
double y_axis_distance(const Rotation& a, const Rotation& b);

// Haar-uniform rotation via a normalized 4-vector of standard normals.
Rotation sample_uniform_rotation(Rng& rng);

PoseVec9 pose_pack(const Pose& p);
Pose pose_unpack(const PoseVec9& v);

inline double dot(const Vec3& a, const Vec3& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
Vec3 cross(const Vec3& a, const Vec3& b);
double norm(const Vec3& v);

}  // namespace posediff::se3
