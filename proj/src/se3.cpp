#include "posediff/se3.hpp"

#include <algorithm>
#include <cmath>

namespace posediff::se3 {

Mat3 Mat3::identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
}

double Mat3::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Vec3 Mat3::apply(const Vec3& v) const {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += a(i, k) * b(k, j);
            r(i, j) = acc;
        }
    return r;
}

bool Rotation::is_valid(double tol) const {
    const Mat3 g = m * m.transposed();
    const Mat3 id = Mat3::identity();
    for (int i = 0; i < 9; ++i)
        if (std::abs(g.m[i] - id.m[i]) > tol) return false;
    return std::abs(m.det() - 1.0) <= tol;
}

Rotation rot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Rotation r;
    r.m.m = {1, 0, 0, 0, c, -s, 0, s, c};
    return r;
}

Rotation rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Rotation r;
    r.m.m = {c, 0, s, 0, 1, 0, -s, 0, c};
    return r;
}

Rotation rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Rotation r;
    r.m.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
}

Rot6D rot_to_6d(const Rotation& r) {
    const Vec3 a1 = r.m.col(0), a2 = r.m.col(1);
    return {a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

Rotation gs_orthonormalize(const Rot6D& v) {
    const Vec3 a1 = {v[0], v[1], v[2]};
    const Vec3 a2 = {v[3], v[4], v[5]};
    const double n1 = norm(a1);
    if (n1 < 1e-12) throw DegenerateInputError("gs_orthonormalize: first column has vanishing norm");
    const Vec3 b1 = {a1[0] / n1, a1[1] / n1, a1[2] / n1};
    const double proj = dot(b1, a2);
    Vec3 u = {a2[0] - proj * b1[0], a2[1] - proj * b1[1], a2[2] - proj * b1[2]};
    const double n2 = norm(u);
    if (n2 < 1e-12)
        throw DegenerateInputError("gs_orthonormalize: columns are parallel (residual below 1e-12)");
    const Vec3 b2 = {u[0] / n2, u[1] / n2, u[2] / n2};
    const Vec3 b3 = cross(b1, b2);
    Rotation r;
    r.m.m = {b1[0], b2[0], b3[0], b1[1], b2[1], b3[1], b1[2], b2[2], b3[2]};
    return r;
}

double geodesic_distance(const Rotation& a, const Rotation& b) {
    // arccos((tr - 1)/2) evaluated as atan2(2 sin, 2 cos); exact near 0 and pi
    // where the arccos form loses eight digits to round-off
    const Mat3 q = a.m * b.m.transposed();
    const Vec3 v = {q(2, 1) - q(1, 2), q(0, 2) - q(2, 0), q(1, 0) - q(0, 1)};
    return std::atan2(norm(v), q.trace() - 1.0);
}

double y_axis_distance(const Rotation& a, const Rotation& b) {
    const Vec3 ya = a.m.col(1), yb = b.m.col(1);
    const Vec3 diff = {ya[0] - yb[0], ya[1] - yb[1], ya[2] - yb[2]};
    const Vec3 sum = {ya[0] + yb[0], ya[1] + yb[1], ya[2] + yb[2]};
    return 2.0 * std::atan2(norm(diff), norm(sum));
}

Rotation sample_uniform_rotation(Rng& rng) {
    double q[4];
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (auto& c : q) {
            c = rng.normal();
            n2 += c * c;
        }
    } while (n2 < 1e-80);
    const double inv = 1.0 / std::sqrt(n2);
    const double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;
    Rotation r;
    r.m.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
             2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
    return r;
}

PoseVec9 pose_pack(const Pose& p) {
    const Rot6D r = rot_to_6d(p.rotation);
    return {r[0], r[1], r[2], r[3], r[4], r[5], p.translation[0], p.translation[1],
            p.translation[2]};
}

Pose pose_unpack(const PoseVec9& v) {
    Pose p;
    p.rotation = gs_orthonormalize({v[0], v[1], v[2], v[3], v[4], v[5]});
    p.translation = {v[6], v[7], v[8]};
    return p;
}

}  // namespace posediff::se3
