#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace s3f {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    double& operator[](int i) { return (&x)[i]; }
    double operator[](int i) const { return (&x)[i]; }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm2(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) { double n = norm(v); return n > 0 ? v / n : Vec3{0, 0, 0}; }
inline bool finite(const Vec3& v) {
    return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double& operator()(int r, int c) { return m[r * 3 + c]; }
    double operator()(int r, int c) const { return m[r * 3 + c]; }

    static Mat3 identity() { return Mat3{}; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }
    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
        return r;
    }
    Mat3 scaled(double s) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] * s;
        return r;
    }
    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }
    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
    Mat3 inverse() const {
        double d = det();
        Mat3 r;
        r(0, 0) = (m[4] * m[8] - m[5] * m[7]) / d;
        r(0, 1) = (m[2] * m[7] - m[1] * m[8]) / d;
        r(0, 2) = (m[1] * m[5] - m[2] * m[4]) / d;
        r(1, 0) = (m[5] * m[6] - m[3] * m[8]) / d;
        r(1, 1) = (m[0] * m[8] - m[2] * m[6]) / d;
        r(1, 2) = (m[2] * m[3] - m[0] * m[5]) / d;
        r(2, 0) = (m[3] * m[7] - m[4] * m[6]) / d;
        r(2, 1) = (m[1] * m[6] - m[0] * m[7]) / d;
        r(2, 2) = (m[0] * m[4] - m[1] * m[3]) / d;
        return r;
    }
};

// Rodrigues rotation from an axis-angle vector.
inline Mat3 rotation_from_axis_angle(const Vec3& w) {
    double th = norm(w);
    Mat3 r = Mat3::identity();
    if (th < 1e-12) {
        // First-order terms keep gradients smooth near zero.
        r(0, 1) = -w.z; r(0, 2) = w.y;
        r(1, 0) = w.z;  r(1, 2) = -w.x;
        r(2, 0) = -w.y; r(2, 1) = w.x;
        return r;
    }
    Vec3 a = w / th;
    double c = std::cos(th), s = std::sin(th), t = 1 - c;
    r(0, 0) = c + a.x * a.x * t;
    r(0, 1) = a.x * a.y * t - a.z * s;
    r(0, 2) = a.x * a.z * t + a.y * s;
    r(1, 0) = a.y * a.x * t + a.z * s;
    r(1, 1) = c + a.y * a.y * t;
    r(1, 2) = a.y * a.z * t - a.x * s;
    r(2, 0) = a.z * a.x * t - a.y * s;
    r(2, 1) = a.z * a.y * t + a.x * s;
    r(2, 2) = c + a.z * a.z * t;
    return r;
}

// Rigid transform x -> R x + t.
struct Rigid {
    Mat3 R;
    Vec3 t;

    static Rigid identity() { return Rigid{Mat3::identity(), {0, 0, 0}}; }
    Vec3 apply(const Vec3& x) const { return R * x + t; }
    Rigid compose(const Rigid& o) const { return Rigid{R * o.R, R * o.t + t}; }
    Rigid inverse() const {
        Mat3 rt = R.transposed();
        return Rigid{rt, -(rt * t)};
    }
};

// Affine transform with a general linear part (blended rigids are affine, not rigid).
struct Affine {
    Mat3 A;
    Vec3 t;

    static Affine identity() { return Affine{Mat3::identity(), {0, 0, 0}}; }
    Vec3 apply(const Vec3& x) const { return A * x + t; }
    Affine inverse() const {
        Mat3 ai = A.inverse();
        return Affine{ai, -(ai * t)};
    }
};

}  // namespace s3f
