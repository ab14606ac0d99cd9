#pragma once

#include <cmath>
#include <cstddef>

// Small fixed-size linear algebra used by projection and the rasterizer.
// Everything is written out element-wise so the arithmetic is identical
// between the float and double instantiations and stable across compilers.

namespace gss {

template <class S> struct Vec2 {
  S x{}, y{};
  Vec2() = default;
  Vec2(S x_, S y_) : x(x_), y(y_) {}
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(S s) const { return {x * s, y * s}; }
};

template <class S> struct Vec3 {
  S x{}, y{}, z{};
  Vec3() = default;
  Vec3(S x_, S y_, S z_) : x(x_), y(y_), z(z_) {}
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(S s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  S dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  S norm() const { return std::sqrt(dot(*this)); }
};

template <class S> struct Vec4 {
  S w{}, x{}, y{}, z{};
  Vec4() = default;
  Vec4(S w_, S x_, S y_, S z_) : w(w_), x(x_), y(y_), z(z_) {}
  S norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

// Row-major 3x3.
template <class S> struct Mat3 {
  S m[3][3]{};
  static Mat3 identity() {
    Mat3 r;
    r.m[0][0] = r.m[1][1] = r.m[2][2] = S(1);
    return r;
  }
  Vec3<S> mul(const Vec3<S>& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
  }
  Vec3<S> mul_transposed(const Vec3<S>& v) const {
    return {m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z};
  }
};

// Rotation matrix from a unit quaternion (w, x, y, z).
template <class S> inline Mat3<S> quat_to_rot(const Vec4<S>& q) {
  const S w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3<S> r;
  r.m[0][0] = S(1) - S(2) * (y * y + z * z);
  r.m[0][1] = S(2) * (x * y - w * z);
  r.m[0][2] = S(2) * (x * z + w * y);
  r.m[1][0] = S(2) * (x * y + w * z);
  r.m[1][1] = S(1) - S(2) * (x * x + z * z);
  r.m[1][2] = S(2) * (y * z - w * x);
  r.m[2][0] = S(2) * (x * z - w * y);
  r.m[2][1] = S(2) * (y * z + w * x);
  r.m[2][2] = S(1) - S(2) * (x * x + y * y);
  return r;
}

// d(R·grad contraction)/dq for a unit quaternion: given G = dL/dR (3x3),
// accumulates dL/d(q_unit).
template <class S> inline Vec4<S> quat_rot_backward(const Vec4<S>& q, const Mat3<S>& G) {
  const S w = q.w, x = q.x, y = q.y, z = q.z;
  auto g = [&](int i, int j) { return G.m[i][j]; };
  Vec4<S> d;
  d.w = S(2) * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  d.x = S(2) * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - S(2) * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                w * g(2, 1) - S(2) * x * g(2, 2));
  d.y = S(2) * (-S(2) * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                z * g(2, 1) - S(2) * y * g(2, 2));
  d.z = S(2) * (-S(2) * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - S(2) * z * g(1, 1) + y * g(1, 2) +
                x * g(2, 0) + y * g(2, 1));
  return d;
}

// Chain rule through q_unit = q / |q|.
template <class S> inline Vec4<S> quat_normalize_backward(const Vec4<S>& q_raw, const Vec4<S>& d_unit) {
  const S n = q_raw.norm();
  const S inv = S(1) / n;
  const Vec4<S> u{q_raw.w * inv, q_raw.x * inv, q_raw.y * inv, q_raw.z * inv};
  const S dotp = u.w * d_unit.w + u.x * d_unit.x + u.y * d_unit.y + u.z * d_unit.z;
  return {(d_unit.w - u.w * dotp) * inv, (d_unit.x - u.x * dotp) * inv,
          (d_unit.y - u.y * dotp) * inv, (d_unit.z - u.z * dotp) * inv};
}

}  // namespace gss
