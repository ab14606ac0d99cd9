#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "gss/scene.hpp"
#include "gss/vecmath.hpp"

namespace gss {

// Real spherical harmonics basis up to degree 3, 3DGS sign conventions.
namespace sh_consts {
inline constexpr double C0 = 0.28209479177387814;
inline constexpr double C1 = 0.4886025119029199;
inline constexpr double C2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                 -1.0925484305920792, 0.5462742152960396};
inline constexpr double C3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                                 0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                 -0.5900435899266435};
}  // namespace sh_consts

// Basis values for a unit direction; fills (L+1)^2 entries.
template <class S> inline void sh_basis(Vec3<S> d, int degree, S* out) {
  using namespace sh_consts;
  const S x = d.x, y = d.y, z = d.z;
  out[0] = S(C0);
  if (degree < 1) return;
  out[1] = S(-C1) * y;
  out[2] = S(C1) * z;
  out[3] = S(-C1) * x;
  if (degree < 2) return;
  const S xx = x * x, yy = y * y, zz = z * z;
  const S xy = x * y, yz = y * z, xz = x * z;
  out[4] = S(C2[0]) * xy;
  out[5] = S(C2[1]) * yz;
  out[6] = S(C2[2]) * (S(2) * zz - xx - yy);
  out[7] = S(C2[3]) * xz;
  out[8] = S(C2[4]) * (xx - yy);
  if (degree < 3) return;
  out[9] = S(C3[0]) * y * (S(3) * xx - yy);
  out[10] = S(C3[1]) * xy * z;
  out[11] = S(C3[2]) * y * (S(4) * zz - xx - yy);
  out[12] = S(C3[3]) * z * (S(2) * zz - S(3) * xx - S(3) * yy);
  out[13] = S(C3[4]) * x * (S(4) * zz - xx - yy);
  out[14] = S(C3[5]) * z * (xx - yy);
  out[15] = S(C3[6]) * x * (xx - S(3) * yy);
}

// d(basis_k)/d(direction) for each basis function.
template <class S> inline void sh_basis_grad(Vec3<S> d, int degree, Vec3<S>* out) {
  using namespace sh_consts;
  const S x = d.x, y = d.y, z = d.z;
  out[0] = {S(0), S(0), S(0)};
  if (degree < 1) return;
  out[1] = {S(0), S(-C1), S(0)};
  out[2] = {S(0), S(0), S(C1)};
  out[3] = {S(-C1), S(0), S(0)};
  if (degree < 2) return;
  out[4] = {S(C2[0]) * y, S(C2[0]) * x, S(0)};
  out[5] = {S(0), S(C2[1]) * z, S(C2[1]) * y};
  out[6] = {S(C2[2]) * S(-2) * x, S(C2[2]) * S(-2) * y, S(C2[2]) * S(4) * z};
  out[7] = {S(C2[3]) * z, S(0), S(C2[3]) * x};
  out[8] = {S(C2[4]) * S(2) * x, S(C2[4]) * S(-2) * y, S(0)};
  if (degree < 3) return;
  out[9] = {S(C3[0]) * S(6) * x * y, S(C3[0]) * (S(3) * x * x - S(3) * y * y), S(0)};
  out[10] = {S(C3[1]) * y * z, S(C3[1]) * x * z, S(C3[1]) * x * y};
  out[11] = {S(C3[2]) * S(-2) * x * y, S(C3[2]) * (S(4) * z * z - x * x - S(3) * y * y), S(C3[2]) * S(8) * y * z};
  out[12] = {S(C3[3]) * S(-6) * x * z, S(C3[3]) * S(-6) * y * z, S(C3[3]) * (S(6) * z * z - S(3) * x * x - S(3) * y * y)};
  out[13] = {S(C3[4]) * (S(4) * z * z - S(3) * x * x - y * y), S(C3[4]) * S(-2) * x * y, S(C3[4]) * S(8) * x * z};
  out[14] = {S(C3[5]) * S(2) * x * z, S(C3[5]) * S(-2) * y * z, S(C3[5]) * (x * x - y * y)};
  out[15] = {S(C3[6]) * (S(3) * x * x - S(3) * y * y), S(C3[6]) * S(-6) * x * y, S(0)};
}

// coeffs: 48 scalars, coefficient-major (coeffs[3k + channel]).
// Returns the +0.5-offset color clamped to [0,1].
template <class S> inline Vec3<S> eval_sh(const S* coeffs, Vec3<S> view_dir, int degree) {
  S basis[kShCoeffs];
  sh_basis(view_dir, degree, basis);
  const int n = (degree + 1) * (degree + 1);
  S rgb[3] = {S(0.5), S(0.5), S(0.5)};
  for (int k = 0; k < n; ++k)
    for (int c = 0; c < 3; ++c) rgb[c] += basis[k] * coeffs[3 * k + c];
  for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(rgb[c], S(0), S(1));
  return {rgb[0], rgb[1], rgb[2]};
}

// Backward of eval_sh. d_rgb is dL/d(clamped color); accumulates dL/dcoeffs
// (48 entries) and returns dL/d(view_dir). clamp_mask comes from the forward
// pre-clamp values.
template <class S>
inline Vec3<S> eval_sh_backward(const S* coeffs, Vec3<S> view_dir, int degree, const Vec3<S>& d_rgb,
                                const std::array<bool, 3>& clamped, S* d_coeffs) {
  S basis[kShCoeffs];
  Vec3<S> bgrad[kShCoeffs];
  sh_basis(view_dir, degree, basis);
  sh_basis_grad(view_dir, degree, bgrad);
  const S g[3] = {clamped[0] ? S(0) : d_rgb.x, clamped[1] ? S(0) : d_rgb.y, clamped[2] ? S(0) : d_rgb.z};
  const int n = (degree + 1) * (degree + 1);
  Vec3<S> d_dir{S(0), S(0), S(0)};
  for (int k = 0; k < n; ++k) {
    S coef_dot = S(0);
    for (int c = 0; c < 3; ++c) {
      d_coeffs[3 * k + c] += basis[k] * g[c];
      coef_dot += coeffs[3 * k + c] * g[c];
    }
    d_dir += bgrad[k] * coef_dot;
  }
  return d_dir;
}

// Whether each channel was clamped in the forward evaluation.
template <class S>
inline std::array<bool, 3> eval_sh_clamp_mask(const S* coeffs, Vec3<S> view_dir, int degree) {
  S basis[kShCoeffs];
  sh_basis(view_dir, degree, basis);
  const int n = (degree + 1) * (degree + 1);
  std::array<bool, 3> m{};
  for (int c = 0; c < 3; ++c) {
    S v = S(0.5);
    for (int k = 0; k < n; ++k) v += basis[k] * coeffs[3 * k + c];
    m[c] = v < S(0) || v > S(1);
  }
  return m;
}

}  // namespace gss
