#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gss/errors.hpp"
#include "gss/vecmath.hpp"

namespace gss {

// Per-Gaussian parameter row layout (59 scalars):
//   [0,3)   mean (world units)
//   [3,6)   scale (log-scale)
//   [6,10)  quaternion (w,x,y,z)
//   [10]    opacity (pre-sigmoid logit)
//   [11,59) spherical harmonics, coefficient-major: sh[k][channel] at 11 + 3k + channel
// The geometric tier is the first 10 columns, the non-geometric tier the
// remaining 49.
inline constexpr int kGeoDim = 10;
inline constexpr int kNonGeoDim = 49;
inline constexpr int kParamDim = 59;
inline constexpr int kShCoeffs = 16;   // degree-3 storage, 3*(L+1)^2 active scalars
inline constexpr int kShScalars = 48;

inline constexpr int kColMean = 0;
inline constexpr int kColScale = 3;
inline constexpr int kColQuat = 6;
inline constexpr int kColOpacity = 10;
inline constexpr int kColSh = 11;

inline int active_sh_scalars(int degree) { return 3 * (degree + 1) * (degree + 1); }

template <class S> struct GaussianSet {
  int count = 0;
  std::vector<S> mean;        // N*3
  std::vector<S> scale;       // N*3, log-scale
  std::vector<S> quaternion;  // N*4, (w,x,y,z)
  std::vector<S> opacity;     // N, logit
  std::vector<S> sh;          // N*48, coefficient-major
  int sh_degree = 3;

  void resize(int n) {
    count = n;
    mean.assign(size_t(n) * 3, S(0));
    scale.assign(size_t(n) * 3, S(0));
    quaternion.assign(size_t(n) * 4, S(0));
    opacity.assign(size_t(n), S(0));
    sh.assign(size_t(n) * kShScalars, S(0));
  }

  Vec3<S> mean_at(int i) const { return {mean[i * 3], mean[i * 3 + 1], mean[i * 3 + 2]}; }
  Vec3<S> scale_at(int i) const { return {scale[i * 3], scale[i * 3 + 1], scale[i * 3 + 2]}; }
  Vec4<S> quat_at(int i) const {
    return {quaternion[i * 4], quaternion[i * 4 + 1], quaternion[i * 4 + 2], quaternion[i * 4 + 3]};
  }

  // Gathers one Gaussian into the 59-scalar row layout.
  void full_row(int i, S* out) const {
    for (int k = 0; k < 3; ++k) out[kColMean + k] = mean[i * 3 + k];
    for (int k = 0; k < 3; ++k) out[kColScale + k] = scale[i * 3 + k];
    for (int k = 0; k < 4; ++k) out[kColQuat + k] = quaternion[i * 4 + k];
    out[kColOpacity] = opacity[i];
    for (int k = 0; k < kShScalars; ++k) out[kColSh + k] = sh[i * kShScalars + k];
  }

  void set_full_row(int i, const S* row) {
    for (int k = 0; k < 3; ++k) mean[i * 3 + k] = row[kColMean + k];
    for (int k = 0; k < 3; ++k) scale[i * 3 + k] = row[kColScale + k];
    for (int k = 0; k < 4; ++k) quaternion[i * 4 + k] = row[kColQuat + k];
    opacity[i] = row[kColOpacity];
    for (int k = 0; k < kShScalars; ++k) sh[i * kShScalars + k] = row[kColSh + k];
  }
};

template <class S> struct Camera {
  Mat3<S> rot;      // world -> camera
  Vec3<S> trans;    // p_cam = rot * p_world + trans
  S fx{}, fy{};     // pixels
  S cx{}, cy{};     // pixels
  int width = 0, height = 0;
  S near_plane{}, far_plane{};

  Vec3<S> to_camera(const Vec3<S>& p_world) const { return rot.mul(p_world) + trans; }
  Vec3<S> position() const {
    const Vec3<S> t{-trans.x, -trans.y, -trans.z};
    return rot.mul_transposed(t);
  }

  void validate() const {
    if (!(near_plane > S(0)) || !(far_plane > near_plane))
      throw ConfigError("camera: require 0 < near < far");
    if (width < 1 || height < 1) throw ConfigError("camera: require W, H >= 1");
  }
};

// Camera at `eye` looking toward `target`, +y-ish up, z forward.
template <class S>
Camera<S> look_at_camera(Vec3<S> eye, Vec3<S> target, S fx, S fy, int w, int h, S near_p, S far_p,
                         Vec3<S> up = {S(0), S(1), S(0)}) {
  Vec3<S> fwd = target - eye;
  const S fn = fwd.norm();
  fwd = fwd * (S(1) / fn);
  // right = fwd x up
  Vec3<S> right{fwd.y * up.z - fwd.z * up.y, fwd.z * up.x - fwd.x * up.z, fwd.x * up.y - fwd.y * up.x};
  const S rn = right.norm();
  if (rn < S(1e-8)) {
    up = {S(1), S(0), S(0)};
    right = {fwd.y * up.z - fwd.z * up.y, fwd.z * up.x - fwd.x * up.z, fwd.x * up.y - fwd.y * up.x};
  }
  right = right * (S(1) / right.norm());
  const Vec3<S> down{fwd.y * right.z - fwd.z * right.y, fwd.z * right.x - fwd.x * right.z,
                     fwd.x * right.y - fwd.y * right.x};
  Camera<S> cam;
  cam.rot.m[0][0] = right.x; cam.rot.m[0][1] = right.y; cam.rot.m[0][2] = right.z;
  cam.rot.m[1][0] = down.x;  cam.rot.m[1][1] = down.y;  cam.rot.m[1][2] = down.z;
  cam.rot.m[2][0] = fwd.x;   cam.rot.m[2][1] = fwd.y;   cam.rot.m[2][2] = fwd.z;
  const Vec3<S> re = cam.rot.mul(eye);
  cam.trans = {-re.x, -re.y, -re.z};
  cam.fx = fx; cam.fy = fy;
  cam.cx = S(w) / S(2); cam.cy = S(h) / S(2);
  cam.width = w; cam.height = h;
  cam.near_plane = near_p; cam.far_plane = far_p;
  return cam;
}

struct PointCloud {
  std::vector<float> positions;  // M*3
  std::vector<float> colors;     // M*3 in [0,1]; empty when the source had none
  int size() const { return int(positions.size() / 3); }
};

struct InitConfig {
  int knn = 3;
  double init_opacity = 0.1;  // pre-activation value; stored as logit
  int sh_degree = 3;
  double min_knn_dist = 0.01;  // fallback when a point has no neighbor
};

inline double logit(double p) { return std::log(p) - std::log(1.0 - p); }

// SH degree-0 basis constant (Y_00).
inline constexpr double kShC0 = 0.28209479177387814;

// One Gaussian per point: mean = position, identity rotation, per-axis scale
// from the log mean distance to the k nearest neighbors, opacity from config,
// DC color term from the point color (0.5 gray when absent).
template <class S> GaussianSet<S> init_gaussians(const PointCloud& pc, const InitConfig& cfg = {}) {
  const int m = pc.size();
  if (m < 1) throw ConfigError("init_gaussians: point cloud is empty");
  GaussianSet<S> gs;
  gs.resize(m);
  gs.sh_degree = cfg.sh_degree;

  // Exact O(M^2) kNN; desk-scale point counts.
  const int k = std::max(1, std::min(cfg.knn, m - 1));
  std::vector<double> best(static_cast<size_t>(k), 0.0);
  for (int i = 0; i < m; ++i) {
    double mean_dist = cfg.min_knn_dist;
    if (m > 1) {
      int filled = 0;
      for (int j = 0; j < m; ++j) {
        if (j == i) continue;
        const double dx = double(pc.positions[j * 3]) - pc.positions[i * 3];
        const double dy = double(pc.positions[j * 3 + 1]) - pc.positions[i * 3 + 1];
        const double dz = double(pc.positions[j * 3 + 2]) - pc.positions[i * 3 + 2];
        const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (filled < k) {
          best[filled++] = d;
          for (int b = filled - 1; b > 0 && best[b] < best[b - 1]; --b) std::swap(best[b], best[b - 1]);
        } else if (d < best[k - 1]) {
          best[k - 1] = d;
          for (int b = k - 1; b > 0 && best[b] < best[b - 1]; --b) std::swap(best[b], best[b - 1]);
        }
      }
      double s = 0;
      for (int b = 0; b < filled; ++b) s += best[b];
      mean_dist = filled > 0 ? s / filled : cfg.min_knn_dist;
      if (mean_dist < cfg.min_knn_dist) mean_dist = cfg.min_knn_dist;
    }
    const S log_s = S(std::log(mean_dist));
    for (int a = 0; a < 3; ++a) {
      gs.mean[i * 3 + a] = S(pc.positions[i * 3 + a]);
      gs.scale[i * 3 + a] = log_s;
    }
    gs.quaternion[i * 4] = S(1);
    gs.opacity[i] = S(logit(cfg.init_opacity));
    for (int c = 0; c < 3; ++c) {
      const double col = pc.colors.empty() ? 0.5 : double(pc.colors[i * 3 + c]);
      gs.sh[i * kShScalars + c] = S((col - 0.5) / kShC0);
    }
  }
  return gs;
}

}  // namespace gss
