#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "gss/scene.hpp"
#include "gss/sh.hpp"
#include "gss/vecmath.hpp"

namespace gss {

// Compositing constants (3DGS reference conventions).
inline constexpr double kAlphaClamp = 0.999;
inline constexpr double kTransmitStop = 1e-4;
inline constexpr double kLowPass = 0.3;   // px^2 added to cov2d diagonal
inline constexpr double kCullSigma = 3.0;

template <class S> struct RowView {
  const S* data = nullptr;
  size_t stride = 0;
  const S* row(size_t i) const { return data + i * stride; }
};

// Non-geometric rows indexed either compactly (forwarded slice, row = slot,
// optionally remapped through slot_map for split sub-passes) or by global id
// (dense arena).
template <class S> struct NonGeoView {
  const S* data = nullptr;
  size_t stride = 0;
  bool compact = false;
  const int* slot_map = nullptr;
  const S* row(int slot, int id) const {
    const size_t r = compact ? size_t(slot_map ? slot_map[slot] : slot) : size_t(id);
    return data + r * stride;
  }
};

// Closed rectangle in pixel units; pixel (row i, col j) has center (j+0.5, i+0.5).
template <class S> struct Viewport {
  S x0{}, x1{}, y0{}, y1{};
  static Viewport full(int w, int h) { return {S(0), S(w), S(0), S(h)}; }
};

template <class S> struct Image {
  int width = 0, height = 0;
  std::vector<S> data;  // height*width*3, row-major
  Image() = default;
  Image(int w, int h) : width(w), height(h), data(size_t(w) * h * 3, S(0)) {}
  S& at(int y, int x, int c) { return data[(size_t(y) * width + x) * 3 + c]; }
  S at(int y, int x, int c) const { return data[(size_t(y) * width + x) * 3 + c]; }
};

template <class S> struct Projected2D {
  Vec2<S> mean2d;
  S cov_a{}, cov_b{}, cov_c{};  // upper-triangular 2x2 covariance
  S depth{};
  S radius{};                   // 3σ extent from the major eigenvalue
  Vec3<S> rgb;
  S alpha_base{};               // sigmoid(opacity)
  bool valid = false;
};

template <class S> struct RenderScene {
  std::span<const int> ids;  // sorted valid ids
  RowView<S> geo;            // by global id: mean3, scale3, quat4
  NonGeoView<S> nongeo;      // opacity1, sh48
  int sh_degree = 3;
  Vec3<S> background{S(0), S(0), S(0)};
  S low_pass = S(kLowPass);
};

// ---------------------------------------------------------------------------
// Projection

template <class S> struct ProjectBackward {
  // Saved forward intermediates needed by the backward chain.
  Vec3<S> t;          // camera-space mean
  Vec4<S> q_raw;
  Vec4<S> q_unit;
  Vec3<S> exp_scale;
};

template <class S>
Projected2D<S> project_geo(const S* g, const Camera<S>& cam, S low_pass, ProjectBackward<S>* save = nullptr) {
  Projected2D<S> out;
  const Vec3<S> mean{g[0], g[1], g[2]};
  const Vec3<S> t = cam.to_camera(mean);
  if (!(t.z > S(1e-9))) return out;
  const S iz = S(1) / t.z;
  out.depth = t.z;
  out.mean2d = {cam.fx * t.x * iz + cam.cx, cam.fy * t.y * iz + cam.cy};

  const Vec4<S> q_raw{g[6], g[7], g[8], g[9]};
  const S qn = q_raw.norm();
  const S qinv = qn > S(1e-12) ? S(1) / qn : S(0);
  const Vec4<S> q{q_raw.w * qinv, q_raw.x * qinv, q_raw.y * qinv, q_raw.z * qinv};
  const Mat3<S> R = quat_to_rot(q);
  const Vec3<S> es{std::exp(g[3]), std::exp(g[4]), std::exp(g[5])};

  // Sigma_world = B B^T with B = R diag(exp(scale))
  S B[3][3];
  for (int i = 0; i < 3; ++i) {
    B[i][0] = R.m[i][0] * es.x;
    B[i][1] = R.m[i][1] * es.y;
    B[i][2] = R.m[i][2] * es.z;
  }
  S sig[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) sig[i][j] = B[i][0] * B[j][0] + B[i][1] * B[j][1] + B[i][2] * B[j][2];

  // M rows: J * W restricted to the two image rows.
  const S j00 = cam.fx * iz, j02 = -cam.fx * t.x * iz * iz;
  const S j11 = cam.fy * iz, j12 = -cam.fy * t.y * iz * iz;
  const auto& W = cam.rot.m;
  const Vec3<S> m0{j00 * W[0][0] + j02 * W[2][0], j00 * W[0][1] + j02 * W[2][1], j00 * W[0][2] + j02 * W[2][2]};
  const Vec3<S> m1{j11 * W[1][0] + j12 * W[2][0], j11 * W[1][1] + j12 * W[2][1], j11 * W[1][2] + j12 * W[2][2]};

  auto sig_mul = [&](const Vec3<S>& v) -> Vec3<S> {
    return {sig[0][0] * v.x + sig[0][1] * v.y + sig[0][2] * v.z,
            sig[1][0] * v.x + sig[1][1] * v.y + sig[1][2] * v.z,
            sig[2][0] * v.x + sig[2][1] * v.y + sig[2][2] * v.z};
  };
  const Vec3<S> v0 = sig_mul(m0), v1 = sig_mul(m1);
  out.cov_a = m0.dot(v0) + low_pass;
  out.cov_b = m0.dot(v1);
  out.cov_c = m1.dot(v1) + low_pass;

  const S mid = (out.cov_a + out.cov_c) / S(2);
  const S half = (out.cov_a - out.cov_c) / S(2);
  const S lmax = mid + std::sqrt(half * half + out.cov_b * out.cov_b);
  out.radius = S(kCullSigma) * std::sqrt(std::max(lmax, S(0)));
  out.valid = true;

  if (save) {
    save->t = t;
    save->q_raw = q_raw;
    save->q_unit = q;
    save->exp_scale = es;
  }
  return out;
}

// Chains (d_mean2d, d_cov[a,b,c]) back to the 10 geometric parameters,
// accumulating into d_geo.
template <class S>
void project_geo_backward(const S* g, const Camera<S>& cam, const ProjectBackward<S>& sv, Vec2<S> d_mean2d,
                          S da, S db, S dc, S* d_geo) {
  const Vec3<S>& t = sv.t;
  const S iz = S(1) / t.z;
  const S iz2 = iz * iz;
  const Mat3<S> R = quat_to_rot(sv.q_unit);
  const Vec3<S>& es = sv.exp_scale;

  S B[3][3];
  for (int i = 0; i < 3; ++i) {
    B[i][0] = R.m[i][0] * es.x;
    B[i][1] = R.m[i][1] * es.y;
    B[i][2] = R.m[i][2] * es.z;
  }
  S sig[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) sig[i][j] = B[i][0] * B[j][0] + B[i][1] * B[j][1] + B[i][2] * B[j][2];

  const S j00 = cam.fx * iz, j02 = -cam.fx * t.x * iz2;
  const S j11 = cam.fy * iz, j12 = -cam.fy * t.y * iz2;
  const auto& W = cam.rot.m;
  const Vec3<S> m0{j00 * W[0][0] + j02 * W[2][0], j00 * W[0][1] + j02 * W[2][1], j00 * W[0][2] + j02 * W[2][2]};
  const Vec3<S> m1{j11 * W[1][0] + j12 * W[2][0], j11 * W[1][1] + j12 * W[2][1], j11 * W[1][2] + j12 * W[2][2]};

  auto sig_mul = [&](const Vec3<S>& v) -> Vec3<S> {
    return {sig[0][0] * v.x + sig[0][1] * v.y + sig[0][2] * v.z,
            sig[1][0] * v.x + sig[1][1] * v.y + sig[1][2] * v.z,
            sig[2][0] * v.x + sig[2][1] * v.y + sig[2][2] * v.z};
  };
  const Vec3<S> v0 = sig_mul(m0), v1 = sig_mul(m1);

  const Vec3<S> d_m0 = v0 * (S(2) * da) + v1 * db;
  const Vec3<S> d_m1 = v1 * (S(2) * dc) + v0 * db;

  // dSig (as independent entries), then through B = R diag(es).
  S dSig[3][3];
  const S m0a[3] = {m0.x, m0.y, m0.z};
  const S m1a[3] = {m1.x, m1.y, m1.z};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      dSig[i][j] = da * m0a[i] * m0a[j] + db * m0a[i] * m1a[j] + dc * m1a[i] * m1a[j];

  S dB[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      S acc = S(0);
      for (int k = 0; k < 3; ++k) acc += (dSig[i][k] + dSig[k][i]) * B[k][j];
      dB[i][j] = acc;
    }

  Mat3<S> dR;
  for (int i = 0; i < 3; ++i) {
    dR.m[i][0] = dB[i][0] * es.x;
    dR.m[i][1] = dB[i][1] * es.y;
    dR.m[i][2] = dB[i][2] * es.z;
  }
  for (int j = 0; j < 3; ++j) {
    S acc = S(0);
    for (int i = 0; i < 3; ++i) acc += dB[i][j] * R.m[i][j];
    d_geo[kColScale + j] += acc * (j == 0 ? es.x : (j == 1 ? es.y : es.z));
  }
  const Vec4<S> dq_unit = quat_rot_backward(sv.q_unit, dR);
  const Vec4<S> dq = quat_normalize_backward(sv.q_raw, dq_unit);
  d_geo[kColQuat + 0] += dq.w;
  d_geo[kColQuat + 1] += dq.x;
  d_geo[kColQuat + 2] += dq.y;
  d_geo[kColQuat + 3] += dq.z;

  // dJ entries via m = J*W rows.
  const S dj00 = d_m0.x * W[0][0] + d_m0.y * W[0][1] + d_m0.z * W[0][2];
  const S dj02 = d_m0.x * W[2][0] + d_m0.y * W[2][1] + d_m0.z * W[2][2];
  const S dj11 = d_m1.x * W[1][0] + d_m1.y * W[1][1] + d_m1.z * W[1][2];
  const S dj12 = d_m1.x * W[2][0] + d_m1.y * W[2][1] + d_m1.z * W[2][2];

  Vec3<S> dt;
  dt.x = d_mean2d.x * cam.fx * iz + dj02 * (-cam.fx * iz2);
  dt.y = d_mean2d.y * cam.fy * iz + dj12 * (-cam.fy * iz2);
  dt.z = d_mean2d.x * (-cam.fx * t.x * iz2) + d_mean2d.y * (-cam.fy * t.y * iz2) + dj00 * (-cam.fx * iz2) +
         dj11 * (-cam.fy * iz2) + dj02 * (S(2) * cam.fx * t.x * iz2 * iz) + dj12 * (S(2) * cam.fy * t.y * iz2 * iz);

  const Vec3<S> d_mean = cam.rot.mul_transposed(dt);
  d_geo[kColMean + 0] += d_mean.x;
  d_geo[kColMean + 1] += d_mean.y;
  d_geo[kColMean + 2] += d_mean.z;
}

// ---------------------------------------------------------------------------
// Frustum culling

// Shared predicate: depth within [near, far], then 3σ box against the viewport.
template <class S>
bool cull_keep(const S* geo_row, const Camera<S>& cam, const Viewport<S>& vp, S low_pass) {
  const Vec3<S> t = cam.to_camera({geo_row[0], geo_row[1], geo_row[2]});
  if (!(t.z >= cam.near_plane && t.z <= cam.far_plane)) return false;
  const Projected2D<S> p = project_geo(geo_row, cam, low_pass);
  if (!p.valid) return false;
  return p.mean2d.x + p.radius >= vp.x0 && p.mean2d.x - p.radius <= vp.x1 &&
         p.mean2d.y + p.radius >= vp.y0 && p.mean2d.y - p.radius <= vp.y1;
}

template <class S>
std::vector<int> frustum_cull(RowView<S> geo, int count, const Camera<S>& cam, const Viewport<S>& vp,
                              S low_pass = S(kLowPass)) {
  std::vector<int> ids;
  for (int i = 0; i < count; ++i)
    if (cull_keep(geo.row(i), cam, vp, low_pass)) ids.push_back(i);
  return ids;
}

// ---------------------------------------------------------------------------
// Rasterization

template <class S> struct PixContrib {
  int32_t slot;  // index into the valid-id list
  S alpha;       // clamped per-contribution alpha
  S trans;       // transmittance before this contribution
};

template <class S> struct RenderAux {
  int px0 = 0, py0 = 0, pw = 0, ph = 0;   // pixel window
  std::vector<int32_t> offsets;           // pw*ph+1, CSR into contribs
  std::vector<int32_t> len;               // used entries per pixel (after early stop)
  std::vector<PixContrib<S>> contribs;    // per pixel, front-to-back
  std::vector<S> final_trans;             // per pixel

  size_t byte_size() const {
    return offsets.size() * 4 + len.size() * 4 + contribs.size() * sizeof(PixContrib<S>) +
           final_trans.size() * sizeof(S);
  }
};

template <class S> struct RenderResult {
  Image<S> image;                      // sized to the viewport pixel window
  RenderAux<S> aux;
  std::vector<Projected2D<S>> proj;    // per slot
  std::vector<ProjectBackward<S>> proj_save;
};

namespace detail {

struct PixWindow {
  int px0, px1, py0, py1;  // half-open pixel ranges
};

template <class S> inline PixWindow viewport_pixels(const Viewport<S>& vp) {
  // pixel center j+0.5 in [x0, x1)
  const int px0 = int(std::ceil(double(vp.x0) - 0.5));
  const int px1 = int(std::ceil(double(vp.x1) - 0.5));
  const int py0 = int(std::ceil(double(vp.y0) - 0.5));
  const int py1 = int(std::ceil(double(vp.y1) - 0.5));
  return {std::max(px0, 0), px1, std::max(py0, 0), py1};
}

// Pixel-cover box of a projected Gaussian clipped to the window.
template <class S> inline bool cover_box(const Projected2D<S>& p, const PixWindow& w, PixWindow& out) {
  const double mx = double(p.mean2d.x), my = double(p.mean2d.y), r = double(p.radius);
  out.px0 = std::max(w.px0, int(std::ceil(mx - r - 0.5)));
  out.px1 = std::min(w.px1, int(std::floor(mx + r - 0.5)) + 1);
  out.py0 = std::max(w.py0, int(std::ceil(my - r - 0.5)));
  out.py1 = std::min(w.py1, int(std::floor(my + r - 0.5)) + 1);
  return out.px0 < out.px1 && out.py0 < out.py1;
}

inline void run_rows(int ny, int workers, const std::function<void(int, int, int)>& fn) {
  if (workers <= 1 || ny <= 1) {
    fn(0, ny, 0);
    return;
  }
  const int n = std::min(workers, ny);
  std::vector<std::thread> ts;
  for (int k = 0; k < n; ++k) {
    const int b = ny * k / n, e = ny * (k + 1) / n;
    ts.emplace_back([&fn, b, e, k] { fn(b, e, k); });
  }
  for (auto& t : ts) t.join();
}

}  // namespace detail

// Per-contribution evaluation at a pixel center, shared by the forward,
// fixed-aux, and backward paths.
template <class S> struct ContribEval {
  S alpha{};    // clamped
  S q{};        // Mahalanobis distance
  S weight{};   // exp(-q/2)
  bool clamped = false;
  bool ok = false;  // positive-definite covariance
};

template <class S> inline ContribEval<S> contrib_eval(const Projected2D<S>& p, S cx, S cy) {
  ContribEval<S> r;
  const S det = p.cov_a * p.cov_c - p.cov_b * p.cov_b;
  if (!(det > S(0))) return r;
  const S dx = cx - p.mean2d.x, dy = cy - p.mean2d.y;
  r.q = std::max((p.cov_c * dx * dx - S(2) * p.cov_b * dx * dy + p.cov_a * dy * dy) / det, S(0));
  r.weight = std::exp(S(-0.5) * r.q);
  const S raw = p.alpha_base * r.weight;
  if (raw > S(kAlphaClamp)) {
    r.alpha = S(kAlphaClamp);
    r.clamped = true;
  } else {
    r.alpha = raw;
  }
  r.ok = true;
  return r;
}

// Projects every valid id and evaluates its view-dependent color.
template <class S>
void project_all(const RenderScene<S>& sc, const Camera<S>& cam, std::vector<Projected2D<S>>& proj,
                 std::vector<ProjectBackward<S>>& save) {
  const int n = int(sc.ids.size());
  proj.assign(n, {});
  save.assign(n, {});
  const Vec3<S> campos = cam.position();
  for (int k = 0; k < n; ++k) {
    const int id = sc.ids[k];
    const S* g = sc.geo.row(id);
    proj[k] = project_geo(g, cam, sc.low_pass, &save[k]);
    if (!proj[k].valid) continue;
    const S* ng = sc.nongeo.row(k, id);
    proj[k].alpha_base = S(1) / (S(1) + std::exp(-ng[0]));
    Vec3<S> dir{g[0] - campos.x, g[1] - campos.y, g[2] - campos.z};
    const S dn = dir.norm();
    dir = dn > S(1e-12) ? dir * (S(1) / dn) : Vec3<S>{S(0), S(0), S(1)};
    proj[k].rgb = eval_sh(ng + 1, dir, sc.sh_degree);
  }
}

// Front-to-back alpha compositing over the viewport pixel window.
// Sort key: (depth, id ascending).
template <class S>
RenderResult<S> rasterize_forward(const RenderScene<S>& sc, const Camera<S>& cam, const Viewport<S>& vp,
                                  int workers = 1) {
  RenderResult<S> rr;
  const detail::PixWindow win = detail::viewport_pixels(vp);
  const int pw = std::max(0, win.px1 - win.px0), ph = std::max(0, win.py1 - win.py0);
  rr.aux.px0 = win.px0;
  rr.aux.py0 = win.py0;
  rr.aux.pw = pw;
  rr.aux.ph = ph;
  rr.image = Image<S>(pw, ph);
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x)
      for (int c = 0; c < 3; ++c) rr.image.at(y, x, c) = (&sc.background.x)[c];
  rr.aux.offsets.assign(size_t(pw) * ph + 1, 0);
  rr.aux.len.assign(size_t(pw) * ph, 0);
  rr.aux.final_trans.assign(size_t(pw) * ph, S(1));
  if (sc.ids.empty() || pw == 0 || ph == 0) return rr;

  project_all(sc, cam, rr.proj, rr.proj_save);
  const int n = int(sc.ids.size());

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (rr.proj[a].depth != rr.proj[b].depth) return rr.proj[a].depth < rr.proj[b].depth;
    return sc.ids[a] < sc.ids[b];
  });

  // CSR build: count, prefix, fill (in depth order so per-pixel lists are sorted).
  auto& offs = rr.aux.offsets;
  detail::PixWindow box;
  for (int oi = 0; oi < n; ++oi) {
    const auto& p = rr.proj[order[oi]];
    if (!p.valid || !(p.cov_a * p.cov_c - p.cov_b * p.cov_b > S(0))) continue;
    if (!detail::cover_box(p, win, box)) continue;
    for (int y = box.py0; y < box.py1; ++y)
      for (int x = box.px0; x < box.px1; ++x) offs[size_t(y - win.py0) * pw + (x - win.px0) + 1]++;
  }
  for (size_t i = 1; i < offs.size(); ++i) offs[i] += offs[i - 1];
  rr.aux.contribs.resize(size_t(offs.back()));
  std::vector<int32_t> cursor(offs.begin(), offs.end() - 1);
  for (int oi = 0; oi < n; ++oi) {
    const int slot = order[oi];
    const auto& p = rr.proj[slot];
    if (!p.valid || !(p.cov_a * p.cov_c - p.cov_b * p.cov_b > S(0))) continue;
    if (!detail::cover_box(p, win, box)) continue;
    for (int y = box.py0; y < box.py1; ++y)
      for (int x = box.px0; x < box.px1; ++x) {
        const size_t pix = size_t(y - win.py0) * pw + (x - win.px0);
        rr.aux.contribs[cursor[pix]++] = {int32_t(slot), S(0), S(0)};
      }
  }

  // Composite rows (independent per pixel).
  detail::run_rows(ph, workers, [&](int yb, int ye, int) {
    for (int y = yb; y < ye; ++y)
      for (int x = 0; x < pw; ++x) {
        const size_t pix = size_t(y) * pw + x;
        const S cx = S(x + win.px0) + S(0.5), cy = S(y + win.py0) + S(0.5);
        S T = S(1);
        S col[3] = {S(0), S(0), S(0)};
        int32_t used = 0;
        for (int32_t e = offs[pix]; e < offs[pix + 1]; ++e) {
          if (T < S(kTransmitStop)) break;
          auto& ct = rr.aux.contribs[e];
          const auto& p = rr.proj[ct.slot];
          const ContribEval<S> ev = contrib_eval(p, cx, cy);
          ct.alpha = ev.alpha;
          ct.trans = T;
          for (int c = 0; c < 3; ++c) col[c] += (&p.rgb.x)[c] * ev.alpha * T;
          T *= (S(1) - ev.alpha);
          ++used;
        }
        rr.aux.len[pix] = used;
        rr.aux.final_trans[pix] = T;
        for (int c = 0; c < 3; ++c) rr.image.at(y, x, c) = col[c] + T * (&sc.background.x)[c];
      }
  });
  return rr;
}

// Re-evaluates the composition with the recorded per-pixel contribution lists
// and ordering held fixed (the function the backward pass differentiates).
template <class S>
Image<S> rasterize_with_fixed_aux(const RenderScene<S>& sc, const Camera<S>& cam, const RenderAux<S>& aux) {
  std::vector<Projected2D<S>> proj;
  std::vector<ProjectBackward<S>> save;
  project_all(sc, cam, proj, save);
  Image<S> img(aux.pw, aux.ph);
  for (int y = 0; y < aux.ph; ++y)
    for (int x = 0; x < aux.pw; ++x) {
      const size_t pix = size_t(y) * aux.pw + x;
      const S cx = S(x + aux.px0) + S(0.5), cy = S(y + aux.py0) + S(0.5);
      S T = S(1);
      S col[3] = {S(0), S(0), S(0)};
      for (int32_t e = aux.offsets[pix]; e < aux.offsets[pix] + aux.len[pix]; ++e) {
        const auto& ct = aux.contribs[e];
        const auto& p = proj[ct.slot];
        const ContribEval<S> ev = contrib_eval(p, cx, cy);
        for (int c = 0; c < 3; ++c) col[c] += (&p.rgb.x)[c] * ev.alpha * T;
        T *= (S(1) - ev.alpha);
      }
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c] + T * (&sc.background.x)[c];
    }
  return img;
}

// ---------------------------------------------------------------------------
// Loss

// Mean L1 over `normalizer` elements (defaults to the image element count;
// split sub-passes pass the full-image count so gradients aggregate exactly).
template <class S>
S compute_loss_l1(const Image<S>& img, const Image<S>& gt, Image<S>& d_img, size_t normalizer = 0) {
  if (img.width != gt.width || img.height != gt.height)
    throw std::invalid_argument("compute_loss_l1: image and ground-truth shapes differ");
  if (normalizer == 0) normalizer = img.data.size();
  d_img = Image<S>(img.width, img.height);
  const S inv = S(1) / S(double(normalizer));
  double acc = 0.0;
  for (size_t i = 0; i < img.data.size(); ++i) {
    const S d = img.data[i] - gt.data[i];
    acc += std::abs(double(d));
    d_img.data[i] = d > S(0) ? inv : (d < S(0) ? -inv : S(0));
  }
  return S(acc) * inv;
}

// ---------------------------------------------------------------------------
// Backward

template <class S> struct GradBuffer {
  std::vector<int> ids;        // sorted valid ids
  std::vector<S> rows;         // ids.size() x 59, full-row layout
  std::vector<S> mean2d;       // ids.size() x 2: dL/d mean2d (densification stat)

  S* row(size_t k) { return rows.data() + k * kParamDim; }
  const S* row(size_t k) const { return rows.data() + k * kParamDim; }
  size_t byte_size() const { return rows.size() * sizeof(S) + ids.size() * 4 + mean2d.size() * sizeof(S); }
};

template <class S>
GradBuffer<S> rasterize_backward(const RenderScene<S>& sc, const Camera<S>& cam, const RenderResult<S>& fw,
                                 const Image<S>& d_img, int workers = 1) {
  const auto& aux = fw.aux;
  const int n = int(sc.ids.size());
  GradBuffer<S> gb;
  gb.ids.assign(sc.ids.begin(), sc.ids.end());
  gb.rows.assign(size_t(n) * kParamDim, S(0));
  gb.mean2d.assign(size_t(n) * 2, S(0));
  if (n == 0 || aux.pw == 0 || aux.ph == 0) return gb;

  // Per-slot screen-space accumulators: d_rgb(3), d_mean2d(2), d_cov(3), d_ab(1).
  struct SlotAcc { S rgb[3]; S m2d[2]; S cov[3]; S ab; };
  const int nw = std::max(1, workers);
  std::vector<std::vector<SlotAcc>> acc(nw, std::vector<SlotAcc>(n, SlotAcc{{0, 0, 0}, {0, 0}, {0, 0, 0}, 0}));

  detail::run_rows(aux.ph, workers, [&](int yb, int ye, int w_idx) {
    auto& a = acc[w_idx];
    for (int y = yb; y < ye; ++y)
      for (int x = 0; x < aux.pw; ++x) {
        const size_t pix = size_t(y) * aux.pw + x;
        const int32_t beg = aux.offsets[pix], cnt = aux.len[pix];
        if (cnt == 0) continue;
        const S cx = S(x + aux.px0) + S(0.5), cy = S(y + aux.py0) + S(0.5);
        const S g0 = d_img.at(y, x, 0), g1 = d_img.at(y, x, 1), g2 = d_img.at(y, x, 2);
        if (g0 == S(0) && g1 == S(0) && g2 == S(0)) continue;
        // Reverse sweep with the suffix of downstream contributions.
        S suf[3] = {aux.final_trans[pix] * sc.background.x, aux.final_trans[pix] * sc.background.y,
                    aux.final_trans[pix] * sc.background.z};
        for (int32_t e = beg + cnt - 1; e >= beg; --e) {
          const auto& ct = aux.contribs[e];
          const auto& p = fw.proj[ct.slot];
          const S alpha = ct.alpha, T = ct.trans;
          auto& sa = a[ct.slot];
          const S w_rgb = alpha * T;
          sa.rgb[0] += w_rgb * g0;
          sa.rgb[1] += w_rgb * g1;
          sa.rgb[2] += w_rgb * g2;
          const S dot_c = p.rgb.x * g0 + p.rgb.y * g1 + p.rgb.z * g2;
          const S dot_suf = suf[0] * g0 + suf[1] * g1 + suf[2] * g2;
          const S d_alpha = T * dot_c - dot_suf / (S(1) - alpha);
          suf[0] += p.rgb.x * alpha * T;
          suf[1] += p.rgb.y * alpha * T;
          suf[2] += p.rgb.z * alpha * T;

          // alpha = min(ab * exp(-q/2), clamp); clamped contributions are flat.
          const ContribEval<S> ev = contrib_eval(p, cx, cy);
          if (!ev.ok || ev.clamped) continue;
          sa.ab += ev.weight * d_alpha;
          const S d_q = S(-0.5) * alpha * d_alpha;  // d(alpha)/dq = -alpha/2
          const S det = p.cov_a * p.cov_c - p.cov_b * p.cov_b;
          const S inv_det = S(1) / det;
          const S dx = cx - p.mean2d.x, dy = cy - p.mean2d.y;
          // q = (c dx^2 - 2 b dx dy + a dy^2)/det
          sa.cov[0] += d_q * (dy * dy - ev.q * p.cov_c) * inv_det;
          sa.cov[1] += d_q * (S(-2) * dx * dy + S(2) * ev.q * p.cov_b) * inv_det;
          sa.cov[2] += d_q * (dx * dx - ev.q * p.cov_a) * inv_det;
          const S dq_dmx = (S(-2) * p.cov_c * dx + S(2) * p.cov_b * dy) * inv_det;
          const S dq_dmy = (S(2) * p.cov_b * dx - S(2) * p.cov_a * dy) * inv_det;
          sa.m2d[0] += d_q * dq_dmx;
          sa.m2d[1] += d_q * dq_dmy;
        }
      }
  });

  // Reduce worker-local accumulators in worker order.
  for (int w = 1; w < nw; ++w)
    for (int k = 0; k < n; ++k) {
      for (int c = 0; c < 3; ++c) acc[0][k].rgb[c] += acc[w][k].rgb[c];
      for (int c = 0; c < 2; ++c) acc[0][k].m2d[c] += acc[w][k].m2d[c];
      for (int c = 0; c < 3; ++c) acc[0][k].cov[c] += acc[w][k].cov[c];
      acc[0][k].ab += acc[w][k].ab;
    }

  // Chain through projection and SH per slot.
  const Vec3<S> campos = cam.position();
  detail::run_rows(n, workers, [&](int kb, int ke, int) {
    for (int k = kb; k < ke; ++k) {
      const auto& p = fw.proj[k];
      if (!p.valid) continue;
      const auto& sa = acc[0][k];
      const int id = sc.ids[k];
      const S* g = sc.geo.row(id);
      const S* ng = sc.nongeo.row(k, id);
      S* out = gb.row(k);

      gb.mean2d[k * 2] = sa.m2d[0];
      gb.mean2d[k * 2 + 1] = sa.m2d[1];

      // opacity logit
      const S ab = p.alpha_base;
      out[kColOpacity] += sa.ab * ab * (S(1) - ab);

      // SH color + view-direction chain to mean
      Vec3<S> dir{g[0] - campos.x, g[1] - campos.y, g[2] - campos.z};
      const S dn = dir.norm();
      Vec3<S> d_mean_dir{S(0), S(0), S(0)};
      if (dn > S(1e-12)) {
        const Vec3<S> u = dir * (S(1) / dn);
        const auto mask = eval_sh_clamp_mask(ng + 1, u, sc.sh_degree);
        const Vec3<S> d_dir =
            eval_sh_backward(ng + 1, u, sc.sh_degree, {sa.rgb[0], sa.rgb[1], sa.rgb[2]}, mask, out + kColSh);
        // dir = (mean - campos)/|..|: J^T = (I - u u^T)/|..|
        const S dotp = u.dot(d_dir);
        d_mean_dir = (d_dir - u * dotp) * (S(1) / dn);
      }
      out[kColMean + 0] += d_mean_dir.x;
      out[kColMean + 1] += d_mean_dir.y;
      out[kColMean + 2] += d_mean_dir.z;

      project_geo_backward(g, cam, fw.proj_save[k], {sa.m2d[0], sa.m2d[1]}, sa.cov[0], sa.cov[1], sa.cov[2], out);
    }
  });
  return gb;
}

}  // namespace gss
