#pragma once

// Shared test oracles. Everything here is written independently of the
// library code paths it checks (straight-line textbook implementations).

#include <algorithm>
#include <cmath>
#include <vector>

#include "gss/render.hpp"
#include "gss/rng.hpp"
#include "gss/scene.hpp"
#include "gss/synth.hpp"

namespace gsstest {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Plain relative error with an absolute floor (for gradient comparisons).
inline double rel_err_floor(double a, double b, double floor_abs) {
  return std::abs(a - b) / std::max({floor_abs, std::abs(a), std::abs(b)});
}

// ---------------------------------------------------------------------------
// Textbook Adam, one scalar trajectory, written from the update equations.
struct ScalarAdamOracle {
  double m = 0, v = 0, w = 0;
  int t = 0;
  void step(double g, double lr, double b1, double b2, double eps) {
    t += 1;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double m_hat = m / (1 - std::pow(b1, t));
    const double v_hat = v / (1 - std::pow(b2, t));
    w = w - lr / (std::sqrt(v_hat) + eps) * m_hat;
  }
};

// ---------------------------------------------------------------------------
// Direct summation of the deferred weight-restoration factor
// (Eq. 3 sum, no recurrence): sum over l of
//   lr * b1^{l+1} / ( sqrt(b2^{l+1} / (1 - b2^{t-d+l})) * (1 - b1^{t-d+l}) )
inline double w_scale_direct(double lr, double b1, double b2, long t, int d) {
  double acc = 0;
  for (int l = 0; l <= d - 1; ++l) {
    const double num = lr * std::pow(b1, l + 1);
    const double den = std::sqrt(std::pow(b2, l + 1) / (1.0 - std::pow(b2, double(t - d + l)))) *
                       (1.0 - std::pow(b1, double(t - d + l)));
    acc += num / den;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Brute-force frustum-culling oracle: evaluates both phases for every
// Gaussian with no early-outs, and unions the analytic rectangle-overlap test
// with a per-pixel-center test.
template <class S>
std::vector<int> cull_oracle(gss::RowView<S> geo, int count, const gss::Camera<S>& cam,
                             const gss::Viewport<S>& vp, S low_pass) {
  std::vector<int> out;
  for (int i = 0; i < count; ++i) {
    const S* g = geo.row(i);
    const gss::Vec3<S> t = cam.to_camera({g[0], g[1], g[2]});
    const bool depth_ok = t.z >= cam.near_plane && t.z <= cam.far_plane;
    const gss::Projected2D<S> p = gss::project_geo(g, cam, low_pass);
    bool analytic = false, per_pixel = false;
    if (p.valid) {
      analytic = p.mean2d.x + p.radius >= vp.x0 && p.mean2d.x - p.radius <= vp.x1 &&
                 p.mean2d.y + p.radius >= vp.y0 && p.mean2d.y - p.radius <= vp.y1;
      for (int y = 0; y < cam.height && !per_pixel; ++y)
        for (int x = 0; x < cam.width && !per_pixel; ++x) {
          const double cx = x + 0.5, cy = y + 0.5;
          if (cx < double(vp.x0) || cx >= double(vp.x1) || cy < double(vp.y0) || cy >= double(vp.y1)) continue;
          if (std::abs(cx - double(p.mean2d.x)) <= double(p.radius) &&
              std::abs(cy - double(p.mean2d.y)) <= double(p.radius))
            per_pixel = true;
        }
    }
    if (depth_ok && (analytic || per_pixel)) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random gradcheck scenes: a handful of Gaussians placed inside the view with
// moderate opacity (no alpha clamps, no transmittance early stop) and
// interior colors (no SH clamp).
template <class S> struct CheckScene {
  gss::GaussianSet<S> gs;
  gss::Camera<S> cam;
  gss::Image<S> gt;
};

template <class S> CheckScene<S> make_check_scene(uint64_t seed, int n, int img, int sh_degree) {
  gss::Rng rng(seed);
  CheckScene<S> cs;
  cs.gs.resize(n);
  cs.gs.sh_degree = sh_degree;
  for (int i = 0; i < n; ++i) {
    cs.gs.mean[i * 3] = S(rng.uniform(-0.5, 0.5));
    cs.gs.mean[i * 3 + 1] = S(rng.uniform(-0.5, 0.5));
    cs.gs.mean[i * 3 + 2] = S(rng.uniform(-0.4, 0.4));
    for (int a = 0; a < 3; ++a) cs.gs.scale[i * 3 + a] = S(rng.uniform(std::log(0.06), std::log(0.28)));
    double q[4], qn = 0;
    for (auto& c : q) {
      c = rng.normal();
      qn += c * c;
    }
    qn = std::sqrt(std::max(qn, 1e-12));
    for (int a = 0; a < 4; ++a) cs.gs.quaternion[i * 4 + a] = S(q[a] / qn);
    cs.gs.opacity[i] = S(gss::logit(rng.uniform(0.15, 0.45)));
    for (int c = 0; c < 3; ++c)
      cs.gs.sh[i * gss::kShScalars + c] = S((rng.uniform(0.25, 0.75) - 0.5) / gss::kShC0);
    const int active = (sh_degree + 1) * (sh_degree + 1);
    for (int k = 1; k < active; ++k)
      for (int c = 0; c < 3; ++c) cs.gs.sh[i * gss::kShScalars + k * 3 + c] = S(rng.normal() * 0.03);
  }
  const double fx = 0.9 * img;
  cs.cam = gss::look_at_camera<S>({S(0), S(0), S(-2.2)}, {S(0), S(0), S(0)}, S(fx), S(fx), img, img, S(0.1),
                                  S(50));
  cs.gt = gss::Image<S>(img, img);
  for (auto& v : cs.gt.data) v = S(rng.uniform(0.0, 1.0));
  return cs;
}

// Inner product of a frozen image gradient with the fixed-aux re-render —
// the linear functional whose parameter gradient rasterize_backward computes.
// (Differencing the L1 loss itself would step across its |.| kinks.)
template <class S>
double fixed_aux_functional(const gss::RenderScene<S>& sc, const gss::Camera<S>& cam,
                            const gss::RenderAux<S>& aux, const gss::Image<S>& d_img) {
  const gss::Image<S> img = gss::rasterize_with_fixed_aux(sc, cam, aux);
  double acc = 0;
  for (size_t i = 0; i < img.data.size(); ++i) acc += double(d_img.data[i]) * double(img.data[i]);
  return acc;
}

}  // namespace gsstest
