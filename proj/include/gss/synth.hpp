#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gss/render.hpp"
#include "gss/rng.hpp"
#include "gss/scene.hpp"

namespace gss {

struct SynthConfig {
  uint64_t seed = 1;
  int n = 300;
  int cams = 32;
  int width = 64, height = 64;
  int sh_degree = 3;
  double box = 1.0;              // Gaussians sampled in [-box, box]^3
  double radius_min = 0.3;       // orbit radii as multiples of box
  double radius_max = 3.0;
  double fov_deg = 30.0;         // widest camera
  double fov_ramp = 0.4;         // closest camera uses fov_deg * fov_ramp
  double target_jitter = 1.1;    // close cameras aim at off-center targets
  double near_plane = 0.05;
  double far_plane = 100.0;
  double scale_min = 0.025, scale_max = 0.07;  // world units, relative to box
  double scale_aniso = 0.5;  // per-axis log-scale jitter around the sampled base
  double opacity_min = 0.35, opacity_max = 0.9;
  double sh_rest_noise = 0.12;

  // Close-orbit preset whose mean used ratio stays below ~10%.
  static SynthConfig low_use(int n, int cams, int img, uint64_t seed) {
    SynthConfig c;
    c.n = n;
    c.cams = cams;
    c.width = c.height = img;
    c.seed = seed;
    c.radius_min = 0.3;
    c.radius_max = 0.65;
    c.fov_deg = 20.0;
    c.fov_ramp = 0.7;
    c.target_jitter = 1.2;
    c.scale_min = 0.02;
    c.scale_max = 0.05;
    return c;
  }
};

template <class S> struct SynthScene {
  GaussianSet<S> truth;
  std::vector<Camera<S>> cameras;
  std::vector<Image<S>> gt_images;
};

// Contiguous geo/nongeo row buffers for rendering straight from a GaussianSet.
template <class S> struct SceneRows {
  std::vector<S> geo;     // N x 10
  std::vector<S> nongeo;  // N x 49
  RowView<S> geo_view() const { return {geo.data(), kGeoDim}; }
  NonGeoView<S> nongeo_view() const { return {nongeo.data(), kNonGeoDim, false}; }
};

template <class S> SceneRows<S> scene_rows(const GaussianSet<S>& gs) {
  SceneRows<S> r;
  r.geo.resize(size_t(gs.count) * kGeoDim);
  r.nongeo.resize(size_t(gs.count) * kNonGeoDim);
  for (int i = 0; i < gs.count; ++i) {
    S* g = r.geo.data() + size_t(i) * kGeoDim;
    for (int k = 0; k < 3; ++k) g[k] = gs.mean[i * 3 + k];
    for (int k = 0; k < 3; ++k) g[3 + k] = gs.scale[i * 3 + k];
    for (int k = 0; k < 4; ++k) g[6 + k] = gs.quaternion[i * 4 + k];
    S* ng = r.nongeo.data() + size_t(i) * kNonGeoDim;
    ng[0] = gs.opacity[i];
    for (int k = 0; k < kShScalars; ++k) ng[1 + k] = gs.sh[i * kShScalars + k];
  }
  return r;
}

// Renders one view of a Gaussian set (cull + rasterize), full viewport.
template <class S>
Image<S> render_view(const GaussianSet<S>& gs, const Camera<S>& cam, int sh_degree, int workers = 1,
                     Vec3<S> background = {S(0), S(0), S(0)}) {
  const SceneRows<S> rows = scene_rows(gs);
  const Viewport<S> vp = Viewport<S>::full(cam.width, cam.height);
  const std::vector<int> ids = frustum_cull(rows.geo_view(), gs.count, cam, vp);
  RenderScene<S> sc;
  sc.ids = ids;
  sc.geo = rows.geo_view();
  sc.nongeo = rows.nongeo_view();
  sc.sh_degree = sh_degree;
  sc.background = background;
  return rasterize_forward(sc, cam, vp, workers).image;
}

// Deterministic (seed-keyed) synthetic scene: Gaussians in a box, cameras on
// an orbit whose radius and aim vary so the per-view used-Gaussian ratio
// spreads from close-ups to full coverage; ground truth rendered from the
// sampled set.
template <class S> SynthScene<S> synth_scene(const SynthConfig& cfg) {
  SynthScene<S> out;
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);

  GaussianSet<S>& gs = out.truth;
  gs.resize(cfg.n);
  gs.sh_degree = cfg.sh_degree;
  for (int i = 0; i < cfg.n; ++i) {
    for (int a = 0; a < 3; ++a) gs.mean[i * 3 + a] = S(rng.uniform(-cfg.box, cfg.box));
    const double log_lo = std::log(cfg.scale_min * cfg.box), log_hi = std::log(cfg.scale_max * cfg.box);
    const double base = rng.uniform(log_lo, log_hi);
    for (int a = 0; a < 3; ++a)
      gs.scale[i * 3 + a] = S(base + rng.uniform(-cfg.scale_aniso, cfg.scale_aniso));
    double q[4];
    double qn = 0;
    for (auto& c : q) {
      c = rng.normal();
      qn += c * c;
    }
    qn = std::sqrt(qn);
    if (qn < 1e-9) { q[0] = 1; q[1] = q[2] = q[3] = 0; qn = 1; }
    for (int a = 0; a < 4; ++a) gs.quaternion[i * 4 + a] = S(q[a] / qn);
    gs.opacity[i] = S(logit(rng.uniform(cfg.opacity_min, cfg.opacity_max)));
    for (int c = 0; c < 3; ++c) gs.sh[i * kShScalars + c] = S((rng.uniform(0.08, 0.92) - 0.5) / kShC0);
    const int active = (cfg.sh_degree + 1) * (cfg.sh_degree + 1);
    for (int k = 1; k < active; ++k)
      for (int c = 0; c < 3; ++c) gs.sh[i * kShScalars + k * 3 + c] = S(rng.normal() * cfg.sh_rest_noise);
  }

  const double golden = 2.399963229728653;
  for (int i = 0; i < cfg.cams; ++i) {
    const double t = cfg.cams > 1 ? double(i) / (cfg.cams - 1) : 1.0;
    const double radius = cfg.box * (cfg.radius_min * std::pow(cfg.radius_max / cfg.radius_min, t));
    // close cameras zoom in; the farthest uses the configured fov
    const double fov = cfg.fov_deg * (cfg.fov_ramp + (1.0 - cfg.fov_ramp) * t);
    const double fx = 0.5 * cfg.width / std::tan(0.5 * fov * M_PI / 180.0);
    const double fy = fx;
    const double az = golden * i + rng.uniform(-0.15, 0.15);
    const double el = (0.15 + 0.55 * rng.uniform()) * (i % 2 == 0 ? 1.0 : -1.0);
    Vec3<S> eye{S(radius * std::cos(el) * std::cos(az)), S(radius * std::sin(el)),
                S(radius * std::cos(el) * std::sin(az))};
    // close cameras look at off-center targets, far ones at the center
    const double jig = cfg.target_jitter * (1.0 - t);
    Vec3<S> target{S(rng.uniform(-jig, jig) * cfg.box), S(rng.uniform(-jig, jig) * cfg.box),
                   S(rng.uniform(-jig, jig) * cfg.box)};
    out.cameras.push_back(look_at_camera<S>(eye, target, S(fx), S(fy), cfg.width, cfg.height,
                                            S(cfg.near_plane), S(cfg.far_plane)));
  }

  // The orbit is radius-ordered; shuffle so any every-k-th holdout split
  // samples the whole close-up-to-wide range.
  for (int i = cfg.cams - 1; i > 0; --i) {
    const int j = int(rng.next_u64() % uint64_t(i + 1));
    std::swap(out.cameras[i], out.cameras[j]);
  }

  out.gt_images.reserve(cfg.cams);
  for (const auto& cam : out.cameras) out.gt_images.push_back(render_view(gs, cam, cfg.sh_degree));
  return out;
}

// Mean fraction of Gaussians surviving culling over all views.
template <class S> double mean_used_ratio(const GaussianSet<S>& gs, const std::vector<Camera<S>>& cams) {
  if (gs.count == 0 || cams.empty()) return 0.0;
  const SceneRows<S> rows = scene_rows(gs);
  double acc = 0;
  for (const auto& cam : cams) {
    const auto ids = frustum_cull(rows.geo_view(), gs.count, cam, Viewport<S>::full(cam.width, cam.height));
    acc += double(ids.size()) / gs.count;
  }
  return acc / cams.size();
}

}  // namespace gss
