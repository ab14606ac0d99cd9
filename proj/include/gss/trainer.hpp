#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "gss/engine.hpp"
#include "gss/ply.hpp"
#include "gss/rng.hpp"
#include "gss/splitter.hpp"
#include "gss/synth.hpp"

namespace gss {

enum class TrainMode { DenseOracle, OffloadSerial, OffloadPipelined };

inline const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::DenseOracle: return "dense-oracle";
    case TrainMode::OffloadSerial: return "offload-serial";
    case TrainMode::OffloadPipelined: return "offload-pipelined";
  }
  return "?";
}

struct DensifyConfig {
  int interval = 100;
  int start_iter = 500;
  int stop_iter = 1500;  // <= start disables densification
  double grad_threshold = 2e-4;
  double percent_dense = 0.01;  // clone below, split above percent_dense*extent
  double opacity_prune = 0.005;
  double split_scale_divisor = 1.6;

  bool enabled() const { return stop_iter > start_iter; }
  void validate() const {
    if (interval < 1) throw ConfigError("densify: interval must be >= 1");
    if (!(grad_threshold > 0) || !(opacity_prune > 0) || !(split_scale_divisor > 0) || !(percent_dense > 0))
      throw ConfigError("densify: thresholds must be positive");
  }
};

struct TrainConfig {
  std::string scene_type = "synth";  // synth | ply
  SynthConfig synth = default_train_scene();
  std::string ply_path;

  // The default benchmark scene: soft, chunky splats on a mid-range orbit.
  // (synth_scene's own defaults favor a wide used-ratio spread instead.)
  static SynthConfig default_train_scene() {
    SynthConfig sc;
    sc.n = 150;
    sc.cams = 64;
    sc.width = sc.height = 64;
    sc.scale_min = 0.08;
    sc.scale_max = 0.18;
    sc.opacity_min = 0.3;
    sc.opacity_max = 0.7;
    sc.radius_min = 1.0;
    sc.radius_max = 2.2;
    sc.fov_deg = 35.0;
    sc.fov_ramp = 0.5;
    sc.sh_rest_noise = 0.05;
    return sc;
  }
  int iterations = 500;
  int sh_degree = 3;
  OptimConfig optim;
  DensifyConfig densify;
  double mem_limit = 0.3;
  size_t chunk_bytes = size_t(32) << 20;
  uint64_t seed = 1;
  TrainMode mode = TrainMode::OffloadPipelined;
  bool verify_f64 = false;
  int workers = 1;
  int holdout_every = 8;  // every k-th view is validation; 0 disables
  int eval_interval = 0;  // 0 = evaluate at the end only
  int sh_warmup_step = 500;  // one SH band unlocked per step; 0 disables
  bool white_background = false;

  void validate() const {
    if (iterations < 0) throw ConfigError("config: iterations must be >= 0");
    if (scene_type != "synth" && scene_type != "ply") throw ConfigError("config: scene_type must be synth or ply");
    if (scene_type == "ply" && ply_path.empty()) throw ConfigError("config: ply scene needs ply_path");
    if (sh_degree < 0 || sh_degree > 3) throw ConfigError("config: sh_degree must be in [0,3]");
    if (!(mem_limit > 0.0 && mem_limit <= 1.0)) throw ConfigError("config: mem_limit must be in (0,1]");
    if (chunk_bytes < 4096) throw ConfigError("config: chunk_bytes must be >= 4096");
    if (workers < 1) throw ConfigError("config: workers must be >= 1");
    if (holdout_every < 0 || eval_interval < 0 || sh_warmup_step < 0)
      throw ConfigError("config: negative interval");
    if (synth.n < 1 || synth.cams < 1) throw ConfigError("config: synth scene needs n >= 1, cams >= 1");
    if (optim.defer_max < 0 || optim.defer_max > 254 || optim.geo_defer_max < 0 || optim.geo_defer_max > 254)
      throw ConfigError("config: defer max must be in [0,254]");
    optim.hp(optim.lr_opacity).validate();
    densify.validate();
  }
};

// ---------------------------------------------------------------------------
// PSNR

struct PsnrResult {
  double db = 0.0;
  bool exact = false;  // identical images (MSE 0)
};

template <class S> double image_mse(const Image<S>& a, const Image<S>& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("psnr: image shapes differ");
  double acc = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    acc += d * d;
  }
  return a.data.empty() ? 0.0 : acc / double(a.data.size());
}

template <class S> PsnrResult psnr(const Image<S>& img, const Image<S>& gt) {
  const double mse = image_mse(img, gt);
  if (mse == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(1.0 / mse), false};
}

// MSE pooled across views, then one PSNR.
template <class S>
PsnrResult psnr_over_views(const GaussianSet<S>& gs, const std::vector<Camera<S>>& cams,
                           const std::vector<Image<S>>& gts, int sh_degree, Vec3<S> bg, int workers) {
  double pooled = 0;
  size_t elems = 0;
  for (size_t i = 0; i < cams.size(); ++i) {
    const Image<S> img = render_view(gs, cams[i], sh_degree, workers, bg);
    pooled += image_mse(img, gts[i]) * double(img.data.size());
    elems += img.data.size();
  }
  if (elems == 0) return {0.0, false};
  pooled /= double(elems);
  if (pooled == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(1.0 / pooled), false};
}

// ---------------------------------------------------------------------------
// Densification planning (shared by every mode)

template <class S> Vec4<S> unit_quat(Vec4<S> q) {
  const S n = q.norm();
  if (n < S(1e-12)) return {S(1), S(0), S(0), S(0)};
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

template <class S> struct DensifyPlan {
  std::vector<int> survivors;   // ascending old ids kept in place
  std::vector<S> child_rows;    // k x 59 appended rows
  int clones = 0, splits = 0, pruned = 0;
};

// Clone small / split large Gaussians whose mean accumulated screen-space
// positional gradient exceeds the threshold; prune low-opacity ones. Split
// children sample positions from the parent Gaussian; their scale shrinks by
// the configured divisor and the parent is removed.
template <class S>
DensifyPlan<S> plan_densify(const GaussianSet<S>& gs, const std::vector<double>& accum_norm,
                            const std::vector<int>& accum_cnt, const DensifyConfig& dc, double extent,
                            uint64_t event_seed) {
  DensifyPlan<S> plan;
  Rng rng(event_seed);
  const double clone_limit = dc.percent_dense * extent;
  std::vector<S> row(kParamDim);
  for (int i = 0; i < gs.count; ++i) {
    const double op = 1.0 / (1.0 + std::exp(-double(gs.opacity[i])));
    if (op < dc.opacity_prune) {
      plan.pruned++;
      continue;
    }
    const double avg = accum_cnt[i] > 0 ? accum_norm[i] / accum_cnt[i] : 0.0;
    const double max_scale =
        std::exp(std::max({double(gs.scale[i * 3]), double(gs.scale[i * 3 + 1]), double(gs.scale[i * 3 + 2])}));
    const bool densify = avg > dc.grad_threshold;
    if (!densify) {
      plan.survivors.push_back(i);
      continue;
    }
    if (max_scale <= clone_limit) {
      // clone: parent survives, one identical child
      plan.survivors.push_back(i);
      gs.full_row(i, row.data());
      plan.child_rows.insert(plan.child_rows.end(), row.begin(), row.end());
      plan.clones++;
    } else {
      // split: parent removed, two children sampled from the parent Gaussian
      const Mat3<S> R = quat_to_rot(unit_quat(gs.quat_at(i)));
      for (int c = 0; c < 2; ++c) {
        gs.full_row(i, row.data());
        Vec3<S> eps{S(rng.normal() * std::exp(double(gs.scale[i * 3]))),
                    S(rng.normal() * std::exp(double(gs.scale[i * 3 + 1]))),
                    S(rng.normal() * std::exp(double(gs.scale[i * 3 + 2])))};
        const Vec3<S> off = R.mul(eps);
        row[kColMean + 0] += off.x;
        row[kColMean + 1] += off.y;
        row[kColMean + 2] += off.z;
        for (int a = 0; a < 3; ++a) row[kColScale + a] -= S(std::log(dc.split_scale_divisor));
        plan.child_rows.insert(plan.child_rows.end(), row.begin(), row.end());
      }
      plan.splits++;
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Dense oracle trainer (no tiering; textbook Adam over a single arena)

template <class S> class DenseTrainer {
public:
  DenseTrainer(const GaussianSet<S>& init, std::vector<Camera<S>> cams, std::vector<Image<S>> gts,
               const OptimConfig& oc, int sh_degree, Vec3<S> bg, int workers, SplitTable splits = {},
               int sh_warmup_step = 0)
      : cams_(std::move(cams)), gts_(std::move(gts)), splits_(std::move(splits)), sh_degree_(sh_degree),
        sh_warmup_(sh_warmup_step), bg_(bg), workers_(workers), oc_(oc) {
    arena_.init(init.count, kParamDim, oc.full_groups(), oc.defer_max);
    for (int i = 0; i < init.count; ++i) init.full_row(i, arena_.row(i));
    grads_.assign(size_t(init.count) * kParamDim, S(0));
    accum_norm_.assign(init.count, 0.0);
    accum_cnt_.assign(init.count, 0);
    if (splits_.cameras.empty()) splits_.cameras.resize(cams_.size());
    mem_.add(MemCat::Params, arena_.param_bytes());
    mem_.add(MemCat::OptStates, arena_.state_bytes());
    mem_.add(MemCat::Grads, grads_.size() * sizeof(S));
  }

  struct IterResult {
    S loss{};
    int valid_count = 0;
  };

  std::vector<IterResult> run(int n) {
    std::vector<IterResult> out;
    out.reserve(n);
    for (int k = 0; k < n; ++k) {
      const int g = iter_++;
      out.push_back(step(g));
    }
    return out;
  }

  IterResult step(int g) {
    const Camera<S>& cam = cams_[size_t(g) % cams_.size()];
    const Image<S>& gt = gts_[size_t(g) % gts_.size()];
    const SplitEntry& se = splits_.cameras[size_t(g) % cams_.size()];
    const RowView<S> geo{arena_.w.data(), size_t(kParamDim)};
    const NonGeoView<S> nongeo{arena_.w.data() + kColOpacity, size_t(kParamDim), false};
    const size_t full_elems = size_t(cam.width) * cam.height * 3;
    const int degree = sh_warmup_ > 0 ? std::min(sh_degree_, g / sh_warmup_) : sh_degree_;

    auto run_pass = [&](const Viewport<S>& vp, S& loss_out) {
      const std::vector<int> ids = frustum_cull(geo, arena_.count, cam, vp);
      RenderScene<S> sc;
      sc.ids = ids;
      sc.geo = geo;
      sc.nongeo = nongeo;
      sc.sh_degree = degree;
      sc.background = bg_;
      RenderResult<S> rr = rasterize_forward(sc, cam, vp, workers_);
      const int64_t act = int64_t(rr.aux.byte_size() + 2 * rr.image.data.size() * sizeof(S));
      mem_.add(MemCat::Activations, act);
      Image<S> gt_win(rr.image.width, rr.image.height);
      for (int y = 0; y < rr.image.height; ++y)
        for (int x = 0; x < rr.image.width; ++x)
          for (int c = 0; c < 3; ++c) gt_win.at(y, x, c) = gt.at(y + rr.aux.py0, x + rr.aux.px0, c);
      Image<S> dimg;
      loss_out = compute_loss_l1(rr.image, gt_win, dimg, full_elems);
      GradBuffer<S> gb = rasterize_backward(sc, cam, rr, dimg, workers_);
      mem_.add(MemCat::Activations, -act);
      return gb;
    };

    S loss = S(0);
    GradBuffer<S> gb;
    if (se.split) {
      S ll = S(0), rl = S(0);
      GradBuffer<S> gl = run_pass({S(0), S(se.column), S(0), S(cam.height)}, ll);
      GradBuffer<S> gr = run_pass({S(se.column), S(cam.width), S(0), S(cam.height)}, rl);
      gb = aggregate_grads(gl, gr);
      loss = ll + rl;
    } else {
      gb = run_pass(Viewport<S>::full(cam.width, cam.height), loss);
    }

    // scatter -> dense step -> clear
    for (size_t k = 0; k < gb.ids.size(); ++k) {
      S* dst = grads_.data() + size_t(gb.ids[k]) * kParamDim;
      const S* src = gb.row(k);
      for (int c = 0; c < kParamDim; ++c) dst[c] = src[c];
      const double gx = double(gb.mean2d[k * 2]), gy = double(gb.mean2d[k * 2 + 1]);
      accum_norm_[gb.ids[k]] += std::sqrt(gx * gx + gy * gy);
      accum_cnt_[gb.ids[k]] += 1;
    }
    adam_step_dense(arena_, grads_.data());
    for (int id : gb.ids) {
      S* dst = grads_.data() + size_t(id) * kParamDim;
      for (int c = 0; c < kParamDim; ++c) dst[c] = S(0);
    }
    return {loss, int(gb.ids.size())};
  }

  GaussianSet<S> snapshot() const {
    GaussianSet<S> gs;
    gs.resize(arena_.count);
    gs.sh_degree = sh_degree_;
    for (int i = 0; i < arena_.count; ++i) gs.set_full_row(i, arena_.row(i));
    return gs;
  }

  void apply_densify(const std::vector<int>& survivors, const std::vector<S>& child_rows) {
    const int n_child = int(child_rows.size() / kParamDim);
    const int n_new = int(survivors.size()) + n_child;
    mem_.add(MemCat::Params, -int64_t(arena_.param_bytes()));
    mem_.add(MemCat::OptStates, -int64_t(arena_.state_bytes()));
    mem_.add(MemCat::Grads, -int64_t(grads_.size() * sizeof(S)));
    Arena<S> next;
    next.init(n_new, kParamDim, arena_.groups, arena_.defer_max);
    next.step = arena_.step;
    next.access = arena_.access;
    for (size_t j = 0; j < survivors.size(); ++j) {
      const size_t o = size_t(survivors[j]) * kParamDim, d = j * kParamDim;
      for (int c = 0; c < kParamDim; ++c) {
        next.w[d + c] = arena_.w[o + c];
        next.m[d + c] = arena_.m[o + c];
        next.v[d + c] = arena_.v[o + c];
      }
      next.counter[j] = arena_.counter[survivors[j]];
    }
    for (int k = 0; k < n_child; ++k) {
      const size_t d = (survivors.size() + k) * kParamDim;
      for (int c = 0; c < kParamDim; ++c) next.w[d + c] = child_rows[size_t(k) * kParamDim + c];
    }
    arena_ = std::move(next);
    grads_.assign(size_t(n_new) * kParamDim, S(0));
    accum_norm_.assign(n_new, 0.0);
    accum_cnt_.assign(n_new, 0);
    mem_.add(MemCat::Params, arena_.param_bytes());
    mem_.add(MemCat::OptStates, arena_.state_bytes());
    mem_.add(MemCat::Grads, grads_.size() * sizeof(S));
  }

  MemoryReport memory_report() const {
    MemoryReport r;
    r.device_peak_total = mem_.peak_total();
    r.device_peak_snapshot = mem_.peak_snapshot();
    r.device_category_peaks = mem_.category_peaks();
    for (int c = 0; c < kMemCats; ++c) r.device_current[c] = mem_.current(MemCat(c));
    r.host_bytes = 0;
    r.device_param_share = 1.0;
    return r;
  }

  const AccessReport& access() const { return arena_.access; }
  const std::vector<double>& accum_grad_norm() const { return accum_norm_; }
  const std::vector<int>& accum_grad_count() const { return accum_cnt_; }
  void reset_accum() {
    std::fill(accum_norm_.begin(), accum_norm_.end(), 0.0);
    std::fill(accum_cnt_.begin(), accum_cnt_.end(), 0);
  }
  int count() const { return arena_.count; }
  const Arena<S>& arena() const { return arena_; }

private:
  Arena<S> arena_;
  std::vector<S> grads_;
  std::vector<Camera<S>> cams_;
  std::vector<Image<S>> gts_;
  SplitTable splits_;
  std::vector<double> accum_norm_;
  std::vector<int> accum_cnt_;
  MemTracker mem_;
  int sh_degree_;
  int sh_warmup_ = 0;
  Vec3<S> bg_;
  int workers_;
  OptimConfig oc_;
  int iter_ = 0;
};

// ---------------------------------------------------------------------------
// Train orchestration

struct TrainReport {
  std::string mode;
  std::vector<double> losses;
  std::vector<std::pair<int, double>> psnr_points;  // (iteration, pooled holdout PSNR)
  double final_psnr = 0.0;
  bool final_psnr_exact = false;
  int initial_count = 0;
  int final_count = 0;
  MemoryReport memory;
  AccessReport host_access;   // dense arena access in dense-oracle mode
  AccessReport geo_access;    // empty in dense-oracle mode
  uint64_t forwarded_bytes = 0;
  uint64_t d2h_bytes = 0;
  double wall_seconds = 0.0;
  int split_cameras = 0;
  std::vector<TimelineRow> timeline;
};

template <class S> struct TrainScene {
  GaussianSet<S> init_gs;
  std::vector<Camera<S>> train_cams, val_cams;
  std::vector<Image<S>> train_gt, val_gt;
  double extent = 1.0;
};

template <class S> TrainScene<S> build_train_scene(const TrainConfig& cfg) {
  TrainScene<S> ts;
  GaussianSet<S> truth;
  std::vector<Camera<S>> cams;
  std::vector<Image<S>> gts;
  if (cfg.scene_type == "synth") {
    SynthConfig sc = cfg.synth;
    sc.seed = cfg.seed;
    // the truth's view-dependent content never exceeds the training degree
    sc.sh_degree = std::min(cfg.synth.sh_degree, cfg.sh_degree);
    SynthScene<S> ss = synth_scene<S>(sc);
    truth = std::move(ss.truth);
    cams = std::move(ss.cameras);
    gts = std::move(ss.gt_images);
  } else {
    // PLY geometry with a seeded appearance; ground truth rendered from it.
    const PointCloud pc = load_ply(cfg.ply_path);
    truth = init_gaussians<S>(pc, {3, 0.7, cfg.sh_degree, 0.01});
    Rng rng(cfg.seed ^ 0xA5F152ull);
    const int active = (cfg.sh_degree + 1) * (cfg.sh_degree + 1);
    for (int i = 0; i < truth.count; ++i)
      for (int k = 1; k < active; ++k)
        for (int c = 0; c < 3; ++c) truth.sh[i * kShScalars + k * 3 + c] = S(rng.normal() * 0.08);
    // orbit cameras around the cloud
    double lo[3] = {1e30, 1e30, 1e30}, hi[3] = {-1e30, -1e30, -1e30};
    for (int i = 0; i < pc.size(); ++i)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], double(pc.positions[i * 3 + a]));
        hi[a] = std::max(hi[a], double(pc.positions[i * 3 + a]));
      }
    const Vec3<S> center{S((lo[0] + hi[0]) / 2), S((lo[1] + hi[1]) / 2), S((lo[2] + hi[2]) / 2)};
    double radius = 0;
    for (int a = 0; a < 3; ++a) radius = std::max(radius, (hi[a] - lo[a]) / 2);
    const SynthConfig& sc = cfg.synth;
    const double fx = 0.5 * sc.width / std::tan(0.5 * sc.fov_deg * M_PI / 180.0);
    const double golden = 2.399963229728653;
    for (int i = 0; i < sc.cams; ++i) {
      const double az = golden * i;
      const double el = 0.4 * (i % 2 == 0 ? 1 : -1);
      const double r = radius * 3.0;
      Vec3<S> eye{S(center.x + r * std::cos(el) * std::cos(az)), S(center.y + r * std::sin(el)),
                  S(center.z + r * std::cos(el) * std::sin(az))};
      cams.push_back(look_at_camera<S>(eye, center, S(fx), S(fx), sc.width, sc.height, S(sc.near_plane),
                                       S(sc.far_plane)));
    }
    for (const auto& cam : cams) gts.push_back(render_view(truth, cam, cfg.sh_degree));
  }

  // SfM-style initialization input: truth positions + DC colors.
  PointCloud pc;
  pc.positions.reserve(truth.count * 3);
  pc.colors.reserve(truth.count * 3);
  for (int i = 0; i < truth.count; ++i) {
    for (int a = 0; a < 3; ++a) pc.positions.push_back(float(truth.mean[i * 3 + a]));
    for (int c = 0; c < 3; ++c) {
      const double col = double(truth.sh[i * kShScalars + c]) * kShC0 + 0.5;
      pc.colors.push_back(float(std::clamp(col, 0.0, 1.0)));
    }
  }
  ts.init_gs = init_gaussians<S>(pc, {3, 0.1, cfg.sh_degree, 0.01});

  double lo[3] = {1e30, 1e30, 1e30}, hi[3] = {-1e30, -1e30, -1e30};
  for (int i = 0; i < pc.size(); ++i)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], double(pc.positions[i * 3 + a]));
      hi[a] = std::max(hi[a], double(pc.positions[i * 3 + a]));
    }
  double diag2 = 0;
  for (int a = 0; a < 3; ++a) diag2 += (hi[a] - lo[a]) * (hi[a] - lo[a]);
  ts.extent = std::max(std::sqrt(diag2) / 2.0, 1e-6);

  for (size_t i = 0; i < cams.size(); ++i) {
    const bool holdout = cfg.holdout_every > 0 && cams.size() > 1 && i % size_t(cfg.holdout_every) == 0;
    if (holdout) {
      ts.val_cams.push_back(cams[i]);
      ts.val_gt.push_back(std::move(gts[i]));
    } else {
      ts.train_cams.push_back(cams[i]);
      ts.train_gt.push_back(std::move(gts[i]));
    }
  }
  if (ts.train_cams.empty()) {
    ts.train_cams = ts.val_cams;
    ts.train_gt = ts.val_gt;
  }
  return ts;
}

// Iteration boundaries where densification happens.
inline std::vector<int> densify_points(const DensifyConfig& dc, int iterations) {
  std::vector<int> pts;
  if (!dc.enabled()) return pts;
  for (int it = dc.interval; it <= iterations; it += dc.interval)
    if (it > dc.start_iter && it <= dc.stop_iter) pts.push_back(it);
  return pts;
}

template <class S> TrainReport train_typed(const TrainConfig& cfg) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  TrainScene<S> scene = build_train_scene<S>(cfg);

  OptimConfig oc = cfg.optim;
  oc.scene_extent = scene.extent;
  const Vec3<S> bg = cfg.white_background ? Vec3<S>{S(1), S(1), S(1)} : Vec3<S>{S(0), S(0), S(0)};

  // Split-point search, once, on the initial Gaussians.
  const SceneRows<S> init_rows = scene_rows(scene.init_gs);
  SplitTable splits =
      compute_split_points(init_rows.geo_view(), scene.init_gs.count, scene.train_cams, cfg.mem_limit);

  TrainReport rep;
  rep.mode = mode_name(cfg.mode);
  rep.initial_count = scene.init_gs.count;
  for (const auto& e : splits.cameras) rep.split_cameras += e.split ? 1 : 0;

  // segment boundaries: densify events + eval points + the end
  const std::vector<int> dpts = densify_points(cfg.densify, cfg.iterations);
  std::set<int> bounds(dpts.begin(), dpts.end());
  if (cfg.eval_interval > 0)
    for (int it = cfg.eval_interval; it < cfg.iterations; it += cfg.eval_interval) bounds.insert(it);
  bounds.insert(cfg.iterations);

  const bool dense = cfg.mode == TrainMode::DenseOracle;
  std::unique_ptr<DenseTrainer<S>> dt;
  std::unique_ptr<OffloadEngine<S>> eng;
  if (dense) {
    dt = std::make_unique<DenseTrainer<S>>(scene.init_gs, scene.train_cams, scene.train_gt, oc, cfg.sh_degree, bg,
                                           cfg.workers, splits, cfg.sh_warmup_step);
  } else {
    EngineConfig<S> ec;
    ec.optim = oc;
    ec.chunk_bytes = cfg.chunk_bytes;
    ec.workers = cfg.workers;
    ec.pipelined = cfg.mode == TrainMode::OffloadPipelined;
    ec.sh_degree = cfg.sh_degree;
    ec.sh_warmup_step = cfg.sh_warmup_step;
    ec.background = bg;
    ec.verify_checks = cfg.verify_f64;
    eng = std::make_unique<OffloadEngine<S>>(scene.init_gs, scene.train_cams, scene.train_gt, ec, splits);
  }

  auto snapshot = [&]() { return dense ? dt->snapshot() : eng->snapshot(); };
  auto evaluate = [&](int at_iter) {
    if (scene.val_cams.empty()) return;
    const GaussianSet<S> gs = snapshot();
    const PsnrResult p = psnr_over_views(gs, scene.val_cams, scene.val_gt, cfg.sh_degree, bg, cfg.workers);
    rep.psnr_points.emplace_back(at_iter, p.db);
    rep.final_psnr = p.db;
    rep.final_psnr_exact = p.exact;
  };

  int done = 0;
  for (int b : bounds) {
    const int n = b - done;
    if (n > 0) {
      if (dense) {
        for (const auto& r : dt->run(n)) rep.losses.push_back(double(r.loss));
      } else {
        for (const auto& r : eng->run(n)) rep.losses.push_back(double(r.loss));
      }
      done = b;
    }
    const bool is_densify = std::find(dpts.begin(), dpts.end(), b) != dpts.end();
    if (is_densify) {
      const GaussianSet<S> snap = snapshot();
      const auto& norm = dense ? dt->accum_grad_norm() : eng->accum_grad_norm();
      const auto& cnt = dense ? dt->accum_grad_count() : eng->accum_grad_count();
      const DensifyPlan<S> plan =
          plan_densify<S>(snap, norm, cnt, cfg.densify, scene.extent, cfg.seed ^ (0x9E37ull * uint64_t(b)));
      if (dense)
        dt->apply_densify(plan.survivors, plan.child_rows);
      else
        eng->apply_densify(plan.survivors, plan.child_rows);
    }
    if (b < cfg.iterations && (cfg.eval_interval > 0 && b % cfg.eval_interval == 0) && !is_densify) evaluate(b);
  }
  evaluate(cfg.iterations);

  rep.final_count = dense ? dt->count() : eng->count();
  rep.memory = dense ? dt->memory_report() : eng->memory_report();
  if (dense) {
    rep.host_access = dt->access();
  } else {
    rep.host_access = eng->host_access();
    rep.geo_access = eng->geo_access();
    rep.forwarded_bytes = eng->forwarded_bytes();
    rep.d2h_bytes = eng->d2h_bytes();
    rep.timeline = eng->timeline();
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return rep;
}

inline TrainReport train(const TrainConfig& cfg) {
  return cfg.verify_f64 ? train_typed<double>(cfg) : train_typed<float>(cfg);
}

}  // namespace gss
