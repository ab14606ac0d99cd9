#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "gss/adam.hpp"
#include "gss/render.hpp"
#include "gss/scene.hpp"
#include "gss/splitter.hpp"
#include "gss/store.hpp"
#include "gss/synth.hpp"

namespace gss {

struct TimelineRow {
  int iteration;
  const char* stage;
  int64_t t0_ns, t1_ns;
  uint64_t bytes;
  int worker;  // 0 device, 1 host
};

template <class S> struct EngineConfig {
  OptimConfig optim;
  size_t chunk_bytes = size_t(32) << 20;
  int workers = 1;          // renderer-internal worker count
  bool pipelined = false;
  int sh_degree = 3;
  // Progressive SH: one band unlocked every sh_warmup_step iterations
  // (0 keeps the full degree from the start).
  int sh_warmup_step = 0;
  Vec3<S> background{S(0), S(0), S(0)};
  S low_pass = S(kLowPass);
  bool verify_checks = false;
  // Test instrumentation: called at the start of each stage.
  std::function<void(const char*, int)> stage_hook;

  int degree_at(int iter) const {
    if (sh_warmup_step <= 0) return sh_degree;
    return std::min(sh_degree, iter / sh_warmup_step);
  }
};

// Host-offloading training engine: geometric tier device-resident, the rest
// host-resident with parameter forwarding, lazy deferred host updates, and
// the pipelined two-worker schedule. The serial schedule executes the same
// stage DAG topologically and produces identical arithmetic.
template <class S> class OffloadEngine {
public:
  struct IterResult {
    S loss{};
    int valid_count = 0;
  };

  OffloadEngine(const GaussianSet<S>& init, std::vector<Camera<S>> cams, std::vector<Image<S>> gts,
                EngineConfig<S> cfg, SplitTable splits = {})
      : cfg_(std::move(cfg)), cams_(std::move(cams)), gts_(std::move(gts)), splits_(std::move(splits)) {
    store_ = setup_tiers(init, cfg_.optim);
    accum_norm_.assign(store_.count, 0.0);
    accum_cnt_.assign(store_.count, 0);
    if (splits_.cameras.empty()) splits_.cameras.resize(cams_.size());
    epoch_start_ = std::chrono::steady_clock::now();
  }

  // Runs n iterations and drains the pipeline (all host updates applied).
  std::vector<IterResult> run(int n) {
    if (n <= 0) return {};
    results_.assign(n, {});
    const int g0 = next_iter_;
    stage_cull(g0);
    if (cfg_.pipelined)
      run_pipelined(g0, g0 + n);
    else
      run_serial(g0, g0 + n);
    next_iter_ = g0 + n;
    if (cfg_.verify_checks) {
      store_.device_geo.check_counters();
      store_.host_nongeo.check_counters();
    }
    return std::move(results_);
  }

  // Pure materialization of the current parameters (both tiers restored).
  GaussianSet<S> snapshot() const {
    GaussianSet<S> gs;
    gs.resize(store_.count);
    gs.sh_degree = cfg_.sh_degree;
    std::vector<int> all(store_.count);
    std::iota(all.begin(), all.end(), 0);
    std::vector<S> geo(size_t(store_.count) * kGeoDim);
    std::vector<S> ng(size_t(store_.count) * kNonGeoDim);
    restore_view<S>(store_.device_geo, all, nullptr, geo.data());
    restore_view<S>(store_.host_nongeo, all, nullptr, ng.data());
    for (int i = 0; i < store_.count; ++i) {
      const S* g = geo.data() + size_t(i) * kGeoDim;
      for (int k = 0; k < 3; ++k) gs.mean[i * 3 + k] = g[k];
      for (int k = 0; k < 3; ++k) gs.scale[i * 3 + k] = g[3 + k];
      for (int k = 0; k < 4; ++k) gs.quaternion[i * 4 + k] = g[6 + k];
      const S* nr = ng.data() + size_t(i) * kNonGeoDim;
      gs.opacity[i] = nr[0];
      for (int k = 0; k < kShScalars; ++k) gs.sh[i * kShScalars + k] = nr[1 + k];
    }
    return gs;
  }

  // Densification barrier: replaces the population. survivors keep their
  // stored parameters, optimizer state and counters; children get the given
  // rows with zero state. Must be called drained (run() always drains).
  void apply_densify(const std::vector<int>& survivors, const std::vector<S>& child_rows) {
    const int n_child = int(child_rows.size() / kParamDim);
    const int n_new = int(survivors.size()) + n_child;
    store_.unregister_arena_bytes();
    Arena<S> new_geo, new_ng;
    new_geo.init(n_new, kGeoDim, store_.device_geo.groups, store_.device_geo.defer_max);
    new_ng.init(n_new, kNonGeoDim, store_.host_nongeo.groups, store_.host_nongeo.defer_max);
    new_geo.step = store_.device_geo.step;
    new_ng.step = store_.host_nongeo.step;
    new_geo.access = store_.device_geo.access;
    new_ng.access = store_.host_nongeo.access;
    for (size_t j = 0; j < survivors.size(); ++j) {
      const int old_id = survivors[j];
      for (int c = 0; c < kGeoDim; ++c) {
        new_geo.w[j * kGeoDim + c] = store_.device_geo.w[size_t(old_id) * kGeoDim + c];
        new_geo.m[j * kGeoDim + c] = store_.device_geo.m[size_t(old_id) * kGeoDim + c];
        new_geo.v[j * kGeoDim + c] = store_.device_geo.v[size_t(old_id) * kGeoDim + c];
      }
      for (int c = 0; c < kNonGeoDim; ++c) {
        new_ng.w[j * kNonGeoDim + c] = store_.host_nongeo.w[size_t(old_id) * kNonGeoDim + c];
        new_ng.m[j * kNonGeoDim + c] = store_.host_nongeo.m[size_t(old_id) * kNonGeoDim + c];
        new_ng.v[j * kNonGeoDim + c] = store_.host_nongeo.v[size_t(old_id) * kNonGeoDim + c];
      }
      new_geo.counter[j] = store_.device_geo.counter[old_id];
      new_ng.counter[j] = store_.host_nongeo.counter[old_id];
    }
    for (int k = 0; k < n_child; ++k) {
      const S* row = child_rows.data() + size_t(k) * kParamDim;
      const size_t j = survivors.size() + k;
      for (int c = 0; c < kGeoDim; ++c) new_geo.w[j * kGeoDim + c] = row[c];
      for (int c = 0; c < kNonGeoDim; ++c) new_ng.w[j * kNonGeoDim + c] = row[kGeoDim + c];
    }
    store_.device_geo = std::move(new_geo);
    store_.host_nongeo = std::move(new_ng);
    store_.count = n_new;
    store_.register_arena_bytes();
    accum_norm_.assign(n_new, 0.0);
    accum_cnt_.assign(n_new, 0);
    for (auto& f : fwd_) {
      unregister_fwd(f);
      f = {};
    }
    for (auto& g : gstage_) {
      unregister_gstage(*g);
      g->grads = {};
      g->iteration = -1;
    }
  }

  MemoryReport memory_report() const {
    MemoryReport r;
    r.device_peak_total = store_.device_mem.peak_total();
    r.device_peak_snapshot = store_.device_mem.peak_snapshot();
    r.device_category_peaks = store_.device_mem.category_peaks();
    for (int c = 0; c < kMemCats; ++c) r.device_current[c] = store_.device_mem.current(MemCat(c));
    r.host_bytes = store_.host_mem.current_total();
    r.device_param_share = store_.device_param_share;
    return r;
  }
  void reset_peak() { store_.device_mem.reset_peak(); store_.host_mem.reset_peak(); }

  const AccessReport& host_access() const { return store_.host_nongeo.access; }
  const AccessReport& geo_access() const { return store_.device_geo.access; }
  const std::vector<TimelineRow>& timeline() const { return timeline_; }
  uint64_t forwarded_bytes() const { return forwarded_bytes_; }
  uint64_t d2h_bytes() const { return d2h_bytes_; }
  int count() const { return store_.count; }
  const TieredStore<S>& store() const { return store_; }

  // Densification statistics since the last reset: accumulated screen-space
  // positional gradient norms and visibility counts.
  const std::vector<double>& accum_grad_norm() const { return accum_norm_; }
  const std::vector<int>& accum_grad_count() const { return accum_cnt_; }
  void reset_accum() {
    std::fill(accum_norm_.begin(), accum_norm_.end(), 0.0);
    std::fill(accum_cnt_.begin(), accum_cnt_.end(), 0);
  }

private:
  struct Plan {
    int iteration = -1;
    std::vector<int> ids;
    std::vector<int> ids_left, ids_right;
    bool split = false;
    int column = 0;
  };

  static constexpr int kPlanRing = 3;

  EngineConfig<S> cfg_;
  std::vector<Camera<S>> cams_;
  std::vector<Image<S>> gts_;
  SplitTable splits_;
  TieredStore<S> store_;
  Plan plans_[kPlanRing];
  ForwardStage<S> fwd_[2];
  std::unique_ptr<GradStage<S>> gstage_[2] = {std::make_unique<GradStage<S>>(), std::make_unique<GradStage<S>>()};
  GradBuffer<S> iter_grads_;  // render output, alive until handoff
  std::vector<IterResult> results_;
  std::vector<double> accum_norm_;
  std::vector<int> accum_cnt_;
  std::vector<TimelineRow> timeline_;
  std::mutex timeline_mu_;
  uint64_t forwarded_bytes_ = 0;
  uint64_t d2h_bytes_ = 0;
  int next_iter_ = 0;
  int seg_begin_ = 0;
  std::chrono::steady_clock::time_point epoch_start_;

  Plan& plan(int g) { return plans_[g % kPlanRing]; }
  const Camera<S>& cam_of(int g) const { return cams_[size_t(g) % cams_.size()]; }
  const Image<S>& gt_of(int g) const { return gts_[size_t(g) % gts_.size()]; }
  const SplitEntry& split_of(int g) const { return splits_.cameras[size_t(g) % cams_.size()]; }

  int64_t now_ns() const {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - epoch_start_)
        .count();
  }
  void record(int g, const char* stage, int64_t t0, uint64_t bytes, int worker) {
    std::lock_guard<std::mutex> lk(timeline_mu_);
    timeline_.push_back({g, stage, t0, now_ns(), bytes, worker});
  }
  void hook(const char* stage, int g) {
    if (cfg_.stage_hook) cfg_.stage_hook(stage, g);
  }

  RowView<S> geo_view() const { return {store_.device_geo.w.data(), kGeoDim}; }

  void unregister_fwd(ForwardStage<S>& f) {
    if (f.iteration >= 0) store_.device_mem.add(MemCat::Staging, -int64_t(f.byte_size()));
  }
  void unregister_gstage(GradStage<S>& g) {
    if (g.iteration >= 0) store_.host_mem.add(MemCat::Staging, -int64_t(g.grads.byte_size()));
  }

  // ---- stages -------------------------------------------------------------

  // Frustum culling for iteration g on the device-resident geometric tier;
  // split cameras cull both sub-viewports.
  void stage_cull(int g) {
    hook("cull", g);
    const int64_t t0 = now_ns();
    Plan& p = plan(g);
    const Camera<S>& cam = cam_of(g);
    const SplitEntry& se = split_of(g);
    p.iteration = g;
    p.split = se.split;
    p.column = se.column;
    p.ids_left.clear();
    p.ids_right.clear();
    if (se.split) {
      const Viewport<S> lvp{S(0), S(se.column), S(0), S(cam.height)};
      const Viewport<S> rvp{S(se.column), S(cam.width), S(0), S(cam.height)};
      p.ids_left = frustum_cull(geo_view(), store_.count, cam, lvp, cfg_.low_pass);
      p.ids_right = frustum_cull(geo_view(), store_.count, cam, rvp, cfg_.low_pass);
      p.ids.clear();
      std::set_union(p.ids_left.begin(), p.ids_left.end(), p.ids_right.begin(), p.ids_right.end(),
                     std::back_inserter(p.ids));
    } else {
      p.ids = frustum_cull(geo_view(), store_.count, cam, Viewport<S>::full(cam.width, cam.height), cfg_.low_pass);
    }
    record(g, "cull", t0, 0, 0);
  }

  // Parameter forwarding: restore_view of next-iteration valid ids with the
  // pending gradients, staged to the device in chunks. Host state untouched.
  void stage_forward_params(int g) {
    hook("forward_params", g);
    const int64_t t0 = now_ns();
    Plan& p = plan(g);
    ForwardStage<S>& fs = fwd_[g % 2];
    unregister_fwd(fs);
    fs.ids = p.ids;
    fs.rows.assign(fs.ids.size() * kNonGeoDim, S(0));
    fs.iteration = g;
    GradStage<S>* pending_stage = nullptr;
    if (g > seg_begin_ && gstage_[(g - 1) % 2]->iteration == g - 1) pending_stage = gstage_[(g - 1) % 2].get();
    if (pending_stage) {
      pending_stage->add_reader();
      const SparseGrads<S> pending{pending_stage->grads.ids, pending_stage->grads.rows.data(), size_t(kNonGeoDim), 0};
      restore_view<S>(store_.host_nongeo, fs.ids, &pending, fs.rows.data());
      pending_stage->remove_reader();
    } else {
      restore_view<S>(store_.host_nongeo, fs.ids, nullptr, fs.rows.data());
    }
    fs.chunks = make_chunks(fs.ids.size(), kNonGeoDim * sizeof(S), cfg_.chunk_bytes);
    uint64_t bytes = 0;
    for (const auto& c : fs.chunks) bytes += c.bytes;
    forwarded_bytes_ += bytes;
    store_.device_mem.add(MemCat::Staging, int64_t(fs.byte_size()));
    record(g, "forward_params", t0, bytes, 1);
  }

  // Device forward/backward for iteration g (two sub-passes when split),
  // loss against the ground truth, gradients aggregated.
  void stage_render(int g) {
    hook("render", g);
    const int64_t t0 = now_ns();
    Plan& p = plan(g);
    ForwardStage<S>& fs = fwd_[g % 2];
    if (fs.iteration != g) throw InvariantViolation("render: forwarded buffer is not for this iteration");
    const Camera<S>& cam = cam_of(g);
    const Image<S>& gt = gt_of(g);
    const size_t full_elems = size_t(cam.width) * cam.height * 3;

    // id -> slot in the forwarded (union) buffer
    auto slot_map_for = [&](const std::vector<int>& sub) {
      std::vector<int> map(sub.size());
      size_t u = 0;
      for (size_t k = 0; k < sub.size(); ++k) {
        while (fs.ids[u] != sub[k]) ++u;
        map[k] = int(u);
      }
      return map;
    };

    auto run_pass = [&](const std::vector<int>& ids, const Viewport<S>& vp, const std::vector<int>* slot_map,
                        S& loss_out) {
      RenderScene<S> sc;
      sc.ids = ids;
      sc.geo = geo_view();
      sc.nongeo = NonGeoView<S>{fs.rows.data(), size_t(kNonGeoDim), true, slot_map ? slot_map->data() : nullptr};
      sc.sh_degree = cfg_.degree_at(g);
      sc.background = cfg_.background;
      sc.low_pass = cfg_.low_pass;
      RenderResult<S> rr = rasterize_forward(sc, cam, vp, cfg_.workers);
      const int64_t act = int64_t(rr.aux.byte_size() + 2 * rr.image.data.size() * sizeof(S));
      store_.device_mem.add(MemCat::Activations, act);
      Image<S> gt_win(rr.image.width, rr.image.height);
      for (int y = 0; y < rr.image.height; ++y)
        for (int x = 0; x < rr.image.width; ++x)
          for (int c = 0; c < 3; ++c) gt_win.at(y, x, c) = gt.at(y + rr.aux.py0, x + rr.aux.px0, c);
      Image<S> dimg;
      loss_out = compute_loss_l1(rr.image, gt_win, dimg, full_elems);
      GradBuffer<S> gb = rasterize_backward(sc, cam, rr, dimg, cfg_.workers);
      store_.device_mem.add(MemCat::Activations, -act);
      return gb;
    };

    S loss = S(0);
    if (p.split) {
      const auto lmap = slot_map_for(p.ids_left);
      const auto rmap = slot_map_for(p.ids_right);
      S ll = S(0), rl = S(0);
      const Viewport<S> lvp{S(0), S(p.column), S(0), S(cam.height)};
      const Viewport<S> rvp{S(p.column), S(cam.width), S(0), S(cam.height)};
      GradBuffer<S> gl = run_pass(p.ids_left, lvp, &lmap, ll);
      store_.device_mem.add(MemCat::Grads, int64_t(gl.byte_size()));
      GradBuffer<S> gr = run_pass(p.ids_right, rvp, &rmap, rl);
      store_.device_mem.add(MemCat::Grads, int64_t(gr.byte_size()));
      loss = ll + rl;
      iter_grads_ = aggregate_grads(gl, gr);
      store_.device_mem.add(MemCat::Grads, -int64_t(gl.byte_size()) - int64_t(gr.byte_size()));
      if (cfg_.verify_checks && iter_grads_.ids != p.ids)
        throw InvariantViolation("split: sub-pass id union differs from the full cull");
    } else {
      iter_grads_ = run_pass(p.ids, Viewport<S>::full(cam.width, cam.height), nullptr, loss);
    }
    store_.device_mem.add(MemCat::Grads, int64_t(iter_grads_.byte_size()));
    results_[g - seg_begin_] = {loss, int(p.ids.size())};
    record(g, "render", t0, 0, 0);
  }

  // Immediate device-side update of the geometric tier (deferred kernel).
  void stage_geo_update(int g) {
    hook("geo_update", g);
    const int64_t t0 = now_ns();
    const SparseGrads<S> grads{iter_grads_.ids, iter_grads_.rows.data(), size_t(kParamDim), 0};
    deferred_update(store_.device_geo, grads);
    record(g, "geo_update", t0, 0, 0);
  }

  // D2H gradient handoff into the alternating staging buffer (non-geometric
  // columns), plus densification statistics.
  void stage_handoff(int g) {
    hook("handoff", g);
    const int64_t t0 = now_ns();
    GradStage<S>& st = *gstage_[g % 2];
    st.acquire_write(g);
    unregister_gstage(st);
    const size_t v = iter_grads_.ids.size();
    st.grads.ids = iter_grads_.ids;
    st.grads.rows.assign(v * kNonGeoDim, S(0));
    st.grads.mean2d.clear();
    for (size_t k = 0; k < v; ++k) {
      const S* src = iter_grads_.row(k) + kGeoDim;
      S* dst = st.grads.rows.data() + k * kNonGeoDim;
      for (int c = 0; c < kNonGeoDim; ++c) dst[c] = src[c];
      const double gx = double(iter_grads_.mean2d[k * 2]);
      const double gy = double(iter_grads_.mean2d[k * 2 + 1]);
      const int id = iter_grads_.ids[k];
      accum_norm_[id] += std::sqrt(gx * gx + gy * gy);
      accum_cnt_[id] += 1;
    }
    st.release_write(g);
    const uint64_t moved = uint64_t(v) * kNonGeoDim * sizeof(S);
    d2h_bytes_ += moved;
    store_.host_mem.add(MemCat::Staging, int64_t(st.grads.byte_size()));
    store_.device_mem.add(MemCat::Grads, -int64_t(iter_grads_.byte_size()));
    iter_grads_ = {};
    record(g, "handoff", t0, moved, 0);
  }

  // Lazy host-side deferred update for iteration g.
  void stage_lazy(int g) {
    hook("lazy_update", g);
    const int64_t t0 = now_ns();
    GradStage<S>& st = *gstage_[g % 2];
    if (st.iteration != g) throw InvariantViolation("lazy update: staging buffer holds a different iteration");
    st.add_reader();
    const SparseGrads<S> grads{st.grads.ids, st.grads.rows.data(), size_t(kNonGeoDim), 0};
    deferred_update(store_.host_nongeo, grads);
    st.remove_reader();
    record(g, "lazy_update", t0, 0, 1);
  }

  // ---- schedules ----------------------------------------------------------

  void run_serial(int g0, int g1) {
    seg_begin_ = g0;
    for (int g = g0; g < g1; ++g) {
      stage_forward_params(g);
      stage_render(g);
      if (g > g0) stage_lazy(g - 1);
      stage_geo_update(g);
      if (g + 1 < g1) stage_cull(g + 1);
      stage_handoff(g);
    }
    stage_lazy(g1 - 1);
  }

  struct Event {
    std::mutex m;
    std::condition_variable cv;
    bool done = false;
    void set() {
      {
        std::lock_guard<std::mutex> lk(m);
        done = true;
      }
      cv.notify_all();
    }
    void wait() {
      std::unique_lock<std::mutex> lk(m);
      cv.wait(lk, [this] { return done; });
    }
  };

  void run_pipelined(int g0, int g1) {
    seg_begin_ = g0;
    const int n = g1 - g0;
    std::vector<std::unique_ptr<Event>> ev_fp(n), ev_handoff(n), ev_cull(n);
    for (int j = 0; j < n; ++j) {
      ev_fp[j] = std::make_unique<Event>();
      ev_handoff[j] = std::make_unique<Event>();
      ev_cull[j] = std::make_unique<Event>();
    }
    ev_cull[0]->set();  // cull(g0) ran in run()

    std::exception_ptr dev_err, host_err;

    std::thread device([&] {
      try {
        for (int j = 0; j < n; ++j) {
          const int g = g0 + j;
          ev_fp[j]->wait();
          stage_render(g);
          stage_geo_update(g);
          if (j + 1 < n) {
            stage_cull(g + 1);
            ev_cull[j + 1]->set();
          }
          stage_handoff(g);
          ev_handoff[j]->set();
        }
      } catch (...) {
        dev_err = std::current_exception();
        for (auto& e : ev_handoff) e->set();
        for (auto& e : ev_cull) e->set();
      }
    });

    std::thread host([&] {
      try {
        for (int j = 0; j < n; ++j) {
          const int g = g0 + j;
          if (j > 0) ev_handoff[j - 1]->wait();
          ev_cull[j]->wait();
          if (dev_err) return;
          stage_forward_params(g);
          ev_fp[j]->set();
          if (j > 0) stage_lazy(g - 1);
        }
        ev_handoff[n - 1]->wait();
        if (dev_err) return;
        stage_lazy(g1 - 1);
      } catch (...) {
        host_err = std::current_exception();
        for (auto& e : ev_fp) e->set();
      }
    });

    device.join();
    host.join();
    if (dev_err) std::rethrow_exception(dev_err);
    if (host_err) std::rethrow_exception(host_err);
  }
};

}  // namespace gss
