#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "gss/engine.hpp"
#include "gss/trainer.hpp"
#include "test_util.hpp"

using namespace gss;
using gsstest::rel_err;

namespace {

template <class S> struct EngineFixture {
  SynthScene<S> scene;
  GaussianSet<S> start;  // re-initialized from the truth's points: real dynamics
  EngineConfig<S> cfg;

  EngineFixture(int n, int cams, int img, uint64_t seed, int defer_max = 15, bool pipelined = false) {
    SynthConfig sc;
    sc.n = n;
    sc.cams = cams;
    sc.width = sc.height = img;
    sc.seed = seed;
    scene = synth_scene<S>(sc);
    PointCloud pc;
    for (int i = 0; i < scene.truth.count; ++i) {
      for (int a = 0; a < 3; ++a) pc.positions.push_back(float(scene.truth.mean[i * 3 + a]));
      for (int c = 0; c < 3; ++c)
        pc.colors.push_back(float(std::clamp(double(scene.truth.sh[i * kShScalars + c]) * kShC0 + 0.5, 0.0, 1.0)));
    }
    start = init_gaussians<S>(pc);
    cfg.optim.defer_max = defer_max;
    cfg.optim.geo_defer_max = defer_max;
    cfg.pipelined = pipelined;
    cfg.sh_degree = 3;
  }

  OffloadEngine<S> make_engine(SplitTable splits = {}) const {
    return OffloadEngine<S>(start, scene.cameras, scene.gt_images, cfg, splits);
  }
};

template <class S>
DenseTrainer<S> make_dense(const EngineFixture<S>& fx) {
  return DenseTrainer<S>(fx.start, fx.scene.cameras, fx.scene.gt_images, fx.cfg.optim, fx.cfg.sh_degree,
                         fx.cfg.background, fx.cfg.workers);
}

template <class S> double max_param_dev(const GaussianSet<S>& a, const GaussianSet<S>& b) {
  double worst = 0;
  std::vector<S> ra(kParamDim), rb(kParamDim);
  for (int i = 0; i < a.count; ++i) {
    a.full_row(i, ra.data());
    b.full_row(i, rb.data());
    for (int c = 0; c < kParamDim; ++c) worst = std::max(worst, rel_err(double(ra[c]), double(rb[c])));
  }
  return worst;
}

}  // namespace

TEST_CASE("setup_tiers: arena sizes and the exact 10/59 device parameter share") {
  SynthConfig sc;
  sc.n = 1000;
  sc.cams = 1;
  sc.width = sc.height = 8;
  const auto ss = synth_scene<float>(sc);
  OptimConfig oc;
  const auto ts = setup_tiers(ss.truth, oc);
  CHECK(ts.device_geo.w.size() == 10000);
  CHECK(ts.host_nongeo.w.size() == 49000);
  CHECK(ts.device_geo.m.size() == 10000);
  CHECK(ts.host_nongeo.v.size() == 49000);
  CHECK(ts.host_nongeo.counter.size() == 1000);
  CHECK(ts.device_param_share == 10.0 / 59.0);
  CHECK(ts.device_mem.current(MemCat::Params) == 10000 * 4);
  CHECK(ts.device_mem.current(MemCat::OptStates) == 20000 * 4 + 1000);
  CHECK(ts.host_mem.current(MemCat::Params) == 49000 * 4);
}

TEST_CASE("setup_tiers: empty set gives empty arenas and zero bytes") {
  GaussianSet<float> gs;
  gs.resize(0);
  const auto ts = setup_tiers(gs, OptimConfig{});
  CHECK(ts.device_geo.w.empty());
  CHECK(ts.device_mem.current_total() == 0);
  CHECK(ts.host_mem.current(MemCat::Params) == 0);
}

TEST_CASE("chunk partition: 100 MB at 32 MB chunks is 3 full chunks plus a remainder") {
  const size_t row_bytes = kNonGeoDim * 4;
  const size_t rows = (100ull << 20) / row_bytes;
  const auto chunks = make_chunks(rows, row_bytes, 32ull << 20);
  REQUIRE(chunks.size() == 4);
  CHECK(chunks[0].bytes <= 32ull << 20);
  CHECK(chunks[0].rows == chunks[1].rows);
  size_t total = 0;
  for (const auto& c : chunks) total += c.rows;
  CHECK(total == rows);
  CHECK(chunks[3].rows < chunks[0].rows);
}

TEST_CASE("chunk partition: one row per chunk floor") {
  const auto chunks = make_chunks(5, 1000, 1000);
  CHECK(chunks.size() == 5);
}

TEST_CASE("fresh engine snapshot equals the initial parameters (nothing pending, nothing to restore)") {
  EngineFixture<float> fx(60, 3, 16, 21);
  auto eng = fx.make_engine();
  const auto snap = eng.snapshot();
  for (int i = 0; i < fx.start.count; ++i) {
    CHECK(snap.opacity[i] == fx.start.opacity[i]);
    CHECK(snap.mean[i * 3] == fx.start.mean[i * 3]);
    for (int k = 0; k < kShScalars; ++k)
      CHECK(snap.sh[i * kShScalars + k] == fx.start.sh[i * kShScalars + k]);
  }
}

TEST_CASE("scheduling equivalence: serial and pipelined produce bitwise-identical trajectories") {
  for (int defer : {0, 15}) {
    EngineFixture<float> fx_s(120, 6, 24, 33, defer, false);
    EngineFixture<float> fx_p(120, 6, 24, 33, defer, true);
    auto es = fx_s.make_engine();
    auto ep = fx_p.make_engine();
    const auto rs = es.run(40);
    const auto rp = ep.run(40);
    REQUIRE(rs.size() == rp.size());
    for (size_t i = 0; i < rs.size(); ++i) {
      REQUIRE(rs[i].loss == rp[i].loss);  // bitwise
      REQUIRE(rs[i].valid_count == rp[i].valid_count);
    }
    const auto ss = es.snapshot();
    const auto sp = ep.snapshot();
    REQUIRE(ss.mean == sp.mean);
    REQUIRE(ss.sh == sp.sh);
    REQUIRE(ss.opacity == sp.opacity);
  }
}

TEST_CASE("offload with MAX=0 tracks the dense oracle bitwise (f64) across segments") {
  EngineFixture<double> fx(80, 5, 16, 44, 0, true);
  auto eng = fx.make_engine();
  auto dense = make_dense(fx);
  std::vector<double> el, dl;
  for (int seg : {7, 13, 20}) {
    for (const auto& r : eng.run(seg)) el.push_back(double(r.loss));
    for (const auto& r : dense.run(seg)) dl.push_back(double(r.loss));
  }
  REQUIRE(el.size() == dl.size());
  for (size_t i = 0; i < el.size(); ++i) REQUIRE(el[i] == dl[i]);
  const auto se = eng.snapshot();
  const auto sd = dense.snapshot();
  REQUIRE(se.mean == sd.mean);
  REQUIRE(se.scale == sd.scale);
  REQUIRE(se.quaternion == sd.quaternion);
  REQUIRE(se.opacity == sd.opacity);
  REQUIRE(se.sh == sd.sh);
}

TEST_CASE("offload with MAX=15 stays within 1e-4 of the dense oracle over 100 iterations") {
  EngineFixture<float> fx(100, 6, 20, 55, 15, false);
  auto eng = fx.make_engine();
  auto dense = make_dense(fx);
  eng.run(100);
  dense.run(100);
  const double dev = max_param_dev(eng.snapshot(), dense.snapshot());
  std::printf("offload MAX=15 vs dense max rel dev after 100 iters: %.3e\n", dev);
  CHECK(dev <= 1e-4);
}

TEST_CASE("host materialization: flush equals the pure restore view bitwise") {
  EngineFixture<float> fx(50, 4, 16, 66, 15, false);
  auto eng = fx.make_engine();
  eng.run(7);
  const auto& host = eng.store().host_nongeo;
  std::vector<int> all(eng.count());
  std::iota(all.begin(), all.end(), 0);
  std::vector<float> view(all.size() * kNonGeoDim);
  restore_view<float>(host, all, nullptr, view.data());
  Arena<float> copy = host;
  flush_deferred(copy);
  for (size_t i = 0; i < copy.w.size(); ++i) REQUIRE(copy.w[i] == view[i]);
}

TEST_CASE("device geo update: zero gradients and zero momenta leave parameters still") {
  EngineFixture<float> fx(30, 2, 12, 7);
  auto eng = fx.make_engine();
  const auto before = eng.store().device_geo.w;
  auto& geo = const_cast<Arena<float>&>(eng.store().device_geo);
  deferred_update(geo, SparseGrads<float>{{}, nullptr, size_t(kParamDim), 0});
  CHECK(eng.store().device_geo.w == before);
}

TEST_CASE("empty frustum iteration: zero valid ids, loss well-defined, counters advance") {
  SynthConfig sc;
  sc.n = 20;
  sc.cams = 1;
  sc.width = sc.height = 8;
  sc.seed = 3;
  auto scene = synth_scene<float>(sc);
  scene.cameras[0] = look_at_camera<float>({100, 100, 100}, {200, 200, 200}, 10.0f, 10.0f, 8, 8, 0.1f, 1.0f);
  EngineConfig<float> cfg;
  cfg.optim.defer_max = 15;
  OffloadEngine<float> eng(scene.truth, scene.cameras, scene.gt_images, cfg);
  const auto res = eng.run(2);
  REQUIRE(res.size() == 2);
  CHECK(res[0].valid_count == 0);
  CHECK(std::isfinite(double(res[0].loss)));
  const auto& counters = eng.store().host_nongeo.counter;
  for (auto c : counters) CHECK(c == 2);
}

TEST_CASE("memory accounting: dense trainer matches the closed-form model bytes") {
  EngineFixture<float> fx(100, 2, 8, 9);
  auto dense = make_dense(fx);
  const auto rep = dense.memory_report();
  const int64_t n = 100;
  CHECK(rep.device_current[0] == n * 59 * 4);          // params
  CHECK(rep.device_current[1] == n * 59 * 2 * 4 + n);  // states + counters
  CHECK(rep.device_current[2] == n * 59 * 4);          // dense grads
  const int64_t model = rep.device_current[0] + rep.device_current[1] + rep.device_current[2];
  CHECK(model == n * 59 * 4 * 4 + n);
}

TEST_CASE("memory accounting: offload device model bytes are the 10/59 share plus live slices") {
  EngineFixture<float> fx(200, 4, 16, 10);
  auto eng = fx.make_engine();
  eng.run(6);
  const auto rep = eng.memory_report();
  const int64_t n = 200;
  CHECK(rep.device_current[0] == n * 10 * 4);
  CHECK(rep.device_param_share == 10.0 / 59.0);
  int64_t sum = 0;
  for (int c = 0; c < kMemCats; ++c) sum += rep.device_peak_snapshot[c];
  CHECK(sum == rep.device_peak_total);
  CHECK(rep.device_peak_total >= rep.device_current[0]);
}

TEST_CASE("memory: activation bytes scale with rendered pixel count") {
  auto probe = [](int img) {
    EngineFixture<float> fx(80, 2, img, 12);
    auto eng = fx.make_engine();
    eng.run(2);
    return eng.memory_report().device_category_peaks[int(MemCat::Activations)];
  };
  const auto a16 = probe(16), a32 = probe(32);
  CHECK(a32 > 2 * a16);  // 4x pixels, per-pixel lists scale along
}

TEST_CASE("peak device memory is a running max and resets only explicitly") {
  EngineFixture<float> fx(60, 3, 16, 13);
  auto eng = fx.make_engine();
  eng.run(3);
  const auto p1 = eng.memory_report().device_peak_total;
  eng.run(3);
  const auto p2 = eng.memory_report().device_peak_total;
  CHECK(p2 >= p1);
  eng.reset_peak();
  const auto rep = eng.memory_report();
  int64_t cur = 0;
  for (int c = 0; c < kMemCats; ++c) cur += rep.device_current[c];
  CHECK(rep.device_peak_total == cur);
}

TEST_CASE("gradient staging safety: randomized stage delays never violate buffer ownership") {
  // ownership asserts inside GradStage throw on any overlap; random delays
  // shake the pipelined schedule
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto delays = std::make_shared<std::vector<int>>();
    for (int i = 0; i < 64; ++i) delays->push_back(int(rng.next_u64() % 900));
    auto counter = std::make_shared<std::atomic<size_t>>(0);
    EngineFixture<float> fx(60, 4, 12, 70 + seed, 15, true);
    auto cfg = fx.cfg;
    cfg.stage_hook = [delays, counter](const char*, int) {
      const size_t k = counter->fetch_add(1);
      std::this_thread::sleep_for(std::chrono::microseconds((*delays)[k % delays->size()]));
    };
    OffloadEngine<float> eng(fx.start, fx.scene.cameras, fx.scene.gt_images, cfg);
    CHECK_NOTHROW(eng.run(12));
  }
}

TEST_CASE("densify barrier on the engine: survivors keep state, children start clean") {
  EngineFixture<float> fx(40, 3, 12, 15);
  auto eng = fx.make_engine();
  eng.run(5);
  const auto& host = eng.store().host_nongeo;
  std::vector<int> survivors;
  for (int i = 1; i < eng.count(); ++i) survivors.push_back(i);
  std::vector<float> child(kParamDim, 0.25f);
  const auto m_before = host.m;
  const auto c_before = host.counter;
  eng.apply_densify(survivors, child);
  CHECK(eng.count() == 40);  // -1 +1
  const auto& host2 = eng.store().host_nongeo;
  for (size_t j = 0; j < survivors.size(); ++j) {
    CHECK(host2.counter[j] == c_before[survivors[j]]);
    for (int c = 0; c < kNonGeoDim; ++c)
      CHECK(host2.m[j * kNonGeoDim + c] == m_before[size_t(survivors[j]) * kNonGeoDim + c]);
  }
  const size_t child_row = survivors.size();
  CHECK(host2.counter[child_row] == 0);
  for (int c = 0; c < kNonGeoDim; ++c) {
    CHECK(host2.m[child_row * kNonGeoDim + c] == 0.0f);
    CHECK(host2.w[child_row * kNonGeoDim + c] == 0.25f);
  }
  CHECK_NOTHROW(eng.run(3));
}
