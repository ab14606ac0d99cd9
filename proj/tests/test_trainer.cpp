#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "gss/bench.hpp"
#include "gss/config_json.hpp"
#include "gss/report.hpp"
#include "gss/trainer.hpp"
#include "test_util.hpp"

using namespace gss;

namespace {

TrainConfig small_config(TrainMode mode, int iters, uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.synth.n = 120;
  cfg.synth.cams = 16;
  cfg.synth.width = cfg.synth.height = 24;
  cfg.iterations = iters;
  cfg.seed = seed;
  cfg.mode = mode;
  cfg.densify.stop_iter = 0;  // disabled
  return cfg;
}

}  // namespace

TEST_CASE("config validation rejects bad values before any work") {
  TrainConfig cfg = small_config(TrainMode::DenseOracle, 10);
  CHECK_NOTHROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.iterations = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.mem_limit = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.optim.defer_max = 255;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.scene_type = "colmap";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.densify.grad_threshold = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config json round trip and unknown-key rejection") {
  TrainConfig cfg = small_config(TrainMode::OffloadSerial, 42, 9);
  cfg.optim.lr_sh = 1.25e-3;
  cfg.chunk_bytes = 1 << 20;
  const std::string text = train_config_to_json(cfg);
  const TrainConfig back = parse_train_config(text);
  CHECK(back.iterations == 42);
  CHECK(back.seed == 9);
  CHECK(back.mode == TrainMode::OffloadSerial);
  CHECK(back.optim.lr_sh == doctest::Approx(1.25e-3));
  CHECK(back.chunk_bytes == size_t(1) << 20);
  CHECK_THROWS_AS(parse_train_config("{\"iterstions\": 3}"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("{\"mode\": \"gpu\"}"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("not json"), ConfigError);
}

TEST_CASE("psnr: identical images report the exact sentinel") {
  Image<float> a(6, 6);
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] = float(i) / 120.0f;
  const auto p = psnr(a, a);
  CHECK(p.exact);
  CHECK(std::isinf(p.db));
}

TEST_CASE("psnr: uniform 0.5 vs 0.6 is exactly 20 dB") {
  Image<double> a(10, 10), b(10, 10);
  for (auto& v : a.data) v = 0.5;
  for (auto& v : b.data) v = 0.6;
  const auto p = psnr(a, b);
  CHECK(!p.exact);
  CHECK(p.db == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("psnr: known-sigma noise matches the closed form within half a dB") {
  Rng rng(77);
  const double sigma = 0.05;
  Image<double> gt(64, 64), noisy(64, 64);
  for (size_t i = 0; i < gt.data.size(); ++i) {
    gt.data[i] = rng.uniform(0.2, 0.8);
    noisy.data[i] = gt.data[i] + sigma * rng.normal();
  }
  const auto p = psnr(noisy, gt);
  const double expect = 10.0 * std::log10(1.0 / (sigma * sigma));
  CHECK(std::abs(p.db - expect) < 0.5);
}

TEST_CASE("psnr: shape mismatch throws") {
  Image<float> a(4, 4), b(4, 5);
  CHECK_THROWS_AS(psnr(a, b), std::invalid_argument);
}

TEST_CASE("zero iterations produce a report with the initial state only") {
  const TrainConfig cfg = small_config(TrainMode::DenseOracle, 0);
  const TrainReport rep = train(cfg);
  CHECK(rep.losses.empty());
  CHECK(rep.final_count == rep.initial_count);
  CHECK(rep.psnr_points.size() == 1);  // the final evaluation still runs
}

TEST_CASE("dense oracle: windowed loss decreases over 200 iterations") {
  TrainConfig cfg = small_config(TrainMode::DenseOracle, 200, 3);
  const TrainReport rep = train(cfg);
  REQUIRE(rep.losses.size() == 200);
  double means[4];
  for (int w = 0; w < 4; ++w) {
    double acc = 0;
    for (int i = 0; i < 50; ++i) acc += rep.losses[w * 50 + i];
    means[w] = acc / 50;
  }
  CHECK(means[1] < means[0]);
  CHECK(means[2] < means[1]);
  CHECK(means[3] < means[2]);
}

TEST_CASE("densify: nothing over threshold and nothing under the floor leaves stores unchanged") {
  GaussianSet<float> gs;
  gs.resize(3);
  for (int i = 0; i < 3; ++i) {
    gs.mean[i * 3] = float(i);
    gs.scale[i * 3] = gs.scale[i * 3 + 1] = gs.scale[i * 3 + 2] = -3.0f;
    gs.quaternion[i * 4] = 1;
    gs.opacity[i] = float(logit(0.5));
  }
  DensifyConfig dc;
  const std::vector<double> accum(3, 0.0);
  const std::vector<int> cnt(3, 1);
  const auto plan = plan_densify<float>(gs, accum, cnt, dc, 1.0, 1);
  CHECK(plan.survivors == std::vector<int>{0, 1, 2});
  CHECK(plan.child_rows.empty());
  CHECK(plan.pruned == 0);
}

TEST_CASE("densify: over-threshold large gaussian splits into two smaller children") {
  GaussianSet<float> gs;
  gs.resize(2);
  for (int i = 0; i < 2; ++i) {
    gs.quaternion[i * 4] = 1;
    gs.opacity[i] = float(logit(0.5));
  }
  // id 0: large (over the clone limit), id 1: small
  for (int a = 0; a < 3; ++a) gs.scale[a] = std::log(0.5f);
  for (int a = 0; a < 3; ++a) gs.scale[3 + a] = std::log(0.001f);
  DensifyConfig dc;
  const std::vector<double> accum{1.0, 1.0};
  const std::vector<int> cnt{1, 1};
  const auto plan = plan_densify<float>(gs, accum, cnt, dc, 1.0, 2);
  // id 0 split (removed, two children); id 1 cloned (kept, one child)
  CHECK(plan.survivors == std::vector<int>{1});
  CHECK(plan.child_rows.size() == 3 * kParamDim);
  CHECK(plan.splits == 1);
  CHECK(plan.clones == 1);
  // split children scales divided by 1.6 in log space
  const float expect = std::log(0.5f) - std::log(1.6f);
  CHECK(plan.child_rows[kColScale] == doctest::Approx(expect).epsilon(1e-6));
  // children positions perturbed away from the parent
  CHECK(plan.child_rows[kColMean] != gs.mean[0]);
}

TEST_CASE("densify: low-opacity gaussians are pruned") {
  GaussianSet<float> gs;
  gs.resize(2);
  for (int i = 0; i < 2; ++i) {
    gs.quaternion[i * 4] = 1;
    gs.scale[i * 3] = gs.scale[i * 3 + 1] = gs.scale[i * 3 + 2] = -3.0f;
  }
  gs.opacity[0] = float(logit(0.001));
  gs.opacity[1] = float(logit(0.5));
  DensifyConfig dc;
  const auto plan = plan_densify<float>(gs, {0.0, 0.0}, {1, 1}, dc, 1.0, 3);
  CHECK(plan.survivors == std::vector<int>{1});
  CHECK(plan.pruned == 1);
}

TEST_CASE("densify determinism: same seed gives identical counts and children across modes") {
  TrainConfig cfg = small_config(TrainMode::DenseOracle, 120, 5);
  cfg.densify.start_iter = 40;
  cfg.densify.stop_iter = 120;
  cfg.densify.interval = 40;
  cfg.densify.grad_threshold = 5e-5;  // force some events at this scale
  const TrainReport dense = train(cfg);
  cfg.mode = TrainMode::OffloadSerial;
  const TrainReport serial = train(cfg);
  cfg.mode = TrainMode::OffloadPipelined;
  const TrainReport pipe = train(cfg);
  CHECK(dense.final_count == serial.final_count);
  CHECK(dense.final_count == pipe.final_count);
  CHECK(dense.final_count != dense.initial_count);  // something actually happened
}

TEST_CASE("train: mode equivalence at MAX=0 under f64 is bitwise on the loss sequence") {
  TrainConfig cfg = small_config(TrainMode::DenseOracle, 30, 7);
  cfg.verify_f64 = true;
  cfg.optim.defer_max = 0;
  cfg.optim.geo_defer_max = 0;
  const TrainReport dense = train(cfg);
  cfg.mode = TrainMode::OffloadSerial;
  const TrainReport serial = train(cfg);
  cfg.mode = TrainMode::OffloadPipelined;
  const TrainReport pipe = train(cfg);
  REQUIRE(dense.losses.size() == serial.losses.size());
  for (size_t i = 0; i < dense.losses.size(); ++i) {
    REQUIRE(dense.losses[i] == serial.losses[i]);
    REQUIRE(dense.losses[i] == pipe.losses[i]);
  }
  CHECK(dense.final_psnr == serial.final_psnr);
  CHECK(dense.final_psnr == pipe.final_psnr);
}

TEST_CASE("report integrity: memory breakdown totals equal the sum of their parts") {
  TrainConfig cfg = small_config(TrainMode::OffloadSerial, 12, 8);
  const TrainReport rep = train(cfg);
  int64_t sum = 0;
  for (int c = 0; c < kMemCats; ++c) sum += rep.memory.device_peak_snapshot[c];
  CHECK(sum == rep.memory.device_peak_total);
  const BenchTables tables = bench_report({rep});
  CHECK(tables.memory_breakdown_csv.find("params") != std::string::npos);
  CHECK(tables.psnr_csv.find(rep.mode) != std::string::npos);
}

TEST_CASE("report json round trip") {
  TrainConfig cfg = small_config(TrainMode::OffloadPipelined, 8, 2);
  const TrainReport rep = train(cfg);
  const TrainReport back = parse_train_report(train_report_to_json(rep));
  CHECK(back.mode == rep.mode);
  CHECK(back.losses == rep.losses);
  CHECK(back.final_count == rep.final_count);
  CHECK(back.memory.device_peak_total == rep.memory.device_peak_total);
  CHECK(back.host_access.param_bytes == rep.host_access.param_bytes);
}

TEST_CASE("held-out split is deterministic and uses every 8th view") {
  TrainConfig cfg = small_config(TrainMode::DenseOracle, 0);
  cfg.synth.cams = 24;
  const TrainScene<float> a = build_train_scene<float>(cfg);
  const TrainScene<float> b = build_train_scene<float>(cfg);
  CHECK(a.val_cams.size() == 3);
  CHECK(a.train_cams.size() == 21);
  REQUIRE(a.val_gt.size() == b.val_gt.size());
  for (size_t i = 0; i < a.val_gt.size(); ++i) CHECK(a.val_gt[i].data == b.val_gt[i].data);
}

TEST_CASE("access report: optimizer modes rank dense > deferred > tiered host bytes") {
  OptimBenchConfig bc;
  bc.n = 300;
  bc.steps = 60;
  bc.density = 0.08;
  bc.defer_max = 0;  // dense
  const auto dense = optim_bench<float>(bc);
  bc.defer_max = 15;
  const auto deferred = optim_bench<float>(bc);
  bc.mode = "full";
  const auto full = optim_bench<float>(bc);
  CHECK(dense.deferred_access.param_bytes > deferred.deferred_access.param_bytes);
  CHECK(deferred.deferred_access.param_bytes > full.deferred_access.param_bytes);
}
