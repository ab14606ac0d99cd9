#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "gss/adam.hpp"
#include "gss/errors.hpp"
#include "gss/render.hpp"
#include "gss/scene.hpp"

namespace gss {

enum class MemCat : int { Params = 0, OptStates = 1, Grads = 2, Staging = 3, Activations = 4 };
inline constexpr int kMemCats = 5;
inline const char* mem_cat_name(int c) {
  static const char* names[kMemCats] = {"params", "opt_states", "grads", "staging", "activations"};
  return names[c];
}

// Byte counter per category with a continuously tracked peak; the snapshot at
// the peak keeps categories summing to the peak total.
class MemTracker {
public:
  MemTracker() = default;
  // moved only during single-threaded setup; the mutex itself is not moved
  MemTracker(MemTracker&& o) noexcept
      : cur_(o.cur_), peak_cat_(o.peak_cat_), peak_snapshot_(o.peak_snapshot_), peak_total_(o.peak_total_) {}
  MemTracker& operator=(MemTracker&& o) noexcept {
    cur_ = o.cur_;
    peak_cat_ = o.peak_cat_;
    peak_snapshot_ = o.peak_snapshot_;
    peak_total_ = o.peak_total_;
    return *this;
  }

  void add(MemCat cat, int64_t delta) {
    std::lock_guard<std::mutex> lk(mu_);
    cur_[int(cat)] += delta;
    if (cur_[int(cat)] < 0) throw InvariantViolation("memory accounting went negative: " + std::string(mem_cat_name(int(cat))));
    int64_t total = 0;
    for (int i = 0; i < kMemCats; ++i) total += cur_[i];
    if (total > peak_total_) {
      peak_total_ = total;
      peak_snapshot_ = cur_;
    }
    for (int i = 0; i < kMemCats; ++i) peak_cat_[i] = std::max(peak_cat_[i], cur_[i]);
  }

  int64_t current(MemCat cat) const {
    std::lock_guard<std::mutex> lk(mu_);
    return cur_[int(cat)];
  }
  int64_t current_total() const {
    std::lock_guard<std::mutex> lk(mu_);
    int64_t t = 0;
    for (auto v : cur_) t += v;
    return t;
  }
  int64_t peak_total() const {
    std::lock_guard<std::mutex> lk(mu_);
    return peak_total_;
  }
  std::array<int64_t, kMemCats> peak_snapshot() const {
    std::lock_guard<std::mutex> lk(mu_);
    return peak_snapshot_;
  }
  std::array<int64_t, kMemCats> category_peaks() const {
    std::lock_guard<std::mutex> lk(mu_);
    return peak_cat_;
  }
  void reset_peak() {
    std::lock_guard<std::mutex> lk(mu_);
    peak_total_ = 0;
    for (auto v : cur_) peak_total_ += v;
    peak_snapshot_ = cur_;
    peak_cat_ = cur_;
  }

private:
  mutable std::mutex mu_;
  std::array<int64_t, kMemCats> cur_{};
  std::array<int64_t, kMemCats> peak_cat_{};
  std::array<int64_t, kMemCats> peak_snapshot_{};
  int64_t peak_total_ = 0;
};

struct MemoryReport {
  int64_t device_peak_total = 0;
  std::array<int64_t, kMemCats> device_peak_snapshot{};
  std::array<int64_t, kMemCats> device_category_peaks{};
  std::array<int64_t, kMemCats> device_current{};
  int64_t host_bytes = 0;
  double device_param_share = 0.0;  // device params / (device + host params) at setup

  // Sum over the params+states+grads categories at the device peak.
  int64_t model_bytes_at_peak() const {
    return device_peak_snapshot[0] + device_peak_snapshot[1] + device_peak_snapshot[2];
  }
  int64_t model_category_peaks_sum() const {
    return device_category_peaks[0] + device_category_peaks[1] + device_category_peaks[2];
  }
};

// Per-attribute learning rates (3DGS reference defaults; mean is scaled by
// the scene extent by the caller).
struct OptimConfig {
  double lr_mean = 1.6e-4;   // multiplied by scene extent
  double lr_scale = 5e-3;
  double lr_quat = 1e-3;
  double lr_opacity = 5e-2;
  double lr_sh = 2.5e-3;
  double sh_rest_divisor = 20.0;  // non-DC bands train at lr_sh / this
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int defer_max = 15;
  // Device-resident geometric updates are immediate (never deferred): culling
  // and projection read these rows in place, so deferral would feed stale
  // geometry back into training. MAX=0 runs the same kernel densely.
  int geo_defer_max = 0;
  double scene_extent = 1.0;

  Hyperparams hp(double lr) const { return Hyperparams{lr, beta1, beta2, eps}; }

  std::vector<GroupSpec> geo_groups() const {
    return {{"mean", 0, 3, hp(lr_mean * scene_extent)}, {"scale", 3, 3, hp(lr_scale)}, {"quat", 6, 4, hp(lr_quat)}};
  }
  std::vector<GroupSpec> nongeo_groups() const {
    return {{"opacity", 0, 1, hp(lr_opacity)},
            {"sh_dc", 1, 3, hp(lr_sh)},
            {"sh_rest", 4, 45, hp(lr_sh / sh_rest_divisor)}};
  }
  std::vector<GroupSpec> full_groups() const {
    return {{"mean", kColMean, 3, hp(lr_mean * scene_extent)},
            {"scale", kColScale, 3, hp(lr_scale)},
            {"quat", kColQuat, 4, hp(lr_quat)},
            {"opacity", kColOpacity, 1, hp(lr_opacity)},
            {"sh_dc", kColSh, 3, hp(lr_sh)},
            {"sh_rest", kColSh + 3, 45, hp(lr_sh / sh_rest_divisor)}};
  }
};

// Host arena (49 non-geometric columns) + device arena (10 geometric columns)
// with separate byte accounting. Counters live with their optimizer states.
template <class S> struct TieredStore {
  Arena<S> device_geo;
  Arena<S> host_nongeo;
  MemTracker device_mem;
  MemTracker host_mem;
  int count = 0;
  double device_param_share = 0.0;

  void register_arena_bytes() {
    device_mem.add(MemCat::Params, device_geo.param_bytes());
    device_mem.add(MemCat::OptStates, device_geo.state_bytes());
    host_mem.add(MemCat::Params, host_nongeo.param_bytes());
    host_mem.add(MemCat::OptStates, host_nongeo.state_bytes());
  }
  void unregister_arena_bytes() {
    device_mem.add(MemCat::Params, -int64_t(device_geo.param_bytes()));
    device_mem.add(MemCat::OptStates, -int64_t(device_geo.state_bytes()));
    host_mem.add(MemCat::Params, -int64_t(host_nongeo.param_bytes()));
    host_mem.add(MemCat::OptStates, -int64_t(host_nongeo.state_bytes()));
  }
};

// Splits the Gaussian set into the two tiers; device arena holds exactly the
// 10 geometric scalars per Gaussian plus their optimizer state.
template <class S> TieredStore<S> setup_tiers(const GaussianSet<S>& gs, const OptimConfig& oc) {
  TieredStore<S> ts;
  ts.count = gs.count;
  ts.device_geo.init(gs.count, kGeoDim, oc.geo_groups(), oc.geo_defer_max);
  ts.host_nongeo.init(gs.count, kNonGeoDim, oc.nongeo_groups(), oc.defer_max);
  for (int i = 0; i < gs.count; ++i) {
    S* g = ts.device_geo.row(i);
    for (int k = 0; k < 3; ++k) g[k] = gs.mean[i * 3 + k];
    for (int k = 0; k < 3; ++k) g[3 + k] = gs.scale[i * 3 + k];
    for (int k = 0; k < 4; ++k) g[6 + k] = gs.quaternion[i * 4 + k];
    S* n = ts.host_nongeo.row(i);
    n[0] = gs.opacity[i];
    for (int k = 0; k < kShScalars; ++k) n[1 + k] = gs.sh[i * kShScalars + k];
  }
  ts.register_arena_bytes();
  const double dev = double(ts.device_geo.param_bytes());
  const double host = double(ts.host_nongeo.param_bytes());
  ts.device_param_share = dev + host > 0 ? dev / (dev + host) : 0.0;
  return ts;
}

// ---------------------------------------------------------------------------
// Staging buffers

struct Chunk {
  size_t row0 = 0;
  size_t rows = 0;
  size_t bytes = 0;
};

// Partition of `nrows` rows into chunks of at most chunk_bytes each.
inline std::vector<Chunk> make_chunks(size_t nrows, size_t row_bytes, size_t chunk_bytes) {
  std::vector<Chunk> out;
  if (nrows == 0) return out;
  const size_t per = std::max<size_t>(1, chunk_bytes / row_bytes);
  for (size_t r = 0; r < nrows; r += per) {
    const size_t n = std::min(per, nrows - r);
    out.push_back({r, n, n * row_bytes});
  }
  return out;
}

// Forwarded-parameter staging area (host -> device landing zone).
template <class S> struct ForwardStage {
  std::vector<int> ids;
  std::vector<S> rows;  // ids.size() x kNonGeoDim
  std::vector<Chunk> chunks;
  int iteration = -1;
  size_t byte_size() const { return rows.size() * sizeof(S) + ids.size() * 4; }
};

// One of the two alternating gradient staging buffers. Ownership is handed
// along the DAG edges; a write while readers are outstanding is a scheduler
// bug and throws.
template <class S> struct GradStage {
  GradBuffer<S> grads;
  int iteration = -1;
  std::atomic<int> readers{0};
  std::atomic<bool> writing{false};

  void acquire_write(int iter) {
    if (readers.load() != 0 || writing.load())
      throw InvariantViolation("gradient staging buffer overwritten while in use (iteration " +
                               std::to_string(iter) + ")");
    writing.store(true);
  }
  void release_write(int iter) {
    iteration = iter;
    writing.store(false);
  }
  void add_reader() {
    if (writing.load()) throw InvariantViolation("gradient staging buffer read during write");
    readers.fetch_add(1);
  }
  void remove_reader() { readers.fetch_sub(1); }
};

}  // namespace gss
