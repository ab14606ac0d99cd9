#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gss/errors.hpp"

namespace gss {

struct Hyperparams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("hyperparams: lr must be > 0");
    if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("hyperparams: require 0 <= beta1 < 1");
    if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("hyperparams: require 0 <= beta2 < 1");
    if (!(eps > 0)) throw ConfigError("hyperparams: eps must be > 0");
  }
};

// One parameter group within an arena row (contiguous columns, own lr).
struct GroupSpec {
  std::string name;
  int col0 = 0;
  int dim = 0;
  Hyperparams hp;
};

// Optimizer memory-access tally, following the 7D-accesses-per-touched-row
// accounting (4D reads + 3D writes) plus one counter byte per Gaussian per
// pass. restore_view reads (4D per requested row) are kept separate.
struct AccessReport {
  uint64_t update_passes = 0;
  uint64_t touched_rows = 0;
  uint64_t param_bytes = 0;
  uint64_t counter_bytes = 0;
  uint64_t restore_rows = 0;
  uint64_t restore_read_bytes = 0;

  static uint64_t dense_param_bytes(uint64_t rows, uint64_t dim, uint64_t word, uint64_t passes) {
    return rows * 7u * dim * word * passes;
  }
};

// Scaling-factor lookup tables for one group at one step, indexed by delay d
// (number of consecutive deferred passes). param[d] restores the weight,
// mom/var hold beta^{d+1}.
template <class S> struct GroupLuts {
  std::vector<S> param, mom, var;
  std::vector<S> pow_b1, pow_b2;  // beta^d, for restoration without a live step
  S one_minus_b1{}, one_minus_b2{};
  S bias_correction{};  // sqrt(1 - b2^t)
  S step_size{};        // lr / (1 - b1^t)
  S eps{};
};

// Builds the tables for update pass t (t >= 1). Delays above t-1 cannot occur
// (nothing can be deferred before the first pass); their entries are clamped
// to the last attainable value.
template <class S> GroupLuts<S> build_group_luts(const Hyperparams& hp, int64_t t, int max_delay) {
  assert(t >= 1);
  GroupLuts<S> lut;
  const double b1 = hp.beta1, b2 = hp.beta2;
  const int usable = int(std::min<int64_t>(max_delay, t - 1));
  lut.param.assign(max_delay + 1, S(0));
  lut.mom.resize(max_delay + 1);
  lut.var.resize(max_delay + 1);
  lut.pow_b1.resize(max_delay + 1);
  lut.pow_b2.resize(max_delay + 1);
  const double scale = b1 / std::sqrt(b2);
  double acc = 0.0;
  for (int i = 1; i <= usable; ++i) {
    acc = scale * acc +
          (hp.lr * b1) / (std::sqrt(b2 / (1.0 - std::pow(b2, double(t - i)))) * (1.0 - std::pow(b1, double(t - i))));
    lut.param[i] = S(acc);
  }
  for (int i = usable + 1; i <= max_delay; ++i) lut.param[i] = S(acc);
  for (int i = 0; i <= max_delay; ++i) {
    lut.mom[i] = S(std::pow(b1, double(i + 1)));
    lut.var[i] = S(std::pow(b2, double(i + 1)));
    lut.pow_b1[i] = S(std::pow(b1, double(i)));
    lut.pow_b2[i] = S(std::pow(b2, double(i)));
  }
  lut.one_minus_b1 = S(1.0 - b1);
  lut.one_minus_b2 = S(1.0 - b2);
  lut.bias_correction = S(std::sqrt(1.0 - std::pow(b2, double(t))));
  lut.step_size = S(hp.lr / (1.0 - std::pow(b1, double(t))));
  lut.eps = S(hp.eps);
  return lut;
}

// One scalar of restoration + bias-corrected Adam. The restoration term uses
// the stored (old) m, v; the live step uses the refreshed ones.
template <class S>
inline void deferred_scalar(S& w, S& m, S& v, S g, S w_scale, S m_scale, S v_scale, const GroupLuts<S>& k) {
  const S m_new = m_scale * m + k.one_minus_b1 * g;
  const S v_new = v_scale * v + k.one_minus_b2 * g * g;
  w -= (w_scale * m) / (std::sqrt(v) + k.eps);
  const S denom = std::sqrt(v_new) / k.bias_correction + k.eps;
  w = w - k.step_size * m_new / denom;
  m = m_new;
  v = v_new;
}

template <class S> inline S restore_scalar(S w, S m, S v, S w_scale, S eps) {
  return w - (w_scale * m) / (std::sqrt(v) + eps);
}

// Row-major parameter arena with per-row defer counters. The dense trainer
// uses one 59-wide arena; the tiered store uses a 10-wide device arena and a
// 49-wide host arena.
template <class S> struct Arena {
  int count = 0;
  int dim = 0;
  std::vector<GroupSpec> groups;
  std::vector<S> w, m, v;
  std::vector<uint8_t> counter;
  int defer_max = 15;
  int64_t step = 0;  // applied update passes
  AccessReport access;

  void init(int n, int d, std::vector<GroupSpec> gs, int max_delay) {
    if (max_delay < 0 || max_delay > 254) throw ConfigError("arena: defer max must be in [0, 254]");
    count = n;
    dim = d;
    groups = std::move(gs);
    int covered = 0;
    for (const auto& g : groups) {
      g.hp.validate();
      covered += g.dim;
    }
    if (covered != d) throw ConfigError("arena: group dims must cover the row");
    w.assign(size_t(n) * d, S(0));
    m.assign(size_t(n) * d, S(0));
    v.assign(size_t(n) * d, S(0));
    counter.assign(size_t(n), 0);
    defer_max = max_delay;
    step = 0;
  }

  S* row(int i) { return w.data() + size_t(i) * dim; }
  const S* row(int i) const { return w.data() + size_t(i) * dim; }

  uint64_t param_bytes() const { return uint64_t(count) * dim * sizeof(S); }
  uint64_t state_bytes() const { return 2u * uint64_t(count) * dim * sizeof(S) + uint64_t(count); }

  void check_counters() const {
    for (int i = 0; i < count; ++i)
      if (counter[i] > defer_max)
        throw InvariantViolation("arena: defer counter out of range at id " + std::to_string(i));
  }
};

// Sparse gradient rows feeding an arena: sorted ids; row(i) + col0 addresses
// the arena's columns. Absent id == zero gradient.
template <class S> struct SparseGrads {
  std::span<const int> ids;
  const S* rows = nullptr;
  size_t stride = 0;
  int col0 = 0;
  const S* row(size_t k) const { return rows + k * stride + col0; }
};

namespace detail {

template <class S> inline std::vector<GroupLuts<S>> luts_for(const Arena<S>& a, int64_t t) {
  std::vector<GroupLuts<S>> luts;
  luts.reserve(a.groups.size());
  for (const auto& g : a.groups) luts.push_back(build_group_luts<S>(g.hp, t, a.defer_max));
  return luts;
}

template <class S>
inline void update_row(Arena<S>& a, const std::vector<GroupLuts<S>>& luts, int id, int d, const S* grad) {
  S* wp = a.w.data() + size_t(id) * a.dim;
  S* mp = a.m.data() + size_t(id) * a.dim;
  S* vp = a.v.data() + size_t(id) * a.dim;
  for (size_t gi = 0; gi < a.groups.size(); ++gi) {
    const auto& grp = a.groups[gi];
    const auto& k = luts[gi];
    const S ws = k.param[d], ms = k.mom[d], vs = k.var[d];
    for (int c = grp.col0; c < grp.col0 + grp.dim; ++c)
      deferred_scalar(wp[c], mp[c], vp[c], grad ? grad[c] : S(0), ws, ms, vs, k);
  }
}

}  // namespace detail

// Textbook bias-corrected Adam over every row (zero-gradient rows still decay
// m, v and move w). grads is dense count*dim (may be null for all-zeros).
template <class S> void adam_step_dense(Arena<S>& a, const S* grads) {
  const int64_t t = a.step + 1;
  const auto luts = detail::luts_for(a, t);
  for (int id = 0; id < a.count; ++id)
    detail::update_row(a, luts, id, 0, grads ? grads + size_t(id) * a.dim : nullptr);
  a.step = t;
  a.access.update_passes++;
  a.access.touched_rows += uint64_t(a.count);
  a.access.param_bytes += uint64_t(a.count) * 7u * a.dim * sizeof(S);
}

// Deferred optimizer update for one pass: update_ids = grad ids ∪ saturated
// counters; everyone else's counter advances. Returns the touched ids.
template <class S> std::vector<int> deferred_update(Arena<S>& a, const SparseGrads<S>& grads) {
  const int64_t t = a.step + 1;
  const auto luts = detail::luts_for(a, t);
  std::vector<int> touched;
  touched.reserve(grads.ids.size());
  size_t gi = 0;
  for (int id = 0; id < a.count; ++id) {
    const bool has_grad = gi < grads.ids.size() && grads.ids[gi] == id;
    const bool saturated = a.counter[id] == a.defer_max;
    if (has_grad || saturated) {
      const int d = a.counter[id];
      assert(d <= a.defer_max && int64_t(d) <= t - 1);
      detail::update_row(a, luts, id, d, has_grad ? grads.row(gi) : nullptr);
      touched.push_back(id);
      a.counter[id] = 0;
    } else {
      a.counter[id]++;
    }
    if (has_grad) ++gi;
  }
  if (gi != grads.ids.size()) throw InvariantViolation("deferred_update: gradient ids not sorted or out of range");
  a.step = t;
  a.access.update_passes++;
  a.access.touched_rows += touched.size();
  a.access.param_bytes += uint64_t(touched.size()) * 7u * a.dim * sizeof(S);
  a.access.counter_bytes += uint64_t(a.count);
  return touched;
}

// Pure read of up-to-date parameter rows for `ids`; stored params, states and
// counters are untouched.
//
// With a pending pass (the gradients the next deferred_update will apply),
// every requested id gets exactly what that pass would write for it:
// restoration at its current delay plus the bias-corrected Adam step with its
// pending gradient (zero row when absent), through the identical scalar
// kernel. Ids the pass really touches therefore match the later stored rows
// bitwise.
//
// With no pending pass (pending == nullptr) this materializes the state as of
// the last applied pass: restoration only.
template <class S>
void restore_view(const Arena<S>& a_const, std::span<const int> ids, const SparseGrads<S>* pending, S* out_rows) {
  auto& a = const_cast<Arena<S>&>(a_const);  // access tally only
  const int64_t t = a.step + 1;
  const auto luts = detail::luts_for(a, t);
  size_t pi = 0;
  for (size_t k = 0; k < ids.size(); ++k) {
    const int id = ids[k];
    const int d = a.counter[id];
    const S* grad = nullptr;
    if (pending) {
      while (pi < pending->ids.size() && pending->ids[pi] < id) ++pi;
      if (pi < pending->ids.size() && pending->ids[pi] == id) grad = pending->row(pi);
    }
    const S* wp = a.w.data() + size_t(id) * a.dim;
    const S* mp = a.m.data() + size_t(id) * a.dim;
    const S* vp = a.v.data() + size_t(id) * a.dim;
    S* out = out_rows + k * a.dim;
    for (size_t g = 0; g < a.groups.size(); ++g) {
      const auto& grp = a.groups[g];
      const auto& lt = luts[g];
      if (pending) {
        const S ws = lt.param[d], ms = lt.mom[d], vs = lt.var[d];
        for (int c = grp.col0; c < grp.col0 + grp.dim; ++c) {
          S w = wp[c], m = mp[c], v = vp[c];
          deferred_scalar(w, m, v, grad ? grad[c] : S(0), ws, ms, vs, lt);
          out[c] = w;
        }
      } else {
        const S ws = lt.param[d];
        for (int c = grp.col0; c < grp.col0 + grp.dim; ++c)
          out[c] = restore_scalar(wp[c], mp[c], vp[c], ws, lt.eps);
      }
    }
  }
  a.access.restore_rows += ids.size();
  a.access.restore_read_bytes += uint64_t(ids.size()) * 4u * a.dim * sizeof(S);
}

// Materializes every deferred row at the last applied pass and resets the
// counters (pipeline drain before densification / final export).
template <class S> void flush_deferred(Arena<S>& a) {
  const int64_t t = a.step + 1;
  const auto luts = detail::luts_for(a, t);
  for (int id = 0; id < a.count; ++id) {
    const int d = a.counter[id];
    if (d == 0) continue;
    S* wp = a.w.data() + size_t(id) * a.dim;
    S* mp = a.m.data() + size_t(id) * a.dim;
    S* vp = a.v.data() + size_t(id) * a.dim;
    for (size_t g = 0; g < a.groups.size(); ++g) {
      const auto& grp = a.groups[g];
      const auto& lt = luts[g];
      for (int c = grp.col0; c < grp.col0 + grp.dim; ++c) {
        wp[c] = restore_scalar(wp[c], mp[c], vp[c], lt.param[d], lt.eps);
        mp[c] *= lt.pow_b1[d];
        vp[c] *= lt.pow_b2[d];
      }
    }
    a.counter[id] = 0;
  }
}

}  // namespace gss
