#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "gss/adam.hpp"
#include "gss/rng.hpp"
#include "gss/scene.hpp"
#include "gss/store.hpp"

namespace gss {

// Synthetic sparse-gradient optimizer stress: random subsets of rows receive
// random gradients each step; the deferred path runs against a dense Adam
// oracle fed the same schedule.
struct OptimBenchConfig {
  int n = 1000;
  int dim = 59;
  int steps = 500;
  double density = 0.10;
  int defer_max = 15;
  uint64_t seed = 7;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  // "deferred": one 59-wide host arena. "full": 49-wide host tier deferred +
  // 10-wide device tier deferred (selective offloading accounting).
  std::string mode = "deferred";
};

struct OptimBenchResult {
  AccessReport deferred_access;       // host-side arena(s)
  AccessReport device_access;         // only in "full" mode
  uint64_t dense_param_bytes = 0;     // baseline: every row touched every step
  double max_rel_dev = 0.0;           // vs the dense oracle, |a-b|/max(1,|a|,|b|)
  bool bitwise_equal = false;
  uint64_t touched_total = 0;
};

template <class S> OptimBenchResult optim_bench(const OptimBenchConfig& cfg) {
  Rng rng(cfg.seed);
  const Hyperparams hp{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};

  Arena<S> dense;
  dense.init(cfg.n, cfg.dim, {{"all", 0, cfg.dim, hp}}, 0);
  for (auto& x : dense.w) x = S(rng.uniform(-1.0, 1.0));

  const bool full = cfg.mode == "full";
  Arena<S> host, dev;
  const int host_dim = full ? kNonGeoDim : cfg.dim;
  const int dev_dim = full ? kGeoDim : 0;
  host.init(cfg.n, host_dim, {{"all", 0, host_dim, hp}}, cfg.defer_max);
  if (full) dev.init(cfg.n, dev_dim, {{"all", 0, dev_dim, hp}}, cfg.defer_max);
  for (int i = 0; i < cfg.n; ++i)
    for (int c = 0; c < cfg.dim; ++c) {
      const S w = dense.w[size_t(i) * cfg.dim + c];
      if (full) {
        if (c < dev_dim)
          dev.w[size_t(i) * dev_dim + c] = w;
        else
          host.w[size_t(i) * host_dim + (c - dev_dim)] = w;
      } else {
        host.w[size_t(i) * cfg.dim + c] = w;
      }
    }

  std::vector<S> dense_grads(size_t(cfg.n) * cfg.dim, S(0));
  std::vector<int> ids;
  std::vector<S> rows;
  OptimBenchResult res;

  for (int t = 0; t < cfg.steps; ++t) {
    ids.clear();
    for (int i = 0; i < cfg.n; ++i)
      if (rng.uniform() < cfg.density) ids.push_back(i);
    rows.assign(ids.size() * cfg.dim, S(0));
    for (size_t k = 0; k < ids.size(); ++k)
      for (int c = 0; c < cfg.dim; ++c) rows[k * cfg.dim + c] = S(rng.normal());

    for (size_t k = 0; k < ids.size(); ++k)
      for (int c = 0; c < cfg.dim; ++c) dense_grads[size_t(ids[k]) * cfg.dim + c] = rows[k * cfg.dim + c];
    adam_step_dense(dense, dense_grads.data());
    for (size_t k = 0; k < ids.size(); ++k)
      for (int c = 0; c < cfg.dim; ++c) dense_grads[size_t(ids[k]) * cfg.dim + c] = S(0);

    if (full) {
      res.touched_total += deferred_update(dev, SparseGrads<S>{ids, rows.data(), size_t(cfg.dim), 0}).size();
      res.touched_total += deferred_update(host, SparseGrads<S>{ids, rows.data(), size_t(cfg.dim), dev_dim}).size();
    } else {
      res.touched_total += deferred_update(host, SparseGrads<S>{ids, rows.data(), size_t(cfg.dim), 0}).size();
    }
  }
  flush_deferred(host);
  if (full) flush_deferred(dev);

  double max_dev = 0.0;
  bool bitwise = true;
  for (int i = 0; i < cfg.n; ++i)
    for (int c = 0; c < cfg.dim; ++c) {
      const double a = double(dense.w[size_t(i) * cfg.dim + c]);
      const double b = full ? double(c < dev_dim ? dev.w[size_t(i) * dev_dim + c]
                                                 : host.w[size_t(i) * host_dim + (c - dev_dim)])
                            : double(host.w[size_t(i) * cfg.dim + c]);
      if (a != b) bitwise = false;
      max_dev = std::max(max_dev, std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}));
    }
  res.max_rel_dev = max_dev;
  res.bitwise_equal = bitwise;
  res.deferred_access = host.access;
  if (full) res.device_access = dev.access;
  res.dense_param_bytes = AccessReport::dense_param_bytes(cfg.n, cfg.dim, sizeof(S), cfg.steps);
  return res;
}

}  // namespace gss
