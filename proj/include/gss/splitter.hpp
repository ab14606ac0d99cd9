#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gss/render.hpp"
#include "gss/scene.hpp"

namespace gss {

struct SplitEntry {
  bool split = false;
  int column = 0;         // vertical split column s in (0, W)
  double used_ratio = 0;  // at search time
  int left_count = 0, right_count = 0;
  int search_evals = 0;   // culling-pair evaluations beyond the midpoint
};

struct SplitTable {
  double mem_limit = 0.3;
  std::vector<SplitEntry> cameras;
};

inline constexpr int kSplitSearchSteps = 5;

// Balance-aware split-point search, run once on the initial Gaussians:
// for each camera whose used ratio exceeds mem_limit, a 5-step binary search
// from the image midpoint picks the column minimizing |left - right| visible
// counts. Degenerate cameras (W < 2) are never split.
template <class S>
SplitTable compute_split_points(RowView<S> geo, int count, const std::vector<Camera<S>>& cams, double mem_limit) {
  SplitTable table;
  table.mem_limit = mem_limit;
  table.cameras.resize(cams.size());
  for (size_t ci = 0; ci < cams.size(); ++ci) {
    const Camera<S>& cam = cams[ci];
    SplitEntry& e = table.cameras[ci];
    const auto full = frustum_cull(geo, count, cam, Viewport<S>::full(cam.width, cam.height));
    e.used_ratio = count > 0 ? double(full.size()) / count : 0.0;
    if (e.used_ratio <= mem_limit) continue;
    if (cam.width < 2) continue;  // nothing to split

    auto eval_pair = [&](int c, int& left, int& right) {
      const Viewport<S> lvp{S(0), S(c), S(0), S(cam.height)};
      const Viewport<S> rvp{S(c), S(cam.width), S(0), S(cam.height)};
      left = int(frustum_cull(geo, count, cam, lvp).size());
      right = int(frustum_cull(geo, count, cam, rvp).size());
    };

    int lo = 0, hi = cam.width;
    int c = cam.width / 2;
    int left, right;
    eval_pair(c, left, right);
    int best_c = c, best_l = left, best_r = right;
    long best_diff = std::labs(long(left) - long(right));
    for (int it = 0; it < kSplitSearchSteps; ++it) {
      if (left > right) hi = c; else lo = c;
      c = (lo + hi) / 2;
      eval_pair(c, left, right);
      e.search_evals++;
      const long diff = std::labs(long(left) - long(right));
      if (diff < best_diff) {
        best_diff = diff;
        best_c = c;
        best_l = left;
        best_r = right;
      }
    }
    if (best_c <= 0 || best_c >= cam.width) {
      // search collapsed onto a border; keep the midpoint
      best_c = cam.width / 2;
      eval_pair(best_c, best_l, best_r);
    }
    e.split = true;
    e.column = best_c;
    e.left_count = best_l;
    e.right_count = best_r;
  }
  return table;
}

// Sparse sum of two gradient buffers over the union of their id sets
// (left contribution added first for every id; deterministic order).
template <class S> GradBuffer<S> aggregate_grads(const GradBuffer<S>& l, const GradBuffer<S>& r) {
  GradBuffer<S> out;
  out.ids.reserve(l.ids.size() + r.ids.size());
  size_t i = 0, j = 0;
  while (i < l.ids.size() || j < r.ids.size()) {
    int id;
    bool take_l = false, take_r = false;
    if (j >= r.ids.size() || (i < l.ids.size() && l.ids[i] < r.ids[j])) {
      id = l.ids[i];
      take_l = true;
    } else if (i >= l.ids.size() || r.ids[j] < l.ids[i]) {
      id = r.ids[j];
      take_r = true;
    } else {
      id = l.ids[i];
      take_l = take_r = true;
    }
    out.ids.push_back(id);
    const size_t k = out.ids.size() - 1;
    out.rows.resize(out.ids.size() * kParamDim, S(0));
    out.mean2d.resize(out.ids.size() * 2, S(0));
    S* row = out.row(k);
    if (take_l) {
      const S* lr = l.row(i);
      for (int c = 0; c < kParamDim; ++c) row[c] += lr[c];
      out.mean2d[k * 2] += l.mean2d[i * 2];
      out.mean2d[k * 2 + 1] += l.mean2d[i * 2 + 1];
      ++i;
    }
    if (take_r) {
      const S* rr = r.row(j);
      for (int c = 0; c < kParamDim; ++c) row[c] += rr[c];
      out.mean2d[k * 2] += r.mean2d[j * 2];
      out.mean2d[k * 2 + 1] += r.mean2d[j * 2 + 1];
      ++j;
    }
  }
  return out;
}

}  // namespace gss
