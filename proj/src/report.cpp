#include "gss/report.hpp"

#include <sstream>

namespace gss {

BenchTables bench_report(const std::vector<TrainReport>& reports) {
  if (reports.empty()) throw ConfigError("bench_report: need at least one report");
  BenchTables t;

  {
    std::ostringstream os;
    os << "mode";
    for (int c = 0; c < kMemCats; ++c) os << "," << mem_cat_name(c) << "_at_peak";
    os << ",peak_total,host_bytes,device_param_share\n";
    for (const auto& r : reports) {
      os << r.mode;
      int64_t sum = 0;
      for (int c = 0; c < kMemCats; ++c) {
        os << "," << r.memory.device_peak_snapshot[c];
        sum += r.memory.device_peak_snapshot[c];
      }
      (void)sum;
      os << "," << r.memory.device_peak_total << "," << r.memory.host_bytes << "," << r.memory.device_param_share
         << "\n";
    }
    t.memory_breakdown_csv = os.str();
  }

  {
    // dense-vs-offload peak ratio over the params+states+grads categories
    const TrainReport* dense = nullptr;
    for (const auto& r : reports)
      if (r.mode == "dense-oracle") dense = &r;
    std::ostringstream os;
    os << "mode,model_bytes_at_peak,dense_over_this\n";
    for (const auto& r : reports) {
      os << r.mode << "," << r.memory.model_bytes_at_peak();
      if (dense && r.memory.model_bytes_at_peak() > 0)
        os << "," << double(dense->memory.model_bytes_at_peak()) / double(r.memory.model_bytes_at_peak());
      else
        os << ",";
      os << "\n";
    }
    t.ratio_csv = os.str();
  }

  {
    std::ostringstream os;
    os << "mode,final_psnr_db,final_count,mean_loss_last_50\n";
    for (const auto& r : reports) {
      double tail = 0;
      const size_t n = r.losses.size();
      const size_t k = std::min<size_t>(n, 50);
      for (size_t i = n - k; i < n; ++i) tail += r.losses[i];
      os << r.mode << "," << r.final_psnr << "," << r.final_count << "," << (k ? tail / k : 0.0) << "\n";
    }
    t.psnr_csv = os.str();
  }

  {
    std::ostringstream os;
    os << "mode,host_param_bytes,host_counter_bytes,geo_param_bytes,restore_read_bytes,touched_rows\n";
    for (const auto& r : reports) {
      os << r.mode << "," << r.host_access.param_bytes << "," << r.host_access.counter_bytes << ","
         << r.geo_access.param_bytes << "," << r.host_access.restore_read_bytes << "," << r.host_access.touched_rows
         << "\n";
    }
    t.access_csv = os.str();
  }
  return t;
}

std::string timeline_csv(const std::vector<TimelineRow>& rows) {
  std::ostringstream os;
  os << "iteration,stage,t0_ns,t1_ns,bytes,worker\n";
  for (const auto& r : rows)
    os << r.iteration << "," << r.stage << "," << r.t0_ns << "," << r.t1_ns << "," << r.bytes << "," << r.worker
       << "\n";
  return os.str();
}

}  // namespace gss
