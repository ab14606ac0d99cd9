#pragma once

#include <string>
#include <vector>

#include "gss/trainer.hpp"

namespace gss {

// CSV comparison tables over a set of run reports: per-run memory breakdown,
// dense-vs-offload peak ratios, PSNR, and optimizer access bytes.
struct BenchTables {
  std::string memory_breakdown_csv;
  std::string ratio_csv;
  std::string psnr_csv;
  std::string access_csv;
};

BenchTables bench_report(const std::vector<TrainReport>& reports);

// Timeline rows as CSV (iteration, stage, start/end ns, bytes, worker).
std::string timeline_csv(const std::vector<TimelineRow>& rows);

}  // namespace gss
