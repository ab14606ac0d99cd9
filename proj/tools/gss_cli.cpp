#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "gss/bench.hpp"
#include "gss/config_json.hpp"
#include "gss/image_io.hpp"
#include "gss/report.hpp"
#include "gss/trainer.hpp"

namespace fs = std::filesystem;
using namespace gss;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string mode;
  int iterations = -1;
  int64_t seed = -1;
  double mem_limit = -1;
  int64_t chunk_bytes = -1;
  int defer_max = -1;
  int geo_defer_max = -1;
  bool serial = false, pipelined = false, verify_f64 = false;
  int workers = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "training config JSON");
  cmd->add_option("--mode", f.mode, "dense-oracle | offload-serial | offload-pipelined");
  cmd->add_option("--iters", f.iterations, "iteration count override");
  cmd->add_option("--seed", f.seed, "seed override");
  cmd->add_option("--mem-limit", f.mem_limit, "image-split threshold on the used-Gaussian ratio");
  cmd->add_option("--chunk-bytes", f.chunk_bytes, "forwarding chunk size in bytes");
  cmd->add_option("--defer-max", f.defer_max, "host defer counter saturation value");
  cmd->add_option("--geo-defer-max", f.geo_defer_max, "device defer counter saturation value");
  cmd->add_flag("--serial", f.serial, "offload engine in serial schedule");
  cmd->add_flag("--pipelined", f.pipelined, "offload engine in pipelined schedule");
  cmd->add_flag("--verify-f64", f.verify_f64, "64-bit verification mode with invariant checks");
  cmd->add_option("--workers", f.workers, "renderer worker threads");
}

TrainConfig make_config(const CommonFlags& f) {
  TrainConfig cfg;
  if (!f.config_path.empty()) cfg = load_train_config(f.config_path);
  if (!f.mode.empty()) {
    if (f.mode == "dense-oracle") cfg.mode = TrainMode::DenseOracle;
    else if (f.mode == "offload-serial") cfg.mode = TrainMode::OffloadSerial;
    else if (f.mode == "offload-pipelined") cfg.mode = TrainMode::OffloadPipelined;
    else throw ConfigError("unknown --mode " + f.mode);
  }
  if (f.serial) cfg.mode = TrainMode::OffloadSerial;
  if (f.pipelined) cfg.mode = TrainMode::OffloadPipelined;
  if (f.iterations >= 0) cfg.iterations = f.iterations;
  if (f.seed >= 0) cfg.seed = uint64_t(f.seed);
  if (f.mem_limit > 0) cfg.mem_limit = f.mem_limit;
  if (f.chunk_bytes > 0) cfg.chunk_bytes = size_t(f.chunk_bytes);
  if (f.defer_max >= 0) cfg.optim.defer_max = f.defer_max;
  if (f.geo_defer_max >= 0) cfg.optim.geo_defer_max = f.geo_defer_max;
  if (f.verify_f64) cfg.verify_f64 = true;
  if (f.workers > 0) cfg.workers = f.workers;
  cfg.validate();
  return cfg;
}

template <class S> GaussianSet<S> scene_for_render(const TrainConfig& cfg, std::vector<Camera<S>>& cams) {
  TrainScene<S> ts = build_train_scene<S>(cfg);
  cams = ts.train_cams;
  cams.insert(cams.end(), ts.val_cams.begin(), ts.val_cams.end());
  return ts.init_gs;
}

int cmd_train(const CommonFlags& f, const std::string& out_dir) {
  const TrainConfig cfg = make_config(f);
  fs::create_directories(out_dir);
  const TrainReport rep = train(cfg);
  write_text_file(out_dir + "/report.json", train_report_to_json(rep));
  write_text_file(out_dir + "/config.json", train_config_to_json(cfg));
  write_text_file(out_dir + "/host_access.json", access_report_to_json(rep.host_access));
  write_text_file(out_dir + "/timeline.csv", timeline_csv(rep.timeline));
  std::cout << "mode " << rep.mode << ": " << rep.losses.size() << " iterations";
  if (!rep.losses.empty()) std::cout << ", final loss " << rep.losses.back();
  if (rep.final_psnr_exact)
    std::cout << ", holdout PSNR exact";
  else if (!rep.psnr_points.empty())
    std::cout << ", holdout PSNR " << rep.final_psnr << " dB";
  std::cout << ", " << rep.final_count << " gaussians\n";
  std::cout << "report written to " << out_dir << "/report.json\n";
  return 0;
}

int cmd_split_points(const CommonFlags& f, const std::string& out_path) {
  const TrainConfig cfg = make_config(f);
  if (cfg.verify_f64) {
    TrainScene<double> ts = build_train_scene<double>(cfg);
    const SceneRows<double> rows = scene_rows(ts.init_gs);
    const SplitTable t = compute_split_points(rows.geo_view(), ts.init_gs.count, ts.train_cams, cfg.mem_limit);
    write_text_file(out_path, split_table_to_json(t));
  } else {
    TrainScene<float> ts = build_train_scene<float>(cfg);
    const SceneRows<float> rows = scene_rows(ts.init_gs);
    const SplitTable t = compute_split_points(rows.geo_view(), ts.init_gs.count, ts.train_cams, cfg.mem_limit);
    write_text_file(out_path, split_table_to_json(t));
  }
  std::cout << "split table written to " << out_path << "\n";
  return 0;
}

int cmd_bench_optimizer(OptimBenchConfig bc, bool f64, const std::string& out_path) {
  std::ostringstream os;
  auto run = [&](auto tag) {
    using S = decltype(tag);
    const OptimBenchResult r = optim_bench<S>(bc);
    os << "{\n  \"mode\": \"" << bc.mode << "\",\n";
    os << "  \"n\": " << bc.n << ", \"steps\": " << bc.steps << ", \"density\": " << bc.density
       << ", \"defer_max\": " << bc.defer_max << ",\n";
    os << "  \"touched_rows\": " << r.deferred_access.touched_rows << ",\n";
    os << "  \"param_bytes\": " << r.deferred_access.param_bytes << ",\n";
    os << "  \"counter_bytes\": " << r.deferred_access.counter_bytes << ",\n";
    os << "  \"device_param_bytes\": " << r.device_access.param_bytes << ",\n";
    os << "  \"dense_param_bytes\": " << r.dense_param_bytes << ",\n";
    os << "  \"param_bytes_over_dense\": "
       << (r.dense_param_bytes ? double(r.deferred_access.param_bytes) / double(r.dense_param_bytes) : 0.0) << ",\n";
    os << "  \"max_rel_dev_vs_dense\": " << r.max_rel_dev << ",\n";
    os << "  \"bitwise_equal\": " << (r.bitwise_equal ? "true" : "false") << "\n}\n";
    std::cout << "deferred/dense param-bytes ratio: "
              << (r.dense_param_bytes ? double(r.deferred_access.param_bytes) / double(r.dense_param_bytes) : 0.0)
              << ", max rel dev vs dense: " << r.max_rel_dev << (r.bitwise_equal ? " (bitwise)" : "") << "\n";
  };
  if (f64) run(double{}); else run(float{});
  if (!out_path.empty()) {
    write_text_file(out_path, os.str());
    std::cout << "access report written to " << out_path << "\n";
  }
  return 0;
}

int cmd_render(const CommonFlags& f, int view, const std::string& out_png, const std::string& out_f32) {
  const TrainConfig cfg = make_config(f);
  std::vector<Camera<float>> cams;
  const GaussianSet<float> gs = scene_for_render<float>(cfg, cams);
  if (view < 0 || view >= int(cams.size())) throw ConfigError("render: view index out of range");
  const Image<float> img = render_view(gs, cams[view], cfg.sh_degree, cfg.workers);
  if (!out_png.empty()) write_png_rgb(out_png, img.data.data(), img.width, img.height);
  if (!out_f32.empty()) write_f32_image(out_f32, img.data.data(), img.width, img.height, 3);
  std::cout << "rendered view " << view << " (" << img.width << "x" << img.height << ")\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir) {
  std::vector<TrainReport> reps;
  for (const auto& p : inputs) reps.push_back(load_train_report(p));
  const BenchTables t = bench_report(reps);
  fs::create_directories(out_dir);
  write_text_file(out_dir + "/memory_breakdown.csv", t.memory_breakdown_csv);
  write_text_file(out_dir + "/memory_ratio.csv", t.ratio_csv);
  write_text_file(out_dir + "/psnr.csv", t.psnr_csv);
  write_text_file(out_dir + "/access.csv", t.access_csv);
  std::cout << "tables written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gs_scale: host-offloading 3D Gaussian Splatting training (CPU reference)"};
  app.require_subcommand(1);

  CommonFlags tf;
  std::string train_out = "out";
  auto* train_cmd = app.add_subcommand("train", "run training and write a report");
  add_common(train_cmd, tf);
  train_cmd->add_option("--out", train_out, "output directory");

  CommonFlags sf;
  std::string split_out = "split_table.json";
  auto* split_cmd = app.add_subcommand("split-points", "compute the balance-aware split table");
  add_common(split_cmd, sf);
  split_cmd->add_option("--out", split_out, "output JSON path");

  OptimBenchConfig bc;
  bool bench_f64 = false;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench-optimizer", "sparse-gradient optimizer stress vs the dense oracle");
  bench_cmd->add_option("--n", bc.n, "row count");
  bench_cmd->add_option("--dim", bc.dim, "row dimension");
  bench_cmd->add_option("--steps", bc.steps, "update passes");
  bench_cmd->add_option("--density", bc.density, "fraction of rows with gradients per pass");
  bench_cmd->add_option("--defer-max", bc.defer_max, "counter saturation value");
  bench_cmd->add_option("--seed", bc.seed, "seed");
  bench_cmd->add_option("--bench-mode", bc.mode, "dense | deferred | full");
  bench_cmd->add_flag("--verify-f64", bench_f64, "run in 64-bit");
  bench_cmd->add_option("--out", bench_out, "access report JSON path");

  CommonFlags rf;
  int view = 0;
  std::string render_png = "view.png", render_f32;
  auto* render_cmd = app.add_subcommand("render", "render one view of the configured scene");
  add_common(render_cmd, rf);
  render_cmd->add_option("--view", view, "camera index");
  render_cmd->add_option("--png", render_png, "output PNG path");
  render_cmd->add_option("--raw", render_f32, "output raw f32 image path");

  std::vector<std::string> report_inputs;
  std::string report_out = "tables";
  auto* report_cmd = app.add_subcommand("report", "comparison tables from run reports");
  report_cmd->add_option("--inputs", report_inputs, "report.json files")->required();
  report_cmd->add_option("--out", report_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(tf, train_out);
    if (split_cmd->parsed()) return cmd_split_points(sf, split_out);
    if (bench_cmd->parsed()) {
      if (bc.mode == "dense") {
        bc.defer_max = 0;  // every row touched every pass
        bc.mode = "deferred";
      } else if (bc.mode != "deferred" && bc.mode != "full") {
        throw ConfigError("bench-optimizer: --bench-mode must be dense, deferred or full");
      }
      return cmd_bench_optimizer(bc, bench_f64, bench_out);
    }
    if (render_cmd->parsed()) return cmd_render(rf, view, render_png, render_f32);
    if (report_cmd->parsed()) return cmd_report(report_inputs, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
