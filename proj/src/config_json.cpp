#include "gss/config_json.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gss {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

template <class T> void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

TrainMode mode_from_string(const std::string& s) {
  if (s == "dense-oracle") return TrainMode::DenseOracle;
  if (s == "offload-serial") return TrainMode::OffloadSerial;
  if (s == "offload-pipelined") return TrainMode::OffloadPipelined;
  throw ConfigError("config: unknown mode '" + s + "'");
}

json memory_to_json(const MemoryReport& m) {
  json j;
  j["device_peak_total"] = m.device_peak_total;
  for (int c = 0; c < kMemCats; ++c) {
    j["device_peak_snapshot"][mem_cat_name(c)] = m.device_peak_snapshot[c];
    j["device_category_peaks"][mem_cat_name(c)] = m.device_category_peaks[c];
    j["device_current"][mem_cat_name(c)] = m.device_current[c];
  }
  j["host_bytes"] = m.host_bytes;
  j["device_param_share"] = m.device_param_share;
  return j;
}

MemoryReport memory_from_json(const json& j) {
  MemoryReport m;
  m.device_peak_total = j.at("device_peak_total").get<int64_t>();
  for (int c = 0; c < kMemCats; ++c) {
    m.device_peak_snapshot[c] = j.at("device_peak_snapshot").at(mem_cat_name(c)).get<int64_t>();
    m.device_category_peaks[c] = j.at("device_category_peaks").at(mem_cat_name(c)).get<int64_t>();
    m.device_current[c] = j.at("device_current").at(mem_cat_name(c)).get<int64_t>();
  }
  m.host_bytes = j.at("host_bytes").get<int64_t>();
  m.device_param_share = j.at("device_param_share").get<double>();
  return m;
}

json access_to_json(const AccessReport& a) {
  json j;
  j["update_passes"] = a.update_passes;
  j["touched_rows"] = a.touched_rows;
  j["param_bytes"] = a.param_bytes;
  j["counter_bytes"] = a.counter_bytes;
  j["restore_rows"] = a.restore_rows;
  j["restore_read_bytes"] = a.restore_read_bytes;
  return j;
}

AccessReport access_from_json(const json& j) {
  AccessReport a;
  a.update_passes = j.at("update_passes").get<uint64_t>();
  a.touched_rows = j.at("touched_rows").get<uint64_t>();
  a.param_bytes = j.at("param_bytes").get<uint64_t>();
  a.counter_bytes = j.at("counter_bytes").get<uint64_t>();
  a.restore_rows = j.at("restore_rows").get<uint64_t>();
  a.restore_read_bytes = j.at("restore_read_bytes").get<uint64_t>();
  return a;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: JSON parse failed: ") + e.what());
  }
  TrainConfig cfg;
  check_keys(j, {"scene", "iterations", "sh_degree", "optimizer", "densify", "mem_limit", "chunk_bytes", "seed",
                 "mode", "verify_f64", "workers", "holdout_every", "eval_interval", "sh_warmup_step",
                 "white_background"},
             "root");
  if (j.contains("scene")) {
    const json& s = j["scene"];
    check_keys(s, {"type", "ply_path", "n", "cams", "width", "height", "box", "radius_min", "radius_max", "fov_deg",
                   "target_jitter", "near", "far", "scale_min", "scale_max", "opacity_min", "opacity_max",
                   "sh_rest_noise"},
               "scene");
    maybe(s, "type", cfg.scene_type);
    maybe(s, "ply_path", cfg.ply_path);
    maybe(s, "n", cfg.synth.n);
    maybe(s, "cams", cfg.synth.cams);
    maybe(s, "width", cfg.synth.width);
    maybe(s, "height", cfg.synth.height);
    maybe(s, "box", cfg.synth.box);
    maybe(s, "radius_min", cfg.synth.radius_min);
    maybe(s, "radius_max", cfg.synth.radius_max);
    maybe(s, "fov_deg", cfg.synth.fov_deg);
    maybe(s, "target_jitter", cfg.synth.target_jitter);
    maybe(s, "near", cfg.synth.near_plane);
    maybe(s, "far", cfg.synth.far_plane);
    maybe(s, "scale_min", cfg.synth.scale_min);
    maybe(s, "scale_max", cfg.synth.scale_max);
    maybe(s, "opacity_min", cfg.synth.opacity_min);
    maybe(s, "opacity_max", cfg.synth.opacity_max);
    maybe(s, "sh_rest_noise", cfg.synth.sh_rest_noise);
  }
  maybe(j, "iterations", cfg.iterations);
  maybe(j, "sh_degree", cfg.sh_degree);
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    check_keys(o, {"lr_mean", "lr_scale", "lr_quat", "lr_opacity", "lr_sh", "beta1", "beta2", "eps", "defer_max",
                   "geo_defer_max"},
               "optimizer");
    maybe(o, "lr_mean", cfg.optim.lr_mean);
    maybe(o, "lr_scale", cfg.optim.lr_scale);
    maybe(o, "lr_quat", cfg.optim.lr_quat);
    maybe(o, "lr_opacity", cfg.optim.lr_opacity);
    maybe(o, "lr_sh", cfg.optim.lr_sh);
    maybe(o, "beta1", cfg.optim.beta1);
    maybe(o, "beta2", cfg.optim.beta2);
    maybe(o, "eps", cfg.optim.eps);
    maybe(o, "defer_max", cfg.optim.defer_max);
    maybe(o, "geo_defer_max", cfg.optim.geo_defer_max);
  }
  if (j.contains("densify")) {
    const json& d = j["densify"];
    check_keys(d, {"interval", "start_iter", "stop_iter", "grad_threshold", "percent_dense", "opacity_prune",
                   "split_scale_divisor"},
               "densify");
    maybe(d, "interval", cfg.densify.interval);
    maybe(d, "start_iter", cfg.densify.start_iter);
    maybe(d, "stop_iter", cfg.densify.stop_iter);
    maybe(d, "grad_threshold", cfg.densify.grad_threshold);
    maybe(d, "percent_dense", cfg.densify.percent_dense);
    maybe(d, "opacity_prune", cfg.densify.opacity_prune);
    maybe(d, "split_scale_divisor", cfg.densify.split_scale_divisor);
  }
  maybe(j, "mem_limit", cfg.mem_limit);
  maybe(j, "chunk_bytes", cfg.chunk_bytes);
  maybe(j, "seed", cfg.seed);
  if (j.contains("mode")) cfg.mode = mode_from_string(j["mode"].get<std::string>());
  maybe(j, "verify_f64", cfg.verify_f64);
  maybe(j, "workers", cfg.workers);
  maybe(j, "holdout_every", cfg.holdout_every);
  maybe(j, "eval_interval", cfg.eval_interval);
  maybe(j, "sh_warmup_step", cfg.sh_warmup_step);
  maybe(j, "white_background", cfg.white_background);
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["scene"]["type"] = cfg.scene_type;
  if (!cfg.ply_path.empty()) j["scene"]["ply_path"] = cfg.ply_path;
  j["scene"]["n"] = cfg.synth.n;
  j["scene"]["cams"] = cfg.synth.cams;
  j["scene"]["width"] = cfg.synth.width;
  j["scene"]["height"] = cfg.synth.height;
  j["scene"]["box"] = cfg.synth.box;
  j["scene"]["radius_min"] = cfg.synth.radius_min;
  j["scene"]["radius_max"] = cfg.synth.radius_max;
  j["scene"]["fov_deg"] = cfg.synth.fov_deg;
  j["scene"]["target_jitter"] = cfg.synth.target_jitter;
  j["iterations"] = cfg.iterations;
  j["sh_degree"] = cfg.sh_degree;
  j["optimizer"] = {{"lr_mean", cfg.optim.lr_mean},     {"lr_scale", cfg.optim.lr_scale},
                    {"lr_quat", cfg.optim.lr_quat},     {"lr_opacity", cfg.optim.lr_opacity},
                    {"lr_sh", cfg.optim.lr_sh},         {"beta1", cfg.optim.beta1},
                    {"beta2", cfg.optim.beta2},         {"eps", cfg.optim.eps},
                    {"defer_max", cfg.optim.defer_max}, {"geo_defer_max", cfg.optim.geo_defer_max}};
  j["densify"] = {{"interval", cfg.densify.interval},
                  {"start_iter", cfg.densify.start_iter},
                  {"stop_iter", cfg.densify.stop_iter},
                  {"grad_threshold", cfg.densify.grad_threshold},
                  {"percent_dense", cfg.densify.percent_dense},
                  {"opacity_prune", cfg.densify.opacity_prune},
                  {"split_scale_divisor", cfg.densify.split_scale_divisor}};
  j["mem_limit"] = cfg.mem_limit;
  j["chunk_bytes"] = cfg.chunk_bytes;
  j["seed"] = cfg.seed;
  j["mode"] = mode_name(cfg.mode);
  j["verify_f64"] = cfg.verify_f64;
  j["workers"] = cfg.workers;
  j["holdout_every"] = cfg.holdout_every;
  j["eval_interval"] = cfg.eval_interval;
  j["sh_warmup_step"] = cfg.sh_warmup_step;
  j["white_background"] = cfg.white_background;
  return j.dump(2);
}

std::string train_report_to_json(const TrainReport& rep) {
  json j;
  j["mode"] = rep.mode;
  j["losses"] = rep.losses;
  json pp = json::array();
  for (const auto& [it, db] : rep.psnr_points) pp.push_back({{"iteration", it}, {"psnr_db", db}});
  j["psnr_points"] = pp;
  j["final_psnr_db"] = rep.final_psnr_exact ? json("exact") : json(rep.final_psnr);
  j["initial_count"] = rep.initial_count;
  j["final_count"] = rep.final_count;
  j["memory"] = memory_to_json(rep.memory);
  j["host_access"] = access_to_json(rep.host_access);
  j["geo_access"] = access_to_json(rep.geo_access);
  j["forwarded_bytes"] = rep.forwarded_bytes;
  j["d2h_bytes"] = rep.d2h_bytes;
  j["wall_seconds"] = rep.wall_seconds;
  j["split_cameras"] = rep.split_cameras;
  return j.dump(2);
}

TrainReport parse_train_report(const std::string& text) {
  json j = json::parse(text);
  TrainReport r;
  r.mode = j.at("mode").get<std::string>();
  r.losses = j.at("losses").get<std::vector<double>>();
  for (const auto& p : j.at("psnr_points"))
    r.psnr_points.emplace_back(p.at("iteration").get<int>(), p.at("psnr_db").get<double>());
  if (j.at("final_psnr_db").is_string()) {
    r.final_psnr_exact = true;
    r.final_psnr = std::numeric_limits<double>::infinity();
  } else {
    r.final_psnr = j.at("final_psnr_db").get<double>();
  }
  r.initial_count = j.at("initial_count").get<int>();
  r.final_count = j.at("final_count").get<int>();
  r.memory = memory_from_json(j.at("memory"));
  r.host_access = access_from_json(j.at("host_access"));
  r.geo_access = access_from_json(j.at("geo_access"));
  r.forwarded_bytes = j.at("forwarded_bytes").get<uint64_t>();
  r.d2h_bytes = j.at("d2h_bytes").get<uint64_t>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.split_cameras = j.at("split_cameras").get<int>();
  return r;
}

TrainReport load_train_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("report: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_report(ss.str());
}

std::string split_table_to_json(const SplitTable& table) {
  json j;
  j["mem_limit"] = table.mem_limit;
  json cams = json::array();
  for (const auto& e : table.cameras) {
    json c;
    c["split"] = e.split;
    c["used_ratio"] = e.used_ratio;
    if (e.split) {
      c["column"] = e.column;
      c["left_count"] = e.left_count;
      c["right_count"] = e.right_count;
      c["search_evals"] = e.search_evals;
    }
    cams.push_back(c);
  }
  j["cameras"] = cams;
  return j.dump(2);
}

std::string access_report_to_json(const AccessReport& a) { return access_to_json(a).dump(2); }

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << content;
}

}  // namespace gss
