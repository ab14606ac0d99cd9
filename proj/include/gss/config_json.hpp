#pragma once

#include <string>

#include "gss/splitter.hpp"
#include "gss/trainer.hpp"

namespace gss {

// Config file <-> TrainConfig. Unknown keys are rejected so typos fail fast.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);

std::string train_report_to_json(const TrainReport& rep);
TrainReport parse_train_report(const std::string& json_text);
TrainReport load_train_report(const std::string& path);

std::string split_table_to_json(const SplitTable& table);

std::string access_report_to_json(const AccessReport& a);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace gss
