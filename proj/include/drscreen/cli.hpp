#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "drscreen/imaging.hpp"
#include "drscreen/model/config.hpp"
#include "drscreen/service.hpp"
#include "drscreen/trainer.hpp"

namespace drscreen::cli {

struct DataPaths {
  std::string train_manifest;
  std::string train_images;
  std::string test_manifest;  // empty: seeded holdout from the training manifest
  std::string test_images;
  double holdout_fraction = 0.2;
  std::string validation_manifest;
  std::string validation_images;
};

/// Everything a config file may hold. Unknown keys anywhere are ConfigErrors.
struct CliConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  AugmentConfig augment;
  DataPaths data;
  service::ServiceConfig service;
  std::string out_dir = "out";
};

void to_json(nlohmann::json& j, const CliConfig& c);
void from_json(const nlohmann::json& j, CliConfig& c);

/// Reads a JSON config file on top of the defaults. Throws ConfigError.
CliConfig load_config(const std::filesystem::path& path);

/// Entry point. args[0] is the program name. Returns the process exit status:
/// 0 success, 1 runtime failure (a diagnostic names the stage), 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace drscreen::cli
