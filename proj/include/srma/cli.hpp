#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "srma/data.hpp"
#include "srma/keyvalue.hpp"
#include "srma/toynet.hpp"

namespace srma::cli {

/// Everything a training run needs. Serialised in full into the run directory so the
/// echo alone reproduces the run.
struct RunConfig {
  net::NetworkConfig network;
  net::TrainConfig train;
  std::filesystem::path train_data;
  std::filesystem::path out_dir = "run";

  /// Relative paths resolve against `base_dir`. Unknown keys are an error.
  static RunConfig from_text(const std::string& text, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

/// Trains and writes config.txt, metrics.ndjson, checkpoint.bin and summary.json into
/// `cfg.out_dir`. Returns the checkpoint path.
std::filesystem::path run_training(const RunConfig& cfg, bool quiet = false);

data::IouReport evaluate(const net::SegmentationNet& model, std::span<const data::SegSample> samples);

int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace srma::cli
