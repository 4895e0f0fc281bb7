#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvgan/train.hpp"

namespace tvgan {

// Everything a command can be told, from defaults, a JSON config file and
// command-line flags (in increasing precedence).
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  int resolution = 256;
  bool resolution_set = false;  // not serialized

  // data
  std::string manifest;
  std::string split_mode = "random";
  int n_test = 8;
  std::string attribute = "eyeglasses";
  std::vector<std::string> splits;
  std::string split_out = "split.json";
  bool synthesize_toy = false;
  int toy_subjects = 8;
  int toy_per_subject = 10;

  // train, transform, evaluate
  TrainConfig train;
  std::string model = "tvgan";
  std::vector<std::string> checkpoints;
  std::vector<std::string> inputs;

  // evaluate
  std::string protocol = "A";
  std::string embedder = "toy";
  std::vector<int> ks = {1, 3, 5, 7};
  std::string rank_mode = "per-image";
  std::string queries = "test";
  std::optional<std::uint64_t> gallery_seed;
  std::string export_images;

  // report
  std::vector<std::string> metrics;
  std::string format = "markdown";
  std::string grid;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Overlays a config file onto `c`; unknown keys are rejected.
void apply_config_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_config_file(const std::string& path, RunConfig base = {});

// Runs the command line; returns the process exit status (0 success,
// 1 usage or input error, 2 internal or numerical failure).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tvgan
