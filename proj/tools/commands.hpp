#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmpca::cli {

// Exit codes shared by every subcommand: 0 success, 2 configuration error,
// 3 numerical failure. Non-convergence is reported in the outputs, not as a
// failure.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int cmd_gen_data(const std::string& config_path, const std::string& out_dir);

struct FitArgs {
  std::string dataset_dir;           // dataset directory with manifest.csv
  std::string run_config;            // alternative: protocol run-config JSON
  std::string mode = "central";      // central | federated
  std::vector<std::size_t> split;    // federated: per-user sample counts
  std::vector<std::size_t> ranks;    // fixed ranks, or empty
  double variation = 0.97;           // used when ranks is empty
  double eta = 1e-6;
  std::size_t max_iter = 10;
  std::uint64_t seed = 0;
  std::string family = "lognormal";
  std::string out_dir;
  bool mask_scatter = false;
};

int cmd_fit(const FitArgs& args);

struct BenchArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::size_t> replications;
  std::optional<std::uint64_t> seed;
  bool cross_validate = false;
};

int cmd_benchmark(const BenchArgs& args);

int cmd_predict(const std::string& model_dir, const std::string& tensor_file,
                const std::string& out_file = "");

int cmd_compare(const std::string& dir_a, const std::string& dir_b);

}  // namespace fmpca::cli
