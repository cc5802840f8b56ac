#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "tsenas/data.hpp"

namespace tsenas {

enum class SearchOptimizer { Darts1st, TseDarts };

std::string optimizer_tag(SearchOptimizer o);
SearchOptimizer optimizer_from_tag(const std::string& tag);

struct RunConfig {
  std::string space = "s2-like";
  SearchOptimizer optimizer = SearchOptimizer::TseDarts;
  std::size_t layers = 8;
  std::size_t width = 8;
  std::optional<std::size_t> unroll_t;  // resolved from the dataset size when unset
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 0;  // leading epochs that train weights only
  std::size_t batch_size = 64;
  double lr = 0.025;
  double momentum = 0.0;
  double arch_lr = 3e-4;
  double arch_weight_decay = 1e-3;
  std::string dataset = "blobs";
  std::optional<double> val_frac;  // resolved: 0.5 for darts-1st, 0 for tse-darts
  double diag_frac = 0.125;
  std::size_t diag_batch = 512;
  std::uint64_t seed = 0;
  std::string out = "run";
  bool diag_eigen = true;
  bool diag_eigen_train = true;
  std::size_t eigen_max_iters = 50;
  double eigen_tol = 1e-3;

  // Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

struct DatasetSpec {
  std::string kind;  // "blobs", "shells" or "idx"
  int k = 4;
  std::size_t d = 16;
  std::size_t n = 4096;
  double noise = 0.3;
  std::string images;
  std::string labels;
};

// "blobs", "blobs:k=4,d=16,n=4096,noise=0.3", "shells[:...]" (same keys)
// or "idx:<images>:<labels>".
DatasetSpec parse_dataset_spec(const std::string& spec);
Dataset load_dataset_spec(const DatasetSpec& spec, std::uint64_t seed);

// Fills unset fields (unroll_t, val_frac) given the dataset size.
RunConfig resolve(const RunConfig& cfg, std::size_t dataset_size);

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumeric = 3 };

// Runs one seeded search and writes runlog.jsonl, metrics.csv,
// genotype.json, config.json, weights.bin (+ weights.json) and run.log into
// cfg.out. Returns an exit code; messages go to `log` as well as run.log.
int run_search(const RunConfig& cfg, std::ostream& log);

// Suites: "gradients", "eigen", "depth" or "all". The report lists every
// check with its measured error and tolerance plus an overall "passed".
nlohmann::json run_verify(const std::string& suite);

// Writes skip_trajectory.csv, depth_trajectory.csv, eigenvalue_trajectory.csv,
// accuracy_trajectory.csv (columns epoch,value,seed) and final_skip.csv into
// `dir`. `dir` holds one run, or one run per subdirectory.
void emit_plots(const std::filesystem::path& dir);

}  // namespace tsenas
