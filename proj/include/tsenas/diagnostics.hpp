#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsenas/autodiff.hpp"
#include "tsenas/data.hpp"
#include "tsenas/search_space.hpp"
#include "tsenas/supernet.hpp"

namespace tsenas {

struct EigenOptions {
  std::size_t max_iters = 50;
  double tol = 1e-3;  // relative to |lambda|
  std::uint64_t seed = 0;
  std::optional<double> hvp_epsilon;
};

struct EigenEstimate {
  double eigenvalue = 0.0;
  std::size_t iterations = 0;
  double residual = 0.0;  // |Hv - lambda v| for the returned unit v
  bool converged = false;
  bool zero_hessian = false;
  std::string source = "val";
  std::vector<double> residual_history;
};

// Power iteration on finite-difference Hessian-vector products of `gradient`
// at `point`. Stops once both the change in the Rayleigh quotient and the
// residual are below tol * |lambda|.
EigenEstimate dominant_eigenvalue(const ad::GradientFn& gradient, std::span<const double> point,
                                  const EigenOptions& opts = {});

// Gradient of the batch loss with respect to alpha at fixed weights.
ad::GradientFn alpha_gradient(const Supernet& net, std::span<const double> weights,
                              const Batch& batch);

// Fraction of rows whose argmax (first maximum on ties) equals the label.
double accuracy(const ad::Tensor& logits, std::span<const int> labels);
double val_accuracy(const Supernet& net, const ArchEncoding& alpha, const Dataset& val);
double val_accuracy(const Supernet& net, const Genotype& genotype, const Dataset& val);

struct EpochRecord {
  std::size_t epoch = 0;
  std::optional<double> tse;  // last window of the epoch
  std::vector<double> step_losses;
  double train_loss = 0.0;
  std::optional<double> val_acc;
  std::size_t skip_count = 0;
  std::size_t depth = 0;
  std::optional<EigenEstimate> eig_val;
  std::optional<EigenEstimate> eig_train;
  nlohmann::json genotype;
  std::string timestamp;

  friend bool operator==(const EpochRecord&, const EpochRecord&);
};

struct SearchTrace {
  std::vector<EpochRecord> records;
};

// Per-epoch inputs gathered by the search loop.
struct EpochStats {
  std::size_t epoch = 0;
  std::optional<double> tse;
  std::vector<double> step_losses;
  double train_loss = 0.0;
};

struct DiagnosticData {
  const Dataset* val = nullptr;           // accuracy
  const Batch* hessian_val = nullptr;     // validation-loss Hessian
  const Batch* hessian_train = nullptr;   // training-loss Hessian
};

struct RecordOptions {
  bool val_accuracy = true;
  bool eigen_val = true;
  bool eigen_train = false;
  EigenOptions eigen;
  DiscretizeRule rule = DiscretizeRule::ArgmaxPerEdge;
  std::size_t top_k = 2;
};

// Appends one record. Reads net and alpha only. Throws ConfigError when an
// enabled metric lacks its data, or when the epoch does not increase.
void record_epoch(SearchTrace& trace, const Supernet& net, const ArchEncoding& alpha,
                  const EpochStats& stats, const DiagnosticData& data, const RecordOptions& opts);

nlohmann::json record_to_json(const EpochRecord& r);
EpochRecord record_from_json(const nlohmann::json& j);

void write_runlog(const std::filesystem::path& path, const SearchTrace& trace);
SearchTrace read_runlog(const std::filesystem::path& path);

// Columns: epoch,tse,train_loss,val_acc,skip_count,depth,eig_val,eig_train
// (absent values are empty fields).
void write_metrics_csv(const std::filesystem::path& path, const SearchTrace& trace);

std::string utc_timestamp();

}  // namespace tsenas
