#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tsenas/data.hpp"
#include "tsenas/search_space.hpp"
#include "tsenas/supernet.hpp"

namespace tsenas {

struct SGDConfig {
  double lr = 0.025;
  double momentum = 0.0;
  double weight_decay = 0.0;

  void validate() const;
  bool plain() const { return momentum == 0.0 && weight_decay == 0.0; }
};

// w <- w - lr * (g + wd * w), with heavy-ball momentum when enabled.
// `velocity` is resized on first use.
void sgd_step(std::span<double> weights, std::span<const double> grads, const SGDConfig& cfg,
              std::vector<double>* velocity = nullptr);

enum class ArchOptimizerKind { Sgd, Adam };

struct ArchOptimizerConfig {
  double lr = 3e-4;
  double weight_decay = 1e-3;
  ArchOptimizerKind kind = ArchOptimizerKind::Adam;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// Architecture optimizer. Weight decay is added to the gradient (L2).
class ArchOptimizer {
 public:
  explicit ArchOptimizer(ArchOptimizerConfig cfg);
  const ArchOptimizerConfig& config() const { return cfg_; }
  void step(ArchEncoding& alpha, std::span<const double> grad);
  std::size_t steps() const { return t_; }

 private:
  ArchOptimizerConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

// Starting weights plus the batches of one window, replayed identically by
// every pass over it. Its size is the number of SGD steps taken.
struct UnrollWindow {
  std::vector<double> w0;
  std::vector<Batch> batches;

  std::size_t steps() const { return batches.size(); }
};

class TSEAccumulator {
 public:
  explicit TSEAccumulator(std::size_t num_alpha) : grad_(num_alpha, 0.0) {}
  void add(double loss, std::span<const double> grad_alpha);
  double tse() const { return tse_; }
  const std::vector<double>& grad() const { return grad_; }
  const std::vector<double>& losses() const { return losses_; }
  std::size_t steps() const { return losses_.size(); }

 private:
  double tse_ = 0.0;
  std::vector<double> grad_;
  std::vector<double> losses_;
};

struct UnrollResult {
  double tse = 0.0;
  std::vector<double> grad_alpha;  // first-order: sum of direct gradients
  std::vector<double> weights;     // after the last step
  std::vector<double> step_losses;
};

// Trains from window.w0 over the window with plain SGD, summing each step's
// loss and direct alpha gradient. `alpha` and `net` are untouched.
UnrollResult tse_unroll(const Supernet& net, const ArchEncoding& alpha, const UnrollWindow& window,
                        const SGDConfig& cfg);

struct TseRoundReport {
  double tse = 0.0;
  std::vector<double> step_losses;
  std::vector<double> grad_alpha;
  std::uint64_t snapshot_checksum = 0;
  std::uint64_t restored_checksum = 0;
  bool alpha_changed = false;
  double retrain_loss = 0.0;  // mean loss over the replayed steps
};

// One round of the TSE search loop on the net's current weights: unroll,
// restore, architecture step, then retrain over the same batches under the
// new alpha. Updates the net's weights and `alpha` in place. Throws
// NumericError if the restored weights differ from the snapshot.
TseRoundReport tse_darts_round(Supernet& net, ArchEncoding& alpha, const std::vector<Batch>& batches,
                               const SGDConfig& w_cfg, ArchOptimizer& arch_opt);

struct DartsRoundReport {
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::vector<double> grad_alpha;
};

// One SGD step on the train batch, then one architecture step along the
// direct validation gradient at the updated weights.
DartsRoundReport darts_first_order_round(Supernet& net, ArchEncoding& alpha, const Batch& train,
                                         const Batch& val, const SGDConfig& w_cfg,
                                         ArchOptimizer& arch_opt,
                                         std::vector<double>* velocity = nullptr);

struct ExactOptions {
  std::size_t param_cap = 2000;
};

// Gradient with respect to alpha of the last batch's loss, evaluated after
// SGD steps on all earlier batches of the window, differentiating through
// every update. A one-batch window has no updates.
std::vector<double> exact_hypergradient(const Supernet& net, const ArchEncoding& alpha,
                                        const UnrollWindow& window, const SGDConfig& cfg,
                                        const ExactOptions& opts = {});

// Exact gradient with respect to alpha of the sum of all step losses of the
// window (the quantity tse_unroll approximates).
std::vector<double> exact_tse_gradient(const Supernet& net, const ArchEncoding& alpha,
                                       const UnrollWindow& window, const SGDConfig& cfg,
                                       const ExactOptions& opts = {});

}  // namespace tsenas
