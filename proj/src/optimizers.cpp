#include "tsenas/optimizers.hpp"

#include <cmath>
#include <string>

#include "tsenas/checkpoint.hpp"
#include "tsenas/dual.hpp"
#include "tsenas/error.hpp"

namespace tsenas {

namespace {

void check_finite(std::span<const double> v, const char* what, std::optional<std::size_t> step) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + " is not finite", step);
  }
}

EvalResult<double> evaluate_at(const Supernet& net, std::span<const double> w,
                               const ArchEncoding& alpha, const Batch& batch, std::size_t step) {
  try {
    EvalResult<double> r = net.evaluate<double>(w, alpha.flat(), batch);
    if (!std::isfinite(r.loss)) throw NumericError("training loss is not finite", step);
    return r;
  } catch (const NumericError& e) {
    if (e.step()) throw;
    throw NumericError(e.what(), step);
  }
}

void check_window(const Supernet& net, const UnrollWindow& window) {
  if (window.batches.empty()) throw ConfigError("unroll window has no batches");
  if (window.w0.size() != net.num_weights()) {
    throw ShapeError("unroll window holds " + std::to_string(window.w0.size()) +
                     " weights, network has " + std::to_string(net.num_weights()));
  }
}

void check_exact_preconditions(const Supernet& net, const ArchEncoding& alpha,
                               const UnrollWindow& window, const SGDConfig& cfg,
                               const ExactOptions& opts) {
  cfg.validate();
  if (!cfg.plain()) throw ConfigError("exact hypergradients require plain SGD");
  const std::size_t total = net.num_weights() + alpha.flat().size();
  if (total > opts.param_cap) {
    throw ConfigError("exact hypergradient: " + std::to_string(total) +
                      " parameters exceed the cap of " + std::to_string(opts.param_cap));
  }
  check_window(net, window);
}

// Reverse sweep through the unrolled SGD trajectory. Losses with index in
// [first_loss, n) contribute to the objective.
std::vector<double> unrolled_gradient(const Supernet& net, const ArchEncoding& alpha,
                                      const UnrollWindow& window, const SGDConfig& cfg,
                                      std::size_t first_loss) {
  const std::size_t n = window.steps();
  const std::size_t nw = net.num_weights();
  std::vector<std::vector<double>> traj;
  traj.reserve(n);
  traj.push_back(window.w0);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const auto r = evaluate_at(net, traj.back(), alpha, window.batches[t], t);
    std::vector<double> next = traj.back();
    sgd_step(next, r.grad_weights, cfg);
    traj.push_back(std::move(next));
  }

  std::vector<double> adj(nw, 0.0);
  std::vector<double> ga(alpha.flat().size(), 0.0);
  std::vector<ad::Dual> wd(nw);
  std::vector<ad::Dual> ad_alpha(alpha.flat().begin(), alpha.flat().end());
  for (std::size_t t = n; t-- > 0;) {
    for (std::size_t i = 0; i < nw; ++i) wd[i] = ad::Dual(traj[t][i], adj[i]);
    EvalResult<ad::Dual> r;
    try {
      r = net.evaluate<ad::Dual>(wd, ad_alpha, window.batches[t]);
    } catch (const NumericError& e) {
      throw NumericError(e.what(), t);
    }
    const bool counted = t >= first_loss;
    for (std::size_t i = 0; i < nw; ++i) {
      adj[i] -= cfg.lr * r.grad_weights[i].tan;
      if (counted) adj[i] += r.grad_weights[i].val;
    }
    for (std::size_t k = 0; k < ga.size(); ++k) {
      ga[k] -= cfg.lr * r.grad_alpha[k].tan;
      if (counted) ga[k] += r.grad_alpha[k].val;
    }
  }
  check_finite(ga, "hypergradient", std::nullopt);
  return ga;
}

}  // namespace

void SGDConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("weight learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
}

void sgd_step(std::span<double> weights, std::span<const double> grads, const SGDConfig& cfg,
              std::vector<double>* velocity) {
  if (weights.size() != grads.size()) {
    throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(weights.size()) + " weights");
  }
  check_finite(grads, "weight gradient", std::nullopt);
  const bool use_momentum = cfg.momentum != 0.0 && velocity != nullptr;
  if (use_momentum && velocity->size() != weights.size()) velocity->assign(weights.size(), 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double g = grads[i];
    if (cfg.weight_decay != 0.0) g += cfg.weight_decay * weights[i];
    if (use_momentum) {
      (*velocity)[i] = cfg.momentum * (*velocity)[i] + g;
      g = (*velocity)[i];
    }
    weights[i] -= cfg.lr * g;
  }
}

void ArchOptimizerConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("architecture learning rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("architecture weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
}

ArchOptimizer::ArchOptimizer(ArchOptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void ArchOptimizer::step(ArchEncoding& alpha, std::span<const double> grad) {
  auto a = alpha.flat();
  if (a.size() != grad.size()) throw ShapeError("architecture gradient size mismatch");
  check_finite(grad, "architecture gradient", std::nullopt);
  ++t_;
  if (cfg_.kind == ArchOptimizerKind::Sgd) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= cfg_.lr * (grad[i] + cfg_.weight_decay * a[i]);
    return;
  }
  if (m_.size() != a.size()) {
    m_.assign(a.size(), 0.0);
    v_.assign(a.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double g = grad[i] + cfg_.weight_decay * a[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    a[i] -= cfg_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
  }
}

void TSEAccumulator::add(double loss, std::span<const double> grad_alpha) {
  if (grad_alpha.size() != grad_.size()) throw ShapeError("TSE accumulator: gradient size mismatch");
  tse_ += loss;
  losses_.push_back(loss);
  for (std::size_t i = 0; i < grad_.size(); ++i) grad_[i] += grad_alpha[i];
}

UnrollResult tse_unroll(const Supernet& net, const ArchEncoding& alpha, const UnrollWindow& window,
                        const SGDConfig& cfg) {
  cfg.validate();
  if (cfg.momentum != 0.0) throw ConfigError("momentum must be disabled inside unroll windows");
  check_window(net, window);
  TSEAccumulator acc(alpha.flat().size());
  std::vector<double> w = window.w0;
  for (std::size_t t = 0; t < window.steps(); ++t) {
    const auto r = evaluate_at(net, w, alpha, window.batches[t], t);
    acc.add(r.loss, r.grad_alpha);
    try {
      sgd_step(w, r.grad_weights, cfg);
    } catch (const NumericError& e) {
      throw NumericError(e.what(), t);
    }
  }
  return UnrollResult{acc.tse(), acc.grad(), std::move(w), acc.losses()};
}

TseRoundReport tse_darts_round(Supernet& net, ArchEncoding& alpha, const std::vector<Batch>& batches,
                               const SGDConfig& w_cfg, ArchOptimizer& arch_opt) {
  TseRoundReport rep;
  UnrollWindow window{std::vector<double>(net.weights().begin(), net.weights().end()), batches};
  rep.snapshot_checksum = checksum(window.w0);

  UnrollResult u = tse_unroll(net, alpha, window, w_cfg);
  rep.tse = u.tse;
  rep.step_losses = std::move(u.step_losses);
  rep.grad_alpha = std::move(u.grad_alpha);

  net.set_weights(window.w0);
  rep.restored_checksum = checksum(net.weights());
  if (rep.restored_checksum != rep.snapshot_checksum) {
    throw NumericError("weights differ from the snapshot after restore");
  }

  const ArchEncoding before = alpha;
  arch_opt.step(alpha, rep.grad_alpha);
  rep.alpha_changed = !(alpha == before);

  std::vector<double> w = window.w0;
  double total = 0.0;
  for (std::size_t t = 0; t < batches.size(); ++t) {
    const auto r = evaluate_at(net, w, alpha, batches[t], t);
    total += r.loss;
    sgd_step(w, r.grad_weights, w_cfg);
  }
  rep.retrain_loss = total / static_cast<double>(batches.size());
  net.set_weights(w);
  return rep;
}

DartsRoundReport darts_first_order_round(Supernet& net, ArchEncoding& alpha, const Batch& train,
                                         const Batch& val, const SGDConfig& w_cfg,
                                         ArchOptimizer& arch_opt, std::vector<double>* velocity) {
  w_cfg.validate();
  DartsRoundReport rep;
  std::vector<double> w(net.weights().begin(), net.weights().end());
  const auto tr = evaluate_at(net, w, alpha, train, 0);
  rep.train_loss = tr.loss;
  sgd_step(w, tr.grad_weights, w_cfg, velocity);
  net.set_weights(w);
  const auto vr = evaluate_at(net, w, alpha, val, 0);
  rep.val_loss = vr.loss;
  rep.grad_alpha = vr.grad_alpha;
  arch_opt.step(alpha, rep.grad_alpha);
  return rep;
}

std::vector<double> exact_hypergradient(const Supernet& net, const ArchEncoding& alpha,
                                        const UnrollWindow& window, const SGDConfig& cfg,
                                        const ExactOptions& opts) {
  check_exact_preconditions(net, alpha, window, cfg, opts);
  return unrolled_gradient(net, alpha, window, cfg, window.steps() - 1);
}

std::vector<double> exact_tse_gradient(const Supernet& net, const ArchEncoding& alpha,
                                       const UnrollWindow& window, const SGDConfig& cfg,
                                       const ExactOptions& opts) {
  check_exact_preconditions(net, alpha, window, cfg, opts);
  return unrolled_gradient(net, alpha, window, cfg, 0);
}

}  // namespace tsenas
