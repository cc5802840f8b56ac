#include "tsenas/runner.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "tsenas/checkpoint.hpp"
#include "tsenas/diagnostics.hpp"
#include "tsenas/error.hpp"
#include "tsenas/optimizers.hpp"
#include "tsenas/search_space.hpp"
#include "tsenas/supernet.hpp"

namespace tsenas {

namespace fs = std::filesystem;
using nlohmann::json;

std::string optimizer_tag(SearchOptimizer o) {
  return o == SearchOptimizer::Darts1st ? "darts-1st" : "tse-darts";
}

SearchOptimizer optimizer_from_tag(const std::string& tag) {
  if (tag == "darts-1st") return SearchOptimizer::Darts1st;
  if (tag == "tse-darts") return SearchOptimizer::TseDarts;
  throw ConfigError("unknown optimizer '" + tag + "' (expected darts-1st or tse-darts)");
}

void RunConfig::validate() const {
  if (space != "nb201-like" && space != "s2-like" && space != "darts-like") {
    throw ConfigError("unknown space preset '" + space + "'");
  }
  if (layers == 0) throw ConfigError("layers must be positive");
  if (width == 0) throw ConfigError("width must be positive");
  if (unroll_t && (*unroll_t < 1 || *unroll_t > 100)) throw ConfigError("unroll-t must lie in [1, 100]");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (warmup_epochs >= epochs) throw ConfigError("warmup epochs must be fewer than epochs");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (optimizer == SearchOptimizer::TseDarts && momentum != 0.0) {
    throw ConfigError("tse-darts unrolls with plain SGD; momentum must be 0");
  }
  if (!(arch_lr >= 0.0) || !std::isfinite(arch_lr)) throw ConfigError("arch-lr must be >= 0");
  if (!(arch_weight_decay >= 0.0)) throw ConfigError("arch weight decay must be >= 0");
  if (val_frac) {
    if (!(*val_frac >= 0.0 && *val_frac < 1.0)) throw ConfigError("val-frac must lie in [0, 1)");
    if (optimizer == SearchOptimizer::TseDarts && *val_frac != 0.0) {
      throw ConfigError("tse-darts searches without a validation split; val-frac must be 0");
    }
    if (optimizer == SearchOptimizer::Darts1st && *val_frac == 0.0) {
      throw ConfigError("darts-1st needs a validation split; val-frac must be > 0");
    }
  }
  if (!(diag_frac > 0.0 && diag_frac < 1.0)) throw ConfigError("diag-frac must lie in (0, 1)");
  if (diag_batch == 0) throw ConfigError("diag batch must be positive");
  if (eigen_max_iters == 0 || !(eigen_tol > 0.0)) throw ConfigError("invalid eigen settings");
  if (out.empty()) throw ConfigError("output directory is empty");
  parse_dataset_spec(dataset);
}

json RunConfig::to_json() const {
  json j;
  j["space"] = space;
  j["optimizer"] = optimizer_tag(optimizer);
  j["layers"] = layers;
  j["width"] = width;
  j["unroll_t"] = unroll_t ? json(*unroll_t) : json(nullptr);
  j["epochs"] = epochs;
  j["warmup_epochs"] = warmup_epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["arch_lr"] = arch_lr;
  j["arch_weight_decay"] = arch_weight_decay;
  j["arch_optimizer"] = "adam";
  j["dataset"] = dataset;
  j["val_frac"] = val_frac ? json(*val_frac) : json(nullptr);
  j["diag_frac"] = diag_frac;
  j["diag_batch"] = diag_batch;
  j["seed"] = seed;
  j["out"] = out;
  j["diag_eigen"] = diag_eigen;
  j["diag_eigen_train"] = diag_eigen_train;
  j["eigen_max_iters"] = eigen_max_iters;
  j["eigen_tol"] = eigen_tol;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  try {
    RunConfig c;
    c.space = j.value("space", c.space);
    if (j.contains("optimizer")) c.optimizer = optimizer_from_tag(j.at("optimizer").get<std::string>());
    c.layers = j.value("layers", c.layers);
    c.width = j.value("width", c.width);
    if (j.contains("unroll_t") && !j.at("unroll_t").is_null()) c.unroll_t = j.at("unroll_t").get<std::size_t>();
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.arch_lr = j.value("arch_lr", c.arch_lr);
    c.arch_weight_decay = j.value("arch_weight_decay", c.arch_weight_decay);
    c.dataset = j.value("dataset", c.dataset);
    if (j.contains("val_frac") && !j.at("val_frac").is_null()) c.val_frac = j.at("val_frac").get<double>();
    c.diag_frac = j.value("diag_frac", c.diag_frac);
    c.diag_batch = j.value("diag_batch", c.diag_batch);
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out);
    c.diag_eigen = j.value("diag_eigen", c.diag_eigen);
    c.diag_eigen_train = j.value("diag_eigen_train", c.diag_eigen_train);
    c.eigen_max_iters = j.value("eigen_max_iters", c.eigen_max_iters);
    c.eigen_tol = j.value("eigen_tol", c.eigen_tol);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
}

DatasetSpec parse_dataset_spec(const std::string& spec) {
  DatasetSpec d;
  if (spec.rfind("idx:", 0) == 0) {
    const std::string rest = spec.substr(4);
    const auto colon = rest.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size()) {
      throw ConfigError("idx dataset must be idx:<images>:<labels>");
    }
    d.kind = "idx";
    d.images = rest.substr(0, colon);
    d.labels = rest.substr(colon + 1);
    return d;
  }
  const auto head_end = spec.find(':');
  d.kind = spec.substr(0, head_end);
  if (d.kind != "blobs" && d.kind != "shells") throw ConfigError("unknown dataset '" + spec + "'");
  if (head_end == std::string::npos) return d;
  std::stringstream ss(spec.substr(head_end + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("dataset option '" + item + "' lacks '='");
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    try {
      if (key == "k") d.k = std::stoi(val);
      else if (key == "d") d.d = std::stoul(val);
      else if (key == "n") d.n = std::stoul(val);
      else if (key == "noise") d.noise = std::stod(val);
      else throw ConfigError("unknown dataset option '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("bad value for dataset option '" + key + "'");
    }
  }
  if (d.k < 2 || d.d == 0 || d.n < static_cast<std::size_t>(d.k) || !(d.noise >= 0.0)) {
    throw ConfigError("invalid " + d.kind + " parameters");
  }
  return d;
}

Dataset load_dataset_spec(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.kind == "idx") return load_idx(spec.images, spec.labels);
  if (spec.kind == "shells") return synth_shells(spec.k, spec.d, spec.n, spec.noise, seed);
  return synth_blobs(spec.k, spec.d, spec.n, spec.noise, seed);
}

RunConfig resolve(const RunConfig& cfg, std::size_t dataset_size) {
  RunConfig r = cfg;
  if (!r.unroll_t) r.unroll_t = dataset_size < 10000 ? 25 : 100;
  if (!r.val_frac) r.val_frac = r.optimizer == SearchOptimizer::Darts1st ? 0.5 : 0.0;
  r.validate();
  return r;
}

namespace {

class RunLog {
 public:
  RunLog(const fs::path& path, std::ostream& echo) : file_(path, std::ios::trunc), echo_(echo) {
    if (!file_) throw IoError("cannot write " + path.string());
  }
  void line(const std::string& msg) {
    file_ << msg << '\n';
    file_.flush();
    echo_ << msg << '\n';
  }

 private:
  std::ofstream file_;
  std::ostream& echo_;
};

Batch first_rows(const Dataset& ds, std::size_t n) {
  std::vector<std::size_t> idx(std::min(n, ds.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return as_batch(ds.subset(idx));
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int search_body(const RunConfig& raw, std::ostream& echo) {
  const fs::path out(raw.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  RunLog log(out / "run.log", echo);

  const DatasetSpec dspec = parse_dataset_spec(raw.dataset);
  const Dataset full = load_dataset_spec(dspec, raw.seed);
  const RunConfig cfg = resolve(raw, full.size());
  write_json(out / "config.json", cfg.to_json());
  log.line("search " + optimizer_tag(cfg.optimizer) + " space=" + cfg.space + " seed=" +
           std::to_string(cfg.seed) + " n=" + std::to_string(full.size()));

  // Diagnostic holdout, then the search split.
  const Split outer = split(full, SplitSpec{1.0 - cfg.diag_frac, cfg.diag_frac, cfg.seed});
  if (!outer.val || outer.val->size() == 0) throw ConfigError("diagnostic split is empty");
  const Dataset& diag = *outer.val;
  Dataset train = outer.train;
  std::optional<Dataset> val;
  if (*cfg.val_frac > 0.0) {
    Split inner = split(outer.train, SplitSpec{1.0 - *cfg.val_frac, *cfg.val_frac, cfg.seed + 1});
    train = std::move(inner.train);
    val = std::move(inner.val);
    if (!val || val->size() == 0) throw ConfigError("validation split is empty");
  }
  if (train.size() == 0) throw ConfigError("training split is empty");

  SupernetConfig ncfg;
  ncfg.layers = cfg.layers;
  ncfg.width = cfg.width;
  ncfg.space = make_space(cfg.space, dspec.kind == "idx" ? InputKind::Image : InputKind::Vector);
  ncfg.input_shape = full.sample_shape();
  ncfg.classes = full.classes;
  ncfg.seed = cfg.seed;
  Supernet net(ncfg);
  ArchEncoding alpha = net.initial_alpha();
  {
    std::mt19937_64 rng(cfg.seed ^ 0xa1fa);
    std::normal_distribution<double> normal(0.0, 1e-3);
    for (double& a : alpha.flat()) a = normal(rng);
  }

  SGDConfig wcfg{cfg.lr, cfg.momentum, 0.0};
  ArchOptimizerConfig acfg;
  acfg.lr = cfg.arch_lr;
  acfg.weight_decay = cfg.arch_weight_decay;
  ArchOptimizer arch(acfg);
  std::vector<double> velocity;

  const Batch hess_val = first_rows(diag, cfg.diag_batch);
  const Batch hess_train = first_rows(train, cfg.diag_batch);
  RecordOptions ropts;
  ropts.val_accuracy = true;
  ropts.eigen_val = cfg.diag_eigen;
  ropts.eigen_train = cfg.diag_eigen && cfg.diag_eigen_train;
  ropts.eigen.max_iters = cfg.eigen_max_iters;
  ropts.eigen.tol = cfg.eigen_tol;
  ropts.eigen.seed = cfg.seed;
  const DiagnosticData ddata{&diag, &hess_val, &hess_train};

  SearchTrace trace;
  std::ofstream runlog(out / "runlog.jsonl", std::ios::trunc);
  if (!runlog) throw IoError("cannot write " + (out / "runlog.jsonl").string());

  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto tb = batches(train, cfg.batch_size, cfg.seed, epoch);
    EpochStats stats;
    stats.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    try {
      if (epoch <= cfg.warmup_epochs) {
        for (const Batch& b : tb) {
          const auto r = net.evaluate(alpha, b);
          std::vector<double> w(net.weights().begin(), net.weights().end());
          sgd_step(w, r.grad_weights, wcfg, &velocity);
          net.set_weights(w);
          loss_sum += r.loss;
          ++loss_count;
          ++global_step;
        }
      } else if (cfg.optimizer == SearchOptimizer::TseDarts) {
        const std::size_t t = *cfg.unroll_t;
        for (std::size_t start = 0; start < tb.size(); start += t) {
          const std::vector<Batch> window(tb.begin() + static_cast<std::ptrdiff_t>(start),
                                          tb.begin() + static_cast<std::ptrdiff_t>(std::min(start + t, tb.size())));
          const TseRoundReport rep = tse_darts_round(net, alpha, window, wcfg, arch);
          stats.tse = rep.tse;
          stats.step_losses = rep.step_losses;
          loss_sum += rep.retrain_loss * static_cast<double>(window.size());
          loss_count += window.size();
          global_step += 2 * window.size();
        }
      } else {
        const auto vb = batches(*val, cfg.batch_size, cfg.seed ^ 0x9e3779b97f4a7c15ULL, epoch);
        for (std::size_t i = 0; i < tb.size(); ++i) {
          const DartsRoundReport rep =
              darts_first_order_round(net, alpha, tb[i], vb[i % vb.size()], wcfg, arch, &velocity);
          loss_sum += rep.train_loss;
          ++loss_count;
          ++global_step;
        }
      }
    } catch (const NumericError& e) {
      const std::size_t at = global_step + e.step().value_or(0);
      log.line("numerical abort in epoch " + std::to_string(epoch) + " at step " + std::to_string(at) +
               ": " + e.what());
      write_metrics_csv(out / "metrics.csv", trace);
      return kExitNumeric;
    }
    stats.train_loss = loss_sum / static_cast<double>(loss_count);
    record_epoch(trace, net, alpha, stats, ddata, ropts);
    const EpochRecord& r = trace.records.back();
    runlog << record_to_json(r).dump() << '\n';
    runlog.flush();
    std::ostringstream msg;
    msg << "epoch " << epoch << " train_loss=" << r.train_loss << " val_acc=" << r.val_acc.value_or(-1)
        << " skip=" << r.skip_count << " depth=" << r.depth;
    if (r.eig_val) msg << " eig_val=" << r.eig_val->eigenvalue;
    log.line(msg.str());
  }
  runlog.close();

  write_metrics_csv(out / "metrics.csv", trace);
  const Genotype g = discretize(alpha, net.space());
  write_json(out / "genotype.json", genotype_to_json(g, net.space()));

  std::vector<ParamEntry> entries = net.weight_layout().entries();
  std::vector<double> values(net.weights().begin(), net.weights().end());
  const std::size_t nw = values.size();
  for (std::size_t e = 0; e < net.space().topology.num_edges(); ++e) {
    const Edge& edge = net.space().topology.edge(e);
    entries.push_back(ParamEntry{"alpha.edge" + std::to_string(edge.from) + "_" + std::to_string(edge.to),
                                 {net.space().num_ops()}, nw + e * net.space().num_ops(), "arch"});
  }
  values.insert(values.end(), alpha.flat().begin(), alpha.flat().end());
  write_checkpoint(out / "weights.bin", entries, values);
  log.line("final skip_count=" + std::to_string(skip_count(g)) + " depth=" +
           std::to_string(cell_depth(g, net.space().topology)));
  return kExitOk;
}

// ---- verification suites ----

json check(const std::string& name, double measured, double tolerance, bool passed) {
  return {{"name", name}, {"measured", measured}, {"tolerance", tolerance}, {"passed", passed}};
}

double rel_err_max(std::span<const double> a, std::span<const double> b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / d);
  }
  return worst;
}

double rel_norm(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

Supernet verify_net(std::uint64_t seed) {
  SupernetConfig cfg;
  cfg.layers = 1;
  cfg.width = 3;
  cfg.input_shape = {1, 1, 2};
  cfg.classes = 2;
  cfg.seed = seed;
  cfg.space = make_custom_space(json{
      {"nodes", 3}, {"edges", {{0, 1}, {1, 2}}}, {"inputs", {0}}, {"output", 2}, {"ops", {"skip", "linear"}}});
  return Supernet(cfg);
}

json gradients_suite() {
  json checks = json::array();
  double worst_zero = 0.0, worst_fd = 0.0;
  bool ratios_ok = true;
  double worst_ratio_dev = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Supernet net = verify_net(seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    ArchEncoding alpha = net.initial_alpha();
    for (double& a : alpha.flat()) a = u(rng);
    const Dataset ds = synth_blobs(2, 2, 32, 0.5, seed);
    UnrollWindow win{std::vector<double>(net.weights().begin(), net.weights().end()),
                     batches(ds, 8, seed, 0)};

    const auto approx0 = tse_unroll(net, alpha, win, SGDConfig{0.0}).grad_alpha;
    const auto exact0 = exact_tse_gradient(net, alpha, win, SGDConfig{0.0});
    worst_zero = std::max(worst_zero, rel_norm(approx0, exact0));

    const double lr = 0.2;
    auto final_loss = [&](std::span<const double> a) {
      std::vector<double> w = win.w0;
      double last = 0.0;
      for (const Batch& b : win.batches) {
        const auto r = net.evaluate<double>(w, a, b);
        last = r.loss;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * r.grad_weights[i];
      }
      return last;
    };
    const auto exact = exact_hypergradient(net, alpha, win, SGDConfig{lr});
    std::vector<double> fd(exact.size());
    std::vector<double> p(alpha.flat().begin(), alpha.flat().end());
    const double h = 1e-3;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double x = p[k];
      auto at = [&](double d) {
        p[k] = x + d;
        return final_loss(p);
      };
      fd[k] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
      p[k] = x;
    }
    worst_fd = std::max(worst_fd, rel_err_max(exact, fd, 1e-6));

    std::vector<double> errs;
    for (double eta : {1e-2, 1e-3, 1e-4}) {
      errs.push_back(rel_norm(tse_unroll(net, alpha, win, SGDConfig{eta}).grad_alpha,
                              exact_tse_gradient(net, alpha, win, SGDConfig{eta})));
    }
    for (std::size_t i = 0; i + 1 < errs.size(); ++i) {
      const double ratio = errs[i] / errs[i + 1];
      if (ratio < 2.0 || ratio > 20.0) ratios_ok = false;
      worst_ratio_dev = std::max(worst_ratio_dev, std::abs(std::log10(ratio) - 1.0));
    }
  }
  checks.push_back(check("zero_lr_exact_vs_first_order", worst_zero, 1e-12, worst_zero <= 1e-12));
  checks.push_back(check("hypergradient_vs_finite_differences", worst_fd, 1e-4, worst_fd <= 1e-4));
  checks.push_back(check("first_order_error_ratio_log10_deviation", worst_ratio_dev,
                         std::log10(2.0), ratios_ok));
  return checks;
}

json eigen_suite() {
  json checks = json::array();
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0.0, 1.0);
  double worst = 0.0;
  const std::size_t n = 10;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd a(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = nd(rng);
    const ad::GradientFn grad = [a](std::span<const double> x) {
      const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
      const Eigen::VectorXd g = a * xv;
      return std::vector<double>(g.data(), g.data() + g.size());
    };
    std::vector<double> x(n);
    for (double& v : x) v = nd(rng);
    Eigen::MatrixXd hfd(n, n);
    std::vector<double> p = x;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = x[j] + 1e-4;
      const auto gp = grad(p);
      p[j] = x[j] - 1e-4;
      const auto gm = grad(p);
      p[j] = x[j];
      for (std::size_t i = 0; i < n; ++i) hfd(i, j) = (gp[i] - gm[i]) / 2e-4;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (hfd + hfd.transpose()));
    const auto& ev = es.eigenvalues();
    const double ref = std::abs(ev(0)) > std::abs(ev(n - 1)) ? ev(0) : ev(n - 1);
    const EigenEstimate est = dominant_eigenvalue(grad, x, EigenOptions{20000, 1e-10, 1, {}});
    worst = std::max(worst, std::abs(est.eigenvalue - ref) / std::abs(ref));
  }
  checks.push_back(check("power_iteration_vs_dense", worst, 1e-3, worst <= 1e-3));
  return checks;
}

std::size_t brute_force_depth(const Genotype& g, const CellTopology& topo) {
  std::vector<std::vector<std::size_t>> succ(topo.num_nodes());
  for (std::size_t e = 0; e < topo.num_edges(); ++e) {
    if (g.effective(e) != OpKind::Zero) succ[topo.edge(e).from].push_back(topo.edge(e).to);
  }
  for (std::size_t s : topo.output_sources()) succ[s].push_back(topo.output());
  std::size_t best = 0;
  std::function<void(std::size_t, std::size_t)> walk = [&](std::size_t node, std::size_t len) {
    if (node == topo.output()) best = std::max(best, len);
    for (std::size_t next : succ[node]) walk(next, len + 1);
  };
  for (std::size_t in : topo.inputs()) walk(in, 0);
  return best;
}

json depth_suite() {
  json checks = json::array();
  std::mt19937_64 rng(23);
  std::size_t matches = 0;
  const std::size_t total = 100;
  for (std::size_t trial = 0; trial < total; ++trial) {
    const std::size_t nodes = 3 + rng() % 6;
    json edges = json::array();
    for (std::size_t j = 1; j < nodes; ++j) {
      edges.push_back({rng() % j, j});
      for (std::size_t i = 0; i < j; ++i) {
        if (rng() % 2 == 0) {
          bool dup = false;
          for (const auto& e : edges) dup = dup || (e[0] == i && e[1] == j);
          if (!dup) edges.push_back({i, j});
        }
      }
    }
    const SearchSpace sp = make_custom_space(json{{"nodes", nodes},
                                                  {"edges", edges},
                                                  {"inputs", {0}},
                                                  {"output", nodes - 1},
                                                  {"ops", {"zero", "skip", "linear"}}});
    Genotype g;
    for (std::size_t e = 0; e < sp.topology.num_edges(); ++e) {
      g.ops.push_back(sp.ops[rng() % sp.ops.size()]);
      g.retained.push_back(true);
    }
    if (cell_depth(g, sp.topology) == brute_force_depth(g, sp.topology)) ++matches;
  }
  checks.push_back(check("depth_vs_path_enumeration_mismatches", static_cast<double>(total - matches), 0.0,
                         matches == total));

  // Every two-incoming-edges-per-node selection of a DARTS-style cell with
  // non-Zero operations.
  const SearchSpace darts = make_space("darts-like");
  const CellTopology& topo = darts.topology;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> choices;
  for (std::size_t j = 0; j < topo.num_nodes(); ++j) {
    const auto& in = topo.incoming(j);
    if (in.size() < 2) continue;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < in.size(); ++a)
      for (std::size_t b = a + 1; b < in.size(); ++b) pairs.emplace_back(in[a], in[b]);
    choices.push_back(std::move(pairs));
  }
  std::size_t lo = 1000, hi = 0, cells = 0;
  std::vector<std::size_t> pick(choices.size(), 0);
  while (true) {
    Genotype g{std::vector<OpKind>(topo.num_edges(), OpKind::Linear),
               std::vector<bool>(topo.num_edges(), false)};
    for (std::size_t k = 0; k < choices.size(); ++k) {
      g.retained[choices[k][pick[k]].first] = true;
      g.retained[choices[k][pick[k]].second] = true;
    }
    for (std::size_t e = 0; e < topo.num_edges(); ++e)
      if (rng() % 2) g.ops[e] = OpKind::Skip;
    const std::size_t d = cell_depth(g, topo);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
    ++cells;
    std::size_t k = 0;
    while (k < pick.size() && ++pick[k] == choices[k].size()) pick[k++] = 0;
    if (k == pick.size()) break;
  }
  checks.push_back(check("darts_like_cells_enumerated", static_cast<double>(cells), 180.0, cells == 180));
  checks.push_back(check("darts_like_depth_min", static_cast<double>(lo), 2.0, lo == 2));
  checks.push_back(check("darts_like_depth_max", static_cast<double>(hi), 5.0, hi == 5));
  return checks;
}

struct RunRecords {
  std::uint64_t seed = 0;
  std::string optimizer;
  std::size_t edges = 0;
  SearchTrace trace;
};

RunRecords load_run(const fs::path& dir) {
  RunRecords r;
  r.trace = read_runlog(dir / "runlog.jsonl");
  std::ifstream cin(dir / "config.json");
  if (cin) {
    try {
      const json c = json::parse(cin);
      r.seed = c.value("seed", std::uint64_t{0});
      r.optimizer = c.value("optimizer", std::string());
      if (c.contains("space")) r.edges = make_space(c.at("space").get<std::string>()).topology.num_edges();
    } catch (const json::exception& e) {
      throw IoError("corrupt config " + (dir / "config.json").string() + ": " + e.what());
    }
  }
  return r;
}

}  // namespace

int run_search(const RunConfig& cfg, std::ostream& log) {
  try {
    cfg.validate();
    return search_body(cfg, log);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    log << "numerical abort: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

json run_verify(const std::string& suite) {
  if (suite != "gradients" && suite != "eigen" && suite != "depth" && suite != "all") {
    throw ConfigError("unknown verify suite '" + suite + "'");
  }
  json report;
  report["suites"] = json::object();
  bool passed = true;
  auto run = [&](const std::string& name, json (*fn)()) {
    if (suite != name && suite != "all") return;
    json checks = fn();
    for (const auto& c : checks) passed = passed && c.at("passed").get<bool>();
    report["suites"][name] = std::move(checks);
  };
  run("gradients", gradients_suite);
  run("eigen", eigen_suite);
  run("depth", depth_suite);
  report["passed"] = passed;
  return report;
}

void emit_plots(const fs::path& dir) {
  std::vector<RunRecords> runs;
  if (fs::exists(dir / "runlog.jsonl")) {
    runs.push_back(load_run(dir));
  } else {
    if (!fs::is_directory(dir)) throw IoError("no run directory at " + dir.string());
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory() && fs::exists(entry.path() / "runlog.jsonl")) subdirs.push_back(entry.path());
    }
    if (subdirs.empty()) throw IoError("missing run log: " + (dir / "runlog.jsonl").string());
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& p : subdirs) runs.push_back(load_run(p));
  }

  auto write = [&](const std::string& name,
                   const std::function<std::optional<double>(const EpochRecord&)>& value) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out << std::setprecision(17) << "epoch,value,seed\n";
    for (const RunRecords& run : runs) {
      for (const EpochRecord& r : run.trace.records) {
        const auto v = value(r);
        out << r.epoch << ',';
        if (v) out << *v;
        out << ',' << run.seed << '\n';
      }
    }
  };
  write("skip_trajectory.csv", [](const EpochRecord& r) { return double(r.skip_count); });
  write("depth_trajectory.csv", [](const EpochRecord& r) { return double(r.depth); });
  write("eigenvalue_trajectory.csv", [](const EpochRecord& r) -> std::optional<double> {
    if (!r.eig_val) return std::nullopt;
    return r.eig_val->eigenvalue;
  });
  write("accuracy_trajectory.csv", [](const EpochRecord& r) { return r.val_acc; });

  std::ofstream fin(dir / "final_skip.csv", std::ios::trunc);
  if (!fin) throw IoError("cannot write " + (dir / "final_skip.csv").string());
  fin << "seed,optimizer,skip_count,edges\n";
  for (const RunRecords& run : runs) {
    if (run.trace.records.empty()) continue;
    fin << run.seed << ',' << run.optimizer << ',' << run.trace.records.back().skip_count << ','
        << run.edges << '\n';
  }
}

}  // namespace tsenas
