#include "tsenas/diagnostics.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "tsenas/error.hpp"

namespace tsenas {

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_double(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

nlohmann::json eigen_json(const EigenEstimate& e) {
  return {{"eigenvalue", e.eigenvalue}, {"iterations", e.iterations}, {"residual", e.residual},
          {"converged", e.converged},   {"zero_hessian", e.zero_hessian}, {"source", e.source}};
}

EigenEstimate eigen_from_json(const nlohmann::json& j) {
  EigenEstimate e;
  e.eigenvalue = j.at("eigenvalue").get<double>();
  e.iterations = j.at("iterations").get<std::size_t>();
  e.residual = j.at("residual").get<double>();
  e.converged = j.at("converged").get<bool>();
  e.zero_hessian = j.at("zero_hessian").get<bool>();
  e.source = j.at("source").get<std::string>();
  return e;
}

std::string csv_field(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

}  // namespace

EigenEstimate dominant_eigenvalue(const ad::GradientFn& gradient, std::span<const double> point,
                                  const EigenOptions& opts) {
  if (point.empty()) throw ShapeError("dominant_eigenvalue: empty point");
  if (opts.max_iters == 0) throw ConfigError("dominant_eigenvalue: max_iters must be positive");
  if (!(opts.tol > 0.0)) throw ConfigError("dominant_eigenvalue: tol must be positive");

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(point.size());
  for (double& x : v) x = dist(rng);
  const double n0 = norm(v);
  for (double& x : v) x /= n0;

  EigenEstimate est;
  double prev = 0.0;
  for (std::size_t k = 1; k <= opts.max_iters; ++k) {
    const std::vector<double> hv = ad::hvp(gradient, point, v, opts.hvp_epsilon);
    const double hn = norm(hv);
    est.iterations = k;
    if (hn == 0.0) {
      est.eigenvalue = 0.0;
      est.residual = 0.0;
      est.zero_hessian = true;
      est.converged = true;
      est.residual_history.push_back(0.0);
      return est;
    }
    double lambda = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) lambda += v[i] * hv[i];
    double r = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) r += (hv[i] - lambda * v[i]) * (hv[i] - lambda * v[i]);
    est.eigenvalue = lambda;
    est.residual = std::sqrt(r);
    est.residual_history.push_back(est.residual);
    const double scale = std::abs(lambda);
    if (k > 1 && std::abs(lambda - prev) <= opts.tol * scale && est.residual <= opts.tol * scale) {
      est.converged = true;
      return est;
    }
    prev = lambda;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = hv[i] / hn;
  }
  return est;
}

ad::GradientFn alpha_gradient(const Supernet& net, std::span<const double> weights,
                              const Batch& batch) {
  std::vector<double> w(weights.begin(), weights.end());
  return [&net, w = std::move(w), &batch](std::span<const double> a) {
    return net.evaluate<double>(w, a, batch).grad_alpha;
  };
}

double accuracy(const ad::Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("accuracy: logits " + ad::shape_string(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw Error("accuracy: empty dataset");
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[r * k + c] > logits[r * k + best]) best = c;
    }
    if (static_cast<int>(best) == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double val_accuracy(const Supernet& net, const ArchEncoding& alpha, const Dataset& val) {
  if (val.size() == 0) throw Error("val_accuracy: empty dataset");
  return accuracy(net.forward(val.features, alpha), val.labels);
}

double val_accuracy(const Supernet& net, const Genotype& genotype, const Dataset& val) {
  if (val.size() == 0) throw Error("val_accuracy: empty dataset");
  return accuracy(net.discrete_forward(val.features, genotype), val.labels);
}

bool operator==(const EpochRecord& a, const EpochRecord& b) {
  return record_to_json(a) == record_to_json(b);
}

void record_epoch(SearchTrace& trace, const Supernet& net, const ArchEncoding& alpha,
                  const EpochStats& stats, const DiagnosticData& data, const RecordOptions& opts) {
  if (!trace.records.empty() && stats.epoch <= trace.records.back().epoch) {
    throw ConfigError("record_epoch: epoch " + std::to_string(stats.epoch) +
                      " does not follow " + std::to_string(trace.records.back().epoch));
  }
  if (opts.val_accuracy && data.val == nullptr) {
    throw ConfigError("record_epoch: validation accuracy enabled without a validation split");
  }
  if (opts.eigen_val && data.hessian_val == nullptr) {
    throw ConfigError("record_epoch: validation Hessian enabled without a diagnostic batch");
  }
  if (opts.eigen_train && data.hessian_train == nullptr) {
    throw ConfigError("record_epoch: training Hessian enabled without a diagnostic batch");
  }

  EpochRecord r;
  r.epoch = stats.epoch;
  r.tse = stats.tse;
  r.step_losses = stats.step_losses;
  r.train_loss = stats.train_loss;
  const Genotype g = discretize(alpha, net.space(), opts.rule, opts.top_k);
  r.skip_count = skip_count(g);
  r.depth = cell_depth(g, net.space().topology);
  r.genotype = genotype_to_json(g, net.space());
  if (opts.val_accuracy) r.val_acc = val_accuracy(net, alpha, *data.val);
  if (opts.eigen_val) {
    EigenEstimate e =
        dominant_eigenvalue(alpha_gradient(net, net.weights(), *data.hessian_val), alpha.flat(), opts.eigen);
    e.source = "val";
    e.residual_history.clear();
    r.eig_val = e;
  }
  if (opts.eigen_train) {
    EigenEstimate e = dominant_eigenvalue(alpha_gradient(net, net.weights(), *data.hessian_train),
                                          alpha.flat(), opts.eigen);
    e.source = "train";
    e.residual_history.clear();
    r.eig_train = e;
  }
  r.timestamp = utc_timestamp();
  trace.records.push_back(std::move(r));
}

nlohmann::json record_to_json(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["tse"] = opt_json(r.tse);
  j["step_losses"] = r.step_losses;
  j["train_loss"] = r.train_loss;
  j["val_acc"] = opt_json(r.val_acc);
  j["skip_count"] = r.skip_count;
  j["depth"] = r.depth;
  j["eig_val"] = r.eig_val ? eigen_json(*r.eig_val) : nlohmann::json(nullptr);
  j["eig_train"] = r.eig_train ? eigen_json(*r.eig_train) : nlohmann::json(nullptr);
  j["genotype"] = r.genotype;
  j["timestamp"] = r.timestamp;
  return j;
}

EpochRecord record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.tse = opt_double(j, "tse");
  r.step_losses = j.at("step_losses").get<std::vector<double>>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_acc = opt_double(j, "val_acc");
  r.skip_count = j.at("skip_count").get<std::size_t>();
  r.depth = j.at("depth").get<std::size_t>();
  if (!j.at("eig_val").is_null()) r.eig_val = eigen_from_json(j.at("eig_val"));
  if (!j.at("eig_train").is_null()) r.eig_train = eigen_from_json(j.at("eig_train"));
  r.genotype = j.at("genotype");
  r.timestamp = j.value("timestamp", "");
  return r;
}

void write_runlog(const std::filesystem::path& path, const SearchTrace& trace) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const EpochRecord& r : trace.records) out << record_to_json(r).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

SearchTrace read_runlog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read run log " + path.string());
  SearchTrace trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      trace.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("corrupt run log " + path.string() + " line " + std::to_string(lineno) + ": " +
                    e.what());
    }
  }
  return trace;
}

void write_metrics_csv(const std::filesystem::path& path, const SearchTrace& trace) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,tse,train_loss,val_acc,skip_count,depth,eig_val,eig_train\n";
  for (const EpochRecord& r : trace.records) {
    std::optional<double> ev, et;
    if (r.eig_val) ev = r.eig_val->eigenvalue;
    if (r.eig_train) et = r.eig_train->eigenvalue;
    out << r.epoch << ',' << csv_field(r.tse) << ',' << csv_field(r.train_loss) << ','
        << csv_field(r.val_acc) << ',' << r.skip_count << ',' << r.depth << ',' << csv_field(ev)
        << ',' << csv_field(et) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace tsenas
