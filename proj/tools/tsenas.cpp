#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tsenas/error.hpp"
#include "tsenas/runner.hpp"

namespace {

bool parse_on_off(const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw tsenas::ConfigError("expected on or off, got '" + v + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable architecture search with training-speed estimates"};
  app.require_subcommand(1);

  tsenas::RunConfig cfg;
  std::string config_file;
  std::string optimizer = "tse-darts";
  std::string diag_eigen = "on";
  std::string diag_eigen_train = "on";
  std::size_t unroll_t = 0;
  double val_frac = -1.0;

  auto* search = app.add_subcommand("search", "Run one seeded architecture search");
  search->add_option("--config", config_file, "Resolved config.json to start from");
  search->add_option("--space", cfg.space, "nb201-like | s2-like | darts-like");
  search->add_option("--optimizer", optimizer, "darts-1st | tse-darts");
  search->add_option("--layers", cfg.layers, "Stacked cells");
  search->add_option("--unroll-t", unroll_t, "SGD steps per window (default 25 when n < 10000, else 100)");
  search->add_option("--epochs", cfg.epochs);
  search->add_option("--warmup-epochs", cfg.warmup_epochs, "Leading epochs without architecture steps");
  search->add_option("--lr", cfg.lr, "Weight learning rate");
  search->add_option("--arch-lr", cfg.arch_lr, "Architecture learning rate");
  search->add_option("--arch-wd", cfg.arch_weight_decay, "Architecture weight decay");
  search->add_option("--width", cfg.width, "Channels per node");
  search->add_option("--batch-size", cfg.batch_size);
  search->add_option("--seed", cfg.seed);
  search->add_option("--out", cfg.out, "Output directory");
  search->add_option("--dataset", cfg.dataset, "blobs|shells[:k=..,d=..,n=..,noise=..] | idx:<images>:<labels>");
  search->add_option("--val-frac", val_frac, "Search validation fraction (darts-1st only)");
  search->add_option("--diag-frac", cfg.diag_frac, "Held-out diagnostic fraction");
  search->add_option("--diag-eigen", diag_eigen, "on | off");
  search->add_option("--diag-eigen-train", diag_eigen_train, "on | off");
  search->add_option("--eigen-iters", cfg.eigen_max_iters);

  std::string suite = "all";
  std::string report_path;
  auto* verify = app.add_subcommand("verify", "Run oracle verification suites");
  verify->add_option("suite", suite, "gradients | eigen | depth | all");
  verify->add_option("--out", report_path, "Write the JSON report here");

  std::string plot_dir;
  auto* plots = app.add_subcommand("plots", "Write trajectory CSVs for a run directory");
  plots->add_option("dir", plot_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : tsenas::kExitConfig;
  }

  try {
    if (*search) {
      tsenas::RunConfig run = cfg;
      if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) throw tsenas::ConfigError("cannot read config " + config_file);
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
          throw tsenas::ConfigError("malformed config " + config_file + ": " + e.what());
        }
        run = tsenas::RunConfig::from_json(j);
        // Flags given explicitly override the file.
        if (search->count("--space")) run.space = cfg.space;
        if (search->count("--layers")) run.layers = cfg.layers;
        if (search->count("--epochs")) run.epochs = cfg.epochs;
        if (search->count("--warmup-epochs")) run.warmup_epochs = cfg.warmup_epochs;
        if (search->count("--lr")) run.lr = cfg.lr;
        if (search->count("--arch-lr")) run.arch_lr = cfg.arch_lr;
        if (search->count("--arch-wd")) run.arch_weight_decay = cfg.arch_weight_decay;
        if (search->count("--width")) run.width = cfg.width;
        if (search->count("--batch-size")) run.batch_size = cfg.batch_size;
        if (search->count("--seed")) run.seed = cfg.seed;
        if (search->count("--out")) run.out = cfg.out;
        if (search->count("--dataset")) run.dataset = cfg.dataset;
        if (search->count("--diag-frac")) run.diag_frac = cfg.diag_frac;
        if (search->count("--eigen-iters")) run.eigen_max_iters = cfg.eigen_max_iters;
      }
      if (search->count("--optimizer") || config_file.empty()) {
        run.optimizer = tsenas::optimizer_from_tag(optimizer);
      }
      if (search->count("--unroll-t")) run.unroll_t = unroll_t;
      if (search->count("--val-frac")) run.val_frac = val_frac;
      if (search->count("--diag-eigen")) run.diag_eigen = parse_on_off(diag_eigen);
      if (search->count("--diag-eigen-train")) run.diag_eigen_train = parse_on_off(diag_eigen_train);
      return tsenas::run_search(run, std::cout);
    }
    if (*verify) {
      const nlohmann::json report = tsenas::run_verify(suite);
      const std::string text = report.dump(2);
      if (!report_path.empty()) {
        std::ofstream out(report_path);
        if (!out) throw tsenas::IoError("cannot write " + report_path);
        out << text << '\n';
      }
      std::cout << text << '\n';
      return report.at("passed").get<bool>() ? tsenas::kExitOk : tsenas::kExitFailure;
    }
    if (*plots) {
      tsenas::emit_plots(plot_dir);
      std::cout << "wrote trajectory CSVs to " << plot_dir << '\n';
      return tsenas::kExitOk;
    }
  } catch (const tsenas::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return tsenas::kExitConfig;
  } catch (const tsenas::NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return tsenas::kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return tsenas::kExitFailure;
  }
  return tsenas::kExitFailure;
}
