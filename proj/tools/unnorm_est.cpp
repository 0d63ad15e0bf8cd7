// unnorm-est: fit, variance and replication front end.
//
//   unnorm-est fit --config c.cfg
//   unnorm-est fit --observed y.csv --artificial x.csv --lambda 4
//   unnorm-est asyvar --config c.cfg --out dir
//   unnorm-est experiment mse-ratio --config c.cfg --out dir --workers 4 --deterministic

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifdef UNNORM_CLI11_PACKAGE
#include <CLI/CLI.hpp>
#else
#include "CLI11.hpp"
#endif
#include "unnorm/experiments.hpp"

namespace {

using namespace unnorm;

struct CommonFlags {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<double> grad_tol;
  std::optional<int> max_iters;
  bool deterministic = false;
};

void add_common(CLI::App* app, CommonFlags& f, bool needs_out) {
  app->add_option("--config", f.config, "Key = value configuration file");
  if (needs_out) app->add_option("--out", f.out, "Output directory")->capture_default_str();
  app->add_option("--seed", f.seed, "Master seed (overrides the config)");
  app->add_option("--workers", f.workers, "Worker threads (results do not depend on it)");
  app->add_option("--grad-tol", f.grad_tol, "Absolute gradient-norm tolerance");
  app->add_option("--max-iters", f.max_iters, "Newton iteration cap");
  app->add_flag("--deterministic", f.deterministic, "Zero timings and omit the timestamp");
}

ExperimentConfig load_config(const CommonFlags& f, std::optional<ExperimentMode> mode) {
  KeyValueConfig kv = f.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(f.config);
  ExperimentConfig cfg = ExperimentConfig::from(kv);
  if (mode) cfg.mode = *mode;
  if (f.seed) cfg.seed = *f.seed;
  if (f.workers) cfg.workers = *f.workers;
  if (f.grad_tol) cfg.solver.grad_tol = *f.grad_tol;
  if (f.max_iters) cfg.solver.max_iters = *f.max_iters;
  cfg.deterministic = f.deterministic;
  cfg.validate();
  return cfg;
}

/// One point per line, coordinates separated by commas.
Points read_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error(path + ": rows have different lengths");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no points");
  Points pts(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size()));
  for (size_t j = 0; j < rows.size(); ++j)
    for (size_t i = 0; i < rows[j].size(); ++i)
      pts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j][i];
  return pts;
}

int run_fit(const CommonFlags& f, const std::string& observed, const std::string& artificial,
            std::optional<double> lambda_flag) {
  ExperimentConfig cfg = load_config(f, std::nullopt);
  const double lambda = lambda_flag.value_or(cfg.lambda_grid.front());
  Points y, x;
  if (!observed.empty() || !artificial.empty()) {
    if (observed.empty() || artificial.empty())
      throw std::runtime_error("--observed and --artificial go together");
    y = read_points(observed);
    x = read_points(artificial);
  } else {
    RngStream y_rng(cfg.seed, stream_key({0, observed_role}));
    RngStream x_rng(cfg.seed, stream_key({0, artificial_role}));
    y = sample_truth_iid(cfg.truth, cfg.n, y_rng).points;
    x = sample_proposal_iid(lambda, cfg.truth.p(), artificial_size(cfg.tau_grid.front(), cfg.n),
                            x_rng);
  }
  const int p = static_cast<int>(y.rows());
  const ModelSpec model = trunc_gauss_model(p);
  const Dataset data = Dataset::build(y, x, half_normal_proposal(lambda, p));

  std::cout << "estimator,status,iterations,grad_norm,objective,in_domain,component,value\n";
  for (auto kind : {ObjectiveKind::nce, ObjectiveKind::is}) {
    const FitResult r = fit(kind, data, model, default_init(data, model), cfg.solver);
    const Vec xi = r.xi_hat.stacked();
    for (Eigen::Index c = 0; c < xi.size(); ++c)
      std::cout << to_string(kind) << ',' << to_string(r.status) << ',' << r.iterations << ','
                << format_double(r.final_grad_norm) << ',' << format_double(r.objective) << ','
                << (r.in_domain ? 1 : 0) << ',' << (c + 1 == xi.size() ? "nu" : std::to_string(c))
                << ',' << format_double(xi(c)) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Estimation for un-normalised models: NCE and Monte Carlo MLE"};
  app.require_subcommand(1);

  CommonFlags fit_flags, asy_flags, exp_flags;
  std::string observed, artificial, mode_name;
  std::optional<double> lambda;

  auto* fit_cmd = app.add_subcommand("fit", "Fit NCE and MC-MLE on one dataset");
  add_common(fit_cmd, fit_flags, false);
  fit_cmd->add_option("--observed", observed, "CSV of observed points (one per line)");
  fit_cmd->add_option("--artificial", artificial, "CSV of half-normal artificial points");
  fit_cmd->add_option("--lambda", lambda, "Proposal variance");

  auto* asy_cmd = app.add_subcommand("asyvar", "Monte Carlo asymptotic variances on a grid");
  add_common(asy_cmd, asy_flags, true);

  auto* exp_cmd = app.add_subcommand("experiment", "Replication studies");
  add_common(exp_cmd, exp_flags, true);
  exp_cmd->add_option("mode", mode_name, "mse-ratio | existence | theorem2 | consistency-mcmc")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit_cmd->parsed()) return run_fit(fit_flags, observed, artificial, lambda);
    if (asy_cmd->parsed()) {
      const ExperimentConfig cfg = load_config(asy_flags, std::nullopt);
      std::filesystem::create_directories(asy_flags.out);
      write_asyvar(asy_flags.out, run_asyvar(cfg));
      write_manifest(asy_flags.out, cfg, {{"mc_size", std::to_string(cfg.mc_size)}});
      return 0;
    }
    const ExperimentConfig cfg = load_config(exp_flags, parse_mode(mode_name));
    run_experiment(cfg, exp_flags.out);
  } catch (const std::exception& e) {
    std::cerr << "unnorm-est: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
