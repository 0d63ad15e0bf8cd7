// Acceptance run: one PASS/FAIL line per criterion A1..A10.
//
//   acceptance [work_dir]
//
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "unnorm/asymptotics.hpp"
#include "unnorm/config.hpp"
#include "unnorm/experiments.hpp"

using namespace unnorm;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(const std::string& id, bool ok, const std::string& detail) {
  std::cout << id << ' ' << (ok ? "PASS" : "FAIL") << ' ' << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream ss;
  ss.precision(prec);
  ss << v;
  return ss.str();
}

ExperimentConfig load_cfg(const std::string& name) {
  return ExperimentConfig::from(KeyValueConfig::load(std::string(UNNORM_CONFIG_DIR) + "/" + name));
}

Dataset p3_data(Eigen::Index n, Eigen::Index m, std::uint64_t seed, double lambda) {
  const ExperimentConfig c;
  RngStream ry(seed, 0), rx(seed, 1);
  return Dataset::build(sample_truth_iid(c.truth, n, ry).points,
                        sample_proposal_iid(lambda, 3, m, rx), half_normal_proposal(lambda, 3));
}

Dataset oracle_data(const OracleModel& om, Eigen::Index n, Eigen::Index m, std::uint64_t seed) {
  RngStream ry(seed, 0), rx(seed, 1);
  return Dataset::build(sample_truth_iid(om.truth, n, ry).points,
                        sample_proposal_iid(4.0, 1, m, rx), half_normal_proposal(4.0, 1));
}

struct DerivErr {
  double grad = 0.0;
  double hess = 0.0;
};

DerivErr derivative_errors(const std::function<ObjectiveEval(const Vec&)>& f, const Vec& xi) {
  const ObjectiveEval e = f(xi);
  const Vec g = oracle::fd_gradient([&](const Vec& v) { return f(v).value; }, xi);
  const Mat h = oracle::fd_jacobian([&](const Vec& v) { return f(v).gradient; }, xi);
  return {oracle::rel_err(e.gradient, g), oracle::rel_err(e.hessian, h)};
}

// ---------------------------------------------------------------------------

void a1() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(11);
  std::normal_distribution<double> z(0.0, 0.15);
  DerivErr worst;
  auto track = [&](DerivErr e) {
    worst.grad = std::max(worst.grad, e.grad);
    worst.hess = std::max(worst.hess, e.hess);
  };
  const ModelSpec p3 = trunc_gauss_model(3);
  for (int rep = 0; rep < 5; ++rep) {
    const Dataset data = p3_data(40, 80, 500 + rep, 4.0);
    Vec xi(10);
    xi << *data.proposal_natural, 0.0;
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) += z(gen);
    track(derivative_errors(
        [&](const Vec& v) { return nce_loglik(ExtendedParam::from_stacked(v), data, p3); }, xi));
    track(derivative_errors(
        [&](const Vec& v) { return is_loglik(ExtendedParam::from_stacked(v), data, p3); }, xi));
  }
  const OracleModel om = oracle_1d_model(1.0, 2.0);
  const ModelSpec curved = oracle::curved_with_log_z();
  for (int rep = 0; rep < 5; ++rep) {
    const Dataset data = oracle_data(om, 50, 60, 600 + rep);
    const Vec xi = Eigen::Vector3d(0.5 + z(gen), -0.25 + 0.3 * z(gen), z(gen));
    const Vec xc = Eigen::Vector3d(0.4 + z(gen), std::log(0.3) + z(gen), z(gen));
    for (const ModelSpec* m : {&om.model, &curved}) {
      const Vec& x = m == &curved ? xc : xi;
      track(derivative_errors(
          [&](const Vec& v) { return poisson_loglik(ExtendedParam::from_stacked(v), data, *m); }, x));
      track(derivative_errors(
          [&](const Vec& v) { return nce_loglik(ExtendedParam::from_stacked(v), data, *m); }, x));
      track(derivative_errors(
          [&](const Vec& v) { return is_loglik(ExtendedParam::from_stacked(v), data, *m); }, x));
    }
  }
  const double secs = seconds_since(t0);
  report("A1", worst.grad <= 1e-6 && worst.hess <= 1e-4 && secs < 10.0,
         "gradient rel err " + fmt(worst.grad) + " (<= 1e-6), Hessian rel err " +
             fmt(worst.hess) + " (<= 1e-4), " + fmt(secs, 3) + " s (< 10)");
}

void a2() {
  const auto t0 = Clock::now();
  const Dataset data = p3_data(50, 50, 17, 4.0);
  const ModelSpec model = trunc_gauss_model(3);
  const Points all = (Points(3, 100) << data.observed, data.artificial).finished();
  Mat z(100, 10);
  z.leftCols(9) = trunc_gauss_suff_stat(all).transpose();
  z.col(9).setOnes();
  Vec label = Vec::Zero(100);
  label.head(50).setOnes();
  // n = m, so the log(n/m) offset vanishes.
  const Vec offset = -(Vec(100) << data.log_h_psi_observed, data.log_h_psi_artificial).finished();

  ExtendedParam xi = default_init(data, model);
  xi.theta(0) += 0.1;
  xi.nu = -0.3;
  Vec score;
  const double ll = oracle::logistic_loglik(z, label, offset, xi.stacked(), &score);
  const auto e = nce_loglik(xi, data, model);
  const double value_err = std::abs(e.value - ll) / std::max(1.0, std::abs(ll));
  const double grad_err = oracle::rel_err(e.gradient, score);

  const auto irls = oracle::irls(z, label, offset, default_init(data, model).stacked());
  const auto fitted = fit(ObjectiveKind::nce, data, model, default_init(data, model));
  const double fit_err = oracle::rel_err(fitted.xi_hat.stacked(), irls.beta);
  const double secs = seconds_since(t0);
  report("A2",
         value_err <= 1e-6 && grad_err <= 1e-6 && fit_err <= 1e-6 &&
             fitted.status == FitStatus::converged && secs < 5.0,
         "value " + fmt(value_err) + ", gradient " + fmt(grad_err) + ", xi-hat " + fmt(fit_err) +
             " (each <= 1e-6), " + fmt(secs, 3) + " s (< 5)");
}

void a3() {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> z(0.0, 0.2);
  double worst = 0.0;
  const ModelSpec model = trunc_gauss_model(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Dataset data = p3_data(30, 60, 100 + rep, 4.0);
    Vec theta = *data.proposal_natural;
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) += z(gen);
    // Mean importance weight, computed directly.
    const Vec lw = model.log_h(theta, data.artificial) - data.log_h_psi_artificial;
    const double mean_w = lw.array().exp().mean();
    const double nu = -std::log(mean_w);
    const auto at = is_loglik({theta, nu}, data, model);
    worst = std::max({worst, std::abs(profile_nu(theta, data, model) - nu),
                      std::abs(at.gradient(theta.size())),
                      std::abs(is_loglik_ratio(theta, data, model) - (at.value + 1.0))});
  }
  report("A3", worst <= 1e-10, "max deviation " + fmt(worst) + " over 20 instances (<= 1e-10)");
}

void a4() {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_cfg("theorem2.cfg");
  const auto s = summarize_theorem2(run_theorem2(cfg));
  double rel_at_max = std::nan("");
  std::int64_t used = 0;
  for (const auto& pm : s.per_m)
    if (pm.m == 100000) {
      rel_at_max = pm.mean_rel_err;
      used = pm.n_used;
    }
  const double secs = seconds_since(t0);
  report("A4", s.slope >= -1.15 && s.slope <= -0.85 && rel_at_max <= 0.25 && secs < 300.0,
         "slope " + fmt(s.slope) + " (in [-1.15, -0.85]), mean rel err at m=1e5 " +
             fmt(rel_at_max) + " (<= 0.25) over " + std::to_string(used) + " seeds, " +
             fmt(secs, 3) + " s");
}

void a5() {
  const auto t0 = Clock::now();
  const ExperimentConfig base;
  const auto pb = trunc_gauss_ideal_problem(base.truth);
  double worst_z = 0.0;
  for (double tau : {1.0, 5.0}) {
    MonteCarloOptions o;
    o.mc_size = 1000000;
    o.seed = 20240101;
    const auto st = estimate_variances(pb, tau, o);
    const double f = 1.0 + 1.0 / tau;
    for (auto kind : {VarianceKind::nce, VarianceKind::is}) {
      auto diff = [&](const VarianceEstimates& e) { return Mat(e.V(kind) - f * e.V_mle); };
      const Mat d = diff(st.estimate);
      const Mat se = st.bootstrap_se_matrix(diff);
      for (Eigen::Index i = 0; i < d.rows(); ++i)
        for (Eigen::Index j = i; j < d.cols(); ++j)
          if (se(i, j) > 0.0) worst_z = std::max(worst_z, std::abs(d(i, j)) / se(i, j));
    }
  }
  const double secs = seconds_since(t0);
  report("A5", worst_z <= 4.0 && secs < 300.0,
         "max |V - (1+1/tau) V_MLE| / SE " + fmt(worst_z) + " (<= 4) at tau 1, 5, " +
             fmt(secs, 3) + " s");
}

void a6() {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_cfg("asyvar.cfg");
  const auto cells = run_asyvar(cfg);
  double worst_gap = std::numeric_limits<double>::infinity();
  double worst_is = 0.0, worst_nce = 0.0;
  std::string where_gap, where_is, where_nce;
  for (const auto& c : cells) {
    const std::string at = "(tau " + fmt(c.tau) + ", lambda " + fmt(c.lambda) + ")";
    auto gap = [](const VarianceEstimates& e) { return loewner_gap(e.V_is, e.V_nce); };
    const double gz = gap(c.study.estimate) / c.study.bootstrap_se(gap);
    if (gz < worst_gap) {
      worst_gap = gz;
      where_gap = at;
    }
    auto d_is = [](const VarianceEstimates& e) { return (e.V_is - e.V_is_reduced).trace(); };
    auto d_nce = [](const VarianceEstimates& e) { return (e.V_nce - e.V_nce_reduced).trace(); };
    const double zi = std::abs(d_is(c.study.estimate)) / c.study.bootstrap_se(d_is);
    const double zn = std::abs(d_nce(c.study.estimate)) / c.study.bootstrap_se(d_nce);
    if (zi > worst_is) {
      worst_is = zi;
      where_is = at;
    }
    if (zn > worst_nce) {
      worst_nce = zn;
      where_nce = at;
    }
  }
  const double secs = seconds_since(t0);
  report("A6", worst_gap >= -4.0 && worst_is <= 3.0 && worst_nce <= 3.0 && secs < 900.0,
         "min gap/SE " + fmt(worst_gap) + " " + where_gap + " (>= -4); reduced vs sandwich trace " +
             "|z| IS " + fmt(worst_is) + " " + where_is + ", NCE " + fmt(worst_nce) + " " +
             where_nce + " (<= 3); " + std::to_string(cells.size()) + " cells, " + fmt(secs, 3) +
             " s");
}

const SummaryRow* find_row(const std::vector<SummaryRow>& rows, double tau, double lambda,
                           const std::string& est) {
  for (const auto& r : rows)
    if (r.tau == tau && r.lambda == lambda && r.estimator == est) return &r;
  return nullptr;
}

void a7_a8() {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_cfg("desk.cfg");
  const auto recs = run_replications(cfg);
  const double tr = mle_variance_trace(cfg);
  const double secs = seconds_since(t0);
  const auto mse = summarize_mse(recs, tr, cfg.n);
  const auto ex = summarize_existence(recs);

  // A7: every ratio reaches 1 within its interval, and the tau = 1 curve lies
  // above the tau = 20 curve at both ends of the lambda grid (up to overlap of
  // the two intervals; the strict order of the point estimates is reported).
  bool floor_ok = true;
  double min_upper = std::numeric_limits<double>::infinity();
  for (const auto& r : mse)
    if (r.estimator == "mcmle_over_nce") {
      const bool ok = std::isfinite(r.value) && r.ci_hi >= 1.0;
      floor_ok = floor_ok && ok;
      if (std::isfinite(r.ci_hi)) min_upper = std::min(min_upper, r.ci_hi);
    }
  bool dominance_ok = true;
  std::string dom;
  for (double lambda : {1.5, 20.0}) {
    const auto* lo = find_row(mse, 1.0, lambda, "mcmle_over_nce");
    const auto* hi = find_row(mse, 20.0, lambda, "mcmle_over_nce");
    const bool strict = lo && hi && lo->value >= hi->value;
    const bool ok = lo && hi && (strict || lo->ci_hi >= hi->ci_lo);
    dominance_ok = dominance_ok && ok;
    if (lo && hi)
      dom += " lambda " + fmt(lambda) + ": tau1 " + fmt(lo->value) + " [" + fmt(lo->ci_lo) + ", " +
             fmt(lo->ci_hi) + "] vs tau20 " + fmt(hi->value) + " [" + fmt(hi->ci_lo) + ", " +
             fmt(hi->ci_hi) + "]" + (strict ? "" : " (order of point estimates reversed)") + ";";
  }
  report("A7", floor_ok && dominance_ok && secs < 1800.0,
         "min ratio upper bound " + fmt(min_upper) + " (>= 1);" + dom + " " + fmt(secs, 3) + " s");

  // A8: existence fractions.
  const auto* nce = find_row(ex, 1.0, 1.5, "nce");
  const auto* is = find_row(ex, 1.0, 1.5, "mcmle");
  const auto* nce20 = find_row(ex, 20.0, 4.0, "nce");
  const auto* is20 = find_row(ex, 20.0, 4.0, "mcmle");
  const bool separated = nce && is && is->ci_hi < nce->ci_lo;
  const bool saturated = nce20 && is20 && nce20->value >= 0.99 && is20->value >= 0.99;
  report("A8", separated && saturated && secs < 900.0,
         nce && is && nce20 && is20
             ? "(tau 1, lambda 1.5) MC-MLE " + fmt(is->value) + " [" + fmt(is->ci_lo) + ", " +
                   fmt(is->ci_hi) + "] vs NCE " + fmt(nce->value) + " [" + fmt(nce->ci_lo) +
                   ", " + fmt(nce->ci_hi) + "]; (tau 20, lambda 4) NCE " + fmt(nce20->value) +
                   ", MC-MLE " + fmt(is20->value) + " (>= 0.99)"
             : std::string("missing summary rows"));
}

void a9() {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_cfg("consistency.cfg");
  const auto summary = summarize_consistency(run_consistency_mcmc(cfg));
  bool ok = true;
  std::string detail;
  for (auto kind : {ObjectiveKind::nce, ObjectiveKind::is})
    for (auto thin : cfg.thin_grid) {
      const std::string sampler = sampler_name(thin);
      std::vector<double> errs;
      for (auto m : cfg.m_grid)
        for (const auto& s : summary)
          if (s.regime == "fixed_n" && s.m == m && s.estimator == kind && s.sampler == sampler)
            errs.push_back(s.mean_err_to_mle);
      bool dec = errs.size() == cfg.m_grid.size();
      for (size_t i = 1; dec && i < errs.size(); ++i) dec = errs[i] < errs[i - 1];
      ok = ok && dec;
      detail += std::string(to_string(kind)) + "/" + sampler + ":";
      for (double e : errs) detail += " " + fmt(e, 3);
      detail += "; ";
    }
  const double secs = seconds_since(t0);
  report("A9", ok && secs < 600.0, detail + fmt(secs, 3) + " s");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void a10(const fs::path& work) {
  const std::string exe = UNNORM_EST_PATH;
  fs::create_directories(work);
  const fs::path cfg = work / "determinism.cfg";
  std::ofstream(cfg) << "n = 80\nreplications = 6\ntau_grid = 1, 5\nlambda_grid = 1.5, 10\n"
                        "m_grid = 500, 5000\nseed = 4242\nmc_size = 20000\nbatches = 20\n"
                        "bootstrap = 20\nthin_grid = 1, 10\n";
  const std::vector<std::string> jobs{"experiment mse-ratio", "experiment existence",
                                      "experiment theorem2", "experiment consistency-mcmc",
                                      "asyvar"};
  bool ok = true;
  size_t files = 0;
  std::string bad;
  for (size_t j = 0; j < jobs.size(); ++j) {
    std::vector<fs::path> dirs;
    for (int workers : {1, 2}) {
      const fs::path out = work / ("det_" + std::to_string(j) + "_" + std::to_string(workers));
      fs::remove_all(out);
      const std::string cmd = exe + " " + jobs[j] + " --config " + cfg.string() + " --out " +
                              out.string() + " --workers " + std::to_string(workers) +
                              " --deterministic";
      if (std::system(cmd.c_str()) != 0) {
        ok = false;
        bad += " [" + jobs[j] + " failed]";
      }
      dirs.push_back(out);
    }
    if (!fs::exists(dirs[0])) continue;
    for (const auto& entry : fs::directory_iterator(dirs[0])) {
      const fs::path other = dirs[1] / entry.path().filename();
      ++files;
      if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
        ok = false;
        bad += " " + jobs[j] + ":" + entry.path().filename().string();
      }
    }
  }
  report("A10", ok && files > 0,
         std::to_string(files) + " files compared across two runs (1 and 2 workers)" +
             (bad.empty() ? std::string(", all byte-identical") : ", differing:" + bad));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "unnorm_acceptance";
  struct Step {
    const char* id;
    std::function<void()> run;
  };
  const std::vector<Step> steps{{"A1", a1},       {"A2", a2}, {"A3", a3}, {"A4", a4},
                                {"A5", a5},       {"A6", a6}, {"A7/A8", a7_a8},
                                {"A9", a9},       {"A10", [&] { a10(work); }}};
  for (const auto& s : steps) {
    try {
      s.run();
    } catch (const std::exception& e) {
      report(s.id, false, std::string("error: ") + e.what());
    }
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
