#pragma once

// Replication harness: the truncated-Gaussian MSE / existence study, the
// fixed-n convergence study of NCE towards MC-MLE, and consistency with
// Metropolis-generated artificial points.
//
// Common random numbers: within a replicate every grid point and both
// estimators share one observed sample and one stream of standard
// half-normals, rescaled by sqrt(lambda) and truncated to the first m columns.
// Results depend only on (seed, replicate), never on the worker count.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "unnorm/asymptotics.hpp"
#include "unnorm/config.hpp"
#include "unnorm/csv.hpp"
#include "unnorm/optim.hpp"
#include "unnorm/sampling.hpp"
#include "unnorm/stats.hpp"
#include "unnorm/truncated_gaussian.hpp"

namespace unnorm {

enum class ExperimentMode { mse_ratio, existence, theorem2, consistency_mcmc };

inline std::string_view to_string(ExperimentMode m) {
  switch (m) {
    case ExperimentMode::mse_ratio: return "mse-ratio";
    case ExperimentMode::existence: return "existence";
    case ExperimentMode::theorem2: return "theorem2";
    case ExperimentMode::consistency_mcmc: return "consistency-mcmc";
  }
  return "?";
}

inline ExperimentMode parse_mode(const std::string& s) {
  for (auto m : {ExperimentMode::mse_ratio, ExperimentMode::existence, ExperimentMode::theorem2,
                 ExperimentMode::consistency_mcmc})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown experiment mode: " + s);
}

/// Role coordinates of the random streams.
enum StreamRole : std::uint64_t { observed_role = 0, artificial_role = 1, chain_role = 2 };

struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::mse_ratio;
  std::int64_t n = 300;
  std::vector<double> tau_grid{1.0, 5.0, 20.0};
  std::vector<double> lambda_grid{1.5, 4.0, 10.0, 20.0};
  std::int64_t replications = 200;
  std::uint64_t seed = 1;
  TruncGaussParams truth{Eigen::Vector3d(1.0, -1.0, 0.5),
                         (Mat(3, 3) << 1.0, 0.5, 1.0, 0.5, 1.5, 0.3, 1.0, 0.3, 2.0).finished()};
  /// "half-normal" or "truth" (psi = theta*).
  std::string proposal = "half-normal";
  /// Monte Carlo size for the MLE variance that normalises the MSE.
  std::int64_t mc_size = 1000000;
  /// Batches and bootstrap resamples for Monte Carlo variance estimates.
  std::int64_t batches = 500;
  std::int64_t bootstrap = 200;

  // One-dimensional oracle studies.
  std::vector<std::int64_t> m_grid{1000, 10000, 100000};
  double oracle_mu = 1.0;
  double oracle_sigma2 = 2.0;
  double proposal_lambda = 4.0;
  /// Random-walk step; <= 0 selects sqrt(proposal_lambda).
  double mcmc_step = 0.0;
  std::vector<std::int64_t> thin_grid{1, 10};

  SolverOptions solver;
  int workers = 1;
  bool deterministic = false;

  void validate() const {
    if (n < 1) throw ConfigError("n must be >= 1");
    if (replications < 2) throw ConfigError("replications must be >= 2");
    if (tau_grid.empty() || lambda_grid.empty() || m_grid.empty())
      throw ConfigError("grids must be non-empty");
    for (double t : tau_grid)
      if (!(t > 0.0)) throw ConfigError("tau values must be > 0");
    for (double l : lambda_grid)
      if (!(l > 0.0)) throw ConfigError("lambda values must be > 0");
    for (auto m : m_grid)
      if (m < 1) throw ConfigError("m values must be >= 1");
    for (auto t : thin_grid)
      if (t < 1) throw ConfigError("thin values must be >= 1");
    if (proposal != "half-normal" && proposal != "truth")
      throw ConfigError("proposal must be half-normal or truth");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (mc_size < 2 || batches < 2 || batches > mc_size || bootstrap < 0)
      throw ConfigError("need mc_size >= batches >= 2 and bootstrap >= 0");
    truth.validate();
  }

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k{
        "mode",          "n",           "tau_grid",  "lambda_grid",    "replications",
        "seed",          "truth_mu",    "truth_sigma", "proposal",     "mc_size",
        "m_grid",        "oracle_mu",   "oracle_sigma2", "proposal_lambda", "mcmc_step",
        "thin_grid",     "grad_tol",    "max_iters", "workers",   "batches",
        "bootstrap"};
    return k;
  }

  static ExperimentConfig from(const KeyValueConfig& kv) {
    kv.require_known(keys());
    ExperimentConfig c;
    if (kv.has("mode")) c.mode = parse_mode(kv.get_string("mode", ""));
    c.n = kv.get_int("n", c.n);
    c.tau_grid = kv.get_doubles("tau_grid", c.tau_grid);
    c.lambda_grid = kv.get_doubles("lambda_grid", c.lambda_grid);
    c.replications = kv.get_int("replications", c.replications);
    c.seed = kv.get_u64("seed", c.seed);
    if (kv.has("truth_mu") || kv.has("truth_sigma")) {
      const auto mu = kv.get_doubles("truth_mu", {});
      const auto sig = kv.get_doubles("truth_sigma", {});
      const size_t p = mu.size();
      if (p == 0 || sig.size() != p * p)
        throw ConfigError("truth_mu needs p values and truth_sigma p*p values (row-major)");
      c.truth.mu = Eigen::Map<const Vec>(mu.data(), static_cast<Eigen::Index>(p));
      c.truth.sigma = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                     Eigen::RowMajor>>(
          sig.data(), static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    }
    c.proposal = kv.get_string("proposal", c.proposal);
    c.mc_size = kv.get_int("mc_size", c.mc_size);
    c.batches = kv.get_int("batches", c.batches);
    c.bootstrap = kv.get_int("bootstrap", c.bootstrap);
    c.m_grid = kv.get_ints("m_grid", c.m_grid);
    c.oracle_mu = kv.get_double("oracle_mu", c.oracle_mu);
    c.oracle_sigma2 = kv.get_double("oracle_sigma2", c.oracle_sigma2);
    c.proposal_lambda = kv.get_double("proposal_lambda", c.proposal_lambda);
    c.mcmc_step = kv.get_double("mcmc_step", c.mcmc_step);
    c.thin_grid = kv.get_ints("thin_grid", c.thin_grid);
    c.solver.grad_tol = kv.get_double("grad_tol", c.solver.grad_tol);
    c.solver.max_iters = static_cast<int>(kv.get_int("max_iters", c.solver.max_iters));
    c.workers = static_cast<int>(kv.get_int("workers", c.workers));
    c.validate();
    return c;
  }
};

/// Runs task(i) for i in [0, count) on `workers` threads. Each task writes only
/// its own slot of the caller's result vector. The first exception is
/// rethrown after all workers stop.
inline void parallel_for(size_t count, int workers, const std::function<void(size_t)>& task) {
  const size_t k = std::min<size_t>(std::max(workers, 1), std::max<size_t>(count, 1));
  if (k <= 1) {
    for (size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(k);
  for (size_t w = 0; w < k; ++w) {
    pool.emplace_back([&] {
      for (size_t i = next++; i < count && !failed; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Truncated-Gaussian replication study

struct ReplicationRecord {
  double tau = 0.0;
  double lambda = 0.0;
  std::int64_t replicate = 0;
  ObjectiveKind estimator = ObjectiveKind::nce;
  FitStatus status = FitStatus::max_iters;
  bool in_domain = false;
  double sqerr_theta = 0.0;
  double sqerr_nu = 0.0;
  double seconds = 0.0;

  /// Converged with theta-hat in Theta.
  bool exists() const { return status == FitStatus::converged && in_domain; }
};

inline std::int64_t artificial_size(double tau, std::int64_t n) {
  return std::max<std::int64_t>(1, std::llround(tau * static_cast<double>(n)));
}

/// Every (tau, lambda, replicate, estimator) fit, ordered by replicate, then
/// tau, lambda, estimator. With proposal=truth the lambda grid is replaced by
/// the single value 0.
inline std::vector<ReplicationRecord> run_replications(const ExperimentConfig& cfg) {
  cfg.validate();
  const int p = cfg.truth.p();
  const bool ideal = cfg.proposal == "truth";
  const std::vector<double> lambdas = ideal ? std::vector<double>{0.0} : cfg.lambda_grid;
  const ModelSpec model = trunc_gauss_model(p);
  const Vec theta_star = natural_from_moment(cfg.truth);
  const double log_z_star = trunc_gauss_log_Z(cfg.truth);

  std::vector<Proposal> proposals;
  std::vector<double> nu_star;
  for (double lam : lambdas) {
    proposals.push_back(ideal ? trunc_gauss_proposal(cfg.truth) : half_normal_proposal(lam, p));
    nu_star.push_back(ideal ? 0.0 : *proposals.back().log_Z - log_z_star);
  }
  std::int64_t m_max = 1;
  for (double t : cfg.tau_grid) m_max = std::max(m_max, artificial_size(t, cfg.n));

  const size_t per_rep = cfg.tau_grid.size() * lambdas.size() * 2;
  std::vector<ReplicationRecord> out(static_cast<size_t>(cfg.replications) * per_rep);

  parallel_for(static_cast<size_t>(cfg.replications), cfg.workers, [&](size_t r) {
    const auto rep = static_cast<std::uint64_t>(r);
    RngStream y_rng(cfg.seed, stream_key({rep, observed_role}));
    RngStream x_rng(cfg.seed, stream_key({rep, artificial_role}));
    const Points y = sample_truth_iid(cfg.truth, cfg.n, y_rng).points;
    const Points z = ideal ? sample_truth_iid(cfg.truth, m_max, x_rng).points
                           : sample_standard_half_normal(p, m_max, x_rng);
    size_t slot = r * per_rep;
    for (double tau : cfg.tau_grid) {
      const Eigen::Index m = artificial_size(tau, cfg.n);
      for (size_t li = 0; li < lambdas.size(); ++li) {
        const Points x = ideal ? Points(z.leftCols(m)) : Points(std::sqrt(lambdas[li]) * z.leftCols(m));
        const Dataset data = Dataset::build(y, x, proposals[li]);
        for (auto kind : {ObjectiveKind::nce, ObjectiveKind::is}) {
          const auto t0 = std::chrono::steady_clock::now();
          const FitResult f = fit(kind, data, model, default_init(data, model), cfg.solver);
          const auto t1 = std::chrono::steady_clock::now();
          ReplicationRecord& rec = out[slot++];
          rec.tau = tau;
          rec.lambda = lambdas[li];
          rec.replicate = static_cast<std::int64_t>(r);
          rec.estimator = kind;
          rec.status = f.status;
          rec.in_domain = f.in_domain;
          rec.sqerr_theta = (f.xi_hat.theta - theta_star).squaredNorm();
          rec.sqerr_nu = (f.xi_hat.nu - nu_star[li]) * (f.xi_hat.nu - nu_star[li]);
          rec.seconds =
              cfg.deterministic ? 0.0 : std::chrono::duration<double>(t1 - t0).count();
        }
      }
    }
  });
  return out;
}

/// tr of the theta-block of V_MLE, estimated with psi = theta*.
inline double mle_variance_trace(const ExperimentConfig& cfg) {
  MonteCarloOptions o;
  o.mc_size = cfg.mc_size;
  o.batches = cfg.batches;
  o.bootstrap_resamples = 0;
  o.seed = cfg.seed ^ 0x5eedULL;
  o.truth_only = true;
  const auto st = estimate_variances(trunc_gauss_ideal_problem(cfg.truth), 1.0, o);
  const Eigen::Index d = st.estimate.V_mle.rows() - 1;
  return st.estimate.V_mle.topLeftCorner(d, d).trace();
}

struct SummaryRow {
  double tau = 0.0;
  double lambda = 0.0;
  std::string estimator;
  double value = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::int64_t n_used = 0;
};

namespace detail {

template <class F>
void for_each_cell(const std::vector<ReplicationRecord>& recs, F&& f) {
  // Records arrive in replicate-major order; cells are keyed by (tau, lambda).
  std::vector<std::pair<double, double>> cells;
  for (const auto& r : recs) {
    const std::pair<double, double> key{r.tau, r.lambda};
    if (std::find(cells.begin(), cells.end(), key) == cells.end()) cells.push_back(key);
  }
  for (const auto& [tau, lambda] : cells) {
    std::vector<const ReplicationRecord*> nce, is;
    for (const auto& r : recs)
      if (r.tau == tau && r.lambda == lambda)
        (r.estimator == ObjectiveKind::nce ? nce : is).push_back(&r);
    f(tau, lambda, nce, is);
  }
}

}  // namespace detail

/// Per cell: MSE / (tr V_MLE / n) for each estimator over existing fits with a
/// normal-theory interval, and the MC-MLE / NCE MSE ratio over replicates
/// where both exist with a delta-method interval.
inline std::vector<SummaryRow> summarize_mse(const std::vector<ReplicationRecord>& recs,
                                             double mle_trace, std::int64_t n) {
  const double denom = mle_trace / static_cast<double>(n);
  const double z = normal_quantile(0.975);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<SummaryRow> rows;
  detail::for_each_cell(recs, [&](double tau, double lambda, const auto& nce, const auto& is) {
    for (const auto* group : {&nce, &is}) {
      std::vector<double> errs;
      for (const auto* r : *group)
        if (r->exists()) errs.push_back(r->sqerr_theta);
      SummaryRow row{tau, lambda, group == &nce ? "nce" : "mcmle", nan, nan, nan,
                     static_cast<std::int64_t>(errs.size())};
      if (!errs.empty()) {
        const double mean = sample_mean(errs);
        const double se =
            errs.size() > 1 ? std::sqrt(sample_variance(errs) / static_cast<double>(errs.size()))
                            : nan;
        row.value = mean / denom;
        row.ci_lo = (mean - z * se) / denom;
        row.ci_hi = (mean + z * se) / denom;
      }
      rows.push_back(row);
    }
    std::vector<double> a, b;
    for (size_t i = 0; i < std::min(nce.size(), is.size()); ++i)
      if (nce[i]->exists() && is[i]->exists()) {
        a.push_back(is[i]->sqerr_theta);
        b.push_back(nce[i]->sqerr_theta);
      }
    SummaryRow row{tau, lambda, "mcmle_over_nce", nan, nan, nan,
                   static_cast<std::int64_t>(a.size())};
    if (a.size() > 1) {
      const double k = static_cast<double>(a.size());
      const double ma = sample_mean(a), mb = sample_mean(b);
      const double var = (sample_variance(a) / (mb * mb) +
                          ma * ma * sample_variance(b) / (mb * mb * mb * mb) -
                          2.0 * ma * sample_covariance(a, b) / (mb * mb * mb)) /
                         k;
      const double se = std::sqrt(std::max(var, 0.0));
      row.value = ma / mb;
      row.ci_lo = row.value - z * se;
      row.ci_hi = row.value + z * se;
    }
    rows.push_back(row);
  });
  return rows;
}

/// Per cell and estimator: fraction of replicates whose fit exists, with a
/// Wilson interval.
inline std::vector<SummaryRow> summarize_existence(const std::vector<ReplicationRecord>& recs) {
  std::vector<SummaryRow> rows;
  detail::for_each_cell(recs, [&](double tau, double lambda, const auto& nce, const auto& is) {
    for (const auto* group : {&nce, &is}) {
      size_t ok = 0;
      for (const auto* r : *group) ok += r->exists() ? 1 : 0;
      const auto ci = wilson_interval(ok, group->size());
      rows.push_back({tau, lambda, group == &nce ? "nce" : "mcmle",
                      static_cast<double>(ok) / static_cast<double>(group->size()), ci.lo, ci.hi,
                      static_cast<std::int64_t>(group->size())});
    }
  });
  return rows;
}

inline void write_records(const std::string& path, ExperimentMode mode,
                          const std::vector<ReplicationRecord>& recs) {
  CsvWriter w(path, {"mode", "tau", "lambda", "replicate", "estimator", "in_domain",
                     "sqerr_theta", "sqerr_nu", "seconds"});
  for (const auto& r : recs)
    w.row({std::string(to_string(mode)), format_double(r.tau), format_double(r.lambda),
           std::to_string(r.replicate), std::string(to_string(r.estimator)),
           r.exists() ? "1" : "0", format_double(r.sqerr_theta), format_double(r.sqerr_nu),
           format_double(r.seconds)});
}

inline void write_summary(const std::string& path, const std::vector<SummaryRow>& rows) {
  CsvWriter w(path, {"tau", "lambda", "estimator", "value", "ci_lo", "ci_hi", "n_used"});
  for (const auto& r : rows)
    w.row({format_double(r.tau), format_double(r.lambda), r.estimator, format_double(r.value),
           format_double(r.ci_lo), format_double(r.ci_hi), std::to_string(r.n_used)});
}

// ---------------------------------------------------------------------------
// Fixed n, growing m on the one-dimensional oracle

struct Theorem2Row {
  std::int64_t m = 0;
  std::int64_t replicate = 0;
  /// xi_NCE - xi_IS, m times it, and the predicted limit of the latter.
  Vec diff;
  Vec limit;
  bool ok = false;
};

inline OracleModel theorem2_oracle(const ExperimentConfig& cfg) {
  return oracle_1d_model(cfg.oracle_mu, cfg.oracle_sigma2);
}

inline std::vector<Theorem2Row> run_theorem2(const ExperimentConfig& cfg) {
  cfg.validate();
  const OracleModel oracle = theorem2_oracle(cfg);
  const Proposal proposal = half_normal_proposal(cfg.proposal_lambda, 1);
  const std::int64_t m_max = *std::max_element(cfg.m_grid.begin(), cfg.m_grid.end());
  const size_t per_rep = cfg.m_grid.size();
  std::vector<Theorem2Row> out(static_cast<size_t>(cfg.replications) * per_rep);

  parallel_for(static_cast<size_t>(cfg.replications), cfg.workers, [&](size_t r) {
    const auto rep = static_cast<std::uint64_t>(r);
    RngStream y_rng(cfg.seed, stream_key({rep, observed_role}));
    RngStream x_rng(cfg.seed, stream_key({rep, artificial_role}));
    const Points y = sample_truth_iid(oracle.truth, cfg.n, y_rng).points;
    const Points z = sample_standard_half_normal(1, m_max, x_rng);

    const ExtendedParam init{*proposal.natural, 0.0};
    const FitResult mle = fit_poisson(y, oracle.model, proposal, init, cfg.solver);
    Vec limit;
    bool have_limit = mle.exists();
    if (have_limit) {
      try {
        limit = theorem2_limit(mle.xi_hat, y, oracle.model, proposal,
                               squared_weight_moment_quadrature(mle.xi_hat, oracle.model,
                                                                proposal))
                    .limit;
      } catch (const DomainError&) {
        have_limit = false;
      }
    }
    for (size_t k = 0; k < per_rep; ++k) {
      const std::int64_t m = cfg.m_grid[k];
      const Dataset data =
          Dataset::build(y, std::sqrt(cfg.proposal_lambda) * z.leftCols(m), proposal);
      const FitResult nce = fit(ObjectiveKind::nce, data, oracle.model, init, cfg.solver);
      const FitResult is = fit(ObjectiveKind::is, data, oracle.model, init, cfg.solver);
      Theorem2Row& row = out[r * per_rep + k];
      row.m = m;
      row.replicate = static_cast<std::int64_t>(r);
      row.diff = nce.xi_hat.stacked() - is.xi_hat.stacked();
      row.limit = have_limit ? limit : Vec::Constant(row.diff.size(), std::nan(""));
      row.ok = have_limit && nce.exists() && is.exists();
    }
  });
  return out;
}

struct Theorem2Summary {
  struct PerM {
    std::int64_t m = 0;
    double mean_norm_diff = 0.0;
    /// Mean over replicates of |m diff - limit| / |limit|.
    double mean_rel_err = 0.0;
    std::int64_t n_used = 0;
  };
  std::vector<PerM> per_m;
  /// OLS slope of log |diff| on log m over all usable (replicate, m) pairs.
  double slope = 0.0;
};

inline Theorem2Summary summarize_theorem2(const std::vector<Theorem2Row>& rows) {
  Theorem2Summary s;
  std::vector<std::int64_t> ms;
  for (const auto& r : rows)
    if (std::find(ms.begin(), ms.end(), r.m) == ms.end()) ms.push_back(r.m);
  std::vector<double> lx, ly;
  for (auto m : ms) {
    std::vector<double> norms, rel;
    for (const auto& r : rows) {
      if (r.m != m || !r.ok) continue;
      const double nd = r.diff.norm();
      norms.push_back(nd);
      rel.push_back((static_cast<double>(m) * r.diff - r.limit).norm() / r.limit.norm());
      lx.push_back(std::log(static_cast<double>(m)));
      ly.push_back(std::log(nd));
    }
    Theorem2Summary::PerM pm;
    pm.m = m;
    pm.n_used = static_cast<std::int64_t>(norms.size());
    pm.mean_norm_diff = norms.empty() ? std::nan("") : sample_mean(norms);
    pm.mean_rel_err = rel.empty() ? std::nan("") : sample_mean(rel);
    s.per_m.push_back(pm);
  }
  s.slope = lx.size() >= 2 ? ols_slope(lx, ly) : std::nan("");
  return s;
}

inline void write_theorem2(const std::string& dir, const std::vector<Theorem2Row>& rows) {
  CsvWriter w(dir + "/theorem2.csv",
              {"m", "replicate", "component", "diff", "scaled_diff", "limit", "ok"});
  for (const auto& r : rows)
    for (Eigen::Index c = 0; c < r.diff.size(); ++c)
      w.row({std::to_string(r.m), std::to_string(r.replicate), std::to_string(c),
             format_double(r.diff(c)), format_double(static_cast<double>(r.m) * r.diff(c)),
             format_double(r.limit(c)), r.ok ? "1" : "0"});
  const auto s = summarize_theorem2(rows);
  CsvWriter ws(dir + "/summary_theorem2.csv",
               {"m", "mean_norm_diff", "mean_rel_err", "n_used", "slope"});
  for (const auto& pm : s.per_m)
    ws.row({std::to_string(pm.m), format_double(pm.mean_norm_diff),
            format_double(pm.mean_rel_err), std::to_string(pm.n_used), format_double(s.slope)});
}

// ---------------------------------------------------------------------------
// Consistency with Metropolis artificial points

struct ConsistencyRow {
  std::string regime;  // fixed_n or growing_n
  std::int64_t m = 0;
  std::int64_t replicate = 0;
  ObjectiveKind estimator = ObjectiveKind::nce;
  std::string sampler;  // iid, mcmc, mcmc_thin<k>
  double err_to_mle = 0.0;
  double err_to_truth = 0.0;
  bool ok = false;
};

inline std::string sampler_name(std::int64_t thin) {
  return thin == 1 ? "mcmc" : "mcmc_thin" + std::to_string(thin);
}

/// fixed_n: n observations, m artificial points, errors against the exact MLE
/// of those n observations. growing_n: n = m, errors against the truth.
inline std::vector<ConsistencyRow> run_consistency_mcmc(const ExperimentConfig& cfg) {
  cfg.validate();
  const OracleModel oracle = theorem2_oracle(cfg);
  const Proposal proposal = half_normal_proposal(cfg.proposal_lambda, 1);
  const double step = cfg.mcmc_step > 0.0 ? cfg.mcmc_step : std::sqrt(cfg.proposal_lambda);
  const std::int64_t m_max = *std::max_element(cfg.m_grid.begin(), cfg.m_grid.end());
  const ExtendedParam init{*proposal.natural, 0.0};

  std::vector<std::string> samplers{"iid"};
  for (auto t : cfg.thin_grid) samplers.push_back(sampler_name(t));
  const size_t per_rep = 2 * cfg.m_grid.size() * samplers.size() * 2;
  std::vector<ConsistencyRow> out(static_cast<size_t>(cfg.replications) * per_rep);

  parallel_for(static_cast<size_t>(cfg.replications), cfg.workers, [&](size_t r) {
    const auto rep = static_cast<std::uint64_t>(r);
    RngStream y_rng(cfg.seed, stream_key({rep, observed_role}));
    RngStream x_rng(cfg.seed, stream_key({rep, artificial_role}));
    const Points y_all = sample_truth_iid(oracle.truth, std::max(cfg.n, m_max), y_rng).points;
    std::vector<Points> artificial{sample_proposal_iid(cfg.proposal_lambda, 1, m_max, x_rng)};
    for (auto t : cfg.thin_grid) {
      RngStream c_rng(cfg.seed, stream_key({rep, chain_role, static_cast<std::uint64_t>(t)}));
      artificial.push_back(
          rw_metropolis_psi(cfg.proposal_lambda, 1, step, m_max, c_rng, static_cast<int>(t))
              .points);
    }
    size_t slot = r * per_rep;
    for (const std::string regime : {"fixed_n", "growing_n"}) {
      for (const std::int64_t m : cfg.m_grid) {
        const Points y = y_all.leftCols(regime == "fixed_n" ? cfg.n : m);
        const FitResult mle = fit_poisson(y, oracle.model, proposal, init, cfg.solver);
        for (size_t s = 0; s < samplers.size(); ++s) {
          const Dataset data = Dataset::build(y, artificial[s].leftCols(m), proposal);
          for (auto kind : {ObjectiveKind::nce, ObjectiveKind::is}) {
            const FitResult f = fit(kind, data, oracle.model, init, cfg.solver);
            ConsistencyRow& row = out[slot++];
            row.regime = regime;
            row.m = m;
            row.replicate = static_cast<std::int64_t>(r);
            row.estimator = kind;
            row.sampler = samplers[s];
            row.err_to_mle = (f.xi_hat.theta - mle.xi_hat.theta).norm();
            row.err_to_truth = (f.xi_hat.theta - oracle.theta_star).norm();
            row.ok = f.exists() && mle.exists();
          }
        }
      }
    }
  });
  return out;
}

struct ConsistencySummaryRow {
  std::string regime;
  std::int64_t m = 0;
  ObjectiveKind estimator = ObjectiveKind::nce;
  std::string sampler;
  double mean_err_to_mle = 0.0;
  double mean_err_to_truth = 0.0;
  std::int64_t n_used = 0;
};

inline std::vector<ConsistencySummaryRow> summarize_consistency(
    const std::vector<ConsistencyRow>& rows) {
  std::vector<ConsistencySummaryRow> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const ConsistencySummaryRow& s) {
      return s.regime == r.regime && s.m == r.m && s.estimator == r.estimator &&
             s.sampler == r.sampler;
    });
    if (it == out.end()) {
      out.push_back({r.regime, r.m, r.estimator, r.sampler, 0.0, 0.0, 0});
      it = out.end() - 1;
    }
    if (!r.ok) continue;
    it->mean_err_to_mle += r.err_to_mle;
    it->mean_err_to_truth += r.err_to_truth;
    ++it->n_used;
  }
  for (auto& s : out) {
    const double k = s.n_used > 0 ? static_cast<double>(s.n_used) : std::nan("");
    s.mean_err_to_mle /= k;
    s.mean_err_to_truth /= k;
  }
  return out;
}

inline void write_consistency(const std::string& dir, const std::vector<ConsistencyRow>& rows) {
  CsvWriter w(dir + "/consistency_mcmc.csv", {"regime", "m", "replicate", "estimator", "sampler",
                                              "err_to_mle", "err_to_truth", "ok"});
  for (const auto& r : rows)
    w.row({r.regime, std::to_string(r.m), std::to_string(r.replicate),
           std::string(to_string(r.estimator)), r.sampler, format_double(r.err_to_mle),
           format_double(r.err_to_truth), r.ok ? "1" : "0"});
  CsvWriter ws(dir + "/summary_consistency_mcmc.csv",
               {"regime", "m", "estimator", "sampler", "mean_err_to_mle", "mean_err_to_truth",
                "n_used"});
  for (const auto& s : summarize_consistency(rows))
    ws.row({s.regime, std::to_string(s.m), std::string(to_string(s.estimator)), s.sampler,
            format_double(s.mean_err_to_mle), format_double(s.mean_err_to_truth),
            std::to_string(s.n_used)});
}

// ---------------------------------------------------------------------------
// Variance grid

struct AsyvarCell {
  double tau = 0.0;
  double lambda = 0.0;
  VarianceStudy study;
};

/// Monte Carlo variance study at every (tau, lambda). Truth and proposal draws
/// are shared across tau for a given lambda.
inline std::vector<AsyvarCell> run_asyvar(const ExperimentConfig& cfg) {
  cfg.validate();
  const bool ideal = cfg.proposal == "truth";
  const std::vector<double> lambdas = ideal ? std::vector<double>{0.0} : cfg.lambda_grid;
  std::vector<AsyvarCell> out(lambdas.size() * cfg.tau_grid.size());
  parallel_for(lambdas.size(), cfg.workers, [&](size_t li) {
    const VarianceProblem pb = ideal ? trunc_gauss_ideal_problem(cfg.truth)
                                     : trunc_gauss_problem(cfg.truth, lambdas[li]);
    const auto lkey = static_cast<std::uint64_t>(li);
    RngStream y_rng(cfg.seed, stream_key({lkey, observed_role}));
    RngStream x_rng(cfg.seed, stream_key({lkey, artificial_role}));
    const Points y = pb.sample_truth(cfg.mc_size, y_rng);
    const Points x = pb.sample_proposal(cfg.mc_size, x_rng);
    for (size_t ti = 0; ti < cfg.tau_grid.size(); ++ti) {
      RngStream b_rng(cfg.seed, stream_key({lkey, static_cast<std::uint64_t>(ti), 3}));
      AsyvarCell& cell = out[li * cfg.tau_grid.size() + ti];
      cell.tau = cfg.tau_grid[ti];
      cell.lambda = lambdas[li];
      cell.study = study_from_batches(moment_batches(pb, y, x, cell.tau, cfg.batches),
                                      static_cast<int>(cfg.bootstrap), b_rng);
      cell.study.n_mc = cfg.mc_size;
      cell.study.seed = cfg.seed;
    }
  });
  return out;
}

inline void write_asyvar(const std::string& dir, const std::vector<AsyvarCell>& cells) {
  CsvWriter wm(dir + "/asyvar_matrices.csv",
               {"tau", "lambda", "kind", "row", "col", "value", "se"});
  CsvWriter wg(dir + "/asyvar_gaps.csv",
               {"tau", "lambda", "loewner_gap", "gap_se", "jensen_gap", "jensen_gap_se"});
  for (const auto& c : cells) {
    for (auto kind : {VarianceKind::nce, VarianceKind::is, VarianceKind::mle}) {
      const VarianceReport rep = c.study.report(kind);
      for (Eigen::Index i = 0; i < rep.V.rows(); ++i)
        for (Eigen::Index j = 0; j < rep.V.cols(); ++j)
          wm.row({format_double(c.tau), format_double(c.lambda), std::string(to_string(kind)),
                  std::to_string(i), std::to_string(j), format_double(rep.V(i, j)),
                  format_double(rep.V_se(i, j))});
    }
    auto gap = [](const VarianceEstimates& e) { return loewner_gap(e.V_is, e.V_nce); };
    auto jensen = [](const VarianceEstimates& e) { return min_eigenvalue(e.jensen_gap); };
    wg.row({format_double(c.tau), format_double(c.lambda), format_double(gap(c.study.estimate)),
            format_double(c.study.bootstrap_se(gap)), format_double(jensen(c.study.estimate)),
            format_double(c.study.bootstrap_se(jensen))});
  }
}

// ---------------------------------------------------------------------------
// Driver

inline void write_manifest(const std::string& dir, const ExperimentConfig& cfg,
                           const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  std::ofstream out(dir + "/manifest.txt");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  out << "mode = " << to_string(cfg.mode) << '\n';
  out << "seed = " << cfg.seed << '\n';
  out << "n = " << cfg.n << '\n';
  out << "replications = " << cfg.replications << '\n';
  for (const auto& [k, v] : extra) out << k << " = " << v << '\n';
  if (!cfg.deterministic) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    out << "timestamp_unix = " << std::chrono::duration_cast<std::chrono::seconds>(now).count()
        << '\n';
  }
}

/// Runs cfg.mode and writes its CSVs into `dir` (created if missing).
inline void run_experiment(const ExperimentConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  switch (cfg.mode) {
    case ExperimentMode::mse_ratio: {
      const auto recs = run_replications(cfg);
      const double tr = mle_variance_trace(cfg);
      write_records(dir + "/records.csv", cfg.mode, recs);
      write_summary(dir + "/summary_mse.csv", summarize_mse(recs, tr, cfg.n));
      write_summary(dir + "/summary_existence.csv", summarize_existence(recs));
      write_manifest(dir, cfg, {{"mle_variance_trace", format_double(tr)}});
      break;
    }
    case ExperimentMode::existence: {
      const auto recs = run_replications(cfg);
      write_records(dir + "/records.csv", cfg.mode, recs);
      write_summary(dir + "/summary_existence.csv", summarize_existence(recs));
      write_manifest(dir, cfg);
      break;
    }
    case ExperimentMode::theorem2:
      write_theorem2(dir, run_theorem2(cfg));
      write_manifest(dir, cfg);
      break;
    case ExperimentMode::consistency_mcmc:
      write_consistency(dir, run_consistency_mcmc(cfg));
      write_manifest(dir, cfg);
      break;
  }
}

}  // namespace unnorm
