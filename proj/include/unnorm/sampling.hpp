#pragma once

// Data generation: half-normal proposal draws, exact rejection sampling of the
// truncated multivariate normal, and a random-walk Metropolis chain targeting
// the proposal.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "unnorm/linalg.hpp"
#include "unnorm/stats.hpp"
#include "unnorm/truncated_gaussian.hpp"

namespace unnorm {

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives a stream id from a tuple of integer coordinates.
constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

/// A reproducible random stream: the engine state is a function of
/// (seed, stream_id) only.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32), 0x51ed270bU};
    engine_.seed(seq);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t index(std::uint64_t bound) {
    return std::uniform_int_distribution<std::uint64_t>(0, bound - 1)(engine_);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
  std::uniform_real_distribution<double> uniform_;
};

/// |Z| for Z ~ N(0, I_p): p x count.
inline Points sample_standard_half_normal(int p, Eigen::Index count, RngStream& rng) {
  Points z(p, count);
  for (Eigen::Index j = 0; j < count; ++j)
    for (int i = 0; i < p; ++i) z(i, j) = std::abs(rng.normal());
  return z;
}

/// IID draws from N(0, lambda I_p) truncated to (0, inf)^p.
inline Points sample_proposal_iid(double lambda, int p, Eigen::Index count, RngStream& rng) {
  if (!(lambda > 0.0)) throw DomainError("sample_proposal_iid: lambda must be > 0");
  if (count < 1) throw std::invalid_argument("sample_proposal_iid: count must be >= 1");
  return std::sqrt(lambda) * sample_standard_half_normal(p, count, rng);
}

struct TruthSample {
  Points points;
  std::int64_t proposals = 0;

  /// Accepted / proposed: an unbiased estimate of P(W in (0, inf)^p).
  double acceptance_rate() const {
    return static_cast<double>(points.cols()) / static_cast<double>(proposals);
  }
};

/// Exact rejection sampling: W ~ N(mu, Sigma), kept iff every coordinate is
/// positive. Aborts once the running acceptance estimate falls below
/// min_acceptance after at least 1e5 proposals.
inline TruthSample sample_truth_iid(const TruncGaussParams& params, Eigen::Index count,
                                    RngStream& rng, double min_acceptance = 1e-4) {
  params.validate();
  if (count < 1) throw std::invalid_argument("sample_truth_iid: count must be >= 1");
  const int p = params.p();
  const Mat l = Eigen::LLT<Mat>(params.sigma).matrixL();
  TruthSample out;
  out.points.resize(p, count);
  Vec z(p), w(p);
  Eigen::Index accepted = 0;
  while (accepted < count) {
    for (int i = 0; i < p; ++i) z(i) = rng.normal();
    w.noalias() = params.mu + l * z;
    ++out.proposals;
    if ((w.array() > 0.0).all()) out.points.col(accepted++) = w;
    if (out.proposals >= 100000 && out.proposals % 10000 == 0 &&
        static_cast<double>(accepted) < min_acceptance * static_cast<double>(out.proposals)) {
      std::ostringstream msg;
      msg << "rejection sampler: acceptance " << accepted << "/" << out.proposals
          << " below " << min_acceptance;
      throw SamplingError(msg.str());
    }
  }
  return out;
}

struct ChainDiagnostics {
  double acceptance_rate = 0.0;
  /// Lag-0.. autocovariances of the first coordinate.
  std::vector<double> lag_autocovariances;
};

struct ChainSample {
  Points points;
  ChainDiagnostics diagnostics;
};

/// Gaussian random-walk Metropolis targeting exp(-|x|^2 / (2 lambda)) on the
/// positive orthant. Proposals leaving the orthant have zero density and are
/// rejected. The chain starts from an exact draw of the target and keeps every
/// `thin`-th state.
inline ChainSample rw_metropolis_psi(double lambda, int p, double step, Eigen::Index count,
                                     RngStream& rng, int thin = 1, size_t max_lag = 50) {
  if (!(lambda > 0.0)) throw DomainError("rw_metropolis_psi: lambda must be > 0");
  if (!(step > 0.0)) throw DomainError("rw_metropolis_psi: step must be > 0");
  if (count < 1 || thin < 1) throw std::invalid_argument("rw_metropolis_psi: bad count or thin");
  ChainSample out;
  out.points.resize(p, count);
  Vec x = sample_proposal_iid(lambda, p, 1, rng).col(0);
  double log_target = -0.5 * x.squaredNorm() / lambda;
  Vec y(p);
  std::int64_t accepted = 0, total = 0;
  for (Eigen::Index k = 0; k < count; ++k) {
    for (int t = 0; t < thin; ++t) {
      for (int i = 0; i < p; ++i) y(i) = x(i) + step * rng.normal();
      const double u = rng.uniform();
      ++total;
      if ((y.array() <= 0.0).any()) continue;
      const double log_prop = -0.5 * y.squaredNorm() / lambda;
      if (std::log(u) < log_prop - log_target) {
        x = y;
        log_target = log_prop;
        ++accepted;
      }
    }
    out.points.col(k) = x;
  }
  out.diagnostics.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(total);
  if (count >= 2) {
    const Vec first = out.points.row(0).transpose();
    out.diagnostics.lag_autocovariances =
        autocovariances({first.data(), static_cast<size_t>(first.size())}, max_lag);
  }
  return out;
}

}  // namespace unnorm
