#pragma once

// Mixture-weight estimation on the simplex.
//
// Given a target direction d = ell_tgt - ell in domain log-likelihood space,
// the raw rule is softmax(d / tau). The adjusted rule first maps d through
// the inverse domain Gram matrix (J^T J)^{-1}, where column k of J is the
// parameter gradient of the domain-k log-likelihood. Both are instances of
// argmax_pi  pi . tilde - tau KL(pi, prior), whose solution is
// pi ~ prior * exp(tilde / tau).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mixalign/common.hpp"
#include "mixalign/corpus.hpp"
#include "mixalign/llspace.hpp"
#include "mixalign/tinylm.hpp"
#include "mixalign/weights.hpp"

namespace mixalign {

struct TildeWeights {
  std::vector<double> values;
};

/// ell_tgt - ell. Both vectors must come from the same evaluation corpus
/// under the same normalization.
inline std::vector<double> Lld(const DomainLLVector& ell_tgt, const DomainLLVector& ell) {
  Require(ell_tgt.K() == ell.K(), "Lld: K mismatch (" + std::to_string(ell_tgt.K()) + " vs " +
                                      std::to_string(ell.K()) + ")");
  Require(ell_tgt.normalized == ell.normalized,
          "Lld: normalization mismatch between target and model LL vectors");
  Require(ell_tgt.eval_digest == ell.eval_digest,
          "Lld: LL vectors were computed on different evaluation corpora (" +
              ell_tgt.eval_digest + " vs " + ell.eval_digest + ")");
  std::vector<double> d(ell.values.size());
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = ell_tgt.values[k] - ell.values[k];
  return d;
}

namespace detail {

inline void RequireTau(double tau) {
  Require(tau > 0.0, "temperature must be positive, got " + FormatDouble(tau));
}

/// Normalized exp(log_mass) with max subtraction.
inline std::vector<double> SoftmaxLog(std::span<const double> log_mass) {
  const double mx = *std::max_element(log_mass.begin(), log_mass.end());
  std::vector<double> p(log_mass.size());
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    p[k] = std::exp(log_mass[k] - mx);
    total += p[k];
  }
  for (double& x : p) x /= total;
  return p;
}

inline void RequirePositivePrior(const DomainWeights& prior) {
  for (std::size_t k = 0; k < prior.size(); ++k)
    Require(prior[k] > 0.0, "prior weight for domain '" + prior.labels()[k] +
                                "' is zero; KL to the prior is undefined off its support");
}

}  // namespace detail

/// softmax(diff / tau). tau = +inf returns exactly uniform weights.
inline DomainWeights RawLldWeights(std::span<const double> diff, double tau,
                                   std::vector<std::string> labels) {
  Require(!diff.empty(), "RawLldWeights: empty difference vector");
  Require(AllFinite(diff), "RawLldWeights: non-finite LL difference");
  detail::RequireTau(tau);
  if (labels.empty()) labels = DefaultLabels(diff.size());
  if (std::isinf(tau)) return DomainWeights::Uniform(std::move(labels));
  const double mx = *std::max_element(diff.begin(), diff.end());
  std::vector<double> z(diff.size());
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = (diff[k] - mx) / tau;
  return DomainWeights(detail::SoftmaxLog(z), std::move(labels));
}

struct DomainJacobianGram {
  Eigen::MatrixXd gram;      // K x K, J^T J
  Eigen::MatrixXd jacobian;  // P x K
  double ridge_used = 0.0;
  std::int64_t model_step = 0;
  bool normalized = true;
  DomainLLVector ell;  // byproduct of the same forward passes
};

/// Column k of J is the gradient of domain k's mean log-likelihood, using
/// the same normalization as DomainLLFromScores.
inline DomainJacobianGram GramMatrix(const ModelCheckpoint& model, const EvalCorpus& eval,
                                     bool normalize = true) {
  const std::size_t k = static_cast<std::size_t>(eval.K());
  const std::size_t p = model.params.size();
  std::vector<double> denom(k, 0.0);
  for (const auto& t : eval.texts)
    denom[static_cast<std::size_t>(t.domain)] += normalize ? static_cast<double>(t.tokens.size()) : 1.0;
  for (std::size_t d = 0; d < k; ++d)
    Require(denom[d] > 0.0, "GramMatrix: domain '" + eval.labels[d] + "' has no evaluation texts");

  DomainJacobianGram g;
  g.model_step = model.step;
  g.normalized = normalize;
  g.jacobian = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k));
  std::vector<TextScore> scores;
  scores.reserve(eval.N());
  for (const auto& t : eval.texts) {
    const auto d = static_cast<Eigen::Index>(t.domain);
    std::span<double> col(g.jacobian.col(d).data(), p);
    const double ll = AccumulateLogProbGrad(model.config, model.params, t.tokens,
                                            1.0 / denom[static_cast<std::size_t>(d)], col);
    scores.push_back({ll, t.tokens.size()});
  }
  if (!g.jacobian.allFinite())
    throw NumericalError("GramMatrix: non-finite domain gradient at step " +
                         std::to_string(model.step));
  g.gram = g.jacobian.transpose() * g.jacobian;
  g.ell = DomainLLFromScores(scores, eval, normalize);
  return g;
}

struct AdjustedResult {
  DomainWeights weights;
  TildeWeights tilde;
  double ridge_used = 0.0;
};

inline constexpr double kMaxCondition = 1e12;

/// Solves (gram + r I) tilde = diff, raising r by decades from
/// 1e-8 trace/K until the condition number drops below 1e12.
inline std::pair<TildeWeights, double> SolveGram(const Eigen::MatrixXd& gram,
                                                 std::span<const double> diff, double ridge) {
  const Eigen::Index k = gram.rows();
  Require(gram.cols() == k && static_cast<std::size_t>(k) == diff.size(),
          "SolveGram: gram is " + std::to_string(gram.rows()) + "x" + std::to_string(gram.cols()) +
              " but diff has " + std::to_string(diff.size()) + " entries");
  Require(gram.allFinite() && AllFinite(diff), "SolveGram: non-finite input");
  Require(ridge >= 0.0, "SolveGram: ridge must be nonnegative");
  const double scale = gram.trace() / static_cast<double>(k);
  Require((gram - gram.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, std::abs(scale)),
          "SolveGram: gram is not symmetric");
  const Eigen::Map<const Eigen::VectorXd> rhs(diff.data(), k);
  const double floor = 1e-8 * scale;
  double r = ridge;
  while (scale > 0.0 && r <= 1e2 * scale) {
    const Eigen::MatrixXd a = gram + r * Eigen::MatrixXd::Identity(k, k);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues()(0), hi = es.eigenvalues()(k - 1);
    if (lo > 0.0 && hi / lo < kMaxCondition) {
      Eigen::VectorXd x = a.ldlt().solve(rhs);
      return {TildeWeights{std::vector<double>(x.data(), x.data() + k)}, r};
    }
    r = r < floor ? floor : r * 10.0;
  }
  throw NumericalError("domain Gram matrix is singular even at ridge " + FormatDouble(r) +
                       "; use the raw LLD rule instead");
}

/// |(gram + r I)^{-1}| entrywise, with r escalated as in SolveGram.
inline std::pair<Eigen::MatrixXd, double> AdjustmentMatrix(const Eigen::MatrixXd& gram, double ridge) {
  const Eigen::Index k = gram.rows();
  Eigen::MatrixXd inv(k, k);
  double used = ridge;
  for (Eigen::Index c = 0; c < k; ++c) {
    std::vector<double> e(static_cast<std::size_t>(k), 0.0);
    e[static_cast<std::size_t>(c)] = 1.0;
    auto [col, r] = SolveGram(gram, e, ridge);
    for (Eigen::Index i = 0; i < k; ++i) inv(i, c) = std::abs(col.values[static_cast<std::size_t>(i)]);
    used = r;
  }
  return {inv, used};
}

/// softmax(tilde / tau) with tilde = (gram + ridge I)^{-1} diff.
inline AdjustedResult AdjustedLldWeights(std::span<const double> diff, const Eigen::MatrixXd& gram,
                                         double tau, double ridge,
                                         std::vector<std::string> labels) {
  detail::RequireTau(tau);
  auto [tilde, used] = SolveGram(gram, diff, ridge);
  auto w = RawLldWeights(tilde.values, tau, std::move(labels));
  return {std::move(w), std::move(tilde), used};
}

inline AdjustedResult AdjustedLldWeights(std::span<const double> diff, const DomainJacobianGram& g,
                                         double tau, double ridge,
                                         std::vector<std::string> labels) {
  return AdjustedLldWeights(diff, g.gram, tau, ridge, std::move(labels));
}

/// argmax_pi  pi . tilde - tau KL(pi, prior), in closed form.
inline DomainWeights SolveRegularized(const TildeWeights& tilde, double tau,
                                      const DomainWeights& prior) {
  detail::RequireTau(tau);
  Require(tilde.values.size() == prior.size(), "SolveRegularized: K mismatch");
  Require(AllFinite(tilde.values), "SolveRegularized: non-finite tilde");
  detail::RequirePositivePrior(prior);
  std::vector<double> z(prior.size());
  for (std::size_t k = 0; k < z.size(); ++k)
    z[k] = std::log(prior[k]) + tilde.values[k] / tau;
  return DomainWeights(detail::SoftmaxLog(z), prior.labels());
}

/// One mirror-descent step under the negative-entropy mirror map
/// h(pi) = sum pi log pi, with step tilde / tau.
inline DomainWeights MirrorDescentStep(const DomainWeights& prior, const TildeWeights& tilde,
                                       double tau) {
  detail::RequireTau(tau);
  Require(tilde.values.size() == prior.size(), "MirrorDescentStep: K mismatch");
  Require(AllFinite(tilde.values), "MirrorDescentStep: non-finite tilde");
  detail::RequirePositivePrior(prior);
  std::vector<double> z(prior.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double grad_h = std::log(prior[k]) + 1.0;
    const double dual = grad_h + tilde.values[k] / tau;
    z[k] = dual - 1.0;  // inverse map, up to the simplex normalizer
  }
  return DomainWeights(detail::SoftmaxLog(z), prior.labels());
}

struct WeightTrajectory {
  std::vector<std::pair<std::int64_t, DomainWeights>> entries;

  void Append(std::int64_t step, DomainWeights w) {
    if (!entries.empty()) {
      Require(step > entries.back().first,
              "WeightTrajectory: step " + std::to_string(step) + " does not follow step " +
                  std::to_string(entries.back().first));
      Require(w.labels() == entries.back().second.labels(), "WeightTrajectory: label mismatch");
    }
    entries.emplace_back(step, std::move(w));
  }

  std::vector<std::int64_t> steps() const {
    std::vector<std::int64_t> s;
    for (const auto& e : entries) s.push_back(e.first);
    return s;
  }
};

/// Normalized geometric mean over the trajectory, in log space.
inline DomainWeights AggregateGeometric(const WeightTrajectory& traj) {
  Require(!traj.entries.empty(), "AggregateGeometric: empty trajectory");
  const auto& labels = traj.entries.front().second.labels();
  std::vector<double> logsum(labels.size(), 0.0);
  for (const auto& [step, w] : traj.entries)
    for (std::size_t k = 0; k < w.size(); ++k) {
      Require(w[k] > 0.0, "AggregateGeometric: weight of domain '" + labels[k] +
                              "' is zero at step " + std::to_string(step) +
                              "; the geometric mean needs strictly positive weights");
      logsum[k] += std::log(w[k]);
    }
  for (double& x : logsum) x /= static_cast<double>(traj.entries.size());
  return DomainWeights(detail::SoftmaxLog(logsum), labels);
}

inline DomainWeights AggregateArithmetic(const WeightTrajectory& traj) {
  Require(!traj.entries.empty(), "AggregateArithmetic: empty trajectory");
  const auto& labels = traj.entries.front().second.labels();
  std::vector<double> mean(labels.size(), 0.0);
  for (const auto& e : traj.entries)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += e.second[k];
  return DomainWeights::Normalize(mean, labels);
}

/// KL(p || q) in nats, 0 log 0 = 0.
inline double KlSimplex(std::span<const double> p, std::span<const double> q) {
  Require(p.size() == q.size(), "KlSimplex: size mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == 0.0) continue;
    Require(q[k] > 0.0, "KlSimplex: support of p is not contained in support of q (index " +
                            std::to_string(k) + ")");
    kl += p[k] * std::log(p[k] / q[k]);
  }
  return std::max(kl, 0.0);
}

inline double KlSimplex(const DomainWeights& p, const DomainWeights& q) {
  return KlSimplex(p.values(), q.values());
}

inline double Jsd(std::span<const double> p, std::span<const double> q) {
  Require(p.size() == q.size(), "Jsd: size mismatch");
  std::vector<double> m(p.size());
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = 0.5 * (p[k] + q[k]);
  return 0.5 * KlSimplex(p, m) + 0.5 * KlSimplex(q, m);
}

inline double Jsd(const DomainWeights& p, const DomainWeights& q) {
  return Jsd(p.values(), q.values());
}

/// Pairwise JSD between the entries of a weight trajectory.
inline std::vector<std::vector<double>> JsdMatrix(const WeightTrajectory& traj) {
  const std::size_t n = traj.entries.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      m[i][j] = m[j][i] = Jsd(traj.entries[i].second, traj.entries[j].second);
  return m;
}

/// First-order prediction eta * J^T J pi of the expected LL change after
/// one SGD ascent step on a domain drawn from pi.
inline std::vector<double> PredictedLlDelta(const Eigen::MatrixXd& gram, const DomainWeights& pi,
                                            double eta) {
  Require(gram.rows() == static_cast<Eigen::Index>(pi.size()) && gram.cols() == gram.rows(),
          "PredictedLlDelta: K mismatch");
  const Eigen::Map<const Eigen::VectorXd> w(pi.values().data(), gram.rows());
  const Eigen::VectorXd d = eta * (gram * w);
  return std::vector<double>(d.data(), d.data() + d.size());
}

enum class OptMode { kMin, kMax };

/// Exhaustive search over the barycentric grid with spacing grid_step.
/// Grid points are visited in lexicographic order of their leading
/// coordinates; the first best point wins ties.
inline DomainWeights BruteForceSimplexOpt(const std::function<double(std::span<const double>)>& f,
                                          int k, double grid_step, OptMode mode,
                                          std::vector<std::string> labels = {}) {
  Require(k >= 1 && k <= 3, "BruteForceSimplexOpt: K must be in [1, 3], got " + std::to_string(k));
  Require(grid_step > 0.0 && grid_step <= 1.0, "BruteForceSimplexOpt: grid step must be in (0, 1]");
  if (labels.empty()) labels = DefaultLabels(static_cast<std::size_t>(k));
  const long n = std::lround(1.0 / grid_step);
  const double h = 1.0 / static_cast<double>(n);
  std::vector<double> pt(static_cast<std::size_t>(k)), best;
  double best_val = 0.0;
  auto visit = [&] {
    const double v = f(pt);
    if (best.empty() || (mode == OptMode::kMin ? v < best_val : v > best_val)) {
      best_val = v;
      best = pt;
    }
  };
  if (k == 1) {
    pt[0] = 1.0;
    visit();
  } else if (k == 2) {
    for (long i = 0; i <= n; ++i) {
      pt[0] = static_cast<double>(i) * h;
      pt[1] = static_cast<double>(n - i) * h;
      visit();
    }
  } else {
    for (long i = 0; i <= n; ++i)
      for (long j = 0; i + j <= n; ++j) {
        pt[0] = static_cast<double>(i) * h;
        pt[1] = static_cast<double>(j) * h;
        pt[2] = static_cast<double>(n - i - j) * h;
        visit();
      }
  }
  return DomainWeights::Normalize(best, std::move(labels));
}

}  // namespace mixalign
