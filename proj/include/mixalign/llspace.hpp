#pragma once

// Models as points in log-likelihood space.
//
// A model is represented by its log-likelihoods on a fixed evaluation
// corpus: per text (TextLLMatrix rows) or per domain (DomainLLVector).
// Double-centering the model x text matrix gives coordinates q whose
// squared distances estimate KL divergence: 2 KL(p_i, p_j) ~ |q_i - q_j|^2 / N.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mixalign/common.hpp"
#include "mixalign/corpus.hpp"
#include "mixalign/tinylm.hpp"

namespace mixalign {

struct TextScore {
  double total_ll = 0.0;  // nats
  std::uint64_t token_count = 0;
};

struct DomainLLVector {
  std::vector<double> values;  // mean LL per domain (per token when normalized)
  bool normalized = true;
  std::string source_model;
  std::string eval_digest;

  int K() const { return static_cast<int>(values.size()); }
};

/// Scores every evaluation text, in corpus order.
inline std::vector<TextScore> ScoreEvalCorpus(const ModelCheckpoint& model,
                                              const EvalCorpus& eval) {
  std::vector<TextScore> out;
  out.reserve(eval.N());
  for (const auto& t : eval.texts) {
    auto r = LogProb(model, t.tokens);
    out.push_back({r.total_ll, r.token_count});
  }
  return out;
}

/// Domain-level LL vector. Normalized: total LL over total tokens per
/// domain. Unnormalized: mean total LL per text.
inline DomainLLVector DomainLLFromScores(std::span<const TextScore> scores,
                                         const EvalCorpus& eval, bool normalize,
                                         std::string source_model = {}) {
  if (scores.size() < eval.N())
    throw ContractError("DomainLLFromScores: missing score for text " +
                        std::to_string(scores.size()) + " of " + std::to_string(eval.N()));
  Require(scores.size() == eval.N(), "DomainLLFromScores: more scores than texts");
  const std::size_t k = static_cast<std::size_t>(eval.K());
  std::vector<double> ll(k, 0.0), tokens(k, 0.0), count(k, 0.0);
  for (std::size_t i = 0; i < eval.N(); ++i) {
    if (!std::isfinite(scores[i].total_ll))
      throw ContractError("DomainLLFromScores: missing score for text " + std::to_string(i));
    const auto d = static_cast<std::size_t>(eval.texts[i].domain);
    ll[d] += scores[i].total_ll;
    tokens[d] += static_cast<double>(scores[i].token_count);
    count[d] += 1.0;
  }
  DomainLLVector v;
  v.normalized = normalize;
  v.source_model = std::move(source_model);
  v.eval_digest = eval.digest();
  v.values.resize(k);
  for (std::size_t d = 0; d < k; ++d) v.values[d] = ll[d] / (normalize ? tokens[d] : count[d]);
  return v;
}

inline DomainLLVector ComputeDomainLL(const ModelCheckpoint& model, const EvalCorpus& eval,
                                      bool normalize, std::string source_model = {}) {
  auto scores = ScoreEvalCorpus(model, eval);
  return DomainLLFromScores(scores, eval, normalize, std::move(source_model));
}

struct TextLLMatrix {
  std::vector<std::string> rows;  // model ids
  std::vector<std::string> cols;  // text ids
  Eigen::MatrixXd L;              // nats per text

  void Validate() const {
    Require(L.rows() == static_cast<Eigen::Index>(rows.size()) &&
                L.cols() == static_cast<Eigen::Index>(cols.size()),
            "TextLLMatrix: label/shape mismatch");
    Require(L.allFinite(), "TextLLMatrix: non-finite entry");
    Require(std::set<std::string>(rows.begin(), rows.end()).size() == rows.size(),
            "TextLLMatrix: duplicate model id");
    Require(std::set<std::string>(cols.begin(), cols.end()).size() == cols.size(),
            "TextLLMatrix: duplicate text id");
  }

  void AddRow(std::string id, std::span<const double> values) {
    if (rows.empty() && L.size() == 0) L.resize(0, static_cast<Eigen::Index>(values.size()));
    Require(static_cast<Eigen::Index>(values.size()) == L.cols(), "TextLLMatrix: row length mismatch");
    L.conservativeResize(L.rows() + 1, Eigen::NoChange);
    for (std::size_t j = 0; j < values.size(); ++j)
      L(L.rows() - 1, static_cast<Eigen::Index>(j)) = values[j];
    rows.push_back(std::move(id));
  }

  std::string digest() const {
    Digest d;
    for (const auto& r : rows) d.Update(r).Update("\0", 1);
    for (const auto& c : cols) d.Update(c).Update("\0", 1);
    d.Update(L.data(), sizeof(double) * static_cast<std::size_t>(L.size()));
    return d.hex();
  }
};

inline std::vector<std::string> TextIds(const EvalCorpus& eval) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < eval.N(); ++i) ids.push_back(std::to_string(i));
  return ids;
}

inline std::vector<double> TotalLL(std::span<const TextScore> scores) {
  std::vector<double> v;
  v.reserve(scores.size());
  for (const auto& s : scores) v.push_back(s.total_ll);
  return v;
}

struct CenteredMatrix {
  std::vector<std::string> rows;
  Eigen::MatrixXd Q;
  std::string provenance;  // digest of the source matrix

  Eigen::Index Row(const std::string& id) const {
    auto it = std::find(rows.begin(), rows.end(), id);
    if (it == rows.end()) throw ContractError("unknown model id '" + id + "'");
    return static_cast<Eigen::Index>(it - rows.begin());
  }
};

/// Q_ij = L_ij - rowmean_i - colmean_j + grandmean.
inline CenteredMatrix DoubleCenter(const TextLLMatrix& m) {
  m.Validate();
  if (m.L.rows() < 2 || m.L.cols() < 2)
    throw ContractError("DoubleCenter: need at least 2 models and 2 texts, got " +
                        std::to_string(m.L.rows()) + "x" + std::to_string(m.L.cols()));
  const Eigen::VectorXd row_mean = m.L.rowwise().mean();
  const Eigen::RowVectorXd col_mean = m.L.colwise().mean();
  const double grand = m.L.mean();
  CenteredMatrix c;
  c.rows = m.rows;
  c.provenance = m.digest();
  c.Q = (m.L.colwise() - row_mean).rowwise() - col_mean;
  c.Q.array() += grand;
  return c;
}

enum class KlUnits { kNatsPerText, kBitsPerByte };

/// KL estimate |q_i - q_j|^2 / (2N). Bits per byte divides nats per text by
/// the mean text byte length and converts to base 2.
inline double KlEstimate(const CenteredMatrix& c, const std::string& i, const std::string& j,
                         double mean_byte_length, KlUnits units) {
  const auto ri = c.Row(i), rj = c.Row(j);
  if (ri == rj) return 0.0;
  const double n = static_cast<double>(c.Q.cols());
  const double nats = (c.Q.row(ri) - c.Q.row(rj)).squaredNorm() / (2.0 * n);
  if (units == KlUnits::kNatsPerText) return nats;
  Require(mean_byte_length > 0.0, "KlEstimate: mean byte length must be positive");
  return nats / mean_byte_length * kLog2E;
}

inline double KlEstimate(const CenteredMatrix& c, const std::string& i, const std::string& j,
                         const EvalCorpus& eval, KlUnits units) {
  return KlEstimate(c, i, j, eval.MeanByteLength(), units);
}

struct Projection {
  Eigen::MatrixXd coords;  // M x 2
  bool one_dimensional = false;
};

/// Top-2 principal coordinates of the rows of Q / sqrt(N). Each axis is
/// signed so that its largest-magnitude text loading is positive.
inline Projection PcaProject(const CenteredMatrix& c) {
  const Eigen::Index m = c.Q.rows();
  if (m < 3) throw ContractError("PcaProject: need at least 3 models, got " + std::to_string(m));
  const Eigen::MatrixXd X = c.Q / std::sqrt(static_cast<double>(c.Q.cols()));
  const Eigen::MatrixXd gram = X * X.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  Projection p;
  p.coords = Eigen::MatrixXd::Zero(m, 2);
  const double top = std::max(es.eigenvalues()(m - 1), 0.0);
  for (int axis = 0; axis < 2; ++axis) {
    const double lambda = es.eigenvalues()(m - 1 - axis);
    if (!(lambda > 1e-12 * top)) {
      p.one_dimensional = true;
      continue;
    }
    Eigen::VectorXd u = es.eigenvectors().col(m - 1 - axis);
    const Eigen::VectorXd loading = X.transpose() * u;
    Eigen::Index at = 0;
    loading.cwiseAbs().maxCoeff(&at);
    if (loading(at) < 0.0) u = -u;
    p.coords.col(axis) = u * std::sqrt(lambda);
  }
  return p;
}

struct TrajectoryPoint {
  std::int64_t step = 0;
  DomainLLVector ell;
  std::vector<double> text_ll;  // empty if not recorded
};

struct Trajectory {
  std::string run_id;
  std::vector<TrajectoryPoint> points;

  void Append(TrajectoryPoint p) {
    Require(points.empty() || p.step > points.back().step,
            "Trajectory: steps must be strictly increasing");
    points.push_back(std::move(p));
  }
};

struct Separation {
  double intra = 0.0;
  double inter = 0.0;
};

/// Distances in q-space between matched checkpoints of four runs: two
/// resamples (1, 2) of each of two mixtures (A, B). All checkpoints are
/// centered jointly.
inline Separation TrajectorySeparation(const Trajectory& a1, const Trajectory& a2,
                                       const Trajectory& b1, const Trajectory& b2) {
  const std::vector<const Trajectory*> runs = {&a1, &a2, &b1, &b2};
  const std::size_t steps = a1.points.size();
  Require(steps > 0, "TrajectorySeparation: empty trajectory");
  for (const auto* r : runs) {
    Require(r->points.size() == steps, "TrajectorySeparation: checkpoint count mismatch");
    for (std::size_t s = 0; s < steps; ++s) {
      Require(r->points[s].step == a1.points[s].step,
              "TrajectorySeparation: checkpoint step mismatch at index " + std::to_string(s));
      Require(!r->points[s].text_ll.empty(), "TrajectorySeparation: text-level rows missing");
    }
  }
  TextLLMatrix m;
  const std::size_t n = a1.points[0].text_ll.size();
  for (std::size_t j = 0; j < n; ++j) m.cols.push_back(std::to_string(j));
  for (std::size_t r = 0; r < runs.size(); ++r)
    for (std::size_t s = 0; s < steps; ++s)
      m.AddRow(std::to_string(r) + "/" + std::to_string(s), runs[r]->points[s].text_ll);
  const auto c = DoubleCenter(m);
  auto q = [&](std::size_t r, std::size_t s) {
    return c.Q.row(static_cast<Eigen::Index>(r * steps + s));
  };
  Separation out;
  for (std::size_t s = 0; s < steps; ++s) {
    out.intra += (q(0, s) - q(1, s)).norm() + (q(2, s) - q(3, s)).norm();
    for (std::size_t i : {0u, 1u})
      for (std::size_t j : {2u, 3u}) out.inter += (q(i, s) - q(j, s)).norm();
  }
  out.intra /= 2.0 * static_cast<double>(steps);
  out.inter /= 4.0 * static_cast<double>(steps);
  return out;
}

}  // namespace mixalign
