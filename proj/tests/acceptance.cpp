// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
// Exit status is nonzero when a criterion fails that is not listed in
// kDocumentedFailures (see README, "Known deviations").

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mixalign/config.hpp"
#include "mixalign/io.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace mixalign;

namespace {

const std::set<int> kDocumentedFailures = {8, 9};

struct Outcome {
  int id;
  bool pass;
};
std::vector<Outcome> outcomes;

void Record(int id, bool pass, const std::string& what, const std::string& detail) {
  outcomes.push_back({id, pass});
  std::printf("criterion %2d %s  %s: %s\n", id, pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string F(double x, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, x);
  return buf;
}

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::vector<std::string> Labels(std::size_t k) {
  std::vector<std::string> l;
  for (std::size_t i = 0; i < k; ++i) l.push_back("d" + std::to_string(i));
  return l;
}

double LInf(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------

void ClosedFormVsGrid() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> unif(0.2, 2.0);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto tilde = testing::RandomVector(rng, 3, 1.0);
    const double tau = unif(rng);
    const DomainWeights prior(testing::RandomSimplexPoint(rng, 3, 0.05), Labels(3));
    const auto closed = SolveRegularized(TildeWeights{tilde}, tau, prior);
    const auto grid = BruteForceSimplexOpt(
        [&](std::span<const double> p) {
          double kl = 0.0, dot = 0.0;
          for (int k = 0; k < 3; ++k) {
            dot += p[k] * tilde[k];
            if (p[k] > 0.0) kl += p[k] * std::log(p[k] / prior[k]);
          }
          return dot - tau * kl;
        },
        3, 0.001, OptMode::kMax, Labels(3));
    worst = std::max(worst, LInf(closed.values(), grid.values()));
  }
  Record(1, worst <= 0.002 && Seconds(t0) < 60, "closed form vs grid oracle",
         "max L-inf gap " + F(worst) + " over 200 instances (tolerance 0.002), " + F(Seconds(t0), 3) + " s");
}

void MirrorDescentEquivalence() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> unif(0.05, 5.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng() % 15;
    const auto tilde = testing::RandomVector(rng, k, 2.0);
    const double tau = unif(rng);
    const DomainWeights prior(testing::RandomSimplexPoint(rng, k, 0.01), Labels(k));
    const auto a = SolveRegularized(TildeWeights{tilde}, tau, prior);
    const auto b = MirrorDescentStep(prior, TildeWeights{tilde}, tau);
    worst = std::max(worst, LInf(a.values(), b.values()));
  }
  Record(2, worst < 1e-12, "closed form equals one mirror-descent step",
         "max L-inf gap " + F(worst) + " over 1000 instances (tolerance 1e-12)");
}

void AggregationTheorem() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(303);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    WeightTrajectory traj;
    const int n = 2 + static_cast<int>(rng() % 7);
    for (int t = 0; t < n; ++t) traj.Append(t, DomainWeights(testing::RandomSimplexPoint(rng, 3, 0.02), Labels(3)));
    const auto geo = AggregateGeometric(traj);
    const auto grid = BruteForceSimplexOpt(
        [&](std::span<const double> p) {
          double s = 0.0;
          for (const auto& [step, w] : traj.entries)
            for (int k = 0; k < 3; ++k)
              if (p[k] > 0.0) s += p[k] * std::log(p[k] / w[k]);
          return s;
        },
        3, 0.001, OptMode::kMin, Labels(3));
    worst = std::max(worst, LInf(geo.values(), grid.values()));
  }
  Record(3, worst <= 0.002 && Seconds(t0) < 60, "geometric aggregate is the summed-KL minimizer",
         "max L-inf gap " + F(worst) + " over 100 trajectory sets (tolerance 0.002), " + F(Seconds(t0), 3) + " s");
}

// Tiny transformer with jittered weights and a synthetic per-domain corpus.
ModelCheckpoint Jittered(const ModelConfig& cfg, std::uint64_t seed) {
  auto m = InitModel(cfg, seed);
  std::mt19937_64 rng(seed * 7 + 1);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& p : m.params) p += nd(rng);
  return m;
}

EvalCorpus SyntheticEval(int k, int per_domain, int vocab, std::uint64_t seed) {
  EvalCorpus e;
  e.labels = Labels(static_cast<std::size_t>(k));
  std::mt19937_64 rng(seed);
  for (int d = 0; d < k; ++d)
    for (int i = 0; i < per_domain; ++i) {
      EvalText t;
      t.domain = d;
      const std::size_t n = 5 + rng() % 4;
      for (std::size_t j = 0; j < n; ++j) t.tokens.push_back(static_cast<Token>((2 * d + rng() % 3) % vocab));
      t.byte_length = n;
      t.offset = static_cast<std::uint64_t>(100 * d + i);
      e.texts.push_back(std::move(t));
    }
  e.Finalize();
  return e;
}

std::vector<double> DomainMeans(const ModelCheckpoint& m, const EvalCorpus& e) {
  std::vector<double> ll(static_cast<std::size_t>(e.K()), 0.0), tok(ll.size(), 0.0);
  for (const auto& t : e.texts) {
    const auto r = LogProb(m, t.tokens);
    ll[static_cast<std::size_t>(t.domain)] += r.total_ll;
    tok[static_cast<std::size_t>(t.domain)] += static_cast<double>(r.token_count);
  }
  for (std::size_t k = 0; k < ll.size(); ++k) ll[k] /= tok[k];
  return ll;
}

void FirstOrderDynamics() {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig cfg{.vocab = 8, .layers = 1, .heads = 2, .embed_dim = 8, .context_length = 8};
  bool ok = cfg.ParamCount() <= 2000;
  std::string detail = std::to_string(cfg.ParamCount()) + " params;";
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto m = Jittered(cfg, 40 + seed);
    const auto e = SyntheticEval(3, 3, cfg.vocab, 50 + seed);
    const auto g = GramMatrix(m, e, true);
    const auto base = DomainMeans(m, e);
    const std::vector<double> pi{0.5, 0.3, 0.2};
    std::vector<double> errs;
    for (double eta : {1e-2, 1e-3, 1e-4}) {
      // Expected change over the sampled domain, each step along the exact
      // full-batch gradient of that domain's mean LL.
      std::vector<double> actual(3, 0.0);
      for (int k = 0; k < 3; ++k) {
        ModelCheckpoint moved = m;
        for (std::size_t i = 0; i < moved.params.size(); ++i)
          moved.params[i] += eta * g.jacobian(static_cast<Eigen::Index>(i), k);
        const auto after = DomainMeans(moved, e);
        for (int j = 0; j < 3; ++j) actual[j] += pi[k] * (after[j] - base[j]);
      }
      Eigen::Vector3d p(pi[0], pi[1], pi[2]);
      const Eigen::VectorXd pred = eta * (g.jacobian.transpose() * (g.jacobian * p));
      double num = 0.0, den = 0.0;
      for (int j = 0; j < 3; ++j) {
        num += (actual[j] - pred(j)) * (actual[j] - pred(j));
        den += pred(j) * pred(j);
      }
      errs.push_back(std::sqrt(num / den));
    }
    const double r1 = errs[0] / errs[1], r2 = errs[1] / errs[2];
    ok = ok && r1 >= 5.0 && r2 >= 5.0;
    detail += " seed " + std::to_string(seed) + ": errors " + F(errs[0], 3) + ", " + F(errs[1], 3) + ", " +
              F(errs[2], 3) + " (ratios " + F(r1, 3) + ", " + F(r2, 3) + ");";
  }
  ok = ok && Seconds(t0) < 300;
  Record(4, ok, "first-order LL dynamics under SGD", detail + " need ratios >= 5");
}

void GradientCorrectness() {
  double worst = 0.0;
  std::string detail;
  for (int layers : {1, 2}) {
    const ModelConfig cfg{.vocab = 8, .layers = layers, .heads = 2, .embed_dim = 8, .context_length = 8};
    const auto student = Jittered(cfg, 60 + static_cast<std::uint64_t>(layers));
    const auto teacher = Jittered(cfg, 70 + static_cast<std::uint64_t>(layers));
    TokenBatch batch;
    std::mt19937_64 rng(80 + static_cast<std::uint64_t>(layers));
    for (int s = 0; s < 2; ++s) {
      std::vector<Token> seq;
      for (int t = 0; t < 8; ++t) seq.push_back(static_cast<Token>(rng() % 8));
      batch.total_tokens += seq.size();
      batch.sequences.push_back(std::move(seq));
    }
    auto with = [&](std::span<const double> p) {
      ModelCheckpoint m = student;
      m.params.assign(p.begin(), p.end());
      return m;
    };
    const auto ce = GradLogProb(student, batch).gradient;
    const auto ce_fd = testing::FiniteDifferenceGradient(
        [&](std::span<const double> p) { return GradLogProb(with(p), batch).mean_ll; }, student.params, 1e-4);
    const double e_ce = testing::MaxRelativeError(ce, ce_fd, 1e-6);
    worst = std::max(worst, e_ce);
    detail += std::to_string(cfg.ParamCount()) + " params: CE " + F(e_ce, 3);
    for (LossKind kind : {LossKind::kDistillKl, LossKind::kDistillKlPlusCe}) {
      const LossSpec spec{kind, &teacher};
      const auto g = DistillGrad(student, teacher, batch, spec).gradient;
      const auto fd = testing::FiniteDifferenceGradient(
          [&](std::span<const double> p) { return DistillGrad(with(p), teacher, batch, spec).loss; }, student.params,
          1e-4);
      const double e = testing::MaxRelativeError(g, fd, 1e-6);
      worst = std::max(worst, e);
      detail += std::string(kind == LossKind::kDistillKl ? ", KL " : ", KL+CE ") + F(e, 3);
    }
    detail += "; ";
  }
  Record(5, worst < 1e-4, "analytic vs central-difference gradients", detail + "need < 1e-4");
}

void GeometryLayer() {
  std::mt19937_64 rng(606);
  std::normal_distribution<double> nd;
  double sums = 0.0, asym = 0.0, offsets = 0.0, self = 0.0, most_negative = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int rows = 2 + static_cast<int>(rng() % 8), cols = 2 + static_cast<int>(rng() % 60);
    TextLLMatrix m, shifted;
    for (int c = 0; c < cols; ++c) m.cols.push_back("t" + std::to_string(c));
    shifted.cols = m.cols;
    std::vector<double> text_offset(static_cast<std::size_t>(cols));
    for (auto& d : text_offset) d = 30.0 * nd(rng);
    double scale = 0.0;
    std::vector<double> first, first_shifted;
    for (int r = 0; r < rows; ++r) {
      std::vector<double> v(static_cast<std::size_t>(cols)), w(v.size());
      const double model_offset = 30.0 * nd(rng);
      for (std::size_t c = 0; c < v.size(); ++c) {
        v[c] = -60.0 + 15.0 * nd(rng);
        w[c] = v[c] + model_offset + text_offset[c];
        scale = std::max(scale, std::abs(v[c]));
      }
      if (r == 0) {
        first = v;
        first_shifted = w;
      }
      m.AddRow("m" + std::to_string(r), v);
      shifted.AddRow("m" + std::to_string(r), w);
    }
    m.AddRow("copy", first);
    shifted.AddRow("copy", first_shifted);
    const auto q = DoubleCenter(m);
    const auto qs = DoubleCenter(shifted);
    sums = std::max({sums, q.Q.rowwise().sum().cwiseAbs().maxCoeff() / scale,
                     q.Q.colwise().sum().cwiseAbs().maxCoeff() / scale});
    offsets = std::max(offsets, (q.Q - qs.Q).cwiseAbs().maxCoeff() / scale);
    for (int r = 0; r < rows; ++r)
      for (int s = 0; s < rows; ++s) {
        const auto ri = "m" + std::to_string(r), si = "m" + std::to_string(s);
        const double ab = KlEstimate(q, ri, si, 1.0, KlUnits::kNatsPerText);
        const double ba = KlEstimate(q, si, ri, 1.0, KlUnits::kNatsPerText);
        asym = std::max(asym, std::abs(ab - ba) / std::max(1.0, std::abs(ab)));
        most_negative = std::min(most_negative, ab);
      }
    self = std::max(self, KlEstimate(q, "m0", "copy", 1.0, KlUnits::kNatsPerText) / scale);
  }
  const bool ok = sums < 1e-9 && asym < 1e-12 && most_negative >= 0.0 && self < 1e-9 && offsets < 1e-9;
  Record(6, ok, "double-centering and KL estimate properties",
         "row/col sums " + F(sums, 3) + "*scale, symmetry gap " + F(asym, 3) + ", min KL " + F(most_negative, 3) +
             ", identical-row KL " + F(self, 3) + "*scale, offset drift " + F(offsets, 3) +
             "*scale over 100 matrices");
}

// ---------------------------------------------------------------------------
// Desk benchmark.

struct SeedRuns {
  std::uint64_t seed = 0;
  ExperimentConfig cfg;
  DomainWeights truth;
  std::map<std::string, RunResult> runs;
};

std::string ReadText(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SeedRuns RunSeed(const std::string& config_text, std::uint64_t seed) {
  SeedRuns s;
  s.seed = seed;
  s.cfg = ParseExperimentConfig(config_text, seed);
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpora = GenerateCorpora(s.cfg);
  const auto eval = BuildEval(s.cfg, corpora);
  auto target_model = TrainTarget(s.cfg, corpora);
  s.truth = target_model.ground_truth;
  const auto target = Target::FromModel("target", std::move(target_model.model), eval);
  const auto base = BaseModel(s.cfg);
  std::printf("seed %llu:", static_cast<unsigned long long>(seed));
  for (const auto& m : s.cfg.methods) {
    auto r = RunMethod(MakeRunConfig(s.cfg, m), base, target, corpora, eval);
    std::printf(" %s=%s", m.run_id.c_str(), F(r.report.final_kl).c_str());
    std::fflush(stdout);
    s.runs.emplace(m.run_id, std::move(r));
  }
  std::printf("  (%.0f s)\n", Seconds(t0));
  return s;
}

std::vector<double> FinalKl(const std::vector<SeedRuns>& seeds, const std::string& run) {
  std::vector<double> v;
  for (const auto& s : seeds) v.push_back(s.runs.at(run).report.final_kl);
  return v;
}

std::string List(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + F(v[i]);
  return s + "]";
}

void GroundTruthRecoveryCheck(const std::vector<SeedRuns>& seeds) {
  std::vector<double> est, unif;
  for (const auto& s : seeds) {
    const auto r = GroundTruthRecovery(*s.runs.at("aggregated_lld").report.pi_star, s.truth);
    est.push_back(r.kl_estimate_vs_truth);
    unif.push_back(r.kl_uniform_vs_truth);
  }
  Record(7, Median(est) < Median(unif), "ground-truth weight recovery",
         "median KL(pi*, truth) " + F(Median(est)) + " " + List(est) + " vs KL(uniform, truth) " + F(Median(unif)));
}

void AlignmentOrdering(const std::vector<SeedRuns>& seeds) {
  const double adj = Median(FinalKl(seeds, "adjusted_lld")), it = Median(FinalKl(seeds, "iterative_lld"));
  const double agg = Median(FinalKl(seeds, "aggregated_lld")), uni = Median(FinalKl(seeds, "uniform"));
  const bool a = adj <= it, b = agg < uni, c = agg <= 1.15 * it;
  Record(8, a && b && c, "alignment ordering",
         "median final KL adjusted " + F(adj) + (a ? " <= " : " > ") + "iterative " + F(it) + "; aggregated " + F(agg) +
             (b ? " < " : " >= ") + "uniform " + F(uni) + "; aggregated " + (c ? "<=" : ">") +
             " 1.15 x iterative (" + F(1.15 * it) + ")");
}

void DistillationOrdering(const std::vector<SeedRuns>& seeds) {
  const double klce = Median(FinalKl(seeds, "distill_kl_ce")), kl = Median(FinalKl(seeds, "distill_kl"));
  const double agg = Median(FinalKl(seeds, "aggregated_lld")), uni = Median(FinalKl(seeds, "uniform"));
  const bool a = klce <= kl, b = kl < agg, c = agg < uni;
  Record(9, a && b && c, "distillation ordering",
         "median final KL distill_kl_ce " + F(klce) + (a ? " <= " : " > ") + "distill_kl " + F(kl) +
             (b ? " < " : " >= ") + "aggregated " + F(agg) + (c ? " < " : " >= ") + "uniform " + F(uni));
}

void TemperatureAblation(const std::vector<SeedRuns>& seeds) {
  const double lo = Median(FinalKl(seeds, "aggregated_tau0.1s")), mid = Median(FinalKl(seeds, "aggregated_lld"));
  const double hi = Median(FinalKl(seeds, "aggregated_tau10s")), inf = Median(FinalKl(seeds, "aggregated_tauinf"));
  bool identical = true;
  for (const auto& s : seeds) {
    const auto& a = s.runs.at("aggregated_tauinf");
    const auto& u = s.runs.at("uniform");
    identical = identical && a.final_model.params == u.final_model.params &&
                a.report.kl_curve.points == u.report.kl_curve.points &&
                a.report.pi_star->values() == u.report.pi_star->values();
  }
  const bool ok = mid <= lo && mid <= hi && mid <= inf && identical;
  Record(10, ok, "temperature ablation",
         "median final KL tau=0.1s " + F(lo) + ", s " + F(mid) + ", 10s " + F(hi) + ", inf " + F(inf) +
             "; tau=inf run " + (identical ? "bit-identical to" : "differs from") + " the uniform run");
}

void TrajectorySeparationCheck(const SeedRuns& s) {
  const auto corpora = GenerateCorpora(s.cfg);
  const auto eval = BuildEval(s.cfg, corpora);
  const auto base = BaseModel(s.cfg);
  const auto labels = s.cfg.labels();
  const DomainWeights a = DomainWeights::Uniform(labels);
  const DomainWeights b({0.85, 0.05, 0.05, 0.05}, labels);
  auto run = [&](const DomainWeights& w, const char* resample) {
    TrainSettings t = RunSettings(s.cfg);
    t.data_seed = SubSeed(s.cfg.seed, resample);
    return SecondPass(base, w, corpora, eval, t).trajectory;
  };
  const auto sep = TrajectorySeparation(run(a, "resample_1"), run(a, "resample_2"), run(b, "resample_1"),
                                        run(b, "resample_2"));
  Record(11, sep.inter >= 2.0 * sep.intra, "trajectory separation",
         "inter-mixture q-distance " + F(sep.inter) + " vs intra-mixture " + F(sep.intra) + " (ratio " +
             F(sep.inter / sep.intra, 3) + ", need >= 2)");
}

void JsdBlocks(const std::vector<SeedRuns>& seeds) {
  bool ok = true;
  std::string detail;
  for (const auto& s : seeds) {
    const auto& traj = s.runs.at("aggregated_lld").report.weight_trajectory;
    const auto m = JsdMatrix(traj);
    const std::size_t n = m.size(), half = n / 2;
    double within = 0.0, cross = 0.0;
    int nw = 0, nc = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if ((i < half) == (j < half)) {
          within += m[i][j];
          ++nw;
        } else {
          cross += m[i][j];
          ++nc;
        }
      }
    within /= nw;
    cross /= nc;
    ok = ok && within < cross;
    detail += " seed " + std::to_string(s.seed) + ": within " + F(within, 3) + ", cross " + F(cross, 3) + ";";
  }
  detail.pop_back();
  Record(12, ok, "JSD block structure of first-pass weights", detail.substr(1));
}

double Pearson(std::span<const double> x, std::span<const double> y) {
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

void AggregationCorrelation(const std::vector<SeedRuns>& seeds) {
  double worst = 1.0;
  int count = 0;
  for (const auto& s : seeds)
    for (const char* run : {"aggregated_lld", "iterative_lld", "adjusted_lld"}) {
      const auto& traj = s.runs.at(run).report.weight_trajectory;
      worst = std::min(worst, Pearson(AggregateGeometric(traj).values(), AggregateArithmetic(traj).values()));
      ++count;
    }
  Record(13, worst > 0.95, "geometric vs arithmetic aggregation",
         "min Pearson correlation " + F(worst, 6) + " over " + std::to_string(count) + " first-pass trajectories");
}

// ---------------------------------------------------------------------------

int Shell(const fs::path& dir, const std::string& args) {
  const std::string cmd =
      "cd '" + dir.string() + "' && '" MIXALIGN_CLI "' " + args + " >> cli.log 2>&1";
  return std::system(cmd.c_str());
}

std::map<std::string, std::string> Snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "timing.json" && e.path().filename() != "cli.log")
      files[fs::relative(e.path(), root).string()] = ReadText(e.path());
  return files;
}

void Reproducibility(const std::string& demo_text) {
  auto doc = nlohmann::json::parse(demo_text);
  doc["output_dir"] = "out";
  doc["corpus"]["train_bytes"] = 20000;
  doc["training"]["total_steps"] = 60;
  doc["training"]["warmup_steps"] = 6;
  doc["training"]["checkpoint_every"] = 20;
  doc["target"]["total_steps"] = 60;
  doc["schedule"] = {{"dense_until", 16}, {"every", 20}};
  const fs::path root = fs::temp_directory_path() / ("mixalign_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::vector<std::string> steps{
      "gen-corpus --config cfg.json",
      "train-target --config cfg.json",
      "estimate --config cfg.json --method aggregated",
      "estimate --config cfg.json --method adjusted",
      "train --config cfg.json --weights out/estimate/aggregated/weights.json",
      "train --config cfg.json --method iterative_lld",
      "train --config cfg.json --method distill_kl",
      "train --config cfg.json --method uniform --stop-after 30",
      "train --config cfg.json --method uniform --resume",
      "compare out/runs/aggregated_lld/report.json out/runs/uniform/report.json out/runs/iterative_lld/report.json "
      "--out out/compare",
      "plot --kind kl_curve --input out/runs/uniform/report.json --input out/runs/aggregated_lld/report.json "
      "--out out/plots/kl.svg",
      "plot --kind weight_bars --input out/estimate/aggregated/weights.json --input "
      "out/estimate/adjusted/weights.json --out out/plots/bars.svg",
      "plot --kind model_map --input out/runs/uniform/ll.csv --input out/runs/aggregated_lld/ll.csv --input "
      "out/target/ll.csv --out out/plots/map.svg",
      "plot --kind jsd_heatmap --input out/estimate/aggregated/trajectory.json --out out/plots/jsd.svg",
      "plot --kind gram_heatmap --input out/estimate/adjusted/gram.json --out out/plots/gram.svg"};
  std::string failure;
  for (const char* sub : {"a", "b"}) {
    fs::create_directories(root / sub);
    std::ofstream(root / sub / "cfg.json") << doc.dump(2);
    for (const auto& s : steps)
      if (failure.empty() && Shell(root / sub, s) != 0) failure = "'" + s + "' failed in run " + sub;
  }
  std::size_t count = 0;
  std::vector<std::string> differing;
  if (failure.empty()) {
    const auto a = Snapshot(root / "a"), b = Snapshot(root / "b");
    count = a.size();
    for (const auto& [path, content] : a)
      if (!b.count(path) || b.at(path) != content) differing.push_back(path);
    for (const auto& [path, content] : b)
      if (!a.count(path)) differing.push_back(path);
  }
  std::size_t svgs = 0;
  if (failure.empty())
    for (const auto& e : fs::recursive_directory_iterator(root / "a"))
      if (e.path().extension() == ".svg") ++svgs;
  const bool ok = failure.empty() && differing.empty() && count > 0;
  std::string detail = failure.empty() ? std::to_string(count) + " artifacts (" + std::to_string(svgs) +
                                             " SVGs) compared across two reruns, " +
                                             std::to_string(differing.size()) + " differ"
                                       : failure;
  if (!differing.empty()) detail += " (first: " + differing.front() + ")";
  Record(14, ok, "byte-identical reruns", detail);
  if (ok) fs::remove_all(root);
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  ClosedFormVsGrid();
  MirrorDescentEquivalence();
  AggregationTheorem();
  FirstOrderDynamics();
  GradientCorrectness();
  GeometryLayer();

  const std::string demo = ReadText(MIXALIGN_DEMO_CONFIG);
  std::vector<SeedRuns> seeds;
  for (std::uint64_t seed : {1u, 2u, 3u}) seeds.push_back(RunSeed(demo, seed));
  GroundTruthRecoveryCheck(seeds);
  AlignmentOrdering(seeds);
  DistillationOrdering(seeds);
  TemperatureAblation(seeds);
  TrajectorySeparationCheck(seeds.front());
  JsdBlocks(seeds);
  AggregationCorrelation(seeds);
  Reproducibility(demo);

  int unexpected = 0, passed = 0;
  for (const auto& o : outcomes) {
    if (o.pass) ++passed;
    else if (!kDocumentedFailures.count(o.id)) ++unexpected;
  }
  std::printf("%d/%zu criteria pass", passed, outcomes.size());
  for (const auto& o : outcomes)
    if (!o.pass && kDocumentedFailures.count(o.id)) std::printf("; criterion %d fails as documented", o.id);
  std::printf(" (%.0f s)\n", Seconds(t0));
  return unexpected == 0 ? 0 : 1;
}
