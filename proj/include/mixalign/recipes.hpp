#pragma once

// Training pipelines: the target-referencing first pass, the fixed-weight
// second pass, and the baselines, each producing a checkpoint trajectory
// and a KL-to-target curve.

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixalign/common.hpp"
#include "mixalign/corpus.hpp"
#include "mixalign/llspace.hpp"
#include "mixalign/mixopt.hpp"
#include "mixalign/tinylm.hpp"
#include "mixalign/weights.hpp"

namespace mixalign {

/// Steps at which domain weights are re-estimated.
struct EstimationSchedule {
  std::vector<std::int64_t> steps;
  std::int64_t total_steps = 0;

  /// 0, 1, 2, 4, ... up to dense_until, then every multiple of `every`.
  static EstimationSchedule Doubling(std::int64_t total_steps, std::int64_t dense_until,
                                     std::int64_t every) {
    Require(total_steps > 0 && every > 0, "EstimationSchedule: need total_steps > 0 and every > 0");
    EstimationSchedule s;
    s.total_steps = total_steps;
    s.steps.push_back(0);
    for (std::int64_t p = 1; p <= dense_until && p < total_steps; p *= 2) s.steps.push_back(p);
    for (std::int64_t m = (dense_until / every + 1) * every; m < total_steps; m += every)
      s.steps.push_back(m);
    return s;
  }

  void Validate() const {
    Require(!steps.empty() && steps.front() == 0, "EstimationSchedule: must start at step 0");
    for (std::size_t i = 1; i < steps.size(); ++i)
      Require(steps[i] > steps[i - 1], "EstimationSchedule: steps must be strictly increasing");
    Require(steps.back() < total_steps, "EstimationSchedule: steps must lie in [0, total_steps)");
  }

  bool Contains(std::int64_t step) const {
    return std::binary_search(steps.begin(), steps.end(), step);
  }
};

enum class Method { kUniform, kIterativeLld, kAdjustedLld, kAggregatedLld, kDistillKl, kDistillKlCe };

inline std::string MethodName(Method m) {
  switch (m) {
    case Method::kUniform: return "uniform";
    case Method::kIterativeLld: return "iterative_lld";
    case Method::kAdjustedLld: return "adjusted_lld";
    case Method::kAggregatedLld: return "aggregated_lld";
    case Method::kDistillKl: return "distill_kl";
    case Method::kDistillKlCe: return "distill_kl_ce";
  }
  return "?";
}

inline Method ParseMethod(const std::string& s) {
  for (Method m : {Method::kUniform, Method::kIterativeLld, Method::kAdjustedLld,
                   Method::kAggregatedLld, Method::kDistillKl, Method::kDistillKlCe})
    if (MethodName(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

inline bool IsDistill(Method m) { return m == Method::kDistillKl || m == Method::kDistillKlCe; }

/// A temperature: a fixed value, +inf, or a multiple of the spread
/// (max - min) of the base model's LL difference at step 0.
struct TauSpec {
  enum class Kind { kValue, kInf, kLldSpread } kind = Kind::kValue;
  double value = 1.0;

  static TauSpec Value(double v) { return {Kind::kValue, v}; }
  static TauSpec Inf() { return {Kind::kInf, kInf}; }
  static TauSpec Spread(double mult) { return {Kind::kLldSpread, mult}; }

  double Resolve(double spread) const {
    switch (kind) {
      case Kind::kInf: return kInf;
      case Kind::kValue: return value;
      case Kind::kLldSpread:
        Require(spread > 0.0, "TauSpec: LL difference spread is zero; use a fixed temperature");
        return value * spread;
    }
    return value;
  }
};

enum class OptimizerKind { kAdamW, kSgd };

struct TrainSettings {
  std::int64_t total_steps = 1000;
  int batch_windows = 4;
  int window_length = 64;
  LRSchedule lr{.warmup_steps = 100, .total_steps = 1000, .lr_max = 6e-4, .lr_min = 6e-5};
  AdamWParams adamw;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  std::int64_t checkpoint_every = 100;
  std::uint64_t data_seed = 0;

  void Validate() const {
    if (total_steps <= 0) throw ConfigError("training.total_steps must be positive");
    if (batch_windows <= 0 || window_length <= 0)
      throw ConfigError("training.batch_windows and training.window_length must be positive");
    if (checkpoint_every <= 0) throw ConfigError("training.checkpoint_every must be positive");
    if (lr.total_steps != total_steps)
      throw ConfigError("learning-rate schedule length differs from training.total_steps");
    lr.Validate();
  }

  bool IsCheckpoint(std::int64_t step) const {
    return step == 0 || step == total_steps || step % checkpoint_every == 0;
  }
};

using WeightsFn = std::function<DomainWeights(const ModelCheckpoint&)>;
using CheckpointFn = std::function<void(const ModelCheckpoint&)>;

/// Runs the optimizer from model.step up to settings.total_steps (or
/// stop_at, if given). The sampling RNG lives in model.rng_state, seeded
/// from settings.data_seed on a fresh model, so a saved checkpoint resumes
/// the exact data stream.
inline void Train(ModelCheckpoint& model, const std::vector<DomainCorpus>& corpora,
                  const TrainSettings& s, const WeightsFn& weights, const LossSpec& loss,
                  const CheckpointFn& on_checkpoint, std::int64_t stop_at = -1) {
  s.Validate();
  loss.Validate(model.config);
  Require(s.window_length <= model.config.context_length,
          "training window longer than the model context");
  Require(model.step <= s.total_steps, "Train: checkpoint is past the end of training");
  const std::int64_t end = stop_at < 0 ? s.total_steps : std::min(stop_at, s.total_steps);
  Rng rng = model.rng_state.empty() ? Rng(s.data_seed) : DeserializeRng(model.rng_state);
  const auto mask = ParamLayout(model.config).DecayMask(model.config);
  auto emit = [&] {
    model.rng_state = SerializeRng(rng);
    if (on_checkpoint) on_checkpoint(model);
  };
  if (model.step == 0) emit();
  std::vector<double> grad;
  while (model.step < end) {
    const DomainWeights pi = weights(model);
    Require(pi.size() == corpora.size(), "Train: weight vector and corpus count differ");
    // Each window draws its own domain, so a batch is an i.i.d. sample of
    // the mixture.
    TokenBatch batch;
    for (int w = 0; w < s.batch_windows; ++w) {
      const int k = SampleDomain(pi, rng);
      batch.domain_index = w == 0 || batch.domain_index == k ? k : -1;
      auto one = SampleBatch(corpora[static_cast<std::size_t>(k)], k,
                             static_cast<std::size_t>(s.window_length), 1, rng);
      batch.total_tokens += one.total_tokens;
      batch.sequences.push_back(std::move(one.sequences.front()));
    }
    const double lr = LrAt(s.lr, model.step);
    bool ascent;
    if (loss.kind == LossKind::kCrossEntropy) {
      grad = GradLogProb(model, batch).gradient;
      ascent = true;
    } else {
      grad = DistillGrad(model, *loss.teacher, batch, loss).gradient;
      ascent = false;
    }
    if (s.optimizer == OptimizerKind::kAdamW) {
      if (ascent)
        for (double& g : grad) g = -g;
      AdamWStepInPlace(model, grad, lr, s.adamw, mask);
    } else {
      const double sign = ascent ? 1.0 : -1.0;
      for (std::size_t i = 0; i < grad.size(); ++i) model.params[i] += sign * lr * grad[i];
      model.step += 1;
    }
    if (s.IsCheckpoint(model.step) || model.step == end) emit();
  }
}

/// Model scores on the evaluation corpus at one checkpoint.
inline TrajectoryPoint ScoreCheckpoint(const ModelCheckpoint& model, const EvalCorpus& eval,
                                       bool normalize = true) {
  const auto scores = ScoreEvalCorpus(model, eval);
  TrajectoryPoint p;
  p.step = model.step;
  p.ell = DomainLLFromScores(scores, eval, normalize);
  p.text_ll = TotalLL(scores);
  return p;
}

/// Records each checkpoint's evaluation scores, then forwards to `also`.
inline CheckpointFn Recorder(Trajectory& traj, const EvalCorpus& eval, CheckpointFn also = {}) {
  return [&traj, &eval, also](const ModelCheckpoint& m) {
    if (traj.points.empty() || traj.points.back().step < m.step) traj.Append(ScoreCheckpoint(m, eval));
    if (also) also(m);
  };
}

/// What the runs are aligned to: either a model (exact scores, usable as a
/// distillation teacher) or an imported table of its scores.
struct Target {
  std::string id;
  std::optional<ModelCheckpoint> model;
  DomainLLVector ell;
  std::vector<double> text_ll;  // empty when only domain means are known

  static Target FromModel(std::string id, ModelCheckpoint m, const EvalCorpus& eval) {
    Target t;
    t.id = std::move(id);
    auto p = ScoreCheckpoint(m, eval);
    t.ell = std::move(p.ell);
    t.ell.source_model = t.id;
    t.text_ll = std::move(p.text_ll);
    t.model = std::move(m);
    return t;
  }
};

enum class LldRule { kRaw, kAdjusted };

struct FirstPassResult {
  WeightTrajectory weights;
  DomainWeights pi_star;
  ModelCheckpoint trained;
  Trajectory trajectory;
  std::vector<double> ridge_used;  // per estimation step, adjusted rule only
};

/// Gram matrix scaled to unit mean diagonal, so the adjusted rule's
/// temperature is on the same scale as the raw rule's.
inline Eigen::MatrixXd UnitDiagonalScale(const Eigen::MatrixXd& gram) {
  const double mean_diag = gram.trace() / static_cast<double>(gram.rows());
  Require(mean_diag > 0.0, "domain Gram matrix has zero trace");
  return gram / mean_diag;
}

/// Trains from `base`, re-estimating weights against the target at every
/// schedule step and holding them in between; aggregates the estimates.
inline FirstPassResult FirstPass(const ModelCheckpoint& base, const DomainLLVector& target_ll,
                                 const std::vector<DomainCorpus>& corpora, const EvalCorpus& eval,
                                 const EstimationSchedule& schedule, double tau, LldRule rule,
                                 const TrainSettings& settings, double ridge = 0.0,
                                 const CheckpointFn& also = {}) {
  schedule.Validate();
  Require(schedule.total_steps == settings.total_steps,
          "FirstPass: schedule and training lengths differ");
  Require(target_ll.eval_digest == eval.digest(),
          "FirstPass: target LL vector was computed on a different evaluation corpus");
  Require(target_ll.K() == eval.K(), "FirstPass: target K differs from evaluation corpus K");
  Require(base.step == 0, "FirstPass: base model must be at step 0");
  FirstPassResult r;
  r.trained = base;
  std::optional<DomainWeights> current;
  WeightsFn weights = [&](const ModelCheckpoint& m) -> DomainWeights {
    if (schedule.Contains(m.step) || !current) {
      DomainWeights w;
      if (rule == LldRule::kAdjusted) {
        const auto g = GramMatrix(m, eval, target_ll.normalized);
        const auto diff = Lld(target_ll, g.ell);
        auto adj = AdjustedLldWeights(diff, UnitDiagonalScale(g.gram), tau, ridge, eval.labels);
        r.ridge_used.push_back(adj.ridge_used);
        w = std::move(adj.weights);
      } else {
        const auto diff = Lld(target_ll, ComputeDomainLL(m, eval, target_ll.normalized));
        w = RawLldWeights(diff, tau, eval.labels);
      }
      r.weights.Append(m.step, w);
      current = std::move(w);
    }
    return *current;
  };
  Train(r.trained, corpora, settings, weights, LossSpec{}, Recorder(r.trajectory, eval, also));
  r.pi_star = AggregateGeometric(r.weights);
  return r;
}

struct SecondPassResult {
  ModelCheckpoint trained;
  Trajectory trajectory;
};

/// Trains from `base` under fixed weights. Takes no target.
inline SecondPassResult SecondPass(const ModelCheckpoint& base, const DomainWeights& pi_star,
                                   const std::vector<DomainCorpus>& corpora, const EvalCorpus& eval,
                                   const TrainSettings& settings, const CheckpointFn& also = {},
                                   const LossSpec& loss = {}, std::int64_t stop_at = -1) {
  SecondPassResult r;
  r.trained = base;
  Train(r.trained, corpora, settings, [&](const ModelCheckpoint&) { return pi_star; }, loss,
        Recorder(r.trajectory, eval, also), stop_at);
  return r;
}

struct KlCurve {
  std::vector<std::pair<std::int64_t, double>> points;
  std::string metric;  // "kl_bits_per_byte" or "l2_domain_ll"
};

/// Distance of each checkpoint to the target. With text-level target rows,
/// the checkpoints and the target are double-centered together and the KL
/// estimate is reported in bits per byte; otherwise the L2 distance of
/// domain LL vectors is reported instead.
inline KlCurve ComputeKlCurve(const Trajectory& traj, const Target& target, const EvalCorpus& eval) {
  KlCurve c;
  if (target.text_ll.empty()) {
    c.metric = "l2_domain_ll";
    for (const auto& p : traj.points) {
      const auto d = Lld(target.ell, p.ell);
      double s = 0.0;
      for (double x : d) s += x * x;
      c.points.emplace_back(p.step, std::sqrt(s));
    }
    return c;
  }
  c.metric = "kl_bits_per_byte";
  TextLLMatrix m;
  m.cols = TextIds(eval);
  m.AddRow("target", target.text_ll);
  for (const auto& p : traj.points) m.AddRow("step" + std::to_string(p.step), p.text_ll);
  const auto q = DoubleCenter(m);
  for (const auto& p : traj.points)
    c.points.emplace_back(p.step, KlEstimate(q, "step" + std::to_string(p.step), "target", eval,
                                             KlUnits::kBitsPerByte));
  return c;
}

struct RunConfig {
  std::string run_id;
  Method method = Method::kUniform;
  TauSpec tau = TauSpec::Spread(1.0);
  EstimationSchedule schedule;
  TrainSettings train;
  double ridge = 0.0;
  std::uint64_t seed = 0;  // reported; data_seed lives in `train`
  std::string config_digest;
};

struct RunReport {
  std::string run_id;
  std::string method;
  double tau = kInf;
  std::uint64_t seed = 0;
  std::vector<std::string> labels;
  double final_kl = 0.0;
  KlCurve kl_curve;
  WeightTrajectory weight_trajectory;
  std::optional<DomainWeights> pi_star;
  std::string eval_digest;
  std::string target_id;
  std::string config_digest;
  double wallclock_seconds = 0.0;  // kept out of serialized reports
};

struct RunResult {
  RunReport report;
  Trajectory trajectory;
  ModelCheckpoint final_model;
};

/// Spread max - min of the base model's LL difference to the target.
inline double LldSpread(const ModelCheckpoint& base, const Target& target, const EvalCorpus& eval) {
  const auto diff = Lld(target.ell, ComputeDomainLL(base, eval, target.ell.normalized));
  return *std::max_element(diff.begin(), diff.end()) - *std::min_element(diff.begin(), diff.end());
}

/// Distillation needs next-token distributions over the student's own
/// vocabulary, which only a checkpoint target provides.
inline void RequireTeacher(Method method, const Target& target) {
  if (IsDistill(method) && !target.model)
    throw PreconditionError(MethodName(method) +
                            " needs the target model itself: distillation requires teacher and "
                            "student to share the same tokenizer, and an imported LL table "
                            "provides no next-token distributions");
}

/// Runs one method end to end and scores its checkpoints against the target.
inline RunResult RunMethod(const RunConfig& cfg, const ModelCheckpoint& base, const Target& target,
                           const std::vector<DomainCorpus>& corpora, const EvalCorpus& eval,
                           const CheckpointFn& also = {}) {
  const auto start = std::chrono::steady_clock::now();
  Require(target.ell.eval_digest == eval.digest(),
          "RunMethod: target scores were computed on a different evaluation corpus");
  RequireTeacher(cfg.method, target);
  RunResult out;
  RunReport& rep = out.report;
  rep.run_id = cfg.run_id;
  rep.method = MethodName(cfg.method);
  rep.seed = cfg.seed;
  rep.labels = eval.labels;
  rep.eval_digest = eval.digest();
  rep.target_id = target.id;
  rep.config_digest = cfg.config_digest;
  const auto uniform = DomainWeights::Uniform(eval.labels);
  const bool lld = cfg.method == Method::kIterativeLld || cfg.method == Method::kAdjustedLld ||
                   cfg.method == Method::kAggregatedLld;
  rep.tau = lld ? cfg.tau.Resolve(cfg.tau.kind == TauSpec::Kind::kLldSpread
                                      ? LldSpread(base, target, eval)
                                      : 0.0)
                : kInf;

  if (lld) {
    const auto rule = cfg.method == Method::kAdjustedLld ? LldRule::kAdjusted : LldRule::kRaw;
    if (cfg.method == Method::kAggregatedLld) {
      auto fp = FirstPass(base, target.ell, corpora, eval, cfg.schedule, rep.tau, rule, cfg.train,
                          cfg.ridge);
      rep.weight_trajectory = std::move(fp.weights);
      rep.pi_star = fp.pi_star;
      auto sp = SecondPass(base, fp.pi_star, corpora, eval, cfg.train, also);
      out.trajectory = std::move(sp.trajectory);
      out.final_model = std::move(sp.trained);
    } else {
      auto fp = FirstPass(base, target.ell, corpora, eval, cfg.schedule, rep.tau, rule, cfg.train,
                          cfg.ridge, also);
      rep.weight_trajectory = std::move(fp.weights);
      out.trajectory = std::move(fp.trajectory);
      out.final_model = std::move(fp.trained);
    }
  } else {
    LossSpec loss;
    if (IsDistill(cfg.method)) {
      loss.kind = cfg.method == Method::kDistillKl ? LossKind::kDistillKl : LossKind::kDistillKlPlusCe;
      loss.teacher = &*target.model;
    }
    for (auto s : cfg.schedule.steps) rep.weight_trajectory.Append(s, uniform);
    if (cfg.method == Method::kUniform) rep.pi_star = uniform;
    auto sp = SecondPass(base, uniform, corpora, eval, cfg.train, also, loss);
    out.trajectory = std::move(sp.trajectory);
    out.final_model = std::move(sp.trained);
  }
  rep.kl_curve = ComputeKlCurve(out.trajectory, target, eval);
  rep.final_kl = rep.kl_curve.points.back().second;
  rep.wallclock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// KL(weights || truth) for the estimate and for uniform weights.
struct Recovery {
  double kl_estimate_vs_truth = 0.0;
  double kl_uniform_vs_truth = 0.0;
};

inline Recovery GroundTruthRecovery(const DomainWeights& pi_star, const DomainWeights& truth) {
  Require(pi_star.labels() == truth.labels(), "GroundTruthRecovery: label mismatch");
  return {KlSimplex(pi_star, truth), KlSimplex(DomainWeights::Uniform(truth.labels()), truth)};
}

/// Multiplies selected domains' weights and renormalizes.
inline DomainWeights BoostMixture(const DomainWeights& base, const std::map<std::string, double>& boost) {
  std::vector<double> mass = base.values();
  for (const auto& [label, factor] : boost) {
    auto it = std::find(base.labels().begin(), base.labels().end(), label);
    if (it == base.labels().end()) throw ConfigError("boost names unknown domain '" + label + "'");
    if (!(factor >= 0.0 && std::isfinite(factor)))
      throw ConfigError("boost factor for '" + label + "' must be finite and nonnegative");
    mass[static_cast<std::size_t>(it - base.labels().begin())] *= factor;
  }
  return DomainWeights::Normalize(mass, base.labels());
}

struct SkewedTarget {
  ModelCheckpoint model;
  DomainWeights ground_truth;
};

/// Trains `init` on the boosted mixture; the mixture is the exact ground
/// truth for weight recovery.
inline SkewedTarget MakeSkewedTarget(const ModelCheckpoint& init, const DomainWeights& base_mixture,
                                     const std::map<std::string, double>& boost,
                                     const std::vector<DomainCorpus>& corpora,
                                     const TrainSettings& settings) {
  SkewedTarget t{init, BoostMixture(base_mixture, boost)};
  Train(t.model, corpora, settings, [&](const ModelCheckpoint&) { return t.ground_truth; }, LossSpec{},
        {});
  return t;
}

}  // namespace mixalign
