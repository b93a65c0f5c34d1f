// mixalign command-line driver.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mixalign/config.hpp"
#include "mixalign/io.hpp"
#include "mixalign/svg.hpp"

namespace fs = std::filesystem;
using namespace mixalign;
using io::Json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kOverwrite = 3, kPrecondition = 4 };

Json Provenance(const ExperimentConfig& c) {
  return Json{{"config_digest", c.digest}, {"seeds", Json{{"seed", c.seed}, {"corpus_seed", c.corpus_seed}}}};
}

std::string Meta(const ExperimentConfig& c) {
  return "config_digest=" + c.digest + " seed=" + std::to_string(c.seed) +
         " corpus_seed=" + std::to_string(c.corpus_seed);
}

struct Workspace {
  ExperimentConfig cfg;
  fs::path root;
  std::vector<DomainCorpus> corpora;
  EvalCorpus eval;

  fs::path CorpusDir() const { return root / "corpus"; }
  fs::path TargetDir() const { return root / "target"; }
};

Workspace Open(const std::string& config_path, bool need_corpus = true) {
  Workspace w;
  w.cfg = LoadExperimentConfig(config_path);
  w.root = w.cfg.output_dir;
  if (!need_corpus) return w;
  const fs::path manifest = w.CorpusDir() / "manifest.json";
  if (!fs::exists(manifest))
    throw InputError("no corpus at '" + w.CorpusDir().string() + "'; run gen-corpus first");
  const Json m = io::ReadJson(manifest);
  if (m.value("provenance", Json::object()).value("corpus_digest", "") != w.cfg.corpus_digest)
    throw ConfigError("corpus at '" + w.CorpusDir().string() +
                      "' was generated from a different corpus section; rerun gen-corpus --force");
  w.corpora = io::ReadCorpora(w.CorpusDir());
  w.eval = io::EvalFromJson(io::ReadJson(w.CorpusDir() / "eval.json"), w.corpora);
  return w;
}

ModelCheckpoint LoadBase(const Workspace& w, const std::string& path) {
  if (path.empty()) return BaseModel(w.cfg);
  auto m = io::ReadCheckpoint(path);
  if (!(m.config == w.cfg.model)) throw ConfigError("base checkpoint architecture differs from the config's model");
  if (m.step != 0) throw ConfigError("base checkpoint must be at step 0");
  return m;
}

Target LoadTarget(const Workspace& w, const std::string& path, const std::string& model_id) {
  if (!path.empty() && fs::path(path).extension() == ".csv") {
    const auto rows = io::DecodeLlTable(io::ReadFile(path), path);
    std::string id = model_id;
    if (id.empty()) {
      std::set<std::string> ids;
      for (const auto& r : rows) ids.insert(r.model_id);
      if (ids.size() != 1) throw ConfigError("LL table '" + path + "' holds several models; pass --target-model");
      id = *ids.begin();
    }
    return io::TargetFromLlTable(rows, id, w.eval);
  }
  const fs::path p = path.empty() ? w.TargetDir() / "model.mxk" : fs::path(path);
  if (!fs::exists(p)) throw InputError("no target checkpoint at '" + p.string() + "'; run train-target first");
  return Target::FromModel(path.empty() ? "target" : p.stem().string(), io::ReadCheckpoint(p), w.eval);
}

void CheckFresh(const fs::path& p, bool force) {
  if (fs::exists(p) && !force)
    throw OverwriteError("'" + p.string() + "' exists; pass --force to overwrite");
}

std::string CheckpointName(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%07lld.mxk", static_cast<long long>(step));
  return buf;
}

std::string Format(double x, int digits = 4) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, x);
  return buf;
}

std::string WeightsLine(const DomainWeights& w) {
  std::string s;
  for (std::size_t k = 0; k < w.size(); ++k) s += (k ? " " : "") + w.labels()[k] + "=" + Format(w[k]);
  return s;
}

std::string ReportMethodFor(const std::string& weights_method) {
  static const std::map<std::string, std::string> names{{"aggregated", "aggregated_lld"},
                                                        {"adjusted", "adjusted_lld"},
                                                        {"raw", "raw_lld"},
                                                        {"uniform", "uniform"},
                                                        {"ground_truth", "ground_truth"}};
  auto it = names.find(weights_method);
  if (it == names.end()) throw ConfigError("weights file has unknown method '" + weights_method + "'");
  return it->second;
}

// ---------------------------------------------------------------------------

int GenCorpus(const std::string& config, bool force) {
  auto w = Open(config, false);
  CheckFresh(w.CorpusDir() / "manifest.json", force);
  const auto corpora = GenerateCorpora(w.cfg);
  const auto eval = BuildEval(w.cfg, corpora);
  Json prov = Provenance(w.cfg);
  prov["corpus_digest"] = w.cfg.corpus_digest;
  io::WriteCorpora(w.CorpusDir(), corpora, prov, true);
  Json e = io::EvalToJson(eval);
  e["provenance"] = prov;
  io::WriteFile(w.CorpusDir() / "eval.json", io::Dump(e), true);
  for (const auto& c : corpora)
    std::cout << c.spec.name << ": " << c.train_tokens.size() << " train bytes, " << c.heldout_tokens.size()
              << " held-out bytes\n";
  std::cout << "eval: " << eval.N() << " texts, digest " << eval.digest() << "\n";
  return kOk;
}

int TrainTargetCmd(const std::string& config, bool force) {
  auto w = Open(config);
  CheckFresh(w.TargetDir() / "model.mxk", force);
  const auto t = TrainTarget(w.cfg, w.corpora);
  io::WriteCheckpoint(w.TargetDir() / "model.mxk", t.model, true);
  io::WeightsFile truth{t.ground_truth, kInf, "ground_truth", {}};
  io::WriteFile(w.TargetDir() / "truth.json", io::Dump(io::WeightsToJson(truth, Provenance(w.cfg))), true);
  const auto p = ScoreCheckpoint(t.model, w.eval);
  std::vector<io::LlRow> rows;
  io::AppendLlRows(rows, "target", p.text_ll, w.eval);
  io::WriteFile(w.TargetDir() / "ll.csv", io::EncodeLlTable(rows), true);
  std::cout << "target trained for " << t.model.step << " steps on " << WeightsLine(t.ground_truth) << "\n";
  return kOk;
}

struct EstimateArgs {
  std::string config, base, target, target_model, method = "aggregated", tau = "spread:1", out;
  std::int64_t steps = -1;
  bool force = false;
};

int Estimate(const EstimateArgs& a) {
  auto w = Open(a.config);
  if (a.method != "uniform" && a.method != "raw" && a.method != "aggregated" && a.method != "adjusted")
    throw ConfigError("--method must be one of uniform, raw, aggregated, adjusted");
  const fs::path out = a.out.empty() ? w.root / "estimate" / a.method : fs::path(a.out);
  CheckFresh(out / "weights.json", a.force);
  const auto base = LoadBase(w, a.base);
  const auto settings = RunSettings(w.cfg, a.steps);
  const auto schedule = Schedule(w.cfg, settings.total_steps);
  const auto labels = w.eval.labels;

  WeightTrajectory traj;
  DomainWeights pi;
  double tau = kInf;
  std::vector<double> ridges;
  if (a.method == "uniform") {
    pi = DomainWeights::Uniform(labels);
    traj.Append(0, pi);
  } else {
    const auto target = LoadTarget(w, a.target, a.target_model);
    const TauSpec spec = ParseTau(a.tau);
    tau = spec.Resolve(spec.kind == TauSpec::Kind::kLldSpread ? LldSpread(base, target, w.eval) : 0.0);
    if (a.method == "raw") {
      pi = RawLldWeights(Lld(target.ell, ComputeDomainLL(base, w.eval, target.ell.normalized)), tau, labels);
      traj.Append(0, pi);
    } else {
      auto fp = FirstPass(base, target.ell, w.corpora, w.eval, schedule, tau,
                          a.method == "adjusted" ? LldRule::kAdjusted : LldRule::kRaw, settings, w.cfg.ridge);
      traj = std::move(fp.weights);
      pi = fp.pi_star;
      ridges = fp.ridge_used;
    }
  }
  const Json prov = Provenance(w.cfg);
  io::WeightsFile wf{pi, tau, a.method, traj.steps()};
  io::WriteFile(out / "weights.json", io::Dump(io::WeightsToJson(wf, prov)), true);

  Json tj = io::TrajectoryToJson(traj);
  tj["method"] = a.method;
  tj["tau"] = io::DoubleToJson(tau);
  tj["ridge_used"] = ridges;
  tj["pi_star"] = pi.values();
  tj["provenance"] = prov;
  io::WriteFile(out / "trajectory.json", io::Dump(tj), true);

  const auto g = GramMatrix(base, w.eval);
  const Eigen::MatrixXd scaled = UnitDiagonalScale(g.gram);
  Json gj{{"labels", labels}, {"step", g.model_step}, {"ridge", w.cfg.ridge}, {"normalized", g.normalized}};
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < scaled.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(scaled.cols()));
    for (Eigen::Index j = 0; j < scaled.cols(); ++j) r[static_cast<std::size_t>(j)] = scaled(i, j);
    rows.push_back(r);
  }
  gj["gram_unit_diagonal"] = rows;
  gj["provenance"] = prov;
  io::WriteFile(out / "gram.json", io::Dump(gj), true);

  std::vector<svg::Bars> bars{{a.method, pi.values()},
                              {"uniform", DomainWeights::Uniform(labels).values()}};
  const fs::path truth = w.TargetDir() / "truth.json";
  if (a.target.empty() && fs::exists(truth))
    bars.push_back({"ground truth", io::WeightsFromJson(io::ReadJson(truth), truth.string()).weights.values()});
  io::WriteFile(out / "weight_bars.svg", svg::BarChart("Domain weights", labels, bars, "weight", Meta(w.cfg)), true);

  std::cout << "weights (" << a.method << ", tau " << FormatDouble(tau) << "): " << WeightsLine(pi) << "\n";
  std::cout << "wrote " << (out / "weights.json").string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config, weights, method, tau = "spread:1", run_id, base, target, target_model;
  std::int64_t steps = -1, stop_after = -1;
  bool resume = false, force = false;
};

void WriteRunArtifacts(const Workspace& w, const fs::path& dir, const RunReport& rep, const Trajectory& traj) {
  io::WriteFile(dir / "report.json", io::Dump(io::ReportToJson(rep, Provenance(w.cfg))), true);
  io::WriteFile(dir / "timing.json",
                io::Dump(Json{{"run_id", rep.run_id}, {"wallclock_seconds", rep.wallclock_seconds}}), true);
  std::vector<io::LlRow> rows;
  for (const auto& p : traj.points) io::AppendLlRows(rows, rep.run_id + "@" + std::to_string(p.step), p.text_ll, w.eval);
  io::WriteFile(dir / "ll.csv", io::EncodeLlTable(rows), true);
}

int TrainCmd(const TrainArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  auto w = Open(a.config);
  if (a.weights.empty() == a.method.empty()) throw ConfigError("pass exactly one of --weights or --method");
  std::optional<io::WeightsFile> wf;
  Method method = Method::kUniform;
  if (!a.weights.empty()) {
    wf = io::WeightsFromJson(io::ReadJson(a.weights), a.weights);
    if (wf->weights.labels() != w.eval.labels) throw ConfigError("weights file labels differ from the corpus domains");
  } else {
    method = ParseMethod(a.method);
  }
  const bool fixed = wf || method == Method::kUniform || IsDistill(method);
  if (!fixed && (a.resume || a.stop_after >= 0))
    throw ConfigError("--resume and --stop-after apply to fixed-weight runs (weights file, uniform, distillation)");
  const std::string run_id =
      !a.run_id.empty() ? a.run_id : wf ? ReportMethodFor(wf->method) : MethodName(method);
  if (run_id.empty() || run_id.find_first_of("/\\,@") != std::string::npos)
    throw ConfigError("run id '" + run_id + "' must be nonempty without '/', ',', or '@'");
  const fs::path dir = w.root / "runs" / run_id;
  const fs::path ckdir = dir / "checkpoints";
  if (a.resume) {
    if (!fs::exists(ckdir)) throw InputError("nothing to resume in '" + dir.string() + "'");
  } else if (fs::exists(dir)) {
    if (!a.force) throw OverwriteError("'" + dir.string() + "' exists; pass --force to overwrite or --resume");
    fs::remove_all(dir);
  }

  const auto target = LoadTarget(w, a.target, a.target_model);
  const auto base = LoadBase(w, a.base);
  MethodSpec spec{run_id, method, ParseTau(a.tau)};
  RunConfig rc = MakeRunConfig(w.cfg, spec, a.steps);
  auto saver = [&](const ModelCheckpoint& m) { io::WriteCheckpoint(ckdir / CheckpointName(m.step), m, true); };

  RunResult res;
  if (!fixed) {
    res = RunMethod(rc, base, target, w.corpora, w.eval, saver);
  } else {
    RequireTeacher(method, target);
    const DomainWeights pi = wf ? wf->weights : DomainWeights::Uniform(w.eval.labels);
    LossSpec loss;
    if (IsDistill(method)) {
      loss.kind = method == Method::kDistillKl ? LossKind::kDistillKl : LossKind::kDistillKlPlusCe;
      loss.teacher = &*target.model;
    }
    ModelCheckpoint model = base;
    Trajectory traj;
    if (a.resume) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(ckdir))
        if (e.path().extension() == ".mxk") files.push_back(e.path());
      if (files.empty()) throw InputError("no checkpoints in '" + ckdir.string() + "'");
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        auto m = io::ReadCheckpoint(f);
        if (rc.train.IsCheckpoint(m.step)) traj.Append(ScoreCheckpoint(m, w.eval));
      }
      model = io::ReadCheckpoint(files.back());
      if (!(model.config == w.cfg.model)) throw ConfigError("checkpoint architecture differs from the config");
      std::cout << "resuming " << run_id << " from step " << model.step << "\n";
    }
    Train(model, w.corpora, rc.train, [&](const ModelCheckpoint&) { return pi; }, loss,
          Recorder(traj, w.eval, saver), a.stop_after);
    if (model.step < rc.train.total_steps) {
      std::cout << "stopped " << run_id << " at step " << model.step << "; continue with --resume\n";
      return kOk;
    }
    RunReport& rep = res.report;
    rep.run_id = run_id;
    rep.method = wf ? ReportMethodFor(wf->method) : MethodName(method);
    rep.tau = wf ? wf->tau : kInf;
    rep.seed = w.cfg.seed;
    rep.labels = w.eval.labels;
    rep.eval_digest = w.eval.digest();
    rep.target_id = target.id;
    rep.config_digest = w.cfg.digest;
    for (auto s : rc.schedule.steps) rep.weight_trajectory.Append(s, pi);
    if (wf || method == Method::kUniform) rep.pi_star = pi;
    rep.kl_curve = ComputeKlCurve(traj, target, w.eval);
    rep.final_kl = rep.kl_curve.points.back().second;
    res.trajectory = std::move(traj);
    res.final_model = std::move(model);
  }
  res.report.wallclock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  WriteRunArtifacts(w, dir, res.report, res.trajectory);
  std::cout << run_id << ": final " << res.report.kl_curve.metric << " " << Format(res.report.final_kl, 5)
            << " (tau " << FormatDouble(res.report.tau) << ")\n";
  std::cout << "wrote " << (dir / "report.json").string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

std::vector<RunReport> LoadReports(const std::vector<std::string>& paths) {
  std::vector<RunReport> out;
  for (const auto& p : paths) out.push_back(io::ReportFromJson(io::ReadJson(p), p));
  return out;
}

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string Verdict(const std::vector<RunReport>& reports) {
  std::vector<std::size_t> order(reports.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return reports[a].final_kl < reports[b].final_kl; });
  std::string ranking;
  bool all_tied = true;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& r = reports[order[i]];
    if (i) {
      const bool tie = r.final_kl == reports[order[i - 1]].final_kl &&
                       r.kl_curve.points == reports[order[i - 1]].kl_curve.points;
      all_tied = all_tied && tie;
      ranking += tie ? " = " : " < ";
    }
    ranking += r.run_id + " (" + Format(r.final_kl, 5) + ")";
  }
  std::string out = all_tied ? "verdict: tie\n" : "verdict: " + ranking + "\n";

  // Expected final-KL ordering chains, checked on per-method medians.
  std::map<std::string, std::vector<double>> by_method;
  for (const auto& r : reports) by_method[r.method].push_back(r.final_kl);
  const std::vector<std::vector<std::string>> chains{
      {"distill_kl_ce", "distill_kl", "aggregated_lld", "uniform"}, {"adjusted_lld", "iterative_lld", "uniform"}};
  int checked = 0;
  std::string failures;
  for (const auto& chain : chains)
    for (std::size_t i = 0; i < chain.size(); ++i)
      for (std::size_t j = i + 1; j < chain.size(); ++j) {
        if (!by_method.count(chain[i]) || !by_method.count(chain[j])) continue;
        const double lo = Median(by_method[chain[i]]), hi = Median(by_method[chain[j]]);
        ++checked;
        if (lo > hi) failures += "  " + chain[i] + " (" + Format(lo, 5) + ") > " + chain[j] + " (" + Format(hi, 5) + ")\n";
      }
  if (checked == 0) return out + "expected ordering: no comparable methods\n";
  out += std::string("expected ordering: ") + (failures.empty() ? "PASS" : "FAIL") + " (" +
         std::to_string(checked) + " pairs checked)\n";
  return out + failures;
}

std::string KlCurveSvg(const std::vector<RunReport>& reports, const std::string& meta) {
  std::vector<svg::Series> series;
  for (const auto& r : reports) {
    svg::Series s{r.run_id, {}};
    for (const auto& [step, kl] : r.kl_curve.points) s.points.emplace_back(static_cast<double>(step), kl);
    series.push_back(std::move(s));
  }
  const std::string unit = reports.front().kl_curve.metric == "kl_bits_per_byte" ? "KL to target (bits/byte)"
                                                                                  : "L2 distance of domain LL";
  return svg::LineChart("Distance to the target over training", "step", unit, series, meta, true);
}

std::string ReportsMeta(const std::vector<RunReport>& reports) {
  std::set<std::string> digests, seeds;
  for (const auto& r : reports) {
    digests.insert(r.config_digest);
    seeds.insert(std::to_string(r.seed));
  }
  std::string s = "config_digest=";
  for (const auto& d : digests) s += d + (d == *digests.rbegin() ? "" : ",");
  s += " seeds=";
  for (const auto& d : seeds) s += d + (d == *seeds.rbegin() ? "" : ",");
  return s;
}

int Compare(const std::vector<std::string>& paths, const std::string& out_dir, bool force) {
  if (paths.size() < 2) throw ConfigError("compare needs at least two reports");
  const auto reports = LoadReports(paths);
  for (const auto& r : reports) {
    if (r.eval_digest != reports.front().eval_digest)
      throw ConfigError("reports '" + r.run_id + "' and '" + reports.front().run_id +
                        "' were scored on different evaluation corpora (eval digests differ)");
    if (r.target_id != reports.front().target_id || r.kl_curve.metric != reports.front().kl_curve.metric)
      throw ConfigError("reports '" + r.run_id + "' and '" + reports.front().run_id + "' use different targets");
  }
  const fs::path out = out_dir;
  CheckFresh(out / "compare.csv", force);
  const std::string verdict = Verdict(reports);
  io::WriteFile(out / "compare.csv", io::EncodeCompareCsv(reports), true);
  io::WriteFile(out / "kl_curve.svg", KlCurveSvg(reports, ReportsMeta(reports)), true);
  io::WriteFile(out / "verdict.txt", verdict, true);
  std::cout << io::EncodeCompareCsv(reports) << verdict;
  return kOk;
}

// ---------------------------------------------------------------------------

std::string InputsMeta(const std::vector<std::string>& inputs) {
  Digest d;
  std::string cfg;
  for (const auto& p : inputs) {
    const std::string text = io::ReadFile(p);
    d.Update(text);
    if (cfg.empty() && fs::path(p).extension() == ".json") {
      const Json j = io::ParseJson(text, p);
      if (j.contains("provenance")) cfg = j["provenance"].value("config_digest", "");
      else if (j.contains("config_digest")) cfg = j.value("config_digest", "");
    }
  }
  return "config_digest=" + (cfg.empty() ? std::string("none") : cfg) + " inputs_digest=" + d.hex();
}

WeightTrajectory TrajectoryInput(const std::string& path) {
  const Json j = io::ReadJson(path);
  if (j.contains("entries")) return io::TrajectoryFromJson(j, path);
  if (j.contains("weight_trajectory")) return io::TrajectoryFromJson(j.at("weight_trajectory"), path);
  throw ConfigError("'" + path + "' holds no weight trajectory");
}

int Plot(const std::string& kind, const std::vector<std::string>& inputs, const std::string& out, bool force) {
  static const std::set<std::string> kinds{"kl_curve", "weight_bars", "model_map", "jsd_heatmap", "gram_heatmap"};
  if (!kinds.count(kind)) throw ConfigError("unknown plot kind '" + kind + "'");
  if (inputs.empty()) throw ConfigError("plot needs at least one --input");
  for (const auto& p : inputs)
    if (!fs::exists(p)) throw ConfigError("input '" + p + "' does not exist");
  CheckFresh(out, force);
  const std::string meta = InputsMeta(inputs);
  std::string doc;
  auto expect_ext = [&](const char* ext) {
    for (const auto& p : inputs)
      if (fs::path(p).extension() != ext)
        throw ConfigError("plot kind '" + kind + "' expects " + ext + " inputs, got '" + p + "'");
  };
  if (kind == "kl_curve") {
    expect_ext(".json");
    std::vector<RunReport> reports;
    for (const auto& p : inputs) {
      const Json j = io::ReadJson(p);
      if (!j.contains("kl_curve")) throw ConfigError("'" + p + "' is not a run report");
      reports.push_back(io::ReportFromJson(j, p));
    }
    doc = KlCurveSvg(reports, meta);
  } else if (kind == "weight_bars") {
    expect_ext(".json");
    std::vector<svg::Bars> bars;
    std::vector<std::string> labels;
    for (const auto& p : inputs) {
      const Json j = io::ReadJson(p);
      if (!j.contains("values")) throw ConfigError("'" + p + "' is not a weights file");
      const auto wf = io::WeightsFromJson(j, p);
      if (labels.empty()) labels = wf.weights.labels();
      if (wf.weights.labels() != labels) throw ConfigError("weights files disagree on domain labels");
      bars.push_back({wf.method, wf.weights.values()});
    }
    doc = svg::BarChart("Domain weights", labels, bars, "weight", meta);
  } else if (kind == "jsd_heatmap") {
    if (inputs.size() != 1) throw ConfigError("jsd_heatmap takes one trajectory input");
    expect_ext(".json");
    const auto traj = TrajectoryInput(inputs.front());
    std::vector<std::string> steps;
    for (auto s : traj.steps()) steps.push_back(std::to_string(s));
    doc = svg::Heatmap("Pairwise JSD of estimated weights", steps, steps, JsdMatrix(traj), meta);
  } else if (kind == "gram_heatmap") {
    if (inputs.size() != 1) throw ConfigError("gram_heatmap takes one gram input");
    expect_ext(".json");
    const Json j = io::ReadJson(inputs.front());
    if (!j.contains("gram_unit_diagonal")) throw ConfigError("'" + inputs.front() + "' is not a gram file");
    const auto labels = j.at("labels").get<std::vector<std::string>>();
    const auto rows = j.at("gram_unit_diagonal").get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd g(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != labels.size()) throw ConfigError("gram file is not square");
      for (std::size_t k = 0; k < labels.size(); ++k)
        g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    auto [inv, ridge] = AdjustmentMatrix(g, j.at("ridge").get<double>());
    std::vector<std::vector<double>> m(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
      for (std::size_t k = 0; k < labels.size(); ++k)
        m[i].push_back(inv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    doc = svg::Heatmap("|(G + " + Format(ridge, 6) + " I)^-1|, G unit mean diagonal", labels, labels, m, meta);
  } else {  // model_map
    expect_ext(".csv");
    std::vector<io::LlRow> rows;
    for (const auto& p : inputs) {
      auto r = io::DecodeLlTable(io::ReadFile(p), p);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    // Models keyed by id, texts by id; only texts scored by every model.
    std::map<std::string, std::map<std::string, double>> scores;
    std::vector<std::string> models;
    for (const auto& r : rows) {
      if (r.text_id == "*") continue;
      if (!scores.count(r.model_id)) models.push_back(r.model_id);
      scores[r.model_id][r.text_id] = r.total_ll;
    }
    if (models.size() < 3) throw ConfigError("model_map needs text-level rows for at least 3 models");
    std::vector<std::string> texts;
    for (const auto& [t, v] : scores[models.front()]) {
      bool everywhere = true;
      for (const auto& m : models) everywhere = everywhere && scores[m].count(t);
      if (everywhere) texts.push_back(t);
    }
    TextLLMatrix mat;
    mat.cols = texts;
    for (const auto& m : models) {
      std::vector<double> v;
      for (const auto& t : texts) v.push_back(scores[m][t]);
      mat.AddRow(m, v);
    }
    const auto proj = PcaProject(DoubleCenter(mat));
    std::vector<svg::Series> series;
    std::map<std::string, std::size_t> group;
    for (std::size_t i = 0; i < models.size(); ++i) {
      const std::string g = models[i].substr(0, models[i].find('@'));
      if (!group.count(g)) {
        group[g] = series.size();
        series.push_back({g, {}});
      }
      series[group[g]].points.emplace_back(proj.coords(static_cast<Eigen::Index>(i), 0),
                                           proj.coords(static_cast<Eigen::Index>(i), 1));
    }
    doc = svg::Scatter("Models in log-likelihood space (PCA)", series, meta);
  }
  io::WriteFile(out, doc, true);
  std::cout << "wrote " << out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// verify: quick in-process property and oracle checks.

bool Report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << "\n";
  return ok;
}

int Verify() {
  std::mt19937_64 rng(20240611);
  std::normal_distribution<double> normal;
  std::exponential_distribution<double> expo;
  auto simplex = [&](std::size_t k) {
    std::vector<double> v(k);
    double s = 0.0;
    for (double& x : v) s += (x = expo(rng) + 0.02);
    for (double& x : v) x /= s;
    return v;
  };
  const std::vector<std::string> labels{"a", "b", "c"};
  bool all = true;

  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    TildeWeights tilde{{normal(rng), normal(rng), normal(rng)}};
    const double tau = 0.2 + expo(rng);
    const DomainWeights prior(simplex(3), labels);
    const auto closed = SolveRegularized(tilde, tau, prior);
    const auto grid = BruteForceSimplexOpt(
        [&](std::span<const double> p) {
          return std::inner_product(p.begin(), p.end(), tilde.values.begin(), 0.0) - tau * KlSimplex(p, prior.values());
        },
        3, 0.002, OptMode::kMax, labels);
    for (std::size_t k = 0; k < 3; ++k) worst = std::max(worst, std::abs(closed[k] - grid[k]));
  }
  all &= Report("closed-form regularized solution vs grid search", worst < 0.004, "max gap " + Format(worst, 5));

  worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + static_cast<std::size_t>(rng() % 6);
    std::vector<std::string> l;
    std::vector<double> t;
    for (std::size_t j = 0; j < k; ++j) {
      l.push_back("d" + std::to_string(j));
      t.push_back(3.0 * normal(rng));
    }
    const DomainWeights prior(simplex(k), l);
    const double tau = 0.1 + expo(rng);
    const auto a = SolveRegularized(TildeWeights{t}, tau, prior);
    const auto b = MirrorDescentStep(prior, TildeWeights{t}, tau);
    for (std::size_t j = 0; j < k; ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  }
  all &= Report("regularized solution equals one mirror-descent step", worst < 1e-12, "max gap " + FormatDouble(worst));

  worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    WeightTrajectory traj;
    for (int t = 0; t < 5; ++t) traj.Append(t, DomainWeights(simplex(3), labels));
    const auto geo = AggregateGeometric(traj);
    const auto grid = BruteForceSimplexOpt(
        [&](std::span<const double> p) {
          double s = 0.0;
          for (const auto& e : traj.entries) s += KlSimplex(p, e.second.values());
          return s;
        },
        3, 0.002, OptMode::kMin, labels);
    for (std::size_t k = 0; k < 3; ++k) worst = std::max(worst, std::abs(geo[k] - grid[k]));
  }
  all &= Report("geometric aggregate minimizes summed KL", worst < 0.004, "max gap " + Format(worst, 5));

  worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    TextLLMatrix m;
    const int rows = 3 + static_cast<int>(rng() % 5), cols = 3 + static_cast<int>(rng() % 20);
    for (int c = 0; c < cols; ++c) m.cols.push_back("t" + std::to_string(c));
    for (int r = 0; r < rows; ++r) {
      std::vector<double> v;
      for (int c = 0; c < cols; ++c) v.push_back(-50.0 + 10.0 * normal(rng));
      m.AddRow("m" + std::to_string(r), v);
    }
    const auto q = DoubleCenter(m);
    worst = std::max({worst, q.Q.rowwise().sum().cwiseAbs().maxCoeff(), q.Q.colwise().sum().cwiseAbs().maxCoeff()});
  }
  all &= Report("double-centered rows and columns sum to zero", worst < 1e-9 * 50.0 * 30, "max |sum| " + FormatDouble(worst));

  ModelConfig cfg{.vocab = 5, .layers = 1, .heads = 2, .embed_dim = 4, .context_length = 8};
  auto model = InitModel(cfg, 3);
  TokenBatch batch;
  batch.domain_index = 0;
  for (int s = 0; s < 2; ++s) {
    std::vector<Token> seq;
    for (int t = 0; t < 8; ++t) seq.push_back(static_cast<Token>(rng() % 5));
    batch.total_tokens += seq.size();
    batch.sequences.push_back(seq);
  }
  const auto g = GradLogProb(model, batch);
  double rel = 0.0;
  for (std::size_t i = 0; i < model.params.size(); i += 7) {
    const double h = 1e-5;
    auto plus = model, minus = model;
    plus.params[i] += h;
    minus.params[i] -= h;
    const double fd = (GradLogProb(plus, batch).mean_ll - GradLogProb(minus, batch).mean_ll) / (2 * h);
    rel = std::max(rel, std::abs(fd - g.gradient[i]) / std::max(1e-6, std::abs(fd) + std::abs(g.gradient[i])));
  }
  all &= Report("log-likelihood gradient vs central differences", rel < 1e-4, "max relative error " + FormatDouble(rel));

  std::cout << (all ? "all checks passed\n" : "some checks failed\n");
  return all ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Design domain-mixture weights that align a model with a target in log-likelihood space"};
  app.require_subcommand(1);
  bool force = false;
  std::string config;

  auto* gen = app.add_subcommand("gen-corpus", "Generate synthetic domain corpora and the evaluation corpus");
  gen->add_option("--config", config, "experiment config (JSON)")->required();
  gen->add_flag("--force", force, "overwrite existing outputs");

  auto* tt = app.add_subcommand("train-target", "Train the target model on the boosted mixture");
  tt->add_option("--config", config, "experiment config (JSON)")->required();
  tt->add_flag("--force", force, "overwrite existing outputs");

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "Estimate domain weights against the target");
  est->add_option("--config", ea.config, "experiment config (JSON)")->required();
  est->add_option("--method", ea.method, "uniform | raw | aggregated | adjusted")->capture_default_str();
  est->add_option("--tau", ea.tau, "temperature: number, inf, or spread:<multiplier>")->capture_default_str();
  est->add_option("--base", ea.base, "base checkpoint (default: derived from the config)");
  est->add_option("--target", ea.target, "target checkpoint (.mxk) or LL table (.csv)");
  est->add_option("--target-model", ea.target_model, "model id to select from an LL table");
  est->add_option("--steps", ea.steps, "first-pass length (default: training.total_steps)");
  est->add_option("--out", ea.out, "output directory");
  est->add_flag("--force", ea.force, "overwrite existing outputs");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a run and score it against the target");
  tr->add_option("--config", ta.config, "experiment config (JSON)")->required();
  auto* wopt = tr->add_option("--weights", ta.weights, "fixed weights file from estimate");
  auto* mopt = tr->add_option("--method", ta.method,
                              "uniform | iterative_lld | adjusted_lld | aggregated_lld | distill_kl | distill_kl_ce");
  wopt->excludes(mopt);
  tr->add_option("--tau", ta.tau, "temperature for LLD methods")->capture_default_str();
  tr->add_option("--run-id", ta.run_id, "run directory name (default: the method)");
  tr->add_option("--steps", ta.steps, "training length (default: training.total_steps)");
  tr->add_option("--stop-after", ta.stop_after, "stop at this step, keeping a resumable checkpoint");
  tr->add_flag("--resume", ta.resume, "continue from the run's latest checkpoint");
  tr->add_option("--base", ta.base, "base checkpoint (default: derived from the config)");
  tr->add_option("--target", ta.target, "target checkpoint (.mxk) or LL table (.csv)");
  tr->add_option("--target-model", ta.target_model, "model id to select from an LL table");
  tr->add_flag("--force", ta.force, "overwrite an existing run directory");

  std::vector<std::string> reports;
  std::string out;
  auto* cmp = app.add_subcommand("compare", "Tabulate reports, plot KL curves and check the expected ordering");
  cmp->add_option("reports", reports, "report.json files")->required();
  cmp->add_option("--out", out, "output directory")->required();
  cmp->add_flag("--force", force, "overwrite existing outputs");

  std::string kind;
  std::vector<std::string> inputs;
  auto* plot = app.add_subcommand("plot", "Render a figure");
  plot->add_option("--kind", kind, "kl_curve | weight_bars | model_map | jsd_heatmap | gram_heatmap")->required();
  plot->add_option("--input", inputs, "input files")->required();
  plot->add_option("--out", out, "output SVG")->required();
  plot->add_flag("--force", force, "overwrite existing output");

  auto* ver = app.add_subcommand("verify", "Run the built-in property and oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return GenCorpus(config, force);
    if (*tt) return TrainTargetCmd(config, force);
    if (*est) return Estimate(ea);
    if (*tr) return TrainCmd(ta);
    if (*cmp) return Compare(reports, out, force);
    if (*plot) return Plot(kind, inputs, out, force);
    if (*ver) return Verify();
  } catch (const OverwriteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOverwrite;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPrecondition;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
