#pragma once

// Experiment configuration: a strict JSON document describing the corpus,
// model, training, estimation schedule, target and method roster.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mixalign/common.hpp"
#include "mixalign/corpus.hpp"
#include "mixalign/recipes.hpp"
#include "mixalign/tinylm.hpp"

namespace mixalign {

/// Parses "inf", "spread:<mult>" or a positive number.
inline TauSpec ParseTau(const std::string& s) {
  if (s == "inf") return TauSpec::Inf();
  auto number = [&](const std::string& t) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.size() || !(v > 0.0) || !std::isfinite(v))
      throw ConfigError("tau '" + s + "' must be a positive number, \"inf\" or \"spread:<multiplier>\"");
    return v;
  };
  if (s.rfind("spread:", 0) == 0) return TauSpec::Spread(number(s.substr(7)));
  return TauSpec::Value(number(s));
}

inline std::string TauText(const TauSpec& t) {
  switch (t.kind) {
    case TauSpec::Kind::kInf: return "inf";
    case TauSpec::Kind::kLldSpread: return "spread:" + FormatDouble(t.value);
    case TauSpec::Kind::kValue: return FormatDouble(t.value);
  }
  return "?";
}

struct MethodSpec {
  std::string run_id;
  Method method = Method::kUniform;
  TauSpec tau = TauSpec::Spread(1.0);
};

struct ExperimentConfig {
  std::string output_dir;
  std::uint64_t seed = 0;

  std::uint64_t corpus_seed = 0;
  std::uint64_t train_bytes = 0;
  double holdout_fraction = 0.1;
  int texts_per_domain = 0;
  std::uint64_t chunk_bytes = 0;
  std::vector<DomainSpec> domains;

  ModelConfig model;
  TrainSettings train;
  std::int64_t schedule_dense_until = 0;
  std::int64_t schedule_every = 0;

  std::map<std::string, double> target_base_mixture;  // empty: uniform
  std::map<std::string, double> target_boost;
  std::int64_t target_steps = 0;
  double ridge = 0.0;

  std::vector<MethodSpec> methods;

  std::string digest;         // of the effective document
  std::string corpus_digest;  // of the corpus section alone

  std::vector<std::string> labels() const {
    std::vector<std::string> l;
    for (const auto& d : domains) l.push_back(d.name);
    return l;
  }
};

/// Deterministic sub-seed for one purpose.
inline std::uint64_t SubSeed(std::uint64_t seed, std::string_view purpose) {
  Digest d;
  d.UpdatePod(seed).Update(purpose);
  return d.value();
}

namespace detail {

using Json = nlohmann::json;

class Section {
 public:
  Section(const Json& j, std::string path, std::initializer_list<const char*> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("'" + Display() + "' must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items())
      if (!ok.count(key)) throw ConfigError("unknown key '" + Child(key) + "'");
  }

  bool Has(const std::string& key) const { return j_.contains(key); }
  const Json& At(const std::string& key) const {
    if (!j_.contains(key)) throw ConfigError("missing required key '" + Child(key) + "'");
    return j_.at(key);
  }
  std::string Child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  T Get(const std::string& key) const {
    const Json& v = At(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0 && !v.is_number_unsigned())
          throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("key '" + Child(key) + "' has the wrong type");
    }
  }

  template <class T>
  T Get(const std::string& key, T fallback) const {
    return Has(key) ? Get<T>(key) : fallback;
  }

 private:
  std::string Display() const { return path_.empty() ? "<root>" : path_; }
  const Json& j_;
  std::string path_;
};

inline std::map<std::string, double> WeightMap(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError("'" + path + "' must be an object of domain -> number");
  std::map<std::string, double> m;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw ConfigError("key '" + path + "." + k + "' must be a number");
    m[k] = v.get<double>();
  }
  return m;
}

inline TauSpec TauFromJson(const Json& j, const std::string& path) {
  if (j.is_number()) return ParseTau(FormatDouble(j.get<double>()));
  if (j.is_string()) return ParseTau(j.get<std::string>());
  throw ConfigError("key '" + path + "' must be a number or a string");
}

}  // namespace detail

/// Parses a configuration document. `seed_override` replaces every seed in
/// the document before the digest is taken.
inline ExperimentConfig ParseExperimentConfig(const std::string& text,
                                              std::optional<std::uint64_t> seed_override = {}) {
  using detail::Section;
  detail::Json doc;
  try {
    doc = detail::Json::parse(text);
  } catch (const detail::Json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  if (seed_override && doc.is_object()) {
    doc["seed"] = *seed_override;
    if (doc.contains("corpus") && doc["corpus"].is_object()) doc["corpus"]["seed"] = *seed_override;
  }

  ExperimentConfig c;
  Section root(doc, "", {"output_dir", "seed", "corpus", "model", "training", "schedule", "target",
                         "estimation", "methods"});
  c.output_dir = root.Get<std::string>("output_dir");
  c.seed = root.Get<std::uint64_t>("seed");

  Section corpus(root.At("corpus"), "corpus", {"seed", "train_bytes", "holdout_fraction", "eval", "domains"});
  c.corpus_seed = corpus.Get<std::uint64_t>("seed");
  c.train_bytes = corpus.Get<std::uint64_t>("train_bytes");
  c.holdout_fraction = corpus.Get<double>("holdout_fraction", 0.1);
  Section ev(corpus.At("eval"), "corpus.eval", {"texts_per_domain", "chunk_bytes"});
  c.texts_per_domain = ev.Get<int>("texts_per_domain");
  c.chunk_bytes = ev.Get<std::uint64_t>("chunk_bytes");
  const auto& domains = corpus.At("domains");
  if (!domains.is_array() || domains.size() < 2)
    throw ConfigError("'corpus.domains' must be an array of at least 2 domains");
  std::set<std::string> names;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    Section d(domains[i], "corpus.domains[" + std::to_string(i) + "]",
              {"name", "order", "transition_seed", "alphabet_size", "skew"});
    DomainSpec s;
    s.name = d.Get<std::string>("name");
    s.order = d.Get<int>("order");
    s.transition_seed = d.Get<std::uint64_t>("transition_seed");
    s.alphabet_size = d.Get<int>("alphabet_size");
    s.skew = d.Get<double>("skew");
    s.Validate();
    if (s.name.empty() || s.name.find_first_of(",/\\\" ") != std::string::npos)
      throw ConfigError("domain name '" + s.name + "' must be nonempty without commas, slashes or spaces");
    if (!names.insert(s.name).second) throw ConfigError("duplicate domain name '" + s.name + "'");
    c.domains.push_back(s);
  }
  c.corpus_digest = DigestHex(doc.at("corpus").dump());

  Section model(root.At("model"), "model", {"vocab", "layers", "heads", "embed_dim", "context_length"});
  c.model.vocab = model.Get<int>("vocab");
  c.model.layers = model.Get<int>("layers");
  c.model.heads = model.Get<int>("heads");
  c.model.embed_dim = model.Get<int>("embed_dim");
  c.model.context_length = model.Get<int>("context_length");
  c.model.Validate();
  for (const auto& d : c.domains)
    if (d.alphabet_size > c.model.vocab)
      throw ConfigError("domain '" + d.name + "' alphabet exceeds model.vocab");

  Section tr(root.At("training"), "training",
             {"total_steps", "batch_windows", "window_length", "warmup_steps", "lr_max", "lr_min",
              "checkpoint_every", "optimizer", "adamw"});
  c.train.total_steps = tr.Get<std::int64_t>("total_steps");
  c.train.batch_windows = tr.Get<int>("batch_windows");
  c.train.window_length = tr.Get<int>("window_length");
  c.train.lr.warmup_steps = tr.Get<std::int64_t>("warmup_steps");
  c.train.lr.total_steps = c.train.total_steps;
  c.train.lr.lr_max = tr.Get<double>("lr_max");
  c.train.lr.lr_min = tr.Get<double>("lr_min");
  c.train.checkpoint_every = tr.Get<std::int64_t>("checkpoint_every");
  const auto opt = tr.Get<std::string>("optimizer", "adamw");
  if (opt == "adamw") {
    c.train.optimizer = OptimizerKind::kAdamW;
  } else if (opt == "sgd") {
    c.train.optimizer = OptimizerKind::kSgd;
  } else {
    throw ConfigError("'training.optimizer' must be \"adamw\" or \"sgd\"");
  }
  if (tr.Has("adamw")) {
    Section a(tr.At("adamw"), "training.adamw", {"beta1", "beta2", "eps", "weight_decay"});
    c.train.adamw.beta1 = a.Get<double>("beta1", c.train.adamw.beta1);
    c.train.adamw.beta2 = a.Get<double>("beta2", c.train.adamw.beta2);
    c.train.adamw.eps = a.Get<double>("eps", c.train.adamw.eps);
    c.train.adamw.weight_decay = a.Get<double>("weight_decay", c.train.adamw.weight_decay);
  }
  c.train.Validate();
  if (c.train.window_length > c.model.context_length)
    throw ConfigError("'training.window_length' exceeds 'model.context_length'");

  Section sch(root.At("schedule"), "schedule", {"dense_until", "every"});
  c.schedule_dense_until = sch.Get<std::int64_t>("dense_until");
  c.schedule_every = sch.Get<std::int64_t>("every");
  if (c.schedule_dense_until < 0 || c.schedule_every <= 0)
    throw ConfigError("'schedule' needs dense_until >= 0 and every > 0");

  Section tg(root.At("target"), "target", {"base_mixture", "boost", "total_steps"});
  if (tg.Has("base_mixture")) {
    const auto& bm = tg.At("base_mixture");
    if (!(bm.is_string() && bm.get<std::string>() == "uniform"))
      c.target_base_mixture = detail::WeightMap(bm, "target.base_mixture");
  }
  c.target_boost = detail::WeightMap(tg.At("boost"), "target.boost");
  c.target_steps = tg.Get<std::int64_t>("total_steps", c.train.total_steps);
  if (c.target_steps <= c.train.lr.warmup_steps)
    throw ConfigError("'target.total_steps' must exceed 'training.warmup_steps'");

  if (root.Has("estimation")) {
    Section es(root.At("estimation"), "estimation", {"ridge"});
    c.ridge = es.Get<double>("ridge", 0.0);
    if (!(c.ridge >= 0.0)) throw ConfigError("'estimation.ridge' must be >= 0");
  }

  const auto& methods = root.At("methods");
  if (!methods.is_array()) throw ConfigError("'methods' must be an array");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const std::string path = "methods[" + std::to_string(i) + "]";
    Section m(methods[i], path, {"name", "tau", "run_id"});
    MethodSpec s;
    s.method = ParseMethod(m.Get<std::string>("name"));
    if (m.Has("tau")) s.tau = detail::TauFromJson(m.At("tau"), path + ".tau");
    s.run_id = m.Get<std::string>("run_id", MethodName(s.method));
    if (!ids.insert(s.run_id).second)
      throw ConfigError("duplicate run_id '" + s.run_id + "' in 'methods'; set run_id explicitly");
    c.methods.push_back(s);
  }

  // Check weight maps against the domain list now rather than mid-run.
  const auto base = DomainWeights::Uniform(c.labels());
  for (const auto& [k, v] : c.target_base_mixture)
    if (!names.count(k)) throw ConfigError("'target.base_mixture' names unknown domain '" + k + "'");
  BoostMixture(base, c.target_boost);

  c.digest = DigestHex(doc.dump());
  return c;
}

/// Reads MIXALIGN_SEED when set.
inline std::optional<std::uint64_t> SeedFromEnvironment() {
  const char* s = std::getenv("MIXALIGN_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used == std::string(s).size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("MIXALIGN_SEED must be a nonnegative integer");
}

inline ExperimentConfig LoadExperimentConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseExperimentConfig(ss.str(), SeedFromEnvironment());
}

// Derived pieces of an experiment. Every random choice is keyed by one of
// the config's seeds and a purpose string.

inline std::vector<DomainCorpus> GenerateCorpora(const ExperimentConfig& c) {
  std::vector<DomainCorpus> out;
  GenerateOptions opts;
  opts.holdout_fraction = c.holdout_fraction;
  opts.min_train_bytes = static_cast<std::uint64_t>(c.train.window_length);
  for (const auto& d : c.domains)
    out.push_back(GenerateDomain(d, c.train_bytes, SubSeed(c.corpus_seed, "domain:" + d.name), opts));
  return out;
}

inline EvalCorpus BuildEval(const ExperimentConfig& c, const std::vector<DomainCorpus>& corpora) {
  return BuildEvalCorpus(corpora, c.texts_per_domain, c.chunk_bytes, SubSeed(c.corpus_seed, "eval"));
}

inline ModelCheckpoint BaseModel(const ExperimentConfig& c) {
  return InitModel(c.model, SubSeed(c.seed, "base_init"));
}

/// Training settings for aligned runs, optionally shortened to `steps`
/// (warmup scales with the run length).
inline TrainSettings RunSettings(const ExperimentConfig& c, std::int64_t steps = -1) {
  TrainSettings s = c.train;
  if (steps > 0 && steps != s.total_steps) {
    s.lr.warmup_steps = s.lr.warmup_steps * steps / s.total_steps;
    s.total_steps = steps;
    s.lr.total_steps = steps;
  }
  s.data_seed = SubSeed(c.seed, "run_data");
  s.Validate();
  return s;
}

inline EstimationSchedule Schedule(const ExperimentConfig& c, std::int64_t total_steps) {
  return EstimationSchedule::Doubling(total_steps, c.schedule_dense_until, c.schedule_every);
}

inline DomainWeights TargetBaseMixture(const ExperimentConfig& c) {
  const auto labels = c.labels();
  if (c.target_base_mixture.empty()) return DomainWeights::Uniform(labels);
  std::vector<double> v;
  for (const auto& l : labels) {
    auto it = c.target_base_mixture.find(l);
    v.push_back(it == c.target_base_mixture.end() ? 0.0 : it->second);
  }
  try {
    return DomainWeights(v, labels);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("'target.base_mixture': ") + e.what());
  }
}

inline SkewedTarget TrainTarget(const ExperimentConfig& c, const std::vector<DomainCorpus>& corpora) {
  TrainSettings s = c.train;
  s.total_steps = c.target_steps;
  s.lr.total_steps = c.target_steps;
  s.data_seed = SubSeed(c.seed, "target_data");
  return MakeSkewedTarget(InitModel(c.model, SubSeed(c.seed, "target_init")), TargetBaseMixture(c),
                          c.target_boost, corpora, s);
}

inline RunConfig MakeRunConfig(const ExperimentConfig& c, const MethodSpec& m, std::int64_t steps = -1) {
  RunConfig r;
  r.run_id = m.run_id;
  r.method = m.method;
  r.tau = m.tau;
  r.train = RunSettings(c, steps);
  r.schedule = Schedule(c, r.train.total_steps);
  r.ridge = c.ridge;
  r.seed = c.seed;
  r.config_digest = c.digest;
  return r;
}

}  // namespace mixalign
