#pragma once

// On-disk formats: corpus streams, evaluation manifests, checkpoints,
// log-likelihood tables, weight files and run reports.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "mixalign/common.hpp"
#include "mixalign/corpus.hpp"
#include "mixalign/llspace.hpp"
#include "mixalign/mixopt.hpp"
#include "mixalign/recipes.hpp"
#include "mixalign/tinylm.hpp"

namespace mixalign::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file and rename. Existing files are only
/// replaced with `force`.
inline void WriteFile(const fs::path& path, std::string_view content, bool force) {
  if (fs::exists(path) && !force)
    throw OverwriteError("'" + path.string() + "' exists; pass --force to overwrite");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw InputError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline Json ParseJson(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw InputError(what + ": malformed JSON: " + e.what());
  }
}

inline Json ReadJson(const fs::path& path) { return ParseJson(ReadFile(path), path.string()); }

inline std::string Dump(const Json& j) { return j.dump(2) + "\n"; }

/// JSON has no infinity; +inf is stored as the string "inf".
inline Json DoubleToJson(double x) {
  if (std::isinf(x) && x > 0) return "inf";
  Require(std::isfinite(x), "cannot serialize non-finite value " + FormatDouble(x));
  return x;
}

inline double DoubleFromJson(const Json& j, const std::string& what) {
  if (j.is_string() && j.get<std::string>() == "inf") return kInf;
  if (!j.is_number()) throw InputError(what + ": expected a number or \"inf\"");
  return j.get<double>();
}

// ---------------------------------------------------------------------------
// Binary helpers (host byte order; little-endian on supported platforms).

class BinaryWriter {
 public:
  template <class T>
  void Pod(const T& v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void Bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  BinaryReader(const std::string& data, std::string what) : data_(data), what_(std::move(what)) {}
  template <class T>
  T Pod() {
    T v;
    Bytes(&v, sizeof(T));
    return v;
  }
  void Bytes(void* p, std::size_t n) {
    if (n > data_.size() - at_) throw InputError(what_ + ": truncated file");
    std::memcpy(p, data_.data() + at_, n);
    at_ += n;
  }
  bool done() const { return at_ == data_.size(); }

 private:
  const std::string& data_;
  std::string what_;
  std::size_t at_ = 0;
};

inline void ExpectMagic(BinaryReader& r, const char* magic, const std::string& what) {
  char m[4];
  r.Bytes(m, 4);
  if (std::memcmp(m, magic, 4) != 0) throw InputError(what + ": not a " + magic + " file");
}

// ---------------------------------------------------------------------------
// Corpus: "MXC1", u32 alphabet, u64 byte count, bytes. The file holds the
// whole stream; the manifest records where training ends.

inline std::string EncodeCorpus(const DomainCorpus& c) {
  BinaryWriter w;
  w.Bytes("MXC1", 4);
  w.Pod(static_cast<std::uint32_t>(c.spec.alphabet_size));
  w.Pod(static_cast<std::uint64_t>(c.byte_count));
  w.Bytes(c.train_tokens.data(), c.train_tokens.size());
  w.Bytes(c.heldout_tokens.data(), c.heldout_tokens.size());
  return w.str();
}

inline std::vector<Token> DecodeCorpusStream(const std::string& data, const std::string& what,
                                             int* alphabet) {
  BinaryReader r(data, what);
  ExpectMagic(r, "MXC1", what);
  *alphabet = static_cast<int>(r.Pod<std::uint32_t>());
  const auto n = r.Pod<std::uint64_t>();
  std::vector<Token> tokens(n);
  r.Bytes(tokens.data(), n);
  if (!r.done()) throw InputError(what + ": trailing bytes");
  for (Token t : tokens)
    if (t >= *alphabet) throw InputError(what + ": token outside the alphabet");
  return tokens;
}

inline Json DomainSpecToJson(const DomainSpec& s) {
  return Json{{"name", s.name},
              {"order", s.order},
              {"transition_seed", s.transition_seed},
              {"alphabet_size", s.alphabet_size},
              {"skew", s.skew}};
}

inline DomainSpec DomainSpecFromJson(const Json& j) {
  DomainSpec s;
  s.name = j.at("name").get<std::string>();
  s.order = j.at("order").get<int>();
  s.transition_seed = j.at("transition_seed").get<std::uint64_t>();
  s.alphabet_size = j.at("alphabet_size").get<int>();
  s.skew = j.at("skew").get<double>();
  return s;
}

/// Writes <dir>/<name>.mxc per domain plus <dir>/manifest.json.
inline void WriteCorpora(const fs::path& dir, const std::vector<DomainCorpus>& corpora,
                         const Json& provenance, bool force) {
  Json domains = Json::array();
  for (const auto& c : corpora) {
    const std::string file = c.spec.name + ".mxc";
    const std::string bytes = EncodeCorpus(c);
    WriteFile(dir / file, bytes, force);
    domains.push_back(Json{{"spec", DomainSpecToJson(c.spec)},
                           {"seed", c.seed},
                           {"train_bytes", c.train_tokens.size()},
                           {"heldout_bytes", c.heldout_tokens.size()},
                           {"file", file},
                           {"digest", DigestHex(bytes)}});
  }
  Json m{{"format", "mixalign-corpus/1"}, {"provenance", provenance}, {"domains", domains}};
  WriteFile(dir / "manifest.json", Dump(m), force);
}

inline std::vector<DomainCorpus> ReadCorpora(const fs::path& dir) {
  const Json m = ReadJson(dir / "manifest.json");
  std::vector<DomainCorpus> out;
  try {
    for (const auto& d : m.at("domains")) {
      DomainCorpus c;
      c.spec = DomainSpecFromJson(d.at("spec"));
      c.seed = d.at("seed").get<std::uint64_t>();
      const fs::path file = dir / d.at("file").get<std::string>();
      const std::string bytes = ReadFile(file);
      if (DigestHex(bytes) != d.at("digest").get<std::string>())
        throw InputError("'" + file.string() + "' does not match its manifest digest");
      int alphabet = 0;
      auto stream = DecodeCorpusStream(bytes, file.string(), &alphabet);
      const auto train = d.at("train_bytes").get<std::size_t>();
      if (alphabet != c.spec.alphabet_size || train > stream.size())
        throw InputError("'" + file.string() + "' disagrees with its manifest");
      c.train_tokens.assign(stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(train));
      c.heldout_tokens.assign(stream.begin() + static_cast<std::ptrdiff_t>(train), stream.end());
      c.byte_count = stream.size();
      out.push_back(std::move(c));
    }
  } catch (const Json::exception& e) {
    throw InputError("corpus manifest: " + std::string(e.what()));
  }
  return out;
}

// Evaluation corpus manifest: text locations in the domain streams.

inline Json EvalToJson(const EvalCorpus& e) {
  Json texts = Json::array();
  for (const auto& t : e.texts)
    texts.push_back(Json{{"domain", t.domain}, {"offset", t.offset}, {"byte_length", t.byte_length}});
  return Json{{"format", "mixalign-eval/1"}, {"labels", e.labels}, {"digest", e.digest()}, {"texts", texts}};
}

inline EvalCorpus EvalFromJson(const Json& j, const std::vector<DomainCorpus>& corpora) {
  EvalCorpus e;
  try {
    e.labels = j.at("labels").get<std::vector<std::string>>();
    Require(e.labels.size() == corpora.size(), "evaluation manifest: domain count mismatch");
    for (const auto& t : j.at("texts")) {
      EvalText x;
      x.domain = t.at("domain").get<int>();
      x.offset = t.at("offset").get<std::uint64_t>();
      x.byte_length = t.at("byte_length").get<std::uint64_t>();
      Require(x.domain >= 0 && x.domain < static_cast<int>(corpora.size()),
              "evaluation manifest: domain index out of range");
      const auto& c = corpora[static_cast<std::size_t>(x.domain)];
      Require(x.offset >= c.train_size() && x.offset + x.byte_length <= c.byte_count,
              "evaluation manifest: text outside the held-out stream");
      const auto at = static_cast<std::ptrdiff_t>(x.offset - c.train_size());
      x.tokens.assign(c.heldout_tokens.begin() + at,
                      c.heldout_tokens.begin() + at + static_cast<std::ptrdiff_t>(x.byte_length));
      e.texts.push_back(std::move(x));
    }
    e.Finalize();
    if (e.digest() != j.at("digest").get<std::string>())
      throw InputError("evaluation manifest digest does not match the reconstructed corpus");
  } catch (const Json::exception& ex) {
    throw InputError("evaluation manifest: " + std::string(ex.what()));
  }
  return e;
}

// ---------------------------------------------------------------------------
// Checkpoint: "MXK1", u64 header length, JSON header, f64 params, then the
// AdamW moments when present.

inline std::string EncodeCheckpoint(const ModelCheckpoint& ck) {
  ck.Validate();
  Json h{{"config", ck.config.ToJson()},
         {"config_hash", ck.config_hash},
         {"step", ck.step},
         {"param_count", ck.params.size()},
         {"has_optimizer", !ck.opt.m.empty()},
         {"rng_state", ck.rng_state}};
  const std::string header = h.dump();
  BinaryWriter w;
  w.Bytes("MXK1", 4);
  w.Pod(static_cast<std::uint64_t>(header.size()));
  w.Bytes(header.data(), header.size());
  auto vec = [&](const std::vector<double>& v) { w.Bytes(v.data(), v.size() * sizeof(double)); };
  vec(ck.params);
  if (!ck.opt.m.empty()) {
    vec(ck.opt.m);
    vec(ck.opt.v);
  }
  return w.str();
}

inline ModelCheckpoint DecodeCheckpoint(const std::string& data, const std::string& what) {
  BinaryReader r(data, what);
  ExpectMagic(r, "MXK1", what);
  const auto hlen = r.Pod<std::uint64_t>();
  if (hlen > data.size()) throw InputError(what + ": corrupt header length");
  std::string header(hlen, '\0');
  r.Bytes(header.data(), hlen);
  const Json h = ParseJson(header, what);
  ModelCheckpoint ck;
  try {
    ck.config = ModelConfig::FromJson(nlohmann::json::parse(h.at("config").dump()));
    ck.config_hash = h.at("config_hash").get<std::string>();
    ck.step = h.at("step").get<std::int64_t>();
    ck.rng_state = h.at("rng_state").get<std::string>();
    const auto n = h.at("param_count").get<std::size_t>();
    if (n != ck.config.ParamCount()) throw InputError(what + ": parameter count mismatch");
    auto vec = [&](std::vector<double>& v) {
      v.resize(n);
      r.Bytes(v.data(), n * sizeof(double));
    };
    vec(ck.params);
    if (h.at("has_optimizer").get<bool>()) {
      vec(ck.opt.m);
      vec(ck.opt.v);
    }
  } catch (const Json::exception& e) {
    throw InputError(what + ": bad header: " + e.what());
  }
  if (!r.done()) throw InputError(what + ": trailing bytes");
  if (ck.config_hash != ck.config.Hash()) throw InputError(what + ": config digest mismatch");
  ck.Validate();
  return ck;
}

inline void WriteCheckpoint(const fs::path& path, const ModelCheckpoint& ck, bool force) {
  WriteFile(path, EncodeCheckpoint(ck), force);
}

inline ModelCheckpoint ReadCheckpoint(const fs::path& path) {
  return DecodeCheckpoint(ReadFile(path), path.string());
}

// ---------------------------------------------------------------------------
// Log-likelihood table CSV. A text_id of "*" marks a domain-level row whose
// totals cover all of that domain's texts.

inline constexpr const char* kLlHeader = "model_id,text_id,domain,total_ll_nats,token_count,byte_count";

struct LlRow {
  std::string model_id;
  std::string text_id;
  std::string domain;
  double total_ll = 0.0;
  std::uint64_t token_count = 0;
  std::uint64_t byte_count = 0;
};

inline void AppendLlRows(std::vector<LlRow>& rows, const std::string& model_id,
                         std::span<const double> text_ll, const EvalCorpus& eval) {
  Require(text_ll.size() == eval.N(), "AppendLlRows: one score per text required");
  for (std::size_t i = 0; i < eval.N(); ++i) {
    const auto& t = eval.texts[i];
    rows.push_back({model_id, std::to_string(i), eval.labels[static_cast<std::size_t>(t.domain)],
                    text_ll[i], t.tokens.size(), t.byte_length});
  }
}

inline std::string EncodeLlTable(const std::vector<LlRow>& rows) {
  std::string out = std::string(kLlHeader) + "\n";
  for (const auto& r : rows)
    out += r.model_id + "," + r.text_id + "," + r.domain + "," + FormatDouble(r.total_ll) + "," +
           std::to_string(r.token_count) + "," + std::to_string(r.byte_count) + "\n";
  return out;
}

inline std::vector<LlRow> DecodeLlTable(const std::string& text, const std::string& what) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kLlHeader)
    throw InputError(what + ": expected header '" + std::string(kLlHeader) + "'");
  std::vector<LlRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw InputError(what + ":" + std::to_string(lineno) + ": expected 6 fields");
    try {
      rows.push_back({f[0], f[1], f[2], std::stod(f[3]), std::stoull(f[4]), std::stoull(f[5])});
    } catch (const std::exception&) {
      throw InputError(what + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

/// Builds a target from imported scores of one model. Text-level rows must
/// cover the evaluation corpus exactly; otherwise domain-level rows ("*")
/// for every domain are required and only domain means are known.
inline Target TargetFromLlTable(const std::vector<LlRow>& rows, const std::string& model_id,
                                const EvalCorpus& eval) {
  std::vector<const LlRow*> mine;
  for (const auto& r : rows)
    if (r.model_id == model_id) mine.push_back(&r);
  if (mine.empty()) throw InputError("LL table has no rows for model '" + model_id + "'");
  Target t;
  t.id = model_id;
  std::vector<std::optional<TextScore>> text(eval.N());
  std::map<std::string, TextScore> domain_rows;
  for (const auto* r : mine) {
    if (r->text_id == "*") {
      domain_rows[r->domain] = {r->total_ll, r->token_count};
      continue;
    }
    std::size_t idx = 0;
    try {
      idx = std::stoul(r->text_id);
    } catch (const std::exception&) {
      throw InputError("LL table: unknown text id '" + r->text_id + "'");
    }
    if (idx >= eval.N()) throw InputError("LL table: text id " + r->text_id + " outside the evaluation corpus");
    const auto& e = eval.texts[idx];
    if (r->domain != eval.labels[static_cast<std::size_t>(e.domain)] || r->token_count != e.tokens.size())
      throw InputError("LL table: text " + r->text_id + " does not match the evaluation corpus");
    text[idx] = TextScore{r->total_ll, r->token_count};
  }
  const bool full = std::all_of(text.begin(), text.end(), [](const auto& s) { return s.has_value(); });
  if (full) {
    std::vector<TextScore> scores;
    for (const auto& s : text) scores.push_back(*s);
    t.ell = DomainLLFromScores(scores, eval, true, model_id);
    t.text_ll = TotalLL(scores);
    return t;
  }
  t.ell.normalized = true;
  t.ell.source_model = model_id;
  t.ell.eval_digest = eval.digest();
  for (const auto& label : eval.labels) {
    auto it = domain_rows.find(label);
    if (it == domain_rows.end() || it->second.token_count == 0)
      throw InputError("LL table: model '" + model_id + "' lacks text rows and a domain row for '" +
                       label + "'");
    t.ell.values.push_back(it->second.total_ll / static_cast<double>(it->second.token_count));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Weights file.

struct WeightsFile {
  DomainWeights weights;
  double tau = kInf;
  std::string method;  // uniform | raw | adjusted | aggregated | ground_truth
  std::vector<std::int64_t> source_steps;
};

inline Json WeightsToJson(const WeightsFile& w, const Json& provenance) {
  return Json{{"labels", w.weights.labels()},
              {"values", w.weights.values()},
              {"tau", DoubleToJson(w.tau)},
              {"method", w.method},
              {"source_steps", w.source_steps},
              {"provenance", provenance}};
}

inline WeightsFile WeightsFromJson(const Json& j, const std::string& what) {
  try {
    WeightsFile w;
    w.weights = DomainWeights(j.at("values").get<std::vector<double>>(),
                              j.at("labels").get<std::vector<std::string>>());
    w.tau = DoubleFromJson(j.at("tau"), what + ".tau");
    w.method = j.at("method").get<std::string>();
    w.source_steps = j.at("source_steps").get<std::vector<std::int64_t>>();
    return w;
  } catch (const Json::exception& e) {
    throw InputError(what + ": " + e.what());
  }
}

inline Json TrajectoryToJson(const WeightTrajectory& t) {
  Json entries = Json::array();
  for (const auto& [step, w] : t.entries) entries.push_back(Json{{"step", step}, {"values", w.values()}});
  return Json{{"labels", t.entries.empty() ? std::vector<std::string>{} : t.entries.front().second.labels()},
              {"entries", entries}};
}

inline WeightTrajectory TrajectoryFromJson(const Json& j, const std::string& what) {
  try {
    WeightTrajectory t;
    const auto labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& e : j.at("entries"))
      t.Append(e.at("step").get<std::int64_t>(),
               DomainWeights(e.at("values").get<std::vector<double>>(), labels));
    return t;
  } catch (const Json::exception& e) {
    throw InputError(what + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Run reports.

inline Json ReportToJson(const RunReport& r, const Json& provenance) {
  Json curve = Json::array();
  for (const auto& [step, kl] : r.kl_curve.points) curve.push_back(Json::array({step, kl}));
  Json j{{"run_id", r.run_id},
         {"method", r.method},
         {"tau", DoubleToJson(r.tau)},
         {"seed", r.seed},
         {"labels", r.labels},
         {"metric", r.kl_curve.metric},
         {"final_kl", r.final_kl},
         {"kl_curve", curve},
         {"weight_trajectory", TrajectoryToJson(r.weight_trajectory)},
         {"pi_star", r.pi_star ? Json(r.pi_star->values()) : Json(nullptr)},
         {"eval_digest", r.eval_digest},
         {"target_id", r.target_id},
         {"config_digest", r.config_digest},
         {"provenance", provenance}};
  return j;
}

inline RunReport ReportFromJson(const Json& j, const std::string& what) {
  try {
    RunReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.tau = DoubleFromJson(j.at("tau"), what + ".tau");
    r.seed = j.at("seed").get<std::uint64_t>();
    r.labels = j.at("labels").get<std::vector<std::string>>();
    r.kl_curve.metric = j.at("metric").get<std::string>();
    r.final_kl = j.at("final_kl").get<double>();
    for (const auto& p : j.at("kl_curve"))
      r.kl_curve.points.emplace_back(p.at(0).get<std::int64_t>(), p.at(1).get<double>());
    r.weight_trajectory = TrajectoryFromJson(j.at("weight_trajectory"), what + ".weight_trajectory");
    if (!j.at("pi_star").is_null())
      r.pi_star = DomainWeights(j.at("pi_star").get<std::vector<double>>(), r.labels);
    r.eval_digest = j.at("eval_digest").get<std::string>();
    r.target_id = j.at("target_id").get<std::string>();
    r.config_digest = j.at("config_digest").get<std::string>();
    if (r.kl_curve.points.empty() || r.kl_curve.points.back().second != r.final_kl)
      throw InputError(what + ": final_kl does not equal the last curve point");
    return r;
  } catch (const Json::exception& e) {
    throw InputError(what + ": " + e.what());
  }
}

inline constexpr const char* kCompareHeader = "run_id,method,tau,seed,final_kl_bits_per_byte";

inline std::string EncodeCompareCsv(const std::vector<RunReport>& reports) {
  std::string out = std::string(kCompareHeader) + "\n";
  for (const auto& r : reports)
    out += r.run_id + "," + r.method + "," + FormatDouble(r.tau) + "," + std::to_string(r.seed) + "," +
           FormatDouble(r.final_kl) + "\n";
  return out;
}

}  // namespace mixalign::io
