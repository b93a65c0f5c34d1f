#pragma once

// Synthetic multi-domain byte corpora.
//
// Every domain is a seeded Markov chain over a byte alphabet. Its
// transition rows are Dirichlet draws whose concentration is
// `skew`: small skew gives peaked rows, large skew gives flat rows. A
// domain's generated stream is split into a training prefix and a held-out
// suffix; evaluation texts are cut only from the suffix.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mixalign/common.hpp"
#include "mixalign/weights.hpp"

namespace mixalign {

struct DomainSpec {
  std::string name;
  int order = 1;
  std::uint64_t transition_seed = 0;
  int alphabet_size = 256;
  double skew = 1.0;

  void Validate() const {
    if (alphabet_size < 2 || alphabet_size > 256)
      throw ConfigError("domain '" + name + "': alphabet_size must be in [2, 256]");
    if (order < 0) throw ConfigError("domain '" + name + "': order must be >= 0");
    if (!(skew > 0.0)) throw ConfigError("domain '" + name + "': skew must be > 0");
    double cells = std::pow(static_cast<double>(alphabet_size), order + 1);
    if (cells > static_cast<double>(1 << 24))
      throw ConfigError("domain '" + name +
                        "': alphabet_size^(order+1) exceeds 2^24 table cells");
  }

  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

/// Row-stochastic transition table of a domain, materialized from its seed.
/// Row index encodes the previous `order` tokens in base `alphabet_size`,
/// most recent token least significant.
class TransitionTable {
 public:
  explicit TransitionTable(const DomainSpec& spec) : spec_(spec) {
    spec.Validate();
    const std::size_t a = static_cast<std::size_t>(spec.alphabet_size);
    rows_ = 1;
    for (int i = 0; i < spec.order; ++i) rows_ *= a;
    probs_.resize(rows_ * a);
    cumulative_.resize(rows_ * a);
    Rng rng(spec.transition_seed);
    std::vector<double> logw(a);
    for (std::size_t r = 0; r < rows_; ++r) {
      // Dirichlet(skew) via normalized Gamma(skew) draws, in log space:
      // Gamma(a) = Gamma(a + 1) * U^(1/a). Stays finite for tiny skew.
      for (std::size_t b = 0; b < a; ++b) {
        std::gamma_distribution<double> gamma(spec.skew + 1.0, 1.0);
        double g = gamma(rng);
        double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
        logw[b] = std::log(g) + std::log(u) / spec.skew;
      }
      const double mx = *std::max_element(logw.begin(), logw.end());
      double z = 0.0;
      for (std::size_t b = 0; b < a; ++b) {
        probs_[r * a + b] = std::exp(logw[b] - mx);
        z += probs_[r * a + b];
      }
      double c = 0.0;
      for (std::size_t b = 0; b < a; ++b) {
        probs_[r * a + b] /= z;
        c += probs_[r * a + b];
        cumulative_[r * a + b] = c;
      }
      cumulative_[r * a + a - 1] = 1.0;
    }
  }

  const DomainSpec& spec() const { return spec_; }
  std::size_t rows() const { return rows_; }
  std::size_t alphabet() const { return static_cast<std::size_t>(spec_.alphabet_size); }

  double prob(std::size_t row, std::size_t next) const {
    return probs_[row * alphabet() + next];
  }

  Token Sample(std::size_t row, Rng& rng) const {
    const double u = UniformUnit(rng);
    const auto begin = cumulative_.begin() + static_cast<std::ptrdiff_t>(row * alphabet());
    const auto end = begin + static_cast<std::ptrdiff_t>(alphabet());
    auto it = std::upper_bound(begin, end, u);
    if (it == end) --it;
    return static_cast<Token>(it - begin);
  }

  // Row index after appending `next` to the context held in `row`.
  std::size_t Advance(std::size_t row, Token next) const {
    if (spec_.order == 0) return 0;
    return (row * alphabet() + next) % rows_;
  }

 private:
  DomainSpec spec_;
  std::size_t rows_ = 1;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

struct DomainCorpus {
  DomainSpec spec;
  std::uint64_t seed = 0;
  std::vector<Token> train_tokens;    // stream bytes [0, train_size)
  std::vector<Token> heldout_tokens;  // stream bytes [train_size, byte_count)
  std::uint64_t byte_count = 0;       // whole generated stream

  std::uint64_t train_size() const { return train_tokens.size(); }
};

struct GenerateOptions {
  double holdout_fraction = 0.1;
  std::uint64_t min_train_bytes = 1;  // window length of the consumer
};

/// Generates `train_bytes` training tokens followed by a held-out suffix
/// that makes up `holdout_fraction` of the whole stream.
inline DomainCorpus GenerateDomain(const DomainSpec& spec, std::uint64_t train_bytes,
                                   std::uint64_t rng_seed,
                                   const GenerateOptions& opts = {}) {
  spec.Validate();
  if (train_bytes < opts.min_train_bytes || train_bytes == 0)
    throw ConfigError("domain '" + spec.name + "': train_bytes " +
                      std::to_string(train_bytes) + " is below the minimum " +
                      std::to_string(std::max<std::uint64_t>(opts.min_train_bytes, 1)));
  if (!(opts.holdout_fraction >= 0.0 && opts.holdout_fraction < 1.0))
    throw ConfigError("holdout_fraction must be in [0, 1)");
  const auto heldout = static_cast<std::uint64_t>(std::ceil(
      static_cast<double>(train_bytes) * opts.holdout_fraction /
      (1.0 - opts.holdout_fraction)));

  TransitionTable table(spec);
  Rng rng(rng_seed);
  std::vector<Token> stream;
  stream.reserve(train_bytes + heldout);
  std::size_t row = 0;
  // The first `order` tokens have no full context; draw them uniformly.
  for (int i = 0; i < spec.order && stream.size() < train_bytes + heldout; ++i) {
    auto t = static_cast<Token>(rng() % static_cast<std::uint64_t>(spec.alphabet_size));
    stream.push_back(t);
    row = table.Advance(row, t);
  }
  while (stream.size() < train_bytes + heldout) {
    Token t = table.Sample(row, rng);
    stream.push_back(t);
    row = table.Advance(row, t);
  }

  DomainCorpus c;
  c.spec = spec;
  c.seed = rng_seed;
  c.byte_count = stream.size();
  c.train_tokens.assign(stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(train_bytes));
  c.heldout_tokens.assign(stream.begin() + static_cast<std::ptrdiff_t>(train_bytes), stream.end());
  return c;
}

struct EvalText {
  int domain = 0;
  std::uint64_t offset = 0;  // absolute offset in the domain's stream
  std::vector<Token> tokens;
  std::uint64_t byte_length = 0;
};

/// The fixed evaluation corpus D, partitioned by domain.
struct EvalCorpus {
  std::vector<std::string> labels;  // domain names, size K
  std::vector<EvalText> texts;
  std::vector<int> per_domain_counts;
  std::vector<double> per_domain_mean_tokens;

  int K() const { return static_cast<int>(labels.size()); }
  std::size_t N() const { return texts.size(); }

  double MeanByteLength() const {
    double s = 0.0;
    for (const auto& t : texts) s += static_cast<double>(t.byte_length);
    return texts.empty() ? 0.0 : s / static_cast<double>(texts.size());
  }

  // Content digest; LL vectors record it so incomparable vectors are caught.
  std::string digest() const {
    Digest d;
    for (const auto& l : labels) d.Update(l).Update("\0", 1);
    for (const auto& t : texts) {
      d.UpdatePod(static_cast<std::int32_t>(t.domain));
      d.UpdatePod(t.offset);
      d.UpdatePod(t.byte_length);
      d.Update(t.tokens.data(), t.tokens.size());
    }
    return d.hex();
  }

  void Finalize() {
    const int k = K();
    per_domain_counts.assign(static_cast<std::size_t>(k), 0);
    std::vector<double> tokens(static_cast<std::size_t>(k), 0.0);
    for (const auto& t : texts) {
      Require(t.domain >= 0 && t.domain < k, "EvalCorpus: domain index out of range");
      Require(t.byte_length == t.tokens.size(), "EvalCorpus: byte_length mismatch");
      per_domain_counts[static_cast<std::size_t>(t.domain)]++;
      tokens[static_cast<std::size_t>(t.domain)] += static_cast<double>(t.tokens.size());
    }
    per_domain_mean_tokens.assign(static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) {
      Require(per_domain_counts[static_cast<std::size_t>(i)] >= 1,
              "EvalCorpus: domain '" + labels[static_cast<std::size_t>(i)] + "' has no texts");
      per_domain_mean_tokens[static_cast<std::size_t>(i)] =
          tokens[static_cast<std::size_t>(i)] / per_domain_counts[static_cast<std::size_t>(i)];
    }
  }
};

namespace detail {

inline void ShuffleIndices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

inline EvalText MakeText(const DomainCorpus& c, int domain, std::uint64_t local_off,
                         std::uint64_t len) {
  EvalText t;
  t.domain = domain;
  t.offset = c.train_size() + local_off;
  t.tokens.assign(c.heldout_tokens.begin() + static_cast<std::ptrdiff_t>(local_off),
                  c.heldout_tokens.begin() + static_cast<std::ptrdiff_t>(local_off + len));
  t.byte_length = len;
  return t;
}

}  // namespace detail

/// Cuts each domain's held-out suffix into `chunk_bytes` chunks (a final
/// short chunk is dropped) and picks `texts_per_domain` of them.
inline EvalCorpus BuildEvalCorpus(const std::vector<DomainCorpus>& domains,
                                  int texts_per_domain, std::uint64_t chunk_bytes,
                                  std::uint64_t rng_seed) {
  if (texts_per_domain < 1) throw ConfigError("texts_per_domain must be >= 1");
  if (chunk_bytes < 1) throw ConfigError("chunk_bytes must be >= 1");
  if (domains.empty()) throw ConfigError("no domains");
  EvalCorpus ev;
  Rng rng(rng_seed);
  for (std::size_t k = 0; k < domains.size(); ++k) {
    const auto& c = domains[k];
    ev.labels.push_back(c.spec.name);
    const std::uint64_t available = c.heldout_tokens.size() / chunk_bytes;
    if (available < static_cast<std::uint64_t>(texts_per_domain))
      throw InputError("domain '" + c.spec.name + "': held-out material holds " +
                       std::to_string(available) + " chunks of " +
                       std::to_string(chunk_bytes) + " bytes; short by " +
                       std::to_string(static_cast<std::uint64_t>(texts_per_domain) - available) +
                       " chunks (" +
                       std::to_string((static_cast<std::uint64_t>(texts_per_domain) - available) *
                                      chunk_bytes) +
                       " bytes)");
    std::vector<std::size_t> idx(available);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    detail::ShuffleIndices(idx, rng);
    idx.resize(static_cast<std::size_t>(texts_per_domain));
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx)
      ev.texts.push_back(detail::MakeText(c, static_cast<int>(k), i * chunk_bytes, chunk_bytes));
  }
  ev.Finalize();
  return ev;
}

/// Variable-length variant: consecutive held-out pieces with lengths drawn
/// uniformly from [min_bytes, max_bytes].
inline EvalCorpus BuildEvalCorpusVariable(const std::vector<DomainCorpus>& domains,
                                          int texts_per_domain, std::uint64_t min_bytes,
                                          std::uint64_t max_bytes, std::uint64_t rng_seed) {
  if (texts_per_domain < 1) throw ConfigError("texts_per_domain must be >= 1");
  if (min_bytes < 1 || max_bytes < min_bytes)
    throw ConfigError("need 1 <= min_bytes <= max_bytes");
  EvalCorpus ev;
  Rng rng(rng_seed);
  for (std::size_t k = 0; k < domains.size(); ++k) {
    const auto& c = domains[k];
    ev.labels.push_back(c.spec.name);
    std::uint64_t off = 0;
    for (int i = 0; i < texts_per_domain; ++i) {
      std::uint64_t len = min_bytes + rng() % (max_bytes - min_bytes + 1);
      if (off + len > c.heldout_tokens.size())
        throw InputError("domain '" + c.spec.name + "': held-out material short by " +
                         std::to_string(off + len - c.heldout_tokens.size()) + " bytes");
      ev.texts.push_back(detail::MakeText(c, static_cast<int>(k), off, len));
      off += len;
    }
  }
  ev.Finalize();
  return ev;
}

/// Draws a domain index with probability equal to its weight. Consumes
/// exactly one engine draw.
inline int SampleDomain(const DomainWeights& weights, Rng& rng) {
  const double u = UniformUnit(rng);
  double c = 0.0;
  int last_positive = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] > 0.0) last_positive = static_cast<int>(k);
    c += weights[k];
    if (u < c && weights[k] > 0.0) return static_cast<int>(k);
  }
  return last_positive;
}

struct TokenBatch {
  int domain_index = 0;
  std::vector<std::vector<Token>> sequences;
  std::uint64_t total_tokens = 0;
};

/// Uniformly positioned contiguous training windows from one domain.
inline TokenBatch SampleBatch(const DomainCorpus& corpus, int domain_index,
                              std::size_t window_length, std::size_t windows, Rng& rng) {
  const auto& tok = corpus.train_tokens;
  if (window_length == 0 || window_length > tok.size())
    throw ContractError("SampleBatch: window_length " + std::to_string(window_length) +
                        " exceeds corpus length " + std::to_string(tok.size()));
  TokenBatch b;
  b.domain_index = domain_index;
  b.sequences.reserve(windows);
  const std::uint64_t span = tok.size() - window_length + 1;
  for (std::size_t w = 0; w < windows; ++w) {
    std::uint64_t start = rng() % span;
    b.sequences.emplace_back(tok.begin() + static_cast<std::ptrdiff_t>(start),
                             tok.begin() + static_cast<std::ptrdiff_t>(start + window_length));
  }
  b.total_tokens = windows * window_length;
  return b;
}

}  // namespace mixalign
