#include <gtest/gtest.h>

#include <map>

#include "mixalign/corpus.hpp"

namespace mixalign {
namespace {

DomainSpec Spec(std::string name, int order, std::uint64_t seed, int alphabet, double skew) {
  DomainSpec s;
  s.name = std::move(name);
  s.order = order;
  s.transition_seed = seed;
  s.alphabet_size = alphabet;
  s.skew = skew;
  return s;
}

TEST(DomainSpec, RejectsInvalidFields) {
  EXPECT_THROW(Spec("a", 1, 0, 1, 1.0).Validate(), ConfigError);
  EXPECT_THROW(Spec("a", -1, 0, 4, 1.0).Validate(), ConfigError);
  EXPECT_THROW(Spec("a", 1, 0, 4, 0.0).Validate(), ConfigError);
  EXPECT_THROW(Spec("a", 3, 0, 256, 1.0).Validate(), ConfigError);
  EXPECT_NO_THROW(Spec("a", 2, 0, 256, 1.0).Validate());
}

TEST(GenerateDomain, DegenerateDistributionRepeatsOneToken) {
  // A vanishing concentration puts all row mass on a single token. Find the
  // transition seed whose dominant token is 7.
  std::uint64_t seed = 0;
  for (;; ++seed) {
    TransitionTable t(Spec("deg", 0, seed, 256, 1e-6));
    if (t.prob(0, 7) == 1.0) break;
    ASSERT_LT(seed, 10000u);
  }
  auto c = GenerateDomain(Spec("deg", 0, seed, 256, 1e-6), 100, 42);
  ASSERT_EQ(c.train_tokens.size(), 100u);
  for (Token t : c.train_tokens) EXPECT_EQ(t, 7);
}

TEST(GenerateDomain, DeterministicForEqualInputs) {
  auto spec = Spec("a", 1, 3, 32, 0.5);
  auto a = GenerateDomain(spec, 5000, 9);
  auto b = GenerateDomain(spec, 5000, 9);
  EXPECT_EQ(a.train_tokens, b.train_tokens);
  EXPECT_EQ(a.heldout_tokens, b.heldout_tokens);
  auto c = GenerateDomain(spec, 5000, 10);
  EXPECT_NE(a.train_tokens, c.train_tokens);
}

TEST(GenerateDomain, TokensStayInAlphabetAndHoldoutFractionIsReserved) {
  auto c = GenerateDomain(Spec("a", 2, 5, 12, 0.3), 9000, 1);
  EXPECT_EQ(c.train_tokens.size(), 9000u);
  EXPECT_EQ(c.heldout_tokens.size(), 1000u);
  EXPECT_EQ(c.byte_count, 10000u);
  for (Token t : c.train_tokens) EXPECT_LT(t, 12);
}

TEST(GenerateDomain, TooSmallNamesTheMinimum) {
  GenerateOptions opts;
  opts.min_train_bytes = 256;
  try {
    GenerateDomain(Spec("a", 1, 0, 16, 1.0), 100, 0, opts);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("256"), std::string::npos);
  }
}

TEST(GenerateDomain, EmpiricalBigramsMatchTransitionTable) {
  auto spec = Spec("big", 1, 77, 256, 0.1);
  TransitionTable table(spec);
  auto c = GenerateDomain(spec, 1u << 20, 123, {.holdout_fraction = 0.0});
  std::vector<double> counts(256 * 256, 0.0), ctx(256, 0.0);
  for (std::size_t i = 1; i < c.train_tokens.size(); ++i) {
    counts[c.train_tokens[i - 1] * 256u + c.train_tokens[i]] += 1.0;
    ctx[c.train_tokens[i - 1]] += 1.0;
  }
  // Context-frequency weighted total variation between empirical and
  // materialized rows.
  const double n = static_cast<double>(c.train_tokens.size() - 1);
  double tv = 0.0;
  for (std::size_t a = 0; a < 256; ++a) {
    if (ctx[a] == 0.0) continue;
    double row = 0.0;
    for (std::size_t b = 0; b < 256; ++b)
      row += std::abs(counts[a * 256 + b] / ctx[a] - table.prob(a, b));
    tv += ctx[a] / n * 0.5 * row;
  }
  EXPECT_LT(tv, 0.05);
}

TEST(GenerateDomain, TvShrinksWithLength) {
  auto spec = Spec("conv", 1, 5, 16, 0.5);
  TransitionTable table(spec);
  auto tv_for = [&](std::uint64_t len) {
    auto c = GenerateDomain(spec, len, 3, {.holdout_fraction = 0.0});
    std::vector<double> counts(256, 0.0), ctx(16, 0.0);
    for (std::size_t i = 1; i < c.train_tokens.size(); ++i) {
      counts[c.train_tokens[i - 1] * 16u + c.train_tokens[i]] += 1;
      ctx[c.train_tokens[i - 1]] += 1;
    }
    double tv = 0.0;
    for (std::size_t a = 0; a < 16; ++a)
      for (std::size_t b = 0; b < 16; ++b)
        if (ctx[a] > 0)
          tv += ctx[a] / static_cast<double>(len - 1) * 0.5 *
                std::abs(counts[a * 16 + b] / ctx[a] - table.prob(a, b));
    return tv;
  };
  EXPECT_GT(tv_for(2000), tv_for(200000));
}

std::vector<DomainCorpus> ThreeDomains(std::uint64_t train = 18000) {
  std::vector<DomainCorpus> d;
  for (int k = 0; k < 3; ++k)
    d.push_back(GenerateDomain(Spec("d" + std::to_string(k), 1, 10 + k, 32, 0.5), train, 100 + k));
  return d;
}

TEST(BuildEvalCorpus, CountsAndLengths) {
  auto domains = ThreeDomains(92160);  // 10% held out = 10240 bytes = 10 chunks
  auto ev = BuildEvalCorpus(domains, 10, 1024, 5);
  EXPECT_EQ(ev.N(), 30u);
  EXPECT_EQ(ev.K(), 3);
  for (const auto& t : ev.texts) {
    EXPECT_EQ(t.byte_length, 1024u);
    EXPECT_EQ(t.tokens.size(), 1024u);
  }
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(ev.per_domain_counts[k], 10);
    EXPECT_DOUBLE_EQ(ev.per_domain_mean_tokens[k], 1024.0);
  }
}

TEST(BuildEvalCorpus, DisjointFromTrainingBytes) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto domains = ThreeDomains(18000 + seed * 900);
    auto ev = BuildEvalCorpus(domains, 3, 128, seed);
    for (const auto& t : ev.texts) {
      const auto& c = domains[t.domain];
      EXPECT_GE(t.offset, c.train_size());
      EXPECT_LE(t.offset + t.byte_length, c.byte_count);
      // Content matches the stream at the recorded offset.
      for (std::size_t i = 0; i < t.tokens.size(); ++i)
        EXPECT_EQ(t.tokens[i], c.heldout_tokens[t.offset - c.train_size() + i]);
    }
  }
}

TEST(BuildEvalCorpus, ReportsShortfall) {
  auto domains = ThreeDomains(9000);  // 1000 held-out bytes
  try {
    BuildEvalCorpus(domains, 5, 256, 0);  // 3 chunks available
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("short by 2 chunks"), std::string::npos) << e.what();
  }
}

TEST(BuildEvalCorpus, VariableLengthTexts) {
  auto domains = ThreeDomains();
  auto ev = BuildEvalCorpusVariable(domains, 6, 50, 150, 4);
  EXPECT_EQ(ev.N(), 18u);
  for (const auto& t : ev.texts) {
    EXPECT_GE(t.byte_length, 50u);
    EXPECT_LE(t.byte_length, 150u);
  }
}

TEST(SampleDomain, OneHotAlwaysReturnsThatDomain) {
  Rng rng(1);
  auto w = DomainWeights::OneHot(2, DefaultLabels(4));
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(SampleDomain(w, rng), 2);
}

// Binomial standard deviation at n = 1e5 is at most 0.0016, so a 0.01
// window is more than six sigma.
TEST(SampleDomain, FrequenciesMatchWeights) {
  for (auto values : {std::vector<double>{0.25, 0.25, 0.25, 0.25}, std::vector<double>{0.75, 0.25}}) {
    DomainWeights w(values, DefaultLabels(values.size()));
    Rng rng(2024);
    std::vector<double> freq(values.size(), 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) freq[SampleDomain(w, rng)] += 1.0 / n;
    for (std::size_t k = 0; k < values.size(); ++k) EXPECT_NEAR(freq[k], values[k], 0.01);
  }
}

TEST(SampleDomain, ConsumesOneDrawPerCall) {
  Rng a(5), b(5);
  auto w = DomainWeights::Uniform(DefaultLabels(3));
  SampleDomain(w, a);
  b.discard(1);
  EXPECT_EQ(a, b);
}

TEST(SampleBatch, FullCorpusWindowIsForced) {
  auto c = GenerateDomain(Spec("a", 1, 1, 8, 1.0), 64, 1);
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    auto b = SampleBatch(c, 0, 64, 2, rng);
    for (const auto& s : b.sequences) EXPECT_EQ(s, c.train_tokens);
  }
}

TEST(SampleBatch, ShapeAndDeterminism) {
  auto c = GenerateDomain(Spec("a", 1, 1, 8, 1.0), 4096, 1);
  Rng rng(3);
  Rng clone = rng;
  auto b1 = SampleBatch(c, 1, 256, 8, rng);
  auto b2 = SampleBatch(c, 1, 256, 8, clone);
  EXPECT_EQ(b1.total_tokens, 2048u);
  EXPECT_EQ(b1.sequences.size(), 8u);
  EXPECT_EQ(b1.sequences, b2.sequences);
  EXPECT_EQ(b1.domain_index, 1);
}

TEST(SampleBatch, WindowLongerThanCorpusIsAnError) {
  auto c = GenerateDomain(Spec("a", 1, 1, 8, 1.0), 32, 1);
  Rng rng(3);
  EXPECT_THROW(SampleBatch(c, 0, 33, 1, rng), ContractError);
}

}  // namespace
}  // namespace mixalign
