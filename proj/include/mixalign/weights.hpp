#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "mixalign/common.hpp"

namespace mixalign {

inline constexpr double kSimplexTolerance = 1e-9;

/// A point on the (K-1)-simplex, one weight per named domain.
///
/// Construction validates: nonnegative finite entries summing to one
/// within 1e-9 and unique labels. Instances are immutable afterwards.
class DomainWeights {
 public:
  DomainWeights() = default;

  DomainWeights(std::vector<double> values, std::vector<std::string> labels)
      : values_(std::move(values)), labels_(std::move(labels)) {
    Require(!values_.empty(), "DomainWeights: empty weight vector");
    Require(values_.size() == labels_.size(),
            "DomainWeights: " + std::to_string(values_.size()) +
                " values but " + std::to_string(labels_.size()) + " labels");
    double sum = 0.0;
    for (double v : values_) {
      Require(std::isfinite(v) && v >= 0.0,
              "DomainWeights: negative or non-finite weight");
      sum += v;
    }
    Require(std::abs(sum - 1.0) <= kSimplexTolerance,
            "DomainWeights: values sum to " + FormatDouble(sum) +
                ", expected 1 within 1e-9");
    std::set<std::string> seen(labels_.begin(), labels_.end());
    Require(seen.size() == labels_.size(), "DomainWeights: duplicate labels");
  }

  static DomainWeights Uniform(std::vector<std::string> labels) {
    const std::size_t k = labels.size();
    Require(k > 0, "DomainWeights::Uniform: no domains");
    return DomainWeights(std::vector<double>(k, 1.0 / static_cast<double>(k)),
                         std::move(labels));
  }

  static DomainWeights OneHot(std::size_t index,
                              std::vector<std::string> labels) {
    Require(index < labels.size(), "DomainWeights::OneHot: index out of range");
    std::vector<double> v(labels.size(), 0.0);
    v[index] = 1.0;
    return DomainWeights(std::move(v), std::move(labels));
  }

  // Renormalizes nonnegative masses onto the simplex.
  static DomainWeights Normalize(std::span<const double> mass,
                                 std::vector<std::string> labels) {
    double total = 0.0;
    for (double m : mass) {
      Require(std::isfinite(m) && m >= 0.0,
              "DomainWeights::Normalize: negative or non-finite mass");
      total += m;
    }
    Require(total > 0.0, "DomainWeights::Normalize: zero total mass");
    std::vector<double> v(mass.begin(), mass.end());
    for (double& x : v) x /= total;
    return DomainWeights(std::move(v), std::move(labels));
  }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t k) const { return values_[k]; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<std::string>& labels() const { return labels_; }

  std::size_t ArgMax() const {
    return static_cast<std::size_t>(
        std::max_element(values_.begin(), values_.end()) - values_.begin());
  }

  friend bool operator==(const DomainWeights&, const DomainWeights&) = default;

 private:
  std::vector<double> values_;
  std::vector<std::string> labels_;
};

inline std::vector<std::string> DefaultLabels(std::size_t k) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < k; ++i) labels.push_back("d" + std::to_string(i));
  return labels;
}

}  // namespace mixalign
