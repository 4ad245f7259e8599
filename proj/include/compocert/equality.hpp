#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "compocert/graph.hpp"

namespace compocert {

enum class EqualityMode { ExactSymbol, VectorThreshold };

/// How node values are compared. Symbols always compare by identity; in
/// threshold mode real vectors are equal iff they share a single-linkage
/// cluster at radius epsilon (L2). Without an explicit epsilon each pool uses
/// `relative_epsilon` times the median pairwise distance of its training values.
struct EqualityPolicy {
  EqualityMode mode = EqualityMode::ExactSymbol;
  std::optional<double> epsilon;
  double relative_epsilon = 0.1;

  static EqualityPolicy exact() { return {}; }
  static EqualityPolicy threshold(std::optional<double> eps = std::nullopt) {
    return {EqualityMode::VectorThreshold, eps, 0.1};
  }
};

double l2_distance(const Vector& a, const Vector& b);

/// Median of all pairwise L2 distances (0 for fewer than two points).
double median_pairwise_distance(std::span<const Vector> points);

/// Single-linkage clusters at radius eps (pairs with distance <= eps are
/// linked). Pairs are merged in lexicographic index order; labels are numbered
/// by first occurrence, so the result depends only on the input order.
std::vector<int> single_linkage(std::span<const Vector> points, double eps);

/// Maps the values of one pool (one component's outputs) to canonical tokens:
/// training values by cluster, other values to the cluster of the nearest
/// training value within epsilon, or to a fresh token when none is close.
class PoolCanonicalizer {
 public:
  PoolCanonicalizer() = default;
  PoolCanonicalizer(std::span<const Value> training_values, const EqualityPolicy& policy);

  [[nodiscard]] std::string token(const Value& v) const;
  [[nodiscard]] double epsilon() const { return epsilon_; }
  [[nodiscard]] std::size_t training_cluster_count() const { return cluster_count_; }

 private:
  EqualityMode mode_ = EqualityMode::ExactSymbol;
  double epsilon_ = 0.0;
  std::vector<Vector> points_;
  std::vector<int> labels_;
  std::size_t cluster_count_ = 0;
};

/// Pointwise value equality under a policy, using its explicit epsilon (or
/// exact comparison when none is set).
bool values_equal(const Value& a, const Value& b, const EqualityPolicy& policy);

}  // namespace compocert
