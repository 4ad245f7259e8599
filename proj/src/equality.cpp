#include "compocert/equality.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

namespace compocert {

double l2_distance(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double median_pairwise_distance(std::span<const Vector> points) {
  std::vector<double> d;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) d.push_back(l2_distance(points[i], points[j]));
  if (d.empty()) return 0.0;
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  return n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

std::vector<int> single_linkage(std::span<const Vector> points, double eps) {
  const std::size_t n = points.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto root = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (l2_distance(points[i], points[j]) <= eps) {
        auto a = root(i), b = root(j);
        // Lower index becomes the representative.
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }
  std::vector<int> labels(n, -1);
  std::map<std::size_t, int> numbering;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, fresh] = numbering.emplace(root(i), static_cast<int>(numbering.size()));
    labels[i] = it->second;
  }
  return labels;
}

PoolCanonicalizer::PoolCanonicalizer(std::span<const Value> training_values, const EqualityPolicy& policy)
    : mode_(policy.mode) {
  if (mode_ == EqualityMode::ExactSymbol) return;
  for (const auto& v : training_values)
    if (const auto* vec = std::get_if<Vector>(&v)) points_.push_back(*vec);
  if (points_.empty()) return;
  epsilon_ = policy.epsilon ? *policy.epsilon : policy.relative_epsilon * median_pairwise_distance(points_);
  if (epsilon_ < 0.0) throw std::invalid_argument("epsilon must be nonnegative");
  labels_ = single_linkage(points_, epsilon_);
  cluster_count_ = labels_.empty() ? 0 : static_cast<std::size_t>(*std::max_element(labels_.begin(), labels_.end()) + 1);
}

std::string PoolCanonicalizer::token(const Value& v) const {
  if (const auto* s = std::get_if<Symbol>(&v)) return "s:" + *s;
  const auto& vec = std::get<Vector>(v);
  if (mode_ == EqualityMode::ExactSymbol || points_.empty()) return "v:" + to_string(v);
  double best = std::numeric_limits<double>::infinity();
  int label = -1;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const double d = l2_distance(points_[i], vec);
    if (d < best) {
      best = d;
      label = labels_[i];
    }
  }
  if (best <= epsilon_) return "c:" + std::to_string(label);
  return "v:" + to_string(v);
}

bool values_equal(const Value& a, const Value& b, const EqualityPolicy& policy) {
  if (a.index() != b.index()) return false;
  if (is_symbol(a)) return std::get<Symbol>(a) == std::get<Symbol>(b);
  const auto& va = std::get<Vector>(a);
  const auto& vb = std::get<Vector>(b);
  if (policy.mode == EqualityMode::ExactSymbol || !policy.epsilon) return va == vb;
  return l2_distance(va, vb) <= *policy.epsilon;
}

}  // namespace compocert
