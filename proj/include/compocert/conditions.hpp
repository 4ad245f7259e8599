#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "compocert/equality.hpp"
#include "compocert/graph.hpp"

namespace compocert {

/// Pool name shared by all input nodes; inputs carry raw sample values.
inline const std::string kInputPool = "<input>";

class MissingAssignment : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionViolated : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArityMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Canonical tokens for every node value of one graph set. Values are pooled by
/// the component that produced them; each pool clusters its training values.
class SetCanonicalizer {
 public:
  SetCanonicalizer(const GraphSet& s, const Dataset& d, const EqualityPolicy& policy);

  [[nodiscard]] const std::string& pool(const SampleId& sample, NodeId node) const;
  [[nodiscard]] const std::string& token(const SampleId& sample, NodeId node) const;
  [[nodiscard]] const std::map<std::string, PoolCanonicalizer>& pools() const { return pools_; }

 private:
  std::map<std::pair<SampleId, NodeId>, std::pair<std::string, std::string>> entries_;
  std::map<std::string, PoolCanonicalizer> pools_;
};

struct PoolKey {
  std::string h_component;
  std::string z_component;
  auto operator<=>(const PoolKey&) const = default;
  [[nodiscard]] std::string str() const { return h_component + "~" + z_component; }
};

/// One aligned node occurrence: hypothesis value h and reference value z.
struct PairRecord {
  SampleId sample;
  NodeId h_node = 0;
  NodeId z_node = 0;
  std::string h;
  std::string z;
  std::vector<NodeId> h_parents;
  /// Hypothesis parent tokens, in hypothesis parent order.
  std::vector<std::string> h_inputs;
  /// Reference tokens of the nodes aligned with h_parents (hypothesis order).
  std::vector<std::string> z_aligned_inputs;
  /// Reference input tuple in the reference graph's own parent order.
  std::vector<std::string> z_inputs;
  std::vector<PoolKey> input_pools;
};

/// Aligned (h, z) pairs grouped by (hypothesis component, reference component).
struct NodePairTable {
  std::map<PoolKey, std::vector<PairRecord>> pools;
};

NodePairTable build_pair_table(const GraphSet& h, const SetCanonicalizer& hc, const GraphSet& z,
                               const SetCanonicalizer& zc, const Alignment& alignment,
                               std::span<const Sample> samples);

enum class Split { Train, Test };

struct PredictionCheck {
  bool pass = true;
  std::vector<SampleId> wrong;
};

/// Output nodes compared to Y by token identity (learned models export decoded labels).
PredictionCheck check_correct_predictions(const GraphSet& s, const Dataset& d, Split split);

struct UnseenInput {
  SampleId sample;
  NodeId node = 0;
  std::string component;
  std::vector<std::string> tuple;
};

struct SeenInputsCheck {
  bool pass = true;
  std::optional<UnseenInput> first_unseen;
  std::size_t test_nodes = 0;
};

SeenInputsCheck check_seen_test_inputs(const GraphSet& s, const Dataset& d, const SetCanonicalizer& canon);
SeenInputsCheck check_seen_test_inputs(const GraphSet& s, const Dataset& d, const EqualityPolicy& policy);

struct AmbiguityWitness {
  PoolKey pool;
  SampleId sample_a;
  NodeId node_a = 0;
  SampleId sample_c;
  NodeId node_c = 0;
  std::string h;
  std::string z_a;
  std::string z_c;
};

struct UnambiguousCheck {
  bool pass = true;
  /// All violating pairs, ordered by (first record index, second record index).
  std::vector<AmbiguityWitness> violations;
};

UnambiguousCheck check_unambiguous(const NodePairTable& train);

struct PoolCounts {
  PoolKey pool;
  std::size_t distinct_h = 0;
  std::size_t distinct_z = 0;
};

struct MinimizedCheck {
  bool pass = true;
  std::vector<PoolCounts> counts;
};

/// Count equality |distinct h| == |distinct z| on every component-output pool.
/// Throws PreconditionViolated unless the table is unambiguous.
MinimizedCheck check_minimized(const NodePairTable& train);

struct OneToOneCheck {
  bool pass = true;
  std::optional<AmbiguityWitness> first_violation;  // z equal, h different
};

OneToOneCheck check_one_to_one(const NodePairTable& train);

struct OntoCheck {
  bool pass = true;
  std::optional<PairRecord> gap;  // a reference value never produced in training
};

OntoCheck check_onto(const NodePairTable& train, const NodePairTable& test);

struct PoolAudit {
  double epsilon = 0.0;
  std::size_t training_clusters = 0;
};

struct ConditionReport {
  bool aligned = false;
  std::optional<AlignmentFailure> alignment_failure;
  std::optional<Alignment> alignment;

  PredictionCheck reference_train;
  PredictionCheck reference_test;
  SeenInputsCheck reference_seen_inputs;

  PredictionCheck correct_train;
  PredictionCheck correct_test;
  SeenInputsCheck seen_test_inputs;

  std::optional<UnambiguousCheck> unambiguous;
  std::optional<MinimizedCheck> minimized;
  std::optional<OntoCheck> onto;
  std::optional<OneToOneCheck> one_to_one_direct;
  bool one_to_one = false;  // unambiguous && minimized

  std::map<std::string, PoolAudit> hypothesis_pools;

  [[nodiscard]] bool reference_valid() const {
    return reference_train.pass && reference_test.pass && reference_seen_inputs.pass;
  }
  [[nodiscard]] bool conditions_hold() const {
    return aligned && unambiguous && unambiguous->pass && minimized && minimized->pass;
  }
  /// Mapping consistency: with well-defined and onto mappings, the derived and
  /// direct one-to-one verdicts agree.
  [[nodiscard]] bool mapping_consistent() const;
  [[nodiscard]] bool all_pass() const;
};

/// Alignment, then per-pool unambiguous/minimized/onto checks on training
/// pairs, seen test inputs, and prediction correctness for both sets.
ConditionReport check_theorem_conditions(const GraphSet& h, const GraphSet& z, const Dataset& d,
                                         const EqualityPolicy& policy);

/// Elementwise equality, or multiset equality for commutative components.
bool effectively_equal(std::span<const Value> a, std::span<const Value> b, const Component& c,
                       const EqualityPolicy& policy);

/// Token-level variant used on canonicalised tuples.
bool effectively_equal_tokens(std::vector<std::string> a, std::vector<std::string> b, bool commutative);

struct AlternativeCgCheck {
  bool pass = true;
  bool train_correct = false;
  bool test_correct = false;
  bool seen_inputs = false;
  std::vector<std::string> failing;  // names of failing conjuncts
};

/// Correct training predictions imply correct test predictions and seen test inputs.
AlternativeCgCheck check_alternative_cg(const GraphSet& h, const Dataset& d, const EqualityPolicy& policy);

nlohmann::json to_json(const ConditionReport& r);
nlohmann::json to_json(const AlternativeCgCheck& r);
std::string format_table(const ConditionReport& r);

}  // namespace compocert
