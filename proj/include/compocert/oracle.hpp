#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "compocert/conditions.hpp"
#include "compocert/graph.hpp"
#include "compocert/rng.hpp"

namespace compocert {

// ---------------------------------------------------------------------------
// Finite mappings

struct MappingInstance {
  int domain_size = 0;
  int codomain_size = 0;
  std::vector<std::pair<int, int>> pairs;
};

struct MappingLemmaReport {
  bool pass = true;
  int max_size = 0;
  std::uint64_t maps_enumerated = 0;
  std::uint64_t onto_maps = 0;
  std::uint64_t bijections = 0;
  /// onto_counts[n][k]: enumerated onto maps from an n-set onto a k-set.
  std::vector<std::vector<std::uint64_t>> onto_counts;
  /// Same counts by inclusion-exclusion, for the internal cross-check.
  std::vector<std::vector<std::uint64_t>> onto_formula;
  std::optional<MappingInstance> counterexample;
  std::string failure;
};

/// Exhaustive check over all maps A -> B with 1 <= |A|, |B| <= max_size:
/// onto maps are one-to-one exactly when |A| = |B|, every map with |A| > |B|
/// has a collision, and one-to-one maps never have |A| > |B|.
MappingLemmaReport verify_mapping_lemmas(int max_size);

nlohmann::json to_json(const MappingLemmaReport& r);

// ---------------------------------------------------------------------------
// Discrete worlds

enum class Scenario {
  ConditionsHold,
  BreakAlignment,
  BreakUnambiguous,
  BreakMinimized,
  UnseenInputs,
  Random,
};

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);
inline constexpr Scenario kAllScenarios[] = {Scenario::ConditionsHold,   Scenario::BreakAlignment,
                                            Scenario::BreakUnambiguous, Scenario::BreakMinimized,
                                            Scenario::UnseenInputs,     Scenario::Random};

struct WorldParams {
  int min_inputs = 2;
  int max_inputs = 3;
  int min_internal = 2;
  int max_internal = 6;
  int min_alphabet = 2;
  int max_alphabet = 3;
  double reuse_probability = 0.3;
  double commutative_probability = 0.3;
  double min_train_fraction = 0.5;
  double max_train_fraction = 0.8;
  int max_retries = 500;
};

class GenerationFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DiscreteWorld {
  Scenario scenario = Scenario::ConditionsHold;
  std::uint64_t seed = 0;
  Graph structure;
  /// Output alphabet size of every internal node and input.
  std::map<NodeId, int> alphabet;
  Dataset dataset;
  GraphSet reference;
  GraphSet hypothesis;
};

/// Builds a random reference (structure, total tables, full input product,
/// seen-inputs split), derives a hypothesis for the scenario and verifies the
/// scenario with the exact-policy checker. Throws GenerationFailed.
DiscreteWorld generate_world(const WorldParams& params, Scenario scenario, std::uint64_t seed);

nlohmann::json to_json(const DiscreteWorld& w);

// ---------------------------------------------------------------------------
// Induction trace

struct TraceLine {
  SampleId test_sample;
  NodeId h_node = 0;
  NodeId z_node = 0;
  PoolKey pool;
  bool is_input = false;
  bool is_output = false;
  std::string h;
  std::string z;
  /// Training sample A (and its node) with equal reference input tuple.
  SampleId witness;
  NodeId witness_node = 0;
  /// C_i: training witnesses of the parents' values, in hypothesis parent order.
  std::vector<std::pair<SampleId, NodeId>> parent_witnesses;
  /// Position in A's tuple matched by each position of B's tuple.
  std::vector<int> permutation;
  bool eq_inputs = false;   // I:   z-input tuples of A and B agree
  bool eq_parents = false;  // II:  h-input tuples of A and B agree via C_i
  bool eq_outputs = false;  // III: z^A = z^B and h^A = h^B
};

struct InductionTrace {
  std::vector<TraceLine> lines;
  std::size_t outputs_checked = 0;
  std::size_t outputs_correct = 0;
  /// Traced prediction per (test sample, output position).
  std::map<std::pair<SampleId, std::size_t>, std::string> predictions;
};

class TraceFailure : public std::runtime_error {
 public:
  TraceFailure(SampleId sample, NodeId node, const std::string& why);
  SampleId sample;
  NodeId node;
};

/// Bottom-up witness construction for every test node. Requires the theorem
/// conditions (throws PreconditionViolated); throws TraceFailure if a step
/// cannot be justified.
InductionTrace run_induction_trace(const GraphSet& h, const GraphSet& z, const Dataset& d,
                                   const EqualityPolicy& policy);

/// Re-checks every line against the assignments. Returns the first problem.
std::optional<std::string> revalidate_trace(const InductionTrace& t, const GraphSet& h, const GraphSet& z,
                                            const Dataset& d, const EqualityPolicy& policy);

nlohmann::json to_json(const InductionTrace& t);

// ---------------------------------------------------------------------------
// Both directions

class CounterexampleFound : public std::runtime_error {
 public:
  CounterexampleFound(const std::string& what, nlohmann::json world);
  nlohmann::json world;
};

struct TheoremOracleConfig {
  int trials = 1000;
  WorldParams params;
  std::uint64_t seed = 0;
  bool sufficiency = true;
  bool necessity = true;
  bool stop_on_counterexample = false;
};

struct TheoremOracleStats {
  int sufficiency_worlds = 0;
  int sufficiency_generalized = 0;
  int traces_completed = 0;
  int sufficiency_failures = 0;

  int necessity_worlds = 0;
  int necessity_premise = 0;  // generalize and have seen test inputs
  int necessity_failures = 0;
  std::map<std::string, int> necessity_premise_by_scenario;

  int break_minimized_worlds = 0;
  int break_minimized_mispredicting = 0;

  int generation_failures = 0;
  std::vector<nlohmann::json> counterexamples;

  [[nodiscard]] bool pass() const { return sufficiency_failures == 0 && necessity_failures == 0; }
};

TheoremOracleStats verify_theorem_both_directions(const TheoremOracleConfig& cfg);

nlohmann::json to_json(const TheoremOracleStats& s);

}  // namespace compocert
