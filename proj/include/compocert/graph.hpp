#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace compocert {

using NodeId = int;
using SampleId = std::string;
using Symbol = std::string;
using Vector = std::vector<double>;

/// A node value: a symbolic token (reference graphs, discrete hypotheses,
/// decoded labels) or a real vector (learned hidden representations).
using Value = std::variant<Symbol, Vector>;

std::string to_string(const Value& v);
bool is_symbol(const Value& v);

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Component {
  std::string id;
  int arity = 1;
  bool commutative = false;
  /// Rows for discrete components: input tuple -> output token.
  std::map<std::vector<Symbol>, Symbol> table;
  /// Black-box value function for learned components (evaluated noise-free).
  std::function<Value(std::span<const Value>)> learned;

  [[nodiscard]] bool is_learned() const { return static_cast<bool>(learned); }
  [[nodiscard]] bool is_opaque() const { return !learned && table.empty(); }

  /// Throws DomainError on an input tuple outside the table, or for opaque components.
  [[nodiscard]] Value apply(std::span<const Value> inputs) const;
};

using ComponentTable = std::map<std::string, Component>;

/// Exhaustive permutation check for a commutative table component.
/// Returns a description of the first violating row, if any.
std::optional<std::string> commutativity_violation(const Component& c);

struct InternalNode {
  NodeId id = 0;
  std::string component;
  std::vector<NodeId> parents;
};

struct Graph {
  std::vector<NodeId> inputs;
  std::vector<InternalNode> nodes;
  std::vector<NodeId> outputs;

  [[nodiscard]] const InternalNode* find(NodeId id) const;
  [[nodiscard]] bool is_input(NodeId id) const;
  [[nodiscard]] std::size_t node_count() const { return inputs.size() + nodes.size(); }
};

enum class GraphErrorKind {
  CycleDetected,
  ArityMismatch,
  DanglingParent,
  DuplicateNode,
  UnknownComponent,
  DanglingOutput,
};

std::string to_string(GraphErrorKind kind);

struct GraphError {
  GraphErrorKind kind;
  std::vector<NodeId> nodes;
  std::string message;
};

class InvalidGraph : public std::runtime_error {
 public:
  explicit InvalidGraph(GraphError e);
  GraphError error;
};

std::optional<GraphError> validate_graph(const Graph& g, const ComponentTable& components);

/// Internal nodes in a deterministic topological order (ties broken by id).
/// Precondition: the graph is acyclic.
std::vector<const InternalNode*> topological_order(const Graph& g);

/// Longest-path depth of every node; inputs sit at level 0.
std::map<NodeId, int> node_levels(const Graph& g);

using Assignment = std::map<NodeId, Value>;

Assignment evaluate(const Graph& g, const ComponentTable& components, std::span<const Value> x);

/// First node whose stored value disagrees with its component applied to its
/// parents' stored values, or whose value is missing. Opaque components are skipped.
std::optional<NodeId> recheck_assignment(const Graph& g, const ComponentTable& components,
                                         const Assignment& values);

struct Sample {
  SampleId id;
  std::vector<Value> x;
  std::vector<Value> y;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;

  /// Throws std::invalid_argument when a sample id occurs twice.
  void validate() const;
  [[nodiscard]] const Sample* find(const SampleId& id) const;
  [[nodiscard]] bool is_train(const SampleId& id) const;
  [[nodiscard]] std::vector<SampleId> ids() const;
};

struct GraphSet {
  ComponentTable components;
  std::map<SampleId, Graph> graphs;
  std::map<SampleId, Assignment> values;

  /// Evaluates every graph on its sample's inputs and stores the assignments.
  void evaluate_all(const Dataset& d);
  [[nodiscard]] const Value& value(const SampleId& s, NodeId n) const;
};

using NodeMap = std::map<NodeId, NodeId>;

enum class LabelMatch {
  /// Component ids must agree node by node (graphs over one component table).
  ComponentId,
  /// Purely structural: hypothesis and reference components may carry different ids.
  StructureOnly,
};

/// Exact isomorphism preserving inputs (by position), outputs (by position),
/// edges and parent order (as a multiset for commutative components).
std::optional<NodeMap> isomorphic(const Graph& g1, const ComponentTable& c1, const Graph& g2,
                                  const ComponentTable& c2,
                                  LabelMatch match = LabelMatch::ComponentId);

inline std::optional<NodeMap> isomorphic(const Graph& g1, const Graph& g2,
                                         const ComponentTable& components) {
  return isomorphic(g1, components, g2, components, LabelMatch::ComponentId);
}

class MissingSample : public std::runtime_error {
 public:
  explicit MissingSample(const SampleId& id);
  SampleId sample;
};

struct Alignment {
  std::map<SampleId, NodeMap> maps;
};

struct AlignmentFailure {
  SampleId sample;
  std::string reason;
};

using AlignmentResult = std::variant<Alignment, AlignmentFailure>;

/// Per-sample isomorphism between hypothesis and reference sets, visiting
/// samples in `order` (all graphs of H, sorted by id, when empty).
AlignmentResult structural_alignment(const GraphSet& h, const GraphSet& z,
                                     std::span<const SampleId> order = {});

}  // namespace compocert
