#include "compocert/graph.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <queue>
#include <set>
#include <sstream>

namespace compocert {

std::string to_string(const Value& v) {
  if (const auto* s = std::get_if<Symbol>(&v)) return *s;
  const auto& vec = std::get<Vector>(v);
  std::string out = "[";
  char buf[32];
  for (std::size_t i = 0; i < vec.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", vec[i]);
    if (i) out += ",";
    out += buf;
  }
  return out + "]";
}

bool is_symbol(const Value& v) { return std::holds_alternative<Symbol>(v); }

namespace {

std::string join(const std::vector<Symbol>& xs) {
  std::string out = "(";
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + xs[i];
  return out + ")";
}

}  // namespace

Value Component::apply(std::span<const Value> inputs) const {
  if (static_cast<int>(inputs.size()) != arity)
    throw DomainError("component '" + id + "' expects " + std::to_string(arity) + " inputs, got " +
                      std::to_string(inputs.size()));
  if (learned) return learned(inputs);
  if (table.empty()) throw DomainError("component '" + id + "' has no value function");
  std::vector<Symbol> key;
  key.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (!is_symbol(v)) throw DomainError("table component '" + id + "' received a vector input");
    key.push_back(std::get<Symbol>(v));
  }
  if (auto it = table.find(key); it != table.end()) return it->second;
  if (commutative) {
    std::sort(key.begin(), key.end());
    do {
      if (auto it = table.find(key); it != table.end()) return it->second;
    } while (std::next_permutation(key.begin(), key.end()));
  }
  throw DomainError("component '" + id + "' has no row for " + join(key));
}

std::optional<std::string> commutativity_violation(const Component& c) {
  if (!c.commutative) return std::nullopt;
  for (const auto& [row, out] : c.table) {
    std::vector<Symbol> perm = row;
    std::sort(perm.begin(), perm.end());
    do {
      auto it = c.table.find(perm);
      if (it != c.table.end() && it->second != out)
        return "component '" + c.id + "': " + join(row) + "->" + out + " but " + join(perm) +
               "->" + it->second;
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return std::nullopt;
}

const InternalNode* Graph::find(NodeId id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

bool Graph::is_input(NodeId id) const {
  return std::find(inputs.begin(), inputs.end(), id) != inputs.end();
}

std::string to_string(GraphErrorKind kind) {
  switch (kind) {
    case GraphErrorKind::CycleDetected: return "CycleDetected";
    case GraphErrorKind::ArityMismatch: return "ArityMismatch";
    case GraphErrorKind::DanglingParent: return "DanglingParent";
    case GraphErrorKind::DuplicateNode: return "DuplicateNode";
    case GraphErrorKind::UnknownComponent: return "UnknownComponent";
    case GraphErrorKind::DanglingOutput: return "DanglingOutput";
  }
  return "?";
}

InvalidGraph::InvalidGraph(GraphError e)
    : std::runtime_error(to_string(e.kind) + ": " + e.message), error(std::move(e)) {}

std::optional<GraphError> validate_graph(const Graph& g, const ComponentTable& components) {
  std::set<NodeId> seen;
  for (NodeId id : g.inputs)
    if (!seen.insert(id).second)
      return GraphError{GraphErrorKind::DuplicateNode, {id}, "node " + std::to_string(id) + " declared twice"};
  for (const auto& n : g.nodes)
    if (!seen.insert(n.id).second)
      return GraphError{GraphErrorKind::DuplicateNode, {n.id}, "node " + std::to_string(n.id) + " declared twice"};

  for (const auto& n : g.nodes) {
    auto it = components.find(n.component);
    if (it == components.end())
      return GraphError{GraphErrorKind::UnknownComponent, {n.id},
                        "node " + std::to_string(n.id) + " uses unknown component '" + n.component + "'"};
    if (it->second.arity != static_cast<int>(n.parents.size()) || n.parents.empty())
      return GraphError{GraphErrorKind::ArityMismatch, {n.id},
                        "node " + std::to_string(n.id) + " has " + std::to_string(n.parents.size()) +
                            " parents but component '" + n.component + "' has arity " +
                            std::to_string(it->second.arity)};
    for (NodeId p : n.parents)
      if (!seen.contains(p))
        return GraphError{GraphErrorKind::DanglingParent, {n.id, p},
                          "node " + std::to_string(n.id) + " references missing parent " + std::to_string(p)};
  }
  for (NodeId o : g.outputs)
    if (!seen.contains(o))
      return GraphError{GraphErrorKind::DanglingOutput, {o}, "output references missing node " + std::to_string(o)};

  // Kahn's algorithm; whatever remains unprocessed sits on or behind a cycle.
  std::map<NodeId, int> pending;
  std::map<NodeId, std::vector<NodeId>> children;
  for (const auto& n : g.nodes) {
    pending[n.id] = static_cast<int>(n.parents.size());
    for (NodeId p : n.parents) children[p].push_back(n.id);
  }
  std::queue<NodeId> ready;
  for (NodeId id : g.inputs) ready.push(id);
  std::size_t done = 0;
  while (!ready.empty()) {
    NodeId id = ready.front();
    ready.pop();
    ++done;
    for (NodeId c : children[id])
      if (--pending[c] == 0) ready.push(c);
  }
  if (done != g.node_count()) {
    std::vector<NodeId> stuck;
    for (const auto& [id, left] : pending)
      if (left > 0) stuck.push_back(id);
    std::string msg = "cycle through nodes";
    for (NodeId id : stuck) msg += " " + std::to_string(id);
    return GraphError{GraphErrorKind::CycleDetected, stuck, msg};
  }
  return std::nullopt;
}

std::vector<const InternalNode*> topological_order(const Graph& g) {
  std::map<NodeId, const InternalNode*> by_id;
  std::map<NodeId, int> pending;
  std::map<NodeId, std::vector<NodeId>> children;
  for (const auto& n : g.nodes) {
    by_id[n.id] = &n;
    pending[n.id] = static_cast<int>(n.parents.size());
    for (NodeId p : n.parents) children[p].push_back(n.id);
  }
  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
  auto release = [&](NodeId id) {
    for (NodeId c : children[id])
      if (--pending[c] == 0) ready.push(c);
  };
  for (NodeId id : g.inputs) release(id);
  std::vector<const InternalNode*> order;
  order.reserve(g.nodes.size());
  while (!ready.empty()) {
    NodeId id = ready.top();
    ready.pop();
    order.push_back(by_id.at(id));
    release(id);
  }
  return order;
}

std::map<NodeId, int> node_levels(const Graph& g) {
  std::map<NodeId, int> level;
  for (NodeId id : g.inputs) level[id] = 0;
  for (const InternalNode* n : topological_order(g)) {
    int l = 0;
    for (NodeId p : n->parents) l = std::max(l, level.at(p));
    level[n->id] = l + 1;
  }
  return level;
}

Assignment evaluate(const Graph& g, const ComponentTable& components, std::span<const Value> x) {
  if (auto err = validate_graph(g, components)) throw InvalidGraph(*err);
  if (x.size() != g.inputs.size())
    throw DomainError("graph has " + std::to_string(g.inputs.size()) + " inputs, got " + std::to_string(x.size()));
  Assignment a;
  for (std::size_t i = 0; i < x.size(); ++i) a[g.inputs[i]] = x[i];
  std::vector<Value> args;
  for (const InternalNode* n : topological_order(g)) {
    args.clear();
    for (NodeId p : n->parents) args.push_back(a.at(p));
    a[n->id] = components.at(n->component).apply(args);
  }
  return a;
}

std::optional<NodeId> recheck_assignment(const Graph& g, const ComponentTable& components,
                                         const Assignment& values) {
  for (NodeId id : g.inputs)
    if (!values.contains(id)) return id;
  std::vector<Value> args;
  for (const InternalNode* n : topological_order(g)) {
    auto it = values.find(n->id);
    if (it == values.end()) return n->id;
    const Component& c = components.at(n->component);
    if (c.is_opaque()) continue;
    args.clear();
    for (NodeId p : n->parents) args.push_back(values.at(p));
    try {
      if (c.apply(args) != it->second) return n->id;
    } catch (const DomainError&) {
      return n->id;
    }
  }
  return std::nullopt;
}

void Dataset::validate() const {
  std::set<SampleId> ids;
  for (const auto* split : {&train, &test})
    for (const auto& s : *split)
      if (!ids.insert(s.id).second) throw std::invalid_argument("sample id '" + s.id + "' occurs twice in dataset");
}

const Sample* Dataset::find(const SampleId& id) const {
  for (const auto* split : {&train, &test})
    for (const auto& s : *split)
      if (s.id == id) return &s;
  return nullptr;
}

bool Dataset::is_train(const SampleId& id) const {
  return std::any_of(train.begin(), train.end(), [&](const Sample& s) { return s.id == id; });
}

std::vector<SampleId> Dataset::ids() const {
  std::vector<SampleId> out;
  for (const auto& s : train) out.push_back(s.id);
  for (const auto& s : test) out.push_back(s.id);
  return out;
}

void GraphSet::evaluate_all(const Dataset& d) {
  for (const auto* split : {&d.train, &d.test})
    for (const auto& s : *split) {
      auto it = graphs.find(s.id);
      if (it == graphs.end()) throw MissingSample(s.id);
      values[s.id] = evaluate(it->second, components, s.x);
    }
}

const Value& GraphSet::value(const SampleId& s, NodeId n) const {
  auto it = values.find(s);
  if (it == values.end()) throw std::out_of_range("no assignment for sample '" + s + "'");
  auto jt = it->second.find(n);
  if (jt == it->second.end())
    throw std::out_of_range("no value for node " + std::to_string(n) + " of sample '" + s + "'");
  return jt->second;
}

namespace {

struct NodeSignature {
  int level = 0;
  int out_degree = 0;
  int in_degree = 0;
  bool commutative = false;
  std::string label;
  std::vector<int> output_positions;
  auto operator<=>(const NodeSignature&) const = default;
};

std::map<NodeId, NodeSignature> signatures(const Graph& g, const ComponentTable& c, bool use_ids) {
  std::map<NodeId, NodeSignature> sig;
  auto levels = node_levels(g);
  for (NodeId id : g.inputs) sig[id].level = 0;
  for (const auto& n : g.nodes) {
    auto& s = sig[n.id];
    s.level = levels.at(n.id);
    s.in_degree = static_cast<int>(n.parents.size());
    s.commutative = c.at(n.component).commutative;
    if (use_ids) s.label = n.component;
    for (NodeId p : n.parents) ++sig[p].out_degree;
  }
  for (std::size_t j = 0; j < g.outputs.size(); ++j) sig[g.outputs[j]].output_positions.push_back(static_cast<int>(j));
  return sig;
}

}  // namespace

std::optional<NodeMap> isomorphic(const Graph& g1, const ComponentTable& c1, const Graph& g2,
                                  const ComponentTable& c2, LabelMatch match) {
  if (g1.inputs.size() != g2.inputs.size() || g1.nodes.size() != g2.nodes.size() ||
      g1.outputs.size() != g2.outputs.size())
    return std::nullopt;
  const bool use_ids = match == LabelMatch::ComponentId;
  if (use_ids) {
    std::multiset<std::string> m1, m2;
    for (const auto& n : g1.nodes) m1.insert(n.component);
    for (const auto& n : g2.nodes) m2.insert(n.component);
    if (m1 != m2) return std::nullopt;
  }
  auto s1 = signatures(g1, c1, use_ids);
  auto s2 = signatures(g2, c2, use_ids);

  NodeMap forward;
  std::set<NodeId> used;
  for (std::size_t i = 0; i < g1.inputs.size(); ++i) {
    if (s1.at(g1.inputs[i]) != s2.at(g2.inputs[i])) return std::nullopt;
    forward[g1.inputs[i]] = g2.inputs[i];
    used.insert(g2.inputs[i]);
  }

  // Candidate lists from the refinement (level, degrees, label, output slots).
  auto order = topological_order(g1);
  std::vector<std::vector<const InternalNode*>> candidates(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& want = s1.at(order[k]->id);
    for (const auto& v : g2.nodes) {
      auto have = s2.at(v.id);
      // Commutativity only relaxes parent order when both sides agree on it.
      if (!use_ids) have.commutative = want.commutative;
      if (have == want) candidates[k].push_back(&v);
    }
    if (candidates[k].empty()) return std::nullopt;
  }

  auto parents_match = [&](const InternalNode& u, const InternalNode& v) {
    const bool comm = c1.at(u.component).commutative && c2.at(v.component).commutative;
    std::vector<NodeId> mapped;
    mapped.reserve(u.parents.size());
    for (NodeId p : u.parents) mapped.push_back(forward.at(p));
    if (!comm) return mapped == v.parents;
    std::vector<NodeId> want = v.parents;
    std::sort(mapped.begin(), mapped.end());
    std::sort(want.begin(), want.end());
    return mapped == want;
  };

  std::function<bool(std::size_t)> search = [&](std::size_t k) -> bool {
    if (k == order.size()) return true;
    const InternalNode& u = *order[k];
    for (const InternalNode* v : candidates[k]) {
      if (used.contains(v->id) || !parents_match(u, *v)) continue;
      forward[u.id] = v->id;
      used.insert(v->id);
      if (search(k + 1)) return true;
      forward.erase(u.id);
      used.erase(v->id);
    }
    return false;
  };
  if (!search(0)) return std::nullopt;
  return forward;
}

MissingSample::MissingSample(const SampleId& id)
    : std::runtime_error("sample '" + id + "' missing from one of the graph sets"), sample(id) {}

AlignmentResult structural_alignment(const GraphSet& h, const GraphSet& z, std::span<const SampleId> order) {
  for (const auto& [id, g] : h.graphs)
    if (!z.graphs.contains(id)) throw MissingSample(id);
  for (const auto& [id, g] : z.graphs)
    if (!h.graphs.contains(id)) throw MissingSample(id);

  std::vector<SampleId> ids(order.begin(), order.end());
  if (ids.empty())
    for (const auto& [id, g] : h.graphs) ids.push_back(id);

  Alignment out;
  for (const auto& id : ids) {
    auto hi = h.graphs.find(id);
    auto zi = z.graphs.find(id);
    if (hi == h.graphs.end() || zi == z.graphs.end()) throw MissingSample(id);
    auto iso = isomorphic(hi->second, h.components, zi->second, z.components, LabelMatch::StructureOnly);
    if (!iso) {
      std::ostringstream why;
      why << "hypothesis graph (" << hi->second.nodes.size() << " internal nodes) is not isomorphic to reference graph ("
          << zi->second.nodes.size() << " internal nodes)";
      return AlignmentFailure{id, why.str()};
    }
    out.maps.emplace(id, std::move(*iso));
  }
  return out;
}

}  // namespace compocert
