#include "compocert/conditions.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace compocert {

using nlohmann::json;

namespace {

const Assignment& assignment_of(const GraphSet& s, const SampleId& id) {
  auto it = s.values.find(id);
  if (it == s.values.end()) throw MissingAssignment("no assignment for sample '" + id + "'");
  return it->second;
}

const Graph& graph_of(const GraphSet& s, const SampleId& id) {
  auto it = s.graphs.find(id);
  if (it == s.graphs.end()) throw MissingSample(id);
  return it->second;
}

const Value& value_at(const Assignment& a, const SampleId& sid, NodeId n) {
  auto it = a.find(n);
  if (it == a.end())
    throw MissingAssignment("no value for node " + std::to_string(n) + " of sample '" + sid + "'");
  return it->second;
}

template <typename F>
void for_each_sample(const Dataset& d, F&& f) {
  for (const auto& s : d.train) f(s, true);
  for (const auto& s : d.test) f(s, false);
}

}  // namespace

SetCanonicalizer::SetCanonicalizer(const GraphSet& s, const Dataset& d, const EqualityPolicy& policy) {
  std::map<std::string, std::vector<Value>> training;
  std::vector<std::tuple<SampleId, NodeId, std::string, const Value*>> all;
  for_each_sample(d, [&](const Sample& sample, bool train) {
    const Graph& g = graph_of(s, sample.id);
    const Assignment& a = assignment_of(s, sample.id);
    auto visit = [&](NodeId n, const std::string& pool) {
      const Value& v = value_at(a, sample.id, n);
      if (train) training[pool].push_back(v);
      all.emplace_back(sample.id, n, pool, &v);
    };
    for (NodeId n : g.inputs) visit(n, kInputPool);
    for (const InternalNode* n : topological_order(g)) visit(n->id, n->component);
  });
  for (auto& [pool, values] : training) pools_.emplace(pool, PoolCanonicalizer(values, policy));
  for (const auto& [sid, n, pool, v] : all) {
    auto it = pools_.find(pool);
    // Pools without any training occurrence compare exactly.
    std::string tok = it != pools_.end() ? it->second.token(*v) : PoolCanonicalizer().token(*v);
    entries_[{sid, n}] = {pool, std::move(tok)};
  }
}

const std::string& SetCanonicalizer::pool(const SampleId& sample, NodeId node) const {
  auto it = entries_.find({sample, node});
  if (it == entries_.end())
    throw MissingAssignment("node " + std::to_string(node) + " of sample '" + sample + "' was not canonicalised");
  return it->second.first;
}

const std::string& SetCanonicalizer::token(const SampleId& sample, NodeId node) const {
  auto it = entries_.find({sample, node});
  if (it == entries_.end())
    throw MissingAssignment("node " + std::to_string(node) + " of sample '" + sample + "' was not canonicalised");
  return it->second.second;
}

NodePairTable build_pair_table(const GraphSet& h, const SetCanonicalizer& hc, const GraphSet& z,
                               const SetCanonicalizer& zc, const Alignment& alignment,
                               std::span<const Sample> samples) {
  NodePairTable table;
  for (const auto& sample : samples) {
    const Graph& hg = graph_of(h, sample.id);
    const Graph& zg = graph_of(z, sample.id);
    const NodeMap& m = alignment.maps.at(sample.id);
    auto key = [&](NodeId hn) { return PoolKey{hc.pool(sample.id, hn), zc.pool(sample.id, m.at(hn))}; };

    auto add = [&](NodeId hn, const std::vector<NodeId>& h_parents) {
      PairRecord r;
      r.sample = sample.id;
      r.h_node = hn;
      r.z_node = m.at(hn);
      r.h = hc.token(sample.id, hn);
      r.z = zc.token(sample.id, r.z_node);
      r.h_parents = h_parents;
      for (NodeId p : h_parents) {
        r.h_inputs.push_back(hc.token(sample.id, p));
        r.z_aligned_inputs.push_back(zc.token(sample.id, m.at(p)));
        r.input_pools.push_back(key(p));
      }
      if (const InternalNode* zn = zg.find(r.z_node))
        for (NodeId p : zn->parents) r.z_inputs.push_back(zc.token(sample.id, p));
      table.pools[key(hn)].push_back(std::move(r));
    };
    for (NodeId n : hg.inputs) add(n, {});
    for (const InternalNode* n : topological_order(hg)) add(n->id, n->parents);
  }
  return table;
}

PredictionCheck check_correct_predictions(const GraphSet& s, const Dataset& d, Split split) {
  PredictionCheck out;
  for (const auto& sample : split == Split::Train ? d.train : d.test) {
    const Graph& g = graph_of(s, sample.id);
    const Assignment& a = assignment_of(s, sample.id);
    bool ok = g.outputs.size() == sample.y.size();
    for (std::size_t j = 0; ok && j < g.outputs.size(); ++j) ok = value_at(a, sample.id, g.outputs[j]) == sample.y[j];
    if (!ok) out.wrong.push_back(sample.id);
  }
  out.pass = out.wrong.empty();
  return out;
}

namespace {

std::vector<std::string> tuple_key(const SetCanonicalizer& canon, const SampleId& sid, const InternalNode& n,
                                   bool commutative) {
  std::vector<std::string> t;
  for (NodeId p : n.parents) t.push_back(canon.token(sid, p));
  if (commutative) std::sort(t.begin(), t.end());
  return t;
}

}  // namespace

SeenInputsCheck check_seen_test_inputs(const GraphSet& s, const Dataset& d, const SetCanonicalizer& canon) {
  std::set<std::pair<std::string, std::vector<std::string>>> seen;
  for (const auto& sample : d.train)
    for (const auto& n : graph_of(s, sample.id).nodes)
      seen.emplace(n.component, tuple_key(canon, sample.id, n, s.components.at(n.component).commutative));

  SeenInputsCheck out;
  for (const auto& sample : d.test) {
    for (const InternalNode* n : topological_order(graph_of(s, sample.id))) {
      ++out.test_nodes;
      auto t = tuple_key(canon, sample.id, *n, s.components.at(n->component).commutative);
      if (!out.first_unseen && !seen.contains({n->component, t})) {
        std::vector<std::string> raw;
        for (NodeId p : n->parents) raw.push_back(canon.token(sample.id, p));
        out.first_unseen = UnseenInput{sample.id, n->id, n->component, raw};
      }
    }
  }
  out.pass = !out.first_unseen;
  return out;
}

SeenInputsCheck check_seen_test_inputs(const GraphSet& s, const Dataset& d, const EqualityPolicy& policy) {
  return check_seen_test_inputs(s, d, SetCanonicalizer(s, d, policy));
}

namespace {

struct OrderedRecord {
  std::size_t order;
  const PairRecord* rec;
};

/// Records of each pool tagged with their position in (sample, node) visiting order.
std::map<PoolKey, std::vector<OrderedRecord>> ordered(const NodePairTable& t) {
  // Sample order is recovered from first appearance across pools.
  std::map<SampleId, std::size_t> sample_rank;
  for (const auto& [k, recs] : t.pools)
    for (const auto& r : recs) sample_rank.emplace(r.sample, sample_rank.size());
  std::map<PoolKey, std::vector<OrderedRecord>> out;
  for (const auto& [k, recs] : t.pools)
    for (std::size_t i = 0; i < recs.size(); ++i)
      out[k].push_back({sample_rank.at(recs[i].sample) * 1'000'000 + i, &recs[i]});
  return out;
}

}  // namespace

UnambiguousCheck check_unambiguous(const NodePairTable& train) {
  UnambiguousCheck out;
  std::vector<std::pair<std::pair<std::size_t, std::size_t>, AmbiguityWitness>> found;
  for (const auto& [key, recs] : ordered(train)) {
    std::map<std::string, std::vector<const OrderedRecord*>> by_h;
    for (const auto& r : recs) by_h[r.rec->h].push_back(&r);
    for (const auto& [h, group] : by_h)
      for (std::size_t i = 0; i < group.size(); ++i)
        for (std::size_t j = i + 1; j < group.size(); ++j) {
          const auto* a = group[i];
          const auto* c = group[j];
          if (a->rec->z == c->rec->z) continue;
          found.push_back({{a->order, c->order},
                           {key, a->rec->sample, a->rec->h_node, c->rec->sample, c->rec->h_node, h, a->rec->z,
                            c->rec->z}});
        }
  }
  std::sort(found.begin(), found.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  for (auto& [ord, w] : found) out.violations.push_back(std::move(w));
  out.pass = out.violations.empty();
  return out;
}

MinimizedCheck check_minimized(const NodePairTable& train) {
  if (!check_unambiguous(train).pass)
    throw PreconditionViolated("minimized representation is only checked on unambiguous (well-defined) mappings");
  MinimizedCheck out;
  for (const auto& [key, recs] : train.pools) {
    if (key.h_component == kInputPool) continue;
    std::set<std::string> hs, zs;
    for (const auto& r : recs) {
      hs.insert(r.h);
      zs.insert(r.z);
    }
    out.counts.push_back({key, hs.size(), zs.size()});
    if (hs.size() != zs.size()) out.pass = false;
  }
  return out;
}

OneToOneCheck check_one_to_one(const NodePairTable& train) {
  OneToOneCheck out;
  std::optional<std::pair<std::size_t, AmbiguityWitness>> best;
  for (const auto& [key, recs] : ordered(train)) {
    std::map<std::string, const OrderedRecord*> first_by_z;
    for (const auto& r : recs) {
      auto [it, fresh] = first_by_z.emplace(r.rec->z, &r);
      if (fresh || it->second->rec->h == r.rec->h) continue;
      const auto* a = it->second;
      if (!best || r.order < best->first)
        best = {r.order,
                {key, a->rec->sample, a->rec->h_node, r.rec->sample, r.rec->h_node, r.rec->h, a->rec->z, r.rec->z}};
    }
  }
  if (best) {
    out.pass = false;
    out.first_violation = best->second;
  }
  return out;
}

OntoCheck check_onto(const NodePairTable& train, const NodePairTable& test) {
  OntoCheck out;
  for (const auto& [key, recs] : test.pools) {
    std::set<std::string> zs;
    if (auto it = train.pools.find(key); it != train.pools.end())
      for (const auto& r : it->second) zs.insert(r.z);
    for (const auto& r : recs)
      if (!zs.contains(r.z)) {
        out.pass = false;
        out.gap = r;
        return out;
      }
  }
  return out;
}

bool ConditionReport::mapping_consistent() const {
  if (!unambiguous || !unambiguous->pass || !minimized || !one_to_one_direct) return true;
  return one_to_one_direct->pass == minimized->pass;
}

bool ConditionReport::all_pass() const {
  return aligned && reference_valid() && correct_train.pass && correct_test.pass && seen_test_inputs.pass &&
         conditions_hold() && onto && onto->pass;
}

ConditionReport check_theorem_conditions(const GraphSet& h, const GraphSet& z, const Dataset& d,
                                         const EqualityPolicy& policy) {
  ConditionReport r;
  const auto ids = d.ids();
  auto aligned = structural_alignment(h, z, ids);

  const SetCanonicalizer hc(h, d, policy);
  const SetCanonicalizer zc(z, d, policy);
  for (const auto& [pool, canon] : hc.pools())
    r.hypothesis_pools[pool] = {canon.epsilon(), canon.training_cluster_count()};

  r.reference_train = check_correct_predictions(z, d, Split::Train);
  r.reference_test = check_correct_predictions(z, d, Split::Test);
  r.reference_seen_inputs = check_seen_test_inputs(z, d, zc);
  r.correct_train = check_correct_predictions(h, d, Split::Train);
  r.correct_test = check_correct_predictions(h, d, Split::Test);
  r.seen_test_inputs = check_seen_test_inputs(h, d, hc);

  if (auto* fail = std::get_if<AlignmentFailure>(&aligned)) {
    r.alignment_failure = *fail;
    return r;
  }
  r.aligned = true;
  r.alignment = std::get<Alignment>(aligned);

  const auto train = build_pair_table(h, hc, z, zc, *r.alignment, d.train);
  const auto test = build_pair_table(h, hc, z, zc, *r.alignment, d.test);
  r.unambiguous = check_unambiguous(train);
  if (r.unambiguous->pass) r.minimized = check_minimized(train);
  r.onto = check_onto(train, test);
  r.one_to_one_direct = check_one_to_one(train);
  r.one_to_one = r.unambiguous->pass && r.minimized && r.minimized->pass;
  return r;
}

bool effectively_equal(std::span<const Value> a, std::span<const Value> b, const Component& c,
                       const EqualityPolicy& policy) {
  if (static_cast<int>(a.size()) != c.arity || static_cast<int>(b.size()) != c.arity)
    throw ArityMismatch("tuples must have the arity of component '" + c.id + "'");
  auto matches = [&](const std::vector<std::size_t>& perm) {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!values_equal(a[i], b[perm[i]], policy)) return false;
    return true;
  };
  std::vector<std::size_t> perm(a.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  if (matches(perm)) return true;
  if (!c.commutative) return false;
  while (std::next_permutation(perm.begin(), perm.end()))
    if (matches(perm)) return true;
  return false;
}

bool effectively_equal_tokens(std::vector<std::string> a, std::vector<std::string> b, bool commutative) {
  if (commutative) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
  }
  return a == b;
}

AlternativeCgCheck check_alternative_cg(const GraphSet& h, const Dataset& d, const EqualityPolicy& policy) {
  AlternativeCgCheck out;
  out.train_correct = check_correct_predictions(h, d, Split::Train).pass;
  out.test_correct = check_correct_predictions(h, d, Split::Test).pass;
  out.seen_inputs = check_seen_test_inputs(h, d, policy).pass;
  if (out.train_correct) {
    if (!out.test_correct) out.failing.push_back("correct_test_predictions");
    if (!out.seen_inputs) out.failing.push_back("seen_test_inputs");
  }
  out.pass = out.failing.empty();
  return out;
}

namespace {

json witness_json(const AmbiguityWitness& w) {
  return {{"pool", w.pool.str()}, {"sample_a", w.sample_a}, {"node_a", w.node_a}, {"sample_c", w.sample_c},
          {"node_c", w.node_c},   {"h", w.h},               {"z_a", w.z_a},       {"z_c", w.z_c}};
}

json prediction_json(const PredictionCheck& p) { return {{"pass", p.pass}, {"wrong", p.wrong}}; }

json seen_json(const SeenInputsCheck& s) {
  json j = {{"pass", s.pass}, {"test_nodes", s.test_nodes}};
  if (s.first_unseen)
    j["first_unseen"] = {{"sample", s.first_unseen->sample},
                         {"node", s.first_unseen->node},
                         {"component", s.first_unseen->component},
                         {"tuple", s.first_unseen->tuple}};
  return j;
}

}  // namespace

json to_json(const ConditionReport& r) {
  json j;
  j["structural_alignment"] = {{"pass", r.aligned}};
  if (r.alignment_failure)
    j["structural_alignment"]["counterexample"] = {{"sample", r.alignment_failure->sample},
                                                   {"reason", r.alignment_failure->reason}};
  if (r.alignment) {
    json maps = json::object();
    for (const auto& [sid, m] : r.alignment->maps) {
      json pairs = json::array();
      for (const auto& [a, b] : m) pairs.push_back({a, b});
      maps[sid] = pairs;
    }
    j["structural_alignment"]["alignment"] = maps;
  }
  j["reference"] = {{"valid", r.reference_valid()},
                    {"correct_train", prediction_json(r.reference_train)},
                    {"correct_test", prediction_json(r.reference_test)},
                    {"seen_test_inputs", seen_json(r.reference_seen_inputs)}};
  j["correct_train"] = prediction_json(r.correct_train);
  j["correct_test"] = prediction_json(r.correct_test);
  j["seen_test_inputs"] = seen_json(r.seen_test_inputs);
  if (r.unambiguous) {
    json u = {{"pass", r.unambiguous->pass}, {"violation_count", r.unambiguous->violations.size()}};
    if (!r.unambiguous->violations.empty()) u["first_violation"] = witness_json(r.unambiguous->violations.front());
    j["unambiguous"] = u;
  } else {
    j["unambiguous"] = {{"pass", false}, {"skipped", true}};
  }
  if (r.minimized) {
    json counts = json::array();
    for (const auto& c : r.minimized->counts)
      counts.push_back({{"pool", c.pool.str()}, {"distinct_h", c.distinct_h}, {"distinct_z", c.distinct_z}});
    j["minimized"] = {{"pass", r.minimized->pass}, {"counts", counts}};
  } else {
    j["minimized"] = {{"pass", false}, {"skipped", true}};
  }
  if (r.onto) {
    j["onto"] = {{"pass", r.onto->pass}};
    if (r.onto->gap)
      j["onto"]["ontology_gap"] = {{"sample", r.onto->gap->sample}, {"node", r.onto->gap->h_node}, {"z", r.onto->gap->z}};
  }
  j["one_to_one"] = {{"pass", r.one_to_one}, {"mapping_consistent", r.mapping_consistent()}};
  if (r.one_to_one_direct) {
    j["one_to_one"]["direct_pass"] = r.one_to_one_direct->pass;
    if (r.one_to_one_direct->first_violation)
      j["one_to_one"]["direct_violation"] = witness_json(*r.one_to_one_direct->first_violation);
  }
  json pools = json::object();
  for (const auto& [p, a] : r.hypothesis_pools)
    pools[p] = {{"epsilon", a.epsilon}, {"training_clusters", a.training_clusters}};
  j["hypothesis_pools"] = pools;
  j["conditions_hold"] = r.conditions_hold();
  j["all_pass"] = r.all_pass();
  return j;
}

json to_json(const AlternativeCgCheck& r) {
  return {{"pass", r.pass},
          {"train_correct", r.train_correct},
          {"test_correct", r.test_correct},
          {"seen_test_inputs", r.seen_inputs},
          {"failing", r.failing}};
}

std::string format_table(const ConditionReport& r) {
  std::ostringstream out;
  auto row = [&](const std::string& name, const std::string& verdict, const std::string& detail = "") {
    out << "  " << name;
    for (std::size_t i = name.size(); i < 26; ++i) out << ' ';
    out << verdict;
    if (!detail.empty()) out << "  " << detail;
    out << "\n";
  };
  auto verdict = [](bool b) { return std::string(b ? "PASS" : "FAIL"); };

  out << "condition                 verdict\n";
  row("structural_alignment", verdict(r.aligned),
      r.alignment_failure ? "sample " + r.alignment_failure->sample + ": " + r.alignment_failure->reason : "");
  row("reference_valid", verdict(r.reference_valid()));
  row("correct_train", verdict(r.correct_train.pass),
      r.correct_train.pass ? "" : std::to_string(r.correct_train.wrong.size()) + " wrong");
  if (r.unambiguous) {
    std::string detail;
    if (!r.unambiguous->pass) {
      const auto& w = r.unambiguous->violations.front();
      detail = "(" + w.sample_a + ", " + w.sample_c + ") at node " + std::to_string(w.node_a) + ": h equal, z " +
               w.z_a + " vs " + w.z_c;
    }
    row("unambiguous", verdict(r.unambiguous->pass), detail);
  } else {
    row("unambiguous", "SKIP");
  }
  if (r.minimized) {
    std::string detail;
    for (const auto& c : r.minimized->counts)
      detail += c.pool.str() + " " + std::to_string(c.distinct_h) + "/" + std::to_string(c.distinct_z) + " ";
    row("minimized", verdict(r.minimized->pass), detail);
  } else {
    row("minimized", "SKIP");
  }
  if (r.onto) row("onto", verdict(r.onto->pass));
  row("one_to_one", verdict(r.one_to_one));
  row("seen_test_inputs", verdict(r.seen_test_inputs.pass),
      r.seen_test_inputs.first_unseen
          ? "sample " + r.seen_test_inputs.first_unseen->sample + " node " +
                std::to_string(r.seen_test_inputs.first_unseen->node)
          : "");
  row("correct_test", verdict(r.correct_test.pass),
      r.correct_test.pass ? "" : std::to_string(r.correct_test.wrong.size()) + " wrong");
  row("ALL", verdict(r.all_pass()));
  return out.str();
}

}  // namespace compocert
