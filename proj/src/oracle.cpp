#include "compocert/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "compocert/interchange.hpp"

namespace compocert {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Finite mappings

namespace {

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

std::uint64_t ipow(std::uint64_t b, int e) {
  std::uint64_t r = 1;
  while (e-- > 0) r *= b;
  return r;
}

/// Onto maps from an n-set onto a k-set by inclusion-exclusion.
std::uint64_t onto_by_inclusion_exclusion(int n, int k) {
  std::int64_t total = 0;
  for (int j = 0; j <= k; ++j) {
    const auto term = static_cast<std::int64_t>(binomial(k, j) * ipow(static_cast<std::uint64_t>(k - j), n));
    total += (j % 2 ? -term : term);
  }
  return static_cast<std::uint64_t>(total);
}

MappingInstance instance_of(const std::vector<int>& f, int k) {
  MappingInstance m{static_cast<int>(f.size()), k, {}};
  for (std::size_t a = 0; a < f.size(); ++a) m.pairs.emplace_back(static_cast<int>(a), f[a]);
  return m;
}

}  // namespace

MappingLemmaReport verify_mapping_lemmas(int max_size) {
  if (max_size < 1) throw std::invalid_argument("max_size must be at least 1");
  MappingLemmaReport r;
  r.max_size = max_size;
  r.onto_counts.assign(max_size + 1, std::vector<std::uint64_t>(max_size + 1, 0));
  r.onto_formula = r.onto_counts;

  auto fail = [&](const std::vector<int>& f, int k, const std::string& why) {
    if (!r.pass) return;
    r.pass = false;
    r.counterexample = instance_of(f, k);
    r.failure = why;
  };

  for (int n = 1; n <= max_size; ++n) {
    for (int k = 1; k <= max_size; ++k) {
      std::vector<int> f(n, 0);
      for (;;) {
        ++r.maps_enumerated;
        std::vector<int> hits(k, 0);
        for (int b : f) ++hits[b];
        const bool onto = std::all_of(hits.begin(), hits.end(), [](int c) { return c > 0; });
        const bool injective = std::all_of(hits.begin(), hits.end(), [](int c) { return c <= 1; });
        if (onto) {
          ++r.onto_maps;
          ++r.onto_counts[n][k];
          if (injective) ++r.bijections;
          if (injective != (n == k)) fail(f, k, "onto map where one-to-one disagrees with |A| = |B|");
        }
        if (n > k && injective) fail(f, k, "no collision although |A| > |B|");
        if (injective && n > k) fail(f, k, "one-to-one map with |A| > |B|");

        int i = 0;
        while (i < n && ++f[i] == k) f[i++] = 0;
        if (i == n) break;
      }
      r.onto_formula[n][k] = onto_by_inclusion_exclusion(n, k);
      if (r.onto_formula[n][k] != r.onto_counts[n][k] && r.pass) {
        r.pass = false;
        r.failure = "onto count for |A|=" + std::to_string(n) + ", |B|=" + std::to_string(k) +
                    " disagrees with inclusion-exclusion";
      }
    }
  }
  return r;
}

json to_json(const MappingLemmaReport& r) {
  json j = {{"pass", r.pass},
            {"max_size", r.max_size},
            {"maps_enumerated", r.maps_enumerated},
            {"onto_maps", r.onto_maps},
            {"bijections", r.bijections},
            {"onto_counts", r.onto_counts}};
  if (r.counterexample) {
    json pairs = json::array();
    for (auto [a, b] : r.counterexample->pairs) pairs.push_back({a, b});
    j["counterexample"] = {{"domain_size", r.counterexample->domain_size},
                           {"codomain_size", r.counterexample->codomain_size},
                           {"pairs", pairs}};
  }
  if (!r.failure.empty()) j["failure"] = r.failure;
  return j;
}

// ---------------------------------------------------------------------------
// Discrete worlds

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::ConditionsHold: return "conditions-hold";
    case Scenario::BreakAlignment: return "break-alignment";
    case Scenario::BreakUnambiguous: return "break-unambiguous";
    case Scenario::BreakMinimized: return "break-minimized";
    case Scenario::UnseenInputs: return "unseen-inputs";
    case Scenario::Random: return "random";
  }
  return "?";
}

Scenario scenario_from_string(const std::string& s) {
  for (Scenario sc : kAllScenarios)
    if (to_string(sc) == s) return sc;
  throw std::invalid_argument("unknown scenario '" + s + "'");
}

namespace {

class Retry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int uniform_int(CounterRng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(hi - lo + 1)); }

std::string sym(int v) { return std::to_string(v); }

/// Every tuple of the product of the given alphabet sizes, in lexicographic order.
std::vector<std::vector<Symbol>> product(const std::vector<int>& sizes) {
  std::vector<std::vector<Symbol>> out;
  std::vector<int> cur(sizes.size(), 0);
  for (;;) {
    std::vector<Symbol> t;
    for (int v : cur) t.push_back(sym(v));
    out.push_back(std::move(t));
    std::size_t i = cur.size();
    while (i > 0) {
      --i;
      if (++cur[i] < sizes[i]) break;
      cur[i] = 0;
      if (i == 0) return out;
    }
    if (cur.empty()) return out;
  }
}

struct Reference {
  Graph g;
  ComponentTable components;
  std::map<NodeId, int> alphabet;
  std::map<NodeId, std::string> pool;  // component id or kInputPool
  std::set<NodeId> outputs;
};

Reference random_reference(const WorldParams& p, CounterRng& rng) {
  Reference r;
  const int n_in = uniform_int(rng, p.min_inputs, p.max_inputs);
  const int n_int = uniform_int(rng, std::max(2, p.min_internal), p.max_internal);
  for (int i = 0; i < n_in; ++i) {
    r.g.inputs.push_back(i);
    r.alphabet[i] = uniform_int(rng, p.min_alphabet, p.max_alphabet);
    r.pool[i] = kInputPool;
  }

  std::set<NodeId> uncovered(r.g.inputs.begin(), r.g.inputs.end());
  auto pick_uncovered = [&]() {
    auto it = std::next(uncovered.begin(), static_cast<long>(rng.below(uncovered.size())));
    NodeId v = *it;
    uncovered.erase(it);
    return v;
  };

  std::map<std::string, std::vector<std::pair<std::string, int>>> signature_of;
  int next_component = 0;
  for (int i = 0; i < n_int; ++i) {
    const NodeId id = n_in + i;
    auto random_earlier = [&](NodeId other) {
      for (;;) {
        NodeId v = static_cast<NodeId>(rng.below(static_cast<std::uint64_t>(id)));
        if (v != other) return v;
      }
    };
    NodeId a = uncovered.empty() ? random_earlier(-1) : pick_uncovered();
    NodeId b;
    if (i == 1 && a != n_in) {
      b = n_in;  // the second internal node consumes the first: depth >= 2
    } else if (!uncovered.empty()) {
      b = pick_uncovered();
    } else {
      b = random_earlier(a);
    }
    if (rng.below(2)) std::swap(a, b);
    std::vector<NodeId> parents{a, b};

    std::vector<std::pair<std::string, int>> sig;
    for (NodeId q : parents) sig.emplace_back(r.pool.at(q), r.alphabet.at(q));
    const bool symmetric_domain = sig[0] == sig[1];

    std::vector<std::string> reusable;
    for (const auto& [cid, s] : signature_of)
      if (s == sig) reusable.push_back(cid);
    std::string cid;
    if (!reusable.empty() && rng.uniform() < p.reuse_probability) {
      cid = reusable[rng.below(reusable.size())];
    } else {
      cid = "c" + std::to_string(next_component++);
      Component c;
      c.id = cid;
      c.arity = 2;
      c.commutative = symmetric_domain && rng.uniform() < p.commutative_probability;
      const int k = uniform_int(rng, p.min_alphabet, p.max_alphabet);
      const auto domain = product({sig[0].second, sig[1].second});
      for (int attempt = 0;; ++attempt) {
        c.table.clear();
        std::set<Symbol> image;
        for (const auto& t : domain) {
          if (c.table.contains(t)) continue;
          Symbol out = sym(static_cast<int>(rng.below(k)));
          c.table[t] = out;
          if (c.commutative) c.table[{t[1], t[0]}] = out;
          image.insert(out);
        }
        if (static_cast<int>(image.size()) == k || attempt > 20) break;
      }
      r.components[cid] = c;
      signature_of[cid] = sig;
    }
    int k = 0;
    for (const auto& [in, out] : r.components.at(cid).table) k = std::max(k, std::stoi(out) + 1);
    r.alphabet[id] = k;
    r.pool[id] = cid;
    r.g.nodes.push_back({id, cid, parents});
  }
  if (!uncovered.empty()) throw Retry("uncovered input");

  std::set<NodeId> used;
  for (const auto& n : r.g.nodes) used.insert(n.parents.begin(), n.parents.end());
  for (const auto& n : r.g.nodes)
    if (!used.contains(n.id)) {
      r.g.outputs.push_back(n.id);
      r.outputs.insert(n.id);
    }
  return r;
}

std::set<std::string> components_at_outputs(const Reference& r) {
  std::set<std::string> out;
  for (NodeId o : r.g.outputs) out.insert(r.g.find(o)->component);
  return out;
}

/// Non-output nodes whose component is used nowhere else.
std::vector<NodeId> private_hidden_nodes(const Reference& r) {
  std::map<std::string, int> uses;
  for (const auto& n : r.g.nodes) ++uses[n.component];
  const auto at_outputs = components_at_outputs(r);
  std::vector<NodeId> out;
  for (const auto& n : r.g.nodes)
    if (!r.outputs.contains(n.id) && uses[n.component] == 1 && !at_outputs.contains(n.component))
      out.push_back(n.id);
  return out;
}

/// Makes every consumer of node n's pool insensitive to the difference between v and u.
void make_children_insensitive(Reference& r, NodeId n, const Symbol& u, const Symbol& v) {
  const std::string& pool = r.pool.at(n);
  for (auto& child : r.g.nodes) {
    auto& c = r.components.at(child.component);
    for (std::size_t pos = 0; pos < child.parents.size(); ++pos) {
      if (r.pool.at(child.parents[pos]) != pool) continue;
      for (auto& [in, out] : c.table) {
        if (in[pos] != v) continue;
        auto key = in;
        key[pos] = u;
        out = c.table.at(key);
      }
    }
  }
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

std::vector<std::string> tuple_tokens(const ComponentTable& comps, const Assignment& a, const InternalNode& n) {
  std::vector<std::string> t;
  for (NodeId p : n.parents) t.push_back(std::get<Symbol>(a.at(p)));
  if (comps.at(n.component).commutative) std::sort(t.begin(), t.end());
  return t;
}

/// Random train/test split; unless `allow_unseen`, test samples with a
/// reference tuple never seen in training are moved into training.
SplitIndices random_split(const WorldParams& p, const Reference& r, const std::vector<Assignment>& values,
                   bool allow_unseen, CounterRng& rng) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  const double f = p.min_train_fraction + (p.max_train_fraction - p.min_train_fraction) * rng.uniform();
  const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(f * static_cast<double>(n))), 1, n - 1);
  std::vector<bool> is_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) is_train[idx[i]] = true;

  auto seen_set = [&]() {
    std::set<std::pair<std::string, std::vector<std::string>>> seen;
    for (std::size_t s = 0; s < n; ++s)
      if (is_train[s])
        for (const auto& node : r.g.nodes)
          seen.emplace(node.component, tuple_tokens(r.components, values[s], node));
    return seen;
  };
  auto all_seen = [&](const std::set<std::pair<std::string, std::vector<std::string>>>& seen, std::size_t s) {
    for (const auto& node : r.g.nodes)
      if (!seen.contains({node.component, tuple_tokens(r.components, values[s], node)})) return false;
    return true;
  };

  const auto seen = seen_set();
  bool any_unseen = false;
  for (std::size_t s = 0; s < n; ++s) {
    if (is_train[s] || all_seen(seen, s)) continue;
    any_unseen = true;
    if (!allow_unseen) is_train[s] = true;
  }
  if (allow_unseen && !any_unseen) throw Retry("every test tuple happened to be seen");

  SplitIndices out;
  for (std::size_t s = 0; s < n; ++s) (is_train[s] ? out.train : out.test).push_back(s);
  if (out.test.empty()) throw Retry("empty test split");
  return out;
}

/// Hypothesis token of a node, as a function of the reference assignment.
enum class Scheme { Relabel, Merge, Split, Identity };

struct PoolScheme {
  Scheme scheme = Scheme::Relabel;
  std::vector<int> perm;  // relabel permutation of the z alphabet
  Symbol merge_from, merge_into;
  std::map<std::vector<Symbol>, int> bit;  // split bit per reference parent tuple
};

GraphSet fit_hypothesis(const Reference& r, const Dataset& d, const std::vector<Assignment>& z_values,
                        const std::map<SampleId, std::size_t>& index, const std::map<std::string, PoolScheme>& schemes,
                        CounterRng& rng) {
  GraphSet h;
  Graph g = r.g;
  for (auto& n : g.nodes) n.component = "h_" + n.component;
  for (const auto& [cid, c] : r.components) {
    Component hc;
    hc.id = "h_" + cid;
    hc.arity = c.arity;
    hc.commutative = c.commutative;
    h.components[hc.id] = hc;
  }

  auto token = [&](const Assignment& z, const InternalNode& n) -> Symbol {
    const Symbol& v = std::get<Symbol>(z.at(n.id));
    const PoolScheme& s = schemes.at(n.component);
    const std::string pre = n.component + ":";
    switch (s.scheme) {
      case Scheme::Identity: return v;
      case Scheme::Relabel: return pre + sym(s.perm.at(std::stoi(v)));
      case Scheme::Merge: return pre + sym(s.perm.at(std::stoi(v == s.merge_from ? s.merge_into : v)));
      case Scheme::Split: {
        std::vector<Symbol> t;
        for (NodeId q : n.parents) t.push_back(std::get<Symbol>(z.at(q)));
        return pre + sym(s.perm.at(std::stoi(v))) + "b" + sym(s.bit.at(t));
      }
    }
    return v;
  };

  // Tables are fitted on training samples only.
  for (const auto& sample : d.train) {
    const Assignment& z = z_values[index.at(sample.id)];
    std::map<NodeId, Symbol> hv;
    for (NodeId i : r.g.inputs) hv[i] = std::get<Symbol>(z.at(i));
    for (const InternalNode* n : topological_order(r.g)) {
      hv[n->id] = token(z, *n);
      auto& table = h.components.at("h_" + n->component).table;
      std::vector<Symbol> key;
      for (NodeId q : n->parents) key.push_back(hv[q]);
      std::vector<std::vector<Symbol>> keys{key};
      if (r.components.at(n->component).commutative) keys.push_back({key[1], key[0]});
      for (const auto& k : keys) {
        auto [it, fresh] = table.emplace(k, hv[n->id]);
        if (!fresh && it->second != hv[n->id]) throw Retry("hypothesis table conflict");
      }
    }
  }

  // Unseen tuples at test time get an arbitrary output from the component's training range.
  for (const auto& sample : d.test) {
    std::map<NodeId, Value> hv;
    for (std::size_t i = 0; i < r.g.inputs.size(); ++i) hv[r.g.inputs[i]] = sample.x[i];
    for (const InternalNode* n : topological_order(g)) {
      auto& c = h.components.at(n->component);
      std::vector<Symbol> key;
      for (NodeId q : n->parents) key.push_back(std::get<Symbol>(hv[q]));
      if (!c.table.contains(key)) {
        std::set<Symbol> range;
        for (const auto& [in, out] : c.table) range.insert(out);
        if (range.empty()) throw Retry("component without training rows");
        Symbol out = *std::next(range.begin(), static_cast<long>(rng.below(range.size())));
        c.table[key] = out;
        if (c.commutative) c.table[{key[1], key[0]}] = out;
      }
      hv[n->id] = c.table.at(key);
    }
  }

  for (const auto& s : d.train) h.graphs[s.id] = g;
  for (const auto& s : d.test) h.graphs[s.id] = g;
  h.evaluate_all(d);
  return h;
}

GraphSet fit_monolithic(const Reference& r, const Dataset& d, CounterRng& rng) {
  GraphSet h;
  Graph g;
  g.inputs = r.g.inputs;
  const NodeId base = static_cast<NodeId>(r.g.inputs.size());
  for (std::size_t j = 0; j < r.g.outputs.size(); ++j) {
    Component c;
    c.id = "h_mono" + std::to_string(j);
    c.arity = static_cast<int>(r.g.inputs.size());
    h.components[c.id] = c;
    g.nodes.push_back({base + static_cast<NodeId>(j), c.id, r.g.inputs});
    g.outputs.push_back(base + static_cast<NodeId>(j));
  }
  auto key_of = [](const Sample& s) {
    std::vector<Symbol> k;
    for (const auto& v : s.x) k.push_back(std::get<Symbol>(v));
    return k;
  };
  for (const auto& s : d.train)
    for (std::size_t j = 0; j < s.y.size(); ++j)
      h.components.at("h_mono" + std::to_string(j)).table[key_of(s)] = std::get<Symbol>(s.y[j]);
  for (const auto& s : d.test)
    for (std::size_t j = 0; j < s.y.size(); ++j) {
      const int k = r.alphabet.at(r.g.outputs[j]);
      h.components.at("h_mono" + std::to_string(j)).table[key_of(s)] = sym(static_cast<int>(rng.below(k)));
    }
  for (const auto& s : d.train) h.graphs[s.id] = g;
  for (const auto& s : d.test) h.graphs[s.id] = g;
  h.evaluate_all(d);
  return h;
}

GraphSet random_hypothesis(const Reference& r, const Dataset& d, CounterRng& rng) {
  GraphSet h;
  Graph g = r.g;
  for (auto& n : g.nodes) n.component = "h_" + n.component;
  const auto at_outputs = components_at_outputs(r);
  for (const auto& [cid, c] : r.components) {
    Component hc;
    hc.id = "h_" + cid;
    hc.arity = c.arity;
    h.components[hc.id] = hc;
  }
  std::map<std::string, int> range;
  for (const auto& n : r.g.nodes) range[n.component] = r.alphabet.at(n.id);

  auto run = [&](const Sample& s) {
    std::map<NodeId, Symbol> hv;
    for (std::size_t i = 0; i < g.inputs.size(); ++i) hv[g.inputs[i]] = std::get<Symbol>(s.x[i]);
    for (const InternalNode* n : topological_order(g)) {
      const std::string zc = n->component.substr(2);
      auto& c = h.components.at(n->component);
      std::vector<Symbol> key;
      for (NodeId q : n->parents) key.push_back(hv[q]);
      if (!c.table.contains(key)) {
        const int v = static_cast<int>(rng.below(range.at(zc)));
        c.table[key] = at_outputs.contains(zc) ? sym(v) : n->component + ":" + sym(v);
      }
      hv[n->id] = c.table.at(key);
    }
  };
  for (const auto& s : d.train) run(s);
  for (const auto& s : d.test) run(s);
  for (const auto& s : d.train) h.graphs[s.id] = g;
  for (const auto& s : d.test) h.graphs[s.id] = g;
  h.evaluate_all(d);
  return h;
}

std::vector<int> random_permutation(int k, CounterRng& rng) {
  std::vector<int> p(k);
  std::iota(p.begin(), p.end(), 0);
  for (int i = k; i > 1; --i) std::swap(p[i - 1], p[rng.below(static_cast<std::uint64_t>(i))]);
  return p;
}

bool scenario_verified(Scenario s, const ConditionReport& rep) {
  const bool valid_setup = rep.reference_valid() && rep.correct_train.pass;
  switch (s) {
    case Scenario::ConditionsHold: return valid_setup && rep.conditions_hold() && rep.onto && rep.onto->pass;
    case Scenario::BreakAlignment: return valid_setup && !rep.aligned;
    case Scenario::BreakUnambiguous: return valid_setup && rep.aligned && !rep.unambiguous->pass;
    case Scenario::BreakMinimized:
      return valid_setup && rep.aligned && rep.unambiguous->pass && !rep.minimized->pass;
    case Scenario::UnseenInputs: return rep.aligned && !rep.reference_seen_inputs.pass;
    case Scenario::Random: return true;
  }
  return false;
}

DiscreteWorld try_generate(const WorldParams& p, Scenario scenario, CounterRng& rng) {
  Reference r = random_reference(p, rng);

  std::map<std::string, PoolScheme> schemes;
  const auto at_outputs = components_at_outputs(r);
  for (const auto& [cid, c] : r.components) {
    PoolScheme s;
    int k = 0;
    for (const auto& n : r.g.nodes)
      if (n.component == cid) k = r.alphabet.at(n.id);
    s.perm = random_permutation(k, rng);
    s.scheme = at_outputs.contains(cid) ? Scheme::Identity : Scheme::Relabel;
    schemes[cid] = s;
  }

  NodeId broken = -1;
  if (scenario == Scenario::BreakUnambiguous || scenario == Scenario::BreakMinimized) {
    const auto candidates = private_hidden_nodes(r);
    if (candidates.empty()) throw Retry("no private hidden node");
    broken = candidates[rng.below(candidates.size())];
    PoolScheme& s = schemes.at(r.g.find(broken)->component);
    if (scenario == Scenario::BreakUnambiguous) {
      const int k = r.alphabet.at(broken);
      const int u = static_cast<int>(rng.below(k));
      int v = static_cast<int>(rng.below(k - 1));
      if (v >= u) ++v;
      s.scheme = Scheme::Merge;
      s.merge_into = sym(u);
      s.merge_from = sym(v);
      make_children_insensitive(r, broken, s.merge_into, s.merge_from);
    } else {
      s.scheme = Scheme::Split;
    }
  }

  std::vector<int> sizes;
  for (NodeId i : r.g.inputs) sizes.push_back(r.alphabet.at(i));
  const auto inputs = product(sizes);
  std::vector<Assignment> z_values;
  for (const auto& x : inputs) {
    std::vector<Value> xv(x.begin(), x.end());
    z_values.push_back(evaluate(r.g, r.components, xv));
  }

  if (broken >= 0 && scenario == Scenario::BreakMinimized) {
    PoolScheme& s = schemes.at(r.g.find(broken)->component);
    for (const auto& z : z_values) {
      std::vector<Symbol> t;
      for (NodeId q : r.g.find(broken)->parents) t.push_back(std::get<Symbol>(z.at(q)));
      if (!s.bit.contains(t)) s.bit[t] = static_cast<int>(rng.below(2));
    }
  }

  const SplitIndices split = random_split(p, r, z_values, scenario == Scenario::UnseenInputs, rng);

  DiscreteWorld w;
  w.scenario = scenario;
  w.structure = r.g;
  w.alphabet = r.alphabet;
  std::map<SampleId, std::size_t> index;
  auto make_sample = [&](std::size_t s) {
    char id[16];
    std::snprintf(id, sizeof id, "w%02zu", s);
    Sample out{id, std::vector<Value>(inputs[s].begin(), inputs[s].end()), {}};
    for (NodeId o : r.g.outputs) out.y.push_back(z_values[s].at(o));
    index[out.id] = s;
    return out;
  };
  for (std::size_t s : split.train) w.dataset.train.push_back(make_sample(s));
  for (std::size_t s : split.test) w.dataset.test.push_back(make_sample(s));

  w.reference.components = r.components;
  for (const auto& [sid, s] : index) {
    w.reference.graphs[sid] = r.g;
    w.reference.values[sid] = z_values[s];
  }

  switch (scenario) {
    case Scenario::BreakAlignment: w.hypothesis = fit_monolithic(r, w.dataset, rng); break;
    case Scenario::Random: w.hypothesis = random_hypothesis(r, w.dataset, rng); break;
    default: w.hypothesis = fit_hypothesis(r, w.dataset, z_values, index, schemes, rng); break;
  }

  const auto report = check_theorem_conditions(w.hypothesis, w.reference, w.dataset, EqualityPolicy::exact());
  if (!scenario_verified(scenario, report)) throw Retry("scenario not realised");
  return w;
}

}  // namespace

DiscreteWorld generate_world(const WorldParams& params, Scenario scenario, std::uint64_t seed) {
  if (params.min_alphabet < 2 || params.max_alphabet < params.min_alphabet)
    throw std::invalid_argument("alphabet sizes must be at least 2");
  if (params.max_internal < 2 || params.min_inputs < 1 || params.max_inputs < params.min_inputs)
    throw std::invalid_argument("worlds need at least two internal nodes (depth >= 2)");
  CounterRng base(seed);
  for (int attempt = 0; attempt < params.max_retries; ++attempt) {
    CounterRng rng = base.fork(static_cast<std::uint64_t>(attempt));
    try {
      DiscreteWorld w = try_generate(params, scenario, rng);
      w.seed = seed;
      return w;
    } catch (const Retry&) {
    }
  }
  throw GenerationFailed("no " + to_string(scenario) + " world after " + std::to_string(params.max_retries) +
                         " attempts (seed " + std::to_string(seed) + ")");
}

json to_json(const DiscreteWorld& w) {
  return {{"scenario", to_string(w.scenario)},
          {"seed", w.seed},
          {"hypothesis", to_json(GraphSetFile{w.hypothesis, w.dataset})},
          {"reference", to_json(GraphSetFile{w.reference, w.dataset})}};
}

// ---------------------------------------------------------------------------
// Induction trace

TraceFailure::TraceFailure(SampleId s, NodeId n, const std::string& why)
    : std::runtime_error("trace failed at sample '" + s + "' node " + std::to_string(n) + ": " + why),
      sample(std::move(s)),
      node(n) {}

namespace {

/// Permutation p with a[p[i]] == b[i] for all i, preferring the identity.
std::optional<std::vector<int>> match_tuple(const std::vector<std::string>& a, const std::vector<std::string>& b,
                                            bool commutative) {
  if (a.size() != b.size()) return std::nullopt;
  std::vector<int> p(a.size());
  std::iota(p.begin(), p.end(), 0);
  auto ok = [&] {
    for (std::size_t i = 0; i < p.size(); ++i)
      if (a[p[i]] != b[i]) return false;
    return true;
  };
  if (ok()) return p;
  if (!commutative) return std::nullopt;
  while (std::next_permutation(p.begin(), p.end()))
    if (ok()) return p;
  return std::nullopt;
}

}  // namespace

InductionTrace run_induction_trace(const GraphSet& h, const GraphSet& z, const Dataset& d,
                                   const EqualityPolicy& policy) {
  const auto report = check_theorem_conditions(h, z, d, policy);
  if (!report.conditions_hold() || !report.reference_valid() || !report.correct_train.pass)
    throw PreconditionViolated("induction trace requires alignment, a valid reference, correct training "
                               "predictions and unambiguous, minimized representations");

  const SetCanonicalizer hc(h, d, policy);
  const SetCanonicalizer zc(z, d, policy);
  const NodePairTable train = build_pair_table(h, hc, z, zc, *report.alignment, d.train);
  const NodePairTable test = build_pair_table(h, hc, z, zc, *report.alignment, d.test);

  std::map<std::pair<SampleId, NodeId>, std::pair<PoolKey, const PairRecord*>> test_records;
  for (const auto& [key, recs] : test.pools)
    for (const auto& r : recs) test_records[{r.sample, r.h_node}] = {key, &r};

  InductionTrace trace;
  for (const auto& sample : d.test) {
    const Graph& g = h.graphs.at(sample.id);
    std::map<NodeId, std::size_t> line_of;

    for (NodeId n : g.inputs) {
      const PairRecord& b = *test_records.at({sample.id, n}).second;
      TraceLine line{sample.id, n, b.z_node, {kInputPool, kInputPool}, true, false, b.h, b.z, {}, 0, {}, {}};
      const auto pool = train.pools.find(line.pool);
      if (pool != train.pools.end())
        for (const auto& a : pool->second)
          if (a.h == b.h && a.z == b.z) {
            line.witness = a.sample;
            line.witness_node = a.h_node;
            line.eq_outputs = true;
            break;
          }
      if (!line.eq_outputs) throw TraceFailure(sample.id, n, "input value never seen in training");
      line.eq_inputs = line.eq_parents = true;
      line_of[n] = trace.lines.size();
      trace.lines.push_back(std::move(line));
    }

    for (const InternalNode* n : topological_order(g)) {
      const auto& [key, rec] = test_records.at({sample.id, n->id});
      const PairRecord& b = *rec;
      TraceLine line{sample.id, n->id, b.z_node, key, false, false, b.h, b.z, {}, 0, {}, {}};

      const bool z_comm = z.components.at(line.pool.z_component).commutative;
      const bool h_comm = h.components.at(line.pool.h_component).commutative;
      const auto pool = train.pools.find(line.pool);
      if (pool == train.pools.end()) throw TraceFailure(sample.id, n->id, "no training occurrence of the pool");

      // Base of the step: a training sample A whose reference input tuple equals B's.
      const PairRecord* a = nullptr;
      std::vector<int> perm;
      for (int pass = 0; pass < 2 && !a; ++pass)
        for (const auto& cand : pool->second) {
          auto p = match_tuple(cand.z_aligned_inputs, b.z_aligned_inputs, pass == 1 && z_comm);
          if (!p) continue;
          bool same_pools = true;
          for (std::size_t i = 0; i < p->size(); ++i)
            same_pools = same_pools && cand.input_pools[(*p)[i]] == b.input_pools[i];
          if (!same_pools) continue;
          a = &cand;
          perm = *p;
          break;
        }
      if (!a) throw TraceFailure(sample.id, n->id, "reference input tuple unseen in training");
      line.witness = a->sample;
      line.witness_node = a->h_node;
      line.permutation = perm;
      line.eq_inputs = true;

      // II: each parent value of A equals B's, through the parent's witness C_i.
      bool eq2 = true;
      for (std::size_t i = 0; i < n->parents.size(); ++i) {
        const TraceLine& parent = trace.lines[line_of.at(n->parents[i])];
        line.parent_witnesses.emplace_back(parent.witness, parent.witness_node);
        const std::string& h_a = a->h_inputs[perm[i]];
        const std::string& h_c = hc.token(parent.witness, parent.witness_node);
        eq2 = eq2 && h_a == h_c && h_c == b.h_inputs[i];
      }
      if (!std::is_sorted(perm.begin(), perm.end()) && !h_comm) eq2 = false;
      line.eq_parents = eq2;
      if (!eq2) throw TraceFailure(sample.id, n->id, "hypothesis input tuple differs from the witness");

      // III: determinism of both components.
      line.eq_outputs = a->h == b.h && a->z == b.z;
      if (!line.eq_outputs) throw TraceFailure(sample.id, n->id, "component output differs from the witness");
      line_of[n->id] = trace.lines.size();
      trace.lines.push_back(std::move(line));
    }

    for (std::size_t j = 0; j < g.outputs.size(); ++j) {
      TraceLine& line = trace.lines[line_of.at(g.outputs[j])];
      line.is_output = true;
      const Value& predicted = h.value(sample.id, g.outputs[j]);
      ++trace.outputs_checked;
      trace.predictions[{sample.id, j}] = to_string(predicted);
      if (predicted == sample.y.at(j))
        ++trace.outputs_correct;
      else
        throw TraceFailure(sample.id, g.outputs[j], "traced prediction differs from Y");
    }
  }
  return trace;
}

std::optional<std::string> revalidate_trace(const InductionTrace& t, const GraphSet& h, const GraphSet& z,
                                            const Dataset& d, const EqualityPolicy& policy) {
  const SetCanonicalizer hc(h, d, policy);
  const SetCanonicalizer zc(z, d, policy);
  const auto aligned = structural_alignment(h, z, d.ids());
  if (!std::holds_alternative<Alignment>(aligned)) return "graph sets are not aligned";
  const auto& maps = std::get<Alignment>(aligned).maps;

  for (std::size_t i = 0; i < t.lines.size(); ++i) {
    const TraceLine& l = t.lines[i];
    const std::string where = "line " + std::to_string(i) + " (" + l.test_sample + ", node " + std::to_string(l.h_node) + ")";
    if (!d.is_train(l.witness)) return where + ": witness is not a training sample";
    const NodeId za = maps.at(l.witness).at(l.witness_node);
    if (hc.token(l.witness, l.witness_node) != hc.token(l.test_sample, l.h_node)) return where + ": h differs";
    if (zc.token(l.witness, za) != zc.token(l.test_sample, l.z_node)) return where + ": z differs";
    if (l.is_input) continue;

    const auto* nb = h.graphs.at(l.test_sample).find(l.h_node);
    const auto* na = h.graphs.at(l.witness).find(l.witness_node);
    if (!nb || !na || l.parent_witnesses.size() != nb->parents.size()) return where + ": malformed line";
    for (std::size_t k = 0; k < nb->parents.size(); ++k) {
      const auto& [cs, cn] = l.parent_witnesses[k];
      if (!d.is_train(cs)) return where + ": parent witness is not a training sample";
      const NodeId pa = na->parents.at(l.permutation.at(k));
      const NodeId pb = nb->parents[k];
      if (zc.token(l.witness, maps.at(l.witness).at(pa)) != zc.token(l.test_sample, maps.at(l.test_sample).at(pb)))
        return where + ": reference inputs differ (I)";
      if (hc.token(l.witness, pa) != hc.token(cs, cn) || hc.token(cs, cn) != hc.token(l.test_sample, pb))
        return where + ": hypothesis inputs differ (II)";
    }
  }
  return std::nullopt;
}

json to_json(const InductionTrace& t) {
  json lines = json::array();
  for (const auto& l : t.lines) {
    json pw = json::array();
    for (const auto& [s, n] : l.parent_witnesses) pw.push_back({s, n});
    lines.push_back({{"test_sample", l.test_sample},
                     {"h_node", l.h_node},
                     {"z_node", l.z_node},
                     {"pool", l.pool.str()},
                     {"input", l.is_input},
                     {"output", l.is_output},
                     {"h", l.h},
                     {"z", l.z},
                     {"witness", {l.witness, l.witness_node}},
                     {"parent_witnesses", pw},
                     {"I", l.eq_inputs},
                     {"II", l.eq_parents},
                     {"III", l.eq_outputs}});
  }
  return {{"lines", lines}, {"outputs_checked", t.outputs_checked}, {"outputs_correct", t.outputs_correct}};
}

// ---------------------------------------------------------------------------
// Both directions

CounterexampleFound::CounterexampleFound(const std::string& what, json w)
    : std::runtime_error(what), world(std::move(w)) {}

TheoremOracleStats verify_theorem_both_directions(const TheoremOracleConfig& cfg) {
  TheoremOracleStats st;
  const auto exact = EqualityPolicy::exact();
  CounterRng root(cfg.seed);

  auto record = [&](const std::string& what, const DiscreteWorld& w) {
    json j = to_json(w);
    j["failure"] = what;
    if (st.counterexamples.size() < 5) st.counterexamples.push_back(j);
    if (cfg.stop_on_counterexample) throw CounterexampleFound(what, j);
  };
  auto seed_for = [&](std::uint64_t stream, int trial) { return root.fork(stream).fork(trial)(); };

  if (cfg.sufficiency) {
    for (int t = 0; t < cfg.trials; ++t) {
      DiscreteWorld w;
      try {
        w = generate_world(cfg.params, Scenario::ConditionsHold, seed_for(1, t));
      } catch (const GenerationFailed&) {
        ++st.generation_failures;
        continue;
      }
      ++st.sufficiency_worlds;
      const bool generalized = check_correct_predictions(w.hypothesis, w.dataset, Split::Test).pass;
      if (generalized) ++st.sufficiency_generalized;
      bool traced = false;
      try {
        const auto trace = run_induction_trace(w.hypothesis, w.reference, w.dataset, exact);
        traced = !revalidate_trace(trace, w.hypothesis, w.reference, w.dataset, exact);
        // Traced predictions must match ground truth from the reference.
        for (const auto& [key, pred] : trace.predictions)
          traced = traced && pred == to_string(w.dataset.find(key.first)->y.at(key.second));
      } catch (const TraceFailure&) {
      }
      if (traced) ++st.traces_completed;
      if (!generalized || !traced) {
        ++st.sufficiency_failures;
        record(generalized ? "induction trace incomplete" : "conditions hold but a test prediction is wrong", w);
      }

      DiscreteWorld bm;
      try {
        bm = generate_world(cfg.params, Scenario::BreakMinimized, seed_for(3, t));
      } catch (const GenerationFailed&) {
        ++st.generation_failures;
        continue;
      }
      ++st.break_minimized_worlds;
      if (!check_correct_predictions(bm.hypothesis, bm.dataset, Split::Test).pass) ++st.break_minimized_mispredicting;
    }
  }

  if (cfg.necessity) {
    constexpr int kScenarios = static_cast<int>(std::size(kAllScenarios));
    for (int t = 0; t < cfg.trials; ++t) {
      const Scenario sc = kAllScenarios[t % kScenarios];
      DiscreteWorld w;
      try {
        w = generate_world(cfg.params, sc, seed_for(2, t));
      } catch (const GenerationFailed&) {
        ++st.generation_failures;
        continue;
      }
      ++st.necessity_worlds;
      const bool generalizes = check_correct_predictions(w.hypothesis, w.dataset, Split::Train).pass &&
                               check_correct_predictions(w.hypothesis, w.dataset, Split::Test).pass;
      if (!generalizes || !check_seen_test_inputs(w.hypothesis, w.dataset, exact).pass) continue;
      ++st.necessity_premise;
      ++st.necessity_premise_by_scenario[to_string(sc)];
      // The hypothesis serves as its own reference.
      const auto rep = check_theorem_conditions(w.hypothesis, w.hypothesis, w.dataset, exact);
      if (!rep.all_pass()) {
        ++st.necessity_failures;
        record("generalizing world fails the conditions against itself", w);
      }
    }
  }
  return st;
}

json to_json(const TheoremOracleStats& s) {
  return {{"pass", s.pass()},
          {"sufficiency",
           {{"worlds", s.sufficiency_worlds},
            {"generalized", s.sufficiency_generalized},
            {"traces_completed", s.traces_completed},
            {"counterexamples", s.sufficiency_failures}}},
          {"necessity",
           {{"worlds", s.necessity_worlds},
            {"premise_holds", s.necessity_premise},
            {"premise_by_scenario", s.necessity_premise_by_scenario},
            {"counterexamples", s.necessity_failures}}},
          {"break_minimized", {{"worlds", s.break_minimized_worlds}, {"mispredicting", s.break_minimized_mispredicting}}},
          {"generation_failures", s.generation_failures},
          {"counterexample_dumps", s.counterexamples}};
}

}  // namespace compocert
