#include "compocert/interchange.hpp"

#include <fstream>
#include <sstream>

namespace compocert {

using nlohmann::json;

json value_to_json(const Value& v) {
  if (const auto* s = std::get_if<Symbol>(&v)) return *s;
  return std::get<Vector>(v);
}

Value value_from_json(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_array()) {
    Vector out;
    for (const auto& e : j) {
      if (!e.is_number()) throw InterchangeError("vector values must contain only numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
  throw InterchangeError("value must be a string token or an array of numbers, got " + j.dump());
}

namespace {

json sample_to_json(const Sample& s) {
  json x = json::array(), y = json::array();
  for (const auto& v : s.x) x.push_back(value_to_json(v));
  for (const auto& v : s.y) y.push_back(value_to_json(v));
  return {{"id", s.id}, {"x", x}, {"y", y}};
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.id = j.at("id").get<std::string>();
  for (const auto& v : j.at("x")) s.x.push_back(value_from_json(v));
  for (const auto& v : j.at("y")) s.y.push_back(value_from_json(v));
  return s;
}

}  // namespace

json to_json(const GraphSetFile& f) {
  json components = json::array();
  for (const auto& [id, c] : f.graphs.components) {
    json entry = {{"id", c.id}, {"arity", c.arity}, {"commutative", c.commutative}};
    if (!c.table.empty()) {
      json rows = json::array();
      for (const auto& [in, out] : c.table) {
        json row(in);
        row.push_back(out);
        rows.push_back(std::move(row));
      }
      entry["table"] = std::move(rows);
    }
    components.push_back(std::move(entry));
  }

  json graphs = json::object();
  for (const auto& [id, g] : f.graphs.graphs) {
    json nodes = json::array();
    for (const auto& n : g.nodes) nodes.push_back({{"id", n.id}, {"component", n.component}, {"parents", n.parents}});
    graphs[id] = {{"inputs", g.inputs}, {"nodes", nodes}, {"outputs", g.outputs}};
  }

  json train = json::array(), test = json::array();
  for (const auto& s : f.dataset.train) train.push_back(sample_to_json(s));
  for (const auto& s : f.dataset.test) test.push_back(sample_to_json(s));

  json out = {{"components", components},
              {"graphs", graphs},
              {"dataset", {{"train", train}, {"test", test}}}};
  if (!f.graphs.values.empty()) {
    json values = json::object();
    for (const auto& [sid, a] : f.graphs.values) {
      json per = json::object();
      for (const auto& [nid, v] : a) per[std::to_string(nid)] = value_to_json(v);
      values[sid] = std::move(per);
    }
    out["values"] = std::move(values);
  }
  return out;
}

GraphSetFile graph_set_from_json(const json& j) {
  GraphSetFile f;
  try {
    for (const auto& cj : j.at("components")) {
      Component c;
      c.id = cj.at("id").get<std::string>();
      c.arity = cj.at("arity").get<int>();
      c.commutative = cj.value("commutative", false);
      if (c.arity < 1) throw InterchangeError("component '" + c.id + "' must have positive arity");
      if (cj.contains("table")) {
        for (const auto& row : cj.at("table")) {
          if (row.size() != static_cast<std::size_t>(c.arity) + 1)
            throw InterchangeError("component '" + c.id + "' table row has wrong length: " + row.dump());
          std::vector<Symbol> in;
          for (std::size_t i = 0; i + 1 < row.size(); ++i) in.push_back(row[i].get<std::string>());
          auto [it, fresh] = c.table.emplace(in, row.back().get<std::string>());
          if (!fresh && it->second != row.back().get<std::string>())
            throw InterchangeError("component '" + c.id + "' is not deterministic on row " + row.dump());
        }
      }
      if (auto bad = commutativity_violation(c)) throw InterchangeError("declared commutative but " + *bad);
      if (!f.graphs.components.emplace(c.id, c).second)
        throw InterchangeError("component '" + c.id + "' declared twice");
    }

    for (const auto& [sid, gj] : j.at("graphs").items()) {
      Graph g;
      g.inputs = gj.at("inputs").get<std::vector<NodeId>>();
      for (const auto& nj : gj.at("nodes"))
        g.nodes.push_back({nj.at("id").get<NodeId>(), nj.at("component").get<std::string>(),
                           nj.at("parents").get<std::vector<NodeId>>()});
      g.outputs = gj.at("outputs").get<std::vector<NodeId>>();
      if (auto err = validate_graph(g, f.graphs.components))
        throw InterchangeError("graph '" + sid + "': " + to_string(err->kind) + ": " + err->message);
      f.graphs.graphs.emplace(sid, std::move(g));
    }

    if (j.contains("dataset")) {
      const auto& dj = j.at("dataset");
      for (const auto& s : dj.value("train", json::array())) f.dataset.train.push_back(sample_from_json(s));
      for (const auto& s : dj.value("test", json::array())) f.dataset.test.push_back(sample_from_json(s));
      f.dataset.validate();
    }

    if (j.contains("values")) {
      for (const auto& [sid, per] : j.at("values").items()) {
        Assignment a;
        for (const auto& [nid, v] : per.items()) a[std::stoi(nid)] = value_from_json(v);
        f.graphs.values.emplace(sid, std::move(a));
      }
    }
  } catch (const json::exception& e) {
    throw InterchangeError(std::string("malformed graph-set document: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InterchangeError(e.what());
  }
  return f;
}

GraphSetFile read_graph_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InterchangeError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InterchangeError(path.string() + ": " + e.what());
  }
  return graph_set_from_json(j);
}

void write_graph_set(const std::filesystem::path& path, const GraphSetFile& f) {
  write_file_atomic(path, to_json(f).dump(2) + "\n");
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace compocert
