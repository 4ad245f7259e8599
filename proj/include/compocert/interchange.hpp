#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "compocert/graph.hpp"

namespace compocert {

/// Contents of one graph-set interchange document.
struct GraphSetFile {
  GraphSet graphs;
  Dataset dataset;
};

class InterchangeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json value_to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);

nlohmann::json to_json(const GraphSetFile& f);
/// Validates every graph and commutativity flag; throws InterchangeError.
GraphSetFile graph_set_from_json(const nlohmann::json& j);

GraphSetFile read_graph_set(const std::filesystem::path& path);
void write_graph_set(const std::filesystem::path& path, const GraphSetFile& f);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace compocert
