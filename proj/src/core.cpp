#include "otalign/core.hpp"

#include <algorithm>
#include <cmath>

namespace otalign {

Graph Graph::make(int num_nodes, std::vector<Edge> edges,
                  std::vector<int> labels) {
  Graph g;
  g.num_nodes = num_nodes;
  for (auto& e : edges) {
    if (e.first > e.second) std::swap(e.first, e.second);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  g.edges = std::move(edges);
  g.labels = std::move(labels);
  g.validate();
  return g;
}

void Graph::validate() const {
  if (num_nodes < 0) throw ValidationError("Graph: num_nodes must be >= 0");
  for (const auto& [a, b] : edges) {
    if (a == b)
      throw ValidationError("Graph: self-loop at node " + std::to_string(a));
    if (a < 0 || b < 0 || a >= num_nodes || b >= num_nodes)
      throw ValidationError("Graph: edge (" + std::to_string(a) + "," +
                            std::to_string(b) + ") outside [0," +
                            std::to_string(num_nodes) + ")");
  }
  if (!labels.empty()) {
    if (static_cast<int>(labels.size()) != num_nodes)
      throw ValidationError("Graph: labels length " +
                            std::to_string(labels.size()) + " != num_nodes " +
                            std::to_string(num_nodes));
    for (int y : labels)
      if (y < 0) throw ValidationError("Graph: negative label");
  }
}

bool Graph::has_edge(int a, int b) const {
  if (a == b) return false;
  if (a > b) std::swap(a, b);
  return std::binary_search(edges.begin(), edges.end(), Edge{a, b});
}

std::vector<std::vector<int>> Graph::adjacency() const {
  std::vector<std::vector<int>> adj(num_nodes);
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& nb : adj) std::sort(nb.begin(), nb.end());
  return adj;
}

std::vector<int> Graph::degrees() const {
  std::vector<int> deg(num_nodes, 0);
  for (const auto& [a, b] : edges) {
    ++deg[a];
    ++deg[b];
  }
  return deg;
}

void RaggedEmbeddingSet::validate(const std::string& name) const {
  int d = -1;
  for (std::size_t i = 0; i < per_node.size(); ++i) {
    const Matrix& m = per_node[i];
    if (m.rows() < 1)
      throw ValidationError(name + ": set " + std::to_string(i) +
                            " is empty (each per-node set must hold at least "
                            "one vector)");
    if (d < 0) d = static_cast<int>(m.cols());
    if (m.cols() != d)
      throw ValidationError(name + ": set " + std::to_string(i) + " has dim " +
                            std::to_string(m.cols()) + ", expected " +
                            std::to_string(d));
    if (!m.allFinite())
      throw ValidationError(name + ": non-finite entry in set " +
                            std::to_string(i));
  }
}

void check_embedding_matrix(const Matrix& m, const std::string& name) {
  if (m.rows() < 1 || m.cols() < 1)
    throw ValidationError(name + ": matrix must have positive dimensions");
  if (!m.allFinite()) throw ValidationError(name + ": non-finite entry");
}

nlohmann::json Report::to_json() const {
  nlohmann::json j;
  j["params"] = params;
  j["results"] = results;
  j["seed"] = seed;
  j["version"] = version;
  return j;
}

Report Report::from_json(const nlohmann::json& j) {
  Report r;
  if (!j.contains("params") || !j.contains("results") || !j.contains("seed") ||
      !j.contains("version"))
    throw ValidationError(
        "Report: missing one of required keys params/results/seed/version");
  r.params = j.at("params");
  r.results = j.at("results");
  r.seed = j.at("seed").get<std::uint64_t>();
  r.version = j.at("version").get<std::string>();
  return r;
}

}  // namespace otalign
