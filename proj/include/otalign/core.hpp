#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "otalign/errors.hpp"
#include "otalign/version.hpp"

namespace otalign {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Houses H_zeta, H_t and similarity matrices by role.
using EmbeddingMatrix = Eigen::MatrixXd;

using Edge = std::pair<int, int>;  // canonical: first < second

// Undirected graph with optional integer node labels.
struct Graph {
  int num_nodes = 0;
  std::vector<Edge> edges;   // canonical form: first < second, ascending, unique
  std::vector<int> labels;   // empty, or exactly num_nodes entries, each >= 0

  // Canonicalizes (orients pairs, sorts, dedupes) and validates.
  static Graph make(int num_nodes, std::vector<Edge> edges,
                    std::vector<int> labels = {});

  bool has_labels() const { return !labels.empty(); }
  long long num_edges() const { return static_cast<long long>(edges.size()); }
  bool has_edge(int a, int b) const;           // binary search on canonical list
  std::vector<std::vector<int>> adjacency() const;  // sorted neighbor lists
  std::vector<int> degrees() const;
  void validate() const;
};

// Per-node variable-length vector sets (neighborhood embeddings, token sets).
struct RaggedEmbeddingSet {
  std::vector<Matrix> per_node;  // per_node[i]: W_i x dim, W_i >= 1

  int size() const { return static_cast<int>(per_node.size()); }
  int dim() const {
    return per_node.empty() ? 0 : static_cast<int>(per_node[0].cols());
  }
  void validate(const std::string& name) const;
};

void check_embedding_matrix(const Matrix& m, const std::string& name);

// Named results plus provenance; round-trips through report.json.
struct Report {
  nlohmann::json params = nlohmann::json::object();
  nlohmann::json results = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string version = kVersion;

  nlohmann::json to_json() const;
  static Report from_json(const nlohmann::json& j);
};

}  // namespace otalign
