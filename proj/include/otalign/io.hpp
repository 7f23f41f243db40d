#pragma once

#include <optional>
#include <string>

#include "otalign/core.hpp"

namespace otalign {

// edges.tsv: one "a<TAB>b" pair per line, '#'-prefixed comment lines allowed.
Graph load_graph(const std::string& path,
                 std::optional<int> num_nodes = std::nullopt);
void save_graph(const Graph& g, const std::string& path);

// labels.csv: "node_id,label" per line, no header, every node exactly once.
std::vector<int> load_labels(const std::string& path);
void save_labels(const std::vector<int>& labels, const std::string& path);

// matrix.csv: comma-separated floats, no header.
Matrix load_matrix(const std::string& path,
                   std::optional<int> expected_rows = std::nullopt);
void save_matrix(const Matrix& m, const std::string& path);

// ragged.jsonl: one {"id": i, "vectors": [[...], ...]} object per line.
RaggedEmbeddingSet load_ragged(const std::string& path);
void save_ragged(const RaggedEmbeddingSet& r, const std::string& path);

Report load_report(const std::string& path);
void save_report(const Report& r, const std::string& path);

// 17 significant digits: guarantees double round-trip.
std::string format_double(double v);

}  // namespace otalign
