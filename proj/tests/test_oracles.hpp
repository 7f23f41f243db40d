#pragma once

// Test-side oracles shared by the unit and acceptance binaries.
//
// The metrics oracle below is a deliberately naive O(N^2) enumeration over a
// dense adjacency copy. It shares no code with src/metrics.cpp; agreement is
// exact (==, not approximate) because both sides accumulate in the same
// documented order: nodes ascending, unordered pairs (i, j) with i outer and
// j inner, one-pass cosines, and a single division per averaged quantity.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "otalign/core.hpp"
#include "otalign/metrics.hpp"
#include "otalign/rng.hpp"

namespace testoracle {

using otalign::Edge;
using otalign::Graph;
using otalign::Matrix;
using otalign::RaggedEmbeddingSet;

inline double bf_clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Plain one-pass cosine between row ra of a and row rb of b.
inline double bf_cos_rows(const Matrix& a, int ra, const Matrix& b, int rb) {
  double dot = 0, na = 0, nb = 0;
  for (int d = 0; d < static_cast<int>(a.cols()); ++d) {
    double x = a(ra, d), y = b(rb, d);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct BfReport {
  std::optional<double> h_n, h_e, r_nys, r_nyd, r_nym, r_unys, r_ueys, r_nwd,
      r_ntd, r_uts;
};

// All ten metrics by brute-force enumeration. Absent optionals mean the
// metric is undefined on this input (no edges, complete graph, ...).
// Assumes labels present, N >= 2, and no zero-norm embedding rows.
inline BfReport brute_force_metrics(const Graph& g,
                                    const RaggedEmbeddingSet* tokens,
                                    const Matrix* sentences,
                                    double uts_threshold) {
  const int n = g.num_nodes;
  std::vector<std::vector<char>> adj(static_cast<std::size_t>(n),
                                     std::vector<char>(static_cast<std::size_t>(n), 0));
  for (const auto& e : g.edges) {
    adj[static_cast<std::size_t>(e.first)][static_cast<std::size_t>(e.second)] = 1;
    adj[static_cast<std::size_t>(e.second)][static_cast<std::size_t>(e.first)] = 1;
  }
  BfReport out;

  // h_n plus the NYS/NYD/NYM partition from one per-node scan.
  {
    double sum = 0;
    int counted = 0;
    long long nys = 0, nyd = 0, nym = 0;
    for (int i = 0; i < n; ++i) {
      int deg = 0, same = 0;
      for (int j = 0; j < n; ++j)
        if (adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
          ++deg;
          if (g.labels[static_cast<std::size_t>(j)] ==
              g.labels[static_cast<std::size_t>(i)])
            ++same;
        }
      if (deg == 0) continue;
      sum += static_cast<double>(same) / static_cast<double>(deg);
      ++counted;
      if (same == deg)
        ++nys;
      else if (same == 0)
        ++nyd;
      else
        ++nym;
    }
    if (counted > 0) {
      out.h_n = sum / static_cast<double>(counted);
      out.r_nys = static_cast<double>(nys) / counted;
      out.r_nyd = static_cast<double>(nyd) / counted;
      out.r_nym = static_cast<double>(nym) / counted;
    }
  }

  // h_e over all unordered pairs.
  {
    long long m = 0, same = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
          ++m;
          if (g.labels[static_cast<std::size_t>(i)] ==
              g.labels[static_cast<std::size_t>(j)])
            ++same;
        }
    if (m > 0) out.h_e = static_cast<double>(same) / static_cast<double>(m);
  }

  // r_unys by existence scan, r_ueys over all non-edges.
  {
    long long have = 0;
    for (int i = 0; i < n; ++i) {
      bool found = false;
      for (int j = 0; j < n; ++j)
        if (j != i &&
            !adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] &&
            g.labels[static_cast<std::size_t>(j)] ==
                g.labels[static_cast<std::size_t>(i)])
          found = true;
      if (found) ++have;
    }
    out.r_unys = static_cast<double>(have) / n;

    long long pairs = 0, same = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (!adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
          ++pairs;
          if (g.labels[static_cast<std::size_t>(i)] ==
              g.labels[static_cast<std::size_t>(j)])
            ++same;
        }
    if (pairs > 0)
      out.r_ueys = static_cast<double>(same) / static_cast<double>(pairs);
  }

  // r_ntd / r_nwd over edges in ascending pair order.
  if (tokens && sentences) {
    long long m = 0;
    double ntd_sum = 0, nwd_sum = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
          ++m;
          ntd_sum += bf_cos_rows(*sentences, i, *sentences, j);
          const Matrix& ta = tokens->per_node[static_cast<std::size_t>(i)];
          const Matrix& tb = tokens->per_node[static_cast<std::size_t>(j)];
          double pair_sum = 0;
          for (int x = 0; x < static_cast<int>(ta.rows()); ++x)
            for (int y = 0; y < static_cast<int>(tb.rows()); ++y)
              pair_sum += bf_cos_rows(ta, x, tb, y);
          nwd_sum += pair_sum / static_cast<double>(ta.rows() * tb.rows());
        }
    if (m > 0) {
      out.r_ntd = bf_clip01(1.0 - ntd_sum / static_cast<double>(m));
      out.r_nwd = bf_clip01(1.0 - nwd_sum / static_cast<double>(m));
    }
  }

  // r_uts over non-edges in ascending pair order.
  if (sentences) {
    long long pairs = 0, above = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (!adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
          ++pairs;
          if (bf_cos_rows(*sentences, i, *sentences, j) > uts_threshold)
            ++above;
        }
    if (pairs > 0)
      out.r_uts = static_cast<double>(above) / static_cast<double>(pairs);
  }

  return out;
}

struct RandomBundle {
  Graph graph;
  RaggedEmbeddingSet tokens;
  Matrix sentences;
};

// Seeded labeled graph + embeddings covering the degenerate corners: the
// edge probability cycles through {0, .2, .5, .9, 1}, so empty and complete
// graphs both appear in any sweep of a few dozen seeds.
inline RandomBundle random_labeled_bundle(std::uint64_t seed) {
  otalign::Rng rng(seed);
  int n = 2 + static_cast<int>(rng.uniform_index(11));  // 2..12
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_index(3));
  const double probs[5] = {0.0, 0.2, 0.5, 0.9, 1.0};
  double p = probs[rng.uniform_index(5)];
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.uniform() < p) edges.emplace_back(i, j);
  RandomBundle b;
  b.graph = Graph::make(n, std::move(edges), labels);
  int dim = 1 + static_cast<int>(rng.uniform_index(3));  // 1..3
  b.sentences = Matrix(n, dim);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) b.sentences(i, d) = rng.normal();
  b.tokens.per_node.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int w = 1 + static_cast<int>(rng.uniform_index(3));  // 1..3 tokens
    Matrix t(w, dim);
    for (int x = 0; x < w; ++x)
      for (int d = 0; d < dim; ++d) t(x, d) = rng.normal();
    b.tokens.per_node[static_cast<std::size_t>(i)] = std::move(t);
  }
  return b;
}

// Exact comparison of the library report against the oracle. Returns an
// empty string on agreement, else a description of the first mismatch.
inline std::string compare_reports(const otalign::MetricReport& lib,
                                   const BfReport& bf) {
  struct Row {
    const char* name;
    const otalign::MetricValue* a;
    const std::optional<double>* b;
  };
  const Row rows[] = {
      {"h_n", &lib.h_n, &bf.h_n},       {"h_e", &lib.h_e, &bf.h_e},
      {"r_nys", &lib.r_nys, &bf.r_nys}, {"r_nyd", &lib.r_nyd, &bf.r_nyd},
      {"r_nym", &lib.r_nym, &bf.r_nym}, {"r_unys", &lib.r_unys, &bf.r_unys},
      {"r_ueys", &lib.r_ueys, &bf.r_ueys}, {"r_nwd", &lib.r_nwd, &bf.r_nwd},
      {"r_ntd", &lib.r_ntd, &bf.r_ntd}, {"r_uts", &lib.r_uts, &bf.r_uts},
  };
  for (const Row& r : rows) {
    if (r.a->value.has_value() != r.b->has_value())
      return std::string(r.name) + ": presence mismatch (library " +
             (r.a->value ? "present" : "absent") + ", oracle " +
             (r.b->has_value() ? "present" : "absent") + ")";
    if (r.a->value && *r.a->value != **r.b)
      return std::string(r.name) + ": value mismatch";
  }
  return "";
}

}  // namespace testoracle
