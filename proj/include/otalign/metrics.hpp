#pragma once

#include <optional>
#include <string>

#include "otalign/core.hpp"

namespace otalign {

struct MetricsOptions {
  double uts_threshold = 0.5;            // cosine cut for R_UTS
  long long pair_exact_threshold = 2000; // exact non-edge enumeration up to this N
  long long sample_size = 200000;        // sampled non-edges beyond the threshold
  std::uint64_t seed = 0;                // sampling seed (mandatory when sampling)
  void validate() const;
};

double node_homophily(const Graph& g);
double edge_homophily(const Graph& g);

struct NeighborhoodProfile {
  double r_nys = 0, r_nyd = 0, r_nym = 0;
  int excluded_degree_zero = 0;
};
NeighborhoodProfile neighborhood_label_profile(const Graph& g);

struct UnconnectedLabelStats {
  double r_unys = 0;                 // always exact (O(N+M) counting)
  std::optional<double> r_ueys;      // absent on complete graphs
  std::string ueys_absent_reason;
  bool sampled = false;
  long long pair_sample_size = 0;    // non-edge pairs inspected for r_ueys
};
UnconnectedLabelStats unconnected_label_stats(const Graph& g,
                                              const MetricsOptions& opt);

struct TextDissimilarity {
  double r_nwd = 0;  // 1 - mean over edges of mean-pairwise token cosine
  double r_ntd = 0;  // 1 - mean over edges of sentence cosine
};
// Both complements are clipped into [0,1] (cosines may be negative).
TextDissimilarity text_dissimilarity(const Graph& g,
                                     const RaggedEmbeddingSet& tokens,
                                     const EmbeddingMatrix& sentences);

struct UnconnectedTextSimilarity {
  double r_uts = 0;
  bool sampled = false;
  long long pair_sample_size = 0;
};
UnconnectedTextSimilarity unconnected_text_similarity(
    const Graph& g, const EmbeddingMatrix& sentences,
    const MetricsOptions& opt);

struct MetricValue {
  std::optional<double> value;
  std::string reason;  // set when absent
};

struct MetricReport {
  MetricValue h_n, h_e, r_nys, r_nyd, r_nym, r_unys, r_ueys, r_nwd, r_ntd,
      r_uts;
  int degree_zero_excluded = 0;
  bool sampled = false;
  long long pair_sample_size = 0;
  nlohmann::json to_json() const;
};

// Computes every metric whose inputs are available; component errors become
// absent-with-reason entries. tokens/sentences may be null.
MetricReport metric_report(const Graph& g, const RaggedEmbeddingSet* tokens,
                           const EmbeddingMatrix* sentences,
                           const MetricsOptions& opt);

// Unordered non-adjacent pairs (i<j), ascending; exact below the threshold,
// seeded distinct sampling above it. Sorted so estimates are order-stable.
std::vector<Edge> select_nonedge_pairs(const Graph& g,
                                       const MetricsOptions& opt,
                                       bool& sampled);

// Plain-loop cosine (fixed accumulation order, used by all metrics so results
// are reproducible bit-for-bit against simple enumeration).
double cosine_strict(const double* a, const double* b, int dim);

}  // namespace otalign
