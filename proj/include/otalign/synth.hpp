#pragma once

#include <vector>

#include "json.hpp"
#include "otalign/core.hpp"
#include "otalign/errors.hpp"

namespace otalign {

// Generator knobs for the three planted heterophily patterns: partial
// (mixed foreign tokens), complete (pure-noise nodes), latent (deleted
// same-class edges).
struct SynthConfig {
  int num_nodes = 60;
  int num_classes = 3;
  int dim = 16;
  double intra_edge_prob = 0.2;
  double inter_edge_prob = 0.05;
  double partial_mix = 0.0;
  double complete_noise_frac = 0.0;
  double latent_drop_frac = 0.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

// Ground truth the generator plants for later scoring.
struct PlantedRecord {
  std::vector<Edge> deleted_edges;  // same-class edges removed, ascending
  std::vector<int> noise_nodes;     // complete-heterophily node ids, ascending

  nlohmann::json to_json() const;
  static PlantedRecord from_json(const nlohmann::json& j);
};

struct SyntheticTag {
  Graph graph;
  EmbeddingMatrix h_struct;  // N x dim
  EmbeddingMatrix h_text;    // N x dim
  RaggedEmbeddingSet neighborhoods;  // self first, then sorted 1-hop
  RaggedEmbeddingSet tokens;
  PlantedRecord planted;
};

// Deterministic given cfg (all randomness from cfg.seed).
SyntheticTag generate(const SynthConfig& cfg);

// delta < 0 removes |delta| seeded distinct edges; delta > 0 adds delta
// seeded distinct non-edges. Labels are preserved.
Graph perturb_edges(const Graph& g, long long delta, std::uint64_t seed);

// On floor(node_frac * N) seeded nodes: word_frac < 0 removes
// floor(|word_frac| * W_i) vectors (never below 1); word_frac > 0 appends
// floor(word_frac * W_i) isotropic noise vectors.
RaggedEmbeddingSet perturb_tokens(const RaggedEmbeddingSet& tokens,
                                  double node_frac, double word_frac,
                                  std::uint64_t seed);

}  // namespace otalign
