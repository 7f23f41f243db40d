#include "otalign/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "otalign/rng.hpp"

namespace otalign {

namespace {

void check_prob(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0))
    throw ValidationError(std::string(name) + " must lie in [0, 1]");
}

Vector draw_unit_vector(Rng& rng, int dim) {
  Vector v(dim);
  double norm2 = 0;
  do {
    for (int d = 0; d < dim; ++d) v(d) = rng.normal();
    norm2 = v.squaredNorm();
  } while (norm2 == 0.0);
  return v / std::sqrt(norm2);
}

}  // namespace

void SynthConfig::validate() const {
  if (num_nodes < 1) throw ValidationError("num_nodes must be >= 1");
  if (num_classes < 1) throw ValidationError("num_classes must be >= 1");
  if (num_classes > num_nodes)
    throw ValidationError("num_classes must be <= num_nodes");
  if (dim < 1) throw ValidationError("dim must be >= 1");
  check_prob(intra_edge_prob, "intra_edge_prob");
  check_prob(inter_edge_prob, "inter_edge_prob");
  check_prob(partial_mix, "partial_mix");
  check_prob(complete_noise_frac, "complete_noise_frac");
  check_prob(latent_drop_frac, "latent_drop_frac");
  if (!(noise_sigma >= 0.0))
    throw ValidationError("noise_sigma must be >= 0");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"num_nodes", num_nodes},
          {"num_classes", num_classes},
          {"dim", dim},
          {"intra_edge_prob", intra_edge_prob},
          {"inter_edge_prob", inter_edge_prob},
          {"partial_mix", partial_mix},
          {"complete_noise_frac", complete_noise_frac},
          {"latent_drop_frac", latent_drop_frac},
          {"noise_sigma", noise_sigma},
          {"seed", seed}};
}

nlohmann::json PlantedRecord::to_json() const {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [a, b] : deleted_edges) edges.push_back({a, b});
  return {{"deleted_edges", edges}, {"noise_nodes", noise_nodes}};
}

PlantedRecord PlantedRecord::from_json(const nlohmann::json& j) {
  PlantedRecord rec;
  if (!j.contains("deleted_edges") || !j.contains("noise_nodes"))
    throw ValidationError("planted record requires deleted_edges and noise_nodes");
  for (const auto& e : j.at("deleted_edges")) {
    if (!e.is_array() || e.size() != 2)
      throw ValidationError("planted edge must be a pair");
    rec.deleted_edges.emplace_back(e[0].get<int>(), e[1].get<int>());
  }
  rec.noise_nodes = j.at("noise_nodes").get<std::vector<int>>();
  return rec;
}

SyntheticTag generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  int n = cfg.num_nodes, c = cfg.num_classes, dim = cfg.dim;

  // 1. Class centroids: random unit vectors kept nearly uncorrelated.
  std::vector<Vector> centroids;
  centroids.reserve(c);
  for (int k = 0; k < c; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      Vector cand = draw_unit_vector(rng, dim);
      bool ok = true;
      for (const Vector& prev : centroids)
        if (std::abs(cand.dot(prev)) > 0.3) {
          ok = false;
          break;
        }
      if (ok) {
        centroids.push_back(cand);
        placed = true;
      }
    }
    if (!placed)
      throw ValidationError(
          "could not draw separated class centroids; raise dim or lower "
          "num_classes");
  }

  // 2. Labels round-robin, 3. structural embeddings.
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i % c;
  EmbeddingMatrix h_struct(n, dim);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d)
      h_struct(i, d) = centroids[labels[i]](d) + cfg.noise_sigma * rng.normal();

  // 4. Token sets: centroid copies, foreign class with prob partial_mix.
  RaggedEmbeddingSet tokens;
  tokens.per_node.reserve(n);
  for (int i = 0; i < n; ++i) {
    int w = static_cast<int>(rng.uniform_int(3, 8));
    Matrix tok(w, dim);
    for (int t = 0; t < w; ++t) {
      int cls = labels[i];
      if (c > 1 && rng.uniform() < cfg.partial_mix) {
        int off = static_cast<int>(rng.uniform_index(c - 1));
        cls = off < labels[i] ? off : off + 1;
      }
      tok.row(t) = centroids[cls].transpose();
    }
    tokens.per_node.push_back(std::move(tok));
  }

  // 5. Sentence embeddings as token means.
  EmbeddingMatrix h_text(n, dim);
  for (int i = 0; i < n; ++i)
    h_text.row(i) = tokens.per_node[i].colwise().mean();

  // 6. Complete-heterophily nodes: replace text with isotropic noise.
  PlantedRecord planted;
  int noise_count = static_cast<int>(
      std::floor(cfg.complete_noise_frac * static_cast<double>(n)));
  planted.noise_nodes = rng.sample_without_replacement(n, noise_count);
  std::sort(planted.noise_nodes.begin(), planted.noise_nodes.end());
  for (int i : planted.noise_nodes) {
    Matrix& tok = tokens.per_node[i];
    for (Eigen::Index t = 0; t < tok.rows(); ++t)
      for (int d = 0; d < dim; ++d) tok(t, d) = rng.normal();
    for (int d = 0; d < dim; ++d) h_text(i, d) = rng.normal();
  }

  // 7. Edges by intra/inter class probability, lexicographic pair order.
  // The uniform draw happens for every pair so edge randomness is
  // independent of the probabilities.
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double u = rng.uniform();
      double p = labels[i] == labels[j] ? cfg.intra_edge_prob
                                        : cfg.inter_edge_prob;
      if (u < p) edges.emplace_back(i, j);
    }

  // 8. Plant latent homophily: delete a fraction of same-class edges.
  std::vector<int> same_idx;
  for (int e = 0; e < static_cast<int>(edges.size()); ++e)
    if (labels[edges[e].first] == labels[edges[e].second])
      same_idx.push_back(e);
  int drop = static_cast<int>(std::floor(
      cfg.latent_drop_frac * static_cast<double>(same_idx.size())));
  std::vector<int> picks = rng.sample_without_replacement(
      static_cast<int>(same_idx.size()), drop);
  std::set<int> dropped;
  for (int p : picks) dropped.insert(same_idx[static_cast<std::size_t>(p)]);
  std::vector<Edge> kept;
  kept.reserve(edges.size());
  for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
    if (dropped.count(e))
      planted.deleted_edges.push_back(edges[static_cast<std::size_t>(e)]);
    else
      kept.push_back(edges[static_cast<std::size_t>(e)]);
  }
  std::sort(planted.deleted_edges.begin(), planted.deleted_edges.end());

  if (kept.empty())
    throw ValidationError(
        "generated graph has no edges; raise intra_edge_prob or "
        "inter_edge_prob");

  SyntheticTag tag;
  tag.graph = Graph::make(n, std::move(kept), labels);
  tag.h_struct = std::move(h_struct);
  tag.h_text = std::move(h_text);
  tag.tokens = std::move(tokens);
  tag.planted = std::move(planted);

  // 9. Neighborhood sets from the final (post-deletion) graph.
  auto adj = tag.graph.adjacency();
  tag.neighborhoods.per_node.reserve(n);
  for (int i = 0; i < n; ++i) {
    Matrix m(1 + adj[i].size(), dim);
    m.row(0) = tag.h_struct.row(i);
    for (std::size_t k = 0; k < adj[i].size(); ++k)
      m.row(static_cast<Eigen::Index>(k + 1)) = tag.h_struct.row(adj[i][k]);
    tag.neighborhoods.per_node.push_back(std::move(m));
  }
  return tag;
}

Graph perturb_edges(const Graph& g, long long delta, std::uint64_t seed) {
  g.validate();
  if (delta == 0) return g;
  Rng rng(seed);
  std::vector<Edge> edges = g.edges;
  if (delta < 0) {
    long long remove = -delta;
    if (remove > g.num_edges())
      throw ValidationError("cannot remove more edges than the graph has");
    std::vector<int> picks = rng.sample_without_replacement(
        static_cast<int>(edges.size()), static_cast<int>(remove));
    std::set<int> gone(picks.begin(), picks.end());
    std::vector<Edge> kept;
    for (int e = 0; e < static_cast<int>(edges.size()); ++e)
      if (!gone.count(e)) kept.push_back(edges[static_cast<std::size_t>(e)]);
    return Graph::make(g.num_nodes, std::move(kept), g.labels);
  }
  long long nn = g.num_nodes;
  long long available = nn * (nn - 1) / 2 - g.num_edges();
  if (delta > available)
    throw ValidationError("cannot add more non-edges than available");
  auto adj = g.adjacency();
  std::vector<Edge> nonedges;
  nonedges.reserve(static_cast<std::size_t>(available));
  for (int i = 0; i < g.num_nodes; ++i) {
    std::size_t p = 0;
    for (int j = i + 1; j < g.num_nodes; ++j) {
      while (p < adj[i].size() && adj[i][p] < j) ++p;
      if (p < adj[i].size() && adj[i][p] == j) continue;
      nonedges.emplace_back(i, j);
    }
  }
  std::vector<int> picks = rng.sample_without_replacement(
      static_cast<int>(nonedges.size()), static_cast<int>(delta));
  for (int p : picks) edges.push_back(nonedges[static_cast<std::size_t>(p)]);
  return Graph::make(g.num_nodes, std::move(edges), g.labels);
}

RaggedEmbeddingSet perturb_tokens(const RaggedEmbeddingSet& tokens,
                                  double node_frac, double word_frac,
                                  std::uint64_t seed) {
  tokens.validate("tokens");
  check_prob(node_frac, "node_frac");
  if (!(word_frac >= -1.0 && word_frac <= 1.0))
    throw ValidationError("word_frac must lie in [-1, 1]");
  int n = tokens.size();
  int dim = tokens.dim();
  Rng rng(seed);
  int count = static_cast<int>(
      std::floor(node_frac * static_cast<double>(n)));
  std::vector<int> chosen = rng.sample_without_replacement(n, count);
  std::sort(chosen.begin(), chosen.end());

  RaggedEmbeddingSet out = tokens;
  for (int i : chosen) {
    Matrix& m = out.per_node[static_cast<std::size_t>(i)];
    int w = static_cast<int>(m.rows());
    if (word_frac < 0.0) {
      int k = static_cast<int>(
          std::floor(-word_frac * static_cast<double>(w)));
      k = std::min(k, w - 1);
      if (k <= 0) continue;
      std::vector<int> gone_idx = rng.sample_without_replacement(w, k);
      std::set<int> gone(gone_idx.begin(), gone_idx.end());
      Matrix trimmed(w - k, dim);
      Eigen::Index r = 0;
      for (int t = 0; t < w; ++t)
        if (!gone.count(t)) trimmed.row(r++) = m.row(t);
      m = std::move(trimmed);
    } else if (word_frac > 0.0) {
      int k = static_cast<int>(
          std::floor(word_frac * static_cast<double>(w)));
      if (k <= 0) continue;
      Matrix grown(w + k, dim);
      grown.topRows(w) = m;
      for (int t = 0; t < k; ++t)
        for (int d = 0; d < dim; ++d) grown(w + t, d) = rng.normal();
      m = std::move(grown);
    }
  }
  return out;
}

}  // namespace otalign
