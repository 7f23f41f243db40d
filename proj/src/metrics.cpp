#include "otalign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "otalign/rng.hpp"

namespace otalign {

namespace {

void require_labels(const Graph& g) {
  if (!g.has_labels())
    throw ValidationError("labels not present on graph");
}

// One-pass cosine with fixed accumulation order (dot, |a|^2, |b|^2 together),
// so values are bit-reproducible against a plain enumeration oracle.
double cosine_rows(const Matrix& a, Eigen::Index ra, const Matrix& b,
                   Eigen::Index rb, const std::string& what_a,
                   const std::string& what_b) {
  double dot = 0, na = 0, nb = 0;
  for (Eigen::Index d = 0; d < a.cols(); ++d) {
    double x = a(ra, d), y = b(rb, d);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0)
    throw ValidationError(what_a + " row " + std::to_string(ra) +
                          " has zero norm");
  if (nb == 0.0)
    throw ValidationError(what_b + " row " + std::to_string(rb) +
                          " has zero norm");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

long long total_nonedge_pairs(const Graph& g) {
  long long n = g.num_nodes;
  return n * (n - 1) / 2 - g.num_edges();
}

}  // namespace

void MetricsOptions::validate() const {
  if (pair_exact_threshold < 0)
    throw ValidationError("pair_exact_threshold must be >= 0");
  if (sample_size < 1) throw ValidationError("sample_size must be >= 1");
}

double cosine_strict(const double* a, const double* b, int dim) {
  double dot = 0, na = 0, nb = 0;
  for (int d = 0; d < dim; ++d) {
    dot += a[d] * b[d];
    na += a[d] * a[d];
    nb += b[d] * b[d];
  }
  if (na == 0.0 || nb == 0.0)
    throw ValidationError("cosine of zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double node_homophily(const Graph& g) {
  require_labels(g);
  auto adj = g.adjacency();
  double sum = 0;
  int counted = 0;
  for (int i = 0; i < g.num_nodes; ++i) {
    if (adj[i].empty()) continue;
    int same = 0;
    for (int j : adj[i])
      if (g.labels[j] == g.labels[i]) ++same;
    sum += static_cast<double>(same) / static_cast<double>(adj[i].size());
    ++counted;
  }
  if (counted == 0)
    throw UndefinedMetricError("no node with degree >= 1");
  return sum / static_cast<double>(counted);
}

double edge_homophily(const Graph& g) {
  require_labels(g);
  if (g.edges.empty()) throw UndefinedMetricError("no edges");
  long long same = 0;
  for (const auto& [a, b] : g.edges)
    if (g.labels[a] == g.labels[b]) ++same;
  return static_cast<double>(same) / static_cast<double>(g.num_edges());
}

NeighborhoodProfile neighborhood_label_profile(const Graph& g) {
  require_labels(g);
  auto adj = g.adjacency();
  long long nys = 0, nyd = 0, nym = 0;
  int counted = 0, excluded = 0;
  for (int i = 0; i < g.num_nodes; ++i) {
    if (adj[i].empty()) {
      ++excluded;
      continue;
    }
    int same = 0;
    for (int j : adj[i])
      if (g.labels[j] == g.labels[i]) ++same;
    int deg = static_cast<int>(adj[i].size());
    if (same == deg)
      ++nys;
    else if (same == 0)
      ++nyd;
    else
      ++nym;
    ++counted;
  }
  if (counted == 0)
    throw UndefinedMetricError("no node with degree >= 1");
  NeighborhoodProfile p;
  p.r_nys = static_cast<double>(nys) / counted;
  p.r_nyd = static_cast<double>(nyd) / counted;
  p.r_nym = static_cast<double>(nym) / counted;
  p.excluded_degree_zero = excluded;
  return p;
}

std::vector<Edge> select_nonedge_pairs(const Graph& g,
                                       const MetricsOptions& opt,
                                       bool& sampled) {
  opt.validate();
  long long total = total_nonedge_pairs(g);
  bool exact = g.num_nodes <= opt.pair_exact_threshold ||
               opt.sample_size >= total;
  std::vector<Edge> pairs;
  if (exact) {
    sampled = false;
    pairs.reserve(static_cast<std::size_t>(total));
    auto adj = g.adjacency();
    for (int i = 0; i < g.num_nodes; ++i) {
      std::size_t p = 0;  // walks adj[i] (sorted) in step with j
      for (int j = i + 1; j < g.num_nodes; ++j) {
        while (p < adj[i].size() && adj[i][p] < j) ++p;
        if (p < adj[i].size() && adj[i][p] == j) continue;
        pairs.emplace_back(i, j);
      }
    }
    return pairs;
  }
  sampled = true;
  Rng rng(opt.seed);
  long long want = opt.sample_size;
  std::set<Edge> chosen;
  if (total <= 4 * want) {
    // Non-edges are scarce: enumerate them all, then take a seeded subset.
    MetricsOptions all = opt;
    all.pair_exact_threshold = g.num_nodes;  // force exact enumeration
    bool dummy = false;
    std::vector<Edge> every = select_nonedge_pairs(g, all, dummy);
    std::vector<int> idx = rng.sample_without_replacement(
        static_cast<int>(every.size()), static_cast<int>(want));
    for (int k : idx) chosen.insert(every[static_cast<std::size_t>(k)]);
  } else {
    // Non-edges are abundant: rejection-sample distinct pairs.
    while (static_cast<long long>(chosen.size()) < want) {
      int i = static_cast<int>(rng.uniform_index(g.num_nodes));
      int j = static_cast<int>(rng.uniform_index(g.num_nodes));
      if (i == j) continue;
      if (i > j) std::swap(i, j);
      if (g.has_edge(i, j)) continue;
      chosen.emplace(i, j);
    }
  }
  pairs.assign(chosen.begin(), chosen.end());  // ascending: order-stable sums
  return pairs;
}

UnconnectedLabelStats unconnected_label_stats(const Graph& g,
                                              const MetricsOptions& opt) {
  require_labels(g);
  if (g.num_nodes < 2)
    throw ValidationError("unconnected_label_stats requires N >= 2");
  UnconnectedLabelStats out;

  // R_UNYS exactly: node i has an unconnected same-label node iff its class
  // holds more members than {itself + its same-label neighbors}.
  int max_label = *std::max_element(g.labels.begin(), g.labels.end());
  std::vector<long long> class_count(max_label + 1, 0);
  for (int y : g.labels) ++class_count[y];
  auto adj = g.adjacency();
  long long have = 0;
  for (int i = 0; i < g.num_nodes; ++i) {
    long long same_nbrs = 0;
    for (int j : adj[i])
      if (g.labels[j] == g.labels[i]) ++same_nbrs;
    if (class_count[g.labels[i]] - 1 - same_nbrs > 0) ++have;
  }
  out.r_unys = static_cast<double>(have) / g.num_nodes;

  if (total_nonedge_pairs(g) == 0) {
    out.r_ueys = std::nullopt;
    out.ueys_absent_reason = "complete graph: no unconnected pairs";
    return out;
  }
  std::vector<Edge> pairs = select_nonedge_pairs(g, opt, out.sampled);
  out.pair_sample_size = static_cast<long long>(pairs.size());
  long long same = 0;
  for (const auto& [a, b] : pairs)
    if (g.labels[a] == g.labels[b]) ++same;
  out.r_ueys = static_cast<double>(same) / static_cast<double>(pairs.size());
  return out;
}

TextDissimilarity text_dissimilarity(const Graph& g,
                                     const RaggedEmbeddingSet& tokens,
                                     const EmbeddingMatrix& sentences) {
  if (g.edges.empty()) throw UndefinedMetricError("no edges");
  if (tokens.size() != g.num_nodes)
    throw ValidationError("tokens set count != num_nodes");
  if (sentences.rows() != g.num_nodes)
    throw ValidationError("sentences rows != num_nodes");
  tokens.validate("tokens");
  double ntd_sum = 0, nwd_sum = 0;
  for (const auto& [a, b] : g.edges) {
    ntd_sum += cosine_rows(sentences, a, sentences, b, "sentences",
                           "sentences");
    const Matrix& ta = tokens.per_node[a];
    const Matrix& tb = tokens.per_node[b];
    double pair_sum = 0;
    for (Eigen::Index x = 0; x < ta.rows(); ++x)
      for (Eigen::Index y = 0; y < tb.rows(); ++y)
        pair_sum += cosine_rows(ta, x, tb, y, "tokens[" + std::to_string(a) +
                                                  "]",
                                "tokens[" + std::to_string(b) + "]");
    nwd_sum += pair_sum / static_cast<double>(ta.rows() * tb.rows());
  }
  double m = static_cast<double>(g.num_edges());
  TextDissimilarity out;
  out.r_ntd = clip01(1.0 - ntd_sum / m);
  out.r_nwd = clip01(1.0 - nwd_sum / m);
  return out;
}

UnconnectedTextSimilarity unconnected_text_similarity(
    const Graph& g, const EmbeddingMatrix& sentences,
    const MetricsOptions& opt) {
  if (g.num_nodes < 2)
    throw ValidationError("unconnected_text_similarity requires N >= 2");
  if (sentences.rows() != g.num_nodes)
    throw ValidationError("sentences rows != num_nodes");
  if (total_nonedge_pairs(g) == 0)
    throw UndefinedMetricError("complete graph: no unconnected pairs");
  UnconnectedTextSimilarity out;
  std::vector<Edge> pairs = select_nonedge_pairs(g, opt, out.sampled);
  out.pair_sample_size = static_cast<long long>(pairs.size());
  long long above = 0;
  for (const auto& [a, b] : pairs)
    if (cosine_rows(sentences, a, sentences, b, "sentences", "sentences") >
        opt.uts_threshold)
      ++above;
  out.r_uts = static_cast<double>(above) / static_cast<double>(pairs.size());
  return out;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  nlohmann::json absent = nlohmann::json::object();
  auto put = [&](const char* name, const MetricValue& v) {
    if (v.value)
      j[name] = *v.value;
    else
      absent[name] = v.reason;
  };
  put("h_n", h_n);
  put("h_e", h_e);
  put("r_nys", r_nys);
  put("r_nyd", r_nyd);
  put("r_nym", r_nym);
  put("r_unys", r_unys);
  put("r_ueys", r_ueys);
  put("r_nwd", r_nwd);
  put("r_ntd", r_ntd);
  put("r_uts", r_uts);
  j["absent"] = absent;
  j["degree_zero_excluded"] = degree_zero_excluded;
  j["sampled"] = sampled;
  j["pair_sample_size"] = pair_sample_size;
  return j;
}

MetricReport metric_report(const Graph& g, const RaggedEmbeddingSet* tokens,
                           const EmbeddingMatrix* sentences,
                           const MetricsOptions& opt) {
  g.validate();
  MetricReport rep;
  auto guard = [](MetricValue& slot, auto&& fn) {
    try {
      slot.value = fn();
    } catch (const Error& e) {
      slot.value = std::nullopt;
      slot.reason = e.what();
    }
  };
  if (!g.has_labels()) {
    const std::string why = "labels not provided";
    for (MetricValue* v : {&rep.h_n, &rep.h_e, &rep.r_nys, &rep.r_nyd,
                           &rep.r_nym, &rep.r_unys, &rep.r_ueys})
      v->reason = why;
  } else {
    guard(rep.h_n, [&] { return node_homophily(g); });
    guard(rep.h_e, [&] { return edge_homophily(g); });
    try {
      NeighborhoodProfile p = neighborhood_label_profile(g);
      rep.r_nys.value = p.r_nys;
      rep.r_nyd.value = p.r_nyd;
      rep.r_nym.value = p.r_nym;
      rep.degree_zero_excluded = p.excluded_degree_zero;
    } catch (const Error& e) {
      rep.r_nys.reason = rep.r_nyd.reason = rep.r_nym.reason = e.what();
    }
    try {
      UnconnectedLabelStats s = unconnected_label_stats(g, opt);
      rep.r_unys.value = s.r_unys;
      if (s.r_ueys)
        rep.r_ueys.value = *s.r_ueys;
      else
        rep.r_ueys.reason = s.ueys_absent_reason;
      rep.sampled = rep.sampled || s.sampled;
      rep.pair_sample_size = std::max(rep.pair_sample_size, s.pair_sample_size);
    } catch (const Error& e) {
      rep.r_unys.reason = rep.r_ueys.reason = e.what();
    }
  }
  if (tokens && sentences) {
    try {
      TextDissimilarity t = text_dissimilarity(g, *tokens, *sentences);
      rep.r_nwd.value = t.r_nwd;
      rep.r_ntd.value = t.r_ntd;
    } catch (const Error& e) {
      rep.r_nwd.reason = rep.r_ntd.reason = e.what();
    }
  } else {
    rep.r_nwd.reason = tokens ? "sentences not provided" : "tokens not provided";
    rep.r_ntd.reason = sentences ? "tokens not provided" : "sentences not provided";
  }
  if (sentences) {
    try {
      UnconnectedTextSimilarity u =
          unconnected_text_similarity(g, *sentences, opt);
      rep.r_uts.value = u.r_uts;
      rep.sampled = rep.sampled || u.sampled;
      rep.pair_sample_size = std::max(rep.pair_sample_size, u.pair_sample_size);
    } catch (const Error& e) {
      rep.r_uts.reason = e.what();
    }
  } else {
    rep.r_uts.reason = "sentences not provided";
  }
  return rep;
}

}  // namespace otalign
