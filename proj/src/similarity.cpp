#include "otalign/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace otalign {

const char* to_string(SimKind k) {
  switch (k) {
    case SimKind::rsm: return "rsm";
    case SimKind::cosine: return "cosine";
    case SimKind::merged: return "merged";
  }
  return "?";
}

void SimilarityMatrix::validate() const {
  if (values.rows() == 0 || values.rows() != values.cols())
    throw ValidationError("similarity matrix must be square and non-empty");
  if (!values.allFinite())
    throw ValidationError("similarity matrix has non-finite entries");
  if (kind == SimKind::cosine &&
      (values.minCoeff() < -1.0 || values.maxCoeff() > 1.0))
    throw ValidationError("cosine similarity entries must lie in [-1, 1]");
}

PromptSpec PromptSpec::from_percentile(double p) {
  PromptSpec s;
  s.percentile = p;
  s.validate();
  return s;
}

PromptSpec PromptSpec::from_explicit(double v) {
  PromptSpec s;
  s.explicit_value = v;
  s.validate();
  return s;
}

void PromptSpec::validate() const {
  if (percentile.has_value() == explicit_value.has_value())
    throw ValidationError(
        "prompt must set exactly one of percentile or explicit value");
  if (percentile && !(*percentile > 0.0 && *percentile < 1.0))
    throw ValidationError("prompt percentile must lie in (0, 1)");
  if (explicit_value && !std::isfinite(*explicit_value))
    throw ValidationError("explicit prompt value must be finite");
}

double row_dot(const Matrix& a, Eigen::Index ra, const Matrix& b,
               Eigen::Index rb) {
  double acc = 0;
  for (Eigen::Index d = 0; d < a.cols(); ++d) acc += a(ra, d) * b(rb, d);
  return acc;
}

double rsm(const std::vector<double>& xs, double beta) {
  if (xs.empty()) throw ValidationError("rsm requires a non-empty list");
  if (!(beta > 0.0)) throw ValidationError("rsm beta must be > 0");
  double m = xs[0];
  for (double x : xs) {
    if (!std::isfinite(x)) throw ValidationError("rsm input must be finite");
    m = std::max(m, x);
  }
  double sum = 0;
  for (double x : xs) sum += std::exp((x - m) / beta);
  return m + beta * std::log(sum);
}

std::vector<double> rsm_grad(const std::vector<double>& xs, double beta) {
  if (xs.empty()) throw ValidationError("rsm requires a non-empty list");
  if (!(beta > 0.0)) throw ValidationError("rsm beta must be > 0");
  double m = *std::max_element(xs.begin(), xs.end());
  std::vector<double> g(xs.size());
  double sum = 0;
  for (std::size_t l = 0; l < xs.size(); ++l) {
    g[l] = std::exp((xs[l] - m) / beta);
    sum += g[l];
  }
  for (double& v : g) v /= sum;
  return g;
}

SimilarityMatrix pairwise_rsm_similarity(const RaggedEmbeddingSet& neigh,
                                         const RaggedEmbeddingSet& tokens,
                                         double beta) {
  neigh.validate("neigh");
  tokens.validate("tokens");
  if (neigh.size() != tokens.size())
    throw ValidationError("neigh and tokens must cover the same node count");
  if (neigh.dim() != tokens.dim())
    throw ValidationError("neigh and tokens must share the vector dimension");
  if (!(beta > 0.0)) throw ValidationError("rsm beta must be > 0");
  int n = neigh.size();
  Matrix s(n, n);
  std::vector<double> vals;
  for (int i = 0; i < n; ++i) {
    const Matrix& gi = neigh.per_node[i];
    const Matrix& ti = tokens.per_node[i];
    for (int j = 0; j < n; ++j) {
      const Matrix& gj = neigh.per_node[j];
      const Matrix& tj = tokens.per_node[j];
      double term_a = 0;  // mean over i's neighbors of RSM over j's tokens
      for (Eigen::Index k = 0; k < gi.rows(); ++k) {
        vals.resize(static_cast<std::size_t>(tj.rows()));
        for (Eigen::Index w = 0; w < tj.rows(); ++w)
          vals[static_cast<std::size_t>(w)] = row_dot(gi, k, tj, w);
        term_a += rsm(vals, beta);
      }
      term_a /= static_cast<double>(gi.rows());
      double term_b = 0;  // mean over i's tokens of RSM over j's neighbors
      for (Eigen::Index w = 0; w < ti.rows(); ++w) {
        vals.resize(static_cast<std::size_t>(gj.rows()));
        for (Eigen::Index k = 0; k < gj.rows(); ++k)
          vals[static_cast<std::size_t>(k)] = row_dot(ti, w, gj, k);
        term_b += rsm(vals, beta);
      }
      term_b /= static_cast<double>(ti.rows());
      s(i, j) = 0.5 * (term_a + term_b);
    }
  }
  return SimilarityMatrix{std::move(s), SimKind::rsm};
}

SimilarityMatrix global_cosine(const EmbeddingMatrix& a,
                               const EmbeddingMatrix& b) {
  check_embedding_matrix(a, "a");
  check_embedding_matrix(b, "b");
  if (a.rows() != b.rows())
    throw ValidationError("global_cosine requires equal row counts");
  if (a.cols() != b.cols())
    throw ValidationError("global_cosine requires equal dimensions");
  int n = static_cast<int>(a.rows());
  Vector na(n), nb(n);
  for (int i = 0; i < n; ++i) {
    double sa = row_dot(a, i, a, i);
    if (sa == 0.0)
      throw ValidationError("a row " + std::to_string(i) + " has zero norm");
    na(i) = std::sqrt(sa);
    double sb = row_dot(b, i, b, i);
    if (sb == 0.0)
      throw ValidationError("b row " + std::to_string(i) + " has zero norm");
    nb(i) = std::sqrt(sb);
  }
  Matrix c(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double v = row_dot(a, i, b, j) / (na(i) * nb(j));
      c(i, j) = std::clamp(v, -1.0, 1.0);
    }
  return SimilarityMatrix{std::move(c), SimKind::cosine};
}

Matrix affine_normalize_meta(const Matrix& s, Eigen::Index& argmin_flat,
                             Eigen::Index& argmax_flat, bool& degenerate) {
  if (s.size() == 0) throw ValidationError("cannot normalize an empty matrix");
  if (!s.allFinite())
    throw ValidationError("cannot normalize non-finite entries");
  double lo = s(0, 0), hi = s(0, 0);
  argmin_flat = argmax_flat = 0;
  Eigen::Index flat = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < s.cols(); ++j, ++flat) {
      double v = s(i, j);
      if (v < lo) {
        lo = v;
        argmin_flat = flat;
      }
      if (v > hi) {
        hi = v;
        argmax_flat = flat;
      }
    }
  degenerate = (hi == lo);
  if (degenerate) return Matrix::Zero(s.rows(), s.cols());
  return (2.0 / (hi - lo)) * (s.array() - lo).matrix() -
         Matrix::Constant(s.rows(), s.cols(), 1.0);
}

Matrix affine_normalize(const Matrix& s) {
  Eigen::Index p, q;
  bool deg;
  return affine_normalize_meta(s, p, q, deg);
}

SimilarityMatrix merge(const SimilarityMatrix& s_rsm,
                       const SimilarityMatrix& s_cos, double alpha) {
  s_rsm.validate();
  s_cos.validate();
  if (s_rsm.values.rows() != s_cos.values.rows())
    throw ValidationError("merge requires equal shapes");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ValidationError("merge alpha must lie in [0, 1]");
  Matrix out =
      alpha * affine_normalize(s_rsm.values) + (1.0 - alpha) * s_cos.values;
  return SimilarityMatrix{std::move(out), SimKind::merged};
}

double percentile_nearest_rank(std::vector<double> values, double p) {
  if (values.empty())
    throw ValidationError("percentile requires a non-empty list");
  if (!(p > 0.0 && p < 1.0))
    throw ValidationError("percentile must lie in (0, 1)");
  std::sort(values.begin(), values.end());
  double raw = p * static_cast<double>(values.size());
  double fl = std::floor(raw);
  // ceil(raw) with a tolerance so p*n that is mathematically an integer is
  // not bumped up by floating-point dust.
  long long k = (raw - fl < 1e-9) ? static_cast<long long>(fl)
                                  : static_cast<long long>(fl) + 1;
  k = std::clamp<long long>(k, 1, static_cast<long long>(values.size()));
  return values[static_cast<std::size_t>(k - 1)];
}

AugmentedSimilarity augment_with_prompt(const SimilarityMatrix& s,
                                        const PromptSpec& prompt) {
  s.validate();
  prompt.validate();
  int n = s.n();
  double v;
  if (prompt.explicit_value) {
    v = *prompt.explicit_value;
  } else {
    std::vector<double> entries;
    entries.reserve(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) entries.push_back(s.values(i, j));
    v = percentile_nearest_rank(std::move(entries), *prompt.percentile);
  }
  AugmentedSimilarity out;
  out.values = Matrix::Constant(n + 1, n + 1, v);
  out.values.topLeftCorner(n, n) = s.values;
  out.prompt_entries = Vector::Constant(n, v);
  out.prompt_value = v;
  return out;
}

}  // namespace otalign
