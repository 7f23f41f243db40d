#pragma once

#include <optional>
#include <vector>

#include "otalign/core.hpp"
#include "otalign/errors.hpp"

namespace otalign {

enum class SimKind { rsm, cosine, merged };

const char* to_string(SimKind k);

// Dense node-pair similarity matrix with a tag recording how it was built.
struct SimilarityMatrix {
  Matrix values;  // N x N, finite
  SimKind kind = SimKind::merged;

  int n() const { return static_cast<int>(values.rows()); }
  void validate() const;
};

// Prompt choice for augment_with_prompt: either an adaptive percentile over
// the matrix entries or an explicit scalar.
struct PromptSpec {
  std::optional<double> percentile;      // in (0,1)
  std::optional<double> explicit_value;  // used verbatim

  static PromptSpec from_percentile(double p);
  static PromptSpec from_explicit(double v);
  void validate() const;
};

// (N+1) x (N+1) similarity with an extra absorbing row/column of prompt
// entries; the corner holds the prompt value itself.
struct AugmentedSimilarity {
  Matrix values;          // (N+1) x (N+1)
  Vector prompt_entries;  // length N: the shared border values
  double prompt_value = 0.0;  // corner entry

  int n() const { return static_cast<int>(values.rows()) - 1; }
};

// Smoothed maximum: beta * log sum exp(x/beta), computed max-shifted.
double rsm(const std::vector<double>& xs, double beta);

// d rsm / d x_l = softmax(x/beta)_l.
std::vector<double> rsm_grad(const std::vector<double>& xs, double beta);

// s_ij = 1/2 ( mean_k RSM_beta over j's tokens of <neigh_i[k], tokens_j[w]>
//            + mean_w RSM_beta over j's neighbors of <tokens_i[w], neigh_j[k]> )
// Not symmetric in general.
SimilarityMatrix pairwise_rsm_similarity(const RaggedEmbeddingSet& neigh,
                                         const RaggedEmbeddingSet& tokens,
                                         double beta);

// C_ij = cosine(a_i, b_j); clamped into [-1, 1] against rounding overshoot.
SimilarityMatrix global_cosine(const EmbeddingMatrix& a,
                               const EmbeddingMatrix& b);

// Affine rescale of the entries onto [-1, 1]; constant matrices map to zeros.
Matrix affine_normalize(const Matrix& s);

// As affine_normalize, but also reports which (flattened, row-major) entries
// served as min and max, and whether the matrix was constant. The losses
// module freezes these indices to differentiate through the rescale.
Matrix affine_normalize_meta(const Matrix& s, Eigen::Index& argmin_flat,
                             Eigen::Index& argmax_flat, bool& degenerate);

// S = alpha * affine_normalize(s_rsm) + (1 - alpha) * s_cos.
SimilarityMatrix merge(const SimilarityMatrix& s_rsm,
                       const SimilarityMatrix& s_cos, double alpha);

// k-th smallest with k = ceil(p * n), 1-based (nearest-rank percentile).
double percentile_nearest_rank(std::vector<double> values, double p);

AugmentedSimilarity augment_with_prompt(const SimilarityMatrix& s,
                                        const PromptSpec& prompt);

// Scalar-loop dot product (fixed accumulation order) over row ra of a and
// row rb of b; shared by similarity and its gradients.
double row_dot(const Matrix& a, Eigen::Index ra, const Matrix& b,
               Eigen::Index rb);

}  // namespace otalign
