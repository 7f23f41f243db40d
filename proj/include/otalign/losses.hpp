#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "otalign/core.hpp"
#include "otalign/errors.hpp"
#include "otalign/similarity.hpp"
#include "otalign/transport.hpp"

namespace otalign {

// Knobs shared by the contrastive objectives and the pipeline stages they
// drive (similarity merge, prompt augmentation, transport).
struct LossConfig {
  double tau = 0.5;
  int neg_count = 0;  // 0 means the default min(N, 256)
  double lambda = 0.5;
  double alpha = 0.5;       // merge weight
  double beta = 0.5;        // RSM temperature
  double epsilon = 0.05;    // transport entropy weight
  double percentile = 0.10;  // prompt percentile
  int ot_max_iters = 30;
  double ot_tol = 1e-6;

  void validate() const;
  int resolved_neg_count(int n) const;
};

// Retained-negative index sets, one per anchor. rows[i] are the columns kept
// for anchor i's row direction; cols[i] are the rows kept for its column
// direction. Sets are stored sorted ascending and always contain i.
struct NegSets {
  std::vector<std::vector<int>> rows;
  std::vector<std::vector<int>> cols;
};

struct AffinityResult {
  Matrix d;  // d_ij = exp(q_ij * sbar_ij / tau)
  NegSets sets;
};

// Eq.-7 style OT-weighted affinity plus retained-negative selection by the
// largest affinity exponents (self always forced in).
AffinityResult ot_affinity(const Matrix& q, const Matrix& sbar_block,
                           const LossConfig& cfg);

double loss_mha(const Matrix& d, const NegSets& sets);

// Row-stochastic soft target P = normalize_rows(I + Q_hat).
struct LhmTarget {
  Matrix p;
  void validate() const;
};

LhmTarget lhm_target(const Matrix& q_hat);

// Per-row retained indices for the LHM sum: top neg_count by s_hat value,
// self forced in, sorted ascending.
std::vector<std::vector<int>> lhm_retained_sets(const Matrix& s_hat,
                                                int neg_count);

double loss_lhm(const SimilarityMatrix& s_hat, const LhmTarget& target,
                const LossConfig& cfg);

// Same loss with the retained sets supplied (used under freezing).
double loss_lhm_frozen(const Matrix& s_hat, const LhmTarget& target,
                       const std::vector<std::vector<int>>& sets, double tau);

double loss_infonce(const SimilarityMatrix& s, double tau);

double loss_total(double l_nc, double l_mha, double l_lhm, double lambda);

struct LossReport {
  double l_mha = 0, l_lhm = 0, l_infonce = 0;
  std::optional<double> l_nc;
  double l_total = 0;
  std::vector<double> per_node_mha, per_node_lhm;
  NegSets retained;
  nlohmann::json to_json(bool dump_negatives) const;
};

// All learnable inputs of the alignment objective. `neighborhoods` and
// `tokens` are treated as independent coordinates here; compositions that
// tie neighborhood vectors back to h_struct rows live in the trainer.
struct EmbeddingBundle {
  EmbeddingMatrix h_struct;  // N x d
  EmbeddingMatrix h_text;    // N x d
  RaggedEmbeddingSet neighborhoods;
  RaggedEmbeddingSet tokens;

  int n() const { return static_cast<int>(h_struct.rows()); }
  void validate() const;
};

// Everything held constant across a gradient evaluation: both cropped
// transport plans, the retained sets, and the normalization anchors.
struct FrozenContext {
  Matrix q_mha;      // cropped plan from OT on the merged similarity
  LhmTarget p_lhm;   // target from OT on the cross-view cosine
  NegSets mha_sets;
  std::vector<std::vector<int>> lhm_sets;
  Eigen::Index norm_argmin = 0, norm_argmax = 0;  // flattened, row-major
  bool norm_degenerate = false;
  int neg_count = 1;
  double tau = 0.5, alpha = 0.5, beta = 0.5;
};

FrozenContext freeze_context(const EmbeddingBundle& b, const LossConfig& cfg);

// l_mha + l_lhm recomputed from the embeddings with ctx frozen; smooth in
// the embeddings, hence the target of the finite-difference oracle.
double frozen_loss(const EmbeddingBundle& b, const FrozenContext& ctx);

struct FrozenParts {
  double l_mha = 0.0, l_lhm = 0.0;
};
FrozenParts frozen_loss_parts(const EmbeddingBundle& b,
                              const FrozenContext& ctx);

// Cropped transport plan of the LHM path (OT on the augmented cross-view
// cosine); the trainer scores latent recovery against it.
Matrix lhm_plan_for(const EmbeddingBundle& b, const LossConfig& cfg);

struct GradBundle {
  EmbeddingMatrix h_struct, h_text;
  RaggedEmbeddingSet neighborhoods, tokens;
};

// Analytic gradient of l_mha + l_lhm w.r.t. every bundle coordinate, with
// plans and retained sets frozen (stop-gradient).
GradBundle grad_losses(const EmbeddingBundle& b, const FrozenContext& ctx);
GradBundle grad_losses(const EmbeddingBundle& b, const LossConfig& cfg);

struct FdReport {
  double max_rel_error = 0.0;
  std::string worst_coordinate;
  bool cancellation_warning = false;
  int coordinates_checked = 0;
  nlohmann::json to_json() const;
};

// Central differences on frozen_loss vs grad_losses, sharing one context.
// Checks every coordinate, or a seeded subset of 10^4 above that count.
FdReport finite_difference_check(const EmbeddingBundle& b,
                                 const LossConfig& cfg, double h,
                                 std::uint64_t seed);

struct AuditResult {
  double l_mha = 0, l_lhm = 0, l_infonce = 0;
  bool mha_bound_holds = false, lhm_bound_holds = false;
  bool nonneg_similarity = false, diag_dominant = false;
  nlohmann::json to_json() const;
};

// Evaluates the three losses on one similarity matrix (serving as both the
// transport payoff and the softmax logits) and reports whether the
// variational bounds and their assumptions hold. Requires neg_count = N.
AuditResult proposition_audit(const Matrix& s, const LossConfig& cfg);
// Bundle wrapper: audits the merged similarity built from the bundle.
AuditResult proposition_audit(const EmbeddingBundle& b, const LossConfig& cfg);

// Full pipeline: similarities, both OTs, losses. l_total adds l_nc when
// supplied, otherwise l_total = lambda * (l_mha + l_lhm).
LossReport evaluate_losses(const EmbeddingBundle& b, const LossConfig& cfg,
                           std::optional<double> l_nc = std::nullopt);

}  // namespace otalign
