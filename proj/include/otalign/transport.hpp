#pragma once

#include <vector>

#include "otalign/core.hpp"
#include "otalign/errors.hpp"
#include "otalign/similarity.hpp"

namespace otalign {

// Entropic OT instance: maximize <Q, sbar> + epsilon*H(Q) subject to
// Q 1 = mu1, Q^T 1 = mu2. Empty marginals mean uniform.
struct TransportProblem {
  Matrix sbar;
  double epsilon = 0.05;
  Vector mu1, mu2;  // empty -> uniform 1/n
  int max_iters = 30;
  double tol = 1e-6;

  int n() const { return static_cast<int>(sbar.rows()); }
  void validate() const;
  Vector resolved_mu1() const;
  Vector resolved_mu2() const;

  static TransportProblem from_augmented(const AugmentedSimilarity& aug,
                                         double epsilon, int max_iters,
                                         double tol);
};

Vector uniform_marginals(int n);

// Non-negative low-rank kernel factorization K ~= u * Diag(upsilon) * v^T.
struct KernelFactors {
  Matrix u;        // n x r, entries >= 0, unit columns
  Vector upsilon;  // length r, entries > 0
  Matrix v;        // n x r, entries >= 0, unit columns
  double rel_frobenius_error = 0.0;

  int n() const { return static_cast<int>(u.rows()); }
  int rank() const { return static_cast<int>(upsilon.size()); }
  void validate() const;
  Vector matvec(const Vector& x) const;    // K x
  Vector matvec_t(const Vector& x) const;  // K^T x
};

enum class FactorizeMethod { nystrom, exact_when_full_rank };

// Scaling-vector solution. Potentials are stored in log space so the dense
// path survives small epsilon; the plan is materialized only on demand.
struct TransportSolution {
  bool factored = false;
  Matrix log_kernel;      // dense path: sbar / epsilon
  KernelFactors factors;  // factored path
  Vector log_kappa1, log_kappa2;
  Vector mu1, mu2;  // resolved marginals the solve targeted
  int iterations_run = 0;
  double marginal_error = 0.0;  // max of the two marginal L1 errors
  bool converged = false;

  int n() const { return static_cast<int>(log_kappa1.size()); }
  Vector kappa1() const;
  Vector kappa2() const;
  Matrix plan() const;
  Vector row_sums() const;
  Vector col_sums() const;
};

// Log-domain Sinkhorn: kappa1 <- mu1 ./ (K kappa2), kappa2 <- mu2 ./ (K^T
// kappa1) from kappa2 = 1, until both marginal L1 errors <= tol.
TransportSolution sinkhorn_dense(const TransportProblem& p);

// Top-left n_keep x n_keep block of the full plan.
Matrix crop_plan(const TransportSolution& sol, int n_keep);

// Kernel K = exp(sbar/epsilon) factorized without log stabilization, hence
// the epsilon >= 0.01 floor. nystrom samples `rank` landmark columns with
// the given seed, then refines multiplicatively keeping factors >= 0.
KernelFactors factorize_kernel(const Matrix& sbar, double epsilon, int rank,
                               FactorizeMethod method, std::uint64_t seed);

// Same fixed point as sinkhorn_dense with every kernel product through the
// factorization; per-iteration cost O(n * r).
TransportSolution sinkhorn_lowrank(const KernelFactors& factors,
                                   const Vector& mu1, const Vector& mu2,
                                   int max_iters, double tol);

struct ExactOtResult {
  double objective = 0.0;
  std::vector<int> permutation;
};

// Enumerates all permutations (n <= 7): max over pi of (1/n) sum_i
// s(i, pi(i)); ties resolved to the lexicographically smallest pi.
ExactOtResult exact_ot_bruteforce(const Matrix& s);

}  // namespace otalign
