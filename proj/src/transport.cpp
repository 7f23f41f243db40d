#include "otalign/transport.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "otalign/rng.hpp"

namespace otalign {

namespace {

void check_square_finite(const Matrix& m, const char* what) {
  if (m.rows() == 0 || m.rows() != m.cols())
    throw ValidationError(std::string(what) +
                          " must be square and non-empty");
  if (!m.allFinite())
    throw ValidationError(std::string(what) + " has non-finite entries");
}

void check_marginal(const Vector& mu, int n, const char* name) {
  if (mu.size() != n)
    throw ValidationError(std::string(name) + " must have length n");
  for (int i = 0; i < n; ++i)
    if (!(mu(i) > 0.0) || !std::isfinite(mu(i)))
      throw ValidationError(std::string(name) +
                            " entries must be strictly positive");
  if (std::abs(mu.sum() - 1.0) > 1e-12)
    throw ValidationError(std::string(name) + " must sum to 1 within 1e-12");
}

// Row-wise log-sum-exp of (M + 1 g^T): out_i = log sum_j exp(M_ij + g_j).
Vector lse_rows_plus_col(const Matrix& m, const Vector& g) {
  int n = static_cast<int>(m.rows());
  Vector out(n);
  for (int i = 0; i < n; ++i) {
    double mx = m(i, 0) + g(0);
    for (int j = 1; j < static_cast<int>(m.cols()); ++j)
      mx = std::max(mx, m(i, j) + g(j));
    double s = 0;
    for (int j = 0; j < static_cast<int>(m.cols()); ++j)
      s += std::exp(m(i, j) + g(j) - mx);
    out(i) = mx + std::log(s);
  }
  return out;
}

// Column-wise log-sum-exp of (f 1^T + M): out_j = log sum_i exp(f_i + M_ij).
Vector lse_cols_plus_row(const Matrix& m, const Vector& f) {
  int n = static_cast<int>(m.cols());
  Vector out(n);
  for (int j = 0; j < n; ++j) {
    double mx = f(0) + m(0, j);
    for (int i = 1; i < static_cast<int>(m.rows()); ++i)
      mx = std::max(mx, f(i) + m(i, j));
    double s = 0;
    for (int i = 0; i < static_cast<int>(m.rows()); ++i)
      s += std::exp(f(i) + m(i, j) - mx);
    out(j) = mx + std::log(s);
  }
  return out;
}

double l1_error(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().sum();
}

}  // namespace

Vector uniform_marginals(int n) {
  if (n < 1) throw ValidationError("marginal length must be >= 1");
  return Vector::Constant(n, 1.0 / n);
}

void TransportProblem::validate() const {
  check_square_finite(sbar, "sbar");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw ValidationError("epsilon must be > 0");
  if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
  if (!(tol > 0.0)) throw ValidationError("tol must be > 0");
  if (mu1.size() != 0) check_marginal(mu1, n(), "mu1");
  if (mu2.size() != 0) check_marginal(mu2, n(), "mu2");
}

Vector TransportProblem::resolved_mu1() const {
  return mu1.size() == 0 ? uniform_marginals(n()) : mu1;
}

Vector TransportProblem::resolved_mu2() const {
  return mu2.size() == 0 ? uniform_marginals(n()) : mu2;
}

TransportProblem TransportProblem::from_augmented(
    const AugmentedSimilarity& aug, double epsilon, int max_iters,
    double tol) {
  TransportProblem p;
  p.sbar = aug.values;
  p.epsilon = epsilon;
  p.max_iters = max_iters;
  p.tol = tol;
  p.validate();
  return p;
}

Vector TransportSolution::kappa1() const {
  return log_kappa1.array().exp().matrix();
}

Vector TransportSolution::kappa2() const {
  return log_kappa2.array().exp().matrix();
}

Matrix TransportSolution::plan() const {
  int m = n();
  Matrix q(m, m);
  if (!factored) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        q(i, j) = std::exp(log_kappa1(i) + log_kernel(i, j) + log_kappa2(j));
    return q;
  }
  Vector k1 = kappa1(), k2 = kappa2();
  Matrix right = factors.upsilon.asDiagonal() *
                 (factors.v.transpose() * k2.asDiagonal());
  q = k1.asDiagonal() * (factors.u * right);
  return q.cwiseMax(0.0);
}

Vector TransportSolution::row_sums() const {
  if (!factored) {
    Vector l = lse_rows_plus_col(log_kernel, log_kappa2);
    return (log_kappa1 + l).array().exp().matrix();
  }
  return kappa1().cwiseProduct(factors.matvec(kappa2()));
}

Vector TransportSolution::col_sums() const {
  if (!factored) {
    Vector l = lse_cols_plus_row(log_kernel, log_kappa1);
    return (log_kappa2 + l).array().exp().matrix();
  }
  return kappa2().cwiseProduct(factors.matvec_t(kappa1()));
}

TransportSolution sinkhorn_dense(const TransportProblem& p) {
  p.validate();
  int n = p.n();
  Vector mu1 = p.resolved_mu1();
  Vector mu2 = p.resolved_mu2();
  double shift = p.sbar.maxCoeff();
  Matrix m = (p.sbar.array() - shift).matrix() / p.epsilon;
  if (!m.allFinite())
    throw NumericalError("sbar/epsilon overflows the shifted kernel");
  Vector log_mu1 = mu1.array().log().matrix();
  Vector log_mu2 = mu2.array().log().matrix();

  Vector f = Vector::Zero(n);  // log kappa1 + shift/epsilon
  Vector g = Vector::Zero(n);  // log kappa2 (starts at kappa2 = 1)
  int iterations = 0;
  bool hit_tol = false;
  for (int it = 1; it <= p.max_iters; ++it) {
    Vector lrow = lse_rows_plus_col(m, g);
    Vector f_new = log_mu1 - lrow;  // row marginals now exact
    Vector lcol = lse_cols_plus_row(m, f_new);
    double col_err = 0;
    for (int j = 0; j < n; ++j)
      col_err += std::abs(std::exp(g(j) + lcol(j)) - mu2(j));
    if (!f_new.allFinite() || !lcol.allFinite())
      throw NumericalError("sinkhorn produced non-finite scaling at iteration " +
                           std::to_string(it));
    f = f_new;
    iterations = it;
    if (col_err <= p.tol) {
      hit_tol = true;  // keep (f_new, g): both marginals within tol
      break;
    }
    g = log_mu2 - lcol;
    if (!g.allFinite())
      throw NumericalError("sinkhorn produced non-finite scaling at iteration " +
                           std::to_string(it));
  }
  (void)hit_tol;

  TransportSolution sol;
  sol.factored = false;
  sol.log_kernel = p.sbar / p.epsilon;
  sol.log_kappa1 = f - Vector::Constant(n, shift / p.epsilon);
  sol.log_kappa2 = g;
  sol.mu1 = mu1;
  sol.mu2 = mu2;
  sol.iterations_run = iterations;
  double row_err = l1_error(sol.row_sums(), mu1);
  double col_err = l1_error(sol.col_sums(), mu2);
  sol.marginal_error = std::max(row_err, col_err);
  sol.converged = sol.marginal_error <= p.tol;
  return sol;
}

Matrix crop_plan(const TransportSolution& sol, int n_keep) {
  if (n_keep < 1) throw ValidationError("n_keep must be >= 1");
  if (n_keep > sol.n())
    throw ValidationError("n_keep exceeds the plan size");
  return sol.plan().topLeftCorner(n_keep, n_keep);
}

void KernelFactors::validate() const {
  if (u.rows() == 0 || u.rows() != v.rows())
    throw ValidationError("factor matrices must share the row count");
  if (u.cols() != upsilon.size() || v.cols() != upsilon.size())
    throw ValidationError("factor ranks disagree");
  if (upsilon.size() < 1) throw ValidationError("factor rank must be >= 1");
  if (upsilon.size() > u.rows())
    throw ValidationError("factor rank must be <= n");
  if (!u.allFinite() || !v.allFinite() || !upsilon.allFinite())
    throw ValidationError("factors must be finite");
  if (u.minCoeff() < 0.0 || v.minCoeff() < 0.0)
    throw ValidationError("factor matrices must be non-negative");
  for (int l = 0; l < rank(); ++l)
    if (!(upsilon(l) > 0.0))
      throw ValidationError("upsilon entries must be positive");
}

Vector KernelFactors::matvec(const Vector& x) const {
  return u * upsilon.cwiseProduct(v.transpose() * x);
}

Vector KernelFactors::matvec_t(const Vector& x) const {
  return v * upsilon.cwiseProduct(u.transpose() * x);
}

KernelFactors factorize_kernel(const Matrix& sbar, double epsilon, int rank,
                               FactorizeMethod method, std::uint64_t seed) {
  check_square_finite(sbar, "sbar");
  int n = static_cast<int>(sbar.rows());
  if (rank < 1) throw ValidationError("rank must be >= 1");
  if (rank > n) throw ValidationError("rank must be <= n");
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be > 0");
  if (epsilon < 0.01)
    throw NumericalError(
        "low-rank factorization runs in linear space and requires epsilon >= "
        "0.01; use the dense solver for smaller epsilon");
  double extreme = sbar.cwiseAbs().maxCoeff() / epsilon;
  if (extreme > 700.0)
    throw NumericalError("kernel exp(sbar/epsilon) overflows; increase epsilon");
  Matrix k = (sbar / epsilon).array().exp().matrix();
  double k_norm = k.norm();

  if (method == FactorizeMethod::exact_when_full_rank) {
    if (rank != n)
      throw ValidationError("exact_when_full_rank requires rank == n");
    KernelFactors f;
    f.u = k;
    f.upsilon = Vector::Ones(n);
    f.v = Matrix::Identity(n, n);
    f.rel_frobenius_error = 0.0;
    // Normalize columns of u into upsilon to honor the unit-column shape.
    for (int l = 0; l < n; ++l) {
      double c = f.u.col(l).norm();
      if (c > 0) {
        f.u.col(l) /= c;
        f.upsilon(l) = c;
      }
    }
    f.validate();
    return f;
  }

  Rng rng(seed);
  const int kAttempts = 3;
  Matrix u, v;
  bool seeded_ok = false;
  for (int attempt = 0; attempt < kAttempts && !seeded_ok; ++attempt) {
    std::vector<int> landmarks = rng.sample_without_replacement(n, rank);
    std::sort(landmarks.begin(), landmarks.end());
    Matrix c(n, rank), w(rank, rank), r(rank, n);
    for (int l = 0; l < rank; ++l) {
      c.col(l) = k.col(landmarks[l]);
      r.row(l) = k.row(landmarks[l]);
      for (int m2 = 0; m2 < rank; ++m2) w(l, m2) = k(landmarks[l], landmarks[m2]);
    }
    Eigen::JacobiSVD<Matrix> svd(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector& sv = svd.singularValues();
    if (sv(sv.size() - 1) <= sv(0) * 1e-12) continue;  // singular: resample
    Matrix winv = svd.matrixV() * sv.cwiseInverse().asDiagonal() *
                  svd.matrixU().transpose();
    u = c;
    v = (winv * r).transpose().cwiseMax(0.0);
    seeded_ok = true;
  }
  if (!seeded_ok)
    throw NumericalError(
        "landmark block singular after 3 attempts; lower the rank");

  // Multiplicative (Lee-Seung) refinement of ||K - U V^T||_F keeps both
  // factors non-negative.
  const double tiny = 1e-300;
  double prev_err = (k - u * v.transpose()).norm() / k_norm;
  for (int t = 0; t < 300; ++t) {
    Matrix ktu = k.transpose() * u;          // n x r
    Matrix utu = u.transpose() * u;          // r x r
    v = v.cwiseProduct(
        ktu.cwiseQuotient(((v * utu).array() + tiny).matrix()));
    Matrix kv = k * v;                       // n x r
    Matrix vtv = v.transpose() * v;          // r x r
    u = u.cwiseProduct(
        kv.cwiseQuotient(((u * vtv).array() + tiny).matrix()));
    if ((t + 1) % 10 == 0) {
      double err = (k - u * v.transpose()).norm() / k_norm;
      if (std::abs(prev_err - err) <= 1e-13) break;
      prev_err = err;
    }
  }

  // Pull column norms into upsilon; drop dead components.
  KernelFactors f;
  std::vector<int> keep;
  Vector ups(rank);
  for (int l = 0; l < rank; ++l) {
    double cu = u.col(l).norm(), cv = v.col(l).norm();
    ups(l) = cu * cv;
    if (ups(l) > 0.0) keep.push_back(l);
  }
  if (keep.empty())
    throw NumericalError("factorization collapsed to rank zero");
  f.u.resize(n, static_cast<int>(keep.size()));
  f.v.resize(n, static_cast<int>(keep.size()));
  f.upsilon.resize(static_cast<int>(keep.size()));
  for (std::size_t idx = 0; idx < keep.size(); ++idx) {
    int l = keep[idx];
    f.u.col(static_cast<int>(idx)) = u.col(l) / u.col(l).norm();
    f.v.col(static_cast<int>(idx)) = v.col(l) / v.col(l).norm();
    f.upsilon(static_cast<int>(idx)) = ups(l);
  }
  f.rel_frobenius_error =
      (k - f.u * f.upsilon.asDiagonal() * f.v.transpose()).norm() / k_norm;
  f.validate();
  return f;
}

TransportSolution sinkhorn_lowrank(const KernelFactors& factors,
                                   const Vector& mu1, const Vector& mu2,
                                   int max_iters, double tol) {
  factors.validate();
  int n = factors.n();
  check_marginal(mu1, n, "mu1");
  check_marginal(mu2, n, "mu2");
  if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
  if (!(tol > 0.0)) throw ValidationError("tol must be > 0");

  Vector k1 = Vector::Ones(n), k2 = Vector::Ones(n);
  int iterations = 0;
  for (int it = 1; it <= max_iters; ++it) {
    Vector a = factors.matvec(k2);
    for (int i = 0; i < n; ++i)
      if (!(a(i) > 0.0) || !std::isfinite(a(i)))
        throw NumericalError(
            "low-rank sinkhorn hit a non-positive kernel product at "
            "iteration " +
            std::to_string(it));
    Vector k1_new = mu1.cwiseQuotient(a);
    Vector b = factors.matvec_t(k1_new);
    for (int j = 0; j < n; ++j)
      if (!(b(j) > 0.0) || !std::isfinite(b(j)))
        throw NumericalError(
            "low-rank sinkhorn hit a non-positive kernel product at "
            "iteration " +
            std::to_string(it));
    double col_err = (k2.cwiseProduct(b) - mu2).cwiseAbs().sum();
    k1 = k1_new;
    iterations = it;
    if (col_err <= tol) break;  // keep (k1_new, k2)
    k2 = mu2.cwiseQuotient(b);
  }

  TransportSolution sol;
  sol.factored = true;
  sol.factors = factors;
  sol.log_kappa1 = k1.array().log().matrix();
  sol.log_kappa2 = k2.array().log().matrix();
  sol.mu1 = mu1;
  sol.mu2 = mu2;
  sol.iterations_run = iterations;
  double row_err = l1_error(sol.row_sums(), mu1);
  double col_err = l1_error(sol.col_sums(), mu2);
  sol.marginal_error = std::max(row_err, col_err);
  sol.converged = sol.marginal_error <= tol;
  return sol;
}

ExactOtResult exact_ot_bruteforce(const Matrix& s) {
  check_square_finite(s, "s");
  int n = static_cast<int>(s.rows());
  if (n > 7)
    throw ValidationError("exact_ot_bruteforce supports n <= 7 only");
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  ExactOtResult best;
  best.objective = -std::numeric_limits<double>::infinity();
  do {
    double obj = 0;
    for (int i = 0; i < n; ++i) obj += s(i, perm[i]);
    obj /= n;
    if (obj > best.objective) {  // strict >: keeps lexicographically smallest
      best.objective = obj;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace otalign
