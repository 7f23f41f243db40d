#include "otalign/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "otalign/rng.hpp"

namespace otalign {

namespace {

constexpr double kExpClamp = 700.0;

void check_square_pair(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() == 0 || a.rows() != a.cols())
    throw ValidationError(std::string(what) + ": matrix must be square");
  if (b.rows() != a.rows() || b.cols() != a.cols())
    throw ValidationError(std::string(what) + ": shapes must match");
}

// Indices of the k largest scores (ties to the smaller index), with `self`
// forced in by replacing the lowest-ranked pick; sorted ascending.
std::vector<int> topk_with_self(const std::vector<double>& scores, int k,
                                int self) {
  int n = static_cast<int>(scores.size());
  k = std::min(k, n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<int> sel(order.begin(), order.begin() + k);
  if (std::find(sel.begin(), sel.end(), self) == sel.end()) sel.back() = self;
  std::sort(sel.begin(), sel.end());
  return sel;
}

double lse_over(const Matrix& x, const std::vector<int>& idx, int row,
                bool by_row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int j : idx) mx = std::max(mx, by_row ? x(row, j) : x(j, row));
  double s = 0;
  for (int j : idx) s += std::exp((by_row ? x(row, j) : x(j, row)) - mx);
  return mx + std::log(s);
}

double lse_full_row(const Matrix& y, int i) {
  double mx = y.row(i).maxCoeff();
  double s = 0;
  for (int j = 0; j < y.cols(); ++j) s += std::exp(y(i, j) - mx);
  return mx + std::log(s);
}

double lse_full_col(const Matrix& y, int j) {
  double mx = y.col(j).maxCoeff();
  double s = 0;
  for (int i = 0; i < y.rows(); ++i) s += std::exp(y(i, j) - mx);
  return mx + std::log(s);
}

// Exponents x_ij = q_ij * sbar_ij / tau with the clamp-as-error rule.
Matrix affinity_exponents(const Matrix& q, const Matrix& sbar, double tau) {
  Matrix x(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      double e = q(i, j) * sbar(i, j) / tau;
      if (!(std::abs(e) <= kExpClamp))
        throw NumericalError("affinity exponent exceeds 700 at (" +
                             std::to_string(i) + "," + std::to_string(j) +
                             ")");
      x(i, j) = e;
    }
  return x;
}

std::vector<double> mha_terms(const Matrix& d, const NegSets& sets) {
  int n = static_cast<int>(d.rows());
  std::vector<double> terms(n);
  for (int i = 0; i < n; ++i) {
    double row_sum = 0;
    for (int j : sets.rows[i]) row_sum += d(i, j);
    double col_sum = 0;
    for (int j : sets.cols[i]) col_sum += d(j, i);
    terms[i] = -std::log(d(i, i) / row_sum) - std::log(d(i, i) / col_sum);
  }
  return terms;
}

std::vector<double> lhm_terms(const Matrix& s_hat, const Matrix& p,
                              const std::vector<std::vector<int>>& sets,
                              double tau) {
  int n = static_cast<int>(s_hat.rows());
  Matrix y = s_hat / tau;
  std::vector<double> lr(n), lc(n);
  for (int i = 0; i < n; ++i) lr[i] = lse_full_row(y, i);
  for (int j = 0; j < n; ++j) lc[j] = lse_full_col(y, j);
  std::vector<double> terms(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0;
    for (int j : sets[i])
      acc += p(i, j) * ((y(i, j) - lr[i]) + (y(i, j) - lc[j]));
    terms[i] = -acc;
  }
  return terms;
}

}  // namespace

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw ValidationError("tau must be > 0");
  if (neg_count < 0) throw ValidationError("neg_count must be >= 1 (or 0 for default)");
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ValidationError("alpha must lie in [0, 1]");
  if (!(beta > 0.0)) throw ValidationError("beta must be > 0");
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be > 0");
  if (!(percentile > 0.0 && percentile < 1.0))
    throw ValidationError("percentile must lie in (0, 1)");
  if (ot_max_iters < 1) throw ValidationError("ot_max_iters must be >= 1");
  if (!(ot_tol > 0.0)) throw ValidationError("ot_tol must be > 0");
}

int LossConfig::resolved_neg_count(int n) const {
  if (n < 1) throw ValidationError("matrix size must be >= 1");
  if (neg_count == 0) return std::min(n, 256);
  return std::min(neg_count, n);
}

AffinityResult ot_affinity(const Matrix& q, const Matrix& sbar_block,
                           const LossConfig& cfg) {
  cfg.validate();
  check_square_pair(q, sbar_block, "ot_affinity");
  int n = static_cast<int>(q.rows());
  int k = cfg.resolved_neg_count(n);
  Matrix x = affinity_exponents(q, sbar_block, cfg.tau);
  AffinityResult out;
  out.d = x.array().exp().matrix();
  out.sets.rows.resize(n);
  out.sets.cols.resize(n);
  std::vector<double> scores(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) scores[j] = x(i, j);
    out.sets.rows[i] = topk_with_self(scores, k, i);
    for (int j = 0; j < n; ++j) scores[j] = x(j, i);
    out.sets.cols[i] = topk_with_self(scores, k, i);
  }
  return out;
}

double loss_mha(const Matrix& d, const NegSets& sets) {
  int n = static_cast<int>(d.rows());
  if (d.rows() != d.cols() || n == 0)
    throw ValidationError("loss_mha: d must be square");
  if (static_cast<int>(sets.rows.size()) != n ||
      static_cast<int>(sets.cols.size()) != n)
    throw ValidationError("loss_mha: one retained set per anchor required");
  for (int i = 0; i < n; ++i) {
    auto has_self = [i](const std::vector<int>& s) {
      return std::find(s.begin(), s.end(), i) != s.end();
    };
    if (!has_self(sets.rows[i]) || !has_self(sets.cols[i]))
      throw ValidationError("loss_mha: retained sets must contain the anchor");
  }
  std::vector<double> terms = mha_terms(d, sets);
  return std::accumulate(terms.begin(), terms.end(), 0.0) / n;
}

void LhmTarget::validate() const {
  if (p.rows() == 0 || p.rows() != p.cols())
    throw ValidationError("LHM target must be square");
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if (!(p(i, i) > 0.0))
      throw ValidationError("LHM target diagonal must be strictly positive");
    double s = 0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (p(i, j) < 0.0)
        throw ValidationError("LHM target entries must be non-negative");
      s += p(i, j);
    }
    if (std::abs(s - 1.0) > 1e-12)
      throw ValidationError("LHM target rows must sum to 1");
  }
}

LhmTarget lhm_target(const Matrix& q_hat) {
  if (q_hat.rows() == 0 || q_hat.rows() != q_hat.cols())
    throw ValidationError("lhm_target: plan must be square");
  if (q_hat.minCoeff() < 0.0)
    throw ValidationError("lhm_target: plan entries must be >= 0");
  int n = static_cast<int>(q_hat.rows());
  Matrix p = q_hat + Matrix::Identity(n, n);
  for (int i = 0; i < n; ++i) p.row(i) /= p.row(i).sum();
  LhmTarget t{std::move(p)};
  t.validate();
  return t;
}

std::vector<std::vector<int>> lhm_retained_sets(const Matrix& s_hat,
                                                int neg_count) {
  int n = static_cast<int>(s_hat.rows());
  if (neg_count < 1) throw ValidationError("neg_count must be >= 1");
  std::vector<std::vector<int>> sets(n);
  std::vector<double> scores(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) scores[j] = s_hat(i, j);
    sets[i] = topk_with_self(scores, std::min(neg_count, n), i);
  }
  return sets;
}

double loss_lhm_frozen(const Matrix& s_hat, const LhmTarget& target,
                       const std::vector<std::vector<int>>& sets, double tau) {
  if (!(tau > 0.0)) throw ValidationError("tau must be > 0");
  check_square_pair(s_hat, target.p, "loss_lhm");
  int n = static_cast<int>(s_hat.rows());
  if (static_cast<int>(sets.size()) != n)
    throw ValidationError("loss_lhm: one retained set per row required");
  std::vector<double> terms = lhm_terms(s_hat, target.p, sets, tau);
  return std::accumulate(terms.begin(), terms.end(), 0.0) / n;
}

double loss_lhm(const SimilarityMatrix& s_hat, const LhmTarget& target,
                const LossConfig& cfg) {
  cfg.validate();
  int n = s_hat.n();
  auto sets = lhm_retained_sets(s_hat.values, cfg.resolved_neg_count(n));
  return loss_lhm_frozen(s_hat.values, target, sets, cfg.tau);
}

double loss_infonce(const SimilarityMatrix& s, double tau) {
  if (!(tau > 0.0)) throw ValidationError("tau must be > 0");
  s.validate();
  int n = s.n();
  Matrix y = s.values / tau;
  double acc = 0;
  for (int i = 0; i < n; ++i)
    acc += -(y(i, i) - lse_full_row(y, i)) - (y(i, i) - lse_full_col(y, i));
  return acc / n;
}

double loss_total(double l_nc, double l_mha, double l_lhm, double lambda) {
  for (double v : {l_nc, l_mha, l_lhm, lambda})
    if (!std::isfinite(v)) throw ValidationError("loss_total inputs must be finite");
  return l_nc + lambda * (l_mha + l_lhm);
}

nlohmann::json LossReport::to_json(bool dump_negatives) const {
  nlohmann::json j;
  j["l_mha"] = l_mha;
  j["l_lhm"] = l_lhm;
  j["l_infonce"] = l_infonce;
  if (l_nc)
    j["l_nc"] = *l_nc;
  else
    j["l_nc"] = nullptr;
  j["l_total"] = l_total;
  j["per_node_mha"] = per_node_mha;
  j["per_node_lhm"] = per_node_lhm;
  if (dump_negatives) {
    j["retained_negatives"] = {{"rows", retained.rows},
                               {"cols", retained.cols}};
  }
  return j;
}

void EmbeddingBundle::validate() const {
  check_embedding_matrix(h_struct, "h_struct");
  check_embedding_matrix(h_text, "h_text");
  int n = static_cast<int>(h_struct.rows());
  if (h_text.rows() != n)
    throw ValidationError("h_text row count must match h_struct");
  if (h_text.cols() != h_struct.cols())
    throw ValidationError("h_text dim must match h_struct");
  neighborhoods.validate("neighborhoods");
  tokens.validate("tokens");
  if (neighborhoods.size() != n)
    throw ValidationError("neighborhoods must cover every node");
  if (tokens.size() != n) throw ValidationError("tokens must cover every node");
  if (neighborhoods.dim() != h_struct.cols())
    throw ValidationError("neighborhood vectors must match h_struct dim");
  if (tokens.dim() != h_struct.cols())
    throw ValidationError("token vectors must match embedding dim");
}

namespace {

// Similarities plus both cropped transport plans for a bundle.
struct PipelineState {
  Matrix r;       // pairwise RSM similarity
  Matrix c;       // cross-view cosine
  Matrix ntilde;  // affine-normalized r
  Matrix s;       // merged similarity
  Eigen::Index argmin = 0, argmax = 0;
  bool degenerate = false;
  Matrix q_mha;  // cropped plan on augmented s
  Matrix q_lhm;  // cropped plan on augmented c
};

Matrix cropped_plan_for(const Matrix& values, SimKind kind,
                        const LossConfig& cfg) {
  SimilarityMatrix sm{values, kind};
  AugmentedSimilarity aug =
      augment_with_prompt(sm, PromptSpec::from_percentile(cfg.percentile));
  TransportProblem prob = TransportProblem::from_augmented(
      aug, cfg.epsilon, cfg.ot_max_iters, cfg.ot_tol);
  TransportSolution sol = sinkhorn_dense(prob);
  return crop_plan(sol, sm.n());
}

PipelineState build_pipeline(const EmbeddingBundle& b, const LossConfig& cfg) {
  b.validate();
  cfg.validate();
  PipelineState st;
  st.r = pairwise_rsm_similarity(b.neighborhoods, b.tokens, cfg.beta).values;
  st.c = global_cosine(b.h_struct, b.h_text).values;
  st.ntilde =
      affine_normalize_meta(st.r, st.argmin, st.argmax, st.degenerate);
  st.s = cfg.alpha * st.ntilde + (1.0 - cfg.alpha) * st.c;
  st.q_mha = cropped_plan_for(st.s, SimKind::merged, cfg);
  st.q_lhm = cropped_plan_for(st.c, SimKind::cosine, cfg);
  return st;
}

Matrix frozen_normalize(const Matrix& r, const FrozenContext& ctx) {
  if (ctx.norm_degenerate) return Matrix::Zero(r.rows(), r.cols());
  Eigen::Index cols = r.cols();
  double lo = r(ctx.norm_argmin / cols, ctx.norm_argmin % cols);
  double hi = r(ctx.norm_argmax / cols, ctx.norm_argmax % cols);
  double d = hi - lo;
  if (d == 0.0) return Matrix::Zero(r.rows(), r.cols());
  return (2.0 / d) * (r.array() - lo).matrix() -
         Matrix::Constant(r.rows(), r.cols(), 1.0);
}

}  // namespace

FrozenContext freeze_context(const EmbeddingBundle& b, const LossConfig& cfg) {
  PipelineState st = build_pipeline(b, cfg);
  int n = b.n();
  FrozenContext ctx;
  ctx.q_mha = st.q_mha;
  ctx.p_lhm = lhm_target(st.q_lhm);
  AffinityResult aff = ot_affinity(st.q_mha, st.s, cfg);
  ctx.mha_sets = std::move(aff.sets);
  ctx.lhm_sets = lhm_retained_sets(st.c, cfg.resolved_neg_count(n));
  ctx.norm_argmin = st.argmin;
  ctx.norm_argmax = st.argmax;
  ctx.norm_degenerate = st.degenerate;
  ctx.neg_count = cfg.resolved_neg_count(n);
  ctx.tau = cfg.tau;
  ctx.alpha = cfg.alpha;
  ctx.beta = cfg.beta;
  return ctx;
}

FrozenParts frozen_loss_parts(const EmbeddingBundle& b,
                              const FrozenContext& ctx) {
  Matrix r = pairwise_rsm_similarity(b.neighborhoods, b.tokens, ctx.beta).values;
  Matrix c = global_cosine(b.h_struct, b.h_text).values;
  Matrix s = ctx.alpha * frozen_normalize(r, ctx) + (1.0 - ctx.alpha) * c;
  Matrix x = affinity_exponents(ctx.q_mha, s, ctx.tau);
  int n = b.n();
  FrozenParts parts;
  for (int i = 0; i < n; ++i) {
    parts.l_mha -= x(i, i) - lse_over(x, ctx.mha_sets.rows[i], i, true);
    parts.l_mha -= x(i, i) - lse_over(x, ctx.mha_sets.cols[i], i, false);
  }
  parts.l_mha /= n;
  parts.l_lhm = loss_lhm_frozen(c, ctx.p_lhm, ctx.lhm_sets, ctx.tau);
  return parts;
}

double frozen_loss(const EmbeddingBundle& b, const FrozenContext& ctx) {
  FrozenParts parts = frozen_loss_parts(b, ctx);
  return parts.l_mha + parts.l_lhm;
}

Matrix lhm_plan_for(const EmbeddingBundle& b, const LossConfig& cfg) {
  b.validate();
  cfg.validate();
  Matrix c = global_cosine(b.h_struct, b.h_text).values;
  return cropped_plan_for(c, SimKind::cosine, cfg);
}

GradBundle grad_losses(const EmbeddingBundle& b, const FrozenContext& ctx) {
  b.validate();
  int n = b.n();
  Eigen::Index dim = b.h_struct.cols();

  Matrix r = pairwise_rsm_similarity(b.neighborhoods, b.tokens, ctx.beta).values;
  Matrix c = global_cosine(b.h_struct, b.h_text).values;
  Matrix s = ctx.alpha * frozen_normalize(r, ctx) + (1.0 - ctx.alpha) * c;
  Matrix x = affinity_exponents(ctx.q_mha, s, ctx.tau);

  // d(l_mha)/dx: softmax over each retained set minus the anchor indicator.
  Matrix gx = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const auto& rs = ctx.mha_sets.rows[i];
    double lse = lse_over(x, rs, i, true);
    for (int j : rs)
      gx(i, j) += (std::exp(x(i, j) - lse) - (j == i ? 1.0 : 0.0)) / n;
    const auto& cs = ctx.mha_sets.cols[i];
    lse = lse_over(x, cs, i, false);
    for (int j : cs)
      gx(j, i) += (std::exp(x(j, i) - lse) - (j == i ? 1.0 : 0.0)) / n;
  }
  Matrix gs = gx.cwiseProduct(ctx.q_mha) / ctx.tau;

  // d(l_lhm)/dy with y = c/tau, via full-row/column softmaxes of y.
  Matrix y = c / ctx.tau;
  Vector lr(n), lc(n);
  for (int i = 0; i < n; ++i) lr(i) = lse_full_row(y, i);
  for (int j = 0; j < n; ++j) lc(j) = lse_full_col(y, j);
  const Matrix& p = ctx.p_lhm.p;
  Vector row_mass = Vector::Zero(n);  // A_a = sum_{j in set_a} p_aj
  Vector col_mass = Vector::Zero(n);  // B_b = sum_a [b in set_a] p_ab
  Matrix in_set = Matrix::Zero(n, n);
  for (int a = 0; a < n; ++a)
    for (int j : ctx.lhm_sets[a]) {
      in_set(a, j) = 1.0;
      row_mass(a) += p(a, j);
      col_mass(j) += p(a, j);
    }
  Matrix gy(n, n);
  for (int a = 0; a < n; ++a)
    for (int bcol = 0; bcol < n; ++bcol) {
      double kp = std::exp(y(a, bcol) - lr(a));
      double kpp = std::exp(y(a, bcol) - lc(bcol));
      gy(a, bcol) = (-2.0 * in_set(a, bcol) * p(a, bcol) +
                     row_mass(a) * kp + col_mass(bcol) * kpp) /
                    n;
    }

  Matrix gc = gy / ctx.tau + (1.0 - ctx.alpha) * gs;
  Matrix gntilde = ctx.alpha * gs;

  // Backward through the frozen affine normalization of r.
  Matrix gr = Matrix::Zero(n, n);
  if (!ctx.norm_degenerate) {
    Eigen::Index cols = r.cols();
    double lo = r(ctx.norm_argmin / cols, ctx.norm_argmin % cols);
    double hi = r(ctx.norm_argmax / cols, ctx.norm_argmax % cols);
    double d = hi - lo;
    gr = (2.0 / d) * gntilde;
    double sum_g = gntilde.sum();
    double sum_gn = 0;  // sum_e g_e * (r_e - lo)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) sum_gn += gntilde(i, j) * (r(i, j) - lo);
    gr(ctx.norm_argmin / cols, ctx.norm_argmin % cols) +=
        -(2.0 / d) * sum_g + (2.0 / (d * d)) * sum_gn;
    gr(ctx.norm_argmax / cols, ctx.norm_argmax % cols) +=
        -(2.0 / (d * d)) * sum_gn;
  }

  GradBundle g;
  g.h_struct = EmbeddingMatrix::Zero(n, dim);
  g.h_text = EmbeddingMatrix::Zero(n, dim);
  g.neighborhoods.per_node.reserve(n);
  g.tokens.per_node.reserve(n);
  for (int i = 0; i < n; ++i) {
    g.neighborhoods.per_node.push_back(
        Matrix::Zero(b.neighborhoods.per_node[i].rows(), dim));
    g.tokens.per_node.push_back(Matrix::Zero(b.tokens.per_node[i].rows(), dim));
  }

  // Backward through the pairwise RSM similarity.
  std::vector<double> vals;
  for (int i = 0; i < n; ++i) {
    const Matrix& gi = b.neighborhoods.per_node[i];
    const Matrix& ti = b.tokens.per_node[i];
    for (int j = 0; j < n; ++j) {
      if (gr(i, j) == 0.0) continue;
      const Matrix& gj = b.neighborhoods.per_node[j];
      const Matrix& tj = b.tokens.per_node[j];
      double coef_a = gr(i, j) / (2.0 * static_cast<double>(gi.rows()));
      for (Eigen::Index k = 0; k < gi.rows(); ++k) {
        vals.resize(static_cast<std::size_t>(tj.rows()));
        for (Eigen::Index w = 0; w < tj.rows(); ++w)
          vals[static_cast<std::size_t>(w)] = row_dot(gi, k, tj, w);
        std::vector<double> sig = rsm_grad(vals, ctx.beta);
        for (Eigen::Index w = 0; w < tj.rows(); ++w) {
          double cw = coef_a * sig[static_cast<std::size_t>(w)];
          g.neighborhoods.per_node[i].row(k) += cw * tj.row(w);
          g.tokens.per_node[j].row(w) += cw * gi.row(k);
        }
      }
      double coef_b = gr(i, j) / (2.0 * static_cast<double>(ti.rows()));
      for (Eigen::Index w = 0; w < ti.rows(); ++w) {
        vals.resize(static_cast<std::size_t>(gj.rows()));
        for (Eigen::Index k = 0; k < gj.rows(); ++k)
          vals[static_cast<std::size_t>(k)] = row_dot(ti, w, gj, k);
        std::vector<double> sig = rsm_grad(vals, ctx.beta);
        for (Eigen::Index k = 0; k < gj.rows(); ++k) {
          double ck = coef_b * sig[static_cast<std::size_t>(k)];
          g.tokens.per_node[i].row(w) += ck * gj.row(k);
          g.neighborhoods.per_node[j].row(k) += ck * ti.row(w);
        }
      }
    }
  }

  // Backward through the cross-view cosine.
  Vector na(n), nb(n);
  for (int i = 0; i < n; ++i) {
    na(i) = std::sqrt(row_dot(b.h_struct, i, b.h_struct, i));
    nb(i) = std::sqrt(row_dot(b.h_text, i, b.h_text, i));
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double gij = gc(i, j);
      if (gij == 0.0) continue;
      double inv = 1.0 / (na(i) * nb(j));
      double cij = c(i, j);
      g.h_struct.row(i) +=
          gij * (b.h_text.row(j) * inv - cij / (na(i) * na(i)) * b.h_struct.row(i));
      g.h_text.row(j) +=
          gij * (b.h_struct.row(i) * inv - cij / (nb(j) * nb(j)) * b.h_text.row(j));
    }

  if (!g.h_struct.allFinite())
    throw NumericalError("non-finite gradient in h_struct");
  if (!g.h_text.allFinite())
    throw NumericalError("non-finite gradient in h_text");
  for (int i = 0; i < n; ++i) {
    if (!g.neighborhoods.per_node[i].allFinite())
      throw NumericalError("non-finite gradient in neighborhoods[" +
                           std::to_string(i) + "]");
    if (!g.tokens.per_node[i].allFinite())
      throw NumericalError("non-finite gradient in tokens[" +
                           std::to_string(i) + "]");
  }
  return g;
}

GradBundle grad_losses(const EmbeddingBundle& b, const LossConfig& cfg) {
  return grad_losses(b, freeze_context(b, cfg));
}

namespace {

// Flat coordinate addressing across the four bundle tensors.
struct CoordMap {
  const EmbeddingBundle* b;
  std::vector<long long> offsets;  // tensor start offsets
  long long total = 0;

  explicit CoordMap(const EmbeddingBundle& bundle) : b(&bundle) {
    long long cur = 0;
    offsets.push_back(cur);
    cur += b->h_struct.size();
    offsets.push_back(cur);
    cur += b->h_text.size();
    offsets.push_back(cur);
    for (const auto& m : b->neighborhoods.per_node) cur += m.size();
    offsets.push_back(cur);
    for (const auto& m : b->tokens.per_node) cur += m.size();
    total = cur;
  }

  // tensor: 0 h_struct, 1 h_text, 2 neighborhoods, 3 tokens
  struct Ref {
    int tensor;
    int node;  // for ragged tensors
    Eigen::Index row, col;
  };

  Ref locate(long long flat) const {
    Eigen::Index dim = b->h_struct.cols();
    if (flat < offsets[1]) {
      return {0, -1, flat / dim, flat % dim};
    }
    if (flat < offsets[2]) {
      long long rel = flat - offsets[1];
      return {1, -1, rel / dim, rel % dim};
    }
    if (flat < offsets[3]) {
      long long rel = flat - offsets[2];
      for (int i = 0; i < b->neighborhoods.size(); ++i) {
        long long sz = b->neighborhoods.per_node[i].size();
        if (rel < sz) return {2, i, rel / dim, rel % dim};
        rel -= sz;
      }
    }
    long long rel = flat - offsets[3];
    for (int i = 0; i < b->tokens.size(); ++i) {
      long long sz = b->tokens.per_node[i].size();
      if (rel < sz) return {3, i, rel / dim, rel % dim};
      rel -= sz;
    }
    throw ValidationError("coordinate index out of range");
  }

  static double get(const EmbeddingBundle& bb, const Ref& r) {
    switch (r.tensor) {
      case 0: return bb.h_struct(r.row, r.col);
      case 1: return bb.h_text(r.row, r.col);
      case 2: return bb.neighborhoods.per_node[r.node](r.row, r.col);
      default: return bb.tokens.per_node[r.node](r.row, r.col);
    }
  }

  static void set(EmbeddingBundle& bb, const Ref& r, double v) {
    switch (r.tensor) {
      case 0: bb.h_struct(r.row, r.col) = v; break;
      case 1: bb.h_text(r.row, r.col) = v; break;
      case 2: bb.neighborhoods.per_node[r.node](r.row, r.col) = v; break;
      default: bb.tokens.per_node[r.node](r.row, r.col) = v; break;
    }
  }

  static double grad_at(const GradBundle& g, const Ref& r) {
    switch (r.tensor) {
      case 0: return g.h_struct(r.row, r.col);
      case 1: return g.h_text(r.row, r.col);
      case 2: return g.neighborhoods.per_node[r.node](r.row, r.col);
      default: return g.tokens.per_node[r.node](r.row, r.col);
    }
  }

  static std::string name(const Ref& r) {
    auto cell = [&](const char* t) {
      std::string s = t;
      if (r.node >= 0) s += "[" + std::to_string(r.node) + "]";
      s += "(" + std::to_string(r.row) + "," + std::to_string(r.col) + ")";
      return s;
    };
    switch (r.tensor) {
      case 0: return cell("h_struct");
      case 1: return cell("h_text");
      case 2: return cell("neighborhoods");
      default: return cell("tokens");
    }
  }
};

}  // namespace

nlohmann::json FdReport::to_json() const {
  return {{"max_rel_error", max_rel_error},
          {"worst_coordinate", worst_coordinate},
          {"cancellation_warning", cancellation_warning},
          {"coordinates_checked", coordinates_checked}};
}

FdReport finite_difference_check(const EmbeddingBundle& b,
                                 const LossConfig& cfg, double h,
                                 std::uint64_t seed) {
  if (!(h > 0.0)) throw ValidationError("finite-difference step must be > 0");
  FrozenContext ctx = freeze_context(b, cfg);
  GradBundle g = grad_losses(b, ctx);
  CoordMap map(b);

  const long long kMaxCoords = 10000;
  std::vector<long long> coords;
  if (map.total <= kMaxCoords) {
    coords.resize(static_cast<std::size_t>(map.total));
    std::iota(coords.begin(), coords.end(), 0LL);
  } else {
    Rng rng(seed);
    std::vector<int> pick = rng.sample_without_replacement(
        static_cast<int>(map.total), static_cast<int>(kMaxCoords));
    coords.assign(pick.begin(), pick.end());
  }

  EmbeddingBundle work = b;
  FdReport rep;
  rep.cancellation_warning = h < 1e-8;
  rep.coordinates_checked = static_cast<int>(coords.size());
  for (long long flat : coords) {
    CoordMap::Ref ref = map.locate(flat);
    double orig = CoordMap::get(work, ref);
    CoordMap::set(work, ref, orig + h);
    double f_plus = frozen_loss(work, ctx);
    CoordMap::set(work, ref, orig - h);
    double f_minus = frozen_loss(work, ctx);
    CoordMap::set(work, ref, orig);
    double fd = (f_plus - f_minus) / (2.0 * h);
    double an = CoordMap::grad_at(g, ref);
    double rel =
        std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_coordinate = CoordMap::name(ref);
    }
  }
  return rep;
}

nlohmann::json AuditResult::to_json() const {
  return {{"l_mha", l_mha},
          {"l_lhm", l_lhm},
          {"l_infonce", l_infonce},
          {"mha_bound_holds", mha_bound_holds},
          {"lhm_bound_holds", lhm_bound_holds},
          {"assumptions",
           {{"nonneg_similarity", nonneg_similarity},
            {"diag_dominant", diag_dominant}}}};
}

AuditResult proposition_audit(const Matrix& s, const LossConfig& cfg) {
  cfg.validate();
  if (s.rows() == 0 || s.rows() != s.cols())
    throw ValidationError("audit matrix must be square");
  if (!s.allFinite())
    throw ValidationError("audit matrix must be finite");
  int n = static_cast<int>(s.rows());
  if (cfg.resolved_neg_count(n) != n)
    throw ValidationError(
        "proposition_audit requires neg_count = N (full negatives)");

  SimilarityMatrix sm{s, SimKind::merged};
  // The propositions are stated for an assignment-style plan with unit row
  // and column sums (0 <= q_ij <= 1): solve the N x N entropic problem on s
  // itself and rescale the mass-1 plan by N. Under diagonal dominance this
  // plan concentrates on the diagonal, which is what makes the bounds bind.
  TransportProblem tp;
  tp.sbar = s;
  tp.epsilon = cfg.epsilon;
  tp.max_iters = cfg.ot_max_iters;
  tp.tol = cfg.ot_tol;
  Matrix q = static_cast<double>(n) * sinkhorn_dense(tp).plan();
  AffinityResult aff = ot_affinity(q, s, cfg);
  AuditResult out;
  out.l_mha = loss_mha(aff.d, aff.sets);
  LhmTarget target = lhm_target(q);
  out.l_lhm = loss_lhm(sm, target, cfg);
  out.l_infonce = loss_infonce(sm, cfg.tau);
  out.mha_bound_holds = out.l_mha <= out.l_infonce + 1e-12;
  out.lhm_bound_holds = out.l_lhm <= out.l_infonce + 1e-12;
  out.nonneg_similarity = s.minCoeff() >= 0.0;
  out.diag_dominant = true;
  for (int i = 0; i < n && out.diag_dominant; ++i) {
    if (s(i, i) < s.row(i).maxCoeff() || s(i, i) < s.col(i).maxCoeff())
      out.diag_dominant = false;
  }
  return out;
}

AuditResult proposition_audit(const EmbeddingBundle& b, const LossConfig& cfg) {
  PipelineState st = build_pipeline(b, cfg);
  return proposition_audit(st.s, cfg);
}

LossReport evaluate_losses(const EmbeddingBundle& b, const LossConfig& cfg,
                           std::optional<double> l_nc) {
  PipelineState st = build_pipeline(b, cfg);
  int n = b.n();
  LossReport rep;
  AffinityResult aff = ot_affinity(st.q_mha, st.s, cfg);
  rep.per_node_mha = mha_terms(aff.d, aff.sets);
  rep.l_mha = std::accumulate(rep.per_node_mha.begin(), rep.per_node_mha.end(),
                              0.0) /
              n;
  LhmTarget target = lhm_target(st.q_lhm);
  auto lhm_sets = lhm_retained_sets(st.c, cfg.resolved_neg_count(n));
  rep.per_node_lhm = lhm_terms(st.c, target.p, lhm_sets, cfg.tau);
  rep.l_lhm = std::accumulate(rep.per_node_lhm.begin(), rep.per_node_lhm.end(),
                              0.0) /
              n;
  rep.l_infonce = loss_infonce(SimilarityMatrix{st.s, SimKind::merged}, cfg.tau);
  rep.l_nc = l_nc;
  rep.l_total = l_nc ? loss_total(*l_nc, rep.l_mha, rep.l_lhm, cfg.lambda)
                     : cfg.lambda * (rep.l_mha + rep.l_lhm);
  rep.retained = std::move(aff.sets);
  return rep;
}

}  // namespace otalign
