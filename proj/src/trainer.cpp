#include "otalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "otalign/rng.hpp"

namespace otalign {

namespace {

constexpr int kProbeIters = 500;
constexpr double kProbeLr = 0.1;
constexpr int kProbeRefitEvery = 25;

int num_classes_of(const std::vector<int>& labels) {
  int c = 0;
  for (int y : labels) c = std::max(c, y + 1);
  return c;
}

Matrix augment_ones(const EmbeddingMatrix& x) {
  Matrix a(x.rows(), x.cols() + 1);
  a.leftCols(x.cols()) = x;
  a.col(x.cols()).setOnes();
  return a;
}

// Row-wise softmax with max shift.
Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    double s = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      p(i, j) = std::exp(logits(i, j) - mx);
      s += p(i, j);
    }
    p.row(i) /= s;
  }
  return p;
}

int argmax_row(const Matrix& m, Eigen::Index i) {
  int best = 0;
  for (Eigen::Index j = 1; j < m.cols(); ++j)
    if (m(i, j) > m(i, best)) best = static_cast<int>(j);
  return best;
}

double accuracy(const Matrix& logits, const std::vector<int>& labels,
                const std::vector<int>& rows) {
  if (rows.empty()) throw ValidationError("accuracy over an empty split");
  int hit = 0;
  for (std::size_t r = 0; r < rows.size(); ++r)
    if (argmax_row(logits, rows[r]) == labels[static_cast<std::size_t>(rows[r])])
      ++hit;
  return static_cast<double>(hit) / static_cast<double>(rows.size());
}

// Rebuilds the bundle's neighborhood sets from the current h_struct.
RaggedEmbeddingSet gather_neighborhoods(
    const EmbeddingMatrix& h_struct, const std::vector<std::vector<int>>& adj) {
  RaggedEmbeddingSet out;
  int n = static_cast<int>(h_struct.rows());
  out.per_node.reserve(n);
  for (int i = 0; i < n; ++i) {
    Matrix m(1 + adj[static_cast<std::size_t>(i)].size(), h_struct.cols());
    m.row(0) = h_struct.row(i);
    for (std::size_t k = 0; k < adj[static_cast<std::size_t>(i)].size(); ++k)
      m.row(static_cast<Eigen::Index>(k + 1)) =
          h_struct.row(adj[static_cast<std::size_t>(i)][k]);
    out.per_node.push_back(std::move(m));
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw ValidationError("steps must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw ValidationError("lr must be >= 0");
  loss.validate();
  for (double f : {train_frac, val_frac, test_frac})
    if (!(f > 0.0)) throw ValidationError("split fractions must be positive");
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-12)
    throw ValidationError("split fractions must sum to 1");
  if (refresh_plan_every < 1)
    throw ValidationError("refresh_plan_every must be >= 1");
}

SplitIndices make_split(int n, double train_frac, double val_frac,
                        double test_frac, std::uint64_t seed) {
  if (n < 1) throw ValidationError("split requires n >= 1");
  for (double f : {train_frac, val_frac, test_frac})
    if (!(f > 0.0)) throw ValidationError("split fractions must be positive");
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-12)
    throw ValidationError("split fractions must sum to 1");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  long long n_train = std::llround(train_frac * n);
  long long n_val = std::llround(val_frac * n);
  n_train = std::min<long long>(n_train, n);
  n_val = std::min<long long>(n_val, n - n_train);
  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  if (s.train.empty()) throw ValidationError("train split is empty");
  if (s.test.empty()) throw ValidationError("test split is empty");
  return s;
}

ProbeResult fit_probe_on(const EmbeddingMatrix& features,
                         const std::vector<int>& labels,
                         const SplitIndices& split) {
  check_embedding_matrix(features, "features");
  if (static_cast<int>(labels.size()) != features.rows())
    throw ValidationError("labels length must match feature rows");
  int c = num_classes_of(labels);
  std::set<int> train_classes;
  for (int r : split.train) train_classes.insert(labels[static_cast<std::size_t>(r)]);
  for (int y = 0; y < c; ++y) {
    bool present = std::find(labels.begin(), labels.end(), y) != labels.end();
    if (present && !train_classes.count(y))
      throw ValidationError("class " + std::to_string(y) +
                            " missing from train split");
  }

  Matrix x_aug = augment_ones(features);
  int nt = static_cast<int>(split.train.size());
  Matrix xt(nt, x_aug.cols());
  Matrix y_onehot = Matrix::Zero(nt, c);
  for (int r = 0; r < nt; ++r) {
    xt.row(r) = x_aug.row(split.train[static_cast<std::size_t>(r)]);
    y_onehot(r, labels[static_cast<std::size_t>(
                   split.train[static_cast<std::size_t>(r)])]) = 1.0;
  }

  Matrix w = Matrix::Zero(x_aug.cols(), c);
  for (int it = 0; it < kProbeIters; ++it) {
    Matrix p = softmax_rows(xt * w);
    Matrix grad = xt.transpose() * (p - y_onehot) / static_cast<double>(nt);
    w -= kProbeLr * grad;
  }

  ProbeResult res;
  res.weights = std::move(w);
  Matrix logits = x_aug * res.weights;
  res.train_acc = accuracy(logits, labels, split.train);
  res.test_acc = accuracy(logits, labels, split.test);
  return res;
}

ProbeResult fit_probe(const EmbeddingMatrix& features,
                      const std::vector<int>& labels, double train_frac,
                      double val_frac, double test_frac, std::uint64_t seed) {
  SplitIndices split = make_split(static_cast<int>(features.rows()),
                                  train_frac, val_frac, test_frac, seed);
  return fit_probe_on(features, labels, split);
}

double probe_loss(const EmbeddingMatrix& features,
                  const std::vector<int>& labels,
                  const std::vector<int>& rows, const Matrix& weights) {
  if (rows.empty()) throw ValidationError("probe loss over an empty split");
  Matrix x_aug = augment_ones(features);
  double acc = 0;
  for (int r : rows) {
    Vector logits = (x_aug.row(r) * weights).transpose();
    double mx = logits.maxCoeff();
    double lse = 0;
    for (Eigen::Index j = 0; j < logits.size(); ++j)
      lse += std::exp(logits(j) - mx);
    lse = mx + std::log(lse);
    acc += lse - logits(labels[static_cast<std::size_t>(r)]);
  }
  return acc / static_cast<double>(rows.size());
}

nlohmann::json TrainTrace::to_json() const {
  nlohmann::json j;
  j["l_total"] = l_total;
  j["l_mha"] = l_mha;
  j["l_lhm"] = l_lhm;
  j["l_nc"] = l_nc;
  j["probe_steps"] = probe_steps;
  j["probe_train_acc"] = probe_train_acc;
  j["probe_test_acc"] = probe_test_acc;
  j["steps"] = static_cast<int>(l_total.size());
  if (!l_total.empty()) {
    j["initial_l_total"] = l_total.front();
    j["final_l_total"] = l_total.back();
  }
  return j;
}

TrainTrace align(const SyntheticTag& tag, const TrainConfig& cfg) {
  cfg.validate();
  tag.graph.validate();
  if (!tag.graph.has_labels())
    throw ValidationError("align requires labeled nodes");
  int n = tag.graph.num_nodes;
  Eigen::Index dim = tag.h_struct.cols();
  std::vector<std::vector<int>> adj = tag.graph.adjacency();

  EmbeddingMatrix h_struct = tag.h_struct;
  EmbeddingMatrix h_text = tag.h_text;
  SplitIndices split = make_split(n, cfg.train_frac, cfg.val_frac,
                                  cfg.test_frac, cfg.seed);

  TrainTrace trace;
  FrozenContext ctx;
  ProbeResult probe;
  bool have_initial_plan = false;

  for (int step = 0; step < cfg.steps; ++step) {
    EmbeddingBundle bundle;
    bundle.h_struct = h_struct;
    bundle.h_text = h_text;
    bundle.neighborhoods = gather_neighborhoods(h_struct, adj);
    bundle.tokens = tag.tokens;

    if (step % cfg.refresh_plan_every == 0) {
      ctx = freeze_context(bundle, cfg.loss);
      if (!have_initial_plan) {
        trace.initial_lhm_plan = lhm_plan_for(bundle, cfg.loss);
        have_initial_plan = true;
      }
    }
    if (step % kProbeRefitEvery == 0) {
      Matrix concat(n, 2 * dim);
      concat.leftCols(dim) = h_struct;
      concat.rightCols(dim) = h_text;
      probe = fit_probe_on(concat, tag.graph.labels, split);
      trace.probe_steps.push_back(step);
      trace.probe_train_acc.push_back(probe.train_acc);
      trace.probe_test_acc.push_back(probe.test_acc);
    }

    Matrix concat(n, 2 * dim);
    concat.leftCols(dim) = h_struct;
    concat.rightCols(dim) = h_text;
    double l_nc = probe_loss(concat, tag.graph.labels, split.train,
                             probe.weights);
    FrozenParts parts = frozen_loss_parts(bundle, ctx);
    double l_tot = loss_total(l_nc, parts.l_mha, parts.l_lhm, cfg.loss.lambda);
    if (!std::isfinite(l_tot))
      throw NumericalError("training diverged at step " +
                           std::to_string(step));
    trace.l_total.push_back(l_tot);
    trace.l_mha.push_back(parts.l_mha);
    trace.l_lhm.push_back(parts.l_lhm);
    trace.l_nc.push_back(l_nc);

    if (cfg.lr == 0.0) continue;

    // Alignment gradient: bundle grads plus neighborhood gathers scattered
    // back onto h_struct rows.
    GradBundle g = grad_losses(bundle, ctx);
    EmbeddingMatrix g_struct = g.h_struct;
    for (int i = 0; i < n; ++i) {
      const Matrix& gm = g.neighborhoods.per_node[static_cast<std::size_t>(i)];
      g_struct.row(i) += gm.row(0);
      for (std::size_t k = 0; k < adj[static_cast<std::size_t>(i)].size(); ++k)
        g_struct.row(adj[static_cast<std::size_t>(i)][k]) +=
            gm.row(static_cast<Eigen::Index>(k + 1));
    }
    EmbeddingMatrix g_text = g.h_text;

    // Probe gradient through frozen weights, train rows only.
    Matrix x_aug = augment_ones(concat);
    int nt = static_cast<int>(split.train.size());
    EmbeddingMatrix g_concat = EmbeddingMatrix::Zero(n, 2 * dim);
    Matrix w_feat = probe.weights.topRows(2 * dim);  // drop the bias row
    for (int r = 0; r < nt; ++r) {
      int row = split.train[static_cast<std::size_t>(r)];
      Vector logits = (x_aug.row(row) * probe.weights).transpose();
      double mx = logits.maxCoeff();
      Vector p = (logits.array() - mx).exp().matrix();
      p /= p.sum();
      p(tag.graph.labels[static_cast<std::size_t>(row)]) -= 1.0;
      g_concat.row(row) = (w_feat * p).transpose() / static_cast<double>(nt);
    }

    h_struct -= cfg.lr * (cfg.loss.lambda * g_struct + g_concat.leftCols(dim));
    h_text -= cfg.lr * (cfg.loss.lambda * g_text + g_concat.rightCols(dim));
    if (!h_struct.allFinite() || !h_text.allFinite())
      throw NumericalError("training diverged at step " +
                           std::to_string(step));
  }

  trace.final_h_struct = h_struct;
  trace.final_h_text = h_text;
  EmbeddingBundle final_bundle;
  final_bundle.h_struct = h_struct;
  final_bundle.h_text = h_text;
  final_bundle.neighborhoods = gather_neighborhoods(h_struct, adj);
  final_bundle.tokens = tag.tokens;
  trace.final_lhm_plan = lhm_plan_for(final_bundle, cfg.loss);
  return trace;
}

double latent_recovery_score(const SyntheticTag& tag, const Matrix& plan) {
  if (tag.planted.deleted_edges.empty())
    throw UndefinedMetricError(
        "no planted deleted edges to score recovery against");
  int n = tag.graph.num_nodes;
  if (plan.rows() != n || plan.cols() != n)
    throw ValidationError("plan shape must match the graph");
  int hits = 0;
  std::vector<double> off;
  for (const auto& [i, j] : tag.planted.deleted_edges) {
    off.clear();
    for (int k = 0; k < n; ++k)
      if (k != i) off.push_back(plan(i, k));
    std::sort(off.begin(), off.end());
    std::size_t m = off.size();
    double median = (m % 2 == 1)
                        ? off[m / 2]
                        : 0.5 * (off[m / 2 - 1] + off[m / 2]);
    if (plan(i, j) > median) ++hits;
  }
  return static_cast<double>(hits) /
         static_cast<double>(tag.planted.deleted_edges.size());
}

}  // namespace otalign
