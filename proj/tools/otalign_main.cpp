// otalign: one binary, eight subcommands.
//
//   metrics    heterophily metric report for a labeled/text-attributed graph
//   sim        RSM / cosine / merged similarity matrices (+ prompt augmentation)
//   ot         entropic transport plans (dense, low-rank, exact variants)
//   loss       alignment losses on an embedding bundle
//   audit      variational-bound audit of the losses on one similarity matrix
//   synth      synthetic heterophilic graph bundles with planted patterns
//   train      gradient-descent alignment of a synthetic bundle
//   gradcheck  finite-difference check of the analytic gradients
//
// Exit codes: 0 success, 1 validation, 2 numerical, 3 I/O. Errors print one
// line "ERROR <code>: <message>" to stderr. All randomness flows from --seed;
// every JSON report embeds the library version, the seed, and the resolved
// parameter set.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "otalign/core.hpp"
#include "otalign/errors.hpp"
#include "otalign/io.hpp"
#include "otalign/losses.hpp"
#include "otalign/metrics.hpp"
#include "otalign/similarity.hpp"
#include "otalign/synth.hpp"
#include "otalign/trainer.hpp"
#include "otalign/transport.hpp"
#include "otalign/version.hpp"

namespace {

using nlohmann::json;
using otalign::Matrix;

std::string pct(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g%%", fraction * 100.0);
  return std::string(buf);
}

const char* bool_str(bool b) { return b ? "true" : "false"; }

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw otalign::IoError("cannot open " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw otalign::ParseError(path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw otalign::IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw otalign::IoError("write failed: " + path);
}

std::string matrix_csv(const Matrix& m) {
  std::string text;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) text += ',';
      text += otalign::format_double(m(i, j));
    }
    text += '\n';
  }
  return text;
}

// "row,col,mass" triplets for entries strictly above the floor.
std::string plan_triplets(const Matrix& m, double mass_floor) {
  std::string text;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) > mass_floor) {
        text += std::to_string(i) + ',' + std::to_string(j) + ',' +
                otalign::format_double(m(i, j)) + '\n';
      }
    }
  }
  return text;
}

double plan_entropy(const Matrix& q) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index j = 0; j < q.cols(); ++j)
      if (q(i, j) > 0.0) h -= q(i, j) * (std::log(q(i, j)) - 1.0);
  return h;
}

// Self row first, then sorted 1-hop rows; mirrors the synthetic generator.
otalign::RaggedEmbeddingSet build_neighborhoods(const otalign::Graph& g,
                                                const Matrix& h_struct) {
  otalign::RaggedEmbeddingSet out;
  const auto adj = g.adjacency();
  out.per_node.reserve(static_cast<std::size_t>(g.num_nodes));
  for (int i = 0; i < g.num_nodes; ++i) {
    const auto& nbrs = adj[static_cast<std::size_t>(i)];
    Matrix m(1 + static_cast<Eigen::Index>(nbrs.size()), h_struct.cols());
    m.row(0) = h_struct.row(i);
    for (std::size_t k = 0; k < nbrs.size(); ++k)
      m.row(static_cast<Eigen::Index>(k) + 1) = h_struct.row(nbrs[k]);
    out.per_node.push_back(std::move(m));
  }
  return out;
}

struct BundlePaths {
  std::string h_struct, h_text, neigh, tokens;
};

void add_bundle_options(CLI::App* sub, BundlePaths& p) {
  sub->add_option("--struct", p.h_struct, "Structural embedding CSV (N x d)")
      ->required();
  sub->add_option("--text", p.h_text, "Textual embedding CSV (N x d)")
      ->required();
  sub->add_option("--neigh", p.neigh,
                  "Neighborhood embedding JSONL (one vector set per node)")
      ->required();
  sub->add_option("--tokens", p.tokens,
                  "Token embedding JSONL (one vector set per node)")
      ->required();
}

otalign::EmbeddingBundle load_bundle(const BundlePaths& p) {
  otalign::EmbeddingBundle b;
  b.h_struct = otalign::load_matrix(p.h_struct);
  const int n = static_cast<int>(b.h_struct.rows());
  b.h_text = otalign::load_matrix(p.h_text, n);
  b.neighborhoods = otalign::load_ragged(p.neigh);
  b.tokens = otalign::load_ragged(p.tokens);
  b.validate();
  return b;
}

void add_loss_options(CLI::App* sub, otalign::LossConfig& cfg,
                      bool with_neg_count) {
  sub->add_option("--tau", cfg.tau, "Contrastive softmax temperature");
  if (with_neg_count) {
    sub->add_option("--neg-count", cfg.neg_count,
                    "Retained negatives per anchor (0 = min(N, 256))");
  }
  sub->add_option("--lambda", cfg.lambda,
                  "Weight of the alignment losses in the total");
  sub->add_option("--alpha", cfg.alpha,
                  "Merge weight on the normalized RSM similarity");
  sub->add_option("--beta", cfg.beta, "RSM smoothing temperature");
  sub->add_option("--epsilon", cfg.epsilon, "Transport entropy weight");
  sub->add_option("--percentile", cfg.percentile,
                  "Prompt percentile for the augmented similarity");
  sub->add_option("--ot-iters", cfg.ot_max_iters, "Sinkhorn iteration cap");
  sub->add_option("--ot-tol", cfg.ot_tol, "Sinkhorn marginal L1 tolerance");
}

json loss_params_json(const otalign::LossConfig& cfg, int n) {
  return json{{"tau", cfg.tau},
              {"neg_count", cfg.neg_count},
              {"neg_count_resolved", cfg.resolved_neg_count(n)},
              {"lambda", cfg.lambda},
              {"alpha", cfg.alpha},
              {"beta", cfg.beta},
              {"epsilon", cfg.epsilon},
              {"percentile", cfg.percentile},
              {"ot_max_iters", cfg.ot_max_iters},
              {"ot_tol", cfg.ot_tol}};
}

// ---------------------------------------------------------------------------
// metrics

struct MetricsOpts {
  std::string edges, labels, tokens, sentences, out;
  int num_nodes = 0;  // 0 = infer from labels/edges
  otalign::MetricsOptions mo;
  std::uint64_t seed = 0;
};

void print_metric(const char* name, const otalign::MetricValue& v) {
  if (v.value) {
    std::cout << name << " = " << otalign::format_double(*v.value) << " ("
              << pct(*v.value) << ")\n";
  } else {
    std::cout << name << ": undefined (" << v.reason << ")\n";
  }
}

void run_metrics(const MetricsOpts& o) {
  std::vector<int> labels;
  if (!o.labels.empty()) labels = otalign::load_labels(o.labels);

  std::optional<int> n_hint;
  if (o.num_nodes > 0) n_hint = o.num_nodes;
  else if (!labels.empty()) n_hint = static_cast<int>(labels.size());

  otalign::Graph g = otalign::load_graph(o.edges, n_hint);
  if (!labels.empty()) g = otalign::Graph::make(g.num_nodes, g.edges, labels);

  otalign::RaggedEmbeddingSet tokens;
  const otalign::RaggedEmbeddingSet* tokens_ptr = nullptr;
  if (!o.tokens.empty()) {
    tokens = otalign::load_ragged(o.tokens);
    if (tokens.size() != g.num_nodes) {
      throw otalign::ValidationError(
          "tokens: expected " + std::to_string(g.num_nodes) +
          " entries, got " + std::to_string(tokens.size()));
    }
    tokens_ptr = &tokens;
  }

  Matrix sentences;
  const Matrix* sentences_ptr = nullptr;
  if (!o.sentences.empty()) {
    sentences = otalign::load_matrix(o.sentences, g.num_nodes);
    sentences_ptr = &sentences;
  }

  otalign::MetricsOptions mo = o.mo;
  mo.seed = o.seed;
  mo.validate();

  const otalign::MetricReport rep =
      otalign::metric_report(g, tokens_ptr, sentences_ptr, mo);

  print_metric("h_n", rep.h_n);
  print_metric("h_e", rep.h_e);
  print_metric("r_nys", rep.r_nys);
  print_metric("r_nyd", rep.r_nyd);
  print_metric("r_nym", rep.r_nym);
  print_metric("r_unys", rep.r_unys);
  print_metric("r_ueys", rep.r_ueys);
  print_metric("r_nwd", rep.r_nwd);
  print_metric("r_ntd", rep.r_ntd);
  print_metric("r_uts", rep.r_uts);
  std::cout << "degree_zero_excluded = " << rep.degree_zero_excluded << "\n";
  std::cout << "sampled = " << bool_str(rep.sampled) << "\n";
  if (rep.sampled)
    std::cout << "pair_sample_size = " << rep.pair_sample_size << "\n";

  if (!o.out.empty()) {
    otalign::Report r;
    r.seed = o.seed;
    r.params = json{{"edges", o.edges},
                    {"labels", o.labels},
                    {"tokens", o.tokens},
                    {"sentences", o.sentences},
                    {"num_nodes", g.num_nodes},
                    {"uts_threshold", mo.uts_threshold},
                    {"pair_exact_threshold", mo.pair_exact_threshold},
                    {"sample_size", mo.sample_size}};
    r.results = rep.to_json();
    otalign::save_report(r, o.out);
  }
}

void register_metrics(CLI::App& app) {
  auto o = std::make_shared<MetricsOpts>();
  CLI::App* sub = app.add_subcommand(
      "metrics", "Heterophily metric report for a graph with optional "
                 "labels, token sets, and sentence embeddings");
  sub->add_option("--edges", o->edges, "Edge list TSV (one 'a<TAB>b' per line)")
      ->required();
  sub->add_option("--labels", o->labels, "Node label CSV ('node,label')");
  sub->add_option("--tokens", o->tokens, "Token embedding JSONL");
  sub->add_option("--sentences", o->sentences, "Sentence embedding CSV (N x d)");
  sub->add_option("--num-nodes", o->num_nodes,
                  "Node count override (0 = infer from labels/edges)");
  sub->add_option("--uts-threshold", o->mo.uts_threshold,
                  "Cosine threshold for the unconnected-text-similarity rate");
  sub->add_option("--pair-exact-threshold", o->mo.pair_exact_threshold,
                  "Exact non-edge enumeration up to this node count");
  sub->add_option("--sample-size", o->mo.sample_size,
                  "Non-edge pairs sampled beyond the exact threshold");
  sub->add_option("--seed", o->seed, "Seed for non-edge pair sampling");
  sub->add_option("--out", o->out, "Write the JSON metric report here");
  sub->callback([o] { run_metrics(*o); });
}

// ---------------------------------------------------------------------------
// sim

struct SimOpts {
  std::string neigh, tokens, h_struct, h_text, out;
  double alpha = 0.5, beta = 0.5;
  bool augment = false;
  double percentile = 0.10;
  std::optional<double> prompt_value;
  std::uint64_t seed = 0;
};

void run_sim(const SimOpts& o) {
  const bool rsm_pair = !o.neigh.empty() || !o.tokens.empty();
  const bool cos_pair = !o.h_struct.empty() || !o.h_text.empty();
  if (!o.neigh.empty() != !o.tokens.empty())
    throw otalign::ValidationError("sim: --neigh and --tokens go together");
  if (!o.h_struct.empty() != !o.h_text.empty())
    throw otalign::ValidationError("sim: --struct and --text go together");
  if (!rsm_pair && !cos_pair) {
    throw otalign::ValidationError(
        "sim: provide --neigh/--tokens (RSM), --struct/--text (cosine), or "
        "all four (merged)");
  }

  otalign::SimilarityMatrix s;
  std::string kind;
  if (rsm_pair && cos_pair) {
    const auto neigh = otalign::load_ragged(o.neigh);
    const auto tokens = otalign::load_ragged(o.tokens);
    const Matrix hs = otalign::load_matrix(o.h_struct);
    const Matrix ht =
        otalign::load_matrix(o.h_text, static_cast<int>(hs.rows()));
    const auto r = otalign::pairwise_rsm_similarity(neigh, tokens, o.beta);
    const auto c = otalign::global_cosine(hs, ht);
    s = otalign::merge(r, c, o.alpha);
    kind = "merged";
  } else if (rsm_pair) {
    const auto neigh = otalign::load_ragged(o.neigh);
    const auto tokens = otalign::load_ragged(o.tokens);
    s = otalign::pairwise_rsm_similarity(neigh, tokens, o.beta);
    kind = "rsm";
  } else {
    const Matrix hs = otalign::load_matrix(o.h_struct);
    const Matrix ht =
        otalign::load_matrix(o.h_text, static_cast<int>(hs.rows()));
    s = otalign::global_cosine(hs, ht);
    kind = "cosine";
  }

  json params{{"kind", kind},
              {"alpha", o.alpha},
              {"beta", o.beta},
              {"augment", o.augment},
              {"neigh", o.neigh},
              {"tokens", o.tokens},
              {"struct", o.h_struct},
              {"text", o.h_text}};
  json results{{"n", s.n()}, {"kind", kind}};

  Matrix out_matrix;
  if (o.augment) {
    otalign::PromptSpec prompt =
        o.prompt_value ? otalign::PromptSpec::from_explicit(*o.prompt_value)
                       : otalign::PromptSpec::from_percentile(o.percentile);
    const auto aug = otalign::augment_with_prompt(s, prompt);
    out_matrix = aug.values;
    params["percentile"] =
        o.prompt_value ? json() : json(o.percentile);
    params["prompt_value_explicit"] =
        o.prompt_value ? json(*o.prompt_value) : json();
    results["prompt_value"] = aug.prompt_value;
    results["rows"] = s.n() + 1;
  } else {
    out_matrix = s.values;
    results["rows"] = s.n();
  }

  otalign::save_matrix(out_matrix, o.out);

  otalign::Report r;
  r.seed = o.seed;
  r.params = params;
  r.results = results;
  otalign::save_report(r, o.out + ".json");

  std::cout << "wrote " << o.out << " (" << out_matrix.rows() << " x "
            << out_matrix.cols() << ", kind=" << kind << ")\n";
}

void register_sim(CLI::App& app) {
  auto o = std::make_shared<SimOpts>();
  CLI::App* sub = app.add_subcommand(
      "sim", "Build a similarity matrix: RSM from --neigh/--tokens, cosine "
             "from --struct/--text, merged from all four; optional prompt "
             "augmentation. Writes the matrix CSV plus a '.json' sidecar.");
  sub->add_option("--neigh", o->neigh, "Neighborhood embedding JSONL");
  sub->add_option("--tokens", o->tokens, "Token embedding JSONL");
  sub->add_option("--struct", o->h_struct, "Structural embedding CSV");
  sub->add_option("--text", o->h_text, "Textual embedding CSV");
  sub->add_option("--alpha", o->alpha,
                  "Merge weight on the normalized RSM similarity");
  sub->add_option("--beta", o->beta, "RSM smoothing temperature");
  sub->add_flag("--augment", o->augment,
                "Append the prompt row/column (output is (N+1) x (N+1))");
  sub->add_option("--percentile", o->percentile,
                  "Prompt percentile over the matrix entries");
  sub->add_option("--prompt-value", o->prompt_value,
                  "Explicit prompt value (overrides --percentile)");
  sub->add_option("--seed", o->seed, "Seed recorded in the sidecar report");
  sub->add_option("--out", o->out, "Output matrix CSV path")->required();
  sub->callback([o] { run_sim(*o); });
}

// ---------------------------------------------------------------------------
// ot

struct OtOpts {
  std::string matrix, method = "auto", out_plan, out_report;
  double epsilon = 0.05, tol = 1e-6, mass_floor = 1e-9;
  int iters = 30, rank = 0, crop = 0;
  bool sparse = false;
  std::uint64_t seed = 0;
};

void run_ot(const OtOpts& o) {
  const Matrix sbar = otalign::load_matrix(o.matrix);
  if (sbar.rows() != sbar.cols()) {
    throw otalign::ValidationError(
        "ot: --matrix must be square, got " + std::to_string(sbar.rows()) +
        " x " + std::to_string(sbar.cols()));
  }
  const int n = static_cast<int>(sbar.rows());

  std::string method = o.method;
  if (method == "auto") method = (o.rank > 0) ? "lowrank" : "dense";

  Matrix plan;
  json results;
  int rank_resolved = 0;

  if (method == "dense") {
    otalign::TransportProblem p;
    p.sbar = sbar;
    p.epsilon = o.epsilon;
    p.max_iters = o.iters;
    p.tol = o.tol;
    const auto sol = otalign::sinkhorn_dense(p);
    plan = sol.plan();
    results = json{{"iterations_run", sol.iterations_run},
                   {"marginal_error", sol.marginal_error},
                   {"converged", sol.converged},
                   {"factored", false}};
  } else if (method == "lowrank" || method == "exact-factor") {
    rank_resolved = o.rank > 0 ? o.rank : (method == "lowrank" ? std::min(n, 256) : n);
    const auto fm = method == "lowrank"
                        ? otalign::FactorizeMethod::nystrom
                        : otalign::FactorizeMethod::exact_when_full_rank;
    const auto factors =
        otalign::factorize_kernel(sbar, o.epsilon, rank_resolved, fm, o.seed);
    const auto sol = otalign::sinkhorn_lowrank(
        factors, otalign::uniform_marginals(n), otalign::uniform_marginals(n),
        o.iters, o.tol);
    plan = sol.plan();
    results = json{{"iterations_run", sol.iterations_run},
                   {"marginal_error", sol.marginal_error},
                   {"converged", sol.converged},
                   {"factored", true},
                   {"factor_rank", factors.rank()},
                   {"rel_frobenius_error", factors.rel_frobenius_error}};
  } else {  // bruteforce
    const auto exact = otalign::exact_ot_bruteforce(sbar);
    plan = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i)
      plan(i, exact.permutation[static_cast<std::size_t>(i)]) = 1.0 / n;
    results = json{{"objective", exact.objective},
                   {"permutation", exact.permutation},
                   {"factored", false}};
  }

  if (o.crop > 0) {
    if (o.crop > static_cast<int>(plan.rows())) {
      throw otalign::ValidationError(
          "ot: --crop exceeds the plan size " +
          std::to_string(plan.rows()));
    }
    plan = plan.topLeftCorner(o.crop, o.crop).eval();
  }

  if (method != "bruteforce") {
    const Matrix payoff_block =
        o.crop > 0 ? Matrix(sbar.topLeftCorner(o.crop, o.crop)) : sbar;
    const double cost = (plan.array() * payoff_block.array()).sum();
    results["transport_cost"] = cost;
    results["objective"] = cost + o.epsilon * plan_entropy(plan);
  }

  const std::string text =
      o.sparse ? plan_triplets(plan, o.mass_floor) : matrix_csv(plan);
  if (o.out_plan.empty()) {
    std::cout << text;
  } else {
    write_text_file(o.out_plan, text);
  }

  if (!o.out_report.empty()) {
    otalign::Report r;
    r.seed = o.seed;
    r.params = json{{"matrix", o.matrix},
                    {"n", n},
                    {"epsilon", o.epsilon},
                    {"iters", o.iters},
                    {"tol", o.tol},
                    {"method", o.method},
                    {"method_resolved", method},
                    {"rank", o.rank},
                    {"rank_resolved", rank_resolved},
                    {"crop", o.crop},
                    {"sparse", o.sparse},
                    {"mass_floor", o.mass_floor}};
    r.results = results;
    otalign::save_report(r, o.out_report);
  }
}

void register_ot(CLI::App& app) {
  auto o = std::make_shared<OtOpts>();
  CLI::App* sub = app.add_subcommand(
      "ot", "Solve entropic transport on a square payoff matrix with uniform "
            "marginals; prints the plan CSV to stdout unless --out-plan is "
            "given");
  sub->add_option("--matrix", o->matrix, "Square payoff matrix CSV")
      ->required();
  sub->add_option("--epsilon", o->epsilon, "Entropy weight");
  sub->add_option("--iters", o->iters, "Sinkhorn iteration cap");
  sub->add_option("--tol", o->tol, "Marginal L1 tolerance");
  sub->add_option("--rank", o->rank,
                  "Low-rank factor count (0 = dense; with --method lowrank, "
                  "0 resolves to min(N, 256))");
  sub->add_option("--method", o->method,
                  "auto | dense | lowrank | exact-factor | bruteforce")
      ->check(CLI::IsMember(
          {"auto", "dense", "lowrank", "exact-factor", "bruteforce"}));
  sub->add_option("--crop", o->crop,
                  "Keep only the top-left k x k block of the plan (0 = full)");
  sub->add_flag("--sparse", o->sparse,
                "Emit 'row,col,mass' triplets instead of a dense CSV");
  sub->add_option("--mass-floor", o->mass_floor,
                  "Smallest mass kept in --sparse output");
  sub->add_option("--seed", o->seed, "Seed for low-rank landmark sampling");
  sub->add_option("--out-plan", o->out_plan,
                  "Write the plan here instead of stdout");
  sub->add_option("--out-report", o->out_report,
                  "Write a JSON convergence report here");
  sub->callback([o] { run_ot(*o); });
}

// ---------------------------------------------------------------------------
// loss

struct LossOpts {
  BundlePaths paths;
  otalign::LossConfig cfg;
  std::optional<double> l_nc;
  bool dump_negatives = false;
  std::string out;
  std::uint64_t seed = 0;
};

void run_loss(const LossOpts& o) {
  const auto b = load_bundle(o.paths);
  o.cfg.validate();
  const auto rep = otalign::evaluate_losses(b, o.cfg, o.l_nc);

  std::cout << "l_mha = " << otalign::format_double(rep.l_mha) << "\n";
  std::cout << "l_lhm = " << otalign::format_double(rep.l_lhm) << "\n";
  std::cout << "l_infonce = " << otalign::format_double(rep.l_infonce) << "\n";
  if (rep.l_nc)
    std::cout << "l_nc = " << otalign::format_double(*rep.l_nc) << "\n";
  std::cout << "l_total = " << otalign::format_double(rep.l_total) << "\n";

  if (!o.out.empty()) {
    otalign::Report r;
    r.seed = o.seed;
    r.params = loss_params_json(o.cfg, b.n());
    r.params["struct"] = o.paths.h_struct;
    r.params["text"] = o.paths.h_text;
    r.params["neigh"] = o.paths.neigh;
    r.params["tokens"] = o.paths.tokens;
    r.params["l_nc"] = o.l_nc ? json(*o.l_nc) : json();
    r.params["dump_negatives"] = o.dump_negatives;
    r.results = rep.to_json(o.dump_negatives);
    otalign::save_report(r, o.out);
  }
}

void register_loss(CLI::App& app) {
  auto o = std::make_shared<LossOpts>();
  CLI::App* sub = app.add_subcommand(
      "loss", "Evaluate the alignment losses (MHA, LHM, InfoNCE) on an "
              "embedding bundle");
  add_bundle_options(sub, o->paths);
  add_loss_options(sub, o->cfg, /*with_neg_count=*/true);
  sub->add_option("--l-nc", o->l_nc,
                  "Externally supplied node-classification loss; when given, "
                  "l_total = l_nc + lambda * (l_mha + l_lhm)");
  sub->add_flag("--dump-negatives", o->dump_negatives,
                "Include the retained negative sets in the report");
  sub->add_option("--seed", o->seed, "Seed recorded in the report");
  sub->add_option("--out", o->out, "Write the JSON loss report here");
  sub->callback([o] { run_loss(*o); });
}

// ---------------------------------------------------------------------------
// audit

struct AuditOpts {
  std::string matrix;
  BundlePaths paths;
  otalign::LossConfig cfg;
  std::string out;
  std::uint64_t seed = 0;
  bool have_bundle = false;
};

void print_audit(const otalign::AuditResult& a) {
  std::cout << "l_mha = " << otalign::format_double(a.l_mha) << "\n";
  std::cout << "l_lhm = " << otalign::format_double(a.l_lhm) << "\n";
  std::cout << "l_infonce = " << otalign::format_double(a.l_infonce) << "\n";
  std::cout << "mha_bound_holds = " << bool_str(a.mha_bound_holds) << "\n";
  std::cout << "lhm_bound_holds = " << bool_str(a.lhm_bound_holds) << "\n";
  std::cout << "nonneg_similarity = " << bool_str(a.nonneg_similarity) << "\n";
  std::cout << "diag_dominant = " << bool_str(a.diag_dominant) << "\n";
}

void run_audit(AuditOpts& o) {
  const bool have_matrix = !o.matrix.empty();
  o.have_bundle = !o.paths.h_struct.empty() || !o.paths.h_text.empty() ||
                  !o.paths.neigh.empty() || !o.paths.tokens.empty();
  if (have_matrix == o.have_bundle) {
    throw otalign::ValidationError(
        "audit: provide either --matrix or the full bundle "
        "(--struct/--text/--neigh/--tokens), not both");
  }

  otalign::AuditResult a;
  int n = 0;
  if (have_matrix) {
    const Matrix s = otalign::load_matrix(o.matrix);
    if (s.rows() != s.cols())
      throw otalign::ValidationError("audit: --matrix must be square");
    n = static_cast<int>(s.rows());
    otalign::LossConfig cfg = o.cfg;
    cfg.neg_count = n;  // the bounds are stated for full negative sets
    cfg.validate();
    a = otalign::proposition_audit(s, cfg);
  } else {
    if (o.paths.h_struct.empty() || o.paths.h_text.empty() ||
        o.paths.neigh.empty() || o.paths.tokens.empty()) {
      throw otalign::ValidationError(
          "audit: bundle mode needs all of --struct/--text/--neigh/--tokens");
    }
    const auto b = load_bundle(o.paths);
    n = b.n();
    otalign::LossConfig cfg = o.cfg;
    cfg.neg_count = n;
    cfg.validate();
    a = otalign::proposition_audit(b, cfg);
  }

  print_audit(a);

  if (!o.out.empty()) {
    otalign::Report r;
    r.seed = o.seed;
    r.params = loss_params_json(o.cfg, n);
    r.params["neg_count"] = n;  // forced to N by the audit
    r.params["neg_count_resolved"] = n;
    r.params["matrix"] = o.matrix;
    r.params["struct"] = o.paths.h_struct;
    r.params["text"] = o.paths.h_text;
    r.params["neigh"] = o.paths.neigh;
    r.params["tokens"] = o.paths.tokens;
    r.results = a.to_json();
    otalign::save_report(r, o.out);
  }
}

void register_audit(CLI::App& app) {
  auto o = std::make_shared<AuditOpts>();
  CLI::App* sub = app.add_subcommand(
      "audit", "Check the variational bounds (MHA/LHM vs InfoNCE) and their "
               "assumptions on a similarity matrix or an embedding bundle; "
               "neg-count is forced to N");
  sub->add_option("--matrix", o->matrix,
                  "Square similarity matrix CSV (single-matrix mode)");
  sub->add_option("--struct", o->paths.h_struct,
                  "Structural embedding CSV (bundle mode)");
  sub->add_option("--text", o->paths.h_text,
                  "Textual embedding CSV (bundle mode)");
  sub->add_option("--neigh", o->paths.neigh,
                  "Neighborhood embedding JSONL (bundle mode)");
  sub->add_option("--tokens", o->paths.tokens,
                  "Token embedding JSONL (bundle mode)");
  add_loss_options(sub, o->cfg, /*with_neg_count=*/false);
  sub->add_option("--seed", o->seed, "Seed recorded in the report");
  sub->add_option("--out", o->out, "Write the JSON audit report here");
  sub->callback([o] { run_audit(*o); });
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
  otalign::SynthConfig cfg;
  std::string out_dir;
  long long perturb_edges = 0;
  double perturb_node_frac = 0.0, perturb_word_frac = 0.0;
  std::uint64_t perturb_seed = 0;
};

void run_synth(const SynthOpts& o) {
  o.cfg.validate();
  otalign::SyntheticTag tag = otalign::generate(o.cfg);

  const bool edge_perturb = o.perturb_edges != 0;
  const bool token_perturb =
      o.perturb_node_frac != 0.0 && o.perturb_word_frac != 0.0;
  if (edge_perturb) {
    tag.graph = otalign::perturb_edges(tag.graph, o.perturb_edges, o.perturb_seed);
    // Neighborhood sets follow the edited graph; embeddings stay as drawn.
    tag.neighborhoods = build_neighborhoods(tag.graph, tag.h_struct);
  }
  if (token_perturb) {
    tag.tokens = otalign::perturb_tokens(tag.tokens, o.perturb_node_frac,
                                         o.perturb_word_frac, o.perturb_seed);
  }

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(o.out_dir, ec);
  if (ec) {
    throw otalign::IoError("cannot create directory " + o.out_dir + ": " +
                           ec.message());
  }
  const auto p = [&](const char* name) {
    return (fs::path(o.out_dir) / name).string();
  };

  otalign::save_graph(tag.graph, p("edges.tsv"));
  otalign::save_labels(tag.graph.labels, p("labels.csv"));
  otalign::save_matrix(tag.h_struct, p("struct.csv"));
  otalign::save_matrix(tag.h_text, p("text.csv"));
  otalign::save_ragged(tag.neighborhoods, p("neigh.jsonl"));
  otalign::save_ragged(tag.tokens, p("tokens.jsonl"));
  write_text_file(p("planted.json"), tag.planted.to_json().dump(2) + "\n");

  otalign::Report r;
  r.seed = o.cfg.seed;
  r.params = o.cfg.to_json();
  r.params["perturb_edges"] = o.perturb_edges;
  r.params["perturb_node_frac"] = o.perturb_node_frac;
  r.params["perturb_word_frac"] = o.perturb_word_frac;
  r.params["perturb_seed"] = o.perturb_seed;
  r.results = json{
      {"num_nodes", tag.graph.num_nodes},
      {"num_edges", tag.graph.num_edges()},
      {"deleted_edges", tag.planted.deleted_edges.size()},
      {"noise_nodes", tag.planted.noise_nodes.size()}};
  otalign::save_report(r, p("config.json"));

  std::cout << "generated " << tag.graph.num_nodes << " nodes, "
            << tag.graph.num_edges() << " edges, "
            << tag.planted.deleted_edges.size() << " deleted edges, "
            << tag.planted.noise_nodes.size() << " noise nodes\n";
  if (edge_perturb)
    std::cout << "perturbed edges by " << o.perturb_edges << "\n";
  if (token_perturb) {
    std::cout << "perturbed tokens (node_frac=" << o.perturb_node_frac
              << ", word_frac=" << o.perturb_word_frac << ")\n";
  }
  std::cout << "wrote " << o.out_dir << "\n";
}

void register_synth(CLI::App& app) {
  auto o = std::make_shared<SynthOpts>();
  CLI::App* sub = app.add_subcommand(
      "synth", "Generate a synthetic heterophilic graph bundle (edges.tsv, "
               "labels.csv, struct.csv, text.csv, neigh.jsonl, tokens.jsonl, "
               "planted.json, config.json)");
  sub->add_option("--nodes", o->cfg.num_nodes, "Node count");
  sub->add_option("--classes", o->cfg.num_classes, "Class count");
  sub->add_option("--dim", o->cfg.dim, "Embedding dimension");
  sub->add_option("--intra", o->cfg.intra_edge_prob,
                  "Same-class edge probability");
  sub->add_option("--inter", o->cfg.inter_edge_prob,
                  "Cross-class edge probability");
  sub->add_option("--partial-mix", o->cfg.partial_mix,
                  "Probability a token is drawn from a foreign class");
  sub->add_option("--noise-frac", o->cfg.complete_noise_frac,
                  "Fraction of nodes whose text is replaced by noise");
  sub->add_option("--latent-drop", o->cfg.latent_drop_frac,
                  "Fraction of same-class edges deleted (planted latent "
                  "heterophily)");
  sub->add_option("--sigma", o->cfg.noise_sigma, "Embedding noise scale");
  sub->add_option("--seed", o->cfg.seed, "Generator seed");
  sub->add_option("--perturb-edges", o->perturb_edges,
                  "After generation: add (>0) or remove (<0) this many edges");
  sub->add_option("--perturb-node-frac", o->perturb_node_frac,
                  "After generation: fraction of nodes whose token sets are "
                  "edited (needs --perturb-word-frac)");
  sub->add_option("--perturb-word-frac", o->perturb_word_frac,
                  "Per-node token edit fraction: >0 appends noise vectors, "
                  "<0 removes vectors");
  sub->add_option("--perturb-seed", o->perturb_seed, "Perturbation seed");
  sub->add_option("--out-dir", o->out_dir, "Bundle output directory")
      ->required();
  sub->callback([o] { run_synth(*o); });
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string dir, out_dir;
  otalign::TrainConfig cfg;
};

otalign::SyntheticTag load_tag(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto p = [&](const char* name) {
    return (fs::path(dir) / name).string();
  };

  const std::vector<int> labels = otalign::load_labels(p("labels.csv"));
  const int n = static_cast<int>(labels.size());
  otalign::Graph g = otalign::load_graph(p("edges.tsv"), n);
  g = otalign::Graph::make(n, g.edges, labels);

  otalign::SyntheticTag tag;
  tag.graph = g;
  tag.h_struct = otalign::load_matrix(p("struct.csv"), n);
  tag.h_text = otalign::load_matrix(p("text.csv"), n);
  tag.tokens = otalign::load_ragged(p("tokens.jsonl"));
  if (tag.tokens.size() != n) {
    throw otalign::ValidationError(
        "tokens.jsonl: expected " + std::to_string(n) + " entries, got " +
        std::to_string(tag.tokens.size()));
  }
  if (fs::exists(p("neigh.jsonl"))) {
    tag.neighborhoods = otalign::load_ragged(p("neigh.jsonl"));
  } else {
    tag.neighborhoods = build_neighborhoods(tag.graph, tag.h_struct);
  }
  if (fs::exists(p("planted.json"))) {
    tag.planted =
        otalign::PlantedRecord::from_json(load_json_file(p("planted.json")));
  }
  return tag;
}

void run_train(const TrainOpts& o) {
  o.cfg.validate();
  const otalign::SyntheticTag tag = load_tag(o.dir);
  const otalign::TrainTrace trace = otalign::align(tag, o.cfg);

  std::optional<double> rec_initial, rec_final;
  std::string rec_reason;
  if (tag.planted.deleted_edges.empty()) {
    rec_reason = "no planted deleted edges";
  } else {
    rec_initial = otalign::latent_recovery_score(tag, trace.initial_lhm_plan);
    rec_final = otalign::latent_recovery_score(tag, trace.final_lhm_plan);
  }

  std::cout << "steps = " << o.cfg.steps << "\n";
  const auto span = [](const std::vector<double>& v) {
    return v.empty() ? std::string("n/a")
                     : otalign::format_double(v.front()) + " -> " +
                           otalign::format_double(v.back());
  };
  std::cout << "l_total: " << span(trace.l_total) << "\n";
  std::cout << "l_mha: " << span(trace.l_mha) << "\n";
  std::cout << "l_lhm: " << span(trace.l_lhm) << "\n";
  std::cout << "l_nc: " << span(trace.l_nc) << "\n";
  std::cout << "probe_test_acc: " << span(trace.probe_test_acc) << "\n";
  if (rec_initial) {
    std::cout << "latent_recovery: " << otalign::format_double(*rec_initial)
              << " -> " << otalign::format_double(*rec_final) << "\n";
  } else {
    std::cout << "latent_recovery: undefined (" << rec_reason << ")\n";
  }

  if (!o.out_dir.empty()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(o.out_dir, ec);
    if (ec) {
      throw otalign::IoError("cannot create directory " + o.out_dir + ": " +
                             ec.message());
    }
    const auto p = [&](const char* name) {
      return (fs::path(o.out_dir) / name).string();
    };

    otalign::Report r;
    r.seed = o.cfg.seed;
    r.params = loss_params_json(o.cfg.loss, tag.graph.num_nodes);
    r.params["dir"] = o.dir;
    r.params["steps"] = o.cfg.steps;
    r.params["lr"] = o.cfg.lr;
    r.params["train_frac"] = o.cfg.train_frac;
    r.params["val_frac"] = o.cfg.val_frac;
    r.params["test_frac"] = o.cfg.test_frac;
    r.params["refresh_plan_every"] = o.cfg.refresh_plan_every;
    r.results = trace.to_json();
    r.results["recovery_initial"] = rec_initial ? json(*rec_initial) : json();
    r.results["recovery_final"] = rec_final ? json(*rec_final) : json();
    if (!rec_initial) r.results["recovery_absent_reason"] = rec_reason;
    otalign::save_report(r, p("trace.json"));
    otalign::save_matrix(trace.final_h_struct, p("final_struct.csv"));
    otalign::save_matrix(trace.final_h_text, p("final_text.csv"));
    std::cout << "wrote " << o.out_dir << "\n";
  }
}

void register_train(CLI::App& app) {
  auto o = std::make_shared<TrainOpts>();
  CLI::App* sub = app.add_subcommand(
      "train", "Run the alignment loop on a synthetic bundle directory and "
               "report loss curves, probe accuracy, and latent recovery");
  sub->add_option("--dir", o->dir, "Bundle directory written by 'synth'")
      ->required();
  sub->add_option("--steps", o->cfg.steps, "Gradient steps");
  sub->add_option("--lr", o->cfg.lr, "Learning rate");
  add_loss_options(sub, o->cfg.loss, /*with_neg_count=*/true);
  sub->add_option("--train-frac", o->cfg.train_frac, "Probe train fraction");
  sub->add_option("--val-frac", o->cfg.val_frac, "Probe validation fraction");
  sub->add_option("--test-frac", o->cfg.test_frac, "Probe test fraction");
  sub->add_option("--refresh-every", o->cfg.refresh_plan_every,
                  "Steps between transport plan refreshes");
  sub->add_option("--seed", o->cfg.seed, "Split/refresh seed");
  sub->add_option("--out-dir", o->out_dir,
                  "Write trace.json and final embeddings here");
  sub->callback([o] { run_train(*o); });
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOpts {
  BundlePaths paths;
  otalign::LossConfig cfg;
  double h = 1e-5;
  std::uint64_t seed = 0;
  std::string out;
};

void run_gradcheck(const GradcheckOpts& o) {
  const auto b = load_bundle(o.paths);
  o.cfg.validate();
  const auto rep = otalign::finite_difference_check(b, o.cfg, o.h, o.seed);

  std::cout << "coordinates_checked = " << rep.coordinates_checked << "\n";
  std::cout << "max_rel_error = " << otalign::format_double(rep.max_rel_error)
            << "\n";
  std::cout << "worst_coordinate = " << rep.worst_coordinate << "\n";
  std::cout << "cancellation_warning = " << bool_str(rep.cancellation_warning)
            << "\n";

  if (!o.out.empty()) {
    otalign::Report r;
    r.seed = o.seed;
    r.params = loss_params_json(o.cfg, b.n());
    r.params["struct"] = o.paths.h_struct;
    r.params["text"] = o.paths.h_text;
    r.params["neigh"] = o.paths.neigh;
    r.params["tokens"] = o.paths.tokens;
    r.params["h"] = o.h;
    r.results = rep.to_json();
    otalign::save_report(r, o.out);
  }
}

void register_gradcheck(CLI::App& app) {
  auto o = std::make_shared<GradcheckOpts>();
  CLI::App* sub = app.add_subcommand(
      "gradcheck", "Compare the analytic gradient of the frozen alignment "
                   "loss against central finite differences");
  add_bundle_options(sub, o->paths);
  add_loss_options(sub, o->cfg, /*with_neg_count=*/true);
  sub->add_option("--fd-step", o->h, "Finite-difference step");
  sub->add_option("--seed", o->seed,
                  "Seed for coordinate subsampling above 10^4 coordinates");
  sub->add_option("--out", o->out, "Write the JSON report here");
  sub->callback([o] { run_gradcheck(*o); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "otalign: heterophily metrics, similarity construction, entropic "
      "transport, and alignment losses for two-view graph embeddings"};
  try {
    app.option_defaults()->always_capture_default();
    app.set_version_flag("--version", otalign::kVersion);
    app.require_subcommand(1);

    register_metrics(app);
    register_sim(app);
    register_ot(app);
    register_loss(app);
    register_audit(app);
    register_synth(app);
    register_train(app);
    register_gradcheck(app);

    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERROR 1: " << e.what() << "\n";
    return 1;
  } catch (const CLI::Error& e) {
    std::cerr << "ERROR 2: internal error: " << e.what() << "\n";
    return 2;
  } catch (const otalign::Error& e) {
    std::cerr << "ERROR " << e.exit_code() << ": " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "ERROR 2: internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
