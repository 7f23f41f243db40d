#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "otalign/core.hpp"
#include "otalign/losses.hpp"
#include "otalign/metrics.hpp"
#include "otalign/similarity.hpp"
#include "otalign/synth.hpp"
#include "otalign/trainer.hpp"
#include "otalign/transport.hpp"
#include "otalign/version.hpp"

namespace py = pybind11;
using namespace otalign;

namespace {

RaggedEmbeddingSet ragged_from_list(const std::vector<Matrix>& mats) {
  RaggedEmbeddingSet s;
  s.per_node = mats;
  s.validate("ragged set");
  return s;
}

Graph graph_from_edges(int num_nodes, const std::vector<Edge>& edges,
                       const std::vector<int>& labels) {
  return Graph::make(num_nodes, edges, labels);
}

}  // namespace

PYBIND11_MODULE(_otalign, m) {
  m.doc() = "Optimal-transport soft alignment between structural and textual "
            "graph embedding views";
  m.attr("__version__") = kVersion;

  py::register_exception<ValidationError>(m, "ValidationError");
  py::register_exception<NumericalError>(m, "NumericalError");
  py::register_exception<IoError>(m, "IoError");

  py::class_<Graph>(m, "Graph")
      .def(py::init(&graph_from_edges), py::arg("num_nodes"),
           py::arg("edges"), py::arg("labels") = std::vector<int>{})
      .def_readonly("num_nodes", &Graph::num_nodes)
      .def_readonly("edges", &Graph::edges)
      .def_readonly("labels", &Graph::labels)
      .def("num_edges", &Graph::num_edges)
      .def("adjacency", &Graph::adjacency);

  m.def("rsm", &rsm, py::arg("xs"), py::arg("beta"));
  m.def("rsm_grad", &rsm_grad, py::arg("xs"), py::arg("beta"));
  m.def(
      "pairwise_rsm_similarity",
      [](const std::vector<Matrix>& neigh, const std::vector<Matrix>& tokens,
         double beta) {
        return pairwise_rsm_similarity(ragged_from_list(neigh),
                                       ragged_from_list(tokens), beta)
            .values;
      },
      py::arg("neigh"), py::arg("tokens"), py::arg("beta"));
  m.def(
      "global_cosine",
      [](const Matrix& a, const Matrix& b) {
        return global_cosine(a, b).values;
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "merge_similarities",
      [](const Matrix& s_rsm, const Matrix& s_cos, double alpha) {
        return merge(SimilarityMatrix{s_rsm, SimKind::rsm},
                     SimilarityMatrix{s_cos, SimKind::cosine}, alpha)
            .values;
      },
      py::arg("s_rsm"), py::arg("s_cos"), py::arg("alpha") = 0.5);
  m.def(
      "augment_with_prompt",
      [](const Matrix& s, std::optional<double> percentile,
         std::optional<double> explicit_value) {
        PromptSpec spec;
        if (explicit_value)
          spec = PromptSpec::from_explicit(*explicit_value);
        else
          spec = PromptSpec::from_percentile(percentile.value_or(0.10));
        AugmentedSimilarity aug =
            augment_with_prompt(SimilarityMatrix{s, SimKind::merged}, spec);
        return py::make_tuple(aug.values, aug.prompt_value);
      },
      py::arg("s"), py::arg("percentile") = std::nullopt,
      py::arg("explicit_value") = std::nullopt);

  m.def(
      "sinkhorn",
      [](const Matrix& sbar, double epsilon, int max_iters, double tol) {
        TransportProblem p;
        p.sbar = sbar;
        p.epsilon = epsilon;
        p.max_iters = max_iters;
        p.tol = tol;
        TransportSolution sol = sinkhorn_dense(p);
        return py::make_tuple(sol.plan(), sol.iterations_run,
                              sol.marginal_error, sol.converged);
      },
      py::arg("sbar"), py::arg("epsilon") = 0.05, py::arg("max_iters") = 30,
      py::arg("tol") = 1e-6);
  m.def(
      "sinkhorn_lowrank",
      [](const Matrix& sbar, double epsilon, int rank, std::uint64_t seed,
         int max_iters, double tol) {
        KernelFactors f = factorize_kernel(sbar, epsilon, rank,
                                           FactorizeMethod::nystrom, seed);
        int n = f.n();
        TransportSolution sol = sinkhorn_lowrank(
            f, uniform_marginals(n), uniform_marginals(n), max_iters, tol);
        return py::make_tuple(sol.plan(), f.rel_frobenius_error,
                              sol.converged);
      },
      py::arg("sbar"), py::arg("epsilon") = 0.05, py::arg("rank") = 8,
      py::arg("seed") = 0, py::arg("max_iters") = 30, py::arg("tol") = 1e-6);
  m.def(
      "exact_ot_bruteforce",
      [](const Matrix& s) {
        ExactOtResult r = exact_ot_bruteforce(s);
        return py::make_tuple(r.objective, r.permutation);
      },
      py::arg("s"));

  m.def(
      "metric_report",
      [](const Graph& g, std::optional<std::vector<Matrix>> tokens,
         std::optional<Matrix> sentences, std::uint64_t seed) {
        MetricsOptions opt;
        opt.seed = seed;
        RaggedEmbeddingSet tok;
        if (tokens) tok = ragged_from_list(*tokens);
        MetricReport rep = metric_report(
            g, tokens ? &tok : nullptr,
            sentences ? &sentences.value() : nullptr, opt);
        return rep.to_json().dump();
      },
      py::arg("graph"), py::arg("tokens") = std::nullopt,
      py::arg("sentences") = std::nullopt, py::arg("seed") = 0);

  py::class_<LossConfig>(m, "LossConfig")
      .def(py::init<>())
      .def_readwrite("tau", &LossConfig::tau)
      .def_readwrite("neg_count", &LossConfig::neg_count)
      .def_readwrite("lambda_", &LossConfig::lambda)
      .def_readwrite("alpha", &LossConfig::alpha)
      .def_readwrite("beta", &LossConfig::beta)
      .def_readwrite("epsilon", &LossConfig::epsilon)
      .def_readwrite("percentile", &LossConfig::percentile)
      .def_readwrite("ot_max_iters", &LossConfig::ot_max_iters)
      .def_readwrite("ot_tol", &LossConfig::ot_tol);

  m.def(
      "evaluate_losses",
      [](const Matrix& h_struct, const Matrix& h_text,
         const std::vector<Matrix>& neigh, const std::vector<Matrix>& tokens,
         const LossConfig& cfg) {
        EmbeddingBundle b;
        b.h_struct = h_struct;
        b.h_text = h_text;
        b.neighborhoods = ragged_from_list(neigh);
        b.tokens = ragged_from_list(tokens);
        LossReport rep = evaluate_losses(b, cfg);
        return py::make_tuple(rep.l_mha, rep.l_lhm, rep.l_infonce,
                              rep.l_total);
      },
      py::arg("h_struct"), py::arg("h_text"), py::arg("neighborhoods"),
      py::arg("tokens"), py::arg("cfg") = LossConfig{});
  m.def(
      "proposition_audit",
      [](const Matrix& s, const LossConfig& cfg) {
        LossConfig full = cfg;
        full.neg_count = static_cast<int>(s.rows());
        return proposition_audit(s, full).to_json().dump();
      },
      py::arg("s"), py::arg("cfg") = LossConfig{});
  m.def(
      "finite_difference_check",
      [](const Matrix& h_struct, const Matrix& h_text,
         const std::vector<Matrix>& neigh, const std::vector<Matrix>& tokens,
         const LossConfig& cfg, double h, std::uint64_t seed) {
        EmbeddingBundle b;
        b.h_struct = h_struct;
        b.h_text = h_text;
        b.neighborhoods = ragged_from_list(neigh);
        b.tokens = ragged_from_list(tokens);
        FdReport rep = finite_difference_check(b, cfg, h, seed);
        return py::make_tuple(rep.max_rel_error, rep.worst_coordinate,
                              rep.cancellation_warning);
      },
      py::arg("h_struct"), py::arg("h_text"), py::arg("neighborhoods"),
      py::arg("tokens"), py::arg("cfg") = LossConfig{}, py::arg("h") = 1e-5,
      py::arg("seed") = 0);

  py::class_<SynthConfig>(m, "SynthConfig")
      .def(py::init<>())
      .def_readwrite("num_nodes", &SynthConfig::num_nodes)
      .def_readwrite("num_classes", &SynthConfig::num_classes)
      .def_readwrite("dim", &SynthConfig::dim)
      .def_readwrite("intra_edge_prob", &SynthConfig::intra_edge_prob)
      .def_readwrite("inter_edge_prob", &SynthConfig::inter_edge_prob)
      .def_readwrite("partial_mix", &SynthConfig::partial_mix)
      .def_readwrite("complete_noise_frac", &SynthConfig::complete_noise_frac)
      .def_readwrite("latent_drop_frac", &SynthConfig::latent_drop_frac)
      .def_readwrite("noise_sigma", &SynthConfig::noise_sigma)
      .def_readwrite("seed", &SynthConfig::seed);

  py::class_<SyntheticTag>(m, "SyntheticTag")
      .def_readonly("graph", &SyntheticTag::graph)
      .def_readonly("h_struct", &SyntheticTag::h_struct)
      .def_readonly("h_text", &SyntheticTag::h_text)
      .def_property_readonly(
          "tokens",
          [](const SyntheticTag& t) { return t.tokens.per_node; })
      .def_property_readonly(
          "neighborhoods",
          [](const SyntheticTag& t) { return t.neighborhoods.per_node; })
      .def_property_readonly("deleted_edges",
                             [](const SyntheticTag& t) {
                               return t.planted.deleted_edges;
                             })
      .def_property_readonly(
          "noise_nodes",
          [](const SyntheticTag& t) { return t.planted.noise_nodes; });

  m.def("generate", &generate, py::arg("cfg"));
  m.def("perturb_edges", &perturb_edges, py::arg("graph"), py::arg("delta"),
        py::arg("seed") = 0);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("loss", &TrainConfig::loss)
      .def_readwrite("refresh_plan_every", &TrainConfig::refresh_plan_every)
      .def_readwrite("seed", &TrainConfig::seed);

  m.def(
      "align",
      [](const SyntheticTag& tag, const TrainConfig& cfg) {
        TrainTrace t = align(tag, cfg);
        return py::make_tuple(t.l_total, t.probe_test_acc, t.initial_lhm_plan,
                              t.final_lhm_plan);
      },
      py::arg("tag"), py::arg("cfg") = TrainConfig{});
  m.def("latent_recovery_score", &latent_recovery_score, py::arg("tag"),
        py::arg("plan"));
}
