"""Smoke tests for the _otalign bindings: one happy path and one error path
per exposed operation, plus a couple of exact fixture values."""

import json
import math

import numpy as np
import pytest

import _otalign as ot


def test_version():
    assert ot.__version__ == "0.1.0"


# ---------------------------------------------------------------------- core
def test_graph_canonicalization():
    g = ot.Graph(3, [(1, 0), (0, 1), (2, 1)], [0, 0, 1])
    assert g.num_nodes == 3
    assert g.num_edges() == 2
    assert g.edges == [(0, 1), (1, 2)]
    assert g.labels == [0, 0, 1]
    assert g.adjacency() == [[1], [0, 2], [1]]


def test_graph_rejects_self_loop():
    with pytest.raises(ot.ValidationError):
        ot.Graph(2, [(0, 0)])


# ---------------------------------------------------------------- similarity
def test_rsm_fixture_and_grad():
    assert ot.rsm([2.5], 0.7) == 2.5
    assert abs(ot.rsm([0.0, 0.0], 1.0) - math.log(2.0)) < 1e-14
    assert ot.rsm_grad([0.0, 0.0], 1.0) == [0.5, 0.5]
    with pytest.raises(ot.ValidationError):
        ot.rsm([], 1.0)


def test_pairwise_rsm_singleton_fixture():
    neigh = [np.array([[1.0]]), np.array([[3.0]])]
    tokens = [np.array([[2.0]]), np.array([[4.0]])]
    s = ot.pairwise_rsm_similarity(neigh, tokens, 0.5)
    assert s[0, 0] == 2.0 and s[0, 1] == 5.0
    assert s[1, 0] == 5.0 and s[1, 1] == 12.0


def test_global_cosine_identity():
    eye = np.eye(3)
    s = ot.global_cosine(eye, eye)
    assert np.allclose(s, np.eye(3), atol=1e-15)
    with pytest.raises(ot.ValidationError):
        ot.global_cosine(np.zeros((1, 2)), np.ones((1, 2)))


def test_merge_and_prompt():
    rsm_m = np.array([[0.0, 1.0], [2.0, 3.0]])
    cos_m = np.zeros((2, 2))
    merged = ot.merge_similarities(rsm_m, cos_m, alpha=0.5)
    assert merged[1, 1] == 0.5 and merged[0, 0] == -0.5

    aug, prompt = ot.augment_with_prompt(merged, explicit_value=0.0)
    assert aug.shape == (3, 3)
    assert prompt == 0.0
    assert np.all(aug[2, :] == 0.0) and np.all(aug[:, 2] == 0.0)
    assert np.array_equal(aug[:2, :2], merged)

    _, p10 = ot.augment_with_prompt(np.array([[0.4, 0.1], [0.3, 0.2]]),
                                    percentile=0.10)
    assert p10 == 0.1


# ----------------------------------------------------------------- transport
def test_sinkhorn_uniform_plan():
    plan, iters, err, converged = ot.sinkhorn(np.zeros((3, 3)), epsilon=0.1)
    assert converged and iters >= 1 and err <= 1e-6
    assert np.allclose(plan, np.full((3, 3), 1.0 / 9.0), atol=1e-12)


def test_sinkhorn_lowrank_separable():
    a = np.linspace(-1.0, 1.0, 6)
    s = a[:, None] + a[None, :]
    plan, rel_err, converged = ot.sinkhorn_lowrank(
        s, epsilon=0.5, rank=1, seed=3, max_iters=10000, tol=1e-12)
    assert rel_err <= 1e-8
    assert np.allclose(plan, np.full((6, 6), 1.0 / 36.0), atol=1e-8)
    with pytest.raises(ot.NumericalError):
        ot.sinkhorn_lowrank(s, epsilon=0.001, rank=2)


def test_exact_ot_bruteforce():
    obj, perm = ot.exact_ot_bruteforce(np.eye(2))
    assert obj == 1.0 and perm == [0, 1]
    with pytest.raises(ot.ValidationError):
        ot.exact_ot_bruteforce(np.zeros((8, 8)))


# ------------------------------------------------------------------- metrics
def test_metric_report_triangle():
    g = ot.Graph(3, [(0, 1), (0, 2), (1, 2)], [0, 0, 1])
    rep = json.loads(ot.metric_report(g))
    assert rep["h_e"] == pytest.approx(1.0 / 3.0, abs=0.0)
    assert rep["h_n"] == pytest.approx(1.0 / 3.0, abs=0.0)
    assert "r_uts" in rep["absent"]  # no text inputs supplied

    sentences = np.eye(3)
    tokens = [np.ones((1, 3)), np.ones((2, 3)), np.ones((1, 3))]
    full = json.loads(ot.metric_report(g, tokens=tokens, sentences=sentences))
    assert "r_nwd" in full and "r_ntd" in full
    assert "r_ueys" in full["absent"]  # complete graph


# -------------------------------------------------------------------- losses
def _tiny_bundle():
    h = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    neigh = [np.array([[0.5, 1.0]]) for _ in range(3)]
    tokens = [np.array([[1.0, -0.5]]) for _ in range(3)]
    return h, h.copy(), neigh, tokens


def test_evaluate_losses():
    h_struct, h_text, neigh, tokens = _tiny_bundle()
    cfg = ot.LossConfig()
    cfg.lambda_ = 0.5
    l_mha, l_lhm, l_infonce, l_total = ot.evaluate_losses(
        h_struct, h_text, neigh, tokens, cfg)
    assert all(map(math.isfinite, (l_mha, l_lhm, l_infonce, l_total)))
    assert l_total == pytest.approx(0.5 * (l_mha + l_lhm), rel=1e-12)


def test_proposition_audit_zero_matrix():
    audit = json.loads(ot.proposition_audit(np.zeros((3, 3))))
    assert audit["mha_bound_holds"]
    assert audit["lhm_bound_holds"]
    assert audit["assumptions"]["nonneg_similarity"]
    assert audit["l_infonce"] == pytest.approx(2.0 * math.log(3.0), abs=1e-9)


def test_finite_difference_check():
    h_struct, h_text, neigh, tokens = _tiny_bundle()
    max_rel, worst, warn = ot.finite_difference_check(
        h_struct, h_text, neigh, tokens, h=1e-5, seed=0)
    assert max_rel <= 1e-4
    assert isinstance(worst, str)
    assert not warn


# --------------------------------------------------------------------- synth
def _synth_cfg():
    cfg = ot.SynthConfig()
    cfg.num_nodes = 18
    cfg.num_classes = 3
    cfg.dim = 8
    cfg.intra_edge_prob = 0.3
    cfg.inter_edge_prob = 0.08
    cfg.partial_mix = 0.5
    cfg.latent_drop_frac = 0.3
    cfg.noise_sigma = 0.8
    cfg.seed = 11
    return cfg


def test_generate_deterministic():
    a = ot.generate(_synth_cfg())
    b = ot.generate(_synth_cfg())
    assert a.graph.edges == b.graph.edges
    assert np.array_equal(a.h_struct, b.h_struct)
    assert np.array_equal(a.h_text, b.h_text)
    assert a.deleted_edges == b.deleted_edges
    assert len(a.tokens) == 18
    assert len(a.neighborhoods) == 18
    # Planted deletions are disjoint from the surviving edge set.
    assert not set(a.deleted_edges) & set(a.graph.edges)


def test_perturb_edges_identity_and_error():
    g = ot.Graph(3, [(0, 1), (0, 2), (1, 2)], [0, 0, 1])
    assert ot.perturb_edges(g, 0, seed=5).edges == g.edges
    with pytest.raises(ot.ValidationError):
        ot.perturb_edges(g, 1, seed=5)  # complete graph: nothing to add


# ------------------------------------------------------------------- trainer
def test_align_and_recovery():
    tag = ot.generate(_synth_cfg())
    cfg = ot.TrainConfig()
    cfg.steps = 6
    cfg.seed = 2
    l_total, probe_acc, initial_plan, final_plan = ot.align(tag, cfg)
    assert len(l_total) == 6
    assert all(map(math.isfinite, l_total))
    assert len(probe_acc) >= 1 and 0.0 <= probe_acc[0] <= 1.0
    assert initial_plan.shape == (18, 18)

    rec = ot.latent_recovery_score(tag, np.full((18, 18), 1.0 / 18.0))
    assert rec == 0.0  # uniform plan never beats the row median strictly

    no_planted = ot.SynthConfig()
    no_planted.num_nodes = 12
    no_planted.intra_edge_prob = 0.5
    no_planted.seed = 3
    empty_tag = ot.generate(no_planted)
    with pytest.raises(ot.ValidationError):
        ot.latent_recovery_score(empty_tag, np.full((12, 12), 1.0 / 12.0))


def test_align_lr_zero_is_constant():
    tag = ot.generate(_synth_cfg())
    cfg = ot.TrainConfig()
    cfg.steps = 5
    cfg.lr = 0.0
    cfg.seed = 2
    l_total, _, _, _ = ot.align(tag, cfg)
    assert l_total == [l_total[0]] * 5
