"""Model-level tests: forward wiring, Dirichlet-energy diagnostics, task
losses, metrics, the training loop, and checkpoint round trips.

Closed-form constants come from tools/gen_frozen.py (mpmath, 50 digits).
"""

import json
import math

import numpy as np
import pytest

from gyrognn import autodiff as ad
from gyrognn import graphdata, layers, manifold, model
from gyrognn.autodiff import Tensor
from gyrognn.model import DivergenceError, ModelConfig
from tests.conftest import random_ball_points, small_graph

# frozen oracle values (tools/gen_frozen.py)
SINGLE_EDGE_ENERGY = 0.60347448040629099
LN_3 = 1.0986122886681097
TWO_LN_2 = 2.0 * 0.69314718055994531


def cfg_for(g, **kw):
    base = dict(L=2, d_f=g.features.shape[1], d_h=8,
                d_c=int(g.labels.max()) + 1 if g.labels is not None else 2,
                dropout=0.0, gamma=0.0, epochs=5, patience=1000, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def blob_graph(n=24, dim=4, seed=0):
    """Easy two-cluster NC task: blob coordinates as features, a path
    through each blob as edges."""
    pts = graphdata.gen_synthetic(graphdata.SyntheticSpec(
        "two-blob", n, dim, -1.0, seed, center_dist=3.0, sigma=0.4))
    half = n - n // 2
    edges = [(i, i + 1) for i in range(half - 1)]
    edges += [(i, i + 1) for i in range(half, n - 1)]
    return graphdata.Graph(n, np.array(edges), pts.points, pts.labels)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("bad", [
    dict(L=0), dict(d_h=0), dict(kappa=0.0), dict(kappa=1.0),
    dict(alpha=1.0), dict(dropout=1.0), dict(gamma=-1.0),
    dict(weight_decay=-1.0), dict(task="clustering"),
    dict(residual_target="prev"), dict(lam=0.0), dict(fd_t=0.0),
])
def test_config_rejects_bad_values(bad):
    kw = dict(L=2, d_f=4)
    kw.update(bad)
    with pytest.raises(ValueError):
        ModelConfig(**kw)


def test_named_and_trainable_tensor_sets(rng):
    g = blob_graph()
    cfg = cfg_for(g, L=3)
    params = model.init_params(cfg, rng)
    named = model.named_tensors(params)
    # input W, three in-loop (W, b1, b2) triples, decoder W and b
    assert set(named) == {"fc_in.W", "decoder.W", "decoder.b"} | {
        "fc.%d.%s" % (l, t) for l in (1, 2, 3) for t in ("W", "b1", "b2")}
    assert len(model.trainable(params)) == len(named)
    assert not params["fc_in"].b1.requires_grad
    assert not params["fc_in"].b2.requires_grad


# ---------------------------------------------------------------------------
# forward wiring
# ---------------------------------------------------------------------------

def identity_graph(n, d_f, rng, classes=2):
    """No edges: adj_norm is the identity, so aggregation is a no-op."""
    X = rng.uniform(0.0, 1.0, size=(n, d_f))
    y = rng.integers(0, classes, size=n)
    return graphdata.Graph(n, np.zeros((0, 2), dtype=np.int64), X, y)


def test_forward_plain_stack_is_relu_of_fc(rng):
    g = identity_graph(6, 5, rng)
    cfg = cfg_for(g, L=1, use_residual=False, use_alignment=False)
    params = model.init_params(cfg, rng)
    h0 = model.embed_features(g.features, cfg.kappa)

    H, hidden = model.forward(g.adj_norm, h0, cfg, params)
    anchor = layers.fc_transform(Tensor(h0), params["fc_in"], cfg.kappa)
    expect = ad.relu(layers.fc_transform(anchor, params["fc"][0], cfg.kappa))

    assert len(hidden) == cfg.L + 2
    assert H is hidden[-1]
    np.testing.assert_allclose(hidden[0].data, anchor.data, atol=1e-14)
    np.testing.assert_allclose(H.data, expect.data, atol=1e-14)


def test_forward_alignment_beta_one_matches_plain_layer(rng):
    # beta_1 = ln(lam + 1) = 1 at lam = e - 1, and the two-point midpoint
    # with weights (1, 0) returns its first argument
    g = identity_graph(6, 5, rng)
    cfg = cfg_for(g, L=1, lam=math.e - 1.0, use_residual=False,
                  use_alignment=True)
    params = model.init_params(cfg, rng)
    h0 = model.embed_features(g.features, cfg.kappa)

    H, _ = model.forward(g.adj_norm, h0, cfg, params)
    plain = model.forward(g.adj_norm, h0,
                          cfg_for(g, L=1, use_residual=False,
                                  use_alignment=False),
                          params)[0]
    np.testing.assert_allclose(H.data, plain.data, atol=1e-12)


def test_forward_alpha_zero_matches_residual_off(rng):
    g = blob_graph()
    params = model.init_params(cfg_for(g), rng)
    h0 = model.embed_features(g.features, -1.0)
    on = model.forward(g.adj_norm, h0, cfg_for(g, alpha=0.0), params)[0]
    off = model.forward(g.adj_norm, h0, cfg_for(g, use_residual=False),
                        params)[0]
    np.testing.assert_allclose(on.data, off.data, atol=1e-12)


def test_forward_equal_rows_stay_equal(rng):
    g = small_graph(rng, n=10, d_f=4)
    g = graphdata.Graph(10, g.edges, np.tile(g.features[:1], (10, 1)), g.labels)
    cfg = cfg_for(g, L=3)
    params = model.init_params(cfg, rng)
    H, _ = model.forward(g.adj_norm, model.embed_features(g.features, cfg.kappa),
                         cfg, params)
    np.testing.assert_allclose(H.data, np.tile(H.data[:1], (10, 1)), atol=1e-12)


def test_forward_permutation_equivariance(rng):
    g = small_graph(rng, n=12, d_f=5)
    perm = rng.permutation(12)
    inv = np.argsort(perm)
    gp = graphdata.Graph(12, inv[g.edges], g.features[perm],
                         g.labels[perm] if g.labels is not None else None)
    cfg = cfg_for(g, L=3)
    params = model.init_params(cfg, np.random.default_rng(3))

    H = model.forward(g.adj_norm, model.embed_features(g.features, cfg.kappa),
                      cfg, params)[0]
    Hp = model.forward(gp.adj_norm, model.embed_features(gp.features, cfg.kappa),
                       cfg, params)[0]
    np.testing.assert_allclose(Hp.data, H.data[perm], atol=1e-10)


def test_forward_training_dropout_needs_rng(rng):
    g = blob_graph()
    cfg = cfg_for(g, dropout=0.5)
    params = model.init_params(cfg, rng)
    h0 = model.embed_features(g.features, cfg.kappa)
    with pytest.raises(ValueError, match="rng"):
        model.forward(g.adj_norm, h0, cfg, params, training=True)


# ---------------------------------------------------------------------------
# Dirichlet energy
# ---------------------------------------------------------------------------

def edge_pair_graph():
    return graphdata.Graph(2, np.array([[0, 1]]), np.eye(2))


def test_dirichlet_energy_zero_cases():
    g = edge_pair_graph()
    assert model.dirichlet_energy(np.zeros((2, 2)), g, -1.0) == 0.0
    empty = graphdata.Graph(3, np.zeros((0, 2), dtype=np.int64), np.eye(3))
    assert model.dirichlet_energy(np.ones((3, 3)) * 0.3, empty, -1.0) == 0.0


def test_dirichlet_energy_single_edge_value():
    H = np.array([[0.0, 0.0], [0.5, 0.0]])
    e = model.dirichlet_energy(H, edge_pair_graph(), -1.0)
    np.testing.assert_allclose(e, SINGLE_EDGE_ENERGY, rtol=1e-12)


def test_energy_trace_is_per_state_energy(rng):
    g = blob_graph()
    cfg = cfg_for(g)
    params = model.init_params(cfg, rng)
    _, hidden = model.forward(g.adj_norm,
                              model.embed_features(g.features, cfg.kappa),
                              cfg, params)
    trace = model.energy_trace(hidden, g, cfg.kappa)
    assert trace.shape == (cfg.L + 2,)
    np.testing.assert_allclose(
        trace[0], model.dirichlet_energy(hidden[0].data, g, cfg.kappa))


def test_aggregation_profile_nonincreasing(rng):
    g = small_graph(rng, n=20, d_f=6)
    H0 = model.embed_features(g.features, -1.0)
    prof = model.aggregation_energy_profile(g, H0, -1.0, 12)
    assert prof.shape == (13,)
    assert prof[0] == model.dirichlet_energy(H0, g, -1.0)
    assert np.all(np.diff(prof) <= 1e-10)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def test_nc_loss_uniform_logits_is_log_num_classes(rng):
    g = small_graph(rng, n=9, d_f=4, classes=3)
    cfg = cfg_for(g, d_c=3)
    params = model.init_params(cfg, rng)
    params["dec_W"].data[:] = 0.0
    params["dec_b"].data[:] = 0.0
    H = Tensor(random_ball_points(rng, 9, cfg.d_h, cfg.kappa))
    loss = model.nc_loss(H, g.labels, np.arange(9), cfg, params)
    np.testing.assert_allclose(loss.item(), LN_3, rtol=1e-14)


def test_nc_loss_gamma_adds_feature_reg(rng):
    g = small_graph(rng, n=9, d_f=4)
    cfg = cfg_for(g)
    params = model.init_params(cfg, rng)
    H = Tensor(random_ball_points(rng, 9, cfg.d_h, cfg.kappa))
    idx = np.arange(9)
    base = model.nc_loss(H, g.labels, idx, cfg, params).item()
    withreg = model.nc_loss(H, g.labels, idx, cfg_for(g, gamma=0.25),
                            params).item()
    reg = layers.feature_reg_loss(H, cfg.kappa).item()
    np.testing.assert_allclose(withreg - base, 0.25 * reg, rtol=1e-9)


def test_nc_loss_rejects_empty_train_set(rng):
    g = small_graph(rng)
    cfg = cfg_for(g)
    params = model.init_params(cfg, rng)
    H = Tensor(model.embed_features(g.features, cfg.kappa))
    with pytest.raises(ValueError, match="empty"):
        model.nc_loss(H, g.labels, np.array([], dtype=np.int64), cfg, params)


def fd_pair():
    # d(0, y)^2 == fd_r == 2 exactly when y = (tanh(sqrt(2)/2), 0)
    H = np.array([[0.0, 0.0], [math.tanh(math.sqrt(2.0) / 2.0), 0.0]])
    return H, np.array([[0, 1]])


def test_lp_score_half_when_sq_distance_equals_r():
    g = blob_graph()
    cfg = cfg_for(g, task="lp", fd_r=2.0, fd_t=1.0)
    H, edges = fd_pair()
    np.testing.assert_allclose(model.lp_score(H, edges, cfg), 0.5, atol=1e-12)


def test_lp_score_monotone_and_bounded():
    cfg = cfg_for(blob_graph(), task="lp")
    radii = np.array([0.0, 0.2, 0.5, 0.9, 1.0 - 1e-9])
    H = np.c_[radii, np.zeros(5)]
    edges = np.c_[np.zeros(5, dtype=int), np.arange(5)]
    s = model.lp_score(H, edges, cfg)
    assert np.all(np.diff(s) < 0)
    assert np.all((s > 0.0) & (s < 1.0))
    assert s[-1] < 1e-6  # near-boundary pair: huge distance, no overflow


def test_lp_loss_at_decision_boundary_is_two_log_two():
    cfg = cfg_for(blob_graph(), task="lp", fd_r=2.0, fd_t=1.0)
    H, edges = fd_pair()
    loss = model.lp_loss(Tensor(H), edges, edges, cfg)
    np.testing.assert_allclose(loss.item(), TWO_LN_2, atol=1e-12)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_roc_auc_perfect_and_reversed():
    pos = np.array([0.9, 0.8, 0.7])
    neg = np.array([0.3, 0.2, 0.1])
    assert model.roc_auc(pos, neg) == 1.0
    assert model.roc_auc(neg, pos) == 0.0


def test_roc_auc_all_ties_is_half():
    np.testing.assert_allclose(
        model.roc_auc(np.full(8, 0.5), np.full(8, 0.5)), 0.5)


def test_roc_auc_random_scores_near_half(rng):
    auc = model.roc_auc(rng.random(1000), rng.random(1000))
    assert abs(auc - 0.5) < 0.05


def test_accuracy_counts_and_empty():
    labels = np.array([0, 1, 1, 0])
    pred = np.array([0, 1, 0, 0])
    assert model.accuracy(pred, labels, np.arange(4)) == 0.75
    assert model.accuracy(pred, labels, np.array([0, 1])) == 1.0
    assert np.isnan(model.accuracy(pred, labels, np.array([], dtype=int)))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def test_train_loss_decreases_on_easy_task():
    g = blob_graph()
    cfg = cfg_for(g, L=2, epochs=50, dropout=0.1, gamma=1e-4, lr=1e-2)
    res = model.train(g, cfg)
    assert len(res.history) == 50
    assert res.history[-1][1] < res.history[0][1]
    assert res.best_val >= 0.5


def test_train_same_seed_is_bit_identical():
    g = blob_graph()
    cfg = cfg_for(g, epochs=8, dropout=0.2, gamma=1e-4)
    h1 = model.train(g, cfg).history
    h2 = model.train(g, cfg).history
    assert h1 == h2


def test_train_early_stopping_respects_patience():
    g = blob_graph()
    cfg = cfg_for(g, epochs=400, patience=5, dropout=0.0)
    res = model.train(g, cfg)
    assert len(res.history) < 400
    assert len(res.history) == res.best_epoch + cfg.patience


def test_train_restores_best_checkpoint():
    g = blob_graph()
    cfg = cfg_for(g, epochs=30, patience=1000)
    res = model.train(g, cfg)
    out = model.evaluate(g, cfg, res.params)
    np.testing.assert_allclose(out["val_metric"], res.best_val)
    np.testing.assert_allclose(out["test_metric"], res.best_test)


def test_train_raises_divergence_on_nonfinite_input():
    g = blob_graph()
    g.features[0, 0] = np.nan
    with pytest.raises(DivergenceError, match="epoch 1"):
        model.train(g, cfg_for(g, epochs=3))


def test_evaluate_reports_metrics_and_trace():
    g = blob_graph()
    cfg = cfg_for(g, epochs=5)
    res = model.train(g, cfg)
    out = model.evaluate(g, cfg, res.params)
    assert 0.0 <= out["val_metric"] <= 1.0
    assert 0.0 <= out["test_metric"] <= 1.0
    assert out["energy_trace"].shape == (cfg.L + 2,)
    assert out["embeddings"].shape == (g.num_nodes, cfg.d_h)


def test_train_lp_task_smoke():
    g = small_graph(np.random.default_rng(5), n=30, d_f=6)
    cfg = cfg_for(g, task="lp", epochs=5, gamma=1e-4)
    res = model.train(g, cfg)
    assert len(res.history) == 5
    assert np.isfinite(res.best_val) and 0.0 <= res.best_val <= 1.0


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    g = blob_graph()
    cfg = cfg_for(g, L=3, epochs=2)
    res = model.train(g, cfg)
    path = tmp_path / "ckpt.npz"
    model.save_checkpoint(path, res.params, cfg)
    params2, cfg2 = model.load_checkpoint(path)
    assert cfg2 == cfg
    for name, t in model.named_tensors(res.params).items():
        np.testing.assert_array_equal(model.named_tensors(params2)[name].data,
                                      t.data)


def test_checkpoint_version_guard(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, __meta__=np.array(json.dumps({"version": 99})))
    with pytest.raises(ValueError, match="version"):
        model.load_checkpoint(path)
