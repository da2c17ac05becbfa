import numpy as np
import pytest

from conftest import merge_past
from trajgame.checks import driving_instance
from trajgame.config import Config
from trajgame.errors import TrajGameError
from trajgame.implicit_layer import backward_one
from trajgame.nets import N_PSI, psi_directions
from trajgame.pipeline import (Scene, SynthSampler, _prepare, _scene_loss_grad, constant_velocity_prediction,
                               cross_validate, decision_transfer, evaluate, evaluate_baseline,
                               fold_indices, init_weights, last_velocity, mae_loss, metrics_from_errors,
                               params_digest, positions_from_action, refinement_accuracy, scene_features,
                               scene_label, synth_generate, tgl_forward, train_full, train_refinement)
from trajgame.scenarios import ParamLayout, RoadGeometry, subspace_cell, subspace_index
from trajgame.solver import maximize_on_polytope


def test_metrics_zero_error():
    r = metrics_from_errors(np.zeros((3, 2, 35)), 0.2, "x")
    assert r.mae_avg == 0 and r.rmse_avg == 0
    assert r.horizons == [1, 2, 3, 4, 5, 6, 7]


def test_metrics_constant_offset():
    r = metrics_from_errors(np.ones((3, 2, 35)), 0.2, "x")
    assert r.mae_avg == pytest.approx(1.0) and r.rmse_avg == pytest.approx(1.0)


def test_metrics_read_horizon_stage_and_rmse_dominates():
    E = np.random.default_rng(0).uniform(0, 3, (4, 2, 35))
    r = metrics_from_errors(E, 0.2, "x")
    assert r.mae[0] == pytest.approx(E[..., 4].mean())
    assert r.mae[-1] == pytest.approx(E[..., 34].mean())
    assert all(b >= a - 1e-12 for a, b in zip(r.mae, r.rmse))
    assert r.mae_avg == pytest.approx(np.mean(r.mae))


def test_mae_loss_gradient():
    rng = np.random.default_rng(1)
    P, Y = rng.normal(size=(2, 5, 2)), rng.normal(size=(2, 5, 2))
    loss, g = mae_loss(P, Y)
    num = np.zeros_like(P)
    for idx in np.ndindex(P.shape):
        e = np.zeros_like(P)
        e[idx] = 1e-6
        num[idx] = (mae_loss(P + e, Y)[0] - mae_loss(P - e, Y)[0]) / 2e-6
    assert np.allclose(g, num, atol=1e-8)
    assert mae_loss(Y, Y)[0] == 0.0


def test_constant_velocity_baseline_is_exact_on_constant_velocity():
    past = merge_past()
    pred = constant_velocity_prediction(past, 35, 0.2)
    assert np.allclose(np.diff(pred[:, :, 0], axis=1), np.array([[20.0], [22.0]]) * 0.2)
    assert np.allclose(last_velocity(past, 0.2), [20.0, 22.0])
    assert scene_features(past, 0.2).shape == (12,)


@pytest.mark.parametrize("n,folds", [(50, 4), (12, 4), (7, 3)])
def test_fold_indices_partition(n, folds):
    f = fold_indices(n, folds, 0)
    sizes = [len(x) for x in f]
    assert max(sizes) - min(sizes) <= 1
    allidx = np.concatenate(f)
    assert sorted(allidx.tolist()) == list(range(n))
    assert [x.tolist() for x in f] == [x.tolist() for x in fold_indices(n, folds, 0)]


def test_synthetic_labels_match_generator(small_synth, cfg):
    for s in small_synth:
        assert s.future.shape == (2, 35, 2)
        assert np.all(np.diff(s.future[:, :, 0], axis=1) >= 0)
        assert scene_label(s, cfg) == s.label


def test_synthetic_noise_moves_positions(cfg):
    a = synth_generate(None, None, 2, 0.0, 3, cfg)
    b = synth_generate(None, None, 2, 0.3, 3, cfg)
    assert np.array_equal(a[0].past, b[0].past)
    assert 0.1 < np.std(b[0].future - a[0].future) < 0.6


def _oracle_weights(scene, cfg, k_tilde=4):
    """Zero-weight nets whose biases encode the generator's θ and subspace."""
    w = init_weights([scene], cfg, 0)
    for mlp in (w.pref.mlp, w.refine.order, w.refine.time):
        for W in mlp.W:
            W[:] = 0.0
    sampler = SynthSampler()
    v = last_velocity(scene.past, scene.dt)
    L = ParamLayout(2, cfg.n_future)
    v_true = scene.theta[[L.v(0), L.v(1)]]
    b = w.pref.mlp.b[-1].reshape(2, N_PSI)
    b[:, 0] = (v_true - v) / w.pref.v_scale
    m, order = subspace_cell(scene.label)
    w.refine.order.b[-1][:] = [6.0, -6.0] if order == 0 else [-6.0, 6.0]
    w.refine.time.b[-1][:] = [(m - w.refine.mean0) / w.refine.scale, np.log(0.2 / w.refine.scale)]
    w.refine.k_tilde = k_tilde
    assert sampler.dist == pytest.approx(w.pref.dist)
    return w


def test_oracle_weights_reproduce_generator(small_synth, cfg):
    for s in small_synth[:4]:
        w = _oracle_weights(s, cfg)
        pred = tgl_forward(s.past, w, cfg)
        assert pred.best.k == s.label
        assert np.allclose(pred.theta, s.theta, rtol=1e-10)
        assert np.abs(pred.best.positions - s.future).max() < 1e-4
        assert sum(m.weight for m in pred.modes) == pytest.approx(1.0)


def test_forward_deterministic_and_single_mode(small_synth, cfg):
    w = init_weights(small_synth, cfg, 0)
    s = small_synth[0]
    a = tgl_forward(s.past, w, cfg)
    b = tgl_forward(s.past, w, cfg)
    assert [m.k for m in a.modes] == [m.k for m in b.modes]
    for ma, mb in zip(a.modes, b.modes):
        assert np.array_equal(ma.positions, mb.positions)
    one = tgl_forward(s.past, w, cfg, k_tilde=1)
    assert len(one.modes) == 1 and one.modes[0].weight == 1.0
    assert one.modes[0].k == a.modes[0].k


def test_decision_transfer_without_override_matches_forward(small_synth, cfg):
    w = init_weights(small_synth, cfg, 0)
    s = small_synth[1]
    pred = tgl_forward(s.past, w, cfg)
    outs, _ = decision_transfer(s.past, pred.theta, None, cfg, override_v=None, refined=pred.refinement.refined)
    by_k = {o.k: o for o in outs}
    for m in pred.modes:
        assert np.allclose(by_k[m.k].positions, m.positions, atol=1e-8)
    pots = [o.potential for o in outs]
    assert pots == sorted(pots, reverse=True)


def test_evaluate_rejects_empty(cfg, small_synth):
    w = init_weights(small_synth, cfg, 0)
    with pytest.raises(TrajGameError):
        evaluate([], w, cfg)
    with pytest.raises(TrajGameError):
        evaluate_baseline([], cfg)


def test_refinement_learns_separable_labels():
    cfg = Config(dropout=0.0, val_fraction=0.0, refine_max_epochs=600)
    rng = np.random.default_rng(0)
    geo = RoadGeometry()
    sampler = SynthSampler()
    scenes, labels = [], []
    for j in range(60):
        past, _ = sampler.sample_past(rng, geo, cfg.past_window, cfg.dt)
        gap = past[1, -1, 0] - past[0, -1, 0]
        # order from the sign of the initial gap, merge step from the merger's position
        m = 5 if past[0, -1, 0] < 155 else 15
        k = subspace_index(m, 0 if gap < 0 else 1)
        scenes.append(Scene(past, constant_velocity_prediction(past, 35, cfg.dt), cfg.dt))
        labels.append(k)
    w = init_weights(scenes, cfg, 0, labels)
    w, hist = train_refinement(scenes, w, cfg, 1, labels)
    acc = refinement_accuracy(w, scenes, labels, cfg)
    assert acc["order"] >= 0.99
    assert acc["cell"] >= 0.99
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


def test_phase_two_keeps_refinement_frozen(small_synth):
    cfg = Config(max_epochs=2)
    w = init_weights(small_synth, cfg, 0)
    before = params_digest([w.refine.order, w.refine.time])
    new, hist = train_full(small_synth[:4], w, cfg, 0)
    assert params_digest([new.refine.order, new.refine.time]) == before
    assert len(hist) == 2


def test_scene_gradient_matches_fd(small_synth, cfg):
    w = init_weights(small_synth, cfg, 0)
    s = small_synth[2]
    st = _prepare([s], [s.label], w, cfg)[0]
    D = psi_directions(2, cfg.n_future)
    loss, grads, g_dist, method = _scene_loss_grad(st, w, cfg, D)
    bias = w.pref.mlp.b[-1]
    for j, analytic in ((0, grads[-1][0]), (N_PSI, grads[-1][N_PSI])):
        old = bias[j]
        vals = []
        for h in (1e-4, -1e-4):
            bias[j] = old + h
            st.warm = None
            vals.append(_scene_loss_grad(st, w, cfg, D, want_grad=False)[0])
        bias[j] = old
        num = (vals[0] - vals[1]) / 2e-4
        assert analytic == pytest.approx(num, rel=1e-3, abs=1e-6), method
    old = w.pref.dist_raw
    vals = []
    for h in (1e-4, -1e-4):
        w.pref.dist_raw = old + h
        vals.append(_scene_loss_grad(st, w, cfg, D, want_grad=False)[0])
    w.pref.dist_raw = old
    assert g_dist == pytest.approx((vals[0] - vals[1]) / 2e-4, rel=1e-3, abs=1e-6)


def test_one_parameter_probe_recovers_desired_speed():
    rng = np.random.default_rng(11)
    inst = driving_instance(rng)
    L = ParamLayout(2, inst.game.grid.n_stages)
    j = L.v(0)
    target = positions_from_action(inst.report.argmax)
    theta = inst.theta.copy()
    theta[j] += 2.5
    losses = []
    for _ in range(60):
        rep = maximize_on_polytope(inst.game, theta, inst.poly)
        pos = positions_from_action(rep.argmax)
        r = (pos - target).ravel()
        losses.append(float(r @ r / r.size))
        col = backward_one(inst.game, theta, rep, inst.poly).matrix[:, j]
        g = 2 * positions_from_action(col).ravel() @ r / r.size
        curv = 2 * positions_from_action(col).ravel() @ positions_from_action(col).ravel() / r.size
        theta[j] -= 0.5 * g / curv
    assert abs(theta[j] - inst.theta[j]) <= 1e-2 * abs(inst.theta[j])
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


@pytest.mark.slow
def test_cross_validation_aggregate_is_fold_mean(small_synth):
    cfg = Config(max_epochs=2, refine_max_epochs=20, folds=4)
    out = cross_validate(small_synth[:8], cfg)
    agg = out["TGL"]
    assert len(agg.folds) == 4
    assert agg.mae_avg == pytest.approx(np.mean([f.mae_avg for f in agg.folds]))
    assert out["CV"].n_scenes == 8
    with pytest.raises(TrajGameError):
        cross_validate(small_synth[:3], cfg)
