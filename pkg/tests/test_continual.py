import csv

import numpy as np
import pytest

from _support import finite_difference, random_graph
from wildgad import benchmark
from wildgad import continual as ct
from wildgad import detectors as dt
from wildgad.evaluation import auc_roc


@pytest.fixture(scope="module")
def small():
    g = random_graph(21, n=40, d_in=5, p=0.1)
    base = dt.train_svdd(g, dt.SvddConfig(hidden_dim=8, embed_dim=4, epochs=5, lr=0.01))
    return g, base


def test_fisher_zero_at_stationary_point(small):
    g, base = small
    inside = dt.SvddState(base.weights, base.center, 1e6, base.config)
    assert all(np.all(f == 0) for f in ct.fisher_diagonal(inside, g, batch_size=8))


def test_fisher_nonnegative_and_shaped(small):
    g, base = small
    fisher = ct.fisher_diagonal(base, g, batch_size=8, seed=3)
    assert [f.shape for f in fisher] == [p.shape for p in base.params()]
    assert all(np.all(f >= 0) for f in fisher)
    assert any(np.any(f > 0) for f in fisher)


@pytest.mark.parametrize("backbone", ["oc", "gae"])
def test_fisher_single_batch_is_squared_gradient(backbone):
    g = random_graph(22, n=30, d_in=4)
    cfg = dt.SvddConfig(hidden_dim=6, epochs=3, embed_dim=3) if backbone == "oc" else \
        dt.GaeConfig(hidden_dim=6, epochs=3, embed_dim=3)
    model = dt.train_detector(g, backbone, cfg)
    fisher = ct.fisher_diagonal(model, g, batch_size=64)
    _, grads = model.loss_and_grads(g, regularize=False)
    for f, grad in zip(fisher, grads):
        np.testing.assert_allclose(f, grad**2, rtol=1e-12, atol=0)


def test_penalty_examples():
    theta = [np.array([1.0, 2.0]), np.zeros((2, 2))]
    assert ct.ewc_penalty(theta, theta, [np.ones(2), np.ones((2, 2))], 5.0) == 0.0
    moved = [np.array([4.0, 2.0]), np.zeros((2, 2))]
    assert ct.ewc_penalty(moved, theta, [np.ones(2), np.ones((2, 2))], 2.0) == 9.0
    with pytest.raises(ValueError):
        ct.ewc_penalty([np.zeros(3)], [np.zeros(2)], [np.zeros(2)], 1.0)


def test_penalty_gradient_finite_differences():
    rng = np.random.default_rng(0)
    theta = [rng.standard_normal((3, 4)), rng.standard_normal(5)]
    star = [rng.standard_normal((3, 4)), rng.standard_normal(5)]
    fisher = [rng.random((3, 4)), rng.random(5)]
    numeric = finite_difference(lambda p: ct.ewc_penalty(p, star, fisher, 3.0), theta)
    for a, n in zip(ct.ewc_grad(theta, star, fisher, 3.0), numeric):
        np.testing.assert_allclose(a, n, atol=1e-6)


def test_prox_step_solves_implicit_equation():
    rng = np.random.default_rng(1)
    p, g, p0, f = (rng.standard_normal(6) for _ in range(4))
    f = np.abs(f)
    new = ct._prox_step(p, g, p0, f, 0.1, 7.0)
    np.testing.assert_allclose(new, p - 0.1 * (g + 7.0 * f * (new - p0)), atol=1e-12)


def test_epochs_zero_returns_base(small):
    g, base = small
    res = ct.continue_training(base, [g], ct.ContinualConfig(epochs=0), target=g)
    assert all(np.array_equal(a, b) for a, b in zip(res.state.params(), base.params()))
    assert res.log == []
    assert np.array_equal(res.state.center, base.center)


def test_drift_monotone_in_strength(small):
    g, base = small
    other = random_graph(23, n=40, d_in=5, p=0.1)
    fisher = ct.fisher_diagonal(base, g)
    drifts = []
    for s in (0.0, 1.0, 100.0, 1e9):
        res = ct.continue_training(base, [other], ct.ContinualConfig(ewc_strength=s, epochs=20, lr=0.01),
                                   fisher=fisher)
        drifts.append(ct.param_drift(res.state.params(), base.params()))
    assert drifts[0] > 0
    assert drifts[1] <= drifts[0] + 1e-9 and drifts[2] <= drifts[1] + 1e-9
    assert drifts[3] < 1e-3 * drifts[0]


def test_round_robin_schedule_and_log(small, tmp_path):
    g, base = small
    a, b = random_graph(30, n=15, d_in=5), random_graph(31, n=15, d_in=5)
    cfg = ct.ContinualConfig(epochs=2, graph_schedule=["b", "a"], include_target=True)
    res = ct.continue_training(base, [("a", a), ("b", b)], cfg, target=g)
    assert [(r["epoch"], r["graph_id"]) for r in res.log] == [
        (0, "b"), (0, "a"), (0, "__target__"), (1, "b"), (1, "a"), (1, "__target__")]
    assert res.log[0]["penalty"] == 0.0
    assert res.log[-1]["total"] == pytest.approx(res.log[-1]["loss_ano"] + res.log[-1]["penalty"])
    ct.write_train_log(tmp_path / "log.csv", res.log)
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert len(rows) == 6 and list(rows[0]) == ["epoch", "graph_id", "loss_ano", "penalty", "total",
                                                "param_drift_l2"]


def test_center_is_never_recomputed(small):
    g, base = small
    res = ct.continue_training(base, [random_graph(32, n=20, d_in=5)], ct.ContinualConfig(epochs=3, lr=0.01))
    assert np.array_equal(res.state.center, base.center)


def test_gae_backbone_supported():
    g = random_graph(24, n=25, d_in=4)
    base = dt.train_gae(g, dt.GaeConfig(hidden_dim=6, embed_dim=3, epochs=3))
    res = ct.continue_training(base, [random_graph(25, n=25, d_in=4)], ct.ContinualConfig(epochs=3), target=g)
    assert len(res.state.params()) == 3
    assert ct.param_drift(res.state.params(), base.params()) > 0


def test_config_validation_and_empty_selection(small):
    g, base = small
    with pytest.raises(ValueError):
        ct.ContinualConfig(ewc_strength=-1)
    with pytest.raises(ValueError):
        ct.continue_training(base, [], ct.ContinualConfig())
    with pytest.raises(ValueError):
        ct.continue_training(base, [g], ct.ContinualConfig(include_target=True))


@pytest.mark.parametrize("seed", range(3))
def test_self_continuation_keeps_auc(seed):
    g = benchmark.make_target(seed)
    base = dt.train_svdd(g, dt.SvddConfig(seed=seed))
    res = ct.continue_training(base, [g], ct.ContinualConfig(ewc_strength=1e3, seed=seed), target=g)
    assert auc_roc(res.state.score(g), g.labels) > auc_roc(base.score(g), g.labels) - 0.02
