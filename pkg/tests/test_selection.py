import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _support import binned_energy_oracle, exact_w2_replicated, exact_w2_sorted, pairwise_energy
from wildgad import detectors as dt
from wildgad import selection as sel
from wildgad.evaluation import SynthSpec, generator_params, make_candidate_pool, make_synthetic
from wildgad.spherical import spherical_coords


# ---------------------------------------------------------------- center shift


def test_center_shift_examples():
    Z_in = np.random.default_rng(0).standard_normal((10, 2))
    Z_in -= Z_in.mean(0)
    Z_out = np.random.default_rng(1).standard_normal((10, 2))
    Z_out += np.array([2.0, 0.0]) - Z_out.mean(0)
    assert sel.center_shift(Z_in, Z_out) == pytest.approx(1.0, abs=1e-12)
    same_mean = Z_out - Z_out.mean(0)
    assert sel.center_shift(Z_in, same_mean) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_center_shift_concatenation_oracle(seed):
    rng = np.random.default_rng(seed)
    Z_in, Z_out = rng.standard_normal((30, 5)), rng.standard_normal((17, 5)) + 1
    expected = np.linalg.norm(Z_in.mean(0) - np.concatenate([Z_in, Z_out]).mean(0))
    assert sel.center_shift(Z_in, Z_out) == pytest.approx(expected, abs=1e-12)


def test_center_shift_dim_mismatch():
    with pytest.raises(ValueError):
        sel.center_shift(np.zeros((2, 3)), np.zeros((2, 4)))


# ---------------------------------------------------------------- Wasserstein


@pytest.mark.parametrize("seed", range(10))
def test_sliced_1d_equals_sorted_coupling(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(40), rng.exponential(size=40)
    assert sel.sliced_wasserstein(x, y, projections=16, seed=seed) == pytest.approx(exact_w2_sorted(x, y), abs=1e-9)


@pytest.mark.parametrize("n,m", [(3, 5), (4, 6), (10, 7), (1, 9)])
def test_w1d_unequal_sizes(n, m):
    rng = np.random.default_rng(n * 100 + m)
    x, y = rng.standard_normal(n), rng.standard_normal(m)
    assert sel.wasserstein_1d(x, y) == pytest.approx(exact_w2_replicated(x, y), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(P=arrays(np.float64, (12, 5), elements=st.floats(-10, 10)), seed=st.integers(0, 1000))
def test_identical_sets_score_zero(P, seed):
    perm = np.random.default_rng(seed).permutation(len(P))
    assert sel.sliced_wasserstein(P, P[perm], projections=8, seed=seed) == pytest.approx(0.0, abs=1e-9)


def test_translation_bounds():
    rng = np.random.default_rng(3)
    P, Q = rng.standard_normal((50, 3)), rng.standard_normal((50, 3))
    v = np.array([0.5, -1.0, 2.0])
    base = sel.sliced_wasserstein(P, Q, 64, 0)
    assert sel.sliced_wasserstein(P, Q + v, 64, 0) <= np.linalg.norm(v) + base + 1e-12
    # point mass against its translate: exact in one dimension
    point = np.full(20, 1.5)
    assert sel.sliced_wasserstein(point, point + 0.7, 8, 0) == pytest.approx(0.7, abs=1e-12)


def test_distributional_similarity_on_spherical_coords():
    Z = np.random.default_rng(0).standard_normal((30, 4))
    c = Z.mean(0)
    rho = spherical_coords(Z, c)
    mix = spherical_coords(np.vstack([Z, Z]), c)
    assert sel.distributional_similarity(rho, mix) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------- energy


def test_energy_two_point_examples():
    for t in (0.1, 1.0, 5.0):
        assert sel.hyperspherical_energy(np.zeros((2, 3)), np.ones(3), sel.EnergyConfig(t=t)) == 1.0
    Z = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert sel.hyperspherical_energy(Z, np.zeros(2)) == pytest.approx(np.exp(-4.0), abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_energy_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 201))
    Z = rng.standard_normal((n, 3)) * rng.uniform(0.2, 2)
    c = rng.standard_normal(3) * 0.1
    cfg = sel.EnergyConfig(t=float(rng.uniform(0.1, 3)), num_bins=int(rng.integers(1, 10)), max_sample=n)
    assert sel.hyperspherical_energy(Z, c, cfg) == pytest.approx(
        binned_energy_oracle(Z, c, cfg.t, cfg.num_bins), abs=1e-9)


def test_single_bin_equals_loop_oracle():
    Z = np.random.default_rng(7).standard_normal((40, 2))
    cfg = sel.EnergyConfig(t=0.5, num_bins=1)
    assert sel.hyperspherical_energy(Z, np.zeros(2), cfg) == pytest.approx(pairwise_energy(Z, 0.5), abs=1e-12)


def test_energy_fallback_without_pairs():
    Z = np.array([[1.0, 0.0], [0.0, 3.0]])
    cfg = sel.EnergyConfig(num_bins=4)
    assert sel.hyperspherical_energy(Z, np.zeros(2), cfg) == pytest.approx(pairwise_energy(Z, 1.0))


def test_energy_subsample_is_seeded():
    Z = np.random.default_rng(0).standard_normal((300, 3))
    cfg = sel.EnergyConfig(max_sample=50, seed=4)
    assert sel.hyperspherical_energy(Z, np.zeros(3), cfg) == sel.hyperspherical_energy(Z, np.zeros(3), cfg)


# ---------------------------------------------------------------- combination


def test_z_normalize_examples():
    np.testing.assert_allclose(sel.z_normalize([1, 2, 3]), [-1.224744871391589, 0, 1.224744871391589])
    assert sel.z_normalize([4, 4, 4]).tolist() == [0, 0, 0]
    assert sel.z_normalize([2.5]).tolist() == [0]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e3, 1e3)))
def test_z_normalize_moments(v):
    out = sel.z_normalize(v)
    if v.std() > 1e-6:
        assert abs(out.mean()) < 1e-12 * max(1, len(v)) + 1e-12
        assert out.std() == pytest.approx(1.0, abs=1e-9)


def test_final_score_examples():
    c, d, div = np.array([0.3, -1]), np.array([1.1, 0.2]), np.array([-0.4, 2])
    np.testing.assert_array_equal(sel.final_score(c, d, div, 1.0), (c + d) / 2)
    np.testing.assert_array_equal(sel.final_score(c, d, div, 0.0), div)
    assert sel.final_score([1], [1], [1], 0.5).tolist() == [1.0]


def cs(cid, J):
    return sel.CandidateScore(cid, 0, 0, 0, J=J)


def test_select_topk_examples():
    pool = [cs("b", 0.3), cs("a", 0.1), cs("c", 0.5)]
    assert sel.select_topk(pool, 2) == ["a", "b"]
    assert sel.select_topk([cs("y", 0.2), cs("x", 0.2)], 1) == ["x"]
    assert sel.select_topk(pool, 10) == ["a", "b", "c"]
    with pytest.raises(ValueError):
        sel.select_topk([], 1)


# ---------------------------------------------------------------- pool scoring


SMALL = dict(n_normal=190, n_anomaly=10, p_intra=0.05, p_inter=0.002)


@pytest.fixture(scope="module")
def setting():
    spec = SynthSpec(**SMALL, seed=0)
    target = make_synthetic(spec)
    model = dt.train_svdd(target, dt.SvddConfig(epochs=20, hidden_dim=32, embed_dim=16))
    return spec, target, model


def test_self_candidate_scores_zero(setting):
    _, target, model = setting
    [s] = sel.score_candidates(target, model, [("self", target)])
    assert s.s_sim_c == pytest.approx(0.0, abs=1e-12)
    assert s.s_sim_d == pytest.approx(0.0, abs=1e-12)
    assert (s.s_sim_c_hat, s.s_sim_d_hat, s.s_div_hat, s.J) == (0, 0, 0, 0)


def test_shifted_generator_has_larger_center_shift(setting):
    spec, target, model = setting
    gp = generator_params(spec)
    a = make_synthetic(SynthSpec(**SMALL, seed=5))
    b = make_synthetic(SynthSpec(**SMALL, seed=6), mean_offset=3.0 * gp.anomaly_direction)
    scores = sel.score_candidates(target, model, {"a": a, "b": b})
    assert scores[0].s_sim_c < scores[1].s_sim_c


def test_pool_center_shift_tracks_distortion(setting):
    from scipy.stats import spearmanr

    spec, target, model = setting
    graphs, levels = make_candidate_pool(spec, 10, seed=1, shift_scale=4.0, n_nodes=150)
    scores = sel.score_candidates(target, model, [(g.name, g) for g in graphs])
    assert spearmanr(levels, [s.s_sim_c for s in scores]).statistic >= 0.8


def test_dimension_mismatch(setting):
    _, target, model = setting
    bad = make_synthetic(SynthSpec(n_normal=20, n_anomaly=0, feature_dim=5))
    with pytest.raises(ValueError, match="feature dim"):
        sel.score_candidates(target, model, [("bad", bad)])


def test_labeled_all_normal_matches_unlabeled(setting):
    spec, target, model = setting
    graphs, _ = make_candidate_pool(spec, 3, seed=2, shift_scale=3.0, n_nodes=100)
    pool = [(g.name, g) for g in graphs]
    plain = sel.score_candidates(target, model, pool)
    labeled = sel.score_candidates_labeled(target, model, pool)
    for p, q in zip(plain, labeled):
        assert q.J == pytest.approx(p.J, abs=1e-12)
        assert q.labeled and not q.fallback


def permuted(g, seed):
    perm = np.random.default_rng(seed).permutation(g.num_nodes)
    inv = np.argsort(perm)
    return g.replace(edges=inv[g.edges], features=g.features[perm], labels=g.labels[perm])


def test_labeled_set_semantics_and_ordering(setting):
    spec, target, model = setting
    gp = generator_params(spec)
    a = make_synthetic(SynthSpec(**SMALL, seed=11))
    b = make_synthetic(SynthSpec(**SMALL, seed=12), mean_offset=4.0 * gp.anomaly_direction, rewire_level=1.0)
    cfg = sel.SelectionConfig(labeled_mode=True)
    first = sel.score_candidates(target, model, [("a", a), ("b", b)], cfg)
    again = sel.score_candidates(target, model, [("a", permuted(a, 1)), ("b", permuted(b, 2))], cfg)
    assert first[0].J < first[1].J
    for x, y in zip(first, again):
        assert y.J == pytest.approx(x.J, abs=1e-9)
    assert set(first[0].subsets) == {"normal", "abnormal"}


def test_unlabeled_candidate_falls_back(setting):
    _, target, model = setting
    g = make_synthetic(SynthSpec(**SMALL, seed=3))
    scores = sel.score_candidates_labeled(target, model, [("u", g.replace(labels=None)), ("l", g)])
    assert [s.fallback for s in scores] == [True, False]


def test_scores_file_roundtrip(tmp_path):
    scores = [sel.CandidateScore("b", 1.0, 2.0, 3.0, 0.1, 0.2, 0.3, 0.25),
              sel.CandidateScore("a", 1.5, 2.5, 3.5, -0.1, -0.2, -0.3, -0.25)]
    sel.write_scores(tmp_path / "s.json", scores, ["a"], "t", "oc", 0.5, 1)
    doc = json.loads((tmp_path / "s.json").read_text())
    assert [c["id"] for c in doc["candidates"]] == ["a", "b"]
    assert doc["candidates"][0]["selected"] is True
    back = sel.read_scores(tmp_path / "s.json")
    assert {s.candidate_id: s.J for s in back} == {"a": -0.25, "b": 0.25}
