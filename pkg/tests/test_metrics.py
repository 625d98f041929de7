import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridcascade.cascade import generate_pool
from gridcascade.grid import line_graph_distance
from gridcascade.metrics import (criticality, ever_shed, failure_times, link_accuracy, link_fail_loss,
                                 load_shed_loss, local_influence_loss, pool_losses, shed_accuracy)
from gridcascade.train import InfluenceModelD, InfluenceModelE, ThresholdPool, train

from conftest import make_sample


def test_failure_times():
    S = [[0, 1, 1], [0, 0, 1], [0, 0, 1]]
    assert failure_times(np.array(S)).tolist() == [1, 2, 0]


def test_link_fail_loss_examples():
    assert link_fail_loss(np.array([[0]]), [1.0]) == pytest.approx(math.exp(-0.2))
    assert link_fail_loss(np.ones((2, 3)), [1, 2, 3]) == 0.0
    S = np.array([[0, 1], [0, 0], [0, 0]])
    assert link_fail_loss(S, [2.0, 3.0]) == pytest.approx(2 * math.exp(-0.2) + 3 * math.exp(-0.4))
    assert link_fail_loss(S, [2.0, 3.0], include_initial=False) == pytest.approx(3 * math.exp(-0.4))


def test_load_shed_loss_examples():
    assert load_shed_loss([[0.0, 0.0]], [1, 1]) == 0.0
    assert load_shed_loss([[0.0], [10.0]], [1.0]) == pytest.approx(10 * math.exp(-0.4))
    assert load_shed_loss([], [1.0]) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=4, max_size=4), st.floats(0, 10))
def test_load_shed_loss_linear(x, a):
    sh = np.array(x).reshape(2, 2)
    assert load_shed_loss(a * sh, [1, 2]) == pytest.approx(a * load_shed_loss(sh, [1, 2]), rel=1e-9, abs=1e-9)


def test_link_fail_loss_monotone_in_failures():
    rng = np.random.default_rng(0)
    for _ in range(50):
        S = np.ones((3, 6), int)
        S[1:, rng.integers(6)] = 0
        more = S.copy()
        more[2, rng.integers(6)] = 0
        w = rng.uniform(0.1, 2, 6)
        assert link_fail_loss(more, w) >= link_fail_loss(S, w)


def test_local_influence_loss(net30):
    K = line_graph_distance(net30)
    assert local_influence_loss(np.eye(41), K) == 0.0
    assert local_influence_loss(np.full((41, 41), 1 / 41), K) == pytest.approx(K.mean() * 41)
    with pytest.raises(ValueError, match="dimension"):
        local_influence_loss(np.eye(3), K)
    perm = np.random.default_rng(0).permutation(41)
    D = np.random.default_rng(1).dirichlet(np.ones(41), size=41)
    assert local_influence_loss(D[perm][:, perm], K[perm][:, perm]) == pytest.approx(local_influence_loss(D, K))


def _model(A11, A01, D):
    n = len(D)
    tp = ThresholdPool(np.array([1.0]), np.zeros((1, 0), int), np.ones((1, n)), n)
    return InfluenceModelD(np.array(A11), np.array(A01), np.array(D), tp)


def test_criticality_hand_computed():
    assert np.all(criticality(_model(np.eye(2) * 0.5, np.eye(2) * 0.5, np.eye(2))).cd == 0)
    A01 = np.zeros((2, 2))
    rep = criticality(_model([[0.5, 0.1], [0.3, 0.5]], A01, [[0.6, 0.4], [0.2, 0.8]]))
    # C(j) = sum_i d_ij (A11 - A01)_ji
    np.testing.assert_allclose(rep.cd, [0.6 * 0.5 + 0.2 * 0.1, 0.4 * 0.3 + 0.8 * 0.5])
    assert rep.rank_cd == [1, 0]
    rep = criticality(_model(np.eye(2) * 0.5, A01, np.eye(2)))
    np.testing.assert_allclose(rep.cd, [0.5, 0.5])
    assert rep.rank_cd == [0, 1]


def test_criticality_bus_side():
    tp = ThresholdPool(np.array([1.0]), np.zeros((1, 0), int), np.ones((1, 1)), 2)
    me = InfluenceModelE(np.array([[0.9], [0.6]]), np.array([[0.5], [0.5]]), np.array([[0.25, 0.75]]), tp)
    rep = criticality(_model(np.eye(2), np.eye(2), np.eye(2)), me)
    np.testing.assert_allclose(rep.ce, [0.25 * 0.4, 0.75 * 0.1])


def test_top_critical_links_stable(net30):
    tops = []
    for seed in (21, 22):
        pool = generate_pool(net30, 1.5, 150, "none", seed)
        rep = criticality(train(pool.subset("train"), 41, 30).model_d)
        tops.append(set(rep.rank_cd[:5]))
    assert len(tops[0] & tops[1]) >= 3


def test_accuracies():
    assert link_accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert link_accuracy([1, 0, 1], [0, 1, 0]) == 0.0
    a = np.zeros(30, int)
    b = a.copy()
    b[4] = 1
    assert shed_accuracy(a, b) == pytest.approx(29 / 30)
    assert shed_accuracy(b, a) == shed_accuracy(a, b)
    with pytest.raises(ValueError):
        link_accuracy([1], [1, 0])
    with pytest.raises(ValueError):
        shed_accuracy([1], [1, 0])


def test_ever_shed():
    assert ever_shed(np.array([[1, 1, 0], [1, 0, 1]])).tolist() == [0, 1, 1]
    assert ever_shed(np.zeros((0, 3)), 3).tolist() == [0, 0, 0]


def test_pool_losses_mean():
    pool = [make_sample([[0, 1], [0, 0], [0, 0]], shed=[[0.0], [5.0]]),
            make_sample([[1, 0], [1, 0]], shed=[[0.0]], sample_id=1)]
    rep = pool_losses(pool, np.array([1.0, 1.0]), np.array([1.0]))
    per = [p["link_fail_loss"] for p in rep.per_sample]
    assert rep.link_fail_loss == pytest.approx(np.mean(per))
    assert rep.load_shed_loss == pytest.approx(5 * math.exp(-0.4) / 2)
    assert rep.local_influence_loss is None
