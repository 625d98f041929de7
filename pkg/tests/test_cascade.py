import json
from itertools import combinations

import numpy as np
import pytest

from gridcascade.cascade import (CascadeSample, balance_proportional, generate_pool, read_pool, run_cascade,
                                 sample_pairs, split_indices, write_pool)
from gridcascade.grid import scale_loads
from gridcascade.powerflow import dc_opf_full_service

from conftest import make_net


def test_no_overload_terminates_immediately():
    net = make_net([0.0, 10.0, 10.0, 10.0],
                   [(0, 1, 0.1, 100), (1, 2, 0.1, 100), (2, 3, 0.1, 100), (0, 3, 0.1, 100), (0, 2, 0.1, 100)],
                   [(0, 100.0)])
    s = run_cascade(net, 1.0, [0, 4])
    assert s.termination_time == 2  # initial state plus its repeat
    assert s.states[0] == s.states[1]
    assert s.shed_mw == [[0.0] * 4]
    assert s.load_served == [[1] * 4]


def test_overload_trips_and_islands():
    # a 30 MW line feeds bus 2 once the parallel path is cut
    net = make_net([0.0, 0.0, 50.0], [(0, 1, 0.1, 100), (1, 2, 0.1, 30), (0, 2, 0.1, 100), (0, 2, 0.1, 100)],
                   [(0, 100.0)])
    s = run_cascade(net, 1.0, [2, 3])
    assert s.S.tolist() == [[1, 1, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0]]
    assert s.load_served == [[1, 1, 1], [1, 1, 0]]
    assert s.shed_mw[1][2] == pytest.approx(50.0)


def test_invalid_pair_rejected(net30):
    for bad in ([1, 1], [0, 41], [3]):
        with pytest.raises(ValueError):
            run_cascade(net30, 1.0, bad)
    with pytest.raises(ValueError):
        run_cascade(net30, 1.0, [0, 1], "bogus")


@pytest.mark.parametrize("policy", ["none", "redispatch-full", "redispatch-smart"])
def test_sample_invariants(net30, policy):
    rng = np.random.default_rng(5)
    for _ in range(8):
        pair = rng.choice(41, 2, replace=False)
        s = run_cascade(net30, 1.6, pair, policy)
        S = s.S
        assert np.all(S[1:] <= S[:-1])
        assert sorted(np.flatnonzero(S[0] == 0).tolist()) == sorted(pair.tolist())
        assert s.termination_time == len(s.states) >= 2
        assert len(s.load_served) == len(s.shed_mw) == s.termination_time - 1
        assert np.array_equal(S[-1], S[-2])
        for row_l, row_s in zip(s.load_served, s.shed_mw):
            assert all((l == 1) == (x == 0.0) for l, x in zip(row_l, row_s))
        if policy == "none":
            # progress: every non-terminal step kills at least one branch
            assert all((S[t] != S[t + 1]).any() for t in range(len(S) - 2))


def test_smart_policy_never_propagates(net30):
    for pair in [(0, 1), (5, 9), (12, 30), (39, 40)]:
        s = run_cascade(net30, 1.8, pair, "redispatch-smart")
        assert s.termination_time == 2
        assert np.array_equal(s.S[0], s.S[1])


def test_replay_is_bit_identical(net30):
    a = run_cascade(net30, 1.6, [3, 17], "none", rng_seed=42)
    b = run_cascade(net30, 1.6, [3, 17], "none", rng_seed=42)
    assert a.to_json() == b.to_json()


def test_proportional_balancing_conserves(net30):
    rng = np.random.default_rng(9)
    from gridcascade.cascade import base_dispatch
    for _ in range(30):
        alive = rng.random(41) > 0.25
        demand = scale_loads(net30, rng.uniform(0.9, 1.8)).load
        sol = balance_proportional(net30, alive, demand, base_dispatch(net30, demand))
        for buses, gens in zip(sol.islands.buses, sol.islands.generators):
            assert abs(sol.gen_dispatch[gens].sum() - sol.served_load[buses].sum()) <= 1e-9
            d = demand[buses]
            served = sol.served_load[buses]
            if d.sum() > 0 and served.sum() > 0:
                # every bus in an island sheds the same fraction
                frac = served[d > 0] / d[d > 0]
                assert np.ptp(frac) <= 1e-12


def test_pairs_uniform_without_replacement():
    pairs = sample_pairs(41, 300, 0)
    assert all(len(set(p)) == 2 and all(0 <= i < 41 for i in p) for p, _ in pairs)
    assert sample_pairs(41, 300, 0) == pairs
    assert sample_pairs(41, 300, 1) != pairs
    # rough uniformity: each branch appears about 2 * 300 / 41 times
    counts = np.bincount([i for p, _ in sample_pairs(41, 20000, 3) for i in p], minlength=41)
    assert counts.min() > 0.85 * counts.mean() and counts.max() < 1.15 * counts.mean()
    seen = {tuple(sorted(p)) for p, _ in sample_pairs(5, 4000, 2)}
    assert seen == set(combinations(range(5), 2))


def test_split_sizes():
    tr, te = split_indices(300)
    assert (len(tr), len(te)) == (270, 30)
    assert sorted(tr + te) == list(range(300))
    with pytest.raises(ValueError):
        generate_pool(make_net([0, 1], [(0, 1, 0.1, 10)], [(0, 5)]), 1.0, 1)


def test_pool_deterministic_and_parallel_safe(net30):
    a = generate_pool(net30, 1.5, 24, "none", 9, workers=1)
    b = generate_pool(net30, 1.5, 24, "none", 9, workers=3)
    assert [s.to_json() for s in a.samples] == [s.to_json() for s in b.samples]
    assert a.meta == b.meta
    assert [s.sample_id for s in a.samples] == list(range(24))


def test_low_loading_summary(net30):
    pool = generate_pool(net30, 0.9, 60, "none", 0)
    summ = pool.meta["summary"]
    assert 0.0 <= summ["no_propagation_fraction"] <= 1.0
    frac = np.mean([s.termination_time == 2 for s in pool.samples])
    assert summ["no_propagation_fraction"] == pytest.approx(frac)


def test_full_redispatch_marks_fallback(net30):
    # at 1.8x the intact network cannot serve everything
    demand = scale_loads(net30, 1.8).load
    assert not dc_opf_full_service(net30, np.ones(41, bool), demand).full_service_feasible
    s = run_cascade(net30, 1.8, [0, 40], "redispatch-full")
    assert 1 in s.fallback_steps


def test_pool_file_roundtrip(tmp_path, pool15, net30):
    path = tmp_path / "pool.jsonl"
    write_pool(str(path), pool15)
    back = read_pool(str(path), net30)
    assert [s.to_json() for s in back.samples] == [s.to_json() for s in pool15.samples]
    assert back.train == pool15.train and back.test == pool15.test
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) >= {"sample_id", "loading_c", "initial_failures", "states", "load_served", "shed_mw",
                          "termination_time", "policy"}
    assert isinstance(CascadeSample.from_dict(first), CascadeSample)


def test_pool_case_mismatch_refused(tmp_path, pool15):
    path = tmp_path / "pool.jsonl"
    write_pool(str(path), pool15)
    other = make_net([0, 1], [(0, 1, 0.1, 10)], [(0, 5)])
    with pytest.raises(ValueError, match="generated for case"):
        read_pool(str(path), other)


def test_corrupt_pool_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"sample_id": 0}\nnot json\n')
    with pytest.raises(ValueError, match="bad.jsonl:1"):
        read_pool(str(path))
