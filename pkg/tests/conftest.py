import numpy as np
import pytest

from gridcascade.cascade import CascadeSample, generate_pool
from gridcascade.grid import Branch, Bus, Generator, Network, ieee30


def make_net(loads, branches, gens, base_mva=100.0):
    """Network from plain tuples: branches (f, t, x, rating), gens (bus, pmax[, pmin, cost])."""
    buses = [Bus(i, float(p)) for i, p in enumerate(loads)]
    brs = [Branch(k, f, t, x, r, r / base_mva) for k, (f, t, x, r) in enumerate(branches)]
    gs = []
    for k, g in enumerate(gens):
        bus, pmax, pmin, cost = (tuple(g) + (0.0, 1.0))[:4]
        gs.append(Generator(k, bus, float(pmax), float(pmin), float(cost)))
    return Network(buses, brs, gs, base_mva)


def make_sample(states, served=None, shed=None, c=1.0, sample_id=0, policy="none"):
    states = [list(map(int, s)) for s in states]
    T = len(states)
    if served is None:
        served = [[1] for _ in range(T - 1)]
    if shed is None:
        shed = [[0.0 if v else 1.0 for v in row] for row in served]
    init = [i for i, v in enumerate(states[0]) if v == 0]
    return CascadeSample(sample_id, c, init, states, [list(map(int, r)) for r in served], shed, T, policy)


def random_toy_pool(rng, n_link, n_bus, k_samples, c=1.0, max_T=6):
    """Random monotone state sequences ending in a repeated state, with random service vectors."""
    out = []
    for k in range(k_samples):
        s = np.ones(n_link, dtype=int)
        s[rng.choice(n_link, size=min(2, n_link), replace=False)] = 0
        seq = [s.copy()]
        for _ in range(rng.integers(0, max_T - 1)):
            kill = (rng.random(n_link) < 0.3) & (s == 1)
            if not kill.any():
                break
            s = s & ~kill
            seq.append(s.copy())
        seq.append(s.copy())
        L = (rng.random((len(seq) - 1, n_bus)) < 0.7).astype(int)
        out.append(make_sample(seq, L.tolist(), c=c, sample_id=k))
    return out


@pytest.fixture(scope="session")
def net30():
    return ieee30()


@pytest.fixture(scope="session")
def pool15(net30):
    return generate_pool(net30, 1.5, 80, "none", 11)


@pytest.fixture(scope="session")
def ring3():
    # equal reactances, generator at bus 0, load at bus 2
    return make_net([0.0, 0.0, 90.0], [(0, 1, 0.1, 100.0), (1, 2, 0.1, 100.0), (0, 2, 0.1, 100.0)], [(0, 200.0)])


# one line per acceptance criterion, filled by test_acceptance and printed at the end of the run
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES.values():
            terminalreporter.write_line(line)
