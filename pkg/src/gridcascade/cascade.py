"""Cascading-failure oracle and Monte Carlo sample pools.

Time convention
---------------
``states[0]`` is the state right after the two exogenous failures (time 1).
At each evaluated state the oracle balances every island, solves flows and
records the service vector ``load_served[t]`` / ``shed_mw[t]`` for the
transition out of that state. Every overloaded branch trips at once. When
nothing overloads the cascade has stopped and the unchanged state is
appended once more, so a sample always ends with two identical states and
``len(load_served) == termination_time - 1``.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grid import LoadingProfile, Network, scale_loads
from .powerflow import (
    DEFAULT_OPTIONS,
    FlowSolution,
    SolverOptions,
    dc_opf_full_service,
    dc_opf_smart_shed,
    dc_pf,
    islands,
)

log = logging.getLogger(__name__)

POLICIES = ("none", "redispatch-full", "redispatch-smart")
SHED_TOL = 1e-7  # MW below which a bus counts as fully served
POOL_SCHEMA = 1


@dataclass
class CascadeSample:
    sample_id: int
    loading_c: float
    initial_failures: list[int]
    states: list[list[int]]
    load_served: list[list[int]]
    shed_mw: list[list[float]]
    termination_time: int
    policy: str
    seed: int = 0
    # steps (1-based) where full service was infeasible before scaling back
    fallback_steps: list[int] = field(default_factory=list)

    @property
    def S(self) -> np.ndarray:
        return np.asarray(self.states, dtype=np.int8)

    @property
    def L(self) -> np.ndarray:
        return np.asarray(self.load_served, dtype=np.int8).reshape(len(self.load_served), -1)

    def failure_times(self) -> np.ndarray:
        """1-based first time each branch is dead; 0 for branches that never fail."""
        S = self.S
        dead = S == 0
        first = np.argmax(dead, axis=0) + 1
        return np.where(dead.any(axis=0), first, 0)

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeSample":
        return cls(**d)


@dataclass
class SamplePool:
    samples: list[CascadeSample]
    network: Network | None = None
    train: list[int] = field(default_factory=list)
    test: list[int] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def subset(self, which: str) -> list[CascadeSample]:
        idx = {"train": self.train, "test": self.test, "all": range(len(self.samples))}[which]
        return [self.samples[i] for i in idx]


def base_dispatch(net: Network, demand: np.ndarray) -> np.ndarray:
    """Pre-contingency generation: each unit's share of demand proportional to its capacity, capped at p_max."""
    cap = net.p_max.sum()
    if cap <= 0:
        return np.zeros(len(net.generators))
    share = demand.sum() / cap
    return np.clip(net.p_max * share, net.p_min, net.p_max)


def balance_proportional(net: Network, alive: np.ndarray, demand: np.ndarray, base: np.ndarray) -> FlowSolution:
    """Balance each island without re-dispatch, then solve DC flows.

    Excess generation is curtailed proportionally above ``p_min``; excess
    demand is shed by the same fraction at every island bus. Islands that
    cannot be balanced (no generation, or ``p_min`` above demand) black out.
    """
    part = islands(net, alive)
    dispatch = np.zeros_like(base)
    served = np.zeros_like(demand)
    for buses, gens in zip(part.buses, part.generators):
        d = demand[buses]
        D = d.sum()
        if gens.size == 0:
            continue
        g = base[gens]
        G = g.sum()
        if G > D:
            pmin = net.p_min[gens]
            room = G - pmin.sum()
            if D < pmin.sum() or room <= 0:
                continue
            dispatch[gens] = pmin + (g - pmin) * ((D - pmin.sum()) / room)
            served[buses] = d
        else:
            dispatch[gens] = g
            served[buses] = d * (G / D) if D > 0 else d
        # exact balance for the flow solve
        gap = served[buses].sum() - dispatch[gens].sum()
        if gap:
            dispatch[gens[int(np.argmax(dispatch[gens]))]] += gap
    return dc_pf(net, alive, served, dispatch)


def _redispatch_full(net, alive, demand, options) -> tuple[FlowSolution, bool]:
    """Full-service re-dispatch: respect branch limits when possible, otherwise serve in full anyway.

    Islands where full service within limits is infeasible are dispatched at
    least cost ignoring branch limits (so overloads may follow); service is
    only scaled back there when generation capacity itself falls short.
    """
    lim = dc_opf_full_service(net, alive, demand, options=options)
    if lim.full_service_feasible:
        return lim, True
    free = dc_opf_full_service(net, alive, demand, enforce_limits=False, options=options)
    part = lim.islands
    dispatch, served = lim.gen_dispatch.copy(), lim.served_load.copy()
    for k, (buses, gens) in enumerate(zip(part.buses, part.generators)):
        if lim.sigma[k] < 1.0:
            dispatch[gens] = free.gen_dispatch[gens]
            served[buses] = free.served_load[buses]
    return dc_pf(net, alive, served, dispatch), False


def run_cascade(net: Network, profile: LoadingProfile | float, initial_failures: Sequence[int],
                policy: str = "none", rng_seed: int = 0, *, sample_id: int = 0,
                options: SolverOptions = DEFAULT_OPTIONS) -> CascadeSample:
    c = profile.c if isinstance(profile, LoadingProfile) else float(profile)
    init = sorted(int(i) for i in initial_failures)
    if len(set(init)) != 2 or not all(0 <= i < net.n_branch for i in init):
        raise ValueError(f"need two distinct valid branch ids, got {list(initial_failures)}")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    demand = scale_loads(net, c).load
    base = base_dispatch(net, demand)

    s = np.ones(net.n_branch, dtype=bool)
    s[init] = False
    states, served_seq, shed_seq, fallback = [s.copy()], [], [], []
    while True:
        t = len(states)
        if policy == "none":
            sol = balance_proportional(net, s, demand, base)
        elif policy == "redispatch-full":
            sol, ok = _redispatch_full(net, s, demand, options)
            if not ok:
                fallback.append(t)
        else:
            sol = dc_opf_smart_shed(net, s, demand, options=options)
        shed = demand - sol.served_load
        shed[shed < SHED_TOL] = 0.0
        served_seq.append((shed == 0.0).astype(int).tolist())
        shed_seq.append(shed.tolist())
        over = sol.overloaded(net) & s
        if policy == "redispatch-smart" and over.any():
            log.warning("smart-shed OPF left overloads on %s", np.flatnonzero(over).tolist())
            over[:] = False
        if not over.any() or not s.any():
            states.append(s.copy())
            break
        s = s & ~over
        states.append(s.copy())
    return CascadeSample(
        sample_id=sample_id,
        loading_c=c,
        initial_failures=init,
        states=[x.astype(int).tolist() for x in states],
        load_served=served_seq,
        shed_mw=shed_seq,
        termination_time=len(states),
        policy=policy,
        seed=int(rng_seed),
        fallback_steps=fallback,
    )


def sample_pairs(n_branch: int, n_samples: int, master_seed: int) -> list[tuple[list[int], int]]:
    """Initial failure pair and per-sample seed for each sample.

    Sample ``k`` draws from the ``k``-th child of ``SeedSequence(master_seed)``:
    two distinct branches uniformly at random, plus a 32-bit seed recorded in
    the sample.
    """
    out = []
    for child in np.random.SeedSequence(master_seed).spawn(n_samples):
        rng = np.random.default_rng(child)
        pair = sorted(int(i) for i in rng.choice(n_branch, size=2, replace=False))
        out.append((pair, int(child.generate_state(1)[0])))
    return out


def split_indices(n: int, train_fraction: float = 0.9) -> tuple[list[int], list[int]]:
    if not 0 < train_fraction < 1:
        raise ValueError("train fraction must lie in (0, 1)")
    n_train = int(np.floor(round(n * train_fraction, 9)))
    n_train = min(max(n_train, 1), n - 1)
    return list(range(n_train)), list(range(n_train, n))


def _run_one(args):
    net, c, pair, seed, policy, sid, options = args
    return run_cascade(net, c, pair, policy, seed, sample_id=sid, options=options)


def generate_pool(net: Network, profile: LoadingProfile | float, n_samples: int = 300, policy: str = "none",
                  master_seed: int = 0, *, train_fraction: float = 0.9, workers: int | None = None,
                  options: SolverOptions = DEFAULT_OPTIONS) -> SamplePool:
    if n_samples < 2:
        raise ValueError("need at least two samples")
    c = profile.c if isinstance(profile, LoadingProfile) else LoadingProfile(float(profile)).c
    jobs = [(net, c, pair, seed, policy, k, options)
            for k, (pair, seed) in enumerate(sample_pairs(net.n_branch, n_samples, master_seed))]
    workers = _default_workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            samples = list(ex.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        samples = [_run_one(j) for j in jobs]
    train, test = split_indices(n_samples, train_fraction)
    meta = {
        "schema": POOL_SCHEMA,
        "case_hash": net.case_hash,
        "loading_c": c,
        "policy": policy,
        "master_seed": int(master_seed),
        "n_samples": n_samples,
        "train_fraction": train_fraction,
        "summary": pool_summary(samples),
    }
    return SamplePool(samples, net, train, test, meta)


def _default_workers() -> int:
    return int(os.environ.get("GRIDCASCADE_WORKERS", "1"))


def pool_summary(samples: Iterable[CascadeSample]) -> dict:
    samples = list(samples)
    if not samples:
        return {}
    T = np.array([s.termination_time for s in samples])
    fails = np.array([sum(1 for x in s.states[-1] if x == 0) - 2 for s in samples])
    return {
        "no_propagation_fraction": float(np.mean(T == 2)),
        "mean_termination_time": float(T.mean()),
        "mean_cascade_failures": float(fails.mean()),
        "shed_fraction": float(np.mean([any(0 in l for l in s.load_served) for s in samples])),
    }


# ---------------------------------------------------------------------------
# files

def manifest_path(pool_path: str) -> str:
    return str(pool_path) + ".manifest.json"


def write_pool(path: str, pool: SamplePool, extra: dict | None = None) -> None:
    with open(path, "w") as fh:
        for s in pool.samples:
            fh.write(s.to_json() + "\n")
    manifest = dict(pool.meta, train=pool.train, test=pool.test, **(extra or {}))
    with open(manifest_path(path), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_pool(path: str, net: Network | None = None) -> SamplePool:
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                samples.append(CascadeSample.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: corrupt sample record ({exc})") from None
    meta: dict = {}
    if os.path.exists(manifest_path(path)):
        with open(manifest_path(path)) as fh:
            meta = json.load(fh)
    if meta.get("schema", POOL_SCHEMA) != POOL_SCHEMA:
        raise ValueError(f"{path}: pool schema {meta.get('schema')} unsupported (expected {POOL_SCHEMA})")
    train = meta.pop("train", None)
    test = meta.pop("test", None)
    if train is None:
        train, test = split_indices(len(samples), meta.get("train_fraction", 0.9))
    if net is not None and meta.get("case_hash") not in (None, net.case_hash):
        raise ValueError(f"{path}: pool was generated for case {meta['case_hash']}, not {net.case_hash}")
    return SamplePool(samples, net, list(train), list(test), meta)
