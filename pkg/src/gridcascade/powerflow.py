"""DC power flow and the two DC OPF variants used by the cascade policies.

All quantities at the interface are in MW. Every routine works island by
island: the alive branches partition the buses, and each island is solved
independently with its own slack bus (the lowest-indexed bus hosting a
generator, else the lowest-indexed bus).

The OPFs are written in injection-shift form: branch flows are a linear map
of the island's net bus injections, so the only decision variables are
generator outputs (and per-bus shed amounts for the smart-shed variant).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import lp
from .grid import SHORT_TERM_FACTOR, Network

BALANCE_TOL = 1e-6  # MW; input mismatch accepted by dc_pf
SIGMA_TOL = 1e-6


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    lp_solver: Callable[..., lp.LPResult] = lp.linprog


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True)
class IslandPartition:
    labels: np.ndarray  # island id per bus
    buses: tuple[np.ndarray, ...]
    branches: tuple[np.ndarray, ...]  # alive branches inside each island
    generators: tuple[np.ndarray, ...]

    @property
    def n_islands(self) -> int:
        return len(self.buses)


@dataclass
class FlowSolution:
    theta: np.ndarray
    branch_flow: np.ndarray
    gen_dispatch: np.ndarray
    served_load: np.ndarray
    feasible: bool = True
    # per-island service scale (1.0 unless full service had to be scaled back)
    sigma: np.ndarray = field(default_factory=lambda: np.ones(0))
    # False when full service was infeasible before the sigma fallback
    full_service_feasible: bool = True
    islands: IslandPartition | None = None

    def overloaded(self, net: Network, rating_factor: float = SHORT_TERM_FACTOR, tol: float = 1e-6) -> np.ndarray:
        return np.abs(self.branch_flow) > rating_factor * net.rating_long + tol


def islands(net: Network, alive: Sequence[bool]) -> IslandPartition:
    alive = np.asarray(alive, dtype=bool)
    f, t = net.from_bus[alive], net.to_bus[alive]
    adj = csr_matrix((np.ones(f.size), (f, t)), shape=(net.n_bus, net.n_bus))
    _, raw = connected_components(adj, directed=False)
    # relabel so islands are numbered by their lowest bus
    order = {}
    labels = np.empty(net.n_bus, dtype=np.intp)
    for b, r in enumerate(raw):
        labels[b] = order.setdefault(r, len(order))
    n = len(order)
    br_island = np.where(alive, labels[net.from_bus], -1)
    gen_island = labels[net.gen_bus] if net.generators else np.zeros(0, dtype=np.intp)
    return IslandPartition(
        labels,
        tuple(np.flatnonzero(labels == k) for k in range(n)),
        tuple(np.flatnonzero(br_island == k) for k in range(n)),
        tuple(np.flatnonzero(gen_island == k) for k in range(n)),
    )


def slack_bus(net: Network, buses: np.ndarray, gens: np.ndarray) -> int:
    if gens.size:
        return int(net.gen_bus[gens].min())
    return int(buses.min())


def _reduced_susceptance(net: Network, buses: np.ndarray, branches: np.ndarray, slack: int):
    pos = {int(b): k for k, b in enumerate(buses)}
    nb = buses.size
    B = np.zeros((nb, nb))
    fi = np.array([pos[int(b)] for b in net.from_bus[branches]], dtype=np.intp)
    ti = np.array([pos[int(b)] for b in net.to_bus[branches]], dtype=np.intp)
    y = 1.0 / net.reactance[branches]
    np.add.at(B, (fi, fi), y)
    np.add.at(B, (ti, ti), y)
    np.add.at(B, (fi, ti), -y)
    np.add.at(B, (ti, fi), -y)
    keep = np.arange(nb) != pos[slack]
    return B[np.ix_(keep, keep)], keep, fi, ti, y


def _island_angles(net, buses, branches, slack, p_mw):
    """Angles (rad) for island buses given net injections in MW."""
    theta = np.zeros(buses.size)
    if buses.size == 1:
        return theta
    Bred, keep, *_ = _reduced_susceptance(net, buses, branches, slack)
    try:
        theta[keep] = np.linalg.solve(Bred, p_mw[keep] / net.base_mva)
    except np.linalg.LinAlgError as exc:
        raise PowerFlowError(f"singular susceptance matrix in island with slack {slack}") from exc
    return theta


def ptdf(net: Network, buses: np.ndarray, branches: np.ndarray, slack: int) -> np.ndarray:
    """Flow (MW) on each island branch per MW injected at each island bus, withdrawn at the slack."""
    if branches.size == 0:
        return np.zeros((0, buses.size))
    Bred, keep, fi, ti, y = _reduced_susceptance(net, buses, branches, slack)
    X = np.zeros((buses.size, buses.size))
    X[np.ix_(keep, keep)] = np.linalg.inv(Bred)
    return y[:, None] * (X[fi] - X[ti])


def _injections(net: Network, dispatch: np.ndarray, served: np.ndarray) -> np.ndarray:
    p = -np.asarray(served, dtype=float).copy()
    np.add.at(p, net.gen_bus, dispatch)
    return p


def _solve_flows(net, part, dispatch, served) -> FlowSolution:
    p = _injections(net, dispatch, served)
    theta = np.zeros(net.n_bus)
    flow = np.zeros(net.n_branch)
    for buses, brs, gens in zip(part.buses, part.branches, part.generators):
        mismatch = p[buses].sum()
        if abs(mismatch) > BALANCE_TOL * max(1.0, np.abs(served[buses]).sum()):
            raise PowerFlowError(f"island with buses {buses.tolist()} unbalanced by {mismatch:.6g} MW")
        slack = slack_bus(net, buses, gens)
        theta[buses] = _island_angles(net, buses, brs, slack, p[buses])
    alive_any = np.concatenate(part.branches) if part.branches else np.zeros(0, dtype=np.intp)
    alive_any = alive_any.astype(np.intp)
    flow[alive_any] = (theta[net.from_bus[alive_any]] - theta[net.to_bus[alive_any]]) / net.reactance[alive_any] * net.base_mva
    return FlowSolution(theta, flow, np.asarray(dispatch, dtype=float), np.asarray(served, dtype=float),
                        True, np.ones(part.n_islands), True, part)


def dc_pf(net: Network, alive: Sequence[bool], demand: Sequence[float], dispatch: Sequence[float]) -> FlowSolution:
    """DC power flow for a balanced operating point (every island must balance)."""
    part = islands(net, alive)
    return _solve_flows(net, part, np.asarray(dispatch, dtype=float), np.asarray(demand, dtype=float))


# ---------------------------------------------------------------------------
# OPF

def _rebalance(dispatch, gens, pmin, pmax, target):
    """Push the tiny LP residual onto the generator with the most room."""
    if gens.size == 0:
        return dispatch
    r = target - dispatch[gens].sum()
    if r == 0.0:
        return dispatch
    room = (pmax[gens] - dispatch[gens]) if r > 0 else (dispatch[gens] - pmin[gens])
    k = gens[int(np.argmax(room))]
    dispatch[k] += r
    return dispatch


def _full_service_lp(net, buses, brs, gens, d, rating_factor, enforce_limits, opts):
    """Cheapest dispatch serving island demand ``d`` in full; returns LPResult."""
    ng = gens.size
    cost = net.gen_cost[gens]
    A_eq = np.ones((1, ng))
    b_eq = np.array([d.sum()])
    A_ub = b_ub = None
    if enforce_limits and brs.size:
        slack = slack_bus(net, buses, gens)
        H = ptdf(net, buses, brs, slack)
        pos = np.searchsorted(buses, net.gen_bus[gens])
        HG = H[:, pos]
        F = rating_factor * net.rating_long[brs]
        Hd = H @ d
        A_ub = np.vstack([HG, -HG])
        b_ub = np.concatenate([F + Hd, F - Hd])
    return opts.lp_solver(cost, A_ub, b_ub, A_eq, b_eq, net.p_min[gens], net.p_max[gens],
                          feas_tol=opts.feas_tol, opt_tol=opts.opt_tol)


def dc_opf_full_service(net: Network, alive: Sequence[bool], demand: Sequence[float], *,
                        rating_factor: float = SHORT_TERM_FACTOR, enforce_limits: bool = True,
                        options: SolverOptions = DEFAULT_OPTIONS) -> FlowSolution:
    """Least-cost dispatch that serves all demand, scaling service back uniformly if it cannot.

    Per island the largest ``sigma`` in [0, 1] for which ``sigma * demand`` is
    servable within generator bounds (and branch limits, unless
    ``enforce_limits`` is off) is found by bisection to ``SIGMA_TOL``.
    """
    demand = np.asarray(demand, dtype=float)
    part = islands(net, alive)
    dispatch = np.zeros(len(net.generators))
    served = np.zeros(net.n_bus)
    sigma = np.ones(part.n_islands)
    full_ok = True
    for k, (buses, brs, gens) in enumerate(zip(part.buses, part.branches, part.generators)):
        d = demand[buses]
        if gens.size == 0 or net.p_max[gens].sum() <= 0.0:
            sigma[k] = 0.0
            full_ok = full_ok and d.sum() <= 0.0
            continue

        def solve(s):
            return _full_service_lp(net, buses, brs, gens, s * d, rating_factor, enforce_limits, options)

        res = solve(1.0)
        s_best = 1.0
        if not res.success:
            full_ok = False
            lo_res = solve(0.0)
            if not lo_res.success:
                # cannot even idle within bounds: island blacks out
                sigma[k] = 0.0
                continue
            lo, hi, res = 0.0, 1.0, lo_res
            while hi - lo > SIGMA_TOL:
                mid = 0.5 * (lo + hi)
                r = solve(mid)
                if r.success:
                    lo, res = mid, r
                else:
                    hi = mid
            s_best = lo
        sigma[k] = s_best
        dispatch[gens] = res.x
        served[buses] = s_best * d
        _rebalance(dispatch, gens, net.p_min, net.p_max, served[buses].sum())
    sol = _solve_flows(net, part, dispatch, served)
    sol.sigma = sigma
    sol.full_service_feasible = full_ok
    return sol


def smart_shed_epsilon(shed_priority: np.ndarray, gen_cost: np.ndarray) -> float:
    cmax = float(np.max(gen_cost, initial=0.0))
    if cmax <= 0:
        return 0.0
    return 1e-6 * float(np.max(shed_priority)) / cmax


def dc_opf_smart_shed(net: Network, alive: Sequence[bool], demand: Sequence[float],
                      shed_priority: Sequence[float] | None = None, *,
                      rating_factor: float = SHORT_TERM_FACTOR,
                      options: SolverOptions = DEFAULT_OPTIONS) -> FlowSolution:
    """Dispatch plus per-bus shedding minimising priority-weighted shed within all branch limits."""
    demand = np.asarray(demand, dtype=float)
    prio = net.shed_priority if shed_priority is None else np.asarray(shed_priority, dtype=float)
    eps_gen = smart_shed_epsilon(prio, net.gen_cost)
    part = islands(net, alive)
    dispatch = np.zeros(len(net.generators))
    served = np.zeros(net.n_bus)
    for buses, brs, gens in zip(part.buses, part.branches, part.generators):
        d = demand[buses]
        if gens.size == 0 or net.p_max[gens].sum() <= 0.0:
            continue
        ng, nb = gens.size, buses.size
        c = np.concatenate([eps_gen * net.gen_cost[gens], prio[buses]])
        A_eq = np.ones((1, ng + nb))
        b_eq = np.array([d.sum()])
        A_ub = b_ub = None
        if brs.size:
            slack = slack_bus(net, buses, gens)
            H = ptdf(net, buses, brs, slack)
            HG = H[:, np.searchsorted(buses, net.gen_bus[gens])]
            M = np.hstack([HG, H])
            F = rating_factor * net.rating_long[brs]
            Hd = H @ d
            A_ub = np.vstack([M, -M])
            b_ub = np.concatenate([F + Hd, F - Hd])
        lo = np.concatenate([net.p_min[gens], np.zeros(nb)])
        hi = np.concatenate([net.p_max[gens], d])
        res = options.lp_solver(c, A_ub, b_ub, A_eq, b_eq, lo, hi,
                                feas_tol=options.feas_tol, opt_tol=options.opt_tol)
        if not res.success:
            continue  # only possible with p_min > 0; island blacks out
        dispatch[gens] = res.x[:ng]
        served[buses] = np.clip(d - res.x[ng:], 0.0, d)
        _rebalance(dispatch, gens, net.p_min, net.p_max, served[buses].sum())
    return _solve_flows(net, part, dispatch, served)
