"""Training of the flow-free influence models.

Two models are learned from a pool of oracle cascades:

* the link model ``(A11, A01, D, eps)`` predicting which branches are alive
  at the next step, and
* the load model ``(B11, B01, E, delta)`` predicting which buses are fully
  served at the current step.

Orientation: ``A11[j, i]`` is the probability that link ``i`` is alive at
``t+1`` given link ``j`` alive at ``t`` (``A01`` the same given ``j`` dead).
``D[i, j]`` is the weight of link ``j`` in the prediction for link ``i``, so
rows of ``D`` (and of ``E``, bus by link) lie on the probability simplex and

    p_i = sum_j D[i, j] * (A11[j, i] * s_j + A01[j, i] * (1 - s_j)).
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import kernels
from .cascade import CascadeSample

log = logging.getLogger(__name__)

ALIVE_DEFAULT = 1.0  # A11/B11 entries with no observations
DEAD_DEFAULT = 0.5  # A01/B01 entries with no observations
MODEL_SCHEMA = 1
# Thresholds taken from an observed failure or shed sit this far above the
# boundary probability so that the >= test reproduces the event on exact ties.
TIE_MARGIN = 1e-9


# ---------------------------------------------------------------------------
# transition probabilities

def estimate_A(samples: Sequence[CascadeSample], n_branch: int) -> tuple[np.ndarray, np.ndarray]:
    C1, C11, C0, C01 = (np.zeros((n_branch, n_branch), dtype=np.int64) for _ in range(4))
    for s in samples:
        kernels.transition_counts(s.S, C1, C11, C0, C01)
    return _ratio(C11, C1, ALIVE_DEFAULT), _ratio(C01, C0, DEAD_DEFAULT)


def estimate_B(samples: Sequence[CascadeSample], n_branch: int, n_bus: int) -> tuple[np.ndarray, np.ndarray]:
    F1 = np.zeros(n_branch, dtype=np.int64)
    F0 = np.zeros(n_branch, dtype=np.int64)
    F11 = np.zeros((n_branch, n_bus), dtype=np.int64)
    F01 = np.zeros((n_branch, n_bus), dtype=np.int64)
    for s in samples:
        m = len(s.load_served)
        if m == 0:
            continue
        S = s.S[:m].astype(np.int64)
        L = s.L.astype(np.int64)
        F1 += S.sum(axis=0)
        F0 += (1 - S).sum(axis=0)
        F11 += S.T @ L
        F01 += (1 - S).T @ L
    return (_ratio(F11, np.broadcast_to(F1[:, None], F11.shape), ALIVE_DEFAULT),
            _ratio(F01, np.broadcast_to(F0[:, None], F01.shape), DEAD_DEFAULT))


def _ratio(num, den, default):
    out = np.full(num.shape, default, dtype=float)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def affine_form(M: np.ndarray, P11: np.ndarray, P01: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(W, beta)`` with ``p = beta + W @ s`` for weight matrix ``M`` (entity x link)."""
    W = M * (P11 - P01).T
    beta = (M * P01.T).sum(axis=1)
    return W, beta


# ---------------------------------------------------------------------------
# simplex-constrained least squares

@dataclass
class FitInfo:
    objective: list[float] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(self.converged)


def _gram(n: int, rows: list[np.ndarray], targets: list[np.ndarray]):
    """Sufficient statistics for one subproblem: count, sum s, s's, sum y, s'y, y'y."""
    if rows:
        S = np.vstack(rows).astype(float)
        y = np.concatenate(targets).astype(float)
    else:
        S, y = np.zeros((0, n)), np.zeros(0)
    return S.shape[0], S.sum(axis=0), S.T @ S, y.sum(), S.T @ y, float(y @ y)


def _subproblem(beta_col, delta_col, stats, K):
    """Quadratic ``x'Qx - 2b'x + c`` for features ``beta + delta * s`` (elementwise)."""
    M, m, G, ysum, Sy, yy = stats
    Q = (M * np.outer(beta_col, beta_col) + np.outer(beta_col, delta_col * m)
         + np.outer(delta_col * m, beta_col) + np.outer(delta_col, delta_col) * G) / K
    b = (beta_col * ysum + delta_col * Sy) / K
    return Q, b, yy / K


def solve_simplex_ls(Q: np.ndarray, b: np.ndarray, x0: np.ndarray, *, tol: float = 1e-10,
                     max_iter: int = 10000, trace: bool = False):
    """Minimise ``x'Qx - 2b'x`` over the probability simplex starting from ``x0``."""
    lam = float(np.linalg.eigvalsh(Q)[-1]) if Q.size else 0.0
    step0 = 1.0 / (2.0 * lam) if lam > 1e-14 else 1.0
    return kernels.pgd_simplex(Q, b, x0, step0, tol, max_iter, trace)


def _fit_rows(stats_per_entity, P11, P01, x0s, K, tol, max_iter):
    n_ent = len(stats_per_entity)
    n_link = P11.shape[0]
    out = np.zeros((n_ent, n_link))
    info = FitInfo()
    for i, stats in enumerate(stats_per_entity):
        if stats[0] == 0:
            out[i] = x0s[i]
            info.objective.append(0.0)
            info.iterations.append(0)
            info.converged.append(True)
            continue
        Q, b, const = _subproblem(P01[:, i], P11[:, i] - P01[:, i], stats, K)
        x, f, it, conv, _ = solve_simplex_ls(Q, b, x0s[i], tol=tol, max_iter=max_iter)
        x = np.where(x < 0, 0.0, x)
        out[i] = x / x.sum()
        info.objective.append(float(f + const))
        info.iterations.append(int(it))
        info.converged.append(bool(conv))
    stalled = [i for i, c in enumerate(info.converged) if not c]
    if stalled:
        log.info("simplex least squares hit %d iterations for %d of %d entities; best iterates kept",
                    max_iter, len(stalled), n_ent)
    return out, info


def link_windows(S: np.ndarray) -> np.ndarray:
    """0-based index of each link's first failure, or of the last state when it survives."""
    dead = S == 0
    return np.where(dead.any(axis=0), np.argmax(dead, axis=0), S.shape[0] - 1)


def fit_D(samples: Sequence[CascadeSample], A11: np.ndarray, A01: np.ndarray, *,
          tol: float = 1e-10, max_iter: int = 10000) -> tuple[np.ndarray, FitInfo]:
    """Weights minimising squared one-step residuals, link by link.

    For link ``i`` the residuals cover the same window as the transition
    counts: pairs ``(t, t+1)`` up to its first failure. Each row starts from
    the unit vector on the link itself.
    """
    n = A11.shape[0]
    rows: list[list[np.ndarray]] = [[] for _ in range(n)]
    targets: list[list[np.ndarray]] = [[] for _ in range(n)]
    for s in samples:
        S = s.S
        tau = link_windows(S)
        for i in range(n):
            if tau[i] > 0:
                rows[i].append(S[: tau[i]])
                targets[i].append(S[1: tau[i] + 1, i])
    stats = [_gram(n, rows[i], targets[i]) for i in range(n)]
    return _fit_rows(stats, A11, A01, np.eye(n), max(len(samples), 1), tol, max_iter)


def fit_E(samples: Sequence[CascadeSample], B11: np.ndarray, B01: np.ndarray, *,
          tol: float = 1e-10, max_iter: int = 10000) -> tuple[np.ndarray, FitInfo]:
    n_link, n_bus = B11.shape
    S_all = [s.S[: len(s.load_served)] for s in samples if s.load_served]
    L_all = [s.L for s in samples if s.load_served]
    if S_all:
        S = np.vstack(S_all).astype(float)
        L = np.vstack(L_all).astype(float)
    else:
        S, L = np.zeros((0, n_link)), np.zeros((0, n_bus))
    M, m, G = S.shape[0], S.sum(axis=0), S.T @ S
    SL = S.T @ L
    stats = [(M, m, G, L[:, i].sum(), SL[:, i], float(L[:, i] @ L[:, i])) for i in range(n_bus)]
    x0 = np.full((n_bus, n_link), 1.0 / n_link)
    return _fit_rows(stats, B11, B01, x0, max(len(samples), 1), tol, max_iter)


# ---------------------------------------------------------------------------
# thresholds

@dataclass
class ThresholdPool:
    """Per-sample thresholds with the contingency profile they came from."""

    loading_c: np.ndarray  # (K,)
    initial_failures: np.ndarray  # (K, 2)
    thresholds: np.ndarray  # (K, n_entities)
    n_branch: int

    def __len__(self) -> int:
        return self.loading_c.size

    def entries(self, i: int) -> list[tuple[float, float, tuple[int, ...]]]:
        """The pool for entity ``i``: (threshold, loading, initial failures) per sample."""
        return [(float(self.thresholds[k, i]), float(self.loading_c[k]), tuple(int(x) for x in self.initial_failures[k]))
                for k in range(len(self))]

    def initial_states(self) -> np.ndarray:
        return self._states.copy()

    @cached_property
    def _states(self) -> np.ndarray:
        S = np.ones((len(self), self.n_branch), dtype=np.int8)
        rows = np.repeat(np.arange(len(self)), self.initial_failures.shape[1])
        S[rows, self.initial_failures.ravel()] = 0
        return S

    @cached_property
    def _by_level(self) -> dict:
        return {float(c): np.flatnonzero(self.loading_c == c) for c in np.unique(self.loading_c)}

    def to_dict(self) -> dict:
        return {"loading_c": self.loading_c.tolist(), "initial_failures": self.initial_failures.tolist(),
                "thresholds": self.thresholds.tolist(), "n_branch": self.n_branch}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdPool":
        return cls(np.asarray(d["loading_c"], dtype=float),
                   np.asarray(d["initial_failures"], dtype=np.intp).reshape(len(d["loading_c"]), -1),
                   np.asarray(d["thresholds"], dtype=float).reshape(len(d["loading_c"]), -1), int(d["n_branch"]))


def link_thresholds(S: np.ndarray, W: np.ndarray, beta: np.ndarray, alpha: float) -> np.ndarray:
    """One sample's link thresholds from its true trajectory ``S`` (T x n)."""
    T, n = S.shape
    inputs = np.vstack([np.ones((1, n), dtype=S.dtype), S[:-1]])
    P = beta[None, :] + inputs.astype(float) @ W.T  # P[t] = predicted s~ at 0-based time t
    eps = np.empty(n)
    dead = S == 0
    for i in range(n):
        if dead[0, i]:
            eps[i] = 1.0
        elif dead[:, i].any():
            tf = int(np.argmax(dead[:, i]))
            eps[i] = 0.5 * (P[tf - 1, i] + P[tf, i]) + TIE_MARGIN
        else:
            eps[i] = alpha * P[T - 1, i]
    return np.clip(eps, 0.0, 1.0)


def bus_thresholds(S: np.ndarray, L: np.ndarray, W: np.ndarray, beta: np.ndarray, alpha: float) -> np.ndarray:
    """One sample's bus thresholds; ``L`` holds the recorded service vectors."""
    m = L.shape[0]
    if m == 0:
        p1 = beta + W @ S[0].astype(float)
        return np.clip(0.5 * (1.0 + p1), 0.0, 1.0)
    P = beta[None, :] + S[:m].astype(float) @ W.T
    n_bus = W.shape[0]
    delta = np.empty(n_bus)
    for i in range(n_bus):
        li, pi = L[:, i], P[:, i]
        if li.all():
            delta[i] = alpha * pi.min()
        elif not li.any():
            delta[i] = 1.0
        else:
            shed_max = pi[li == 0].max()
            served_min = pi[li == 1].min()
            delta[i] = min(shed_max, served_min) + TIE_MARGIN
    return np.clip(delta, 0.0, 1.0)


def build_threshold_pool_D(samples: Sequence[CascadeSample], A11, A01, D, alpha_D: float = 0.9) -> ThresholdPool:
    W, beta = affine_form(D, A11, A01)
    thr = [link_thresholds(s.S, W, beta, alpha_D) for s in samples]
    return _pool(samples, thr, A11.shape[0])


def build_threshold_pool_E(samples: Sequence[CascadeSample], B11, B01, E, alpha_E: float = 0.9) -> ThresholdPool:
    W, beta = affine_form(E, B11, B01)
    thr = [bus_thresholds(s.S, s.L, W, beta, alpha_E) for s in samples]
    return _pool(samples, thr, B11.shape[0])


def _pool(samples, thr, n_branch):
    k = len(samples)
    return ThresholdPool(
        np.array([s.loading_c for s in samples], dtype=float),
        np.array([s.initial_failures for s in samples], dtype=np.intp).reshape(k, -1),
        np.array(thr, dtype=float).reshape(k, -1),
        n_branch,
    )


@dataclass
class ThresholdChoice:
    thresholds: np.ndarray
    matches: list[int]  # pool rows at minimal distance
    distance: float
    loading_used: float
    loading_fallback: bool


def select_threshold(pool: ThresholdPool, loading_c: float, initial_state: Sequence[int]) -> ThresholdChoice:
    """Thresholds of the pool entries closest (L1) to ``initial_state`` at the same loading.

    Ties resolve to the lower median per entity. With no entry at this
    loading the nearest available level is used and ``loading_fallback`` set.
    """
    if len(pool) == 0:
        raise ValueError("empty threshold pool")
    cand = None
    for c, rows in pool._by_level.items():
        if abs(c - loading_c) < 1e-9:
            cand, used = rows, float(loading_c)
            break
    fallback = cand is None
    if fallback:
        levels = np.array(list(pool._by_level))
        used = float(levels[np.argmin(np.abs(levels - loading_c))])
        cand = pool._by_level[used]
        log.warning("no thresholds at loading %.3f; using %.3f", loading_c, used)
    s_new = np.asarray(initial_state, dtype=np.int8)
    # L1 distance between binary vectors is the mismatch count
    dist = np.count_nonzero(pool._states[cand] != s_new, axis=1)
    best = dist.min()
    tied = cand[dist == best]
    if tied.size == 1:
        thr = pool.thresholds[tied[0]].copy()
    else:
        thr = np.sort(pool.thresholds[tied], axis=0)[(tied.size - 1) // 2]
    return ThresholdChoice(thr, tied.tolist(), float(best), used, fallback)


# ---------------------------------------------------------------------------
# models

@dataclass
class InfluenceModelD:
    A11: np.ndarray
    A01: np.ndarray
    D: np.ndarray
    threshold_pool: ThresholdPool
    alpha_D: float = 0.9
    fit: FitInfo = field(default_factory=FitInfo)

    def affine(self):
        return affine_form(self.D, self.A11, self.A01)


@dataclass
class InfluenceModelE:
    B11: np.ndarray
    B01: np.ndarray
    E: np.ndarray
    threshold_pool: ThresholdPool
    alpha_E: float = 0.9
    fit: FitInfo = field(default_factory=FitInfo)
    # mean fraction of a bus's demand lost when it sheds (used to size predicted sheds)
    shed_fraction: np.ndarray | None = None

    def affine(self):
        return affine_form(self.E, self.B11, self.B01)


@dataclass
class TrainedModel:
    model_d: InfluenceModelD
    model_e: InfluenceModelE
    meta: dict = field(default_factory=dict)

    @property
    def model_id(self) -> str:
        return self.meta.get("model_id", "")


def shed_fractions(samples: Sequence[CascadeSample], base_load: np.ndarray) -> np.ndarray:
    num = np.zeros(base_load.size)
    cnt = np.zeros(base_load.size)
    for s in samples:
        if not s.shed_mw:
            continue
        demand = base_load * s.loading_c
        sh = np.asarray(s.shed_mw)
        hit = sh > 0
        frac = np.divide(sh, demand, out=np.zeros_like(sh), where=demand > 0)
        num += np.where(hit, frac, 0.0).sum(axis=0)
        cnt += hit.sum(axis=0)
    return np.divide(num, cnt, out=np.ones_like(num), where=cnt > 0)


def train(samples: Sequence[CascadeSample], n_branch: int, n_bus: int, *, alpha_D: float = 0.9,
          alpha_E: float = 0.9, base_load: np.ndarray | None = None, tol: float = 1e-10,
          max_iter: int = 10000, meta: dict | None = None) -> TrainedModel:
    for a in (alpha_D, alpha_E):
        if not 0 < a < 1:
            raise ValueError("alpha must lie in (0, 1)")
    samples = list(samples)
    A11, A01 = estimate_A(samples, n_branch)
    D, info_d = fit_D(samples, A11, A01, tol=tol, max_iter=max_iter)
    B11, B01 = estimate_B(samples, n_branch, n_bus)
    E, info_e = fit_E(samples, B11, B01, tol=tol, max_iter=max_iter)
    md = InfluenceModelD(A11, A01, D, build_threshold_pool_D(samples, A11, A01, D, alpha_D), alpha_D, info_d)
    me = InfluenceModelE(B11, B01, E, build_threshold_pool_E(samples, B11, B01, E, alpha_E), alpha_E, info_e,
                         shed_fractions(samples, base_load) if base_load is not None else np.ones(n_bus))
    meta = dict(meta or {})
    meta.setdefault("loading_levels", sorted({float(s.loading_c) for s in samples}))
    meta.setdefault("n_train", len(samples))
    model = TrainedModel(md, me, meta)
    model.meta["model_id"] = model_fingerprint(model)
    return model


# ---------------------------------------------------------------------------
# model file

def _info_dict(info: FitInfo) -> dict:
    return {"objective": info.objective, "iterations": info.iterations, "converged": info.converged}


def model_to_dict(model: TrainedModel) -> dict:
    md, me = model.model_d, model.model_e
    return {
        "schema": MODEL_SCHEMA,
        "kind": "gridcascade-influence-model",
        "meta": model.meta,
        "link_model": {"A11": md.A11.tolist(), "A01": md.A01.tolist(), "D": md.D.tolist(),
                       "alpha_D": md.alpha_D, "threshold_pool": md.threshold_pool.to_dict(),
                       "fit": _info_dict(md.fit)},
        "load_model": {"B11": me.B11.tolist(), "B01": me.B01.tolist(), "E": me.E.tolist(),
                       "alpha_E": me.alpha_E, "threshold_pool": me.threshold_pool.to_dict(),
                       "shed_fraction": None if me.shed_fraction is None else me.shed_fraction.tolist(),
                       "fit": _info_dict(me.fit)},
    }


def model_from_dict(d: dict) -> TrainedModel:
    if d.get("kind") != "gridcascade-influence-model":
        raise ValueError("not an influence model document")
    if d.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"model schema {d.get('schema')} unsupported (expected {MODEL_SCHEMA})")
    lk, ld = d["link_model"], d["load_model"]
    md = InfluenceModelD(np.asarray(lk["A11"], float), np.asarray(lk["A01"], float), np.asarray(lk["D"], float),
                         ThresholdPool.from_dict(lk["threshold_pool"]), float(lk["alpha_D"]), FitInfo(**lk["fit"]))
    sf = ld.get("shed_fraction")
    me = InfluenceModelE(np.asarray(ld["B11"], float), np.asarray(ld["B01"], float), np.asarray(ld["E"], float),
                         ThresholdPool.from_dict(ld["threshold_pool"]), float(ld["alpha_E"]), FitInfo(**ld["fit"]),
                         None if sf is None else np.asarray(sf, float))
    return TrainedModel(md, me, dict(d.get("meta", {})))


def model_fingerprint(model: TrainedModel) -> str:
    d = model_to_dict(model)
    d["meta"] = {k: v for k, v in d["meta"].items() if k != "model_id"}
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def save_model(path: str, model: TrainedModel) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> TrainedModel:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: corrupt model file ({exc.msg})") from None
    return model_from_dict(d)
