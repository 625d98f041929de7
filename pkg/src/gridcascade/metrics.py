"""Loss functions, criticality scores and prediction-accuracy metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cascade import CascadeSample
from .train import InfluenceModelD, InfluenceModelE

DISCOUNT = 0.2


def failure_times(states: np.ndarray) -> np.ndarray:
    """1-based first time each branch is dead, 0 when it never fails."""
    dead = np.asarray(states) == 0
    return np.where(dead.any(axis=0), np.argmax(dead, axis=0) + 1, 0)


def link_fail_loss(states: np.ndarray | CascadeSample, cost_weight: np.ndarray, *,
                   discount: float = DISCOUNT, include_initial: bool = True) -> float:
    """Sum of ``C(b) exp(-discount * t_b)`` over failed branches, ``t_b`` the failure step.

    Initial failures have ``t_b = 1``; ``include_initial=False`` drops them.
    """
    S = states.S if isinstance(states, CascadeSample) else np.asarray(states)
    tb = failure_times(S)
    hit = tb > 0
    if not include_initial:
        hit &= tb > 1
    return float(np.sum(np.asarray(cost_weight)[hit] * np.exp(-discount * tb[hit])))


def load_shed_loss(shed_mw: Sequence[Sequence[float]] | CascadeSample, priority: np.ndarray, *,
                   discount: float = DISCOUNT) -> float:
    """Sum over buses and recorded steps ``t = 1..`` of ``C(l) * shed * exp(-discount * t)``."""
    sh = np.asarray(shed_mw.shed_mw if isinstance(shed_mw, CascadeSample) else shed_mw, dtype=float)
    if sh.size == 0:
        return 0.0
    w = np.exp(-discount * np.arange(1, sh.shape[0] + 1))
    return float(w @ (sh @ np.asarray(priority, dtype=float)))


def local_influence_loss(D: np.ndarray, K: np.ndarray) -> float:
    D, K = np.asarray(D), np.asarray(K)
    if D.shape != K.shape:
        raise ValueError(f"dimension mismatch: D {D.shape} vs K {K.shape}")
    return float(np.sum(D * K))


@dataclass
class CriticalityReport:
    cd: np.ndarray
    ce: np.ndarray
    rank_cd: list[int] = field(default_factory=list)
    rank_ce: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"cd": self.cd.tolist(), "ce": self.ce.tolist(), "rank_cd": self.rank_cd, "rank_ce": self.rank_ce}


def _ranking(x: np.ndarray) -> list[int]:
    # descending, ties by lower index
    return [int(i) for i in np.lexsort((np.arange(x.size), -x))]


def criticality(model_d: InfluenceModelD, model_e: InfluenceModelE | None = None) -> CriticalityReport:
    """Per-link criticality: weighted influence differences summed over influenced entities."""
    cd = np.sum(model_d.D * (model_d.A11 - model_d.A01).T, axis=0)
    if model_e is not None:
        ce = np.sum(model_e.E * (model_e.B11 - model_e.B01).T, axis=0)
    else:
        ce = np.zeros_like(cd)
    return CriticalityReport(cd, ce, _ranking(cd), _ranking(ce))


def link_accuracy(predicted_final: Sequence[int], actual_final: Sequence[int]) -> float:
    p, a = np.asarray(predicted_final), np.asarray(actual_final)
    if p.shape != a.shape:
        raise ValueError("state vectors differ in length")
    return float(np.mean(p == a))


def ever_shed(served: np.ndarray, n_bus: int | None = None) -> np.ndarray:
    L = np.asarray(served)
    if L.size == 0:
        return np.zeros(n_bus or 0, dtype=int)
    return (L == 0).any(axis=0).astype(int)


def shed_accuracy(predicted_overall: Sequence[int], actual_overall: Sequence[int]) -> float:
    """``1 - ||overall - predicted||_1 / N`` on the ever-shed indicator vectors."""
    p, a = np.asarray(predicted_overall), np.asarray(actual_overall)
    if p.shape != a.shape:
        raise ValueError("indicator vectors differ in length")
    return 1.0 - float(np.abs(p - a).sum()) / p.size


@dataclass
class LossReport:
    link_fail_loss: float
    load_shed_loss: float
    local_influence_loss: float | None
    per_sample: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"link_fail_loss": self.link_fail_loss, "load_shed_loss": self.load_shed_loss,
                "local_influence_loss": self.local_influence_loss, "per_sample": self.per_sample}


def pool_losses(samples: Sequence[CascadeSample], cost_weight: np.ndarray, priority: np.ndarray, *,
                D: np.ndarray | None = None, K: np.ndarray | None = None, include_initial: bool = True,
                discount: float = DISCOUNT) -> LossReport:
    per = [{"sample_id": s.sample_id,
            "link_fail_loss": link_fail_loss(s, cost_weight, discount=discount, include_initial=include_initial),
            "load_shed_loss": load_shed_loss(s, priority, discount=discount)} for s in samples]
    mean = (lambda key: float(np.mean([p[key] for p in per])) if per else math.nan)
    lil = local_influence_loss(D, K) if D is not None and K is not None else None
    return LossReport(mean("link_fail_loss"), mean("load_shed_loss"), lil, per)
