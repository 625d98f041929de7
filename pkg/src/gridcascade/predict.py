"""Flow-free cascade and load-shed prediction.

Nothing here touches a power-flow solver: each step is one matrix-vector
product and one threshold comparison per entity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .train import InfluenceModelD, InfluenceModelE, select_threshold

MODES = ("eval", "advisory")


@dataclass
class PredictedCascade:
    states: np.ndarray  # (T, n_branch) binary, states[0] is the given initial state
    probs: np.ndarray  # (T-1, n_branch), probs[t] produced states[t+1]
    termination_time: int
    thresholds: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    threshold_matches: list[int] = field(default_factory=list)
    loading_fallback: bool = False

    def to_dict(self) -> dict:
        return {"states": self.states.astype(int).tolist(), "probs": self.probs.tolist(),
                "termination_time": self.termination_time, "loading_fallback": self.loading_fallback}


@dataclass
class PredictedLoadShed:
    served: np.ndarray  # (len(states), n_bus) binary
    probs: np.ndarray
    mode: str
    thresholds: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    loading_fallback: bool = False

    def ever_shed(self) -> np.ndarray:
        return (self.served == 0).any(axis=0).astype(int)

    def to_dict(self) -> dict:
        return {"served": self.served.astype(int).tolist(), "probs": self.probs.tolist(), "mode": self.mode,
                "loading_fallback": self.loading_fallback}


def initial_state(n_branch: int, failures: Sequence[int]) -> np.ndarray:
    s = np.ones(n_branch, dtype=np.int8)
    s[list(failures)] = 0
    return s


def predict_cascade(model: InfluenceModelD, init_state: Sequence[int], loading_c: float,
                    affine: tuple[np.ndarray, np.ndarray] | None = None) -> PredictedCascade:
    """Roll the link model forward from ``init_state`` until the state repeats.

    Already-dead links stay dead. At most ``n_branch`` steps are taken.
    ``affine`` may pass a precomputed ``model.affine()`` for batch use.
    """
    s0 = np.asarray(init_state, dtype=np.int8)
    choice = select_threshold(model.threshold_pool, loading_c, s0)
    W, beta = model.affine() if affine is None else affine
    states, probs = kernels.rollout(W, beta, s0, choice.thresholds, s0.size, 0.0)
    return PredictedCascade(states, probs, states.shape[0], choice.thresholds, choice.matches, choice.loading_fallback)


def predict_load_shed(model: InfluenceModelE, states: Sequence[Sequence[int]] | np.ndarray, loading_c: float,
                      mode: str = "eval", affine: tuple[np.ndarray, np.ndarray] | None = None) -> PredictedLoadShed:
    """Service prediction for every state in ``states``.

    ``mode`` only records where the states came from: ``eval`` for oracle
    states, ``advisory`` for states predicted by the link model.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    S = np.asarray(states, dtype=float)
    if S.ndim != 2 or S.shape[0] == 0:
        raise ValueError("state sequence must be a non-empty 2-D array")
    choice = select_threshold(model.threshold_pool, loading_c, S[0].astype(np.int8))
    W, beta = model.affine() if affine is None else affine
    P = beta[None, :] + S @ W.T
    served = (P >= choice.thresholds[None, :]).astype(np.int8)
    return PredictedLoadShed(served, P, mode, choice.thresholds, choice.loading_fallback)
