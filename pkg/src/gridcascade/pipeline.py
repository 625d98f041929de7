"""Glue shared by the CLI, the HTTP service and the acceptance checks.

Evaluation of a trained model against oracle samples, timing of oracle vs
flow-free prediction, advisory predictions with loss estimates, and the
strategy ranking rule.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .cascade import POLICIES, CascadeSample, run_cascade
from .grid import Network, scale_loads
from .metrics import ever_shed, link_accuracy, link_fail_loss, load_shed_loss, shed_accuracy
from .powerflow import dc_opf_full_service
from .predict import initial_state, predict_cascade, predict_load_shed
from .train import TrainedModel


def config_hash(cfg: Mapping) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def initialization_issue(net: Network, loading_c: float, policy: str) -> str | None:
    """Reason a loading level cannot be simulated under ``policy``, or None.

    Only full-service redispatch needs a feasible intact starting point: the
    OPF must serve all demand within long-term ratings.
    """
    if policy != "redispatch-full":
        return None
    demand = scale_loads(net, loading_c).load
    sol = dc_opf_full_service(net, np.ones(net.n_branch, dtype=bool), demand, rating_factor=1.0)
    if sol.full_service_feasible:
        return None
    return (f"intact full-service OPF infeasible at loading {loading_c:g} "
            f"(max serviceable fraction {float(np.min(sol.sigma)):.4f})")


# ---------------------------------------------------------------------------
# evaluation

def evaluate_samples(model: TrainedModel, samples: Sequence[CascadeSample]) -> dict:
    """Final-state link accuracy and ever-shed accuracy (true states fed to the load model)."""
    aff_d, aff_e = model.model_d.affine(), model.model_e.affine()
    per = []
    for s in samples:
        S = s.S
        pc = predict_cascade(model.model_d, S[0], s.loading_c, affine=aff_d)
        m = len(s.load_served)
        pl = predict_load_shed(model.model_e, S[: max(m, 1)], s.loading_c, "eval", affine=aff_e)
        predicted = pl.ever_shed()
        per.append({
            "sample_id": s.sample_id,
            "link_accuracy": link_accuracy(pc.states[-1], S[-1]),
            "shed_accuracy": shed_accuracy(predicted, ever_shed(s.L, pl.served.shape[1])),
        })
    mean = (lambda k: float(np.mean([p[k] for p in per])) if per else float("nan"))
    return {"n": len(per), "link_accuracy": mean("link_accuracy"), "shed_accuracy": mean("shed_accuracy"),
            "per_sample": per}


def evaluate_pool(model: TrainedModel, samples: Sequence[CascadeSample], train_idx: Sequence[int],
                  test_idx: Sequence[int]) -> dict:
    return {"train": evaluate_samples(model, [samples[i] for i in train_idx]),
            "test": evaluate_samples(model, [samples[i] for i in test_idx])}


def time_prediction(model: TrainedModel, net: Network, samples: Sequence[CascadeSample],
                    repeats: int = 5) -> dict:
    """Mean wall time per sample of the oracle vs the flow-free pipeline.

    Prediction covers the full advisory path: link rollout plus load-shed
    prediction on the predicted states. Each side takes the best of
    ``repeats`` passes to damp scheduler noise.
    """
    if not samples:
        return {"n": 0, "oracle_mean_s": float("nan"), "predict_mean_s": float("nan"), "ratio": float("nan")}
    aff_d, aff_e = model.model_d.affine(), model.model_e.affine()

    def oracle_pass():
        for s in samples:
            run_cascade(net, s.loading_c, s.initial_failures, s.policy, s.seed, sample_id=s.sample_id)

    def predict_pass():
        for s in samples:
            pc = predict_cascade(model.model_d, s.S[0], s.loading_c, affine=aff_d)
            predict_load_shed(model.model_e, pc.states[:-1], s.loading_c, "advisory", affine=aff_e)

    def best(fn, k):
        out = float("inf")
        for _ in range(k):
            t0 = time.perf_counter()
            fn()
            out = min(out, time.perf_counter() - t0)
        return out / len(samples)

    t_oracle = best(oracle_pass, max(1, repeats // 2))
    t_pred = best(predict_pass, repeats)
    return {"n": len(samples), "oracle_mean_s": t_oracle, "predict_mean_s": t_pred, "ratio": t_pred / t_oracle}


# ---------------------------------------------------------------------------
# advisory

def predict_document(model: TrainedModel, pair: Sequence[int], loading_c: float, mode: str,
                     true_states: np.ndarray | None = None) -> dict:
    n = model.model_d.D.shape[0]
    pc = predict_cascade(model.model_d, initial_state(n, pair), loading_c)
    if mode == "eval":
        S = np.asarray(true_states)
        pl = predict_load_shed(model.model_e, S[: max(S.shape[0] - 1, 1)], loading_c, "eval")
    else:
        pl = predict_load_shed(model.model_e, pc.states[:-1], loading_c, "advisory")
    return {"model_id": model.meta.get("model_id"), "contingency": list(pair), "loading_c": loading_c,
            "mode": mode, "cascade": pc.to_dict(), "load_shed": pl.to_dict(),
            "ever_shed": pl.ever_shed().tolist()}


@dataclass
class StrategyOutcome:
    strategy: str
    states: np.ndarray
    served: np.ndarray
    shed_mw: np.ndarray
    link_fail_loss: float
    load_shed_loss: float
    loading_fallback: bool = False
    source: str = "model"

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "predicted_cascade": self.states.astype(int).tolist(),
            "predicted_sheds": self.served.astype(int).tolist(),
            "shed_mw": self.shed_mw.tolist(),
            "link_fail_loss": self.link_fail_loss,
            "load_shed_loss": self.load_shed_loss,
            "loading_fallback": self.loading_fallback,
            "source": self.source,
        }


def advise_with_model(model: TrainedModel, net: Network, strategy: str, contingency: Sequence[int],
                      loading_c: float) -> StrategyOutcome:
    """Flow-free outcome of one strategy.

    Predicted link states feed the load model; shed MW per bus is the
    bus's scaled demand times the mean shed fraction seen in training.
    """
    s0 = initial_state(net.n_branch, contingency)
    pc = predict_cascade(model.model_d, s0, loading_c)
    pl = predict_load_shed(model.model_e, pc.states[:-1], loading_c, "advisory")
    demand = scale_loads(net, loading_c).load
    frac = model.model_e.shed_fraction if model.model_e.shed_fraction is not None else np.ones(net.n_bus)
    shed = (1 - pl.served) * (demand * frac)[None, :]
    return StrategyOutcome(strategy, pc.states, pl.served, shed,
                           link_fail_loss(pc.states, net.cost_weight),
                           load_shed_loss(shed, net.shed_priority),
                           pc.loading_fallback or pl.loading_fallback)


def advise_with_oracle(net: Network, strategy: str, contingency: Sequence[int], loading_c: float) -> StrategyOutcome:
    s = run_cascade(net, loading_c, contingency, strategy)
    shed = np.asarray(s.shed_mw, dtype=float).reshape(len(s.shed_mw), net.n_bus)
    return StrategyOutcome(strategy, s.S, s.L.reshape(len(s.load_served), net.n_bus), shed,
                           link_fail_loss(s, net.cost_weight), load_shed_loss(s, net.shed_priority),
                           source="oracle")


def composite_score(link_loss: float, shed_loss: float, weights: Sequence[float]) -> float:
    return float(weights[0]) * link_loss + float(weights[1]) * shed_loss


def rank_strategies(entries: Sequence[Mapping], weights: Sequence[float] = (1.0, 1.0)) -> list[str]:
    """Strategies ordered best first by ``w_link * link_fail_loss + w_shed * load_shed_loss``.

    Entries without losses (flagged) are left out. Ties keep the canonical
    policy order, then name order for unknown strategies.
    """
    if len(weights) != 2 or min(weights) < 0 or max(weights) <= 0:
        raise ValueError("weights must be two non-negative numbers, not both zero")
    order = {p: k for k, p in enumerate(POLICIES)}
    scored = [(composite_score(e["link_fail_loss"], e["load_shed_loss"], weights),
               order.get(e["strategy"], len(order)), e["strategy"])
              for e in entries if e.get("link_fail_loss") is not None and e.get("load_shed_loss") is not None]
    return [name for _, _, name in sorted(scored)]
