"""Advisory HTTP service.

The store directory holds ``cases/`` (MATPOWER ``.m`` or native ``.json``)
and ``models/`` (model files written by ``gridcascade train``). Files are
loaded once and kept as immutable snapshots; new files are picked up on
listing requests or on a lookup miss.
"""
from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Literal, Mapping

from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .cascade import POLICIES, run_cascade
from .grid import CaseError, Network, load_case
from .metrics import criticality
from .pipeline import advise_with_model, advise_with_oracle, composite_score, predict_document, rank_strategies
from .train import TrainedModel, load_model

log = logging.getLogger(__name__)

CASE_SUFFIXES = (".m", ".json")


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str, detail=None):
        super().__init__(message)
        self.status, self.code, self.message, self.detail = status, code, message, detail


@dataclass(frozen=True)
class Snapshot:
    cases: Mapping[str, Network] = field(default_factory=dict)
    models: Mapping[str, TrainedModel] = field(default_factory=dict)
    seen: frozenset = frozenset()


class Store:
    """Read-mostly artifact store; loads are serialized, readers see whole snapshots."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self._lock = threading.Lock()
        self.snapshot = Snapshot()
        self.errors: dict[str, str] = {}
        self.refresh()

    def refresh(self) -> Snapshot:
        with self._lock:
            snap = self.snapshot
            cases, models, seen = dict(snap.cases), dict(snap.models), set(snap.seen)
            for path in sorted((self.root / "cases").glob("*")) if (self.root / "cases").is_dir() else []:
                if path.suffix not in CASE_SUFFIXES or str(path) in seen:
                    continue
                seen.add(str(path))
                try:
                    cases[path.stem] = load_case(str(path))
                except (CaseError, OSError, ValueError) as exc:
                    self.errors[str(path)] = str(exc)
                    log.warning("skipping case %s: %s", path, exc)
            for path in sorted((self.root / "models").glob("*.json")) if (self.root / "models").is_dir() else []:
                if str(path) in seen:
                    continue
                seen.add(str(path))
                try:
                    model = load_model(str(path))
                except (ValueError, KeyError, TypeError, OSError) as exc:
                    self.errors[str(path)] = str(exc)
                    log.warning("skipping model %s: %s", path, exc)
                    continue
                models[model.meta.get("model_id") or path.stem] = model
            self.snapshot = Snapshot(MappingProxyType(cases), MappingProxyType(models), frozenset(seen))
            return self.snapshot

    def model(self, model_id: str) -> TrainedModel:
        m = self.snapshot.models.get(model_id) or self.refresh().models.get(model_id)
        if m is None:
            raise ServiceError(404, "model_not_found", f"unknown model {model_id!r}")
        return m

    def case(self, case_id: str) -> Network:
        net = self.snapshot.cases.get(case_id) or self.refresh().cases.get(case_id)
        if net is None:
            raise ServiceError(404, "case_not_found", f"unknown case {case_id!r}")
        return net

    def case_by_hash(self, case_hash: str) -> tuple[str, Network] | None:
        for cid, net in sorted(self.snapshot.cases.items()):
            if net.case_hash == case_hash:
                return cid, net
        return None

    def model_for(self, case_hash: str, policy: str, loading_c: float) -> TrainedModel | None:
        """Deterministic pick: models trained at this loading first, then by id."""
        hits = []
        for mid, m in sorted(self.snapshot.models.items()):
            if m.meta.get("case_hash") != case_hash or m.meta.get("policy") != policy:
                continue
            exact = any(abs(c - loading_c) < 1e-9 for c in m.meta.get("loading_levels", []))
            hits.append((not exact, mid, m))
        return min(hits, key=lambda h: h[:2])[2] if hits else None


# ---------------------------------------------------------------------------
# request bodies

class PredictRequest(BaseModel):
    model_id: str
    contingency: list[int] = Field(min_length=2, max_length=2)
    loading_c: float = Field(gt=0)
    mode: Literal["eval", "advisory"] = "advisory"
    states: list[list[int]] | None = None


class AdviseRequest(BaseModel):
    case_id: str
    contingency: list[int] = Field(min_length=2, max_length=2)
    loading_c: float = Field(gt=0)
    strategies: list[str] = Field(min_length=1)
    weights: list[float] = Field(default_factory=lambda: [1.0, 1.0], min_length=2, max_length=2)


def _check_pair(pair: list[int], n_branch: int) -> list[int]:
    if pair[0] == pair[1] or not all(0 <= i < n_branch for i in pair):
        raise ServiceError(422, "invalid_contingency",
                           f"contingency must be two distinct branch ids in [0, {n_branch})", {"contingency": pair})
    return sorted(pair)


def _model_entry(mid: str, m: TrainedModel) -> dict:
    return {"model_id": mid, "case_hash": m.meta.get("case_hash"), "policy": m.meta.get("policy"),
            "loading_levels": m.meta.get("loading_levels", []), "config_hash": m.meta.get("config_hash"),
            "n_branch": int(m.model_d.D.shape[0]), "n_bus": int(m.model_e.E.shape[0])}


def _case_entry(cid: str, net: Network) -> dict:
    return {"case_id": cid, "name": net.name, "case_hash": net.case_hash, "n_bus": net.n_bus,
            "n_branch": net.n_branch, "n_gen": len(net.generators),
            "branches": [[int(f), int(t)] for f, t in zip(net.from_bus, net.to_bus)]}


def default_static_dir() -> Path:
    return Path(str(resources.files("gridcascade").joinpath("static")))


def create_app(store_dir: str | os.PathLike = "store", *, cors_origins: list[str] | None = None,
               static_dir: str | os.PathLike | None = None) -> FastAPI:
    store = Store(store_dir)
    app = FastAPI(title="gridcascade advisory service")
    app.state.store = store
    origins = cors_origins if cors_origins is not None else os.environ.get("GRIDCASCADE_CORS", "*").split(",")
    app.add_middleware(CORSMiddleware, allow_origins=origins, allow_methods=["GET", "POST"], allow_headers=["*"])

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message, "detail": exc.detail})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        detail = [{"loc": list(e.get("loc", ())), "msg": e.get("msg")} for e in exc.errors()]
        return JSONResponse(status_code=422,
                            content={"code": "invalid_request", "message": "request validation failed",
                                     "detail": detail})

    @app.get("/cases")
    def list_cases():
        snap = store.refresh()
        return [_case_entry(cid, net) for cid, net in sorted(snap.cases.items())]

    @app.get("/models")
    def list_models():
        snap = store.refresh()
        return [_model_entry(mid, m) for mid, m in sorted(snap.models.items())]

    @app.post("/predict")
    def predict(req: PredictRequest):
        model = store.model(req.model_id)
        n = int(model.model_d.D.shape[0])
        pair = _check_pair(req.contingency, n)
        true_states = None
        if req.mode == "eval":
            if req.states is not None:
                true_states = req.states
                if not true_states or any(len(r) != n for r in true_states):
                    raise ServiceError(422, "invalid_states", f"states must be non-empty rows of length {n}")
            else:
                found = store.case_by_hash(model.meta.get("case_hash", ""))
                if found is None:
                    raise ServiceError(422, "states_required",
                                       "eval mode needs 'states' or the model's case in the store")
                sample = run_cascade(found[1], req.loading_c, pair, model.meta.get("policy", "none"))
                true_states = sample.S
        return predict_document(model, pair, req.loading_c, req.mode, true_states)

    @app.post("/advise")
    def advise(req: AdviseRequest, oracle: bool = Query(False)):
        net = store.case(req.case_id)
        pair = _check_pair(req.contingency, net.n_branch)
        w = req.weights
        if min(w) < 0 or max(w) <= 0:
            raise ServiceError(422, "invalid_weights", "weights must be non-negative and not both zero")
        unknown = [s for s in req.strategies if s not in POLICIES]
        if unknown:
            raise ServiceError(422, "invalid_strategy", f"unknown strategies {unknown}", {"allowed": list(POLICIES)})
        entries = []
        for strategy in dict.fromkeys(req.strategies):
            if oracle:
                out = advise_with_oracle(net, strategy, pair, req.loading_c)
                entry = dict(out.to_dict(), model_id=None)
            else:
                model = store.model_for(net.case_hash, strategy, req.loading_c)
                if model is None:
                    entries.append({"strategy": strategy, "flag": "no_trained_model", "link_fail_loss": None,
                                    "load_shed_loss": None, "model_id": None})
                    continue
                out = advise_with_model(model, net, strategy, pair, req.loading_c)
                entry = dict(out.to_dict(), model_id=model.meta.get("model_id"))
            entry["score"] = composite_score(out.link_fail_loss, out.load_shed_loss, w)
            entries.append(entry)
        ranking = rank_strategies(entries, w)
        for e in entries:
            e["rank"] = ranking.index(e["strategy"]) + 1 if e["strategy"] in ranking else None
        return {"case_id": req.case_id, "case_hash": net.case_hash, "contingency": pair,
                "loading_c": req.loading_c, "weights": list(w), "source": "oracle" if oracle else "model",
                "ranking": ranking, "strategies": entries}

    @app.get("/criticality")
    def get_criticality(model_id: str):
        model = store.model(model_id)
        return dict(criticality(model.model_d, model.model_e).to_dict(), model_id=model_id)

    static = Path(static_dir) if static_dir is not None else default_static_dir()
    if static.is_dir():
        app.mount("/ui", StaticFiles(directory=str(static), html=True), name="ui")
    return app

