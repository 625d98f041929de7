"""``gridcascade`` command line: simulate, train, predict, evaluate, report, serve."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .cascade import POLICIES, SamplePool, generate_pool, read_pool, write_pool
from .grid import CaseError, Network, ieee30, line_graph_distance, load_case
from .metrics import criticality, pool_losses
from .pipeline import config_hash, evaluate_pool, initialization_issue, predict_document, time_prediction
from .predict import MODES
from .train import TrainedModel, load_model, save_model, train

log = logging.getLogger("gridcascade")

DEFAULT_SWEEP = "0.9,1.0,1.1,1.2,1.3,1.4,1.5,1.6,1.7,1.8"


class CLIError(Exception):
    def __init__(self, code: str, message: str, detail=None):
        super().__init__(message)
        self.code, self.message, self.detail = code, message, detail


# ---------------------------------------------------------------------------
# helpers

def _load_net(args) -> Network:
    if args.case in (None, "ieee30"):
        return ieee30()
    try:
        return load_case(args.case, args.dialect)
    except FileNotFoundError:
        raise CLIError("input_not_found", f"case file not found: {args.case}") from None
    except CaseError as exc:
        raise CLIError("corrupt_input", str(exc), {"line": exc.line, "column": exc.column}) from None


def _levels(text: str) -> list[float]:
    try:
        vals = [round(float(x), 6) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CLIError("invalid_argument", f"bad loading list {text!r}") from None
    if not vals or min(vals) <= 0:
        raise CLIError("invalid_argument", "loading levels must be positive")
    return vals


def level_path(out: str, c: float, many: bool) -> str:
    """``pool.jsonl`` -> ``pool_c1.20.jsonl`` when several levels share one ``--out``."""
    if not many:
        return out
    p = Path(out)
    return str(p.with_name(f"{p.stem}_c{c:.2f}{p.suffix}"))


def _read_pool(path: str, net: Network | None) -> SamplePool:
    if not os.path.exists(path):
        raise CLIError("input_not_found", f"pool file not found: {path}")
    try:
        return read_pool(path, net)
    except ValueError as exc:
        code = "case_mismatch" if "generated for case" in str(exc) else (
            "schema_mismatch" if "schema" in str(exc) else "corrupt_input")
        raise CLIError(code, str(exc)) from None


def _read_model(path: str, net: Network | None = None) -> TrainedModel:
    if not os.path.exists(path):
        raise CLIError("input_not_found", f"model file not found: {path}")
    try:
        model = load_model(path)
    except (ValueError, KeyError, TypeError) as exc:
        code = "schema_mismatch" if "schema" in str(exc) else "corrupt_input"
        raise CLIError(code, f"{path}: {exc}") from None
    if net is not None and model.meta.get("case_hash") not in (None, net.case_hash):
        raise CLIError("case_mismatch", f"{path} was trained on case {model.meta['case_hash']}, not {net.case_hash}")
    return model


def _dump(obj, path: str | None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=1)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands

def simulate_levels(net: Network, levels: Sequence[float], policy: str, samples: int, seed: int, split: float,
                    out: str, workers: int | None = None) -> dict:
    many = len(levels) > 1
    written, skipped = [], []
    for c in levels:
        reason = initialization_issue(net, c, policy)
        if reason:
            log.warning("skipping loading %g: %s", c, reason)
            skipped.append({"loading_c": c, "reason": reason})
            continue
        pool = generate_pool(net, c, samples, policy, seed, train_fraction=split, workers=workers)
        cfg = {"case_hash": net.case_hash, "loading_c": c, "policy": policy, "samples": samples,
               "seed": seed, "split": split}
        path = level_path(out, c, many)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_pool(path, pool, {"config_hash": config_hash(cfg)})
        written.append({"loading_c": c, "pool": path, "summary": pool.meta["summary"]})
    return {"pools": written, "skipped": skipped}


def cmd_simulate(args) -> int:
    net = _load_net(args)
    out = simulate_levels(net, _levels(args.loading), args.policy, args.samples, args.seed, args.split, args.out)
    _dump(out, None)
    return 0


def _train_from(pools: Sequence[SamplePool], paths: Sequence[str], net: Network, alpha_d: float,
                alpha_e: float) -> TrainedModel:
    hashes = {p.meta.get("case_hash") for p in pools} - {None}
    if len(hashes) > 1:
        raise CLIError("case_mismatch", "pools come from different cases", sorted(hashes))
    samples = [s for p in pools for s in p.subset("train")]
    if not samples:
        raise CLIError("invalid_argument", "no training samples in the given pools")
    policies = sorted({s.policy for s in samples})
    meta = {
        "case_hash": net.case_hash,
        "policy": policies[0] if len(policies) == 1 else "mixed",
        "pools": [{"path": os.path.basename(path), "config_hash": p.meta.get("config_hash")}
                  for p, path in zip(pools, paths)],
        "config_hash": config_hash({"pools": [p.meta.get("config_hash") for p in pools],
                                    "alpha_d": alpha_d, "alpha_e": alpha_e}),
    }
    return train(samples, net.n_branch, net.n_bus, alpha_D=alpha_d, alpha_E=alpha_e, base_load=net.load, meta=meta)


def cmd_train(args) -> int:
    if not args.pool:
        raise CLIError("invalid_argument", "train needs at least one --pool")
    net = _load_net(args)
    pools = [_read_pool(p, net) for p in args.pool]
    model = _train_from(pools, args.pool, net, args.alpha_d, args.alpha_e)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_model(args.out, model)
    _dump({"model": args.out, "model_id": model.meta["model_id"],
           "converged": {"D": model.model_d.fit.all_converged, "E": model.model_e.fit.all_converged}}, None)
    return 0


def _contingency(text: str | None, n_branch: int) -> list[int]:
    if not text:
        raise CLIError("invalid_argument", "--contingency i,j is required")
    try:
        pair = [int(x) for x in text.split(",")]
    except ValueError:
        raise CLIError("invalid_argument", f"bad contingency {text!r}") from None
    if len(pair) != 2 or pair[0] == pair[1] or not all(0 <= i < n_branch for i in pair):
        raise CLIError("invalid_argument", f"contingency must be two distinct branch ids in [0, {n_branch})")
    return sorted(pair)


def cmd_predict(args) -> int:
    if not args.model:
        raise CLIError("invalid_argument", "predict needs --model")
    model = _read_model(args.model[0])
    n = model.model_d.D.shape[0]
    pair = _contingency(args.contingency, n)
    levels = _levels(args.loading)
    if len(levels) != 1:
        raise CLIError("invalid_argument", "predict takes a single --loading value")
    c = levels[0]
    true_states = None
    if args.mode == "eval":
        if not args.states:
            raise CLIError("invalid_argument", "eval mode needs --states with the oracle pool")
        pool = _read_pool(args.states, None)
        hits = [s for s in pool.samples if sorted(s.initial_failures) == pair and abs(s.loading_c - c) < 1e-9]
        if not hits:
            raise CLIError("not_found", f"no sample with contingency {pair} at loading {c:g} in {args.states}")
        true_states = hits[0].S
    _dump(predict_document(model, pair, c, args.mode, true_states), args.out)
    return 0


def cmd_evaluate(args) -> int:
    if not args.model or not args.pool:
        raise CLIError("invalid_argument", "evaluate needs --model and at least one --pool")
    net = _load_net(args)
    model = _read_model(args.model[0], net)
    rows = []
    for path in args.pool:
        pool = _read_pool(path, net)
        ev = evaluate_pool(model, pool.samples, pool.train, pool.test)
        rows.append({"pool": os.path.basename(path), "loading_c": pool.meta.get("loading_c"),
                     "policy": pool.meta.get("policy"),
                     "train": {k: v for k, v in ev["train"].items() if k != "per_sample"},
                     "test": {k: v for k, v in ev["test"].items() if k != "per_sample"}})
    _dump({"model_id": model.meta.get("model_id"), "results": rows}, args.out)
    return 0


def _matrix_csv(path: Path, M: np.ndarray) -> None:
    _write_csv(path, [f"c{j}" for j in range(M.shape[1])], [[repr(float(x)) for x in row] for row in M])


def build_report(net: Network, entries: Sequence[tuple[str, SamplePool, TrainedModel]], outdir: str,
                 skipped: Sequence[dict] = (), timing: bool = True) -> dict:
    """Write loss, accuracy, heat-map and criticality tables for (policy, pool, model) triples.

    Everything except ``timing.json`` is a deterministic function of the inputs.
    """
    out = Path(outdir)
    (out / "heatmaps").mkdir(parents=True, exist_ok=True)
    K = line_graph_distance(net)
    loss_rows, acc_rows, crit = [], [], {}
    timing_rows = []
    for policy, pool, model in entries:
        c = float(pool.meta.get("loading_c", pool.samples[0].loading_c))
        tag = f"{policy}_c{c:.2f}"
        lr = pool_losses(pool.samples, net.cost_weight, net.shed_priority, D=model.model_d.D, K=K)
        ev = evaluate_pool(model, pool.samples, pool.train, pool.test)
        summ = pool.meta.get("summary", {})
        loss_rows.append([policy, c, lr.link_fail_loss, lr.load_shed_loss, lr.local_influence_loss,
                          summ.get("no_propagation_fraction")])
        acc_rows.append([policy, c, ev["train"]["link_accuracy"], ev["test"]["link_accuracy"],
                         ev["train"]["shed_accuracy"], ev["test"]["shed_accuracy"]])
        _matrix_csv(out / "heatmaps" / f"D_{tag}.csv", model.model_d.D)
        _matrix_csv(out / "heatmaps" / f"E_{tag}.csv", model.model_e.E)
        crit[tag] = criticality(model.model_d, model.model_e).to_dict()
        if timing:
            tm = time_prediction(model, net, pool.subset("test"))
            timing_rows.append({"policy": policy, "loading_c": c, **tm})
    loss_hdr = ["policy", "loading_c", "link_fail_loss", "load_shed_loss", "local_influence_loss",
                "no_propagation_fraction"]
    acc_hdr = ["policy", "loading_c", "link_accuracy_train", "link_accuracy_test", "shed_accuracy_train",
               "shed_accuracy_test"]
    _write_csv(out / "losses.csv", loss_hdr, loss_rows)
    _write_csv(out / "accuracy.csv", acc_hdr, acc_rows)
    report = {
        "case_hash": net.case_hash,
        "losses": [dict(zip(loss_hdr, r)) for r in loss_rows],
        "accuracy": [dict(zip(acc_hdr, r)) for r in acc_rows],
        "models": {f"{p}_c{float(pl.meta.get('loading_c', 0)):.2f}": m.meta.get("model_id") for p, pl, m in entries},
        "skipped": list(skipped),
    }
    _dump(report, str(out / "report.json"))
    _dump(crit, str(out / "criticality.json"))
    if timing:
        _dump({"rows": timing_rows}, str(out / "timing.json"))
    return report


def cmd_report(args) -> int:
    net = _load_net(args)
    out = Path(args.out)
    if args.all:
        policies = [args.policy] if args.policy else list(POLICIES)
        entries, skipped = [], []
        for policy in policies:
            res = simulate_levels(net, _levels(args.loading), policy, args.samples, args.seed, args.split,
                                  str(out / "pools" / f"pool_{policy}.jsonl"))
            skipped += [dict(s, policy=policy) for s in res["skipped"]]
            for rec in res["pools"]:
                pool = _read_pool(rec["pool"], net)
                model = _train_from([pool], [rec["pool"]], net, args.alpha_d, args.alpha_e)
                mpath = out / "models" / f"model_{policy}_c{rec['loading_c']:.2f}.json"
                mpath.parent.mkdir(parents=True, exist_ok=True)
                save_model(str(mpath), model)
                entries.append((policy, pool, model))
    else:
        if not args.pool or not args.model:
            raise CLIError("invalid_argument", "report needs --all, or --pool and --model")
        if len(args.model) not in (1, len(args.pool)):
            raise CLIError("invalid_argument", "give one --model, or one per --pool")
        models = [_read_model(m, net) for m in args.model]
        entries = []
        for k, path in enumerate(args.pool):
            pool = _read_pool(path, net)
            entries.append((pool.meta.get("policy", "none"), pool, models[k if len(models) > 1 else 0]))
        skipped = []
    report = build_report(net, entries, str(out), skipped, timing=not args.no_timing)
    _dump({"out": str(out), "levels": len(report["losses"]), "skipped": report["skipped"]}, None)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.store_dir), host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", default="ieee30", help="case file, or 'ieee30' for the bundled system")
    common.add_argument("--dialect", choices=["matpower-m", "native-json"], default=None)
    common.add_argument("--loading", default=None, help="comma-separated loading levels")
    common.add_argument("--policy", choices=POLICIES, default=None)
    common.add_argument("--samples", type=int, default=300)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--split", type=float, default=0.9)
    common.add_argument("--alpha-d", type=float, default=0.9)
    common.add_argument("--alpha-e", type=float, default=0.9)
    common.add_argument("--pool", action="append", default=[])
    common.add_argument("--model", action="append", default=[])
    common.add_argument("--out", default=None)

    p = argparse.ArgumentParser(prog="gridcascade", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate oracle cascade pools")
    sub.add_parser("train", parents=[common], help="fit influence models on pool training splits")
    sp = sub.add_parser("predict", parents=[common], help="flow-free prediction for one contingency")
    sp.add_argument("--contingency")
    sp.add_argument("--mode", choices=MODES, default="advisory")
    sp.add_argument("--states", help="pool holding the true states (eval mode)")
    sub.add_parser("evaluate", parents=[common], help="train/test accuracy of a model on pools")
    sp = sub.add_parser("report", parents=[common], help="loss, accuracy, heat-map and timing tables")
    sp.add_argument("--all", action="store_true", help="run simulate, train and evaluate first")
    sp.add_argument("--no-timing", action="store_true")
    sp = sub.add_parser("serve", help="run the advisory HTTP service")
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--store-dir", default="store")
    return p


_REQUIRED_OUT = {"simulate", "train", "report"}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("CASCADE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    handlers = {"simulate": cmd_simulate, "train": cmd_train, "predict": cmd_predict,
                "evaluate": cmd_evaluate, "report": cmd_report, "serve": cmd_serve}
    try:
        if args.command in _REQUIRED_OUT and not args.out:
            raise CLIError("invalid_argument", f"{args.command} needs --out")
        if args.command == "simulate" and args.policy is None:
            args.policy = "none"
        if args.command != "serve":
            if not 0 < args.split < 1:
                raise CLIError("invalid_argument", "--split must lie in (0, 1)")
            if args.loading is None:
                args.loading = DEFAULT_SWEEP if args.command == "report" else "1.0"
        return handlers[args.command](args)
    except CLIError as exc:
        sys.stderr.write(json.dumps({"code": exc.code, "message": exc.message, "detail": exc.detail}) + "\n")
        return 1
    except (ValueError, OSError) as exc:
        sys.stderr.write(json.dumps({"code": "error", "message": str(exc), "detail": type(exc).__name__}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
