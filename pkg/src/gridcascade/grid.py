"""Grid domain types, case-file ingestion and line-graph distances.

Two case dialects are understood:

``native-json``
    ``{"base_mva": ..., "buses": [...], "branches": [...], "generators": [...]}``
    with field names identical to the dataclasses below. Ids are the dense
    0-based internal ids.
``matpower-m``
    The subset of a MATPOWER ``.m`` case needed for DC studies: bus
    ``bus_i/type/Pd``, gen ``bus/Pmax/Pmin``, branch ``fbus/tbus/x/rateA/status``
    and the linear term of ``gencost``. External bus numbers are remapped to
    dense internal ids in order of appearance.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from importlib import resources
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

log = logging.getLogger(__name__)

SHORT_TERM_FACTOR = 1.05
DIALECTS = ("matpower-m", "native-json")


class CaseError(ValueError):
    """Malformed or inconsistent case data.

    ``line`` and ``column`` are 1-based positions in the source text when the
    problem can be located.
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


@dataclass(frozen=True)
class Bus:
    id: int
    load_p: float
    shed_priority: float = 1.0
    is_slack: bool = False


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    rating_long: float
    cost_weight: float

    @property
    def rating_short(self) -> float:
        return SHORT_TERM_FACTOR * self.rating_long


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_max: float
    p_min: float = 0.0
    cost: float = 1.0


@dataclass(frozen=True)
class LoadingProfile:
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"loading multiplier must be positive, got {self.c}")


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        validate(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    # numpy views used by the solvers; the network is immutable so caching is safe
    @cached_property
    def load(self) -> np.ndarray:
        return np.array([b.load_p for b in self.buses], dtype=float)

    @cached_property
    def shed_priority(self) -> np.ndarray:
        return np.array([b.shed_priority for b in self.buses], dtype=float)

    @cached_property
    def from_bus(self) -> np.ndarray:
        return np.array([br.from_bus for br in self.branches], dtype=np.intp)

    @cached_property
    def to_bus(self) -> np.ndarray:
        return np.array([br.to_bus for br in self.branches], dtype=np.intp)

    @cached_property
    def reactance(self) -> np.ndarray:
        return np.array([br.reactance for br in self.branches], dtype=float)

    @cached_property
    def rating_long(self) -> np.ndarray:
        return np.array([br.rating_long for br in self.branches], dtype=float)

    @cached_property
    def cost_weight(self) -> np.ndarray:
        return np.array([br.cost_weight for br in self.branches], dtype=float)

    @cached_property
    def gen_bus(self) -> np.ndarray:
        return np.array([g.bus for g in self.generators], dtype=np.intp)

    @cached_property
    def p_max(self) -> np.ndarray:
        return np.array([g.p_max for g in self.generators], dtype=float)

    @cached_property
    def p_min(self) -> np.ndarray:
        return np.array([g.p_min for g in self.generators], dtype=float)

    @cached_property
    def gen_cost(self) -> np.ndarray:
        return np.array([g.cost for g in self.generators], dtype=float)

    @cached_property
    def case_hash(self) -> str:
        return hashlib.sha256(to_json(self).encode()).hexdigest()[:16]


def validate(net: Network) -> None:
    n = len(net.buses)
    for kind, items in (("bus", net.buses), ("branch", net.branches), ("generator", net.generators)):
        ids = [it.id for it in items]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise CaseError(f"duplicate {kind} id(s) {dup}")
        if ids != list(range(len(ids))):
            raise CaseError(f"{kind} ids must be dense 0..{len(ids) - 1} in order")
    for b in net.buses:
        if b.load_p < 0:
            raise CaseError(f"bus {b.id}: negative load {b.load_p}")
        if not b.shed_priority > 0:
            raise CaseError(f"bus {b.id}: shed_priority must be positive")
    for br in net.branches:
        for end in (br.from_bus, br.to_bus):
            if not 0 <= end < n:
                raise CaseError(f"branch {br.id}: dangling endpoint bus {end}")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {br.id}: self loop at bus {br.from_bus}")
        if not br.reactance > 0:
            raise CaseError(f"branch {br.id}: nonpositive reactance {br.reactance}")
        if not br.rating_long > 0:
            raise CaseError(f"branch {br.id}: nonpositive rating {br.rating_long}")
    for g in net.generators:
        if not 0 <= g.bus < n:
            raise CaseError(f"generator {g.id}: dangling bus {g.bus}")
        if not 0 <= g.p_min <= g.p_max:
            raise CaseError(f"generator {g.id}: need 0 <= p_min <= p_max")
    if n > 1:
        adj = csr_matrix(
            (np.ones(len(net.branches)), ([br.from_bus for br in net.branches], [br.to_bus for br in net.branches])),
            shape=(n, n),
        )
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            raise CaseError(f"network is not connected at full health ({ncomp} components)")


# ---------------------------------------------------------------------------
# parsing / serialization

def parse_case(text: str, dialect: str = "native-json",
               priorities: Mapping[int, float] | None = None) -> Network:
    """Parse case text. ``priorities`` overrides per-bus shed priorities."""
    if dialect == "native-json":
        net = _parse_native(text)
    elif dialect == "matpower-m":
        net = _parse_matpower(text)
    else:
        raise CaseError(f"unknown dialect {dialect!r}; expected one of {DIALECTS}")
    if priorities:
        net = with_priorities(net, priorities)
    return net


def load_case(path: str, dialect: str | None = None) -> Network:
    if dialect is None:
        dialect = "matpower-m" if str(path).endswith(".m") else "native-json"
    with open(path) as fh:
        net = parse_case(fh.read(), dialect)
    return replace(net, name=str(path).rsplit("/", 1)[-1].split(".")[0])


def ieee30() -> Network:
    """The IEEE 30-bus case shipped with the package."""
    text = resources.files("gridcascade").joinpath("data", "case30.m").read_text()
    return replace(parse_case(text, "matpower-m"), name="case30")


def with_priorities(net: Network, priorities: Mapping[int, float]) -> Network:
    buses = [replace(b, shed_priority=float(priorities.get(b.id, b.shed_priority))) for b in net.buses]
    return replace(net, buses=tuple(buses))


def to_json(net: Network) -> str:
    doc = {
        "base_mva": net.base_mva,
        "buses": [asdict(b) for b in net.buses],
        "branches": [asdict(b) for b in net.branches],
        "generators": [asdict(g) for g in net.generators],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _parse_native(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"JSON syntax error: {exc.msg}", exc.lineno, exc.colno) from None
    try:
        buses = [Bus(int(b["id"]), float(b["load_p"]), float(b.get("shed_priority", 1.0)),
                     bool(b.get("is_slack", False))) for b in doc["buses"]]
        branches = [Branch(int(b["id"]), int(b["from_bus"]), int(b["to_bus"]), float(b["reactance"]),
                           float(b["rating_long"]), float(b.get("cost_weight", b["rating_long"] / doc.get("base_mva", 100.0))))
                    for b in doc["branches"]]
        gens = [Generator(int(g["id"]), int(g["bus"]), float(g["p_max"]), float(g.get("p_min", 0.0)),
                          float(g.get("cost", 1.0))) for g in doc.get("generators", [])]
        base = float(doc.get("base_mva", 100.0))
    except (KeyError, TypeError) as exc:
        raise CaseError(f"missing or malformed field: {exc}") from None
    return Network(buses, branches, gens, base)


_BLOCK_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[")
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([^;\[\n]+);")
_KNOWN_TABLES = {"bus", "gen", "branch", "gencost"}
# standard MATPOWER widths (OPF result columns beyond these are tolerated)
_STD_WIDTH = {"bus": 17, "gen": 25, "branch": 21}


def _strip_comment(line: str) -> str:
    i = line.find("%")
    return line if i < 0 else line[:i]


def _matpower_tables(text: str) -> tuple[dict[str, list[tuple[int, list[float]]]], dict[str, str]]:
    lines = text.splitlines()
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    scalars: dict[str, str] = {}
    i = 0
    while i < len(lines):
        code = _strip_comment(lines[i])
        m = _BLOCK_RE.search(code)
        if m is None:
            s = _SCALAR_RE.search(code)
            if s:
                scalars[s.group(1)] = s.group(2).strip()
            i += 1
            continue
        name, start_line = m.group(1), i + 1
        rows: list[tuple[int, list[float]]] = []
        rest, col0 = code[m.end():], m.end()
        closed = False
        while True:
            body = rest
            end = body.find("]")
            if end >= 0:
                body, closed = body[:end], True
            for chunk_start, chunk in _split_rows(body):
                toks = chunk.replace(",", " ").split()
                if not toks:
                    continue
                vals = []
                for tok in toks:
                    try:
                        vals.append(float(tok))
                    except ValueError:
                        col = col0 + chunk_start + chunk.find(tok) + 1
                        raise CaseError(f"mpc.{name}: bad number {tok!r}", i + 1, col) from None
                rows.append((i + 1, vals))
            if closed:
                break
            i += 1
            if i >= len(lines):
                raise CaseError(f"mpc.{name}: unterminated matrix", start_line, 1)
            rest, col0 = _strip_comment(lines[i]), 0
        tables[name] = rows
        i += 1
    return tables, scalars


def _split_rows(body: str):
    pos = 0
    for part in body.split(";"):
        yield pos, part
        pos += len(part) + 1


def _parse_matpower(text: str) -> Network:
    tables, scalars = _matpower_tables(text)
    for name in sorted(set(tables) - _KNOWN_TABLES):
        log.warning("ignoring unsupported MATPOWER table mpc.%s", name)
    for key in ("bus", "gen", "branch"):
        if key not in tables:
            raise CaseError(f"missing mpc.{key} table")
    base = float(scalars.get("baseMVA", "100"))

    def need(name, row, width):
        line, vals = row
        if len(vals) < width:
            raise CaseError(f"mpc.{name}: row has {len(vals)} columns, need {width}", line, 1)
        if len(vals) > _STD_WIDTH.get(name, len(vals)):
            log.warning("mpc.%s line %d: %d extra column(s) ignored", name, line, len(vals) - _STD_WIDTH[name])
        return vals

    ext_to_int: dict[int, int] = {}
    buses = []
    for row in tables["bus"]:
        v = need("bus", row, 3)
        ext = int(v[0])
        if ext in ext_to_int:
            raise CaseError(f"duplicate bus number {ext}", row[0], 1)
        ext_to_int[ext] = len(buses)
        buses.append(Bus(len(buses), float(v[2]), 1.0, int(v[1]) == 3))

    def bus_of(ext, line, what):
        try:
            return ext_to_int[int(ext)]
        except KeyError:
            raise CaseError(f"{what} references nonexistent bus {int(ext)}", line, 1) from None

    costs = []
    for line, v in tables.get("gencost", []):
        model, n = int(v[0]), int(v[3])
        if model == 2:
            coeffs = v[4:4 + n]
            costs.append(coeffs[-2] if n >= 2 else 0.0)
        else:
            xs, ys = v[4:4 + 2 * n:2], v[5:5 + 2 * n:2]
            costs.append((ys[1] - ys[0]) / (xs[1] - xs[0]) if n >= 2 and xs[1] != xs[0] else 0.0)

    gens = []
    for k, row in enumerate(tables["gen"]):
        v = need("gen", row, 10)
        if int(v[7]) <= 0:
            log.warning("skipping out-of-service generator on line %d", row[0])
            continue
        gens.append(Generator(len(gens), bus_of(v[0], row[0], "generator"), float(v[8]), max(0.0, float(v[9])),
                              float(costs[k]) if k < len(costs) else 1.0))

    branches = []
    for row in tables["branch"]:
        v = need("branch", row, 6)
        if len(v) > 10 and int(v[10]) <= 0:
            log.warning("skipping out-of-service branch on line %d", row[0])
            continue
        f, t = bus_of(v[0], row[0], "branch"), bus_of(v[1], row[0], "branch")
        if not v[3] > 0:
            raise CaseError(f"branch {int(v[0])}-{int(v[1])}: nonpositive reactance {v[3]}", row[0], 1)
        rate = float(v[5])
        branches.append(Branch(len(branches), f, t, float(v[3]), rate, rate / base))
    return Network(buses, branches, gens, base)


# ---------------------------------------------------------------------------

def scale_loads(net: Network, profile: LoadingProfile | float) -> Network:
    c = profile.c if isinstance(profile, LoadingProfile) else LoadingProfile(float(profile)).c
    return replace(net, buses=tuple(replace(b, load_p=b.load_p * c) for b in net.buses))


def line_graph_adjacency(net: Network) -> csr_matrix:
    nbr = net.n_branch
    inc = csr_matrix((np.ones(2 * nbr), (np.r_[net.from_bus, net.to_bus], np.r_[np.arange(nbr), np.arange(nbr)])),
                     shape=(net.n_bus, nbr))
    shared = (inc.T @ inc).tolil()
    shared.setdiag(0)
    adj = shared.tocsr()
    adj.eliminate_zeros()
    adj.data[:] = 1.0
    return adj


def line_graph_distance(net: Network, alive: Sequence[bool] | None = None) -> np.ndarray:
    """Hop distance between branches in the line graph.

    Unreachable pairs get the sentinel ``n_branch`` (the number of line-graph
    vertices), which exceeds every finite distance.
    """
    adj = line_graph_adjacency(net)
    if alive is not None:
        keep = np.asarray(alive, dtype=float)
        adj = csr_matrix(adj.multiply(keep[:, None]).multiply(keep[None, :]))
        adj.eliminate_zeros()  # stored zeros would still count as edges when unweighted
    dist = shortest_path(adj, method="D", directed=False, unweighted=True)
    dist[~np.isfinite(dist)] = net.n_branch
    return dist
