"""Dynamic path diagrams, panel datasets and their text/CSV formats.

A diagram is a set of timed variables joined by lagged edges. Lag-0 edges
must form a DAG; lagged edges may point anywhere (including self-loops).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

OBSERVED = "observed"
LATENT = "latent"
ROLES = (OBSERVED, LATENT)
SCALES = ("continuous", "binary", "ternary")

# Diagram names of the six trust-model variables.
AIP = "AIP"
HP = "HP"
TRUST = "E_AIP"
OVER_UNDER = "OverUnder"
RELIANCE = "Reliance"
CUE = "Cue"

# Panel CSV column -> diagram variable.
PANEL_COLUMNS = {
    "AIP": AIP,
    "HP": HP,
    "E_AIP": TRUST,
    "reliance": RELIANCE,
    "cue": CUE,
    "over_under": OVER_UNDER,
}
PANEL_HEADER = ["participant", "t", *PANEL_COLUMNS]


class DiagramError(ValueError):
    pass


class CycleError(DiagramError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        super().__init__("lag-0 cycle: " + " -> ".join(self.cycle))


class UnknownVariableError(DiagramError):
    def __init__(self, name: str, line: int | None = None):
        self.name = name
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown variable {name!r}{where}")


class LagError(DiagramError):
    pass


class DuplicateEdgeError(DiagramError):
    pass


class MissingInflowError(DiagramError):
    pass


class DiagramSyntaxError(DiagramError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class PanelError(ValueError):
    pass


@dataclass(frozen=True)
class VariableSpec:
    name: str
    role: str = OBSERVED
    scale: str = "continuous"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.name.isidentifier():
            raise DiagramError(f"variable name {self.name!r} is not an identifier")
        if self.role not in ROLES:
            raise DiagramError(f"{self.name}: role must be one of {ROLES}")
        if self.scale not in SCALES:
            raise DiagramError(f"{self.name}: scale must be one of {SCALES}")
        if self.scale == "ternary":
            object.__setattr__(self, "lo", -1.0)
            object.__setattr__(self, "hi", 1.0)
        elif self.scale == "binary":
            object.__setattr__(self, "lo", 0.0)
            object.__setattr__(self, "hi", 1.0)
        elif not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise DiagramError(f"{self.name}: continuous range needs finite lo < hi")

    @property
    def latent(self) -> bool:
        return self.role == LATENT

    @property
    def levels(self) -> tuple[float, ...] | None:
        if self.scale == "ternary":
            return (-1.0, 0.0, 1.0)
        if self.scale == "binary":
            return (0.0, 1.0)
        return None

    def admits(self, values: np.ndarray) -> np.ndarray:
        """Elementwise membership test against the declared range or level set."""
        values = np.asarray(values, dtype=float)
        if self.levels is not None:
            return np.isin(values, self.levels)
        return (values >= self.lo) & (values <= self.hi)


@dataclass(frozen=True)
class LaggedEdge:
    source: str
    target: str
    lag: int = 0
    coefficient: float | None = None

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.source, self.target, self.lag)

    def __str__(self):
        s = f"{self.target} ~ {self.source}@{self.lag}"
        if self.coefficient is not None:
            s += f" = {self.coefficient!r}"
        return s


@dataclass(frozen=True)
class PathDiagram:
    variables: tuple[VariableSpec, ...]
    edges: tuple[LaggedEdge, ...]
    max_lag: int
    target: str

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "edges", tuple(self.edges))

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def variable(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise UnknownVariableError(name)

    def incoming(self, name: str) -> list[LaggedEdge]:
        return [e for e in self.edges if e.target == name]

    def outgoing(self, name: str) -> list[LaggedEdge]:
        return [e for e in self.edges if e.source == name]

    @property
    def latent_names(self) -> list[str]:
        return [v.name for v in self.variables if v.latent]

    @property
    def endogenous(self) -> list[str]:
        """Variables with at least one incoming edge, in declaration order."""
        targets = {e.target for e in self.edges}
        return [n for n in self.names if n in targets]

    @property
    def exogenous(self) -> list[str]:
        targets = {e.target for e in self.edges}
        return [v.name for v in self.variables if v.name not in targets and not v.latent]

    @property
    def coefficients(self) -> dict[tuple[str, str, int], float | None]:
        return {e.key: e.coefficient for e in self.edges}

    def with_coefficients(self, coefs: Mapping[tuple[str, str, int], float]) -> "PathDiagram":
        edges = tuple(replace(e, coefficient=float(coefs[e.key])) if e.key in coefs else e
                      for e in self.edges)
        return replace(self, edges=edges)

    def without_coefficients(self) -> "PathDiagram":
        return replace(self, edges=tuple(replace(e, coefficient=None) for e in self.edges))


def _lag0_order(names: list[str], edges: Iterable[LaggedEdge]) -> list[str]:
    """Kahn topological sort of the lag-0 graph; declaration order breaks ties."""
    parents = {n: set() for n in names}
    for e in edges:
        if e.lag == 0:
            parents[e.target].add(e.source)
    order: list[str] = []
    remaining = list(names)
    while remaining:
        ready = [n for n in remaining if not (parents[n] - set(order))]
        if not ready:
            raise CycleError(_find_cycle(remaining, parents))
        order.append(ready[0])
        remaining.remove(ready[0])
    return order


def _find_cycle(nodes: list[str], parents: dict[str, set[str]]) -> list[str]:
    node_set = set(nodes)
    start = nodes[0]
    path: list[str] = []
    seen: dict[str, int] = {}
    node = start
    while node not in seen:
        seen[node] = len(path)
        path.append(node)
        # every remaining node has an unresolved parent among the remaining ones
        node = sorted(p for p in parents[node] if p in node_set)[0]
    cycle = path[seen[node]:]
    cycle.reverse()  # parent -> child direction
    return cycle + [cycle[0]]


def validate_diagram(diagram: PathDiagram) -> PathDiagram:
    """Check diagram invariants and return it with edges in canonical order.

    Canonical order sorts edges by the lag-0 topological rank of the target,
    then by lag, then by the rank of the source.
    """
    names = diagram.names
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise DiagramError(f"duplicate variable names: {dupes}")
    if diagram.max_lag < 1:
        raise LagError("max_lag must be a positive integer")
    known = set(names)
    seen: set[tuple[str, str, int]] = set()
    for e in diagram.edges:
        for n in (e.source, e.target):
            if n not in known:
                raise UnknownVariableError(n)
        if e.lag < 0:
            raise LagError(f"negative lag on edge {e}")
        if e.lag > diagram.max_lag:
            raise LagError(f"edge {e} exceeds max_lag={diagram.max_lag}")
        if e.key in seen:
            raise DuplicateEdgeError(f"duplicate edge {e.target} ~ {e.source}@{e.lag}")
        if e.lag == 0 and e.source == e.target:
            raise CycleError([e.source, e.source])
        if e.coefficient is not None and not math.isfinite(e.coefficient):
            raise DiagramError(f"non-finite coefficient on edge {e}")
        seen.add(e.key)
    if diagram.target not in known:
        raise UnknownVariableError(diagram.target)
    if not diagram.incoming(diagram.target):
        raise MissingInflowError(f"target {diagram.target!r} has no incoming edge")
    rank = {n: i for i, n in enumerate(_lag0_order(names, diagram.edges))}
    edges = sorted(diagram.edges, key=lambda e: (rank[e.target], e.lag, rank[e.source]))
    return replace(diagram, edges=tuple(edges))


PAPER_VARIABLES = (
    VariableSpec(AIP, OBSERVED, "continuous", 0.0, 1.0),
    VariableSpec(HP, OBSERVED, "continuous", 0.0, 1.0),
    VariableSpec(CUE, OBSERVED, "binary"),
    VariableSpec(TRUST, LATENT, "continuous", 0.0, 1.0),
    VariableSpec(OVER_UNDER, OBSERVED, "ternary"),
    VariableSpec(RELIANCE, OBSERVED, "binary"),
)


def build_paper_diagram(include_cue: bool = True, trust_lags: Iterable[int] = (1,),
                        max_lag: int | None = None) -> PathDiagram:
    """The six-variable trust diagram with autoregressive trust lags.

    ``max_lag`` defaults to the largest requested trust lag.
    """
    lags = sorted(set(int(k) for k in trust_lags))
    if not lags:
        raise ValueError("trust_lags must be nonempty")
    if lags[0] < 1:
        raise LagError("trust lags must be positive")
    if max_lag is None:
        max_lag = lags[-1]
    if lags[-1] > max_lag:
        raise LagError(f"trust lag {lags[-1]} exceeds max_lag={max_lag}")
    edges = [
        LaggedEdge(AIP, TRUST),
        LaggedEdge(AIP, OVER_UNDER),
        LaggedEdge(HP, OVER_UNDER),
        LaggedEdge(TRUST, OVER_UNDER),
        LaggedEdge(TRUST, RELIANCE),
        LaggedEdge(OVER_UNDER, RELIANCE),
    ]
    if include_cue:
        edges += [LaggedEdge(CUE, TRUST), LaggedEdge(CUE, OVER_UNDER)]
    edges += [LaggedEdge(TRUST, TRUST, k) for k in lags]
    variables = PAPER_VARIABLES if include_cue else tuple(v for v in PAPER_VARIABLES if v.name != CUE)
    return validate_diagram(PathDiagram(variables, tuple(edges), max_lag, OVER_UNDER))


# --- text format -------------------------------------------------------------

def serialize_diagram(diagram: PathDiagram) -> str:
    lines = []
    for v in diagram.variables:
        line = f"var {v.name} {v.role} {v.scale}"
        if v.scale == "continuous":
            line += f" {v.lo!r} {v.hi!r}"
        lines.append(line)
    lines.append(f"target {diagram.target}")
    lines.append(f"max_lag {diagram.max_lag}")
    lines.extend(str(e) for e in diagram.edges)
    return "\n".join(lines) + "\n"


def _parse_float(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise DiagramSyntaxError(lineno, f"expected a number, got {tok!r}") from None


def _parse_int(tok: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise DiagramSyntaxError(lineno, f"expected an integer, got {tok!r}") from None


def parse_diagram(text: str, variables: Sequence[VariableSpec] | None = None,
                  validate: bool = True) -> PathDiagram:
    """Parse the line-oriented diagram format.

    ``var`` lines declare variables; when the text declares none, ``variables``
    (default: the six trust-model variables) are used instead. ``target`` and
    ``max_lag`` directives are optional and default to the first edge's target
    and the largest edge lag.
    """
    declared: list[VariableSpec] = []
    edges: list[tuple[int, LaggedEdge]] = []
    target = None
    max_lag = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if toks[0] == "var":
            if len(toks) not in (4, 6):
                raise DiagramSyntaxError(lineno, "expected 'var <name> <role> <scale> [lo hi]'")
            lo, hi = (0.0, 1.0)
            if len(toks) == 6:
                lo, hi = _parse_float(toks[4], lineno), _parse_float(toks[5], lineno)
            try:
                declared.append(VariableSpec(toks[1], toks[2], toks[3], lo, hi))
            except DiagramError as exc:
                raise DiagramSyntaxError(lineno, str(exc)) from None
        elif toks[0] == "target":
            if len(toks) != 2:
                raise DiagramSyntaxError(lineno, "expected 'target <name>'")
            target = toks[1]
        elif toks[0] == "max_lag":
            if len(toks) != 2:
                raise DiagramSyntaxError(lineno, "expected 'max_lag <n>'")
            max_lag = _parse_int(toks[1], lineno)
        elif "~" in line:
            lhs, rhs = (s.strip() for s in line.split("~", 1))
            coef = None
            if "=" in rhs:
                rhs, c = (s.strip() for s in rhs.split("=", 1))
                coef = _parse_float(c, lineno)
            if "@" not in rhs:
                raise DiagramSyntaxError(lineno, "edge source needs '@<lag>'")
            src, lag = (s.strip() for s in rhs.split("@", 1))
            if not lhs.isidentifier() or not src.isidentifier():
                raise DiagramSyntaxError(lineno, "malformed edge")
            edges.append((lineno, LaggedEdge(src, lhs, _parse_int(lag, lineno), coef)))
        else:
            raise DiagramSyntaxError(lineno, f"unrecognised line {raw.strip()!r}")

    if not declared:
        declared = list(variables if variables is not None else PAPER_VARIABLES)
    known = {v.name for v in declared}
    for lineno, e in edges:
        for n in (e.source, e.target):
            if n not in known:
                raise UnknownVariableError(n, lineno)
    if not edges and target is None:
        raise DiagramSyntaxError(0, "diagram has no edges and no target")
    if target is None:
        target = edges[0][1].target
    if max_lag is None:
        max_lag = max([e.lag for _, e in edges] + [1])
    diagram = PathDiagram(tuple(declared), tuple(e for _, e in edges), max_lag, target)
    return validate_diagram(diagram) if validate else diagram


# --- panel data --------------------------------------------------------------

@dataclass(frozen=True)
class ParticipantSeries:
    pid: str
    values: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(next(iter(self.values.values()))) if self.values else 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def head(self, n: int) -> "ParticipantSeries":
        return ParticipantSeries(self.pid, {k: v[:n] for k, v in self.values.items()})


@dataclass(frozen=True)
class PanelDataset:
    variables: tuple[VariableSpec, ...]
    participants: tuple[ParticipantSeries, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "participants", tuple(self.participants))
        names = [v.name for v in self.variables]
        for p in self.participants:
            if sorted(p.values) != sorted(names):
                raise PanelError(f"participant {p.pid}: variable set differs from panel")
            lengths = {len(a) for a in p.values.values()}
            if len(lengths) > 1:
                raise PanelError(f"participant {p.pid}: ragged columns")
            for v in self.variables:
                col = np.asarray(p.values[v.name], dtype=float)
                missing = np.isnan(col)
                if missing.any() and not v.latent:
                    t = int(np.flatnonzero(missing)[0])
                    raise PanelError(f"participant {p.pid}: observed {v.name} missing at t={t}")
                bad = ~missing & ~v.admits(np.where(missing, v.lo, col))
                if bad.any():
                    t = int(np.flatnonzero(bad)[0])
                    raise PanelError(f"participant {p.pid}: {v.name}={col[t]} out of range at t={t}")

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def n_participants(self) -> int:
        return len(self.participants)

    @property
    def lengths(self) -> list[int]:
        return [len(p) for p in self.participants]

    def array(self, name: str) -> np.ndarray:
        """(participants, steps) array of one variable; series must share a length."""
        if len(set(self.lengths)) > 1:
            raise PanelError("series lengths differ")
        return np.stack([np.asarray(p.values[name], dtype=float) for p in self.participants])

    def masked(self, names: Iterable[str]) -> "PanelDataset":
        names = set(names)
        parts = tuple(ParticipantSeries(p.pid, {k: (np.full(len(v), np.nan) if k in names else v)
                                                for k, v in p.values.items()})
                      for p in self.participants)
        return PanelDataset(self.variables, parts)

    def head(self, n_steps: int) -> "PanelDataset":
        return PanelDataset(self.variables, tuple(p.head(n_steps) for p in self.participants))

    def subset(self, indices: Sequence[int]) -> "PanelDataset":
        return PanelDataset(self.variables, tuple(self.participants[i] for i in indices))


def panel_from_arrays(arrays: Mapping[str, np.ndarray], variables: Sequence[VariableSpec] = PAPER_VARIABLES,
                      pids: Sequence[str] | None = None) -> PanelDataset:
    """Build a panel from (participants, steps) arrays keyed by variable name."""
    n = len(next(iter(arrays.values())))
    pids = [f"p{i:04d}" for i in range(n)] if pids is None else list(pids)
    parts = tuple(ParticipantSeries(pids[i], {v.name: np.asarray(arrays[v.name][i], dtype=float)
                                              for v in variables})
                  for i in range(n))
    return PanelDataset(tuple(variables), parts)


def _fmt(v: VariableSpec, x: float) -> str:
    if math.isnan(x):
        return ""
    if v.levels is not None:
        return str(int(x))
    return repr(float(x))


def write_panel_csv(panel: PanelDataset, path=None) -> str:
    """Write the panel in the fixed CSV layout; returns the text."""
    by_name = {v.name: v for v in panel.variables}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PANEL_HEADER)
    for p in panel.participants:
        for t in range(len(p)):
            row = [p.pid, t]
            for col, name in PANEL_COLUMNS.items():
                row.append(_fmt(by_name[name], float(p.values[name][t])) if name in by_name else "")
            w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_panel_csv(source, variables: Sequence[VariableSpec] = PAPER_VARIABLES) -> PanelDataset:
    """Read a panel CSV from a path or file object.

    Columns not backed by a variable in ``variables`` must be empty.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8", newline="") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != PANEL_HEADER:
        raise PanelError(f"panel header must be {','.join(PANEL_HEADER)}")
    names = {v.name for v in variables}
    series: dict[str, dict[str, list[float]]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(PANEL_HEADER):
            raise PanelError(f"line {lineno}: expected {len(PANEL_HEADER)} fields")
        pid = row[0]
        try:
            t = int(row[1])
        except ValueError:
            raise PanelError(f"line {lineno}: bad step index {row[1]!r}") from None
        cols = series.setdefault(pid, {n: [] for n in names})
        if t != len(next(iter(cols.values()))):
            raise PanelError(f"line {lineno}: participant {pid} steps not consecutive from 0")
        for cell, name in zip(row[2:], PANEL_COLUMNS.values()):
            if name not in names:
                continue
            try:
                cols[name].append(float(cell) if cell != "" else math.nan)
            except ValueError:
                raise PanelError(f"line {lineno}: bad value {cell!r} for {name}") from None
    parts = tuple(ParticipantSeries(pid, {n: np.array(c) for n, c in cols.items()})
                  for pid, cols in series.items())
    return PanelDataset(tuple(variables), parts)
