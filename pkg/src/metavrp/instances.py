"""Synthetic instance generation and instance file formats.

Coordinates of synthetic instances always live in the unit square. Benchmark
instances read from TSPLIB95/CVRPLIB files keep their raw coordinates and are
flagged so that costs are evaluated with EUC_2D integer rounding.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument, ParseError, UnsupportedFormat, ValidationError

DIST_KINDS = ("uniform", "gaussian_mixture", "rotation", "explosion")
PROBLEMS = ("tsp", "cvrp")

EXPLOSION_RADIUS = 0.3
# Mean of the exponential push distance, see decisions on Exp(1/10).
EXPLOSION_MEAN = 0.1
ROTATION_SUBSET_P = 0.5
MAX_DEMAND = 9


@dataclass(frozen=True)
class DistributionSpec:
    kind: str = "uniform"
    c: int = 0
    l: float = 0.0

    def __post_init__(self):
        if self.kind not in DIST_KINDS:
            raise InvalidArgument(f"unknown distribution kind {self.kind!r}")
        if self.kind == "gaussian_mixture":
            if self.c < 1 or not self.l > 0:
                raise InvalidArgument("gaussian_mixture needs c >= 1 and l > 0")
        elif self.c != 0 or self.l != 0:
            raise InvalidArgument(f"{self.kind} takes no parameters")

    @property
    def name(self) -> str:
        if self.kind == "gaussian_mixture":
            return f"gm_{self.c}_{_fmt_num(self.l)}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "DistributionSpec":
        """Parse ``uniform``, ``rotation``, ``explosion`` or ``gm_<c>_<l>``.

        Short aliases ``U``, ``R``, ``E`` and ``GM_c^l`` are accepted too.
        """
        t = text.strip()
        aliases = {"u": "uniform", "r": "rotation", "e": "explosion"}
        low = t.lower()
        if low in aliases:
            return cls(aliases[low])
        if low in DIST_KINDS and low != "gaussian_mixture":
            return cls(low)
        m = re.fullmatch(r"(?:gm|gaussian_mixture)[_\-]?(\d+)(?:_|\^)([0-9.]+)", low)
        if m:
            return cls("gaussian_mixture", int(m.group(1)), float(m.group(2)))
        raise InvalidArgument(f"invalid distribution name {text!r}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "c": self.c, "l": self.l}

    @classmethod
    def from_json(cls, d: dict) -> "DistributionSpec":
        return cls(d["kind"], int(d.get("c", 0)), float(d.get("l", 0.0)))


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


@dataclass(frozen=True)
class TaskSpec:
    n: int
    dist: DistributionSpec | None = DistributionSpec()
    problem: str = "tsp"

    def __post_init__(self):
        if self.n < 2:
            raise InvalidArgument(f"task size must be >= 2, got {self.n}")
        if self.problem not in PROBLEMS:
            raise InvalidArgument(f"unknown problem {self.problem!r}")

    @property
    def name(self) -> str:
        d = self.dist.name if self.dist is not None else "benchmark"
        return f"{self.problem}:{self.n}:{d}"

    @classmethod
    def parse(cls, text: str) -> "TaskSpec":
        """Parse ``<problem>:<n>:<dist>``, e.g. ``tsp:100:uniform``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise InvalidArgument(f"task must look like tsp:100:uniform, got {text!r}")
        problem, n, dist = parts
        try:
            size = int(n)
        except ValueError:
            raise InvalidArgument(f"invalid task size {n!r}") from None
        return cls(size, DistributionSpec.parse(dist), problem.lower())


def capacity_for(n: int) -> int:
    return math.ceil(30 + n / 5)


@dataclass(eq=False)
class VrpInstance:
    coords: np.ndarray  # (n, 2) customers / cities
    task: TaskSpec
    depot: np.ndarray | None = None
    demands_raw: np.ndarray | None = None
    capacity_raw: int | None = None
    seed: int | None = None
    name: str | None = None
    euc2d: bool = False  # benchmark instance: raw units, TSPLIB rounding

    @property
    def problem(self) -> str:
        return self.task.problem

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def demands(self) -> np.ndarray | None:
        if self.demands_raw is None:
            return None
        return self.demands_raw / float(self.capacity_raw)

    @property
    def capacity(self) -> float | None:
        return 1.0 if self.problem == "cvrp" else None

    def all_coords(self) -> np.ndarray:
        """Coordinates in environment index order (depot first for cvrp)."""
        if self.problem == "cvrp":
            return np.vstack([self.depot[None, :], self.coords])
        return self.coords

    def with_coords(self, coords: np.ndarray, depot: np.ndarray | None = None) -> "VrpInstance":
        return VrpInstance(
            coords=coords, task=self.task, depot=depot, demands_raw=self.demands_raw,
            capacity_raw=self.capacity_raw, seed=self.seed, name=self.name, euc2d=self.euc2d,
        )

    def __eq__(self, other):
        if not isinstance(other, VrpInstance):
            return NotImplemented
        return (
            self.task == other.task
            and self.seed == other.seed
            and self.name == other.name
            and self.euc2d == other.euc2d
            and self.capacity_raw == other.capacity_raw
            and np.array_equal(self.coords, other.coords)
            and _opt_equal(self.depot, other.depot)
            and _opt_equal(self.demands_raw, other.demands_raw)
        )

    def validate(self) -> None:
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ValidationError("coords must have shape (n, 2)")
        if not np.all(np.isfinite(self.coords)):
            raise ValidationError("non-finite coordinate")
        synthetic = not self.euc2d
        if synthetic and (self.coords.min() < 0 or self.coords.max() > 1):
            raise ValidationError("synthetic coordinates must lie in [0, 1]^2")
        if self.problem == "tsp":
            if self.depot is not None or self.demands_raw is not None:
                raise ValidationError("tsp instance carries depot/demands")
            return
        if self.depot is None or self.demands_raw is None or self.capacity_raw is None:
            raise ValidationError("cvrp instance needs depot, demands and capacity")
        if len(self.demands_raw) != self.n:
            raise ValidationError("one demand per customer required")
        if np.any(self.demands_raw < 1) or np.any(self.demands_raw > self.capacity_raw):
            raise ValidationError("demand outside [1, Q]")
        if synthetic:
            if self.capacity_raw != capacity_for(self.n):
                raise ValidationError(f"capacity {self.capacity_raw} != ceil(30 + n/5)")
            if np.any(self.demands_raw > MAX_DEMAND):
                raise ValidationError(f"demand above {MAX_DEMAND}/Q")


def _opt_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def minmax_normalize(points: np.ndarray) -> np.ndarray:
    """Per-axis min-max scaling to [0, 1]; a constant axis maps to 0.5."""
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    out = np.empty_like(points, dtype=float)
    for ax in range(points.shape[1]):
        if span[ax] > 0:
            out[:, ax] = (points[:, ax] - lo[ax]) / span[ax]
        else:
            out[:, ax] = 0.5
    return np.clip(out, 0.0, 1.0)


def cluster_sizes(n: int, c: int) -> list[int]:
    """Sizes of the c gaussian clusters holding the n - c non-center nodes."""
    base, extra = divmod(n - c, c)
    return [base + (1 if i < extra else 0) for i in range(c)]


def gaussian_mixture_raw(n: int, c: int, l: float, rng: np.random.Generator) -> np.ndarray:
    centers = rng.uniform(0.0, l, size=(c, 2))
    parts = [centers]
    for center, size in zip(centers, cluster_sizes(n, c)):
        parts.append(rng.normal(loc=center, scale=1.0, size=(size, 2)))
    return np.vstack(parts)


def rotation_matrix(phi: float) -> np.ndarray:
    return np.array([[math.cos(phi), math.sin(phi)], [-math.sin(phi), math.cos(phi)]])


def rotation_raw(n: int, rng: np.random.Generator):
    """Return (mutated points, selection mask, original points) before normalization."""
    pts = rng.uniform(size=(n, 2))
    mask = rng.uniform(size=n) < ROTATION_SUBSET_P
    phi = rng.uniform(0.0, 2 * math.pi)
    out = pts.copy()
    out[mask] = pts[mask] @ rotation_matrix(phi).T
    return out, mask, pts


def explosion_raw(n: int, rng: np.random.Generator):
    """Return (mutated points, exploded mask, center) before normalization."""
    pts = rng.uniform(size=(n, 2))
    center = rng.uniform(size=2)
    diff = center - pts
    dist = np.linalg.norm(diff, axis=1)
    inside = (dist < EXPLOSION_RADIUS) & (dist > 0)
    out = pts.copy()
    if inside.any():
        push = EXPLOSION_RADIUS + rng.exponential(EXPLOSION_MEAN, size=int(inside.sum()))
        out[inside] = center + push[:, None] * diff[inside] / dist[inside, None]
    return out, inside, center


def sample_coords(n: int, dist: DistributionSpec, rng) -> np.ndarray:
    if n < 2:
        raise InvalidArgument(f"n must be >= 2, got {n}")
    rng = as_rng(rng)
    if dist.kind == "uniform":
        return rng.uniform(size=(n, 2))
    if dist.kind == "gaussian_mixture":
        if dist.c > n:
            raise InvalidArgument(f"cluster count {dist.c} exceeds n={n}")
        return minmax_normalize(gaussian_mixture_raw(n, dist.c, dist.l, rng))
    if dist.kind == "rotation":
        return minmax_normalize(rotation_raw(n, rng)[0])
    pts, inside, _ = explosion_raw(n, rng)
    if not inside.any():
        return pts
    return minmax_normalize(pts)


def make_instance(task: TaskSpec, rng) -> VrpInstance:
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    rng = as_rng(rng)
    coords = sample_coords(task.n, task.dist, rng)
    if task.problem == "tsp":
        return VrpInstance(coords=coords, task=task, seed=seed)
    depot = rng.uniform(size=2)
    demands = rng.integers(1, MAX_DEMAND + 1, size=task.n)
    return VrpInstance(
        coords=coords, task=task, depot=depot, demands_raw=demands,
        capacity_raw=capacity_for(task.n), seed=seed,
    )


def instance_seeds(root_seed: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(root_seed)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in ss.spawn(count)]


def make_instances(task: TaskSpec, count: int, root_seed: int) -> list[VrpInstance]:
    return [make_instance(task, s) for s in instance_seeds(root_seed, count)]


def build_training_task_set(n_min: int, n_max: int, step: int,
                            dists: Sequence[DistributionSpec], problem: str = "tsp") -> list[TaskSpec]:
    if not dists:
        raise InvalidArgument("empty distribution list")
    if n_min > n_max or step < 1:
        raise InvalidArgument("need n_min <= n_max and step >= 1")
    return [TaskSpec(n, d, problem) for n in range(n_min, n_max + 1, step) for d in dists]


def paper_distributions() -> list[DistributionSpec]:
    """The eleven training distributions: U, GM_1^1 and GM_{3,5,7}^{10,30,50}."""
    dists = [DistributionSpec("uniform"), DistributionSpec("gaussian_mixture", 1, 1.0)]
    dists += [DistributionSpec("gaussian_mixture", c, float(l)) for c in (3, 5, 7) for l in (10, 30, 50)]
    return dists


# -- native jsonl format ------------------------------------------------------

def instance_to_json(inst: VrpInstance) -> dict:
    rec = {
        "problem": inst.problem,
        "n": inst.n,
        "dist": inst.task.dist.to_json() if inst.task.dist is not None else None,
        "seed": inst.seed,
        "coords": inst.coords.tolist(),
    }
    if inst.problem == "cvrp":
        rec["depot"] = inst.depot.tolist()
        rec["demands_raw"] = [int(d) for d in inst.demands_raw]
        rec["capacity_raw"] = int(inst.capacity_raw)
    if inst.name is not None:
        rec["name"] = inst.name
    if inst.euc2d:
        rec["euc2d"] = True
    return rec


def instance_from_json(rec: dict) -> VrpInstance:
    dist = DistributionSpec.from_json(rec["dist"]) if rec.get("dist") is not None else None
    task = TaskSpec(int(rec["n"]), dist, rec["problem"])
    coords = np.asarray(rec["coords"], dtype=float).reshape(-1, 2)
    if len(coords) != task.n:
        raise ValidationError(f"n={task.n} but {len(coords)} coordinates")
    inst = VrpInstance(coords=coords, task=task, seed=rec.get("seed"),
                       name=rec.get("name"), euc2d=bool(rec.get("euc2d", False)))
    if task.problem == "cvrp":
        inst.depot = np.asarray(rec["depot"], dtype=float)
        inst.demands_raw = np.asarray(rec["demands_raw"], dtype=np.int64)
        inst.capacity_raw = int(rec["capacity_raw"])
    inst.validate()
    return inst


def write_instances(instances: Iterable[VrpInstance], path) -> None:
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_json(inst)) + "\n")


def read_instances(path) -> list[VrpInstance]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(instance_from_json(rec))
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"malformed instance record ({exc})", line=lineno) from None
    return out


# -- TSPLIB95 / CVRPLIB -------------------------------------------------------

_SECTIONS = ("NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION", "TOUR_SECTION")


def _read_tsplib_blocks(path):
    """Split a TSPLIB-style file into a keyword dict and raw section rows."""
    spec: dict[str, str] = {}
    sections: dict[str, list[tuple[int, list[str]]]] = {}
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line == "EOF":
                break
            head = line.split()[0].rstrip(":")
            if head.endswith("_SECTION"):
                current = head
                sections[current] = []
                continue
            if ":" in line and not line[0].isdigit() and not line[0] == "-":
                key, _, value = line.partition(":")
                spec[key.strip().upper()] = value.strip()
                current = None
                continue
            if current is None:
                raise ParseError(f"unexpected line {line!r}", line=lineno)
            sections[current].append((lineno, line.split()))
    return spec, sections


def _dimension(spec) -> int:
    if "DIMENSION" not in spec:
        raise ParseError("missing DIMENSION")
    try:
        return int(spec["DIMENSION"])
    except ValueError:
        raise ParseError(f"bad DIMENSION {spec['DIMENSION']!r}") from None


def _coords(sections, dim) -> dict[int, tuple[float, float]]:
    if "NODE_COORD_SECTION" not in sections:
        raise ParseError("missing NODE_COORD_SECTION")
    out = {}
    for lineno, row in sections["NODE_COORD_SECTION"]:
        if len(row) < 3:
            raise ParseError("coordinate row needs id x y", line=lineno)
        try:
            out[int(row[0])] = (float(row[1]), float(row[2]))
        except ValueError:
            raise ParseError(f"bad coordinate row {row}", line=lineno) from None
    if len(out) != dim:
        raise ParseError(f"DIMENSION {dim} but {len(out)} coordinates")
    return out


def _check_edge_type(spec):
    ewt = spec.get("EDGE_WEIGHT_TYPE", "").upper()
    if ewt != "EUC_2D":
        raise UnsupportedFormat(f"EDGE_WEIGHT_TYPE {ewt or '<missing>'} not supported (EUC_2D only)")


def parse_tsplib(path) -> VrpInstance:
    spec, sections = _read_tsplib_blocks(path)
    kind = spec.get("TYPE", "TSP").upper()
    if kind != "TSP":
        raise UnsupportedFormat(f"TYPE {kind} is not TSP")
    _check_edge_type(spec)
    dim = _dimension(spec)
    pts = _coords(sections, dim)
    ids = sorted(pts)
    coords = np.array([pts[i] for i in ids], dtype=float)
    return VrpInstance(coords=coords, task=TaskSpec(dim, None, "tsp"),
                       name=spec.get("NAME", Path(path).stem), euc2d=True)


def parse_cvrplib(path) -> VrpInstance:
    spec, sections = _read_tsplib_blocks(path)
    kind = spec.get("TYPE", "CVRP").upper()
    if kind != "CVRP":
        raise UnsupportedFormat(f"TYPE {kind} is not CVRP")
    _check_edge_type(spec)
    dim = _dimension(spec)
    if "CAPACITY" not in spec:
        raise ParseError("missing CAPACITY")
    capacity = int(float(spec["CAPACITY"]))
    pts = _coords(sections, dim)
    demand = {}
    for lineno, row in sections.get("DEMAND_SECTION", []):
        try:
            demand[int(row[0])] = int(row[1])
        except (ValueError, IndexError):
            raise ParseError(f"bad demand row {row}", line=lineno) from None
    if len(demand) != dim:
        raise ParseError(f"DIMENSION {dim} but {len(demand)} demands")
    depots = []
    for _, row in sections.get("DEPOT_SECTION", []):
        for tok in row:
            if int(tok) == -1:
                break
            depots.append(int(tok))
    depot_id = depots[0] if depots else min(pts)
    customers = [i for i in sorted(pts) if i != depot_id]
    return VrpInstance(
        coords=np.array([pts[i] for i in customers], dtype=float),
        task=TaskSpec(len(customers), None, "cvrp"),
        depot=np.array(pts[depot_id], dtype=float),
        demands_raw=np.array([demand[i] for i in customers], dtype=np.int64),
        capacity_raw=capacity,
        name=spec.get("NAME", Path(path).stem),
        euc2d=True,
    )


def parse_benchmark(path) -> VrpInstance:
    """Dispatch on the TYPE keyword (TSP or CVRP)."""
    spec, _ = _read_tsplib_blocks(path)
    kind = spec.get("TYPE", "").upper()
    if kind == "TSP":
        return parse_tsplib(path)
    if kind == "CVRP":
        return parse_cvrplib(path)
    raise UnsupportedFormat(f"TYPE {kind or '<missing>'} not supported")


def parse_tour_file(path) -> list[int]:
    """Read a TSPLIB tour (1-based ids, -1 terminated); returns 0-based indices."""
    tour = []
    in_section = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("TOUR_SECTION"):
                in_section = True
                continue
            if not in_section and ":" in line:
                continue
            if line == "EOF":
                break
            for tok in line.split():
                try:
                    v = int(tok)
                except ValueError:
                    raise ParseError(f"bad tour entry {tok!r}", line=lineno) from None
                if v == -1:
                    return tour
                tour.append(v - 1)
    return tour


def write_tsplib(inst: VrpInstance, path) -> None:
    """Write an instance in TSPLIB95 (tsp) or CVRPLIB (cvrp) syntax."""
    lines = [f"NAME : {inst.name or 'instance'}"]
    if inst.problem == "tsp":
        lines += ["TYPE : TSP", f"DIMENSION : {inst.n}", "EDGE_WEIGHT_TYPE : EUC_2D",
                  "NODE_COORD_SECTION"]
        lines += [f"{i + 1} {x!r} {y!r}" for i, (x, y) in enumerate(inst.coords.tolist())]
    else:
        pts = inst.all_coords().tolist()
        lines += ["TYPE : CVRP", f"DIMENSION : {inst.n + 1}", "EDGE_WEIGHT_TYPE : EUC_2D",
                  f"CAPACITY : {inst.capacity_raw}", "NODE_COORD_SECTION"]
        lines += [f"{i + 1} {x!r} {y!r}" for i, (x, y) in enumerate(pts)]
        lines += ["DEMAND_SECTION", "1 0"]
        lines += [f"{i + 2} {int(d)}" for i, d in enumerate(inst.demands_raw)]
        lines += ["DEPOT_SECTION", "1", "-1"]
    lines.append("EOF")
    Path(path).write_text("\n".join(lines) + "\n")


def unit_scaled(inst: VrpInstance) -> VrpInstance:
    """Scale a raw benchmark instance into [0,1]^2, keeping aspect ratio."""
    pts = inst.all_coords()
    lo = pts.min(axis=0)
    span = float((pts.max(axis=0) - lo).max()) or 1.0
    scaled = (pts - lo) / span
    out = VrpInstance(coords=scaled[1:] if inst.problem == "cvrp" else scaled, task=inst.task,
                      depot=scaled[0] if inst.problem == "cvrp" else None,
                      demands_raw=inst.demands_raw, capacity_raw=inst.capacity_raw,
                      seed=inst.seed, name=inst.name, euc2d=False)
    return out
