"""Sub-Riemannian structures given by polynomial frames.

The metric is the one that makes the frame orthonormal pointwise; lengths are
always measured through control norms, so rank-deficient frames (Grushin on
``x1 = 0``) need no special handling.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from .symbolic import Multinomial, VectorField, as_fraction, lie_bracket, parse_poly

Box = tuple[tuple[float, float], ...]
Word = tuple[int, ...]

DEFAULT_RANK_TOL = 1e-9
DEFAULT_MAX_DEPTH = 6
DEFAULT_PROBE_RADIUS = 1e-3


class StructureError(ValueError):
    """Invalid structure definition or failed bracket generation."""


class BracketGenerationError(StructureError):
    def __init__(self, message: str, report: "FlagReport | None" = None):
        super().__init__(message)
        self.report = report


class CompiledFrame:
    """Flat term arrays consumed by the integration kernels."""

    __slots__ = ("d", "m", "t_exp", "t_coef", "t_fld", "t_comp")

    def __init__(self, fields: Sequence[VectorField]):
        self.m = len(fields)
        self.d = fields[0].dim
        exps, coefs, flds, comps = [], [], [], []
        for i, X in enumerate(fields):
            for j, comp in enumerate(X.components):
                for e, c in comp.items():
                    exps.append(e)
                    coefs.append(float(c))
                    flds.append(i)
                    comps.append(j)
        self.t_exp = np.array(exps, dtype=np.int64).reshape(len(exps), self.d)
        self.t_coef = np.array(coefs, dtype=np.float64)
        self.t_fld = np.array(flds, dtype=np.int64)
        self.t_comp = np.array(comps, dtype=np.int64)

    def arrays(self):
        return self.t_exp, self.t_coef, self.t_fld, self.t_comp


class FrameLike:
    """Shared behaviour of anything carrying an ordered tuple of fields."""

    fields: tuple[VectorField, ...]

    @property
    def dim(self) -> int:
        return self.fields[0].dim

    @property
    def rank(self) -> int:
        return len(self.fields)

    @cached_property
    def compiled(self) -> CompiledFrame:
        return CompiledFrame(self.fields)

    @cached_property
    def _word_cache(self) -> dict[Word, VectorField]:
        return {(i,): X for i, X in enumerate(self.fields)}

    def word_field(self, word: Word) -> VectorField:
        """Right-nested bracket ``[X_w1, [X_w2, ... X_wk]]`` (0-based indices)."""
        cache = self._word_cache
        if word not in cache:
            cache[word] = lie_bracket(self.fields[word[0]], self.word_field(word[1:]))
        return cache[word]

    def words(self, length: int) -> list[Word]:
        """Nonzero right-nested words of a given length in lexicographic order."""
        out = []
        for w in itertools.product(range(self.rank), repeat=length):
            if length >= 2 and w[-1] == w[-2]:
                continue
            if length >= 2 and not self._suffix_nonzero(w[1:]):
                continue
            if not self.word_field(w).is_zero():
                out.append(w)
        return out

    def _suffix_nonzero(self, w: Word) -> bool:
        return not self.word_field(w).is_zero()

    def field_values(self, point) -> np.ndarray:
        """Frame values at ``point`` as an (m, d) array."""
        return np.array([X.eval(point) for X in self.fields])

    def horizontal(self, u) -> VectorField:
        """``X_u = sum_i u_i X_i`` with exact rational weights."""
        out = VectorField.zero(self.dim)
        for ui, X in zip(u, self.fields):
            c = as_fraction(ui)
            if c:
                out = out + X * c
        return out


@dataclass(frozen=True, eq=False)
class SRStructure(FrameLike):
    fields: tuple[VectorField, ...]
    domain: Box | None = None
    name: str = "structure"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        fields = tuple(self.fields)
        if not fields:
            raise StructureError("a frame needs at least one field")
        d = fields[0].dim
        if any(X.dim != d for X in fields):
            raise StructureError("all frame fields must share one dimension")
        object.__setattr__(self, "fields", fields)
        if self.domain is not None:
            box = tuple((float(lo), float(hi)) for lo, hi in self.domain)
            if len(box) != d or any(hi < lo for lo, hi in box):
                raise StructureError("domain must be d intervals lo <= hi")
            object.__setattr__(self, "domain", box)

    @property
    def frame(self) -> tuple[VectorField, ...]:
        return self.fields

    def __eq__(self, other) -> bool:
        return (isinstance(other, SRStructure) and self.fields == other.fields
                and self.domain == other.domain and self.name == other.name)

    def __hash__(self) -> int:
        return hash((self.fields, self.domain, self.name))

    def contains(self, p) -> bool:
        if self.domain is None:
            return True
        return all(lo - 1e-12 <= x <= hi + 1e-12 for x, (lo, hi) in zip(p, self.domain))

    def validate(self, grid: int = 3, max_depth: int = DEFAULT_MAX_DEPTH,
                 tol: float = DEFAULT_RANK_TOL) -> None:
        """Raise :class:`BracketGenerationError` unless bracket-generating on the domain grid."""
        box = self.domain or tuple((-1.0, 1.0) for _ in range(self.dim))
        for p in grid_points(box, grid):
            flag_at(self, p, max_depth=max_depth, tol=tol, probe=False)


def grid_points(box: Box, grid: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, grid) if hi > lo else np.array([lo]) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


@dataclass
class FlagReport:
    point: tuple[float, ...]
    growth_vector: tuple[int, ...]
    weights: tuple[int, ...]
    step: int
    regular: bool | None
    rank_tolerance: float
    probe_radius: float | None = None
    regularity_label: str = "unchecked"

    def to_dict(self) -> dict:
        return {
            "point": list(self.point),
            "growth_vector": list(self.growth_vector),
            "weights": list(self.weights),
            "step": self.step,
            "regular": self.regular,
            "regularity_label": self.regularity_label,
            "rank_tolerance": self.rank_tolerance,
            "probe_radius": self.probe_radius,
        }


def numeric_rank(vectors: np.ndarray, tol: float) -> int:
    if vectors.size == 0:
        return 0
    s = np.linalg.svd(np.atleast_2d(vectors), compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def weights_from_growth(growth: Sequence[int]) -> tuple[int, ...]:
    w = []
    prev = 0
    for s, n in enumerate(growth, start=1):
        w.extend([s] * (n - prev))
        prev = n
    return tuple(w)


def _growth_at(frame: FrameLike, p, max_depth: int, tol: float) -> tuple[list[int], bool]:
    d = frame.dim
    rows: list[np.ndarray] = []
    growth: list[int] = []
    for k in range(1, max_depth + 1):
        for w in frame.words(k):
            rows.append(frame.word_field(w).eval(p))
        growth.append(numeric_rank(np.array(rows), tol) if rows else 0)
        if growth[-1] == d:
            return growth, True
    return growth, False


def flag_at(s: FrameLike, p, max_depth: int = DEFAULT_MAX_DEPTH, tol: float = DEFAULT_RANK_TOL,
            probe_radius: float = DEFAULT_PROBE_RADIUS, probe: bool = True) -> FlagReport:
    """Flag dimensions at ``p`` from iterated brackets, plus a sampled regularity probe."""
    p = tuple(float(x) for x in p)
    if len(p) != s.dim:
        raise StructureError(f"point has {len(p)} coordinates, structure has {s.dim}")
    if isinstance(s, SRStructure) and not s.contains(p):
        raise StructureError(f"point {p} outside the domain {s.domain}")
    growth, ok = _growth_at(s, p, max_depth, tol)
    if not ok:
        report = FlagReport(p, tuple(growth), (), len(growth), None, tol)
        raise BracketGenerationError(
            f"not bracket-generating at {p} within depth {max_depth}: growth {growth}", report)
    regular = None
    if probe:
        regular = True
        for j in range(s.dim):
            for sign in (1.0, -1.0):
                q = list(p)
                q[j] += sign * probe_radius
                g, ok_q = _growth_at(s, q, max_depth, tol)
                if not ok_q or g != growth:
                    regular = False
    label = {True: "sampled-regular", False: "sampled-singular", None: "unchecked"}[regular]
    return FlagReport(p, tuple(growth), weights_from_growth(growth), len(growth), regular, tol,
                      probe_radius if probe else None, label)


@dataclass
class RegularityMap:
    reports: list[FlagReport]
    verdict: str
    singular_points: list[tuple[float, ...]]
    grid: int

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "grid": self.grid,
            "singular_points": [list(p) for p in self.singular_points],
            "growth_vectors": sorted({tuple(r.growth_vector) for r in self.reports}),
            "reports": [r.to_dict() for r in self.reports],
        }


def classify_regularity(s: SRStructure, grid: int = 5, max_depth: int = DEFAULT_MAX_DEPTH,
                        tol: float = DEFAULT_RANK_TOL,
                        probe_radius: float = DEFAULT_PROBE_RADIUS) -> RegularityMap:
    if s.domain is None:
        raise StructureError("classify_regularity needs a domain box")
    reports = [flag_at(s, p, max_depth, tol, probe_radius) for p in grid_points(s.domain, grid)]
    singular = [r.point for r in reports if not r.regular]
    verdict = "singular" if singular else "equiregular"
    return RegularityMap(reports, verdict, singular, grid)


def apply_gauge(s: SRStructure, c, tol: float = 1e-9, samples: int = 5,
                seed: int = 0) -> SRStructure:
    """New frame ``Y_i = sum_j c_ij X_j``; ``c(q)`` must be orthogonal at sample points."""
    m = s.rank
    d = s.dim
    cmat = [[entry if isinstance(entry, Multinomial) else Multinomial.const(d, entry)
             for entry in row] for row in c]
    if len(cmat) != m or any(len(row) != m for row in cmat):
        raise StructureError(f"gauge must be {m}x{m}")
    box = s.domain or tuple((-1.0, 1.0) for _ in range(d))
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    pts = [lo + (hi - lo) * rng.random(d) for _ in range(samples)] + [0.5 * (lo + hi)]
    for q in pts:
        cq = np.array([[e.eval(q) for e in row] for row in cmat])
        err = np.max(np.abs(cq @ cq.T - np.eye(m)))
        if err > tol:
            raise StructureError(f"gauge not orthogonal at {q.tolist()} (error {err:.3g})")
    new_fields = []
    for row in cmat:
        Y = VectorField.zero(d)
        for cij, Xj in zip(row, s.fields):
            if cij:
                Y = Y + Xj * cij
        new_fields.append(Y)
    return SRStructure(tuple(new_fields), s.domain, f"{s.name}-gauged", dict(s.params))


# ---------------------------------------------------------------------------
# built-in structures

def _field(dim: int, comps: dict[int, str]) -> VectorField:
    return VectorField([parse_poly(comps.get(j, "0"), dim) for j in range(1, dim + 1)])


def heisenberg(domain: Box | None = ((-1.0, 1.0),) * 3) -> SRStructure:
    return SRStructure((
        _field(3, {1: "1", 3: "-1/2*x2"}),
        _field(3, {2: "1", 3: "1/2*x1"}),
    ), domain, "heisenberg")


def grushin(domain: Box | None = ((-1.0, 1.0),) * 2) -> SRStructure:
    return SRStructure((_field(2, {1: "1"}), _field(2, {2: "x1"})), domain, "grushin")


def engel(domain: Box | None = ((-1.0, 1.0),) * 4) -> SRStructure:
    return SRStructure((
        _field(4, {1: "1"}),
        _field(4, {2: "1", 3: "x1", 4: "1/2*x1^2"}),
    ), domain, "engel")


def martinet(domain: Box | None = ((-1.0, 1.0),) * 3) -> SRStructure:
    return SRStructure((
        _field(3, {1: "1"}),
        _field(3, {2: "1", 3: "1/2*x1^2"}),
    ), domain, "martinet")


def step3alpha(alpha=-1, domain: Box | None = ((-1.0, 1.0),) * 6) -> SRStructure:
    """Rank-3 step-3 frame on R^6, coordinates (x1, x2, x3, y1, y2, w) -> x1..x6."""
    a = as_fraction(alpha)
    d = 6
    X3 = VectorField([
        Multinomial.zero(d), Multinomial.zero(d), Multinomial.const(d, 1),
        Multinomial.var(d, 1), Multinomial.var(d, 2),
        Multinomial.var(d, 1) ** 2 * Fraction(1, 2) + Multinomial.var(d, 2) ** 2 * (a / 2),
    ])
    return SRStructure((VectorField.coordinate(d, 1), VectorField.coordinate(d, 2), X3),
                       domain, f"step3alpha(alpha={a})", {"alpha": str(a)})


BUILTINS = {
    "heisenberg": heisenberg,
    "grushin": grushin,
    "engel": engel,
    "martinet": martinet,
    "step3alpha": step3alpha,
}


def builtin(name: str, **params) -> SRStructure:
    m = re.fullmatch(r"\s*(\w+)\s*(?:\((.*)\))?\s*", name)
    if not m or m.group(1) not in BUILTINS:
        raise KeyError(name)
    key = m.group(1)
    if m.group(2):
        for item in m.group(2).split(","):
            if item.strip():
                k, v = item.split("=")
                params.setdefault(k.strip(), v.strip())
    if key == "step3alpha":
        return step3alpha(as_fraction(params.get("alpha", -1)))
    if params:
        raise StructureError(f"built-in {key} takes no parameters")
    return BUILTINS[key]()


# ---------------------------------------------------------------------------
# text format

_DX = re.compile(r"(?<![A-Za-z0-9_])dx(\d+)")


def parse_field_expr(text: str, dim: int) -> VectorField:
    comps = [Multinomial.zero(dim) for _ in range(dim)]
    pos = 0
    matches = list(_DX.finditer(text))
    if not matches:
        raise StructureError(f"no dx<i> terms in {text!r}")
    for mt in matches:
        coef = text[pos:mt.start()].strip()
        pos = mt.end()
        if coef.endswith("*"):
            coef = coef[:-1].strip()
        sign = 1
        if coef.startswith("+"):
            coef = coef[1:].strip()
        elif coef.startswith("-") and (coef == "-" or not _balanced_expression(coef)):
            sign = -1
            coef = coef[1:].strip()
        poly = parse_poly(coef, dim) if coef else Multinomial.const(dim, 1)
        idx = int(mt.group(1))
        if not 1 <= idx <= dim:
            raise StructureError(f"dx{idx} outside dimension {dim}")
        comps[idx - 1] = comps[idx - 1] + poly * sign
    if text[pos:].strip():
        raise StructureError(f"trailing text {text[pos:]!r}")
    return VectorField(comps)


def _balanced_expression(coef: str) -> bool:
    try:
        parse_poly(coef, 64)
        return True
    except ValueError:
        return False


def _parse_domain(text: str) -> Box:
    parts = re.findall(r"\[\s*([^,\]]+)\s*,\s*([^\]]+)\s*\]", text)
    if not parts:
        raise StructureError(f"bad domain {text!r}")
    return tuple((float(Fraction(a.strip())), float(Fraction(b.strip()))) for a, b in parts)


def parse_structure(text: str) -> SRStructure:
    """Parse the ``dim = / rank = / name = / domain = / X<k> =`` text format."""
    header: dict[str, str] = {}
    field_lines: dict[int, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise StructureError(f"cannot parse line {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        fm = re.fullmatch(r"X(\d+)", key)
        if fm:
            field_lines[int(fm.group(1))] = value
        elif key in ("dim", "rank", "name", "domain"):
            header[key] = value
        else:
            raise StructureError(f"unknown key {key!r}")
    if "dim" not in header:
        raise StructureError("missing 'dim ='")
    dim = int(header["dim"])
    rank = int(header.get("rank", len(field_lines)))
    if sorted(field_lines) != list(range(1, rank + 1)):
        raise StructureError(f"expected fields X1..X{rank}, got {sorted(field_lines)}")
    fields = tuple(parse_field_expr(field_lines[k], dim) for k in range(1, rank + 1))
    domain = _parse_domain(header["domain"]) if "domain" in header else None
    return SRStructure(fields, domain, header.get("name", "structure"))


def format_field(X: VectorField) -> str:
    parts = [f"({c}) dx{j + 1}" for j, c in enumerate(X.components) if c]
    return " + ".join(parts) if parts else "(0) dx1"


def format_structure(s: SRStructure) -> str:
    lines = [f"dim = {s.dim}", f"rank = {s.rank}", f"name = {s.name}"]
    if s.domain is not None:
        lines.append("domain = " + "x".join(f"[{_num(lo)},{_num(hi)}]" for lo, hi in s.domain))
    for k, X in enumerate(s.fields, start=1):
        lines.append(f"X{k} = {format_field(X)}")
    return "\n".join(lines) + "\n"


def _num(x: float) -> str:
    return repr(float(x))


def load_structure(spec: str, params: dict | None = None) -> SRStructure:
    """Resolve a built-in name (with optional ``name(k=v)`` parameters) or a file path."""
    try:
        return builtin(spec, **(params or {}))
    except KeyError:
        pass
    with open(spec, encoding="utf-8") as fh:
        s = parse_structure(fh.read())
    s.validate()
    return s
