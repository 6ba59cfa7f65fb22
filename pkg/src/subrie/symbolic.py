"""Exact sparse multivariate polynomials and polynomial vector fields.

Coefficients are :class:`fractions.Fraction`; floats and decimal strings are
converted exactly on ingestion, so every algebraic identity downstream
(brackets, pushforwards, chart inverses) is checked as term equality.
"""

from __future__ import annotations

import itertools
import math
import re
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]


def as_fraction(value) -> Fraction:
    """Exact rational from int, Fraction, float or a decimal/rational string."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ValueError(f"non-finite coefficient {value!r}")
        return Fraction(float(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot convert {type(value).__name__} to a rational")


class Multinomial:
    """Sparse polynomial in ``dim`` variables ``x1..x{dim}``.

    Instances are immutable and hashable. Zero coefficients are never stored.
    """

    __slots__ = ("dim", "_terms", "_hash")

    def __init__(self, dim: int, terms: Mapping[Exponent, object] | None = None):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        clean: dict[Exponent, Fraction] = {}
        for exp, coef in (terms or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != dim or any(e < 0 for e in exp):
                raise ValueError(f"bad exponent {exp} for dim {dim}")
            c = as_fraction(coef)
            if c:
                clean[exp] = clean.get(exp, Fraction(0)) + c
                if not clean[exp]:
                    del clean[exp]
        self._terms = clean
        self._hash = None

    @classmethod
    def _raw(cls, dim: int, terms: dict[Exponent, Fraction]) -> "Multinomial":
        obj = cls.__new__(cls)
        obj.dim = dim
        obj._terms = terms
        obj._hash = None
        return obj

    # constructors -----------------------------------------------------------

    @classmethod
    def zero(cls, dim: int) -> "Multinomial":
        return cls._raw(dim, {})

    @classmethod
    def const(cls, dim: int, value) -> "Multinomial":
        c = as_fraction(value)
        return cls._raw(dim, {(0,) * dim: c} if c else {})

    @classmethod
    def var(cls, dim: int, i: int) -> "Multinomial":
        """The coordinate function ``x_i`` (1-based)."""
        if not 1 <= i <= dim:
            raise IndexError(f"variable index {i} out of range 1..{dim}")
        exp = [0] * dim
        exp[i - 1] = 1
        return cls._raw(dim, {tuple(exp): Fraction(1)})

    # basic protocol ---------------------------------------------------------

    @property
    def terms(self) -> dict[Exponent, Fraction]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, Multinomial):
            return self.dim == other.dim and self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self == Multinomial.const(self.dim, other)
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.dim, frozenset(self._terms.items())))
        return self._hash

    def degree(self) -> int:
        return max((sum(e) for e in self._terms), default=-1)

    def constant_term(self) -> Fraction:
        return self._terms.get((0,) * self.dim, Fraction(0))

    # arithmetic -------------------------------------------------------------

    def _coerce(self, other) -> "Multinomial":
        if isinstance(other, Multinomial):
            if other.dim != self.dim:
                raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other
        return Multinomial.const(self.dim, other)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._terms)
        for exp, c in other._terms.items():
            v = out.get(exp, 0) + c
            if v:
                out[exp] = v
            else:
                out.pop(exp, None)
        return Multinomial._raw(self.dim, out)

    __radd__ = __add__

    def __neg__(self):
        return Multinomial._raw(self.dim, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Multinomial):
            c = as_fraction(other)
            if not c:
                return Multinomial.zero(self.dim)
            return Multinomial._raw(self.dim, {e: v * c for e, v in self._terms.items()})
        other = self._coerce(other)
        out: dict[Exponent, Fraction] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                v = out.get(e, 0) + c1 * c2
                if v:
                    out[e] = v
                else:
                    out.pop(e, None)
        return Multinomial._raw(self.dim, out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1 / as_fraction(other))

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative powers are not polynomial")
        result = Multinomial.const(self.dim, 1)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    # calculus and orders ----------------------------------------------------

    def partial(self, i: int) -> "Multinomial":
        """Exact derivative with respect to ``x_i`` (1-based)."""
        if not 1 <= i <= self.dim:
            raise IndexError(f"variable index {i} out of range 1..{self.dim}")
        k = i - 1
        out = {}
        for e, c in self._terms.items():
            if e[k]:
                ne = e[:k] + (e[k] - 1,) + e[k + 1:]
                out[ne] = c * e[k]
        return Multinomial._raw(self.dim, out)

    def weighted_order(self, weights: Sequence[int]) -> float:
        """Minimum weighted degree over stored monomials; ``inf`` for zero."""
        if not self._terms:
            return math.inf
        return min(sum(w * a for w, a in zip(weights, e)) for e in self._terms)

    def weighted_part(self, weights: Sequence[int], degree: int) -> "Multinomial":
        """Sum of the monomials of weighted degree exactly ``degree``."""
        return Multinomial._raw(
            self.dim,
            {e: c for e, c in self._terms.items()
             if sum(w * a for w, a in zip(weights, e)) == degree},
        )

    def truncate_below(self, weights: Sequence[int], degree: int) -> "Multinomial":
        """Monomials of weighted degree strictly less than ``degree``."""
        return Multinomial._raw(
            self.dim,
            {e: c for e, c in self._terms.items()
             if sum(w * a for w, a in zip(weights, e)) < degree},
        )

    # evaluation and substitution --------------------------------------------

    def __call__(self, point) -> float:
        return self.eval(point)

    def eval(self, point) -> float:
        x = [float(v) for v in point]
        total = 0.0
        for e, c in self._terms.items():
            term = float(c)
            for xi, ei in zip(x, e):
                if ei:
                    term *= xi ** ei
            total += term
        return total

    def eval_exact(self, point) -> Fraction:
        x = [as_fraction(v) for v in point]
        total = Fraction(0)
        for e, c in self._terms.items():
            term = c
            for xi, ei in zip(x, e):
                if ei:
                    term *= xi ** ei
            total += term
        return total

    def compose(self, subs: Sequence["Multinomial"]) -> "Multinomial":
        """Substitute ``x_i -> subs[i-1]``; result lives in ``subs[0].dim`` variables."""
        if len(subs) != self.dim:
            raise ValueError("need one substitution per variable")
        new_dim = subs[0].dim
        powers: list[list[Multinomial]] = [[Multinomial.const(new_dim, 1)] for _ in subs]
        out = Multinomial.zero(new_dim)
        for e, c in self._terms.items():
            term = Multinomial.const(new_dim, c)
            for k, ek in enumerate(e):
                while len(powers[k]) <= ek:
                    powers[k].append(powers[k][-1] * subs[k])
                if ek:
                    term = term * powers[k][ek]
            out = out + term
        return out

    def scale_variables(self, factors: Sequence) -> "Multinomial":
        """Substitute ``x_i -> factors[i] * x_i`` exactly."""
        f = [as_fraction(v) for v in factors]
        out = {}
        for e, c in self._terms.items():
            v = c
            for fi, ei in zip(f, e):
                if ei:
                    v *= fi ** ei
            if v:
                out[e] = v
        return Multinomial._raw(self.dim, out)

    def translate(self, shift: Sequence) -> "Multinomial":
        """Substitute ``x -> x + shift``."""
        subs = [Multinomial.var(self.dim, i + 1) + as_fraction(s) for i, s in enumerate(shift)]
        return self.compose(subs)

    def embed(self, new_dim: int, positions: Sequence[int]) -> "Multinomial":
        """Re-index variables: old variable ``k`` becomes new variable ``positions[k]`` (0-based)."""
        out = {}
        for e, c in self._terms.items():
            ne = [0] * new_dim
            for k, ek in enumerate(e):
                ne[positions[k]] += ek
            out[tuple(ne)] = c
        return Multinomial._raw(new_dim, out)

    # formatting -------------------------------------------------------------

    def sorted_terms(self) -> list[tuple[Exponent, Fraction]]:
        return sorted(self._terms.items(), key=lambda kv: (sum(kv[0]), tuple(-a for a in kv[0])))

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        pieces = []
        for e, c in self.sorted_terms():
            mono = "*".join(
                f"x{k + 1}" + (f"^{a}" if a > 1 else "") for k, a in enumerate(e) if a
            )
            mag = abs(c)
            if mono:
                body = mono if mag == 1 else f"{_fmt_rational(mag)}*{mono}"
            else:
                body = _fmt_rational(mag)
            pieces.append(("-" if c < 0 else "+", body))
        sign, body = pieces[0]
        text = ("-" if sign == "-" else "") + body
        for sign, body in pieces[1:]:
            text += f" {sign} {body}"
        return text

    def __repr__(self) -> str:
        return f"Multinomial({self.dim}, '{self}')"


def _fmt_rational(c: Fraction) -> str:
    if c.denominator == 1:
        return str(c.numerator)
    return f"({c.numerator}/{c.denominator})"


def poly_arith(p: Multinomial, q: Multinomial, op: str) -> Multinomial:
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    if op == "add":
        return p + q
    if op == "sub":
        return p - q
    if op == "mul":
        return p * q
    raise ValueError(f"unknown op {op!r}")


def partial(p: Multinomial, i: int) -> Multinomial:
    return p.partial(i)


def weighted_order(p: Multinomial, w: Sequence[int]) -> float:
    if len(w) != p.dim or any(int(x) < 1 for x in w):
        raise ValueError("weights must be dim positive integers")
    return p.weighted_order(w)


class VectorField:
    """Polynomial vector field ``sum_i comps[i] * d/dx_i`` on R^dim."""

    __slots__ = ("dim", "components")

    def __init__(self, components: Sequence[Multinomial]):
        comps = tuple(components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        dim = comps[0].dim
        if len(comps) != dim or any(c.dim != dim for c in comps):
            raise ValueError("component count must equal the ambient dimension")
        self.dim = dim
        self.components = comps

    @classmethod
    def zero(cls, dim: int) -> "VectorField":
        return cls([Multinomial.zero(dim)] * dim)

    @classmethod
    def coordinate(cls, dim: int, i: int) -> "VectorField":
        """Constant field ``d/dx_i`` (1-based)."""
        return cls([Multinomial.const(dim, 1 if k == i - 1 else 0) for k in range(dim)])

    def __getitem__(self, i: int) -> Multinomial:
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def __eq__(self, other) -> bool:
        return isinstance(other, VectorField) and self.components == other.components

    def __hash__(self) -> int:
        return hash(self.components)

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_dims(self, other)
        return VectorField([a + b for a, b in zip(self, other)])

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_dims(self, other)
        return VectorField([a - b for a, b in zip(self, other)])

    def __neg__(self) -> "VectorField":
        return VectorField([-a for a in self])

    def __mul__(self, scalar) -> "VectorField":
        """Multiply by a rational constant or a polynomial function."""
        return VectorField([a * scalar for a in self])

    __rmul__ = __mul__

    def apply(self, f: Multinomial) -> Multinomial:
        """Directional derivative ``X(f) = sum_j X_j df/dx_j``."""
        out = Multinomial.zero(self.dim)
        for j, c in enumerate(self.components):
            if c:
                d = f.partial(j + 1)
                if d:
                    out = out + c * d
        return out

    def eval(self, point) -> np.ndarray:
        return np.array([c.eval(point) for c in self.components])

    def eval_exact(self, point) -> list[Fraction]:
        return [c.eval_exact(point) for c in self.components]

    def degree(self) -> int:
        return max(c.degree() for c in self.components)

    def __str__(self) -> str:
        parts = [f"({c}) dx{j + 1}" for j, c in enumerate(self.components) if c]
        return " + ".join(parts) if parts else "0"

    def __repr__(self) -> str:
        return f"VectorField({self})"


def _check_dims(a: VectorField, b: VectorField) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """``[X, Y]_i = sum_j (X_j d_j Y_i - Y_j d_j X_i)``."""
    _check_dims(X, Y)
    return VectorField([X.apply(Yi) - Y.apply(Xi) for Xi, Yi in zip(X, Y)])


def combination(coeffs: Sequence, fields: Sequence[VectorField]) -> VectorField:
    """``sum_i coeffs[i] * fields[i]`` with rational or polynomial coefficients."""
    out = VectorField.zero(fields[0].dim)
    for c, f in zip(coeffs, fields):
        if isinstance(c, Multinomial) or as_fraction(c):
            out = out + f * c
    return out


def _grid_points(box: Sequence[tuple[float, float]], grid: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, grid) if hi > lo else np.array([lo]) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def seminorm(v: VectorField, j: int, box: Sequence[tuple[float, float]], grid: int = 33) -> float:
    """Grid estimate of ``sup |d^alpha v_i|`` over ``|alpha| <= j`` on ``box``.

    Sampling only sees grid points, so the value is a lower bound for the true
    supremum; it is used to detect remainder-bound violations, never to certify.
    """
    if j < 0:
        raise ValueError("j must be nonnegative")
    if len(box) != v.dim:
        raise ValueError("box dimension mismatch")
    pts = _grid_points(box, grid)
    best = 0.0
    for comp in v.components:
        frontier = {comp}
        seen = set()
        for _ in range(j + 1):
            nxt = set()
            for p in frontier:
                if p in seen:
                    continue
                seen.add(p)
                if p:
                    best = max(best, float(np.max(np.abs(_eval_many(p, pts)))))
                    for k in range(1, v.dim + 1):
                        dp = p.partial(k)
                        if dp:
                            nxt.add(dp)
            frontier = nxt
    return best


def _eval_many(p: Multinomial, pts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(pts))
    for e, c in p.items():
        term = np.full(len(pts), float(c))
        for k, ek in enumerate(e):
            if ek:
                term = term * pts[:, k] ** ek
        out += term
    return out


# ---------------------------------------------------------------------------
# expression grammar
#   expr := term (('+'|'-') term)* ; term := factor ('*' factor)*
#   factor := atom ('^' posint)? ; atom := rational | decimal | 'x'posint | '(' expr ')'

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:/\d+)?|\.\d+)|(?P<var>x\d+)|(?P<op>[-+*^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens, pos = [], 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"unexpected character at {pos} in {text!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.dim = dim
        self.text = text

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            raise ValueError(f"expected {value or 'token'} in {self.text!r}")
        self.pos += 1
        return tok

    def expr(self) -> Multinomial:
        negate = False
        if self.peek() == ("op", "-"):
            self.take()
            negate = True
        elif self.peek() == ("op", "+"):
            self.take()
        acc = self.term()
        if negate:
            acc = -acc
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            rhs = self.term()
            acc = acc + rhs if op == "+" else acc - rhs
        return acc

    def term(self) -> Multinomial:
        acc = self.factor()
        while self.peek() == ("op", "*"):
            self.take()
            acc = acc * self.factor()
        return acc

    def factor(self) -> Multinomial:
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            kind, val = self.take()
            if kind != "num" or not val.isdigit() or int(val) < 1:
                raise ValueError(f"exponent must be a positive integer in {self.text!r}")
            base = base ** int(val)
        return base

    def atom(self) -> Multinomial:
        kind, val = self.take()
        if kind == "num":
            return Multinomial.const(self.dim, Fraction(val))
        if kind == "var":
            idx = int(val[1:])
            if not 1 <= idx <= self.dim:
                raise ValueError(f"variable {val} outside dimension {self.dim}")
            return Multinomial.var(self.dim, idx)
        if val == "(":
            inner = self.expr()
            self.take(")")
            return inner
        raise ValueError(f"unexpected {val!r} in {self.text!r}")


def parse_poly(text: str, dim: int) -> Multinomial:
    """Parse an expression like ``-x2/2 + 0.5*x1^2`` into an exact polynomial."""
    parser = _Parser(text, dim)
    if not parser.tokens:
        raise ValueError("empty expression")
    result = parser.expr()
    if parser.pos != len(parser.tokens):
        raise ValueError(f"trailing input in {text!r}")
    return result


def format_poly(p: Multinomial) -> str:
    return str(p)


def monomials_up_to(dim: int, degree: int) -> Iterable[Exponent]:
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), total):
            e = [0] * dim
            for k in combo:
                e[k] += 1
            yield tuple(e)
