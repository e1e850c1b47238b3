"""Exact pi-rational values, tables of conformal eigenvalue suprema, and the
disjoint-union combination rule.

Values that are known in closed form (``8*pi*k`` on the sphere,
``4*pi*(2k+1)`` on the projective plane) are stored as :class:`PiMultiple`
so that sums and maxima over index assignments are exact.  Empirical
estimates are plain floats and mix freely with exact entries.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import total_ordering
from typing import Iterable, Sequence, Union

from .errors import IncompleteTable

__all__ = [
    "PiMultiple",
    "LambdaTable",
    "Value",
    "builtin_table",
    "combine_disjoint",
    "compositions",
    "table_violations",
    "value_sum",
    "as_float",
    "format_value",
]


@total_ordering
@dataclass(frozen=True)
class PiMultiple:
    """The real number ``coef * pi`` with rational ``coef``."""

    coef: Fraction

    def __init__(self, coef=0):
        object.__setattr__(self, "coef", Fraction(coef))

    def __float__(self):
        return float(self.coef) * math.pi

    def __add__(self, other):
        if isinstance(other, PiMultiple):
            return PiMultiple(self.coef + other.coef)
        if isinstance(other, int) and other == 0:
            return self
        return float(self) + float(other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return PiMultiple(self.coef * other)
        return float(self) * float(other)

    __rmul__ = __mul__

    def __eq__(self, other):
        if isinstance(other, PiMultiple):
            return self.coef == other.coef
        if isinstance(other, (int, float)):
            return float(self) == other
        return NotImplemented

    def __lt__(self, other):
        if isinstance(other, PiMultiple):
            return self.coef < other.coef
        if isinstance(other, (int, float)):
            return float(self) < other
        return NotImplemented

    def __hash__(self):
        return hash(("pi", self.coef))

    def __str__(self):
        c = self.coef
        if c == 0:
            return "0"
        sign = "-" if c < 0 else ""
        num, den = abs(c.numerator), c.denominator
        head = "" if num == 1 else str(num)
        return f"{sign}{head}π" if den == 1 else f"{sign}{head}π/{den}"

    def __repr__(self):
        return f"PiMultiple({self.coef})"

    _PATTERN = re.compile(r"^\s*(-?)\s*(\d*)\s*\*?\s*(?:π|pi)\s*(?:/\s*(\d+))?\s*$")

    @classmethod
    def parse(cls, text: str) -> "PiMultiple":
        """Parse ``"12π"``, ``"3π/2"``, ``"pi"`` or ``"0"``."""
        if text.strip() == "0":
            return cls(0)
        m = cls._PATTERN.match(text)
        if not m:
            raise ValueError(f"not a rational multiple of pi: {text!r}")
        sign, num, den = m.groups()
        coef = Fraction(int(num or 1), int(den or 1))
        return cls(-coef if sign else coef)


Value = Union[PiMultiple, float]


def as_float(v: Value) -> float:
    return float(v)


def value_sum(values: Iterable[Value]) -> Value:
    """Sum that stays exact while every term is a :class:`PiMultiple`."""
    total: Value = PiMultiple(0)
    for v in values:
        total = total + v
    return total


def format_value(v: Value) -> dict:
    """JSON-friendly form carrying both the exact and the decimal value."""
    if isinstance(v, PiMultiple):
        return {"exact": str(v), "decimal": float(v)}
    return {"exact": None, "decimal": float(v)}


def _sphere(k: int) -> PiMultiple:
    return PiMultiple(8 * k)


def _rp2(k: int) -> PiMultiple:
    return PiMultiple(0) if k == 0 else PiMultiple(4 * (2 * k + 1))


KNOWN_SUPREMA = {"S2": _sphere, "RP2": _rp2}


@dataclass
class LambdaTable:
    """Map ``(surface descriptor, k) -> Lambda_k`` value.

    Descriptors are free-form strings; ``"S2"`` and ``"RP2"`` name the sphere
    and projective plane with their unique conformal class.
    """

    entries: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.get(*key)

    def get(self, surface: str, k: int) -> Value:
        if k == 0:
            return self.entries.get((surface, 0), PiMultiple(0))
        try:
            return self.entries[(surface, k)]
        except KeyError:
            raise IncompleteTable(f"no Lambda_{k} entry for surface {surface!r}") from None

    def set(self, surface: str, k: int, value: Value) -> None:
        self.entries[(surface, int(k))] = value

    def surfaces(self) -> list[str]:
        return sorted({s for s, _ in self.entries})

    def max_index(self, surface: str) -> int:
        ks = [k for s, k in self.entries if s == surface]
        return max(ks) if ks else 0

    def column(self, surface: str, k: int) -> list[Value]:
        """``[Lambda_0, ..., Lambda_k]`` for one surface."""
        return [self.get(surface, j) for j in range(k + 1)]

    def covers(self, surface: str, k: int) -> bool:
        return all((surface, j) in self.entries for j in range(1, k + 1))

    def to_json(self) -> dict:
        rows = []
        for (s, k), v in sorted(self.entries.items()):
            row = {"surface": s, "k": k}
            row.update(format_value(v))
            rows.append(row)
        return {"entries": rows}

    @classmethod
    def from_json(cls, doc: dict) -> "LambdaTable":
        table = cls()
        for row in doc["entries"]:
            if row.get("exact"):
                v: Value = PiMultiple.parse(row["exact"])
            else:
                v = float(row["decimal"])
            table.set(row["surface"], int(row["k"]), v)
        return table

    def merged(self, other: "LambdaTable") -> "LambdaTable":
        out = LambdaTable(dict(self.entries))
        out.entries.update(other.entries)
        return out


def builtin_table(kmax: int = 12) -> LambdaTable:
    """Known suprema on S^2 and RP^2 for ``k <= kmax``."""
    table = LambdaTable()
    for name, fn in KNOWN_SUPREMA.items():
        for k in range(kmax + 1):
            table.set(name, k, fn(k))
    return table


def table_violations(table: LambdaTable, rtol: float = 0.0) -> list[str]:
    """Check ``Lambda_0 = 0``, ``Lambda_k >= 8 pi k`` and
    ``Lambda_k >= Lambda_{k-1} + 8 pi`` for every surface in the table.

    Returns human-readable descriptions of each violated relation.
    """
    out = []
    eight_pi = PiMultiple(8)
    for s in table.surfaces():
        if float(table.get(s, 0)) != 0.0:
            out.append(f"{s}: Lambda_0 = {table.get(s, 0)} != 0")
        prev = table.get(s, 0)
        for k in range(1, table.max_index(s) + 1):
            if (s, k) not in table.entries:
                # gaps only disable the step relation across them
                prev = None
                continue
            cur = table.get(s, k)
            slack = rtol * abs(float(cur))
            if float(cur) < float(eight_pi * k) - slack:
                out.append(f"{s}: Lambda_{k} = {float(cur):.6g} < 8 pi k")
            if prev is not None and float(cur) < float(prev + eight_pi) - slack:
                out.append(f"{s}: Lambda_{k} = {float(cur):.6g} < Lambda_{k-1} + 8 pi")
            prev = cur
    return out


def compositions(k: int, max_parts: int):
    """Ordered tuples of positive integers summing to ``k`` with at most
    ``max_parts`` entries."""
    if k == 0:
        yield ()
        return
    for p in range(1, min(k, max_parts) + 1):
        # choose p-1 cut points among k-1 gaps
        for cuts in itertools.combinations(range(1, k), p - 1):
            bounds = (0,) + cuts + (k,)
            yield tuple(bounds[i + 1] - bounds[i] for i in range(p))


def _check_columns(columns: Sequence[Sequence[Value]], k: int) -> None:
    for i, col in enumerate(columns):
        if len(col) < k + 1:
            raise IncompleteTable(f"component {i} has Lambda values only up to index {len(col) - 1} < {k}")


def combine_disjoint(columns: Sequence[Sequence[Value]], k: int, allow_zero: bool = False):
    """Supremal ``Lambda_k`` of a disjoint union from per-component columns.

    ``columns[i][j]`` is ``Lambda_j`` of component ``i`` (index 0 must be 0).
    With ``allow_zero=False`` the index ``k`` is split into positive parts,
    each handed to a distinct component; with ``allow_zero=True`` every
    non-negative index vector summing to ``k`` is scanned.  Both give the
    same maximum because ``Lambda_0 = 0``.

    Returns ``(value, assignment)`` where ``assignment[i]`` is the index given
    to component ``i``.  Ties resolve to the lexicographically smallest
    sequence of positive parts, then the smallest assignment vector.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    _check_columns(columns, k)
    n = len(columns)
    if n == 0:
        raise IncompleteTable("no components")
    candidates = []
    if allow_zero:
        for vec in itertools.product(range(k + 1), repeat=n):
            if sum(vec) == k:
                candidates.append(vec)
    else:
        for parts in compositions(k, n):
            for slots in itertools.combinations(range(n), len(parts)):
                vec = [0] * n
                for slot, part in zip(slots, parts):
                    vec[slot] = part
                candidates.append(tuple(vec))
    best = None
    for vec in candidates:
        val = value_sum(columns[i][vec[i]] for i in range(n))
        key = (tuple(x for x in vec if x > 0), vec)
        if best is None or val > best[0] or (val == best[0] and key < best[1]):
            best = (val, key)
    value, (_, vec) = best
    return value, tuple(vec)
