"""Conformal classes, degenerating families, and the degeneration-limit
bookkeeping (topology equations and the limiting value of ``Lambda_k``).

Flat tori are parametrized by ``(a, b)`` with ``a**2 + b**2 >= 1`` and
``0 <= a <= 1/2``; the canonical unit-area representative lives on
``R^2 / (b**-0.5 * lattice((1, 0), (a, b)))``.  Klein bottles are
parametrized by ``b > 0`` through the group generated by
``(x, y) -> (x, y + sqrt(b))`` and ``(x, y) -> (x + 1/sqrt(b), -y)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .errors import InconsistentSpec, InvalidClassParam, NotApplicable, WrongDirection
from .tables import LambdaTable, PiMultiple, Value, value_sum

__all__ = [
    "TorusClass",
    "KleinClass",
    "SphereClass",
    "RP2Class",
    "Subdomain",
    "ConformalClassParam",
    "make_class",
    "reduce_torus_parameter",
    "class_from_json",
    "CollapsingGeodesic",
    "DegenerationFamily",
    "degeneration_family",
    "limiting_spec",
    "FAMILY_KINDS",
    "LimitingSpaceSpec",
    "GenusCheck",
    "genus_relation",
    "even_genus_analysis",
    "LimitResult",
    "limit_value",
    "limit_value_bruteforce",
    "simplified_form",
    "pinch_to_spheres",
    "even_genus_pinch",
]

_EDGE_TOL = 1e-12


def reduce_torus_parameter(a: float, b: float) -> tuple[float, float]:
    """Move ``tau = a + ib`` into the fundamental domain of the torus moduli
    space (unoriented, so ``a`` is folded to ``|a|``)."""
    if b <= 0:
        raise InvalidClassParam(f"torus parameter needs b > 0, got b={b}")
    tau = complex(a, b)
    for _ in range(200):
        tau -= round(tau.real)
        if abs(tau) < 1 - _EDGE_TOL:
            tau = -1 / tau
        else:
            break
    return abs(tau.real), tau.imag


@dataclass(frozen=True)
class TorusClass:
    a: float
    b: float

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if not (math.isfinite(a) and math.isfinite(b)) or b <= 0:
            raise InvalidClassParam(f"TorusClass needs finite a and b > 0, got ({a}, {b})")
        problems = []
        if a < -_EDGE_TOL:
            problems.append("a < 0")
        if a > 0.5 + _EDGE_TOL:
            problems.append("a > 1/2")
        if a * a + b * b < 1 - _EDGE_TOL:
            problems.append("a^2 + b^2 < 1")
        if problems:
            ra, rb = reduce_torus_parameter(a, b)
            raise InvalidClassParam(
                f"TorusClass({a}, {b}) outside the moduli domain ({', '.join(problems)}); "
                f"equivalent reduced parameter: a={ra:.12g}, b={rb:.12g}"
            )

    kind = "torus"
    euler_characteristic = 0
    orientable = True

    @property
    def descriptor(self) -> str:
        return f"T2(a={self.a:g},b={self.b:g})"

    def to_json(self) -> dict:
        return {"kind": "torus", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class KleinClass:
    b: float

    def __post_init__(self):
        b = float(self.b)
        object.__setattr__(self, "b", b)
        if not math.isfinite(b) or b <= 0:
            raise InvalidClassParam(f"KleinClass needs b > 0, got b={b}")

    kind = "klein"
    euler_characteristic = 0
    orientable = False

    @property
    def descriptor(self) -> str:
        return f"KL(b={self.b:g})"

    def to_json(self) -> dict:
        return {"kind": "klein", "b": self.b}


@dataclass(frozen=True)
class SphereClass:
    kind = "sphere"
    euler_characteristic = 2
    orientable = True
    descriptor = "S2"

    def to_json(self) -> dict:
        return {"kind": "sphere"}


@dataclass(frozen=True)
class RP2Class:
    kind = "rp2"
    euler_characteristic = 1
    orientable = False
    descriptor = "RP2"

    def to_json(self) -> dict:
        return {"kind": "rp2"}


@dataclass(frozen=True)
class Subdomain:
    """Tag for a mesh cut out of a closed surface."""

    parent: "ConformalClassParam"

    kind = "subdomain"

    @property
    def descriptor(self) -> str:
        return f"Subdomain({self.parent.descriptor})"

    def to_json(self) -> dict:
        return {"kind": "subdomain", "parent": self.parent.to_json()}


ConformalClassParam = Union[TorusClass, KleinClass, SphereClass, RP2Class]


def make_class(kind: str, a: Optional[float] = None, b: Optional[float] = None):
    """Build a validated class parameter from raw values.

    Raises :class:`InvalidClassParam` naming the violated constraint (and a
    reduced equivalent for tori outside the fundamental domain).
    """
    kind = kind.lower()
    if kind in ("torus", "t2"):
        if b is None:
            raise InvalidClassParam("torus requires b")
        return TorusClass(0.0 if a is None else a, b)
    if kind in ("klein", "kl"):
        if b is None:
            raise InvalidClassParam("klein bottle requires b")
        return KleinClass(b)
    if kind in ("sphere", "s2"):
        return SphereClass()
    if kind in ("rp2", "projective"):
        return RP2Class()
    raise InvalidClassParam(f"unknown surface kind {kind!r}")


def class_from_json(doc: dict):
    kind = doc["kind"]
    if kind == "subdomain":
        return Subdomain(class_from_json(doc["parent"]))
    return make_class(kind, doc.get("a"), doc.get("b"))


# ---------------------------------------------------------------------------
# Limiting spaces and topology equations


@dataclass(frozen=True)
class LimitingSpaceSpec:
    """Combinatorial description of the limit of a degenerating sequence.

    Genera follow the double-cover convention for non-orientable surfaces
    (RP^2 has genus 0, the Klein bottle genus 1).  ``labels`` optionally
    names each component (orientable ones first) for table lookup; by default
    genus-0 components are ``"S2"``/``"RP2"``.
    """

    orientable_components: tuple = ()
    nonorientable_components: tuple = ()
    two_sided_count: int = 0
    one_sided_count: int = 0
    source_orientable: bool = True
    source_genus: Optional[int] = None
    labels: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "orientable_components", tuple(int(g) for g in self.orientable_components))
        object.__setattr__(self, "nonorientable_components", tuple(int(g) for g in self.nonorientable_components))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.component_count:
                raise InconsistentSpec("one label per component required")
        if min(self.orientable_components + self.nonorientable_components + (0,)) < 0:
            raise InconsistentSpec("component genera must be non-negative")
        if self.two_sided_count < 0 or self.one_sided_count < 0:
            raise InconsistentSpec("collapsing geodesic counts must be non-negative")

    @property
    def component_count(self) -> int:
        return len(self.orientable_components) + len(self.nonorientable_components)

    def component_labels(self) -> list[str]:
        if self.labels is not None:
            return list(self.labels)
        out = [("S2" if g == 0 else f"orientable-genus-{g}") for g in self.orientable_components]
        out += [("RP2" if g == 0 else f"nonorientable-genus-{g}") for g in self.nonorientable_components]
        return out

    def to_json(self) -> dict:
        return {
            "orientable_components": list(self.orientable_components),
            "nonorientable_components": list(self.nonorientable_components),
            "two_sided_count": self.two_sided_count,
            "one_sided_count": self.one_sided_count,
            "source": {"orientable": self.source_orientable, "genus": self.source_genus},
            "labels": None if self.labels is None else list(self.labels),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LimitingSpaceSpec":
        src = doc.get("source", {})
        return cls(
            orientable_components=tuple(doc.get("orientable_components", ())),
            nonorientable_components=tuple(doc.get("nonorientable_components", ())),
            two_sided_count=int(doc.get("two_sided_count", 0)),
            one_sided_count=int(doc.get("one_sided_count", 0)),
            source_orientable=bool(src.get("orientable", True)),
            source_genus=src.get("genus"),
            labels=doc.get("labels"),
        )


@dataclass(frozen=True)
class GenusCheck:
    genus: int
    formula: str
    matches_source: Optional[bool]


def genus_relation(spec: LimitingSpaceSpec) -> GenusCheck:
    """Genus of the source surface implied by the limiting space.

    Orientable source: ``g = s2 + sum(g_i) - m2 + 1``.
    Non-orientable source: ``g = 2(s2 + sum(g~_i) - m2) + s1 + sum(g_j) - m1 + 1``.
    Raises :class:`InconsistentSpec` when the limiting space cannot come from a
    degeneration or contradicts the declared source genus.
    """
    if spec.component_count == 0:
        raise InconsistentSpec("limiting space has no components")
    st, s = spec.two_sided_count, spec.one_sided_count
    gt, g = sum(spec.orientable_components), sum(spec.nonorientable_components)
    mt, m = len(spec.orientable_components), len(spec.nonorientable_components)
    if spec.source_orientable:
        if m or s:
            raise InconsistentSpec("an orientable surface has no 1-sided geodesics or non-orientable pieces")
        genus = st + gt - mt + 1
        formula = f"{st} + {gt} - {mt} + 1 = {genus}"
    else:
        if m == 0 and s == 0 and st == 0:
            raise InconsistentSpec("a non-orientable source cannot degenerate to a single orientable surface without collapse")
        genus = 2 * (st + gt - mt) + s + g - m + 1
        formula = f"2({st} + {gt} - {mt}) + {s} + {g} - {m} + 1 = {genus}"
    if genus < 0:
        raise InconsistentSpec(f"implied genus is negative: {formula}")
    matches = None
    if spec.source_genus is not None:
        matches = genus == spec.source_genus
        if not matches:
            raise InconsistentSpec(f"declared source genus {spec.source_genus} but {formula}")
    return GenusCheck(genus, formula, matches)


def even_genus_analysis(spec: LimitingSpaceSpec) -> tuple[bool, str]:
    """Parity test for limits of non-orientable surfaces of even genus.

    Accepts iff a 1-sided geodesic collapses or some non-orientable
    component has even genus; otherwise returns the parity contradiction.
    """
    if spec.source_orientable or spec.source_genus is None or spec.source_genus % 2:
        raise NotApplicable("needs a non-orientable source of known even genus")
    if spec.one_sided_count:
        return True, f"s = {spec.one_sided_count} != 0"
    evens = [g for g in spec.nonorientable_components if g % 2 == 0]
    if evens:
        return True, f"non-orientable component of even genus {evens[0]}"
    g = sum(spec.nonorientable_components)
    m = len(spec.nonorientable_components)
    witness = (
        f"all non-orientable genera odd => |Gamma| - m = {g} - {m} = {g - m} is even; "
        f"with s = 0 the genus 2(...) + |Gamma| - m + 1 is odd, "
        f"contradicting source genus {spec.source_genus}"
    )
    return False, witness


def pinch_to_spheres(genus: int, orientable: bool = True) -> LimitingSpaceSpec:
    """Degeneration whose limit is a union of spheres through 2-sided
    collapses (orientable surfaces, non-orientable ones of odd genus)."""
    if genus < 0:
        raise InconsistentSpec("genus must be non-negative")
    if orientable:
        if genus == 0:
            spheres, collapses = 1, 0
        elif genus == 1:
            spheres, collapses = 1, 1
        else:
            spheres, collapses = 2 * genus - 2, 3 * genus - 3
        return LimitingSpaceSpec((0,) * spheres, (), collapses, 0, True, genus)
    if genus % 2 == 0:
        raise NotApplicable("non-orientable surfaces of even genus cannot pinch to spheres only")
    if genus == 1:
        spheres, collapses = 1, 1
    else:
        spheres, collapses = genus - 1, (3 * genus - 3) // 2
    return LimitingSpaceSpec((0,) * spheres, (), collapses, 0, False, genus)


def even_genus_pinch(genus: int, genus_prime: int) -> LimitingSpaceSpec:
    """Non-orientable source of even genus pinched along 2-sided geodesics
    onto a copy of the even-genus surface ``genus_prime`` plus spheres."""
    if genus < 2 or genus % 2 or genus_prime % 2 or not 0 <= genus_prime < genus:
        raise NotApplicable("needs even genus >= 2 and even genus_prime < genus")
    punctures = 1 if genus_prime >= 2 else 2
    spheres = genus - genus_prime - punctures
    collapses = (punctures + 3 * spheres) // 2
    return LimitingSpaceSpec((0,) * spheres, (genus_prime,), collapses, 0, False, genus)


# ---------------------------------------------------------------------------
# Degenerating families of flat classes


@dataclass(frozen=True)
class CollapsingGeodesic:
    length: float
    sidedness: int
    collar_width: float


@dataclass(frozen=True)
class DegenerationFamily:
    kind: str
    members: tuple
    geodesics: tuple
    limiting: LimitingSpaceSpec

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "members": [c.to_json() for c in self.members],
            "geodesics": [
                {"length": g.length, "sidedness": g.sidedness, "collar_width": g.collar_width}
                for g in self.geodesics
            ],
            "limiting": self.limiting.to_json(),
        }


FAMILY_KINDS = ("torus-pinch", "klein-to-sphere", "klein-to-rp2")


def _descriptor(kind: str, b: float, a: float) -> CollapsingGeodesic:
    if kind == "torus-pinch":
        return CollapsingGeodesic(b ** -0.5, 2, 0.5 * math.sqrt((a * a + b * b) / b))
    if kind == "klein-to-sphere":
        return CollapsingGeodesic(b ** 0.5, 2, 0.5 * b ** -0.5)
    return CollapsingGeodesic(b ** -0.5, 1, 0.5 * b ** 0.5)


def limiting_spec(kind: str) -> LimitingSpaceSpec:
    if kind == "torus-pinch":
        return LimitingSpaceSpec((0,), (), 1, 0, True, 1)
    if kind == "klein-to-sphere":
        return LimitingSpaceSpec((0,), (), 1, 0, False, 1)
    if kind == "klein-to-rp2":
        return LimitingSpaceSpec((), (0,), 0, 1, False, 1)
    raise ValueError(f"unknown family kind {kind!r}; expected one of {FAMILY_KINDS}")


def degeneration_family(kind: str, schedule: Sequence[float], a: float = 0.0) -> DegenerationFamily:
    """Family of flat classes along ``schedule`` (values of ``b``).

    ``torus-pinch`` and ``klein-to-rp2`` need ``b`` increasing,
    ``klein-to-sphere`` needs ``b`` decreasing.
    """
    limiting = limiting_spec(kind)
    bs = [float(b) for b in schedule]
    increasing = kind != "klein-to-sphere"
    for b0, b1 in zip(bs, bs[1:]):
        if (b1 <= b0) if increasing else (b1 >= b0):
            word = "increase" if increasing else "decrease"
            raise WrongDirection(f"{kind} needs b to strictly {word}; got {b0} then {b1}")
    if kind == "torus-pinch":
        members = tuple(TorusClass(a, b) for b in bs)
    else:
        members = tuple(KleinClass(b) for b in bs)
    geodesics = tuple(_descriptor(kind, b, a) for b in bs)
    return DegenerationFamily(kind, members, geodesics, limiting)


# ---------------------------------------------------------------------------
# Limit of Lambda_k along a degenerating family


@dataclass(frozen=True)
class LimitResult:
    value: Value
    assignment: dict
    simplified_value: Optional[Value]

    @property
    def agrees_with_simplified(self) -> Optional[bool]:
        if self.simplified_value is None:
            return None
        return self.simplified_value == self.value

    def to_json(self) -> dict:
        from .tables import format_value

        out = {"value": format_value(self.value), "assignment": self.assignment}
        out["simplified_value"] = None if self.simplified_value is None else format_value(self.simplified_value)
        return out


def _terms(spec: LimitingSpaceSpec) -> list[str]:
    return spec.component_labels() + ["S2"] * spec.two_sided_count + ["RP2"] * spec.one_sided_count


def _columns(labels: Sequence[str], k: int, table: LambdaTable) -> list[list[Value]]:
    return [table.column(lab, k) for lab in labels]


def _maxplus(columns: list[list[Value]], k: int):
    """Max-plus convolution over components; returns best value and indices."""
    # best[j] = (value, indices) for the first i components using total j
    best = {0: (PiMultiple(0), ())}
    for col in columns:
        nxt = {}
        for used, (val, idx) in best.items():
            for j in range(0, k - used + 1):
                cand = val + col[j]
                key = used + j
                if key not in nxt or cand > nxt[key][0]:
                    nxt[key] = (cand, idx + (j,))
        best = nxt
    return best[k]


def simplified_form(spec: LimitingSpaceSpec, k: int, table: LambdaTable) -> Value:
    """``max_{k'} Lambda_{k'}(limit) + 12 pi (k - k')`` over ``k - s <= k' <= k``
    where ``Lambda_{k'}(limit)`` combines the limit's components."""
    labels = spec.component_labels()
    cols = _columns(labels, k, table)
    s = spec.one_sided_count
    best = None
    for kp in range(max(0, k - s), k + 1):
        limit_val, _ = _maxplus([c[: kp + 1] for c in cols], kp)
        cand = limit_val + PiMultiple(12 * (k - kp))
        if best is None or cand > best:
            best = cand
    return best


def limit_value(spec: LimitingSpaceSpec, k: int, table: LambdaTable, cross_check: bool = True) -> LimitResult:
    """Limit of ``Lambda_k`` along a degenerating sequence with limit ``spec``.

    Maximizes the sum of per-term suprema over non-negative index vectors
    summing to ``k`` (components, then one S^2 per 2-sided collapse, one RP^2
    per 1-sided collapse).  Exact whenever the table entries used are exact.
    """
    labels = _terms(spec)
    cols = _columns(labels, k, table)
    value, idx = _maxplus(cols, k)
    assignment = {}
    counters: dict = {}
    for lab, j in zip(labels, idx):
        n = counters.get(lab, 0)
        counters[lab] = n + 1
        assignment[f"{lab}#{n}"] = j
    simplified = simplified_form(spec, k, table) if (cross_check and spec.one_sided_count >= 1) else None
    return LimitResult(value, assignment, simplified)


def limit_value_bruteforce(spec: LimitingSpaceSpec, k: int, table: LambdaTable) -> Value:
    """Reference evaluation by scanning every non-negative index vector."""
    import itertools

    cols = _columns(_terms(spec), k, table)
    n = len(cols)
    best = None
    # stars and bars: n - 1 bars among k + n - 1 slots
    for bars in itertools.combinations(range(k + n - 1), n - 1):
        edges = (-1,) + bars + (k + n - 1,)
        vec = [edges[i + 1] - edges[i] - 1 for i in range(n)]
        val = value_sum(c[j] for c, j in zip(cols, vec))
        if best is None or val > best:
            best = val
    return best
