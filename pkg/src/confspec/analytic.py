"""Closed-form reference values: spectra of the canonical metrics and the
geometry of hyperbolic collars.

All spectra are normalized, i.e. ``lambda * area``.  Flat classes have unit
area so the raw and normalized values coincide.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonpositiveLength, OutOfCollar, UnsupportedClass
from .moduli import KleinClass, RP2Class, SphereClass, Subdomain, TorusClass

__all__ = [
    "exact_spectrum",
    "torus_lattice",
    "collar_width",
    "collar_alpha",
    "collar_profile",
    "collar_area",
    "collar_to_sphere",
    "CollarGeometry",
]

_GROUP_RTOL = 1e-9
MAX_COUNT = 10_000


def torus_lattice(a: float, b: float) -> np.ndarray:
    """Rows are the generators of the unit-covolume lattice
    ``b**-0.5 * <(1, 0), (a, b)>``."""
    return np.array([[1.0, 0.0], [a, b]]) / math.sqrt(b)


def _group(values: np.ndarray, count: int) -> list[tuple[float, int]]:
    """Sorted values -> (value, multiplicity) clusters, truncated to ``count``."""
    out: list[list] = []
    for v in np.sort(values):
        if out and abs(v - out[-1][0]) <= _GROUP_RTOL * max(1.0, abs(v)):
            out[-1][1] += 1
        else:
            if len(out) == count:
                break
            out.append([float(v), 1])
    return [(v, m) for v, m in out]


def _quadratic_form_values(gram: np.ndarray, radius: float) -> np.ndarray:
    """All values ``n^T G n`` over integer vectors with value ``<= radius``."""
    lam_min = float(np.linalg.eigvalsh(gram)[0])
    bound = int(math.floor(math.sqrt(radius / lam_min))) + 1
    r = np.arange(-bound, bound + 1)
    m, n = np.meshgrid(r, r, indexing="ij")
    q = gram[0, 0] * m * m + 2 * gram[0, 1] * m * n + gram[1, 1] * n * n
    return q[q <= radius * (1 + 1e-12)].ravel()


def _torus_spectrum(cls: TorusClass, count: int):
    lattice = torus_lattice(cls.a, cls.b)
    dual = np.linalg.inv(lattice).T  # rows: dual basis
    gram = 4 * math.pi**2 * dual @ dual.T
    radius = 4 * math.pi**2 * max(count, 4)
    while True:
        vals = _quadratic_form_values(gram, radius)
        groups = _group(vals, count + 1)
        # every value <= radius is complete; the (count+1)-th distinct value
        # below the radius proves the first ``count`` are final
        if len(groups) > count:
            return groups[:count]
        radius *= 2


def _klein_values(b: float, radius: float) -> np.ndarray:
    """Eigenvalues of the flat Klein bottle ``R^2 / G_b`` up to ``radius``,
    one entry per eigenfunction."""
    pi2 = math.pi**2
    out = [0.0]
    # y-independent functions of period 1/sqrt(b): cos and sin for m >= 1
    m = 1
    while 4 * pi2 * b * m * m <= radius:
        out += [4 * pi2 * b * m * m] * 2
        m += 1
    # glide-symmetrized modes: one per (p, q), p in Z, q >= 1
    q = 1
    while 4 * pi2 * q * q / b <= radius:
        base = 4 * pi2 * q * q / b
        p = 0
        while base + pi2 * b * p * p <= radius:
            out += [base + pi2 * b * p * p] * (1 if p == 0 else 2)
            p += 1
        q += 1
    return np.array(out)


def _klein_spectrum(cls: KleinClass, count: int):
    b = cls.b
    radius = 4 * math.pi**2 * max(b, 1 / b, 1.0) * 4
    while True:
        groups = _group(_klein_values(b, radius), count + 1)
        if len(groups) > count:
            return groups[:count]
        radius *= 2


def exact_spectrum(class_param, count: int) -> list[tuple[float, int]]:
    """First ``count`` distinct normalized eigenvalues with multiplicities.

    Parameters
    ----------
    class_param : TorusClass, KleinClass, SphereClass or RP2Class
        Conformal class; its canonical metric is used (flat of unit area,
        or round of curvature 1).
    count : int
        Number of distinct values, ``1 <= count <= 10**4``.

    Returns
    -------
    list of (float, int)
        Ascending ``(lambda_bar, multiplicity)``, starting with ``(0, 1)``.
    """
    if isinstance(class_param, Subdomain):
        raise UnsupportedClass("no closed-form spectrum for subdomains")
    if not 1 <= count <= MAX_COUNT:
        raise ValueError(f"count must lie in [1, {MAX_COUNT}]")
    if isinstance(class_param, TorusClass):
        return _torus_spectrum(class_param, count)
    if isinstance(class_param, KleinClass):
        return _klein_spectrum(class_param, count)
    if isinstance(class_param, SphereClass):
        return [(4 * math.pi * l * (l + 1), 2 * l + 1) for l in range(count)]
    if isinstance(class_param, RP2Class):
        return [(2 * math.pi * l * (l + 1), 2 * l + 1) for l in range(0, 2 * count, 2)]
    raise UnsupportedClass(f"unsupported class {class_param!r}")


# ---------------------------------------------------------------------------
# Collars


def collar_width(length: float, alpha: int) -> float:
    """``pi / (alpha l) * (pi - 2 arctan(sinh(alpha l / 2)))``.

    Evaluated as ``2 pi / (alpha l) * arctan(1 / sinh(alpha l / 2))``, which
    is the same number without the cancellation at large ``l``.
    """
    if not length > 0:
        raise NonpositiveLength(f"geodesic length must be positive, got {length}")
    if alpha not in (1, 2):
        raise ValueError("alpha must be 1 or 2")
    x = alpha * length
    return 2 * math.pi / x * math.atan(1 / math.sinh(x / 2))


def collar_alpha(sidedness: int) -> int:
    """Index of the width formula bounding a collar of given sidedness.

    A 2-sided geodesic bounds a cylinder of width ``w`` with ``alpha = 1``;
    a 1-sided geodesic bounds a Moebius band of width ``w`` with
    ``alpha = 2`` (the collar of its length-``2l`` lift, halved).
    """
    if sidedness not in (1, 2):
        raise ValueError("sidedness must be 1 or 2")
    return 3 - sidedness


def _profile_scale(sidedness: int) -> float:
    return 2 * math.pi if sidedness == 2 else math.pi


def collar_profile(t, length: float, sidedness: int):
    """Conformal factor of the collar metric ``f(t)^2 (dt^2 + dtheta^2)``.

    ``f(t) = l / (2 pi cos(l t / 2 pi))`` on a cylinder and
    ``l / (pi cos(l t / pi))`` on a Moebius band.  ``t`` may be an array.
    """
    w = collar_width(length, collar_alpha(sidedness))
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.abs(t_arr) >= w):
        raise OutOfCollar(f"|t| must be < collar width {w:.6g}")
    c = _profile_scale(sidedness)
    out = length / (c * np.cos(length * t_arr / c))
    return float(out) if np.ndim(out) == 0 else out


def collar_area(length: float, sidedness: int) -> float:
    """Area of the collar: ``2l / sinh(l/2)`` (cylinder), ``2l / sinh(l)``
    (Moebius band)."""
    if not length > 0:
        raise NonpositiveLength(f"geodesic length must be positive, got {length}")
    return 2 * length / math.sinh(length * (0.5 if sidedness == 2 else 1.0))


@dataclass(frozen=True)
class CollarGeometry:
    length: float
    sidedness: int

    def __post_init__(self):
        if not self.length > 0:
            raise NonpositiveLength(f"geodesic length must be positive, got {self.length}")
        collar_alpha(self.sidedness)

    @property
    def alpha(self) -> int:
        return collar_alpha(self.sidedness)

    @property
    def width(self) -> float:
        return collar_width(self.length, self.alpha)

    @property
    def area(self) -> float:
        return collar_area(self.length, self.sidedness)

    def profile(self, t):
        return collar_profile(t, self.length, self.sidedness)

    def to_json(self) -> dict:
        return {
            "length": self.length,
            "sidedness": self.sidedness,
            "alpha": self.alpha,
            "width": self.width,
            "area": self.area,
        }


def collar_to_sphere(t, theta, offset: float = 0.0) -> np.ndarray:
    """Conformal map from collar coordinates to the unit sphere,

    ``(2 e^s cos theta, 2 e^s sin theta, e^{2s} - 1) / (e^{2s} + 1)`` with
    ``s = t - offset``, computed as ``(sech s cos theta, sech s sin theta,
    tanh s)`` so that large ``|s|`` does not overflow.

    Broadcasts over ``t`` and ``theta``; the last axis holds the coordinates.
    """
    s = np.asarray(t, dtype=float) - offset
    th = np.asarray(theta, dtype=float)
    sech = 1.0 / np.cosh(np.clip(s, -700, 700))
    s, th, sech = np.broadcast_arrays(s, th, sech)
    return np.stack([sech * np.cos(th), sech * np.sin(th), np.tanh(s)], axis=-1)
