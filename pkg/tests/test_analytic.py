import math

import mpmath
import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from confspec.analytic import (
    CollarGeometry,
    collar_area,
    collar_profile,
    collar_to_sphere,
    collar_width,
    exact_spectrum,
)
from confspec.errors import NonpositiveLength, OutOfCollar, UnsupportedClass
from confspec.moduli import KleinClass, RP2Class, SphereClass, Subdomain, TorusClass, reduce_torus_parameter


def _brute_torus(a, b, count):
    """Independent oracle: 4 pi^2 |mu|^2 over a box of dual lattice vectors."""
    basis = np.array([[1.0, 0.0], [a, b]]) / math.sqrt(b)
    dual = np.linalg.inv(basis).T
    n = np.arange(-30, 31)
    m1, m2 = np.meshgrid(n, n)
    mu = np.stack([m1.ravel(), m2.ravel()], 1) @ dual
    vals = np.sort(4 * math.pi**2 * (mu**2).sum(1))
    distinct = []
    for v in vals:
        if not distinct or v > distinct[-1][0] * (1 + 1e-9) + 1e-12:
            distinct.append([v, 1])
        else:
            distinct[-1][1] += 1
    return distinct[:count]


class TestExactSpectrum:
    def test_square_torus(self):
        spec = exact_spectrum(TorusClass(0, 1), 3)
        assert spec[0] == (0.0, 1)
        assert_allclose(spec[1][0], 4 * math.pi**2, rtol=1e-14)
        assert spec[1][1] == 4
        assert_allclose(spec[2][0], 8 * math.pi**2, rtol=1e-14)

    def test_hexagonal_torus(self):
        spec = exact_spectrum(TorusClass(0.5, math.sqrt(3) / 2), 2)
        assert_allclose(spec[1][0], 8 * math.pi**2 / math.sqrt(3), rtol=1e-14)
        assert spec[1][1] == 6

    @pytest.mark.parametrize("a, b", [(0.0, 1.0), (0.3, 1.7), (0.5, 4.0), (0.1, 16.0)])
    def test_torus_against_box_enumeration(self, a, b):
        ours = exact_spectrum(TorusClass(a, b), 12)
        ref = _brute_torus(a, b, 12)
        assert_allclose([v for v, _ in ours], [v for v, _ in ref], rtol=1e-12, atol=1e-12)
        assert [m for _, m in ours] == [m for _, m in ref]

    def test_modular_equivalence(self):
        # (a, b) -> (a - 1, b) and inversion describe the same lattice up to rotation
        a, b = 0.3, 1.2
        ra, rb = reduce_torus_parameter(a - 1, b)
        assert_allclose([v for v, _ in exact_spectrum(TorusClass(ra, rb), 8)], [v for v, _ in exact_spectrum(TorusClass(a, b), 8)], rtol=1e-12)

    def test_klein_b1(self):
        spec = exact_spectrum(KleinClass(1.0), 2)
        assert_allclose(spec[1][0], 4 * math.pi**2, rtol=1e-14)
        assert spec[1][1] == 3

    @pytest.mark.parametrize("b", [0.25, 1.0, 3.0])
    def test_klein_matches_invariant_torus_modes(self, b):
        # eigenfunctions on the covering torus (period 2w in x, h in y) that are
        # invariant under (x, y) -> (x + w, -y)
        w, h = b**-0.5, b**0.5
        vals = {}
        for p in range(-12, 13):
            for q in range(0, 13):
                lam = (math.pi * p / w) ** 2 + (2 * math.pi * q / h) ** 2
                # q = 0 needs (-1)^p = 1; q > 0 pairs (p, q) with (p, -q)
                dim = 1 if (q > 0 or p % 2 == 0) else 0
                if dim:
                    key = round(lam, 8)
                    vals[key] = vals.get(key, 0) + dim
        ref = sorted(vals.items())[:8]
        ours = exact_spectrum(KleinClass(b), 8)
        assert_allclose([v for v, _ in ours], [v for v, _ in ref], rtol=1e-9)
        assert [m for _, m in ours] == [m for _, m in ref]

    def test_round(self):
        s2 = exact_spectrum(SphereClass(), 3)
        assert_allclose(s2[1][0], 8 * math.pi)
        assert s2[1][1] == 3
        rp2 = exact_spectrum(RP2Class(), 3)
        assert_allclose(rp2[1][0], 12 * math.pi)
        # even degree l = 2 harmonics: 5 of them
        assert rp2[1][1] == 5

    def test_subdomain_unsupported(self):
        with pytest.raises(UnsupportedClass):
            exact_spectrum(Subdomain(SphereClass()), 3)


class TestCollar:
    @staticmethod
    def _reference(l, alpha):
        with mpmath.workdps(40):
            l = mpmath.mpf(l)
            return float(mpmath.pi / (alpha * l) * (mpmath.pi - 2 * mpmath.atan(mpmath.sinh(alpha * l / 2))))

    @pytest.mark.parametrize("l", [0.1, 1.0, 10.0, 50.0])
    @pytest.mark.parametrize("alpha", [1, 2])
    def test_width_high_precision(self, l, alpha):
        assert_allclose(collar_width(l, alpha), self._reference(l, alpha), rtol=1e-13)

    def test_width_examples(self):
        assert_allclose(collar_width(1, 1), 6.851, atol=5e-4)
        assert_allclose(collar_width(1, 2), 2.215, atol=5e-4)

    def test_width_small_length_expansion(self):
        # w alpha l = pi^2 - pi alpha l + O(l^3): the limit pi^2 is approached linearly
        for l in (1e-2, 1e-3, 1e-4):
            for alpha in (1, 2):
                prod = collar_width(l, alpha) * alpha * l
                assert_allclose(prod, math.pi**2 - math.pi * alpha * l, atol=2 * (alpha * l) ** 3)

    def test_width_monotone(self):
        ls = np.logspace(-3, 2, 200)
        for alpha in (1, 2):
            w = [collar_width(l, alpha) for l in ls]
            assert np.all(np.diff(w) < 0)

    def test_nonpositive_length(self):
        with pytest.raises(NonpositiveLength):
            collar_width(0.0, 1)

    def test_profile_examples(self):
        assert_allclose(collar_profile(0.0, 2 * math.pi, 2), 1.0)
        assert_allclose(collar_profile(0.0, math.pi, 1), 1.0)

    @pytest.mark.parametrize("sidedness", [1, 2])
    def test_profile_even_positive_minimal_at_zero(self, sidedness):
        geo = CollarGeometry(0.7, sidedness)
        t = np.linspace(0, geo.width, 50)[:-1]
        p = geo.profile(t)
        assert_allclose(p, geo.profile(-t), rtol=0)
        assert np.all(p > 0) and np.all(p >= p[0])

    def test_out_of_collar(self):
        w = collar_width(1.0, 1)
        with pytest.raises(OutOfCollar):
            collar_profile(w, 1.0, 2)

    @pytest.mark.parametrize("l", [0.05, 1.0, 6.0])
    @pytest.mark.parametrize("sidedness, period", [(2, 2 * math.pi), (1, math.pi)])
    def test_profile_integrates_to_area(self, l, sidedness, period):
        geo = CollarGeometry(l, sidedness)
        val, _ = quad(lambda t: geo.profile(t) ** 2, -geo.width, geo.width, limit=200)
        assert_allclose(period * val, collar_area(l, sidedness), rtol=1e-8)

    @pytest.mark.parametrize("l", [0.05, 1.0, 6.0])
    def test_width_reaches_classical_collar_distance(self, l):
        # distance from the core geodesic to the chart edge: arcsinh(1/sinh(l/2))
        # for a cylinder, and the same for the length-2l lift of a Moebius core
        for sidedness, dist in ((2, math.asinh(1 / math.sinh(l / 2))), (1, math.asinh(1 / math.sinh(l)))):
            geo = CollarGeometry(l, sidedness)
            val, _ = quad(geo.profile, 0, geo.width * (1 - 1e-15), limit=200)
            assert_allclose(val, dist, rtol=1e-7)

    def test_collar_to_sphere_examples(self):
        assert_allclose(collar_to_sphere(0.3, 0.0, 0.3), [1.0, 0.0, 0.0], atol=1e-15)
        assert_allclose(collar_to_sphere(40.0, 1.0), [0, 0, 1], atol=1e-12)
        assert_allclose(collar_to_sphere(-30.0, 1.0), [0, 0, -1], atol=1e-12)

    def test_collar_to_sphere_matches_exponential_form(self):
        s = np.linspace(-10, 10, 101)
        th = np.linspace(0, 2 * math.pi, 101)
        e, e2 = np.exp(s), np.exp(2 * s)
        ref = np.stack([2 * e * np.cos(th), 2 * e * np.sin(th), e2 - 1], -1) / (e2 + 1)[:, None]
        assert_allclose(collar_to_sphere(s, th), ref, atol=1e-14)
        assert_allclose((2 * e) ** 2 + (e2 - 1) ** 2, (e2 + 1) ** 2, rtol=1e-12)

    def test_collar_to_sphere_unit_norm_without_overflow(self):
        t = np.linspace(-2000, 2000, 4001)
        with np.errstate(over="raise"):
            p = collar_to_sphere(t, 0.7, 3.0)
        assert_allclose(np.linalg.norm(p, axis=-1), 1.0, atol=1e-12)
