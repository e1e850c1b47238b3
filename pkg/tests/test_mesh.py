import math
from collections import Counter

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from confspec.analytic import torus_lattice
from confspec.errors import EmptySelection, InvalidClassParam, NonManifoldEdge, ResolutionTooSmall
from confspec.mesh import (
    DisconnectedSelectionWarning,
    DiscreteSurface,
    extract_subdomain,
    generate_surface_mesh,
    mesh_for,
    subdivide,
    surface_from_json,
    validate_topology,
)
from confspec.moduli import KleinClass, RP2Class, SphereClass, TorusClass

CLOSED = [
    (TorusClass(0, 1), 8, 0, True),
    (TorusClass(0.5, math.sqrt(3) / 2), 9, 0, True),
    (TorusClass(0.3, 5.0), 12, 0, True),
    (KleinClass(1.0), 8, 0, False),
    (KleinClass(0.2), 10, 0, False),
    (SphereClass(), 2, 2, True),
    (RP2Class(), 3, 1, False),
]


def _edge_counts(surf):
    edges = Counter()
    for a, b, c in surf.dof_triangles.tolist():
        for u, v in ((a, b), (b, c), (c, a)):
            edges[(min(u, v), max(u, v))] += 1
    return edges


@pytest.mark.parametrize("cls, res, chi, orientable", CLOSED)
def test_closed_meshes(cls, res, chi, orientable):
    surf = generate_surface_mesh(cls, res)
    rep = validate_topology(surf)
    assert rep.euler_characteristic == chi
    assert rep.orientable is orientable and surf.orientable is orientable
    assert rep.boundary_loops == 0 and rep.components == 1
    # independent recount on the glued complex
    edges = _edge_counts(surf)
    assert set(edges.values()) == {2}
    assert surf.n_dofs - len(edges) + len(surf.triangles) == chi


@pytest.mark.parametrize("cls", [TorusClass(0, 1), TorusClass(0.4, 2.5), KleinClass(1.0), KleinClass(7.0)])
def test_flat_area_is_one(cls):
    assert_allclose(generate_surface_mesh(cls, 8).area, 1.0, rtol=1e-12)


def test_flat_vertex_count_scales_with_resolution():
    for res in (8, 16, 32):
        n = generate_surface_mesh(TorusClass(0, 1), res).n_dofs
        assert n == res * res


def test_round_areas_converge_quadratically():
    errs_s2 = [abs(generate_surface_mesh(SphereClass(), L).area - 4 * math.pi) for L in (2, 3, 4)]
    errs_rp2 = [abs(generate_surface_mesh(RP2Class(), L).area - 2 * math.pi) for L in (2, 3, 4)]
    for errs in (errs_s2, errs_rp2):
        ratios = [errs[0] / errs[1], errs[1] / errs[2]]
        assert all(3.5 < r < 4.5 for r in ratios)
    assert_allclose(np.array(errs_rp2) * 2, errs_s2, rtol=1e-10)


def test_sphere_vertex_count_and_north_pole():
    for L in (1, 2, 3):
        surf = generate_surface_mesh(SphereClass(), L)
        assert len(surf.vertices) == 10 * 4**L + 2
        assert_allclose(np.linalg.norm(surf.vertices, axis=1), 1.0, rtol=1e-14)
    assert np.any(np.all(np.isclose(surf.vertices, [0, 0, 1]), axis=1))


def test_rp2_is_antipodal_quotient():
    surf = generate_surface_mesh(RP2Class(), 2)
    ident = surf.identification
    for i, j in enumerate(ident.tolist()):
        if i != j:
            assert_allclose(surf.vertices[i], -surf.vertices[j], atol=1e-14)
    assert surf.n_dofs == (10 * 4**2 + 2) // 2


@pytest.mark.parametrize("cls", [TorusClass(0.25, 2.0), KleinClass(3.0)])
def test_identification_is_idempotent_and_geometric(cls):
    surf = generate_surface_mesh(cls, 8)
    ident = surf.identification
    assert_array_equal(ident[ident], ident)
    diffs = surf.vertices - surf.vertices[ident]
    if isinstance(cls, TorusClass):
        coeffs = diffs @ np.linalg.inv(torus_lattice(cls.a, cls.b))
        assert_allclose(coeffs, np.round(coeffs), atol=1e-12)
    else:
        w, h = cls.b**-0.5, cls.b**0.5
        v, c = surf.vertices, surf.vertices[ident]
        # glued points differ by the glide (x + w, -y) and/or the y-period
        for p, q in zip(v, c):
            shift = round((p[0] - q[0]) / w)
            y = q[1] if shift % 2 == 0 else -q[1]
            assert_allclose(p[0] - q[0], shift * w, atol=1e-12)
            assert_allclose(((p[1] - y) / h) % 1.0 * (1 - ((p[1] - y) / h) % 1.0), 0.0, atol=1e-10)


@pytest.mark.parametrize("cls, res", [(TorusClass(0, 1), 6), (KleinClass(2.0), 6), (SphereClass(), 1), (RP2Class(), 1)])
def test_subdivide(cls, res):
    surf = generate_surface_mesh(cls, res)
    fine = subdivide(surf)
    assert len(fine.triangles) == 4 * len(surf.triangles)
    assert validate_topology(fine).euler_characteristic == validate_topology(surf).euler_characteristic
    assert fine.orientable == surf.orientable
    if not surf.is_round:
        assert_allclose(fine.area, surf.area, rtol=1e-10)


def test_deterministic_and_json_round_trip():
    a = generate_surface_mesh(KleinClass(1.5), 8)
    b = generate_surface_mesh(KleinClass(1.5), 8)
    assert a.dumps() == b.dumps()
    back = surface_from_json(a.dumps())
    assert_array_equal(back.vertices, a.vertices)
    assert_array_equal(back.triangles, a.triangles)
    assert_array_equal(back.identification, a.identification)
    assert back.class_tag == a.class_tag and back.orientable == a.orientable


def test_surfaces_are_immutable():
    surf = generate_surface_mesh(TorusClass(0, 1), 4)
    with pytest.raises(ValueError):
        surf.vertices[0, 0] = 3.0


def test_resolution_too_small():
    with pytest.raises(ResolutionTooSmall):
        generate_surface_mesh(TorusClass(0, 1), 3)
    with pytest.raises(ResolutionTooSmall):
        generate_surface_mesh(SphereClass(), 0)


def test_mesh_for_validates_parameters():
    with pytest.raises(InvalidClassParam):
        mesh_for("torus", 0.7, 2.0, 8)


class TestSubdomain:
    def test_hemisphere(self):
        sphere = generate_surface_mesh(SphereClass(), 3)
        hemi = extract_subdomain(sphere, np.flatnonzero(sphere.barycenters[:, 2] > 0))
        rep = validate_topology(hemi)
        assert (rep.euler_characteristic, rep.orientable, rep.boundary_loops) == (1, True, 1)
        assert hemi.class_tag.parent == SphereClass()
        assert len(hemi.boundary_edges) > 0
        assert_allclose(hemi.area, sphere.area / 2, rtol=1e-12)

    def test_pole_cap_removed(self):
        sphere = generate_surface_mesh(SphereClass(), 3)
        z = sphere.vertices[sphere.triangles][:, :, 2]
        near = np.arccos(np.clip(z, -1, 1)).min(axis=1) < 0.1
        assert near.any()
        sub = extract_subdomain(sphere, np.flatnonzero(~near))
        rep = validate_topology(sub)
        assert (rep.euler_characteristic, rep.boundary_loops) == (1, 1)

    def test_full_and_empty_selection(self):
        surf = generate_surface_mesh(TorusClass(0, 1), 4)
        with pytest.raises(EmptySelection):
            extract_subdomain(surf, range(len(surf.triangles)))
        with pytest.raises(EmptySelection):
            extract_subdomain(surf, [])

    def test_disconnected_selection_warns(self):
        sphere = generate_surface_mesh(SphereClass(), 2)
        z = sphere.barycenters[:, 2]
        with pytest.warns(DisconnectedSelectionWarning):
            sub = extract_subdomain(sphere, np.flatnonzero(np.abs(z) > 0.6))
        assert validate_topology(sub).components == 2

    def test_rp2_band_is_moebius(self):
        # neighbourhood of a projective line: non-orientable, one boundary loop
        rp2 = generate_surface_mesh(RP2Class(), 3)
        sub = extract_subdomain(rp2, np.flatnonzero(np.abs(rp2.barycenters[:, 2]) < 0.3))
        rep = validate_topology(sub)
        assert (rep.euler_characteristic, rep.orientable, rep.boundary_loops) == (0, False, 1)

    def test_klein_strips(self):
        kl = generate_surface_mesh(KleinClass(1.0), 16)
        y = kl.barycenters[:, 1] % 1.0
        # the circle y = 0 is fixed by the glide: its neighbourhood is a Moebius band
        moebius = extract_subdomain(kl, np.flatnonzero(np.minimum(y, 1 - y) < 0.2))
        rep = validate_topology(moebius)
        assert (rep.euler_characteristic, rep.orientable, rep.boundary_loops) == (0, False, 1)
        # y = 1/4 is swapped with y = 3/4: a strip around both is a cylinder
        cyl = extract_subdomain(kl, np.flatnonzero(np.abs(np.abs(y - 0.5) - 0.25) < 0.1))
        rep = validate_topology(cyl)
        assert (rep.euler_characteristic, rep.orientable, rep.boundary_loops) == (0, True, 2)


def test_non_manifold_edge():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], float)
    tris = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    surf = DiscreteSurface(verts, tris, np.arange(5), SphereClass())
    with pytest.raises(NonManifoldEdge):
        validate_topology(surf)
