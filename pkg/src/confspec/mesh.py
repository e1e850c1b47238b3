"""Triangle meshes of canonical representatives of conformal classes.

A :class:`DiscreteSurface` stores an *unwrapped* triangulation (a planar
fundamental domain, or triangles on the unit sphere) together with an
identification array that maps every vertex to the canonical vertex it is
glued to.  The degrees of freedom of a finite element space on the quotient
are the canonical vertices.
"""
from __future__ import annotations

import json
import math
import warnings
from collections import defaultdict, deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np

from .errors import EmptySelection, InvalidClassParam, NonManifoldEdge, ResolutionTooSmall
from .moduli import KleinClass, RP2Class, SphereClass, Subdomain, TorusClass, class_from_json, make_class

__all__ = [
    "DiscreteSurface",
    "TopologyReport",
    "DisconnectedSelectionWarning",
    "generate_surface_mesh",
    "extract_subdomain",
    "validate_topology",
    "subdivide",
    "surface_from_json",
    "euler_target",
    "MIN_RESOLUTION",
]

MIN_RESOLUTION = 4


class DisconnectedSelectionWarning(UserWarning):
    """The extracted subdomain has more than one connected component."""


@dataclass(frozen=True, eq=False)
class DiscreteSurface:
    """Triangulated surface with quotient identifications.

    Attributes
    ----------
    vertices : ndarray, shape (N, 2) or (N, 3)
        Unwrapped coordinates; every triangle is geometrically correct in
        these coordinates.
    triangles : ndarray of int, shape (F, 3)
        Indices into ``vertices``.
    identification : ndarray of int, shape (N,)
        ``identification[i]`` is the canonical vertex glued to ``i``;
        canonical vertices map to themselves.
    class_tag : conformal class parameter or :class:`Subdomain`
    boundary_edges : ndarray of int, shape (B, 2)
        Boundary edges as pairs of canonical vertices.
    orientable : bool
    parent_vertices : ndarray of int, optional
        For subdomains, the index of each vertex in the parent mesh.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    identification: np.ndarray
    class_tag: object
    boundary_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    orientable: bool = True
    parent_vertices: Optional[np.ndarray] = None

    def __post_init__(self):
        for name, dtype in (("vertices", float), ("triangles", np.int64), ("identification", np.int64), ("boundary_edges", np.int64)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.boundary_edges.size == 0:
            object.__setattr__(self, "boundary_edges", np.zeros((0, 2), dtype=np.int64))

    # -- degrees of freedom -------------------------------------------------
    @cached_property
    def canonical_vertices(self) -> np.ndarray:
        """Sorted canonical vertex indices; position ``d`` is dof ``d``."""
        return np.unique(self.identification[np.unique(self.triangles)])

    @cached_property
    def dof_index(self) -> np.ndarray:
        """Map vertex -> dof number (``-1`` for vertices not in any triangle)."""
        lookup = -np.ones(len(self.vertices), dtype=np.int64)
        lookup[self.canonical_vertices] = np.arange(len(self.canonical_vertices))
        out = lookup[self.identification]
        out.setflags(write=False)
        return out

    @property
    def n_dofs(self) -> int:
        return len(self.canonical_vertices)

    @cached_property
    def dof_triangles(self) -> np.ndarray:
        return self.dof_index[self.triangles]

    @cached_property
    def dof_positions(self) -> np.ndarray:
        """Coordinates of the canonical vertex of each dof."""
        return self.vertices[self.canonical_vertices]

    # -- geometry -------------------------------------------------------------
    @cached_property
    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        if p.shape[2] == 2:
            return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    @property
    def area(self) -> float:
        return float(math.fsum(self.triangle_areas))

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def is_closed(self) -> bool:
        return len(self.boundary_edges) == 0

    @property
    def is_round(self) -> bool:
        tag = self.class_tag
        while isinstance(tag, Subdomain):
            tag = tag.parent
        return isinstance(tag, (SphereClass, RP2Class))

    def mesh_size(self) -> float:
        """Longest edge length."""
        p = self.vertices[self.triangles]
        return float(max(np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1).max() for i in range(3)))

    # -- serialization --------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "identification": self.identification.tolist(),
            "class_tag": self.class_tag.to_json(),
            "boundary_edges": self.boundary_edges.tolist(),
            "orientable": bool(self.orientable),
        }

    def parent_dofs(self, parent: "DiscreteSurface") -> np.ndarray:
        """Dof of ``parent`` corresponding to each dof of this subdomain."""
        if self.parent_vertices is None:
            raise ValueError("surface was not extracted from a parent mesh")
        return parent.dof_index[self.parent_vertices[self.canonical_vertices]]

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def surface_from_json(doc) -> DiscreteSurface:
    if isinstance(doc, str):
        doc = json.loads(doc)
    return DiscreteSurface(
        vertices=np.asarray(doc["vertices"], dtype=float),
        triangles=np.asarray(doc["triangles"], dtype=np.int64),
        identification=np.asarray(doc["identification"], dtype=np.int64),
        class_tag=class_from_json(doc["class_tag"]),
        boundary_edges=np.asarray(doc.get("boundary_edges", []), dtype=np.int64).reshape(-1, 2),
        orientable=bool(doc.get("orientable", True)),
    )


# ---------------------------------------------------------------------------
# Combinatorics on the glued complex


def _edge_incidence(dof_tris: np.ndarray):
    """Map sorted dof pair -> list of (triangle, oriented dof pair)."""
    inc = defaultdict(list)
    for t, (i, j, k) in enumerate(dof_tris.tolist()):
        for u, v in ((i, j), (j, k), (k, i)):
            inc[(u, v) if u < v else (v, u)].append((t, u, v))
    return inc


def _check_manifold(inc) -> None:
    for e, uses in inc.items():
        if len(uses) > 2:
            raise NonManifoldEdge(f"edge {e} is shared by {len(uses)} triangles")


def _boundary_edges(inc) -> np.ndarray:
    out = sorted(e for e, uses in inc.items() if len(uses) == 1)
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def _orientable(n_tri: int, inc) -> bool:
    """Propagate triangle orientations across interior edges."""
    nbrs = defaultdict(list)
    for uses in inc.values():
        if len(uses) == 2:
            (t1, a1, _), (t2, a2, _) = uses
            # same direction along the shared edge -> orientations differ
            same = a1 == a2
            nbrs[t1].append((t2, same))
            nbrs[t2].append((t1, same))
    sign = np.zeros(n_tri, dtype=np.int8)
    for start in range(n_tri):
        if sign[start]:
            continue
        sign[start] = 1
        queue = deque([start])
        while queue:
            t = queue.popleft()
            for s, flip in nbrs[t]:
                want = -sign[t] if flip else sign[t]
                if sign[s] == 0:
                    sign[s] = want
                    queue.append(s)
                elif sign[s] != want:
                    return False
    return True


def _components(n_nodes: int, pairs: Iterable[tuple[int, int]]) -> int:
    parent = list(range(n_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in pairs:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
    return len({find(x) for x in range(n_nodes)})


@dataclass(frozen=True)
class TopologyReport:
    euler_characteristic: int
    orientable: bool
    boundary_loops: int
    area: float
    components: int
    vertices: int
    edges: int
    faces: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def validate_topology(surface: DiscreteSurface) -> TopologyReport:
    """Euler characteristic, orientability, boundary loops and area of the
    glued complex.  Raises :class:`NonManifoldEdge` when an edge has more
    than two incident triangles."""
    dt = surface.dof_triangles
    inc = _edge_incidence(dt)
    _check_manifold(inc)
    V, E, F = surface.n_dofs, len(inc), len(dt)
    bnd = _boundary_edges(inc)
    bverts = np.unique(bnd)
    remap = {v: i for i, v in enumerate(bverts.tolist())}
    loops = _components(len(bverts), ((remap[u], remap[v]) for u, v in bnd.tolist())) if len(bnd) else 0
    tri_pairs = [(uses[0][0], uses[1][0]) for uses in inc.values() if len(uses) == 2]
    comps = _components(F, tri_pairs)
    return TopologyReport(
        euler_characteristic=V - E + F,
        orientable=_orientable(F, inc),
        boundary_loops=loops,
        area=surface.area,
        components=comps,
        vertices=V,
        edges=E,
        faces=F,
    )


def euler_target(class_param) -> int:
    return class_param.euler_characteristic


def _finish(vertices, triangles, ident, tag, parent_vertices=None) -> DiscreteSurface:
    """Build a surface and fill boundary/orientability from the complex."""
    tmp = DiscreteSurface(vertices, triangles, ident, tag)
    inc = _edge_incidence(tmp.dof_triangles)
    _check_manifold(inc)
    return DiscreteSurface(
        vertices, triangles, ident, tag,
        boundary_edges=_boundary_edges(inc),
        orientable=_orientable(len(triangles), inc),
        parent_vertices=parent_vertices,
    )


# ---------------------------------------------------------------------------
# Flat classes


def _grid_triangles(n1: int, n2: int) -> np.ndarray:
    idx = lambda i, j: i * (n2 + 1) + j  # noqa: E731
    tris = []
    for i in range(n1):
        for j in range(n2):
            p00, p10, p01, p11 = idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1)
            tris.append((p00, p10, p01))
            tris.append((p10, p11, p01))
    return np.array(tris, dtype=np.int64)


def _grid_counts(res: int, ratio: float) -> tuple[int, int]:
    s = math.sqrt(ratio)
    return max(3, int(round(res / s))), max(3, int(round(res * s)))


def _torus_mesh(cls: TorusClass, res: int) -> DiscreteSurface:
    e1 = np.array([1.0, 0.0]) / math.sqrt(cls.b)
    e2 = np.array([cls.a, cls.b]) / math.sqrt(cls.b)
    n1, n2 = _grid_counts(res, float(np.linalg.norm(e2) / np.linalg.norm(e1)))
    ii, jj = np.meshgrid(np.arange(n1 + 1), np.arange(n2 + 1), indexing="ij")
    verts = (ii.ravel()[:, None] / n1) * e1 + (jj.ravel()[:, None] / n2) * e2
    gi, gj = ii % n1, jj % n2
    ident = (gi * (n2 + 1) + gj).ravel()
    return _finish(verts, _grid_triangles(n1, n2), ident, cls)


def _klein_mesh(cls: KleinClass, res: int) -> DiscreteSurface:
    w, h = cls.b ** -0.5, cls.b ** 0.5
    nx, ny = _grid_counts(res, h / w)
    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")
    verts = np.column_stack([ii.ravel() * (w / nx), jj.ravel() * (h / ny)])
    # (x + w, -y) ~ (x, y) glues column nx to column 0 with j -> -j
    gj = np.where(ii == nx, (ny - jj) % ny, jj % ny)
    gi = ii % nx
    ident = (gi * (ny + 1) + gj).ravel()
    return _finish(verts, _grid_triangles(nx, ny), ident, cls)


# ---------------------------------------------------------------------------
# Round classes


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    phi = (1 + math.sqrt(5)) / 2
    v = np.array(
        [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
         [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
         [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]],
        dtype=float,
    )
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]],
        dtype=np.int64,
    )
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    # rotate so that vertex 0 sits at the north pole
    z = v[0]
    x = np.cross([0.0, 0.0, 1.0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return v @ np.column_stack([x, y, z]), f


def subdivide(surface: DiscreteSurface, project: Optional[bool] = None) -> DiscreteSurface:
    """Split every triangle into four at edge midpoints.

    Midpoints of glued edges are glued.  On round surfaces new vertices are
    projected to the unit sphere (``project`` overrides the default).
    """
    if project is None:
        project = surface.is_round
    verts = [v for v in surface.vertices]
    ident = list(surface.identification.tolist())
    dof = surface.dof_index
    mid_of_edge: dict = {}
    canon_of_pair: dict = {}
    new_tris = []

    def midpoint(u: int, v: int) -> int:
        key = (u, v) if u < v else (v, u)
        if key in mid_of_edge:
            return mid_of_edge[key]
        p = 0.5 * (surface.vertices[u] + surface.vertices[v])
        if project:
            p = p / np.linalg.norm(p)
        m = len(verts)
        verts.append(p)
        du, dv = int(dof[u]), int(dof[v])
        dkey = (du, dv) if du < dv else (dv, du)
        ident.append(canon_of_pair.setdefault(dkey, m))
        mid_of_edge[key] = m
        return m

    for a, b, c in surface.triangles.tolist():
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_tris += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return _finish(np.array(verts), np.array(new_tris, dtype=np.int64), np.array(ident), surface.class_tag)


def _sphere_mesh(level: int) -> DiscreteSurface:
    v, f = _icosahedron()
    surf = _finish(v, f, np.arange(len(v)), SphereClass())
    for _ in range(level):
        surf = subdivide(surf, project=True)
    return surf


def _rp2_mesh(level: int) -> DiscreteSurface:
    sphere = _sphere_mesh(level)
    v = sphere.vertices
    bary = sphere.barycenters
    # keep the triangle of each antipodal pair whose barycenter is
    # lexicographically positive in (z, y, x)
    key = bary[:, [2, 1, 0]]
    tol = 1e-12
    keep = np.zeros(len(bary), dtype=bool)
    for t, (z, y, x) in enumerate(key):
        for c in (z, y, x):
            if abs(c) > tol:
                keep[t] = c > 0
                break
    tris = sphere.triangles[keep]
    used = np.unique(tris)
    # pair each used vertex with its antipode
    lookup = {tuple(np.round(v[i], 9)): i for i in used.tolist()}
    ident = np.arange(len(v))
    for i in used.tolist():
        j = lookup.get(tuple(np.round(-v[i], 9)))
        if j is not None:
            ident[i] = min(i, j)
    surf = _finish(v, tris, ident, RP2Class())
    return surf


def generate_surface_mesh(class_param, resolution: int) -> DiscreteSurface:
    """Mesh of the canonical metric of ``class_param``.

    Parameters
    ----------
    class_param : TorusClass, KleinClass, SphereClass or RP2Class
    resolution : int
        Flat classes: approximate number of grid cells per side (at least 4),
        giving about ``resolution**2`` vertices.  Round classes: number of
        icosahedral subdivision levels (at least 1); level ``L`` has
        ``10 * 4**L + 2`` sphere vertices.

    Returns
    -------
    DiscreteSurface
        Closed mesh whose Euler characteristic matches the class.
    """
    if isinstance(class_param, dict):
        class_param = class_from_json(class_param)
    if isinstance(class_param, TorusClass):
        if resolution < MIN_RESOLUTION:
            raise ResolutionTooSmall(f"flat meshes need resolution >= {MIN_RESOLUTION}, got {resolution}")
        surf = _torus_mesh(class_param, int(resolution))
    elif isinstance(class_param, KleinClass):
        if resolution < MIN_RESOLUTION:
            raise ResolutionTooSmall(f"flat meshes need resolution >= {MIN_RESOLUTION}, got {resolution}")
        surf = _klein_mesh(class_param, int(resolution))
    elif isinstance(class_param, (SphereClass, RP2Class)):
        if resolution < 1:
            raise ResolutionTooSmall(f"round meshes need subdivision level >= 1, got {resolution}")
        if resolution > 7:
            raise ValueError("subdivision level above 7 is not supported")
        surf = _sphere_mesh(int(resolution)) if isinstance(class_param, SphereClass) else _rp2_mesh(int(resolution))
    else:
        raise InvalidClassParam(f"cannot mesh {class_param!r}")
    report = validate_topology(surf)
    if report.euler_characteristic != class_param.euler_characteristic or report.boundary_loops:
        raise AssertionError(f"generated mesh has chi={report.euler_characteristic}, expected {class_param.euler_characteristic}")
    return surf


def extract_subdomain(surface: DiscreteSurface, selected_triangles) -> DiscreteSurface:
    """Restrict a mesh to a subset of its triangles.

    The result carries a :class:`Subdomain` tag and its boundary edges.  A
    :class:`DisconnectedSelectionWarning` is issued when the selection has
    several components (disjoint unions are allowed).
    """
    sel = np.zeros(len(surface.triangles), dtype=bool)
    idx = np.fromiter((int(t) for t in selected_triangles), dtype=np.int64)
    if idx.size:
        sel[idx] = True
    if not sel.any():
        raise EmptySelection("selection is empty")
    if sel.all():
        raise EmptySelection("complement of the selection is empty")
    tris = surface.triangles[sel]
    used = np.unique(tris)
    remap = -np.ones(len(surface.vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    # canonical representative = smallest used vertex in each glue class
    old_canon = surface.identification[used]
    first: dict = {}
    for new_i, c in enumerate(old_canon.tolist()):
        first.setdefault(c, new_i)
    ident = np.array([first[c] for c in old_canon.tolist()], dtype=np.int64)
    sub = _finish(surface.vertices[used], remap[tris], ident, Subdomain(surface.class_tag), parent_vertices=used)
    comps = validate_topology(sub).components
    if comps > 1:
        warnings.warn(f"selection has {comps} connected components", DisconnectedSelectionWarning, stacklevel=2)
    return sub


def mesh_for(kind: str, a: Optional[float], b: Optional[float], resolution: int) -> DiscreteSurface:
    """Convenience wrapper: raw parameters -> validated class -> mesh."""
    return generate_surface_mesh(make_class(kind, a, b), resolution)
