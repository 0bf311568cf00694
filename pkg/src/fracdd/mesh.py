"""Structured simplicial meshes of boxes and their boundary (trace) meshes.

Every box is split into ``n**d`` cubes and each cube into ``d!`` Kuhn
simplices sharing the main diagonal, so refinement ``n -> 2n`` produces
nested meshes (used by the geometric multigrid hierarchy).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "Mesh",
    "TraceMesh",
    "StructuredGrid",
    "build_box_mesh",
    "build_unit_square_mesh",
    "build_unit_cube_mesh",
    "build_two_domain_mesh",
    "extract_trace_mesh",
    "mesh_entities",
    "cell_volumes",
    "write_mesh_text",
    "NOSLIP",
    "TRACTION",
    "DARCY_PRESSURE",
    "DARCY_NOFLUX",
    "INTERFACE",
]

# Facet tags of the Darcy-Stokes geometry.
NOSLIP = 11
TRACTION = 12
DARCY_PRESSURE = 13
DARCY_NOFLUX = 14
INTERFACE = 15


@dataclass(frozen=True)
class StructuredGrid:
    """Tensor grid a mesh was built from; enables point location."""

    counts: tuple
    lower: tuple
    upper: tuple

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.counts)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh.

    ``dim`` is the topological dimension; the geometric dimension is the
    number of vertex coordinates.  ``facets`` lists the boundary facets
    (sorted vertex tuples) and ``facet_markers`` their integer tags.
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_markers: np.ndarray
    grid: StructuredGrid | None = field(default=None, repr=False)

    @property
    def gdim(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def facets_with(self, markers: Iterable[int]) -> np.ndarray:
        """Indices of boundary facets whose tag is in ``markers``."""
        return np.flatnonzero(np.isin(self.facet_markers, list(markers)))

    @property
    def h(self) -> float:
        """Largest cell edge length."""
        if self.grid is not None:
            return float(np.linalg.norm(self.grid.spacing))
        edges = mesh_entities(self, 1)
        return float(np.max(np.linalg.norm(np.diff(self.vertices[edges], axis=1)[:, 0], axis=1)))


@dataclass(frozen=True, eq=False)
class TraceMesh:
    """A (d-1)-dimensional mesh of facets of a parent mesh.

    ``parent_vertex[i]`` is the bulk vertex of trace vertex ``i`` and
    ``parent_facet[k]`` the index (into ``parent.facets``) of trace cell ``k``.
    """

    mesh: Mesh
    parent: Mesh
    parent_vertex: np.ndarray
    parent_facet: np.ndarray

    @property
    def num_vertices(self) -> int:
        return self.mesh.num_vertices


def _kuhn_cells(counts: tuple) -> np.ndarray:
    d = len(counts)
    shape = tuple(c + 1 for c in counts)
    corners = np.stack(np.meshgrid(*[np.arange(c) for c in counts], indexing="ij"), axis=-1).reshape(-1, d)
    cells = []
    for perm in itertools.permutations(range(d)):
        path = [np.zeros(d, dtype=np.int64)]
        for axis in perm:
            step = path[-1].copy()
            step[axis] += 1
            path.append(step)
        ids = [np.ravel_multi_index(tuple((corners + p).T), shape) for p in path]
        cells.append(np.stack(ids, axis=1))
    # cube-major ordering: cell id = cube * d! + permutation index
    return np.stack(cells, axis=1).reshape(-1, d + 1)


def _orient(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    cells = cells.copy()
    x = vertices[cells]
    jac = x[:, 1:] - x[:, :1]
    neg = np.linalg.det(jac) < 0
    cells[neg, -2], cells[neg, -1] = cells[neg, -1], cells[neg, -2].copy()
    return cells


def mesh_entities(mesh: Mesh, k: int) -> np.ndarray:
    """Unique sorted ``k``-dimensional sub-simplices (as vertex tuples)."""
    subsets = list(itertools.combinations(range(mesh.cells.shape[1]), k + 1))
    ent = np.sort(mesh.cells[:, subsets].reshape(-1, k + 1), axis=1)
    return np.unique(ent, axis=0)


def _boundary_facets(cells: np.ndarray, dim: int) -> np.ndarray:
    subsets = list(itertools.combinations(range(dim + 1), dim))
    fac = np.sort(cells[:, subsets].reshape(-1, dim), axis=1)
    uniq, counts = np.unique(fac, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise ValueError("non-manifold mesh: a facet is shared by more than two cells")
    return uniq[counts == 1]


def cell_volumes(mesh: Mesh) -> np.ndarray:
    """Signed volumes of the cells (absolute values for embedded meshes)."""
    x = mesh.vertices[mesh.cells]
    jac = x[:, 1:] - x[:, :1]
    if mesh.dim == mesh.gdim:
        return np.linalg.det(jac) / math.factorial(mesh.dim)
    gram = jac @ np.swapaxes(jac, 1, 2)
    return np.sqrt(np.linalg.det(gram)) / math.factorial(mesh.dim)


def build_box_mesh(counts, lower, upper, side_tags=None) -> Mesh:
    """Kuhn-split mesh of the box ``[lower, upper]`` with ``counts`` cells per axis.

    Boundary facets on the plane ``x_a = lower_a`` get tag ``2a + 1`` and
    those on ``x_a = upper_a`` tag ``2a + 2`` unless ``side_tags`` (a list of
    ``(lo_tag, hi_tag)`` per axis) overrides them.
    """
    counts = tuple(int(c) for c in counts)
    d = len(counts)
    if d not in (2, 3):
        raise ValueError(f"box meshes are 2D or 3D, got dimension {d}")
    if min(counts) < 1:
        raise ValueError(f"cells per side must be >= 1, got {counts}")
    axes = [np.linspace(lo, hi, c + 1) for lo, hi, c in zip(lower, upper, counts)]
    vertices = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    cells = _orient(vertices, _kuhn_cells(counts))
    facets = _boundary_facets(cells, d)
    if side_tags is None:
        side_tags = [(2 * a + 1, 2 * a + 2) for a in range(d)]
    markers = np.zeros(len(facets), dtype=np.int64)
    fx = vertices[facets]
    for a in range(d):
        lo_tag, hi_tag = side_tags[a]
        markers[np.all(fx[:, :, a] == axes[a][0], axis=1)] = lo_tag
        markers[np.all(fx[:, :, a] == axes[a][-1], axis=1)] = hi_tag
    assert np.all(markers > 0)
    grid = StructuredGrid(counts, tuple(float(v) for v in lower), tuple(float(v) for v in upper))
    return Mesh(d, vertices, cells, facets, markers, grid)


def build_unit_square_mesh(n: int) -> Mesh:
    """Right-triangle mesh of (0,1)^2: (n+1)^2 vertices, 2n^2 cells.

    Tags: 1 (x=0), 2 (x=1), 3 (y=0), 4 (y=1).
    """
    if n < 1:
        raise ValueError(f"invalid parameter n={n}: need n >= 1")
    return build_box_mesh((n, n), (0.0, 0.0), (1.0, 1.0))


def build_unit_cube_mesh(n: int) -> Mesh:
    """Kuhn mesh of (0,1)^3: (n+1)^3 vertices, 6n^3 tetrahedra."""
    if n < 1:
        raise ValueError(f"invalid parameter n={n}: need n >= 1")
    return build_box_mesh((n, n, n), (0.0,) * 3, (1.0,) * 3)


def extract_trace_mesh(mesh: Mesh, marker) -> TraceMesh:
    """Boundary submesh made of the facets whose tag is in ``marker``.

    Trace vertices are numbered in increasing parent-vertex order, so the
    lexicographic ordering of the parent carries over.
    """
    if isinstance(marker, (int, np.integer)):
        marker = {int(marker)}
    sel = mesh.facets_with(marker)
    if sel.size == 0:
        raise ValueError(f"marker {sorted(marker)} selects no facets")
    fac = mesh.facets[sel]
    parent_vertex, local = np.unique(fac, return_inverse=True)
    cells = local.reshape(fac.shape)
    bfac = _boundary_facets(cells, mesh.dim - 1)
    sub = Mesh(mesh.dim - 1, mesh.vertices[parent_vertex], cells, bfac,
               np.zeros(len(bfac), dtype=np.int64))
    return TraceMesh(sub, mesh, parent_vertex, sel)


def build_two_domain_mesh(n: int):
    """Stokes box (0,1)x(0,1) stacked on the Darcy box (0,1)x(-1,0).

    Returns ``(mesh_stokes, mesh_darcy, interface)`` where ``interface`` is the
    trace mesh of Gamma = (0,1)x{0} seen from the Darcy side.  Facet tags:
    TRACTION on the Stokes side walls, NOSLIP on the Stokes top, DARCY_NOFLUX on
    the Darcy side walls, DARCY_PRESSURE on the Darcy bottom, INTERFACE on Gamma.
    The endpoints of Gamma thus touch traction boundaries, so the normal
    velocity on Gamma is not pinned there.
    """
    if n < 1:
        raise ValueError(f"invalid parameter n={n}: need n >= 1")
    stokes = build_box_mesh((n, n), (0.0, 0.0), (1.0, 1.0),
                            side_tags=[(TRACTION, TRACTION), (INTERFACE, NOSLIP)])
    darcy = build_box_mesh((n, n), (0.0, -1.0), (1.0, 0.0),
                           side_tags=[(DARCY_NOFLUX, DARCY_NOFLUX), (DARCY_PRESSURE, INTERFACE)])
    return stokes, darcy, extract_trace_mesh(darcy, {INTERFACE})


def write_mesh_text(mesh: Mesh, path) -> None:
    """Plain-text vertex/cell listing for debugging."""
    with open(path, "w") as fh:
        fh.write(f"# dim {mesh.dim} gdim {mesh.gdim}\n")
        fh.write(f"vertices {mesh.num_vertices}\n")
        for x in mesh.vertices:
            fh.write(" ".join(repr(float(v)) for v in x) + "\n")
        fh.write(f"cells {mesh.num_cells}\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(v)) for v in c) + "\n")
        fh.write(f"facets {len(mesh.facets)}\n")
        for f, m in zip(mesh.facets, mesh.facet_markers):
            fh.write(" ".join(str(int(v)) for v in f) + f" {int(m)}\n")
