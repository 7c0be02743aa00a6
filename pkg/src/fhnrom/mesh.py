"""Uniformly refined triangulations of a square with SIPG face connectivity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Mesh", "build_square_mesh", "face_connectivity_check"]


@dataclass(frozen=True)
class Mesh:
    """Conforming triangle mesh.

    Local edge ``e`` of an element joins its local vertices ``e`` and
    ``(e + 1) % 3``. Interior face normals point from the ``left`` element
    into the ``right`` one; boundary normals point out of the domain.
    All arrays are read-only.
    """

    vertices: np.ndarray  # (nv, 2)
    elements: np.ndarray  # (ne, 3), counterclockwise
    jacobians: np.ndarray  # (ne, 2, 2), columns x1 - x0 and x2 - x0
    dets: np.ndarray  # (ne,)
    interior_left: np.ndarray
    interior_right: np.ndarray
    interior_left_edge: np.ndarray
    interior_right_edge: np.ndarray
    interior_normals: np.ndarray  # (ni, 2)
    interior_lengths: np.ndarray
    boundary_elements: np.ndarray
    boundary_edges: np.ndarray
    boundary_normals: np.ndarray
    boundary_lengths: np.ndarray

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_interior_faces(self) -> int:
        return len(self.interior_left)

    @property
    def n_boundary_faces(self) -> int:
        return len(self.boundary_elements)

    @property
    def areas(self) -> np.ndarray:
        return 0.5 * self.dets

    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    def map_to_physical(self, ref_points: np.ndarray) -> np.ndarray:
        """Map reference points ``(npts, 2)`` into every element, ``(ne, npts, 2)``."""
        x0 = self.vertices[self.elements[:, 0]]
        return x0[:, None, :] + np.einsum("eij,pj->epi", self.jacobians, ref_points)


def _refine(elements: np.ndarray, lattice: dict, coords: list) -> np.ndarray:
    """Split every triangle into four through its edge midpoints.

    ``lattice`` maps integer coordinates to vertex ids; midpoints of even
    integer coordinates are exact, so no floating-point matching is needed.
    """

    def midpoint(a, b):
        xa, ya = coords[a]
        xb, yb = coords[b]
        key = ((xa + xb) // 2, (ya + yb) // 2)
        idx = lattice.get(key)
        if idx is None:
            idx = len(coords)
            lattice[key] = idx
            coords.append(key)
        return idx

    children = []
    for a, b, c in elements:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        children += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return np.array(children, dtype=np.int64)


def _faces(vertices: np.ndarray, elements: np.ndarray):
    ne = len(elements)
    start = elements
    end = np.roll(elements, -1, axis=1)
    lo = np.minimum(start, end).ravel()
    hi = np.maximum(start, end).ravel()
    keys = lo * len(vertices) + hi
    order = np.argsort(keys, kind="stable")
    skeys = keys[order]

    same_as_next = np.zeros(len(skeys), dtype=bool)
    same_as_next[:-1] = skeys[:-1] == skeys[1:]
    first = np.flatnonzero(same_as_next)
    paired = np.zeros(len(skeys), dtype=bool)
    paired[first] = True
    paired[first + 1] = True
    if np.any(same_as_next[first + 1]):
        raise ValueError("edge shared by more than two elements")

    left_slot, right_slot = order[first], order[first + 1]
    bnd_slot = order[~paired]

    def geometry(slots):
        elem, edge = np.divmod(slots, 3)
        p0 = vertices[elements[elem, edge]]
        p1 = vertices[elements[elem, (edge + 1) % 3]]
        t = p1 - p0
        length = np.hypot(t[:, 0], t[:, 1])
        normal = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
        return elem, edge, normal, length

    le, ledge, normal, length = geometry(left_slot)
    re, redge = np.divmod(right_slot, 3)
    be, bedge, bnormal, blength = geometry(bnd_slot)
    assert ne * 3 == 2 * len(le) + len(be)
    return (le, re, ledge, redge, normal, length), (be, bedge, bnormal, blength)


def build_square_mesh(half_width: float, refinements: int) -> Mesh:
    """Triangulate ``[-half_width, half_width]^2``.

    The square is first cut along the diagonal through ``(-w, -w)`` and
    ``(w, w)``, then refined ``refinements`` times, giving ``2 * 4**r``
    congruent elements.
    """
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    if refinements < 0:
        raise ValueError("refinements must be non-negative")

    n = 2**refinements
    coords = [(0, 0), (n, 0), (n, n), (0, n)]
    lattice = {c: i for i, c in enumerate(coords)}
    elements = np.array([(0, 1, 2), (0, 2, 3)], dtype=np.int64)
    for _ in range(refinements):
        elements = _refine(elements, lattice, coords)

    vertices = -half_width + (2.0 * half_width / n) * np.asarray(coords, dtype=float)
    x = vertices[elements]
    jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)
    dets = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    interior, boundary = _faces(vertices, elements)

    arrays = [vertices, elements, jac, dets, *interior, *boundary]
    for a in arrays:
        a.flags.writeable = False
    return Mesh(*arrays)


def face_connectivity_check(mesh: Mesh) -> dict:
    """Count faces and collect any sharing/orientation defects.

    Returns ``{"interior": I, "boundary": B, "defects": [...]}``; an empty
    defect list means the mesh passed every check.
    """
    defects = []
    ne = mesh.n_elements
    ni, nb = mesh.n_interior_faces, mesh.n_boundary_faces

    if np.any(mesh.dets <= 0):
        defects.append(f"{int(np.sum(mesh.dets <= 0))} elements not counterclockwise")

    uses = np.zeros((ne, 3), dtype=int)
    np.add.at(uses, (mesh.interior_left, mesh.interior_left_edge), 1)
    np.add.at(uses, (mesh.interior_right, mesh.interior_right_edge), 1)
    np.add.at(uses, (mesh.boundary_elements, mesh.boundary_edges), 1)
    if np.any(uses != 1):
        defects.append(f"{int(np.sum(uses != 1))} element edges not covered exactly once")
    if np.any(mesh.interior_left == mesh.interior_right):
        defects.append("interior face with identical neighbours")
    if 3 * ne != 2 * ni + nb:
        defects.append(f"3*N_el = {3 * ne} but 2I + B = {2 * ni + nb}")

    for name, normals in [("interior", mesh.interior_normals), ("boundary", mesh.boundary_normals)]:
        err = np.abs(np.hypot(normals[:, 0], normals[:, 1]) - 1.0)
        if normals.size and err.max() > 1e-14:
            defects.append(f"{name} normals not unit length (max error {err.max():.1e})")

    c = mesh.centroids()
    d = c[mesh.interior_right] - c[mesh.interior_left]
    if np.any(np.einsum("fi,fi->f", d, mesh.interior_normals) <= 0):
        defects.append("interior normal not pointing from left to right element")
    # centred domain: outward normals point away from the origin
    centre = 0.5 * (mesh.vertices.min(axis=0) + mesh.vertices.max(axis=0))
    rel = c[mesh.boundary_elements] - centre
    if np.any(np.einsum("fi,fi->f", rel, mesh.boundary_normals) <= 0):
        defects.append("boundary normal pointing inward")

    return {"interior": ni, "boundary": nb, "defects": defects}
