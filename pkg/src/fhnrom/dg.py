"""Modal discontinuous Galerkin space and SIPG operator assembly.

Degrees of freedom are numbered element by element: the coefficients of
element ``e`` occupy ``e * n_loc : (e + 1) * n_loc``. Every basis function
lives on a single element, so the mass matrix and the Jacobian of the
nonlinear term are block diagonal and the stiffness matrices only couple
face neighbours.
"""

from __future__ import annotations

from itertools import product
from math import factorial

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .mesh import Mesh
from .quadrature import gauss_segment, triangle_rule

__all__ = [
    "DGSpace",
    "bistable",
    "bistable_derivative",
    "assemble_mass",
    "assemble_stiffness_sipg",
    "assemble_nonlinear",
    "assemble_nonlinear_jacobian",
    "project_function",
    "evaluate",
    "cell_averages",
    "dump_coo",
]

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def bistable(u, mu):
    """f(u; mu) = (u - mu)(u^2 - 1)."""
    return (u - mu) * (u * u - 1.0)


def bistable_derivative(u, mu):
    return 3.0 * u * u - 2.0 * mu * u - 1.0


class ModalBasis:
    """L2-orthonormal polynomial basis of degree ``q`` on the reference triangle.

    Built by orthonormalising the monomials ``x**a * y**b`` (``a + b <= q``)
    against their exact reference Gram matrix, so the reference mass matrix
    is the identity and the first function is the constant ``sqrt(2)``.
    """

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("degree must be non-negative")
        self.degree = degree
        self.exponents = [(a, t - a) for t in range(degree + 1) for a in range(t, -1, -1)]
        e = np.array(self.exponents)
        a, b = e[:, 0][:, None] + e[:, 0], e[:, 1][:, None] + e[:, 1]
        # int x^a y^b over the reference triangle = a! b! / (a + b + 2)!
        gram = np.vectorize(lambda i, j: factorial(i) * factorial(j) / factorial(i + j + 2))(a, b)
        coef = np.eye(len(gram))
        # second pass removes the roundoff of the ill-conditioned monomial Gram matrix
        for _ in range(2):
            lower = la.cholesky(coef @ gram @ coef.T, lower=True)
            coef = la.solve_triangular(lower, coef, lower=True)
        self.coefficients = coef

    @property
    def size(self) -> int:
        return len(self.exponents)

    def _monomials(self, pts):
        x, y = pts[:, 0:1], pts[:, 1:2]
        a = np.array([e[0] for e in self.exponents])
        b = np.array([e[1] for e in self.exponents])
        return x**a * y**b

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        """Values at reference points, shape ``(npts, n_loc)``."""
        return self._monomials(np.atleast_2d(pts)) @ self.coefficients.T

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        """Reference gradients, shape ``(npts, n_loc, 2)``."""
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0:1], pts[:, 1:2]
        a = np.array([e[0] for e in self.exponents], dtype=float)
        b = np.array([e[1] for e in self.exponents], dtype=float)
        dx = a * x ** np.maximum(a - 1, 0) * y**b
        dy = b * x**a * y ** np.maximum(b - 1, 0)
        c = self.coefficients.T
        return np.stack([dx @ c, dy @ c], axis=2)

    def nodes(self) -> np.ndarray:
        """Equispaced lattice points used for nodal (Vandermonde) data."""
        if self.degree == 0:
            return np.array([[1 / 3, 1 / 3]])
        q = self.degree
        pts = [(i / q, j / q) for j, i in product(range(q + 1), repeat=2) if i + j <= q]
        # vertices first, in reference order
        pts.sort(key=lambda p: (p not in [(0, 0), (1, 0), (0, 1)], p[1], p[0]))
        return np.array(pts, dtype=float)


class DGSpace:
    """Piecewise polynomials of degree ``q`` on ``mesh``, discontinuous across faces."""

    def __init__(self, mesh: Mesh, degree: int = 1):
        self.mesh = mesh
        self.degree = degree
        self.basis = ModalBasis(degree)
        self.n_loc = self.basis.size
        self.n_elements = mesh.n_elements
        self.N = self.n_loc * self.n_elements

        # exact for f(u_h) * phi with cubic f
        self.quad_points, self.quad_weights = triangle_rule(4 * degree)
        self.phi = self.basis(self.quad_points)
        self.dphi = self.basis.gradient(self.quad_points)

        self.face_s, self.face_weights = gauss_segment(degree + 2)
        self.phi_face = []
        self.dphi_face = []
        for e in range(3):
            p0, p1 = REF_VERTICES[e], REF_VERTICES[(e + 1) % 3]
            pts = p0 + self.face_s[:, None] * (p1 - p0)
            self.phi_face.append(self.basis(pts))
            self.dphi_face.append(self.basis.gradient(pts))
        self.phi_face = np.array(self.phi_face)
        self.dphi_face = np.array(self.dphi_face)

        self.inv_jac_t = np.linalg.inv(mesh.jacobians).transpose(0, 2, 1)

    def dofs(self, element) -> np.ndarray:
        element = np.asarray(element)
        return element[..., None] * self.n_loc + np.arange(self.n_loc)

    def element_of(self, index) -> np.ndarray:
        return np.asarray(index) // self.n_loc

    def local_of(self, index) -> np.ndarray:
        return np.asarray(index) % self.n_loc

    def constant(self, value: float) -> np.ndarray:
        """Coefficient vector of the constant function ``value``."""
        c = np.zeros((self.n_elements, self.n_loc))
        c[:, 0] = value / self.phi[0, 0]
        return c.ravel()

    def physical_gradients(self, dphi_ref: np.ndarray, elements=None) -> np.ndarray:
        """Map reference gradients ``(npts, n_loc, 2)`` to ``(ne, npts, n_loc, 2)``."""
        g = self.inv_jac_t if elements is None else self.inv_jac_t[elements]
        return np.einsum("eab,qib->eqia", g, dphi_ref)


def _bsr(space: DGSpace, rows, cols, blocks) -> sp.bsr_matrix:
    """Sum dense ``(n_loc, n_loc)`` blocks at element positions into a BSR matrix."""
    nl = space.n_loc
    r = np.broadcast_to(np.asarray(rows)[:, None, None] * nl + np.arange(nl)[:, None], blocks.shape)
    c = np.broadcast_to(np.asarray(cols)[:, None, None] * nl + np.arange(nl), blocks.shape)
    coo = sp.coo_matrix((blocks.ravel(), (r.ravel(), c.ravel())), shape=(space.N, space.N))
    return coo.tocsr().tobsr(blocksize=(nl, nl))


def _block_diagonal(space: DGSpace, blocks: np.ndarray) -> sp.bsr_matrix:
    ne = space.n_elements
    return sp.bsr_matrix(
        (blocks, np.arange(ne), np.arange(ne + 1)), shape=(space.N, space.N)
    )


def assemble_mass(space: DGSpace) -> sp.bsr_matrix:
    ref = (space.phi * space.quad_weights[:, None]).T @ space.phi
    ref = 0.5 * (ref + ref.T)
    return _block_diagonal(space, space.mesh.dets[:, None, None] * ref[None])


def assemble_stiffness_sipg(space: DGSpace, diffusion: float, penalty: float = 10.0) -> sp.bsr_matrix:
    """SIPG matrix of ``-diffusion * Laplacian`` with zero-flux boundaries.

    The face penalty is ``penalty * diffusion * (q + 1)**2 / h_f``. Boundary
    faces carry no terms, so constants lie in the kernel.
    """
    if diffusion <= 0:
        raise ValueError(f"diffusion must be positive, got {diffusion}")
    mesh = space.mesh
    q = space.degree

    grad = space.physical_gradients(space.dphi)
    vol = diffusion * np.einsum(
        "e,q,eqia,eqja->eij", mesh.dets, space.quad_weights, grad, grad
    )
    rows = [np.arange(mesh.n_elements)]
    cols = [np.arange(mesh.n_elements)]
    blocks = [vol]

    L, R = mesh.interior_left, mesh.interior_right
    if len(L):
        n = mesh.interior_normals
        h = mesh.interior_lengths
        w = h[:, None] * space.face_weights[None, :]
        phi = {
            "L": space.phi_face[mesh.interior_left_edge],
            # the right element walks the shared edge in the opposite direction
            "R": space.phi_face[mesh.interior_right_edge][:, ::-1],
        }
        dn = {}
        for side, elem, edge, flip in [
            ("L", L, mesh.interior_left_edge, False),
            ("R", R, mesh.interior_right_edge, True),
        ]:
            dref = space.dphi_face[edge]
            if flip:
                dref = dref[:, ::-1]
            g = np.einsum("fab,fqib->fqia", space.inv_jac_t[elem], dref)
            dn[side] = np.einsum("fqia,fa->fqi", g, n)

        sign = {"L": 1.0, "R": -1.0}
        elem = {"L": L, "R": R}
        pen = penalty * diffusion * (q + 1) ** 2 / h
        for A in "LR":
            for B in "LR":
                # entry (i, j) = a(phi_j^B, phi_i^A)
                consistency = -0.5 * diffusion * sign[A] * np.einsum(
                    "fq,fqi,fqj->fij", w, phi[A], dn[B]
                )
                symmetry = -0.5 * diffusion * sign[B] * np.einsum(
                    "fq,fqi,fqj->fij", w, dn[A], phi[B]
                )
                jump = (pen * sign[A] * sign[B])[:, None, None] * np.einsum(
                    "fq,fqi,fqj->fij", w, phi[A], phi[B]
                )
                rows.append(elem[A])
                cols.append(elem[B])
                blocks.append(consistency + symmetry + jump)

    return _bsr(space, np.concatenate(rows), np.concatenate(cols), np.concatenate(blocks))


def _quad_values(space: DGSpace, u: np.ndarray) -> np.ndarray:
    return u.reshape(space.n_elements, space.n_loc) @ space.phi.T


def assemble_nonlinear(space: DGSpace, u: np.ndarray, mu: float) -> np.ndarray:
    """Vector with entries ``int_E f(u_h; mu) phi_i``."""
    fq = bistable(_quad_values(space, u), mu)
    local = (fq * space.quad_weights) @ space.phi
    return (space.mesh.dets[:, None] * local).ravel()


def assemble_nonlinear_jacobian(space: DGSpace, u: np.ndarray, mu: float) -> sp.bsr_matrix:
    """Block-diagonal Jacobian ``int_E f'(u_h; mu) phi_i phi_j``."""
    dfq = bistable_derivative(_quad_values(space, u), mu)
    wd = dfq * space.quad_weights * space.mesh.dets[:, None]
    blocks = np.einsum("eq,qi,qj->eij", wd, space.phi, space.phi)
    return _block_diagonal(space, blocks)


def project_function(space: DGSpace, g) -> np.ndarray:
    """Elementwise L2 projection of ``g(x, y)`` (vectorised over arrays)."""
    x = space.mesh.map_to_physical(space.quad_points)
    gq = np.broadcast_to(g(x[..., 0], x[..., 1]), x.shape[:2])
    rhs = (gq * space.quad_weights) @ space.phi
    ref_mass = (space.phi * space.quad_weights[:, None]).T @ space.phi
    # the element mass block is det * ref_mass, and det cancels against rhs
    return la.solve(ref_mass, rhs.T, assume_a="pos").T.ravel()


def evaluate(space: DGSpace, u: np.ndarray, ref_points=None) -> np.ndarray:
    """Values of ``u_h`` at reference points mapped into every element, ``(ne, npts)``."""
    phi = space.phi if ref_points is None else space.basis(ref_points)
    return u.reshape(space.n_elements, space.n_loc) @ phi.T


def cell_averages(space: DGSpace, u: np.ndarray) -> np.ndarray:
    return 2.0 * (_quad_values(space, u) @ space.quad_weights)


def dump_coo(matrix, path) -> None:
    """Write a sparse matrix as ``row col value`` text lines."""
    coo = sp.coo_matrix(matrix)
    np.savetxt(path, np.column_stack([coo.row, coo.col, coo.data]), fmt=["%d", "%d", "%.17g"])
