"""Quadrature rules on the reference triangle (0,0), (1,0), (0,1) and on [0, 1]."""

import numpy as np

__all__ = ["triangle_7point", "collapsed_gauss", "gauss_segment", "triangle_rule"]


def triangle_7point():
    """Symmetric 7-point rule, exact for polynomials of degree 5.

    Returns ``(points (7, 2), weights (7,))`` with weights summing to the
    reference area 1/2.
    """
    r = np.sqrt(15.0)
    a1, b1 = (6 - r) / 21, (9 + 2 * r) / 21
    a2, b2 = (6 + r) / 21, (9 - 2 * r) / 21
    w1, w2 = (155 - r) / 1200, (155 + r) / 1200
    points = np.array(
        [[1 / 3, 1 / 3], [a1, a1], [b1, a1], [a1, b1], [a2, a2], [b2, a2], [a2, b2]]
    )
    weights = 0.5 * np.array([9 / 40, w1, w1, w1, w2, w2, w2])
    return points, weights


def collapsed_gauss(n: int):
    """Tensor Gauss-Legendre rule pulled back through the Duffy collapse.

    Exact for polynomials of total degree ``2n - 2``.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1)
    w = 0.5 * w
    xi, eta = np.meshgrid(x, x, indexing="ij")
    wi, we = np.meshgrid(w, w, indexing="ij")
    px = xi * (1 - eta)
    py = eta
    return np.column_stack([px.ravel(), py.ravel()]), (wi * we * (1 - eta)).ravel()


def triangle_rule(degree: int):
    """Cheapest available rule integrating total degree ``degree`` exactly."""
    if degree <= 5:
        return triangle_7point()
    return collapsed_gauss(degree // 2 + 1)


def gauss_segment(n: int = 3):
    """Gauss-Legendre rule on [0, 1]; weights sum to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w
