"""Quadrature rules on the reference triangle and the unit interval.

Triangle rules are conical (Duffy) products of Gauss-Legendre and
Gauss-Jacobi rules, so arbitrary polynomial exactness is available with
strictly positive weights.  The reference triangle is
{(x, y) : x >= 0, y >= 0, x + y <= 1} with area 1/2; edge rules live on
[0, 1].
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import InvalidParameterError

MAX_ORDER = 10


@dataclass(frozen=True)
class Quadrature:
    """Point sets and weights for volume and edge integration.

    ``points``/``weights`` integrate over the reference triangle
    (weights sum to 1/2); ``edge_points``/``edge_weights`` integrate
    over [0, 1] (weights sum to 1).  Both are exact for polynomials of
    total degree <= ``order``.
    """

    order: int
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    edge_points: np.ndarray = field(repr=False)
    edge_weights: np.ndarray = field(repr=False)


def _conical_rule(order):
    """Tensor rule on the triangle exact for total degree <= order."""
    n = (order + 2) // 2
    # x-direction: Gauss-Jacobi with weight (1 - x) absorbs the Jacobian
    # of the Duffy map (x, y) = (u, (1 - u) v).
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xg, wg = roots_legendre(n)
    u = 0.5 * (xj + 1.0)
    v = 0.5 * (xg + 1.0)
    wu = 0.25 * wj          # includes the (1 - u) factor
    wv = 0.5 * wg
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = uu.ravel()
    y = ((1.0 - uu) * vv).ravel()
    w = np.outer(wu, wv).ravel()
    return np.column_stack([x, y]), w


def build_quadrature(order):
    """Build a quadrature rule exact for polynomials of degree <= order.

    Parameters
    ----------
    order : int
        Requested polynomial exactness, 1 <= order <= 10.

    Returns
    -------
    Quadrature
    """
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= MAX_ORDER:
        raise InvalidParameterError(
            f"quadrature order must be an integer in [1, {MAX_ORDER}], got {order!r}"
        )
    pts, w = _conical_rule(order)
    ne = (order + 2) // 2
    xe, we = roots_legendre(ne)
    return Quadrature(
        order=order,
        points=pts,
        weights=w,
        edge_points=0.5 * (xe + 1.0),
        edge_weights=0.5 * we,
    )


def reference_monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)
