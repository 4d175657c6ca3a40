"""Quadrature rules on the reference triangle and the unit interval.

Triangle rules are returned in barycentric form: ``points`` has shape
``(n, 3)`` and ``weights`` sums to one, so that for a triangle ``K``

    integral_K f dx  ~=  |K| * sum_q weights[q] * f(x_q).

Edge rules live on ``[0, 1]`` with weights summing to one.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def _orbit(a, b, c):
    return [(a, b, c), (b, c, a), (c, a, b), (b, a, c), (a, c, b), (c, b, a)]


def _dunavant8():
    # 16-point symmetric rule, exact for total degree 8.
    pts, wts = [(1 / 3, 1 / 3, 1 / 3)], [0.144315607677787]
    for a, w in [
        (0.459292588292723, 0.095091634267285),
        (0.170569307751760, 0.103217370534718),
        (0.050547228317031, 0.032458497623198),
    ]:
        b = 1.0 - 2.0 * a
        pts += [(a, a, b), (a, b, a), (b, a, a)]
        wts += [w] * 3
    a, b = 0.263112829634638, 0.008394777409958
    c = 1.0 - a - b
    pts += _orbit(a, b, c)
    wts += [0.027230314174435] * 6
    p = np.array(pts)
    w = np.array(wts)
    return p, w / w.sum()


def _collapsed_gauss(degree):
    """Conical product rule from Gauss-Legendre; exact to ``degree``."""
    n = (degree + 2) // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    s = u.ravel()
    t = ((1.0 - u) * v).ravel()
    ww = (wu * wv * (1.0 - u)).ravel() * 2.0
    p = np.column_stack([1.0 - s - t, s, t])
    return p, ww / ww.sum()


@lru_cache(maxsize=None)
def triangle_rule(degree=8):
    """Symmetric/conical rule on the reference triangle exact to ``degree``."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if degree <= 1:
        p, w = np.array([[1 / 3, 1 / 3, 1 / 3]]), np.ones(1)
    elif degree == 2:
        p = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        w = np.full(3, 1 / 3)
    elif degree <= 8:
        p, w = _dunavant8()
        degree = 8
    else:
        p, w = _collapsed_gauss(degree)
    p.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(p, w, degree)


@lru_cache(maxsize=None)
def edge_rule(npoints=3):
    """Gauss-Legendre rule on [0, 1]; exact to degree ``2 * npoints - 1``."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(x, w, 2 * npoints - 1)
