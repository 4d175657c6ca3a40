"""Registered model problems with manufactured solutions."""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import mesh as meshes


@dataclass(frozen=True)
class ExactSolution:
    u: Callable
    grad: Callable
    hess: Callable
    energy_seminorm: Optional[float] = None  # ‖D²u‖_Ω


@dataclass(frozen=True)
class Problem:
    name: str
    mesh: Callable[[], meshes.Mesh]
    f: Callable
    exact: Optional[ExactSolution] = None


# u = (x(1-x) y(1-y))² on the unit square; f = Δ²u was derived symbolically.


def _square_u(x, y):
    return (x * (1 - x) * y * (1 - y)) ** 2


def _square_grad(x, y):
    p, q = x * (1 - x), y * (1 - y)
    return np.stack([2 * p * (1 - 2 * x) * q * q, 2 * q * (1 - 2 * y) * p * p], axis=-1)


def _square_hess(x, y):
    p, q = x * (1 - x), y * (1 - y)
    dp, dq = 1 - 2 * x, 1 - 2 * y
    # (p²)'' = 2(p')² + 2 p p'' with p'' = -2
    pxx = 2 * dp * dp - 4 * p
    qyy = 2 * dq * dq - 4 * q
    uxx = pxx * q * q
    uyy = p * p * qyy
    uxy = 4 * p * dp * q * dq
    return np.stack([np.stack([uxx, uxy], -1), np.stack([uxy, uyy], -1)], -2)


def _square_f(x, y):
    return 8 * (3 * x**4 - 6 * x**3 + 36 * x**2 * y**2 - 36 * x**2 * y + 9 * x**2
                - 36 * x * y**2 + 36 * x * y - 6 * x + 3 * y**4 - 6 * y**3 + 9 * y**2
                - 6 * y + 1)


def _zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


def _one(x, y):
    return np.ones(np.broadcast(x, y).shape)


def _zero_grad(x, y):
    return np.zeros(np.broadcast(x, y).shape + (2,))


def _zero_hess(x, y):
    return np.zeros(np.broadcast(x, y).shape + (2, 2))


_REGISTRY = {
    "square-smooth": Problem(
        "square-smooth", meshes.unit_square, _square_f,
        ExactSolution(_square_u, _square_grad, _square_hess, 2.0 / 35.0)),
    "zero-rhs": Problem(
        "zero-rhs", meshes.unit_square, _zero,
        ExactSolution(_zero, _zero_grad, _zero_hess, 0.0)),
    "lshape-singular": Problem("lshape-singular", meshes.lshape, _one),
}


def registry():
    """Names of all registered problems."""
    return sorted(_REGISTRY)


def get_problem(name):
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {', '.join(registry())}") from None
