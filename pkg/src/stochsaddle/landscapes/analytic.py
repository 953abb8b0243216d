"""Closed-form two-dimensional and quadratic benchmark surfaces."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import Landscape, LandscapeError


@dataclass(frozen=True)
class MbParams:
    A: tuple = (-200.0, -100.0, -170.0, 15.0)
    a: tuple = (-1.0, -1.0, -6.5, 0.7)
    b: tuple = (0.0, 0.0, 11.0, 0.6)
    c: tuple = (-10.0, -10.0, -6.5, 0.7)
    xbar: tuple = (1.0, 0.0, -0.5, -1.0)
    ybar: tuple = (0.0, 0.5, 1.5, 1.0)

    def __post_init__(self):
        for name in ("A", "a", "b", "c", "xbar", "ybar"):
            value = tuple(float(t) for t in getattr(self, name))
            if len(value) != 4:
                raise LandscapeError(f"MB parameter {name} must have 4 entries")
            object.__setattr__(self, name, value)


def _newton_critical_point(landscape: Landscape, x0, iters: int = 50) -> np.ndarray:
    x = np.asarray(x0, dtype=float)
    for _ in range(iters):
        step = np.linalg.solve(landscape.hessian(x), landscape._gradient(x))
        x = x - step
        if np.linalg.norm(step) < 1e-15:
            break
    return x


class MullerBrown(Landscape):
    """Sum of four anisotropic Gaussians.

    The index-1 saddle between the two deepest minima is located once by
    Newton's method from (-0.8, 0.6) and stored as ``known_saddle``.
    """

    name = "mb"

    def __init__(self, params: MbParams | None = None, lipschitz=None):
        self.params = params or MbParams()
        p = self.params
        self._terms = list(zip(p.A, p.a, p.b, p.c, p.xbar, p.ybar))
        self._arr = np.array((p.A, p.a, p.b, p.c, p.xbar, p.ybar))
        super().__init__(2, lipschitz=lipschitz)
        self.known_saddle = _newton_critical_point(self, (-0.8, 0.6))

    def _energy(self, x):
        px, py = float(x[0]), float(x[1])
        total = 0.0
        for A, a, b, c, xb, yb in self._terms:
            dx = px - xb
            dy = py - yb
            total += A * math.exp(a * dx * dx + b * dx * dy + c * dy * dy)
        return total

    def _gradient(self, x):
        px, py = float(x[0]), float(x[1])
        gx = gy = 0.0
        for A, a, b, c, xb, yb in self._terms:
            dx = px - xb
            dy = py - yb
            e = A * math.exp(a * dx * dx + b * dx * dy + c * dy * dy)
            gx += (2.0 * a * dx + b * dy) * e
            gy += (b * dx + 2.0 * c * dy) * e
        return np.array((gx, gy))

    def _hessian_entries(self, x):
        px, py = float(x[0]), float(x[1])
        hxx = hxy = hyy = 0.0
        for A, a, b, c, xb, yb in self._terms:
            dx = px - xb
            dy = py - yb
            e = A * math.exp(a * dx * dx + b * dx * dy + c * dy * dy)
            ux = 2.0 * a * dx + b * dy
            uy = b * dx + 2.0 * c * dy
            hxx += (ux * ux + 2.0 * a) * e
            hxy += (ux * uy + b) * e
            hyy += (uy * uy + 2.0 * c) * e
        return hxx, hxy, hyy

    def _hvp(self, x, v):
        hxx, hxy, hyy = self._hessian_entries(x)
        v0, v1 = float(v[0]), float(v[1])
        return np.array((hxx * v0 + hxy * v1, hxy * v0 + hyy * v1))

    def hessian(self, x):
        hxx, hxy, hyy = self._hessian_entries(np.asarray(x, dtype=float))
        return np.array(((hxx, hxy), (hxy, hyy)))

    def _terms_batch(self, X):
        p = self._arr
        dx = X[:, :1] - p[4]
        dy = X[:, 1:] - p[5]
        e = p[0] * np.exp(p[1] * dx * dx + p[2] * dx * dy + p[3] * dy * dy)
        ux = 2.0 * p[1] * dx + p[2] * dy
        uy = p[2] * dx + 2.0 * p[3] * dy
        return e, ux, uy

    def _gradient_batch(self, X):
        e, ux, uy = self._terms_batch(X)
        return np.stack(((ux * e).sum(axis=1), (uy * e).sum(axis=1)), axis=1)

    def _hvp_batch(self, X, V):
        p = self._arr
        e, ux, uy = self._terms_batch(X)
        hxx = ((ux * ux + 2.0 * p[1]) * e).sum(axis=1)
        hxy = ((ux * uy + p[2]) * e).sum(axis=1)
        hyy = ((uy * uy + 2.0 * p[3]) * e).sum(axis=1)
        return np.stack((hxx * V[:, 0] + hxy * V[:, 1], hxy * V[:, 0] + hyy * V[:, 1]), axis=1)


class Butterfly(Landscape):
    """``E(x, y) = x^4 - 2x^2 + y^4 + y^2 - 1.5x^2y^2 + x^2y - y^3``.

    The origin is the only index-1 saddle; ``known_saddle`` is set to it.
    """

    name = "butterfly"

    def __init__(self, lipschitz=None):
        super().__init__(2, known_saddle=(0.0, 0.0), lipschitz=lipschitz)

    def _energy(self, p):
        x, y = float(p[0]), float(p[1])
        x2 = x * x
        y2 = y * y
        return x2 * x2 - 2.0 * x2 + y2 * y2 + y2 - 1.5 * x2 * y2 + x2 * y - y2 * y

    def _gradient(self, p):
        x, y = float(p[0]), float(p[1])
        return np.array((
            4.0 * x ** 3 - 4.0 * x - 3.0 * x * y * y + 2.0 * x * y,
            4.0 * y ** 3 + 2.0 * y - 3.0 * x * x * y + x * x - 3.0 * y * y,
        ))

    def _hessian_entries(self, p):
        x, y = float(p[0]), float(p[1])
        hxx = 12.0 * x * x - 4.0 - 3.0 * y * y + 2.0 * y
        hxy = -6.0 * x * y + 2.0 * x
        hyy = 12.0 * y * y + 2.0 - 3.0 * x * x - 6.0 * y
        return hxx, hxy, hyy

    def _hvp(self, p, v):
        hxx, hxy, hyy = self._hessian_entries(p)
        v0, v1 = float(v[0]), float(v[1])
        return np.array((hxx * v0 + hxy * v1, hxy * v0 + hyy * v1))

    def hessian(self, p):
        hxx, hxy, hyy = self._hessian_entries(np.asarray(p, dtype=float))
        return np.array(((hxx, hxy), (hxy, hyy)))

    def _gradient_batch(self, X):
        x, y = X[:, 0], X[:, 1]
        return np.stack((
            4.0 * x ** 3 - 4.0 * x - 3.0 * x * y * y + 2.0 * x * y,
            4.0 * y ** 3 + 2.0 * y - 3.0 * x * x * y + x * x - 3.0 * y * y,
        ), axis=1)

    def _hvp_batch(self, X, V):
        x, y = X[:, 0], X[:, 1]
        hxx = 12.0 * x * x - 4.0 - 3.0 * y * y + 2.0 * y
        hxy = -6.0 * x * y + 2.0 * x
        hyy = 12.0 * y * y + 2.0 - 3.0 * x * x - 6.0 * y
        return np.stack((hxx * V[:, 0] + hxy * V[:, 1], hxy * V[:, 0] + hyy * V[:, 1]), axis=1)


class Quadratic(Landscape):
    """``f(x) = 0.5 * x^T diag(D) x`` with the origin as its critical point."""

    name = "quadratic"

    def __init__(self, diag, lipschitz=None):
        diag = np.asarray(diag, dtype=float)
        if diag.ndim != 1 or diag.size < 1 or not np.all(np.isfinite(diag)):
            raise LandscapeError("quadratic diagonal must be a finite 1-D vector")
        if np.any(diag == 0.0):
            raise LandscapeError("quadratic diagonal must be nonsingular")
        self.diag = diag
        if lipschitz is None:
            lipschitz = float(np.max(np.abs(diag)))
        super().__init__(diag.size, known_saddle=np.zeros(diag.size), lipschitz=lipschitz)

    @property
    def index(self) -> int:
        return int(np.sum(self.diag < 0))

    def _energy(self, x):
        return 0.5 * float(np.dot(self.diag * x, x))

    def _gradient(self, x):
        return self.diag * x

    def _hvp(self, x, v):
        return self.diag * v

    def _gradient_batch(self, X):
        return X * self.diag

    def _hvp_batch(self, X, V):
        return V * self.diag

    def hessian(self, x):
        return np.diag(self.diag)


@dataclass
class ConstrainedLagrangianSpec:
    """Data of ``L(x, nu) = 0.5 x^T P x + nu^T (A x - b) - (eta / 2) ||nu||^2``."""

    P: np.ndarray
    A: np.ndarray
    b: np.ndarray
    eta: float = 0.0

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        d = self.P.shape[0]
        if self.P.shape != (d, d) or not np.allclose(self.P, self.P.T):
            raise LandscapeError("P must be a symmetric square matrix")
        if np.linalg.eigvalsh(self.P)[0] <= 0:
            raise LandscapeError("P must be positive definite")
        if self.A.shape[1] != d or self.b.shape != (self.A.shape[0],):
            raise LandscapeError("constraint dimensions do not match P")
        if self.eta < 0:
            raise LandscapeError("eta must be non-negative")


class Lagrangian(Landscape):
    """Regularized Lagrangian over the stacked vector ``z = (x, nu)``.

    The multipliers ``nu`` span the unstable (maximized) block. The saddle
    solves the linear KKT system and is stored as ``known_saddle``.
    """

    name = "lagrangian"

    def __init__(self, spec: ConstrainedLagrangianSpec, lipschitz=None):
        self.spec = spec
        self.nx = spec.P.shape[0]
        self.nnu = spec.A.shape[0]
        n = self.nx + self.nnu
        K = np.zeros((n, n))
        K[: self.nx, : self.nx] = spec.P
        K[: self.nx, self.nx:] = spec.A.T
        K[self.nx:, : self.nx] = spec.A
        K[self.nx:, self.nx:] = -spec.eta * np.eye(self.nnu)
        self._K = K
        rhs = np.concatenate([np.zeros(self.nx), spec.b])
        self._rhs = rhs
        saddle = np.linalg.solve(K, rhs)
        if lipschitz is None:
            lipschitz = float(np.max(np.abs(np.linalg.eigvalsh(K))))
        super().__init__(n, known_saddle=saddle, lipschitz=lipschitz)

    def unstable_basis(self) -> np.ndarray:
        """Coordinate basis of the multiplier block, shape ``(n_nu, d)``."""
        return np.eye(self.dim)[self.nx:]

    def _energy(self, z):
        return 0.5 * float(z @ self._K @ z) - float(self._rhs @ z)

    def _gradient(self, z):
        return self._K @ z - self._rhs

    def _hvp(self, z, v):
        return self._K @ v

    def hessian(self, z):
        return self._K.copy()
