"""Objective-function abstraction shared by every benchmark landscape."""

from __future__ import annotations

import numpy as np


class LandscapeError(ValueError):
    """Raised for invalid landscape specifications or inputs."""


def as_point(x, dim: int, what: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (dim,):
        raise LandscapeError(f"{what} must have shape ({dim},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise LandscapeError(f"{what} contains non-finite entries")
    return arr


class Landscape:
    """An energy ``f: R^d -> R`` with exact gradient and Hessian-vector product.

    Subclasses implement ``_energy``, ``_gradient`` and ``_hvp`` on already
    validated float arrays. The public methods validate shape and finiteness;
    the stochastic oracles call the private versions directly because the
    search loops guard against non-finite iterates themselves.

    Attributes
    ----------
    name : str
        Identifier used in traces and configs.
    dim : int
        Number of degrees of freedom ``d``.
    known_saddle : ndarray or None
        Reference critical point used for distance diagnostics.
    lipschitz : float or None
        User estimate of the Hessian bound ``L`` used in stopping tolerances.
    """

    name = "landscape"

    def __init__(self, dim: int, known_saddle=None, lipschitz=None):
        if dim < 1:
            raise LandscapeError("dimension must be positive")
        self.dim = int(dim)
        self.known_saddle = None if known_saddle is None else as_point(known_saddle, self.dim, "known_saddle")
        if lipschitz is not None and not lipschitz > 0:
            raise LandscapeError("lipschitz estimate must be positive")
        self.lipschitz = lipschitz

    # -- public, validated -------------------------------------------------
    def energy(self, x) -> float:
        return float(self._energy(as_point(x, self.dim)))

    def gradient(self, x) -> np.ndarray:
        return self._gradient(as_point(x, self.dim))

    def hvp(self, x, v) -> np.ndarray:
        return self._hvp(as_point(x, self.dim), as_point(v, self.dim, "v"))

    def hessian(self, x) -> np.ndarray:
        """Dense Hessian assembled column by column from ``hvp``."""
        x = as_point(x, self.dim)
        h = self._hvp_multi(x, np.eye(self.dim))
        return 0.5 * (h + h.T)

    # -- implementation hooks ----------------------------------------------
    def _energy(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def _gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _hvp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # Row-wise batched versions used by lockstep multi-run searches. Each row
    # must be computed independently of the others so results do not depend
    # on how runs are grouped.
    def _gradient_batch(self, X: np.ndarray) -> np.ndarray:
        return np.array([self._gradient(x) for x in X]).reshape(X.shape)

    def _hvp_batch(self, X: np.ndarray, V: np.ndarray) -> np.ndarray:
        return np.array([self._hvp(x, v) for x, v in zip(X, V)]).reshape(V.shape)

    def _hvp_multi(self, x: np.ndarray, V: np.ndarray) -> np.ndarray:
        """Products ``H(x) v`` for every row ``v`` of ``V`` at one point."""
        return np.array([self._hvp(x, v) for v in V]).reshape(V.shape)

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim})"


def estimate_lipschitz(landscape: Landscape, x, rng: np.random.Generator, samples: int = 100) -> float:
    """Largest observed ``||H v|| / ||v||`` over random unit directions at ``x``."""
    x = as_point(x, landscape.dim)
    best = 0.0
    for _ in range(samples):
        v = rng.standard_normal(landscape.dim)
        v /= np.linalg.norm(v)
        best = max(best, float(np.linalg.norm(landscape._hvp(x, v))))
    if best <= 0.0:
        # flat landscape; any positive scale keeps the tolerances meaningful
        best = 1.0
    return best


def fd_gradient(landscape: Landscape, x, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient with step scaled by ``1 + |x_i|``."""
    x = as_point(x, landscape.dim)
    out = np.empty_like(x)
    for i in range(x.size):
        h = step * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (landscape._energy(xp) - landscape._energy(xm)) / (2.0 * h)
    return out


def fd_hvp(landscape: Landscape, x, v, step: float = 1e-5) -> np.ndarray:
    """Central finite difference of the gradient along ``v``."""
    x = as_point(x, landscape.dim)
    v = as_point(v, landscape.dim, "v")
    h = step * (1.0 + float(np.max(np.abs(x)))) / max(float(np.linalg.norm(v)), 1e-300)
    return (landscape._gradient(x + h * v) - landscape._gradient(x - h * v)) / (2.0 * h)
