"""Reduced Landau-de Gennes energy on the square ``[-1, 1]^2``.

The Q-tensor ``[[q1, q2], [q2, -q1]]`` is stored at grid nodes. Only interior
nodes are unknowns; boundary nodes carry fixed tangent Dirichlet data.

Discretization
--------------
Gradient energy ``|grad q1|^2 + |grad q2|^2`` uses edge differences (second
order central at edge midpoints) with trapezoidal weights across the edge
direction. The bulk term ``lambda^2 (-c |q|^2 + |q|^4 / 2)`` with
``c = B^2 / (4 C^2)`` uses nodal trapezoidal quadrature. The quadrature sum
is divided by the cell area ``h^2`` so the Hessian approximates the
continuum operator ``-2 Laplacian + bulk`` instead of shrinking with ``h^2``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .base import Landscape, LandscapeError


@dataclass
class LdgSpec:
    """Grid, material constants and boundary data.

    Parameters
    ----------
    n_grid : int
        Cells per side; the grid has ``(n_grid + 1)^2`` nodes.
    lam2 : float
        Non-dimensional domain size ``lambda^2``.
    B, C : float
        Bulk constants; the preferred order is ``|q| = B / (2C)``.
    corner_width : float
        Length over which the tangent boundary value ramps linearly to zero
        at each corner.
    boundary : ndarray or None
        Optional ``(2, n_grid + 1, n_grid + 1)`` array whose boundary nodes
        replace the default tangent data. Interior entries are ignored.
    """

    n_grid: int = 32
    lam2: float = 15.0
    B: float = 0.64e4
    C: float = 0.35e4
    corner_width: float = 0.1
    boundary: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.n_grid = int(self.n_grid)
        if self.n_grid < 2:
            raise LandscapeError("n_grid must be at least 2")
        for name in ("lam2", "B", "C"):
            if not float(getattr(self, name)) > 0:
                raise LandscapeError(f"{name} must be positive")
        if self.corner_width < 0:
            raise LandscapeError("corner_width must be non-negative")
        if self.boundary is not None:
            b = np.asarray(self.boundary, dtype=float)
            m = self.n_grid + 1
            if b.shape != (2, m, m):
                raise LandscapeError(f"boundary array must have shape (2, {m}, {m})")
            self.boundary = b

    @property
    def order(self) -> float:
        return self.B / (2.0 * self.C)


def tangent_boundary(spec: LdgSpec) -> np.ndarray:
    """Full-grid ``(2, m, m)`` array with tangent data on the boundary, zero inside.

    Index ``[a, i, j]`` is component ``q_{a+1}`` at ``y_i, x_j``. Top and bottom
    edges hold ``q1 = +s`` (horizontal director), left and right edges
    ``q1 = -s`` (vertical director), ``q2 = 0`` everywhere.
    """
    m = spec.n_grid + 1
    t = np.linspace(-1.0, 1.0, m)
    s = spec.order
    w = spec.corner_width
    ramp = np.ones(m) if w == 0 else np.clip((1.0 - np.abs(t)) / w, 0.0, 1.0)
    out = np.zeros((2, m, m))
    out[0, 0, :] = s * ramp
    out[0, -1, :] = s * ramp
    out[0, :, 0] = -s * ramp
    out[0, :, -1] = -s * ramp
    return out


def load_boundary_csv(path, n_grid: int) -> np.ndarray:
    """Read boundary values from a CSV with columns ``i,j,q1,q2``.

    Only rows on the outer ring are accepted; nodes not listed default to zero.
    """
    m = n_grid + 1
    out = np.zeros((2, m, m))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            i, j = int(row["i"]), int(row["j"])
            if not (0 <= i < m and 0 <= j < m):
                raise LandscapeError(f"boundary node ({i}, {j}) outside the grid")
            if 0 < i < m - 1 and 0 < j < m - 1:
                raise LandscapeError(f"node ({i}, {j}) is not on the boundary")
            out[0, i, j] = float(row["q1"])
            out[1, i, j] = float(row["q2"])
    return out


class LandauDeGennes(Landscape):
    """Discrete reduced LdG energy over the interior ``(q1, q2)`` values.

    The state vector is ``[q1 interior (row-major), q2 interior (row-major)]``
    so ``d = 2 (n_grid - 1)^2``.
    """

    name = "ldg"

    def __init__(self, spec: LdgSpec, lipschitz=None):
        self.spec = spec
        n = spec.n_grid
        self.h = 2.0 / n
        self.n_inner = n - 1
        self._full = spec.boundary.copy() if spec.boundary is not None else tangent_boundary(spec)
        self._full[:, 1:-1, 1:-1] = 0.0
        m = n + 1
        # trapezoid weights across the edge direction and at nodes
        wt = np.ones(m)
        wt[0] = wt[-1] = 0.5
        self._w_row = wt[:, None]
        self._w_col = wt[None, :]
        self._w_node = wt[:, None] * wt[None, :]
        self._c = spec.B ** 2 / (4.0 * spec.C ** 2)
        self._lam2 = float(spec.lam2)
        super().__init__(2 * self.n_inner ** 2, lipschitz=lipschitz)
        if self.lipschitz is None:
            # Gershgorin-type bound of -2 Laplacian plus a bulk margin
            self.lipschitz = 16.0 / self.h ** 2 + 2.0 * self._lam2 * 3.0 * self.spec.order ** 2

    # -- layout ---------------------------------------------------------------
    def to_grid(self, x) -> np.ndarray:
        """Full ``(2, m, m)`` field with boundary values filled in."""
        g = self._full.copy()
        k = self.n_inner
        g[:, 1:-1, 1:-1] = np.asarray(x, dtype=float).reshape(2, k, k)
        return g

    def from_grid(self, grid) -> np.ndarray:
        return np.asarray(grid, dtype=float)[:, 1:-1, 1:-1].reshape(-1).copy()

    def _inner(self, x):
        k = self.n_inner
        return x.reshape(2, k, k)

    # -- energy ---------------------------------------------------------------
    def _energy(self, x):
        g = self.to_grid(x)
        h2 = self.h * self.h
        dx = g[:, :, 1:] - g[:, :, :-1]
        dy = g[:, 1:, :] - g[:, :-1, :]
        elastic = (np.sum(self._w_row * dx * dx) + np.sum(self._w_col * dy * dy)) / h2
        r = g[0] ** 2 + g[1] ** 2
        bulk = self._lam2 * np.sum(self._w_node * (-self._c * r + 0.5 * r * r))
        return float(elastic + bulk)

    def _neg_laplacian(self, g):
        # 4 u_ij - neighbours, evaluated on interior nodes
        return (
            4.0 * g[:, 1:-1, 1:-1]
            - g[:, :-2, 1:-1] - g[:, 2:, 1:-1]
            - g[:, 1:-1, :-2] - g[:, 1:-1, 2:]
        )

    def _gradient(self, x):
        g = self.to_grid(x)
        q = g[:, 1:-1, 1:-1]
        r = q[0] ** 2 + q[1] ** 2
        out = (2.0 / self.h ** 2) * self._neg_laplacian(g) + 2.0 * self._lam2 * (r - self._c) * q
        return out.reshape(-1)

    def _hvp(self, x, v):
        q = self._inner(x)
        k = self.n_inner
        vg = np.zeros((2, k + 2, k + 2))
        vg[:, 1:-1, 1:-1] = v.reshape(2, k, k)
        vi = vg[:, 1:-1, 1:-1]
        r = q[0] ** 2 + q[1] ** 2
        qv = q[0] * vi[0] + q[1] * vi[1]
        out = (2.0 / self.h ** 2) * self._neg_laplacian(vg) + 2.0 * self._lam2 * ((r - self._c) * vi + 2.0 * q * qv)
        return out.reshape(-1)

    # -- named states ---------------------------------------------------------
    def diagonal_guess(self, sign: int = 1) -> np.ndarray:
        """Uniform director along a square diagonal: ``q1 = 0, q2 = +-s``."""
        k = self.n_inner
        x = np.zeros((2, k, k))
        x[1] = sign * self.spec.order
        return x.reshape(-1)

    def minimize(self, x0, gtol: float = 1e-10, maxiter: int = 20000) -> np.ndarray:
        """Local minimizer by L-BFGS from ``x0``."""
        res = optimize.minimize(
            self._energy, np.asarray(x0, dtype=float), jac=self._gradient,
            method="L-BFGS-B", options={"gtol": gtol, "ftol": 0.0, "maxiter": maxiter, "maxcor": 30},
        )
        return res.x

    def diagonal_state(self, sign: int = 1) -> np.ndarray:
        """The stable D1 (``sign=+1``) or D2 (``sign=-1``) state."""
        return self.minimize(self.diagonal_guess(sign))
