"""Squared loss of a deep linear network ``W_H ... W_1 X ~ Y``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Landscape, LandscapeError


@dataclass
class LinearNnSpec:
    """Architecture, data and the mode subset used for the reference saddle.

    ``dims`` is ``(d_0, ..., d_H)`` with ``d_0 = d_x`` and ``d_H = d_y``.
    ``X`` has shape ``(d_x, N)`` and ``Y`` has shape ``(d_y, N)``. ``subset``
    holds 1-based indices into the eigenmodes of
    ``Sigma_YX Sigma_XX^{-1} Sigma_YX^T`` sorted by decreasing eigenvalue.
    """

    dims: tuple
    X: np.ndarray
    Y: np.ndarray
    subset: tuple = ()

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) < 3 or min(self.dims) < 1:
            raise LandscapeError("dims must list at least d_0, d_1, d_2 (depth H >= 2), all positive")
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.dims[0]:
            raise LandscapeError("X must have shape (d_x, N)")
        if self.Y.ndim != 2 or self.Y.shape != (self.dims[-1], self.X.shape[1]):
            raise LandscapeError("Y must have shape (d_y, N) with the same N as X")
        sxx = self.X @ self.X.T
        if np.linalg.matrix_rank(sxx) < sxx.shape[0]:
            raise LandscapeError("Sigma_XX = X X^T is singular")
        self.subset = tuple(sorted(int(s) for s in self.subset))
        if len(set(self.subset)) != len(self.subset):
            raise LandscapeError("subset indices must be distinct")
        if any(s < 1 or s > self.r_max for s in self.subset):
            raise LandscapeError(f"subset indices must lie in 1..{self.r_max}")

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]

    @property
    def r_max(self) -> int:
        return min(self.dims)


def gaussian_data(d_x: int, d_y: int, n: int, rng: np.random.Generator):
    """Independent standard normal inputs and targets, as in the benchmark."""
    return rng.standard_normal((d_x, n)), rng.standard_normal((d_y, n))


def _flatten(mats) -> np.ndarray:
    return np.concatenate([np.asarray(m, dtype=float).ravel(order="F") for m in mats])


class LinearNetwork(Landscape):
    """``f(W) = || W_H ... W_1 X - Y ||_F^2`` on the flattened weights.

    Each layer is flattened column-major and layers are concatenated in the
    order ``W_1, ..., W_H``. ``known_saddle`` is the closed-form critical
    point for ``spec.subset`` when the hidden widths allow it.
    """

    name = "linear_nn"

    def __init__(self, spec: LinearNnSpec, lipschitz=None):
        self.spec = spec
        dims = spec.dims
        self.shapes = [(dims[h + 1], dims[h]) for h in range(spec.depth)]
        sizes = [r * c for r, c in self.shapes]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        try:
            saddle = nn_reference_saddle(spec)
        except LandscapeError:
            saddle = None
        super().__init__(int(self._offsets[-1]), known_saddle=saddle, lipschitz=lipschitz)

    @property
    def n_samples(self) -> int:
        return self.spec.n_samples

    # -- layout helpers -----------------------------------------------------
    def unflatten(self, w):
        return [
            w[self._offsets[h]:self._offsets[h + 1]].reshape(self.shapes[h], order="F")
            for h in range(len(self.shapes))
        ]

    def flatten(self, mats) -> np.ndarray:
        return _flatten(mats)

    # -- core evaluations on a column subset --------------------------------
    def _forward(self, Ws, X):
        acts = [X]
        for W in Ws:
            acts.append(W @ acts[-1])
        return acts

    def _loss(self, w, X, Y):
        Ws = self.unflatten(w)
        r = self._forward(Ws, X)[-1] - Y
        return float(np.sum(r * r))

    def _grad(self, w, X, Y):
        Ws = self.unflatten(w)
        acts = self._forward(Ws, X)
        delta = 2.0 * (acts[-1] - Y)
        grads = [None] * len(Ws)
        for h in range(len(Ws) - 1, -1, -1):
            grads[h] = delta @ acts[h].T
            if h:
                delta = Ws[h].T @ delta
        return self.flatten(grads)

    def _hv(self, w, v, X, Y):
        # forward-mode derivative of the backprop recursion along v
        Ws = self.unflatten(w)
        Vs = self.unflatten(v)
        acts = [X]
        dacts = [np.zeros_like(X)]
        for W, V in zip(Ws, Vs):
            dacts.append(V @ acts[-1] + W @ dacts[-1])
            acts.append(W @ acts[-1])
        delta = 2.0 * (acts[-1] - Y)
        ddelta = 2.0 * dacts[-1]
        out = [None] * len(Ws)
        for h in range(len(Ws) - 1, -1, -1):
            out[h] = ddelta @ acts[h].T + delta @ dacts[h].T
            if h:
                ddelta = Vs[h].T @ delta + Ws[h].T @ ddelta
                delta = Ws[h].T @ delta
        return self.flatten(out)

    def _hv_multi(self, w, V, X, Y):
        # same recursion with a leading axis over the K directions
        Ws = self.unflatten(w)
        K = V.shape[0]
        Vs = [V[:, self._offsets[h]:self._offsets[h + 1]].reshape(K, c, r).transpose(0, 2, 1)
              for h, (r, c) in enumerate(self.shapes)]
        acts = [X]
        dacts = [np.zeros((K,) + X.shape)]
        for W, Vh in zip(Ws, Vs):
            dacts.append(Vh @ acts[-1] + W @ dacts[-1])
            acts.append(W @ acts[-1])
        delta = 2.0 * (acts[-1] - Y)
        ddelta = 2.0 * dacts[-1]
        out = [None] * len(Ws)
        for h in range(len(Ws) - 1, -1, -1):
            out[h] = ddelta @ acts[h].T + delta @ dacts[h].transpose(0, 2, 1)
            if h:
                ddelta = Vs[h].transpose(0, 2, 1) @ delta + Ws[h].T @ ddelta
                delta = Ws[h].T @ delta
        return np.concatenate([o.transpose(0, 2, 1).reshape(K, -1) for o in out], axis=1)

    def _energy(self, w):
        return self._loss(w, self.spec.X, self.spec.Y)

    def _gradient(self, w):
        return self._grad(w, self.spec.X, self.spec.Y)

    def _hvp(self, w, v):
        return self._hv(w, v, self.spec.X, self.spec.Y)

    def _hvp_multi(self, w, V):
        V = np.asarray(V, dtype=float)
        if V.shape[0] == 0:
            return V.copy()
        return self._hv_multi(w, V, self.spec.X, self.spec.Y)

    # -- minibatch hooks used by the stochastic oracles ---------------------
    def batch_gradient(self, w, idx, scale: float = 1.0):
        g = self._grad(w, self.spec.X[:, idx], self.spec.Y[:, idx])
        return g if scale == 1.0 else scale * g

    def batch_hvp(self, w, v, idx, scale: float = 1.0):
        hv = self._hv(w, v, self.spec.X[:, idx], self.spec.Y[:, idx])
        return hv if scale == 1.0 else scale * hv


def _modes(spec: LinearNnSpec):
    X, Y = spec.X, spec.Y
    sxx = X @ X.T
    syx = Y @ X.T
    beta = np.linalg.solve(sxx, syx.T).T  # Sigma_YX Sigma_XX^{-1}
    sigma = beta @ syx.T
    sigma = 0.5 * (sigma + sigma.T)
    evals, evecs = np.linalg.eigh(sigma)
    order = np.argsort(evals)[::-1]
    return evals[order], evecs[:, order], beta


def nn_reference_saddle(spec: LinearNnSpec) -> np.ndarray:
    """Closed-form critical point built from the eigenmodes in ``spec.subset``.

    ``W_1 = [U_S^T Sigma_YX Sigma_XX^{-1}; 0]``, identity hidden layers and
    ``W_H = [U_S, 0]``. Requires every hidden width to equal ``d_0``.
    """
    dims = spec.dims
    H = spec.depth
    if any(d != dims[0] for d in dims[1:H]):
        raise LandscapeError("the closed-form saddle needs hidden widths equal to d_0")
    _, U, beta = _modes(spec)
    cols = [s - 1 for s in spec.subset]
    Us = U[:, cols]
    r = len(cols)
    W1 = np.zeros((dims[1], dims[0]))
    W1[:r] = Us.T @ beta
    mats = [W1]
    for h in range(2, H):
        mats.append(np.eye(dims[0]))
    WH = np.zeros((dims[H], dims[H - 1]))
    WH[:, :r] = Us
    mats.append(WH)
    return _flatten(mats)


def explained_variance(spec: LinearNnSpec) -> np.ndarray:
    """Eigenvalues of ``Sigma_YX Sigma_XX^{-1} Sigma_YX^T`` in decreasing order."""
    return _modes(spec)[0]


def perturbed_start(net: LinearNetwork, w_star, rng: np.random.Generator) -> np.ndarray:
    """``W* + V`` with ``V_h`` i.i.d. ``N(0, s_h^2)``, ``s_h = ||W_h*||_F / (sqrt(d_h - 1) d_h)``.

    ``d_h`` is the output width of layer ``h``; widths of one fall back to
    ``sqrt(1)`` in the first factor.
    """
    mats = net.unflatten(np.asarray(w_star, dtype=float))
    out = []
    for W in mats:
        d_h = W.shape[0]
        s = np.linalg.norm(W) / (np.sqrt(max(d_h - 1, 1)) * d_h)
        out.append(W + s * rng.standard_normal(W.shape))
    return net.flatten(out)
