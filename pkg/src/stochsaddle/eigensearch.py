"""Stochastic search for the ``k`` lowest Hessian eigendirections.

Directions are found one after another with a deflated Oja iteration

    v <- normalize(v - alpha (I - v v^T - U^T U) H(omega) v),

where the rows of ``U`` are the directions already accepted. A direction is
accepted once the deflated residual ``||(I - v v^T - U^T U) H v||^2`` drops
below ``L^2 eps_v``. If it then has a positive Rayleigh quotient it is added
to ``U`` and the search for that slot starts over.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .oracles import StepSchedule

STATUSES = ("converged", "max_inner", "restart_exhausted")


class EigenSearchError(ValueError):
    """Invalid input to the eigenvector search."""


def _rows(vectors, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(vectors, dtype=float)
    if arr.size == 0:
        return np.zeros((0, dim or 0))
    arr = np.atleast_2d(arr)
    if dim is not None and arr.shape[1] != dim:
        raise EigenSearchError(f"vectors must have length {dim}, got {arr.shape[1]}")
    return arr


def canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so its first nonzero coordinate is non-negative."""
    nz = np.flatnonzero(v)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


@dataclass
class UnstableFrame:
    """Orthonormal directions stored as the rows of ``vectors`` with their Rayleigh quotients."""

    vectors: np.ndarray
    rayleigh: np.ndarray = None

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        k = self.vectors.shape[0]
        if self.rayleigh is None:
            self.rayleigh = np.full(k, np.nan)
        self.rayleigh = np.asarray(self.rayleigh, dtype=float).reshape(k)

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def projector(self) -> np.ndarray:
        return self.vectors.T @ self.vectors

    def validate(self, norm_tol: float = 1e-12, orth_tol: float = 1e-10) -> None:
        V = self.vectors
        if not np.all(np.isfinite(V)):
            raise EigenSearchError("frame contains non-finite entries")
        norms = np.linalg.norm(V, axis=1)
        if np.any(np.abs(norms - 1.0) > norm_tol):
            raise EigenSearchError("frame vectors are not unit length")
        G = V @ V.T - np.eye(self.k)
        if np.any(np.abs(G) > max(orth_tol, norm_tol)):
            raise EigenSearchError("frame vectors are not mutually orthogonal")


@dataclass
class EigenSearchConfig:
    """Tolerance, step schedule and caps for the eigenvector search.

    ``max_restarts=None`` means ``d`` restarts, the cap suggested for the
    method. The stopping threshold is ``lipschitz^2 * eps_v``.
    """

    eps_v: float = 1e-6
    lipschitz: float = 1.0
    schedule: StepSchedule = field(default_factory=lambda: StepSchedule.power(1.0, 10.0))
    max_inner: int = 10_000
    max_restarts: int | None = None
    residual_check_period: int = 25
    residual_samples: int = 32

    def __post_init__(self):
        if not self.eps_v > 0:
            raise EigenSearchError("eps_v must be positive")
        if not self.lipschitz > 0:
            raise EigenSearchError("lipschitz estimate must be positive")
        if self.max_inner < 0 or self.residual_check_period < 1 or self.residual_samples < 1:
            raise EigenSearchError("max_inner >= 0, residual_check_period >= 1 and residual_samples >= 1 required")
        if self.max_restarts is not None and self.max_restarts < 0:
            raise EigenSearchError("max_restarts must be non-negative")

    @property
    def threshold(self) -> float:
        return self.lipschitz ** 2 * self.eps_v


@dataclass
class EigenSearchReport:
    frame: UnstableFrame
    inner_iterations: list
    restarts: int
    residuals: list
    status: str

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def total_inner(self) -> int:
        return int(sum(self.inner_iterations))

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "inner_iterations": [int(n) for n in self.inner_iterations],
            "restarts": int(self.restarts),
            "residuals": [float(r) for r in self.residuals],
            "rayleigh": [float(q) for q in self.frame.rayleigh],
        }


def _deflate(w: np.ndarray, v: np.ndarray, U: np.ndarray) -> np.ndarray:
    r = w - v * (v @ w)
    if U.shape[0]:
        r = r - U.T @ (U @ w)
    return r


def oja_step(v, hvp_sample, deflation, alpha: float) -> np.ndarray:
    """One normalized, deflated Oja update.

    Parameters
    ----------
    v : ndarray
        Current unit vector, orthogonal to ``deflation``.
    hvp_sample : ndarray
        Sampled product ``H(omega) v``.
    deflation : array_like
        Rows are orthonormal directions to keep ``v`` orthogonal to.
    alpha : float
        Step size.
    """
    v = np.asarray(v, dtype=float)
    return _oja(v, np.asarray(hvp_sample, dtype=float), _rows(deflation, v.size), alpha)


def _oja(v, w, U, alpha):
    vh = v - alpha * _deflate(w, v, U)
    nrm = math.sqrt(float(vh @ vh))
    if not nrm >= 1e-14:
        raise EigenSearchError("degenerate Oja update: updated vector has (near) zero norm")
    return vh / nrm


def eigen_residual(v, exact_hvp, deflation) -> float:
    """``||(I - v v^T - sum u u^T) H v||^2`` for the exact product ``H v``."""
    v = np.asarray(v, dtype=float)
    r = _deflate(np.asarray(exact_hvp, dtype=float), v, _rows(deflation, v.size))
    return float(r @ r)


def _orthonormalize_against(v: np.ndarray, U: np.ndarray) -> np.ndarray | None:
    for _ in range(2):
        if U.shape[0]:
            v = v - U.T @ (U @ v)
    nrm = np.linalg.norm(v)
    if nrm < 1e-8:
        return None
    return v / nrm


def _random_unit(rng: np.random.Generator, U: np.ndarray, dim: int) -> np.ndarray:
    while True:
        v = _orthonormalize_against(rng.standard_normal(dim), U)
        if v is not None:
            return v


def search_unstable_directions(hvp_sample: Callable, k: int, cfg: EigenSearchConfig, *,
                               dim: int, exact_hvp: Callable | None = None,
                               warm_start: UnstableFrame | None = None,
                               rng=None) -> EigenSearchReport:
    """Find ``k`` approximate lowest eigendirections of a (sampled) Hessian.

    Parameters
    ----------
    hvp_sample : callable
        ``hvp_sample(v, rng)`` returns a stochastic product ``H(omega) v``.
    k : int
        Number of directions, ``1 <= k < dim``.
    cfg : EigenSearchConfig
    dim : int
        Ambient dimension ``d``.
    exact_hvp : callable, optional
        ``exact_hvp(v)`` returns the noiseless product used by the residual
        test and the Rayleigh quotients. Without it, both use the mean of
        ``cfg.residual_samples`` fresh samples.
    warm_start : UnstableFrame, optional
        Initial directions. Missing directions start from random unit vectors.
    rng : Generator or callable
        Either one generator for everything or ``rng(j)`` returning the
        generator for direction ``j``.

    Returns
    -------
    EigenSearchReport
        ``status`` is ``converged``, ``max_inner`` (some direction hit the
        iteration cap) or ``restart_exhausted`` (a slot only produced
        directions with positive Rayleigh quotient).
    """
    if not 1 <= k < dim:
        raise EigenSearchError(f"need 1 <= k < d, got k={k}, d={dim}")
    if rng is None:
        rng = np.random.default_rng()
    rng_for = rng if callable(rng) and not isinstance(rng, np.random.Generator) else (lambda j: rng)
    if warm_start is not None:
        if warm_start.dim != dim:
            raise EigenSearchError("warm start dimension mismatch")
        init = warm_start.vectors
    else:
        init = np.zeros((0, dim))

    sched = cfg.schedule
    max_restarts = dim if cfg.max_restarts is None else cfg.max_restarts
    period = cfg.residual_check_period
    thresh = cfg.threshold

    if exact_hvp is None:
        def measure(v, g):
            acc = hvp_sample(v, g)
            for _ in range(cfg.residual_samples - 1):
                acc = acc + hvp_sample(v, g)
            return acc / cfg.residual_samples
    else:
        def measure(v, g):
            return exact_hvp(v)

    found: list = []
    rayleigh: list = []
    inner: list = []
    residuals: list = []
    restarts = 0
    status = "converged"
    excluded: list = []

    for j in range(k):
        g = rng_for(j)
        U = np.array(found + excluded).reshape(-1, dim)
        v = _orthonormalize_against(init[j].copy(), U) if j < init.shape[0] else None
        if v is None:
            v = _random_unit(g, U, dim)
        candidates = []
        used = 0
        while True:
            n_v = 0
            ok = False
            while True:
                if n_v % period == 0:
                    # re-project to remove round-off drift, then test the guard
                    v = _orthonormalize_against(v, U)
                    if v is None:
                        v = _random_unit(g, U, dim)
                    hv = measure(v, g)
                    res = eigen_residual(v, hv, U)
                    if res < thresh:
                        ok = True
                        break
                    if n_v >= cfg.max_inner:
                        break
                elif n_v >= cfg.max_inner:
                    break
                v = _oja(v, hvp_sample(v, g), U, sched(n_v + sched.offset))
                n_v += 1
            if n_v % period != 0:
                v = _orthonormalize_against(v, U)
                hv = measure(v, g)
                res = eigen_residual(v, hv, U)
            used += n_v
            q = float(v @ hv)
            candidates.append((q, v, res))
            if not ok:
                if status == "converged":
                    status = "max_inner"
                break
            if q <= 0:
                break
            # the room left must still hold this slot and the later ones
            if restarts < max_restarts and U.shape[0] + 1 <= dim - k + j:
                restarts += 1
                excluded.append(v)
                U = np.vstack([U, v[None, :]])
                v = _random_unit(g, U, dim)
                continue
            if status == "converged":
                status = "restart_exhausted"
            break
        # keep the lowest Rayleigh quotient seen for this slot
        q, v, res = min(candidates, key=lambda c: c[0])
        excluded = [e for e in excluded if e is not v]
        found.append(v)
        rayleigh.append(q)
        inner.append(used)
        residuals.append(res)

    V = np.array([canonical_sign(v) for v in found])
    return EigenSearchReport(UnstableFrame(V, np.array(rayleigh)), inner, restarts, residuals, status)


def exact_smallest_eigvecs(matrix, k: int) -> UnstableFrame:
    """Eigenvectors of the ``k`` smallest eigenvalues of a symmetric matrix."""
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise EigenSearchError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T)) > 1e-10 * scale:
        raise EigenSearchError("matrix is not symmetric")
    if not 1 <= k <= M.shape[0]:
        raise EigenSearchError("k out of range")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    vecs = np.array([canonical_sign(V[:, i]) for i in range(k)])
    return UnstableFrame(vecs, w[:k])


def projection_distance(a: UnstableFrame, b: UnstableFrame) -> float:
    """``||P_a - P_b||_2^2`` for the orthogonal projectors onto two frames.

    For equal-dimensional subspaces this equals ``1 - sigma_min(A B^T)^2``.
    """
    if a.k != b.k or a.dim != b.dim:
        raise EigenSearchError("frames must share k and d")
    a.validate(1e-10, 1e-10)
    b.validate(1e-10, 1e-10)
    s = np.linalg.svd(a.vectors @ b.vectors.T, compute_uv=False)
    return float(min(1.0, max(0.0, 1.0 - s[-1] ** 2)))


def projector_error_bound(eigenvalues, k: int, lipschitz: float, eps_v: float) -> float:
    """Bound ``k zbar_k^2 d`` on the projector error after a search stops.

    ``zbar_k = sqrt(L^(2k) Q^k (k!)^2 eps_v / d)`` with
    ``Q = max(1, 1 / min(Delta^2 / 4, mu^2), 1 / L^2)``, ``Delta`` the
    smallest gap between distinct negative eigenvalues and ``mu`` the
    distance of the spectrum split from zero. Returns ``inf`` when the
    tolerance is too loose for the bound to apply.
    """
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    d = lam.size
    if not 1 <= k < d or lam[k - 1] >= 0 or lam[k] <= 0:
        raise EigenSearchError("need exactly k negative eigenvalues")
    mu = min(-lam[k - 1], lam[k])
    neg = np.unique(lam[lam < 0])
    gaps = np.diff(neg)
    delta = float(np.min(gaps)) if gaps.size else math.inf
    Q = max(1.0, 1.0 / min(delta ** 2 / 4.0, mu ** 2), 1.0 / lipschitz ** 2)
    zbar2 = lipschitz ** (2 * k) * Q ** k * math.factorial(k) ** 2 * eps_v / d
    if not math.sqrt(zbar2) < min(delta / 2.0, mu):
        return math.inf
    return k * zbar2 * d
