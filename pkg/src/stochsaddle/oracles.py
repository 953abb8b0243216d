"""Stochastic gradient and Hessian-vector oracles, step schedules and RNG streams.

Every stochastic draw goes through a two-stage interface: ``draw(rng)``
realizes the randomness ``omega`` and ``gradient_at(x, omega)`` evaluates
the sample gradient for that realization. The dimer Hessian product relies
on this to reuse one ``omega`` on both sides of its finite difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .landscapes import Landscape

NOISE_KINDS = ("exact", "gaussian_additive", "minibatch", "coordinate_mask")
HVP_MODES = ("analytic_noisy", "minibatch", "coordinate_mask", "dimer")

# phase ids for RNG streams; eigen-direction j uses EIGEN_PHASE + j
X_PHASE = 0
CHECK_PHASE = 1
INIT_PHASE = 2
EIGEN_PHASE = 10


class OracleError(ValueError):
    """Invalid noise model, schedule or oracle request."""


class DivergenceError(FloatingPointError):
    """A sampled quantity became non-finite."""


@dataclass(frozen=True)
class NoiseModel:
    """Description of the randomness ``omega`` in ``grad f(x; omega)``.

    Parameters
    ----------
    kind : str
        One of ``exact``, ``gaussian_additive``, ``minibatch``,
        ``coordinate_mask``.
    scale : float
        Gaussian standard deviation ``sigma_g``.
    batch_size : int
        Minibatch size ``m_b``.
    keep_fraction : float
        Mask fraction ``rho``; ``ceil(rho d)`` coordinates are kept.
    rescale : bool
        Minibatch only. If true the sub-sum is multiplied by ``N / m_b`` so
        the sample is unbiased; otherwise the raw sub-sum loss is used.
    hvp_scale : float or None
        Noise level of the analytic Hessian product; defaults to ``scale``.
    rng_seed : int
        Master seed combined with the run seed to derive streams.
    """

    kind: str = "exact"
    scale: float = 0.0
    batch_size: int | None = None
    keep_fraction: float | None = None
    rescale: bool = True
    hvp_scale: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise OracleError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not (self.scale >= 0 and math.isfinite(self.scale)):
            raise OracleError("noise scale must be finite and non-negative")
        if self.hvp_scale is not None and not self.hvp_scale >= 0:
            raise OracleError("hvp_scale must be non-negative")
        if self.kind == "minibatch" and (self.batch_size is None or self.batch_size < 1):
            raise OracleError("minibatch noise needs batch_size >= 1")
        if self.kind == "coordinate_mask":
            if self.keep_fraction is None or not 0 < self.keep_fraction <= 1:
                raise OracleError("coordinate_mask needs 0 < keep_fraction <= 1")


@dataclass(frozen=True)
class StepSchedule:
    """``alpha(n) = gamma / (n + m)^p`` or a constant ``alpha0``.

    ``offset`` is the first admissible index ``n0``; a search performing its
    ``k``-th step uses ``alpha(k + n0)``.
    """

    kind: str = "power"
    gamma: float = 1.0
    m: float = 1.0
    p: float = 1.0
    alpha0: float = 1e-3
    offset: int = 0

    def __post_init__(self):
        if self.offset < 0:
            raise OracleError("schedule offset must be non-negative")
        if self.kind == "power":
            if not self.gamma > 0:
                raise OracleError("power schedule needs gamma > 0")
            if self.m < 0:
                raise OracleError("power schedule needs m >= 0")
            if not 0.5 < self.p <= 1.0:
                raise OracleError("power schedule needs 1/2 < p <= 1")
            if self.m + self.offset <= 0:
                raise OracleError("power schedule with m = 0 needs offset >= 1")
        elif self.kind == "constant":
            if not self.alpha0 > 0:
                raise OracleError("constant schedule needs alpha0 > 0")
        else:
            raise OracleError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def power(cls, gamma, m, p=1.0, offset=0):
        return cls("power", gamma=float(gamma), m=float(m), p=float(p), offset=int(offset))

    @classmethod
    def constant(cls, alpha0):
        return cls("constant", alpha0=float(alpha0))

    def __call__(self, n) -> float:
        return step_size(self, n)

    def steps(self, count: int) -> np.ndarray:
        """``alpha(n0), ..., alpha(n0 + count - 1)`` as an array."""
        n = np.arange(count, dtype=float) + self.offset
        if self.kind == "constant":
            return np.full(count, self.alpha0)
        return self.gamma / (n + self.m) ** self.p


def step_size(s: StepSchedule, n) -> float:
    """Step size at absolute index ``n`` (``n >= offset``)."""
    if n < s.offset:
        raise OracleError(f"step index {n} precedes schedule offset {s.offset}")
    if s.kind == "constant":
        return s.alpha0
    return s.gamma / (n + s.m) ** s.p


class RngStreams:
    """Independent generators keyed by phase for one run.

    The stream for ``phase`` is seeded by
    ``SeedSequence(master, spawn_key=(run, phase))`` so every
    ``(master, run, phase)`` triple replays exactly.
    """

    def __init__(self, master: int, run: int):
        self.master = int(master)
        self.run = int(run)
        self._cache: dict = {}

    def stream(self, phase: int) -> np.random.Generator:
        if phase not in self._cache:
            ss = np.random.SeedSequence(self.master, spawn_key=(self.run, int(phase)))
            self._cache[phase] = np.random.Generator(np.random.PCG64(ss))
        return self._cache[phase]

    def eigen(self, j: int) -> np.random.Generator:
        return self.stream(EIGEN_PHASE + j)


class OraclePair:
    """Stochastic gradient and Hessian-vector product for a landscape.

    Attributes
    ----------
    landscape : Landscape
    noise : NoiseModel
    hvp_mode : str
        ``analytic_noisy``, ``minibatch``, ``coordinate_mask`` or ``dimer``.
    dimer_length : float or None
        Fixed dimer half-length; ``None`` uses ``1e-3 (1 + ||x||_inf)``.
    """

    def __init__(self, landscape: Landscape, noise: NoiseModel, hvp_mode: str, dimer_length=None):
        self.landscape = landscape
        self.noise = noise
        self.hvp_mode = hvp_mode
        self.dimer_length = dimer_length
        d = landscape.dim
        self._sigma = float(noise.scale)
        self._hsigma = float(noise.scale if noise.hvp_scale is None else noise.hvp_scale)
        self._n_keep = None
        self._n_data = None
        self._batch_scale = 1.0
        if noise.kind == "coordinate_mask":
            self._n_keep = int(math.ceil(noise.keep_fraction * d - 1e-12))
        if noise.kind == "minibatch" or hvp_mode == "minibatch":
            n_data = getattr(landscape, "n_samples", None)
            if n_data is None or not hasattr(landscape, "batch_gradient"):
                raise OracleError(f"minibatch sampling needs a landscape with data samples, got {landscape.name}")
            if noise.batch_size is None or not 1 <= noise.batch_size <= n_data:
                raise OracleError(f"batch_size must lie in 1..{n_data}")
            self._n_data = n_data
            if noise.rescale:
                self._batch_scale = n_data / noise.batch_size

    # -- randomness -----------------------------------------------------------
    def draw(self, rng: np.random.Generator):
        kind = self.noise.kind
        if kind == "gaussian_additive":
            return rng.standard_normal(self.landscape.dim) if self._sigma > 0 else None
        if kind == "minibatch":
            return rng.choice(self._n_data, self.noise.batch_size, replace=False)
        if kind == "coordinate_mask":
            return rng.choice(self.landscape.dim, self._n_keep, replace=False)
        return None

    def gradient_at(self, x, omega) -> np.ndarray:
        kind = self.noise.kind
        lnd = self.landscape
        if kind == "minibatch":
            return lnd.batch_gradient(x, omega, self._batch_scale)
        g = lnd._gradient(x)
        if kind == "gaussian_additive" and omega is not None:
            return g + self._sigma * omega
        if kind == "coordinate_mask":
            out = np.zeros_like(g)
            out[omega] = g[omega]
            return out
        return g

    def sampler(self, rng: np.random.Generator, block: int = 512):
        """Callable returning successive ``omega`` draws from ``rng``.

        Gaussian draws are fetched in blocks; a block of ``standard_normal``
        values equals the same number of single draws, so the sequence of
        ``omega`` is unchanged.
        """
        if self.noise.kind == "gaussian_additive" and self._sigma > 0:
            return _NormalBlocks(rng, self.landscape.dim, block)
        return lambda: self.draw(rng)

    def gradient_batch(self, X, omegas) -> np.ndarray:
        """Row-wise ``gradient_at`` for a stack of points and draws."""
        kind = self.noise.kind
        if kind == "exact":
            return self.landscape._gradient_batch(X)
        if kind == "gaussian_additive":
            G = self.landscape._gradient_batch(X)
            if self._sigma > 0:
                G = G + self._sigma * np.asarray(omegas)
            return G
        return np.array([self.gradient_at(x, w) for x, w in zip(X, omegas)]).reshape(X.shape)

    def hvp_noise_sampler(self, rng: np.random.Generator, block: int = 64):
        """Successive flattened ``Xi`` draws for ``analytic_noisy``, fetched in blocks."""
        d = self.landscape.dim
        return _NormalBlocks(rng, d * d, block)

    def hvp_batch(self, X, V, xis=None) -> np.ndarray:
        """Row-wise ``analytic_noisy`` products; ``xis`` holds one flattened ``Xi`` per row."""
        HV = self.landscape._hvp_batch(X, V)
        if xis is not None and self._hsigma > 0:
            d = self.landscape.dim
            Xi = np.asarray(xis).reshape(-1, d, d)
            HV = HV + (0.5 * self._hsigma) * (np.einsum("rij,rj->ri", Xi, V) + np.einsum("rji,rj->ri", Xi, V))
        return HV

    # -- public oracles -------------------------------------------------------
    def grad(self, x, rng: np.random.Generator) -> np.ndarray:
        g = self.gradient_at(x, self.draw(rng))
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite stochastic gradient")
        return g

    def hvp(self, x, v, rng: np.random.Generator) -> np.ndarray:
        mode = self.hvp_mode
        lnd = self.landscape
        if mode == "analytic_noisy":
            hv = lnd._hvp(x, v)
            if self._hsigma > 0:
                d = lnd.dim
                xi = rng.standard_normal((d, d))
                hv = hv + (0.5 * self._hsigma) * (xi @ v + xi.T @ v)
        elif mode == "minibatch":
            idx = rng.choice(self._n_data, self.noise.batch_size, replace=False)
            hv = lnd.batch_hvp(x, v, idx, self._batch_scale)
        elif mode == "coordinate_mask":
            full = lnd._hvp(x, v)
            n_keep = self._n_keep or lnd.dim
            idx = rng.choice(lnd.dim, n_keep, replace=False)
            hv = np.zeros_like(full)
            hv[idx] = full[idx]
        else:
            ell = self.dimer_length
            if ell is None:
                ell = 1e-3 * (1.0 + float(np.max(np.abs(x))))
            omega = self.draw(rng)
            hv = (self.gradient_at(x + ell * v, omega) - self.gradient_at(x - ell * v, omega)) / (2.0 * ell)
        if not np.all(np.isfinite(hv)):
            raise DivergenceError("non-finite stochastic Hessian-vector product")
        return hv

    def exact_gradient(self, x) -> np.ndarray:
        return self.landscape._gradient(x)

    def exact_hvp(self, x, v) -> np.ndarray:
        return self.landscape._hvp(x, v)


class _NormalBlocks:
    def __init__(self, rng: np.random.Generator, dim: int, block: int):
        self.rng = rng
        self.dim = dim
        self.block = block
        self.buf = np.empty((0, dim))
        self.pos = 0

    def __call__(self) -> np.ndarray:
        if self.pos == self.buf.shape[0]:
            self.buf = self.rng.standard_normal((self.block, self.dim))
            self.pos = 0
        row = self.buf[self.pos]
        self.pos += 1
        return row


def default_hvp_mode(noise: NoiseModel) -> str:
    return {
        "minibatch": "minibatch",
        "coordinate_mask": "coordinate_mask",
    }.get(noise.kind, "analytic_noisy")


def build_oracles(landscape: Landscape, noise: NoiseModel, hvp_mode: str | None = None,
                  dimer_length=None) -> OraclePair:
    """Assemble the oracle pair for ``landscape`` under ``noise``.

    ``hvp_mode=None`` picks the mode matching the gradient noise: minibatch
    Hessians for minibatch noise, masked products for coordinate masks and
    the symmetrized additive perturbation otherwise.
    """
    mode = default_hvp_mode(noise) if hvp_mode is None else hvp_mode
    if mode not in HVP_MODES:
        raise OracleError(f"unknown hvp mode {mode!r}; expected one of {HVP_MODES}")
    if noise.kind == "coordinate_mask" and noise.keep_fraction * landscape.dim < 1:
        raise OracleError("coordinate mask needs keep_fraction * d >= 1")
    if mode == "coordinate_mask" and noise.kind != "coordinate_mask":
        raise OracleError("coordinate_mask hvp needs coordinate_mask noise")
    if dimer_length is not None and not dimer_length > 0:
        raise OracleError("dimer length must be positive")
    return OraclePair(landscape, noise, mode, dimer_length)


def sample_gradient(o: OraclePair, x, rng: np.random.Generator) -> np.ndarray:
    return o.grad(np.asarray(x, dtype=float), rng)


def sample_hvp(o: OraclePair, x, v, rng: np.random.Generator) -> np.ndarray:
    return o.hvp(np.asarray(x, dtype=float), np.asarray(v, dtype=float), rng)
