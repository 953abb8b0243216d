"""Benchmark energy landscapes and a factory building them from config trees."""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from .analytic import (
    Butterfly,
    ConstrainedLagrangianSpec,
    Lagrangian,
    MbParams,
    MullerBrown,
    Quadratic,
)
from .base import (
    Landscape,
    LandscapeError,
    as_point,
    estimate_lipschitz,
    fd_gradient,
    fd_hvp,
)
from .ldg import LandauDeGennes, LdgSpec, load_boundary_csv, tangent_boundary
from .linear_nn import (
    LinearNetwork,
    LinearNnSpec,
    explained_variance,
    gaussian_data,
    nn_reference_saddle,
    perturbed_start,
)

__all__ = [
    "Butterfly", "ConstrainedLagrangianSpec", "Lagrangian", "LandauDeGennes", "Landscape",
    "LandscapeError", "LdgSpec", "LinearNetwork", "LinearNnSpec", "MbParams", "MullerBrown",
    "Quadratic", "as_point", "build_landscape", "estimate_lipschitz", "explained_variance",
    "fd_gradient", "fd_hvp", "gaussian_data", "load_boundary_csv", "nn_reference_saddle",
    "perturbed_start", "tangent_boundary",
]

LANDSCAPE_NAMES = ("mb", "butterfly", "quadratic", "linear_nn", "ldg", "lagrangian")


def _take(cfg: Mapping, allowed: set, name: str) -> dict:
    unknown = set(cfg) - allowed - {"name", "lipschitz"}
    if unknown:
        raise LandscapeError(f"unknown keys for {name} landscape: {sorted(unknown)}")
    return {k: cfg[k] for k in allowed if k in cfg}


def _linear_nn_spec(cfg: Mapping) -> LinearNnSpec:
    kw = _take(cfg, {"dims", "n_samples", "data_seed", "subset", "X", "Y"}, "linear_nn")
    dims = tuple(kw.get("dims", (10, 10, 10, 10, 10, 4)))
    if "X" in kw or "Y" in kw:
        if "X" not in kw or "Y" not in kw:
            raise LandscapeError("linear_nn needs both X and Y when data is given explicitly")
        X, Y = np.asarray(kw["X"], dtype=float), np.asarray(kw["Y"], dtype=float)
    else:
        rng = np.random.default_rng(int(kw.get("data_seed", 0)))
        X, Y = gaussian_data(dims[0], dims[-1], int(kw.get("n_samples", 100)), rng)
    return LinearNnSpec(dims, X, Y, tuple(kw.get("subset", (1, 2))))


def _ldg_spec(cfg: Mapping) -> LdgSpec:
    kw = _take(cfg, {"n_grid", "lam2", "B", "C", "corner_width", "boundary_csv"}, "ldg")
    path = kw.pop("boundary_csv", None)
    spec = LdgSpec(**kw)
    if path is not None:
        spec.boundary = load_boundary_csv(path, spec.n_grid)
    return spec


def build_landscape(spec) -> Landscape:
    """Build a landscape from a spec object or a config mapping.

    Parameters
    ----------
    spec : Mapping or spec object
        Either an instance of ``MbParams``, ``LinearNnSpec``, ``LdgSpec`` or
        ``ConstrainedLagrangianSpec``, or a mapping with a ``name`` key in
        ``{mb, butterfly, quadratic, linear_nn, ldg, lagrangian}`` plus that
        landscape's parameters. A ``lipschitz`` key overrides the default
        Hessian bound.

    Returns
    -------
    Landscape
    """
    if isinstance(spec, MbParams):
        return MullerBrown(spec)
    if isinstance(spec, LinearNnSpec):
        return LinearNetwork(spec)
    if isinstance(spec, LdgSpec):
        return LandauDeGennes(spec)
    if isinstance(spec, ConstrainedLagrangianSpec):
        return Lagrangian(spec)
    if not isinstance(spec, Mapping) or "name" not in spec:
        raise LandscapeError("landscape spec must be a mapping with a 'name' key")
    name = spec["name"]
    lip = spec.get("lipschitz")
    if name == "mb":
        kw = _take(spec, {"A", "a", "b", "c", "xbar", "ybar"}, name)
        return MullerBrown(MbParams(**kw), lipschitz=lip)
    if name == "butterfly":
        _take(spec, set(), name)
        return Butterfly(lipschitz=lip)
    if name == "quadratic":
        kw = _take(spec, {"diag"}, name)
        if "diag" not in kw:
            raise LandscapeError("quadratic landscape needs 'diag'")
        return Quadratic(kw["diag"], lipschitz=lip)
    if name == "linear_nn":
        return LinearNetwork(_linear_nn_spec(spec), lipschitz=lip)
    if name == "ldg":
        return LandauDeGennes(_ldg_spec(spec), lipschitz=lip)
    if name == "lagrangian":
        kw = _take(spec, {"P", "A", "b", "eta"}, name)
        return Lagrangian(ConstrainedLagrangianSpec(**kw), lipschitz=lip)
    raise LandscapeError(f"unknown landscape {name!r}; expected one of {LANDSCAPE_NAMES}")
