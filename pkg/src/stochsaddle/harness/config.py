"""Declarative experiment configs: parsing, validation and hashing.

A config is a key-value tree (YAML or JSON)::

    name: mb-decaying
    method: saddle            # saddle | deterministic | known_space
    landscape: {name: mb}
    noise: {kind: gaussian_additive, scale: 100.0, rng_seed: 0}
    hvp_mode: analytic_noisy  # optional, defaults per noise kind
    k: 1
    x_schedule: {kind: power, gamma: 0.01, m: 100, p: 1.0}
    eigen:
      eps_v: 1.0e-3
      lipschitz: 1000.0
      schedule: {kind: power, gamma: 0.005, m: 10}
      max_inner: 2000
    eps_x: 1.0e-14
    x0: mb-default            # literal list or a named start
    seeds: 100                # count, list, "A..B" or {start, stop}
    max_outer: 100000
    out: runs/mb

Keys not listed in ``TOP_KEYS`` are rejected so typos fail before any run
starts.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
import yaml

from ..eigensearch import EigenSearchConfig
from ..landscapes import LANDSCAPE_NAMES, build_landscape
from ..oracles import HVP_MODES, NOISE_KINDS, NoiseModel, StepSchedule
from ..saddlesearch import SaddleSearchConfig

METHODS = ("saddle", "deterministic", "known_space")
NAMED_STARTS = ("mb-default", "butterfly-default", "saddle", "nn-perturbed", "ldg-near-d1")

TOP_KEYS = {
    "name", "method", "landscape", "noise", "hvp_mode", "dimer_length", "k", "x_schedule", "eigen",
    "eps_x", "lipschitz", "x0", "seeds", "max_outer", "grad_check_period", "grad_check_samples",
    "check_exact", "refresh_period", "stop_at_tolerance", "record_period", "dense",
    "divergence_bound", "timing", "target", "out", "workers", "known_space", "ldg_start",
}
EIGEN_KEYS = {"eps_v", "lipschitz", "schedule", "max_inner", "max_restarts", "residual_check_period",
              "residual_samples"}
NOISE_KEYS = {"kind", "scale", "batch_size", "keep_fraction", "rescale", "hvp_scale", "rng_seed"}
SCHEDULE_KEYS = {"kind", "gamma", "m", "p", "alpha0", "offset"}

MB_DEFAULT_START = (-0.4, 0.6)
BUTTERFLY_DEFAULT_START = (0.9, -0.1)


class ConfigError(ValueError):
    pass


def _check_keys(tree: Mapping, allowed: set, where: str):
    unknown = set(tree) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def parse_seeds(value) -> list:
    """Seeds from a count, a list, an ``"A..B"`` string (inclusive) or ``{start, stop}``."""
    if isinstance(value, bool):
        raise ConfigError("seeds must be a count, list, range string or mapping")
    if isinstance(value, (int, np.integer)):
        if value < 1:
            raise ConfigError("seed count must be positive")
        return list(range(int(value)))
    if isinstance(value, str):
        m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", value)
        if not m:
            raise ConfigError(f"cannot parse seed range {value!r}; expected 'A..B'")
        a, b = int(m.group(1)), int(m.group(2))
        if b < a:
            raise ConfigError(f"empty seed range {value!r}")
        return list(range(a, b + 1))
    if isinstance(value, Mapping):
        _check_keys(value, {"start", "stop"}, "seeds")
        seeds = list(range(int(value.get("start", 0)), int(value["stop"])))
    else:
        seeds = [int(s) for s in value]
    if not seeds:
        raise ConfigError("seed list is empty")
    if len(set(seeds)) != len(seeds) or min(seeds) < 0:
        raise ConfigError("seeds must be distinct non-negative integers")
    return seeds


def build_schedule(tree: Mapping) -> StepSchedule:
    _check_keys(tree, SCHEDULE_KEYS, "schedule")
    kind = tree.get("kind", "power")
    if kind == "power":
        return StepSchedule.power(float(tree["gamma"]), float(tree.get("m", 0.0)), float(tree.get("p", 1.0)),
                                  int(tree.get("offset", 0)))
    if kind == "constant":
        return StepSchedule.constant(float(tree["alpha0"]))
    raise ConfigError(f"unknown schedule kind {kind!r}")


def build_noise(tree: Mapping) -> NoiseModel:
    _check_keys(tree, NOISE_KEYS, "noise")
    kind = tree.get("kind", "exact")
    if kind not in NOISE_KINDS:
        raise ConfigError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    kw = {k: tree[k] for k in NOISE_KEYS - {"kind"} if k in tree}
    return NoiseModel(kind, **kw)


def canonical_json(tree) -> str:
    return json.dumps(tree, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_sha(tree: Mapping) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON form, ignoring ``out``/``workers``."""
    core = {k: v for k, v in tree.items() if k not in ("out", "workers", "seeds")}
    return hashlib.sha256(canonical_json(core).encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    """A validated experiment description.

    ``tree`` keeps the parsed key-value form; ``text`` the original file
    contents when the config came from disk, so it can be echoed verbatim.
    """

    tree: dict
    text: str | None = None
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        self.tree = copy.deepcopy(dict(self.tree))
        validate(self.tree)
        self.seeds = parse_seeds(self.tree.get("seeds", 1))

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        tree = yaml.safe_load(text)
        if not isinstance(tree, Mapping):
            raise ConfigError("config must be a mapping at the top level")
        return cls(tree, text=text)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    @property
    def name(self) -> str:
        return str(self.tree.get("name", "experiment"))

    @property
    def method(self) -> str:
        return self.tree.get("method", "saddle")

    @property
    def sha(self) -> str:
        return config_sha(self.tree)

    def echo(self) -> str:
        """The config as given, or a YAML dump of the tree for programmatic configs."""
        if self.text is not None:
            return self.text
        return yaml.safe_dump(self.tree, sort_keys=True, default_flow_style=None)

    def with_overrides(self, **changes) -> "ExperimentConfig":
        tree = copy.deepcopy(self.tree)
        tree.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig(tree)

    # -- builders -------------------------------------------------------------
    def landscape(self):
        return build_landscape(self.tree["landscape"])

    def noise(self) -> NoiseModel:
        return build_noise(self.tree.get("noise", {"kind": "exact"}))

    def x_schedule(self) -> StepSchedule:
        return build_schedule(self.tree["x_schedule"])

    def eigen_config(self, landscape=None) -> EigenSearchConfig:
        tree = dict(self.tree.get("eigen", {}))
        kw = {}
        if "schedule" in tree:
            kw["schedule"] = build_schedule(tree.pop("schedule"))
        lip = tree.pop("lipschitz", self.tree.get("lipschitz"))
        if lip is None and landscape is not None:
            lip = landscape.lipschitz
        if lip is not None:
            kw["lipschitz"] = float(lip)
        for key in ("eps_v",):
            if key in tree:
                kw[key] = float(tree.pop(key))
        for key in ("max_inner", "max_restarts", "residual_check_period", "residual_samples"):
            if key in tree:
                kw[key] = None if tree[key] is None else int(tree.pop(key))
        return EigenSearchConfig(**kw)

    def search_config(self, landscape=None) -> SaddleSearchConfig:
        t = self.tree
        eig = self.eigen_config(landscape)
        lip = t.get("lipschitz")
        kw = dict(
            k=int(t.get("k", 1)), x_schedule=self.x_schedule(), eigen=eig,
            eps_x=float(t.get("eps_x", 1e-10)), lipschitz=None if lip is None else float(lip),
        )
        for key in ("max_outer", "grad_check_period", "grad_check_samples", "refresh_period",
                    "record_period"):
            if t.get(key) is not None:
                kw[key] = int(t[key])
        for key in ("check_exact", "stop_at_tolerance", "dense", "timing"):
            if key in t:
                kw[key] = bool(t[key])
        if "divergence_bound" in t:
            kw["divergence_bound"] = float(t["divergence_bound"])
        return SaddleSearchConfig(**kw)


def validate(tree: Mapping) -> None:
    """Reject malformed configs before any run starts.

    Builds every component once, which runs each module's own checks.
    """
    _check_keys(tree, TOP_KEYS, "config")
    for key in ("landscape", "x_schedule", "x0"):
        if key not in tree:
            raise ConfigError(f"config is missing {key!r}")
    method = tree.get("method", "saddle")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    lnd = tree["landscape"]
    if not isinstance(lnd, Mapping) or lnd.get("name") not in LANDSCAPE_NAMES:
        raise ConfigError(f"landscape.name must be one of {LANDSCAPE_NAMES}")
    if tree.get("hvp_mode") is not None and tree["hvp_mode"] not in HVP_MODES:
        raise ConfigError(f"unknown hvp_mode {tree['hvp_mode']!r}; expected one of {HVP_MODES}")
    if "eigen" in tree:
        _check_keys(tree["eigen"], EIGEN_KEYS, "eigen")
    parse_seeds(tree.get("seeds", 1))
    x0 = tree["x0"]
    if isinstance(x0, str):
        if x0 not in NAMED_STARTS:
            raise ConfigError(f"unknown named start {x0!r}; expected one of {NAMED_STARTS}")
    elif not np.all(np.isfinite(np.asarray(x0, dtype=float))):
        raise ConfigError("x0 must be finite")
    if method == "known_space" and lnd.get("name") != "lagrangian" and "known_space" not in tree:
        raise ConfigError("known_space needs a lagrangian landscape or an explicit known_space basis")
    if tree.get("workers") is not None and int(tree["workers"]) < 1:
        raise ConfigError("workers must be at least 1")
    # construct everything once so module-level preconditions fire here
    try:
        cfg = ExperimentConfig.__new__(ExperimentConfig)
        cfg.tree = dict(tree)
        landscape = cfg.landscape()
        cfg.noise()
        sc = cfg.search_config(landscape)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if not isinstance(x0, str) and np.asarray(x0, dtype=float).shape != (landscape.dim,):
        raise ConfigError(f"x0 has length {np.asarray(x0).size}, landscape dimension is {landscape.dim}")
    if method != "known_space" and not 0 <= sc.k < landscape.dim:
        raise ConfigError(f"k must satisfy 0 <= k < {landscape.dim}")
