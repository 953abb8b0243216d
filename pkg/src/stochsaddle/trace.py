"""Per-run diagnostic records and their CSV / JSON serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

BASE_COLUMNS = ("n", "alpha", "grad_norm_sq", "dist_sq", "energy")
TAIL_COLUMNS = ("eig_iters", "wall_ms")


def columns_for(k: int) -> list:
    return list(BASE_COLUMNS) + [f"q{i + 1}" for i in range(k)] + list(TAIL_COLUMNS)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ""
    return repr(value)


def _parse(text: str, integer: bool = False):
    if text == "":
        return None
    return int(text) if integer else float(text)


@dataclass
class Trace:
    """Diagnostics of one search run.

    ``rows`` holds one dict per record with keys from ``columns_for(k)``;
    ``q`` values are stored under ``q1 .. qk``. Missing quantities are
    ``None``. ``points`` and ``alphas`` are filled only in dense mode and
    hold every iterate ``x(0..N)`` and step ``alpha(0..N-1)``.
    """

    k: int
    seed: int = 0
    config_sha: str = ""
    landscape: str = ""
    status: str = ""
    rows: list = field(default_factory=list)
    points: np.ndarray | None = None
    alphas: np.ndarray | None = None

    @property
    def columns(self) -> list:
        return columns_for(self.k)

    def header(self) -> dict:
        return {
            "seed": int(self.seed),
            "config_sha": self.config_sha,
            "landscape": self.landscape,
            "status": self.status,
            "k": int(self.k),
        }

    def column(self, name: str) -> np.ndarray:
        """Column as a float array with ``nan`` for missing values."""
        return np.array([np.nan if r.get(name) is None else float(r[name]) for r in self.rows])

    @property
    def last(self) -> dict:
        return self.rows[-1] if self.rows else {}

    # -- CSV ------------------------------------------------------------------
    def to_csv(self) -> str:
        cols = self.columns
        lines = [f"# {key}={value}" for key, value in self.header().items()]
        lines.append(",".join(cols))
        for row in self.rows:
            lines.append(",".join(_fmt(row.get(c)) for c in cols))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "Trace":
        meta = {}
        body = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
            elif line:
                body.append(line)
        cols = body[0].split(",")
        k = int(meta.get("k", sum(c.startswith("q") for c in cols)))
        rows = []
        for line in body[1:]:
            fields = line.split(",")
            rows.append({c: _parse(v, c in ("n", "eig_iters")) for c, v in zip(cols, fields)})
        return cls(k=k, seed=int(meta.get("seed", 0)), config_sha=meta.get("config_sha", ""),
                   landscape=meta.get("landscape", ""), status=meta.get("status", ""), rows=rows)

    @classmethod
    def read_csv(cls, path) -> "Trace":
        with open(path) as fh:
            return cls.from_csv(fh.read())

    # -- JSON -----------------------------------------------------------------
    def to_json(self) -> str:
        cols = self.columns
        payload = dict(self.header())
        payload["columns"] = cols
        payload["rows"] = [[row.get(c) for c in cols] for row in self.rows]
        return json.dumps(payload, sort_keys=True, allow_nan=False, default=float) + "\n"

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "Trace":
        payload = json.loads(text)
        cols = payload["columns"]
        rows = [dict(zip(cols, vals)) for vals in payload["rows"]]
        return cls(k=int(payload["k"]), seed=int(payload["seed"]), config_sha=payload["config_sha"],
                   landscape=payload["landscape"], status=payload["status"], rows=rows)

    def same_records(self, other: "Trace") -> bool:
        return self.header() == other.header() and self.rows == other.rows
