"""Comparison functions of class K, K-infinity and KL.

Gains are kept as power laws ``k * r**p`` whenever possible; that family is
closed under composition and inversion, so small-gain decisions stay exact.
Everything else falls back to a :class:`Tabulated` function sampled on a
log-spaced grid.

Tabulated functions interpolate piecewise-linearly in log-log coordinates,
i.e. each segment is itself a power law. Composing with or taking maxima of
power laws is then exact between nodes, which is what keeps Omega-path
checks free of interpolation artefacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    DegenerateRange,
    EmptyList,
    NegativeArgument,
    NotInvertibleOnRange,
    OutOfTableRange,
)

DEFAULT_GRID_POINTS = 512
DEFAULT_GRID_RANGE = (1e-6, 1e6)
SAMPLED_SLACK = 1e-9

__all__ = [
    "KFun",
    "PowerLaw",
    "Tabulated",
    "KLFun",
    "ExpEnvelope",
    "ProductKL",
    "IDENTITY",
    "default_grid",
    "compose",
    "invert",
    "pointwise_max",
    "less_than_id",
    "kfun_from_json",
]


def default_grid(n_points: int = DEFAULT_GRID_POINTS, lo: float = DEFAULT_GRID_RANGE[0],
                 hi: float = DEFAULT_GRID_RANGE[1]) -> np.ndarray:
    """Log-spaced positive abscissae used for tabulating gains."""
    return np.logspace(np.log10(lo), np.log10(hi), n_points)


def _as_nonneg(r):
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise NegativeArgument(f"comparison functions are defined on [0, inf), got {r!r}")
    return arr


class KFun:
    """Abstract class-K function. Instances are immutable and callable."""

    def __call__(self, r):
        arr = _as_nonneg(r)
        out = self._eval(arr)
        return float(out) if np.ndim(out) == 0 else out

    def eval(self, r):
        return self(r)

    def _eval(self, r: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def is_unbounded(self) -> bool:
        return True

    def to_json(self) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class PowerLaw(KFun):
    """``r -> coeff * r**expo`` with positive coefficient and exponent (class K-infinity)."""

    coeff: float
    expo: float = 1.0

    def __post_init__(self):
        if not (self.coeff > 0 and np.isfinite(self.coeff)):
            raise ValueError(f"PowerLaw coeff must be positive and finite, got {self.coeff}")
        if not (self.expo > 0 and np.isfinite(self.expo)):
            raise ValueError(f"PowerLaw expo must be positive and finite, got {self.expo}")

    def _eval(self, r):
        return self.coeff * np.power(r, self.expo)

    def derivative(self, r):
        r = _as_nonneg(r)
        return self.coeff * self.expo * np.power(r, self.expo - 1.0)

    def to_json(self) -> dict:
        return {"kind": "power", "coeff": float(self.coeff), "expo": float(self.expo)}


IDENTITY = PowerLaw(1.0, 1.0)


@dataclass(frozen=True, eq=False)
class Tabulated(KFun):
    """Strictly increasing table through the origin.

    ``r`` and ``v`` include the node ``(0, 0)``. Between positive nodes the
    function is log-log linear; below the first positive node it continues
    the first segment's power law down to zero. Arguments above the last
    node raise :class:`OutOfTableRange` (``NotInvertibleOnRange`` for tables
    produced by :func:`invert`).
    """

    r: np.ndarray
    v: np.ndarray
    from_inverse: bool = False
    _log_r: np.ndarray = field(init=False, repr=False)
    _log_v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if r.ndim != 1 or r.shape != v.shape or r.size < 3:
            raise ValueError("table needs matching 1-D arrays with at least three nodes")
        if r[0] != 0.0 or v[0] != 0.0:
            raise ValueError("table must start at the origin (0, 0)")
        if np.any(np.diff(r) <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("table must be strictly increasing in both coordinates")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
            raise ValueError("table entries must be finite")
        r.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "_log_r", np.log(r[1:]))
        object.__setattr__(self, "_log_v", np.log(v[1:]))

    @classmethod
    def from_function(cls, fn, grid: np.ndarray | None = None) -> "Tabulated":
        grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
        grid = grid[grid > 0]
        vals = np.asarray(fn(grid), dtype=float)
        return cls(np.concatenate([[0.0], grid]), np.concatenate([[0.0], vals]))

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    @property
    def v_max(self) -> float:
        return float(self.v[-1])

    @property
    def is_unbounded(self) -> bool:
        return False

    def _eval(self, r):
        if np.any(r > self.r_max * (1 + 1e-12)):
            err = NotInvertibleOnRange if self.from_inverse else OutOfTableRange
            raise err(f"argument exceeds table range [0, {self.r_max:g}]")
        r = np.minimum(r, self.r_max)
        out = np.zeros_like(r, dtype=float)
        pos = r > 0
        if np.any(pos):
            lr = np.log(r[pos])
            inner = np.interp(lr, self._log_r, self._log_v)
            # continue the first segment's power law towards the origin
            slope = (self._log_v[1] - self._log_v[0]) / (self._log_r[1] - self._log_r[0])
            below = lr < self._log_r[0]
            inner = np.where(below, self._log_v[0] + slope * (lr - self._log_r[0]), inner)
            out[pos] = np.exp(inner)
        return out

    def to_json(self) -> dict:
        return {"kind": "table", "points": [[float(a), float(b)] for a, b in zip(self.r, self.v)]}

    def __eq__(self, other):
        return (isinstance(other, Tabulated) and np.array_equal(self.r, other.r)
                and np.array_equal(self.v, other.v))

    def __hash__(self):
        return hash((self.r.tobytes(), self.v.tobytes()))


def kfun_from_json(obj: dict | None) -> KFun | None:
    if obj is None:
        return None
    kind = obj.get("kind")
    if kind == "power":
        return PowerLaw(float(obj["coeff"]), float(obj.get("expo", 1.0)))
    if kind == "table":
        pts = np.asarray(obj["points"], dtype=float)
        return Tabulated(pts[:, 0], pts[:, 1])
    raise ValueError(f"unknown KFun kind {kind!r}")


def _shared_grid(fs: Sequence[KFun], grid: np.ndarray | None) -> np.ndarray:
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    grid = grid[grid > 0]
    for f in fs:
        if isinstance(f, Tabulated):
            grid = grid[grid <= f.r_max]
    if grid.size < 2:
        raise OutOfTableRange("tabulated operands leave no shared grid")
    return grid


def compose(f: KFun, g: KFun, grid: np.ndarray | None = None) -> KFun:
    """Return ``f o g``, i.e. ``r -> f(g(r))``."""
    if isinstance(f, PowerLaw) and isinstance(g, PowerLaw):
        return PowerLaw(f.coeff * g.coeff ** f.expo, f.expo * g.expo)
    if grid is None and isinstance(g, Tabulated):
        grid = g.r[1:]
    grid = _shared_grid([g], grid)
    inner = np.asarray(g(grid))
    if isinstance(f, Tabulated):
        keep = inner <= f.r_max
        grid, inner = grid[keep], inner[keep]
        if grid.size < 2:
            raise OutOfTableRange("composition leaves the outer table's range")
    return Tabulated(np.concatenate([[0.0], grid]), np.concatenate([[0.0], f(inner)]))


def invert(f: KFun) -> KFun:
    """Inverse of a K-infinity function (table range for tabulated ones)."""
    if isinstance(f, PowerLaw):
        return PowerLaw(f.coeff ** (-1.0 / f.expo), 1.0 / f.expo)
    if isinstance(f, Tabulated):
        return Tabulated(f.v.copy(), f.r.copy(), from_inverse=True)
    raise TypeError(f"cannot invert {type(f).__name__}")


def pointwise_max(fs: Iterable[KFun], grid: np.ndarray | None = None) -> KFun:
    fs = list(fs)
    if not fs:
        raise EmptyList("pointwise_max needs at least one function")
    if len(fs) == 1:
        return fs[0]
    if all(isinstance(f, PowerLaw) for f in fs) and len({f.expo for f in fs}) == 1:
        return max(fs, key=lambda f: f.coeff)
    grid = _shared_grid(fs, grid)
    vals = np.max([np.asarray(f(grid)) for f in fs], axis=0)
    return Tabulated(np.concatenate([[0.0], grid]), np.concatenate([[0.0], vals]))


def less_than_id(f: KFun, r_range: tuple[float, float] | None = None,
                 n_samples: int = 1000) -> bool:
    """Decide ``f(r) < r`` on ``r_range`` (all of ``(0, inf)`` when None).

    Power laws on the whole half-line are decided exactly; anything else is
    sampled at ``n_samples`` log-spaced points with a relative slack of 1e-9
    on the safe side.
    """
    if r_range is None:
        if isinstance(f, PowerLaw):
            return f.expo == 1.0 and f.coeff < 1.0
        if isinstance(f, Tabulated):
            r_range = (float(f.r[1]), f.r_max)
        else:
            raise DegenerateRange("global decision needs a power law or a table")
    lo, hi = float(r_range[0]), float(r_range[1])
    if not (0 < lo < hi) or not np.isfinite(hi):
        raise DegenerateRange(f"invalid range {r_range!r}")
    if n_samples < 2:
        raise DegenerateRange("need at least two samples")
    rs = np.logspace(np.log10(lo), np.log10(hi), n_samples)
    return bool(np.all(np.asarray(f(rs)) < rs * (1.0 - SAMPLED_SLACK)))


class KLFun:
    """Class-KL comparison function ``(r, t) -> value``."""

    def __call__(self, r, t):  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class ExpEnvelope(KLFun):
    """``beta(r, t) = M * exp(-a t) * r``."""

    M: float
    a: float

    def __post_init__(self):
        if not (self.M > 0 and self.a > 0):
            raise ValueError("ExpEnvelope needs M > 0 and a > 0")

    def __call__(self, r, t):
        r = _as_nonneg(r)
        return self.M * np.exp(-self.a * np.asarray(t, dtype=float)) * r

    def to_json(self) -> dict:
        return {"kind": "exp", "M": float(self.M), "a": float(self.a)}


@dataclass(frozen=True, eq=False)
class ProductKL(KLFun):
    """``beta(r, t) = zeta(t) * kappa(r)`` with ``zeta`` tabulated and decreasing to zero."""

    t: np.ndarray
    zeta: np.ndarray
    kappa: KFun

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        z = np.asarray(self.zeta, dtype=float)
        if t.shape != z.shape or np.any(np.diff(t) <= 0):
            raise ValueError("zeta table needs strictly increasing times")
        if np.any(np.diff(z) > 0) or np.any(z < 0):
            raise ValueError("zeta must be nonnegative and nonincreasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "zeta", z)

    def __call__(self, r, t):
        return np.interp(t, self.t, self.zeta, right=0.0) * self.kappa(r)
