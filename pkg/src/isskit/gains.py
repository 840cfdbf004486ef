"""Gain operator, small-gain decision and Omega-path construction.

Indices are 0-based in Python and 1-based in JSON. ``entries[(i, j)]`` holds
the gain by which subsystem ``j`` enters subsystem ``i`` (an edge j -> i of
the gain digraph).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from .certificate import Certificate
from .exceptions import DimensionMismatch, SmallGainViolated
from .kfun import (
    KFun,
    PowerLaw,
    Tabulated,
    compose,
    kfun_from_json,
    less_than_id,
    pointwise_max,
)

PATH_SLACK = 1e-9
BOUNDED_RANGE = (1e-3, 1e3)


@dataclass(frozen=True)
class GainMatrix:
    n: int
    entries: Mapping[tuple[int, int], KFun] = field(default_factory=dict)
    input_gains: tuple = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one subsystem")
        entries = dict(self.entries)
        for (i, j), g in entries.items():
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise DimensionMismatch(f"edge ({i}, {j}) outside a {self.n}-system")
            if i == j:
                raise ValueError(f"self-gain chi_{i + 1}{i + 1} is not allowed")
            if not isinstance(g, KFun):
                raise TypeError(f"gain ({i}, {j}) is not a KFun")
        inputs = tuple(self.input_gains) if self.input_gains else (None,) * self.n
        if len(inputs) != self.n:
            raise DimensionMismatch("input_gains must have one slot per subsystem")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "input_gains", inputs)

    @classmethod
    def from_dense(cls, gains: Sequence[Sequence[KFun | None]], input_gains=None) -> "GainMatrix":
        n = len(gains)
        entries = {(i, j): g for i, row in enumerate(gains) for j, g in enumerate(row)
                   if g is not None and i != j}
        return cls(n, entries, tuple(input_gains) if input_gains else ())

    def gain(self, i: int, j: int) -> KFun | None:
        return self.entries.get((i, j))

    def row(self, i: int) -> list[tuple[int, KFun]]:
        return sorted(((j, g) for (k, j), g in self.entries.items() if k == i), key=lambda p: p[0])

    def digraph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from((j, i) for (i, j) in self.entries)
        return g

    def to_json(self) -> dict:
        edges = [{"from": j + 1, "to": i + 1, "gain": g.to_json()}
                 for (i, j), g in sorted(self.entries.items())]
        return {"n": self.n, "edges": edges,
                "input_gains": [None if g is None else g.to_json() for g in self.input_gains]}

    @classmethod
    def from_json(cls, obj: dict) -> "GainMatrix":
        n = int(obj["n"])
        entries = {}
        for e in obj.get("edges", []):
            entries[(int(e["to"]) - 1, int(e["from"]) - 1)] = kfun_from_json(e["gain"])
        inputs = obj.get("input_gains") or [None] * n
        return cls(n, entries, tuple(kfun_from_json(g) for g in inputs))


def gamma_apply(G: GainMatrix, s) -> np.ndarray:
    """``Gamma(s)_i = max_j chi_ij(s_j)``, zero for rows without gains."""
    s = np.asarray(s, dtype=float)
    if s.shape != (G.n,):
        raise DimensionMismatch(f"expected a vector of length {G.n}, got shape {s.shape}")
    out = np.zeros(G.n)
    for (i, j), g in G.entries.items():
        out[i] = max(out[i], g(s[j]))
    return out


def _cycle_gain(G: GainMatrix, cycle: Sequence[int]) -> KFun:
    # cycle [i1, ..., ik] -> chi_{i1 i2} o chi_{i2 i3} o ... o chi_{ik i1}
    k = len(cycle)
    f = G.gain(cycle[0], cycle[1 % k])
    for m in range(1, k):
        f = compose(f, G.gain(cycle[m], cycle[(m + 1) % k]))
    return f


def _canonical(cycle: list[int]) -> list[int]:
    m = cycle.index(min(cycle))
    return cycle[m:] + cycle[:m]


def gain_cycles(G: GainMatrix) -> list[list[int]]:
    """Simple cycles ``[i1, ..., ik]`` such that every ``chi_{i_m i_{m+1}}`` is present."""
    cycles = []
    for c in nx.simple_cycles(G.digraph()):
        # networkx follows edges j -> i; reverse to list the chain of gains
        cycles.append(_canonical(list(reversed(c))))
    return sorted(cycles, key=lambda c: (len(c), c))


def _crossing_point(f: KFun) -> float | None:
    """Some r > 0 with f(r) >= r, if one is easy to find."""
    if isinstance(f, PowerLaw):
        if f.expo == 1.0:
            return 1.0 if f.coeff >= 1.0 else None
        r_star = f.coeff ** (-1.0 / (f.expo - 1.0))
        return 2.0 * r_star if f.expo > 1.0 else 0.5 * r_star
    rs = f.r[1:]
    hit = np.nonzero(np.asarray(f(rs)) >= rs)[0]
    return float(rs[hit[0]]) if hit.size else None


def _cycle_witness(G: GainMatrix, cycle: Sequence[int], r: float) -> np.ndarray:
    """Vector s with Gamma(s) >= s built backwards around a non-contracting cycle."""
    s = np.zeros(G.n)
    s[cycle[0]] = r
    k = len(cycle)
    for m in range(k - 1, 0, -1):
        s[cycle[m]] = G.gain(cycle[m], cycle[(m + 1) % k])(s[cycle[(m + 1) % k]])
    return s


def _gamma_batch(G: GainMatrix, S: np.ndarray) -> np.ndarray:
    out = np.zeros_like(S)
    for (i, j), g in G.entries.items():
        np.maximum(out[:, i], g(S[:, j]), out=out[:, i])
    return out


def _iterate_batch(G: GainMatrix, S: np.ndarray, max_iter: int, rtol: float) -> np.ndarray:
    """Per row: does ``Gamma^k(s)`` fall below ``rtol * max(s)`` within ``max_iter`` steps?

    A row is declared non-decaying early once an iterate dominates one of
    the previous ``n`` iterates componentwise; by monotonicity of Gamma the
    sequence then never drops below that earlier level.
    """
    S = np.array(S, dtype=float)
    target = rtol * np.max(S, axis=1)
    decays = target <= 0
    stuck = np.zeros(S.shape[0], dtype=bool)
    history = [S]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            live = ~(decays | stuck)
            if not live.any():
                break
            S = _gamma_batch(G, S)
            top = np.max(S, axis=1)
            decays |= live & (top <= target)
            stuck |= live & ~decays & (~np.isfinite(top) | (top > 1e300))
            for old in history:
                level = np.max(old, axis=1)
                stuck |= live & ~decays & (level > target) & np.all(S >= old, axis=1)
            history = (history + [S])[-G.n:]
    return decays


def gamma_iteration_decays(G: GainMatrix, s0, max_iter: int = 10_000, rtol: float = 1e-6) -> bool:
    """Monotone-iteration oracle: does ``Gamma^k(s0)`` fall below ``rtol * max(s0)``?"""
    s0 = np.asarray(s0, dtype=float)
    if s0.shape != (G.n,):
        raise DimensionMismatch(f"expected a vector of length {G.n}, got shape {s0.shape}")
    return bool(_iterate_batch(G, s0[None, :], max_iter, rtol)[0])


def iteration_oracle(G: GainMatrix, n_starts: int = 50, rng=None, lo: float = 1e-3,
                     hi: float = 1e3, max_iter: int = 10_000) -> bool:
    """Small-gain verdict from iterating Gamma from log-uniform random starts."""
    rng = np.random.default_rng(rng)
    starts = np.vstack([np.ones((1, G.n)),
                        10.0 ** rng.uniform(np.log10(lo), np.log10(hi), size=(n_starts - 1, G.n))])
    return bool(np.all(_iterate_batch(G, starts, max_iter, 1e-6)))


def small_gain_check(G: GainMatrix, cross_check: bool = True, n_starts: int = 50,
                     seed: int = 0, bounded_range: tuple[float, float] = BOUNDED_RANGE) -> Certificate:
    """Decide ``Gamma(s) not>= s`` for all ``s != 0`` by cycle enumeration.

    Each simple cycle's composite gain must lie strictly below the identity.
    For power laws that is exact (composite exponent 1 and coefficient < 1);
    composites with another exponent fail globally, and their verdict on
    ``bounded_range`` is reported separately. When ``cross_check`` is set the
    monotone-iteration oracle runs as well and its verdict is recorded.
    """
    cycles = gain_cycles(G)
    records = []
    verdict = True
    bounded_ok = True
    worst = np.inf
    witness = None
    for cyc in cycles:
        f = _cycle_gain(G, cyc)
        ok = less_than_id(f)
        rs = np.logspace(np.log10(bounded_range[0]), np.log10(bounded_range[1]), 200)
        margin = float(np.min(1.0 - np.asarray(f(rs)) / rs))
        if isinstance(f, PowerLaw) and f.expo == 1.0:
            margin = 1.0 - f.coeff
        local_ok = less_than_id(f, bounded_range, 200)
        rec = {"nodes": [c + 1 for c in cyc]}
        if isinstance(f, PowerLaw):
            rec.update(coeff=f.coeff, expo=f.expo)
        rec.update(verdict=bool(ok), bounded_range_verdict=bool(local_ok), margin=margin)
        records.append(rec)
        worst = min(worst, margin)
        verdict &= ok
        bounded_ok &= local_ok
        if not ok and witness is None:
            r = _crossing_point(f)
            if r is not None:
                witness = _cycle_witness(G, cyc, r)
    cert = Certificate(
        check="small_gain",
        verdict=bool(verdict),
        samples=len(cycles),
        worst_margin=float(worst) if cycles else 1.0,
        details={"cycles": records, "bounded_range": list(bounded_range),
                 "bounded_range_verdict": bool(bounded_ok)},
    )
    if witness is not None:
        cert.add_witness({"s": witness.tolist(), "gamma_s": gamma_apply(G, witness).tolist()})
    if cross_check:
        oracle = iteration_oracle(G, n_starts=n_starts, rng=seed)
        cert.details["iteration_oracle"] = bool(oracle)
        cert.details["oracle_agrees"] = bool(oracle == verdict)
    return cert


@dataclass(frozen=True)
class OmegaPath:
    sigmas: tuple
    provenance: str = "UserSupplied"
    verified: bool = False

    @property
    def n(self) -> int:
        return len(self.sigmas)

    def __call__(self, r) -> np.ndarray:
        return np.array([s(r) for s in self.sigmas])

    def to_json(self) -> dict:
        return {"provenance": self.provenance, "verified": self.verified,
                "sigmas": [s.to_json() for s in self.sigmas]}


def _prune(terms: Iterable[KFun]) -> list[KFun]:
    best: dict[float, PowerLaw] = {}
    other = []
    for t in terms:
        if isinstance(t, PowerLaw):
            if t.expo not in best or t.coeff > best[t.expo].coeff:
                best[t.expo] = t
        else:
            other.append(t)
    return [best[e] for e in sorted(best)] + other


def omega_path_build(G: GainMatrix, a=None, grid=None, r_samples: int = 100) -> OmegaPath:
    """Omega-path ``sigma(t) = Q(a t)`` with ``Q(x) = MAX{x, Gamma(x), ..., Gamma^{n-1}(x)}``.

    Each component of ``Gamma^k(a t)`` is a maximum of compositions along
    walks of length k, so the path is assembled symbolically and tabulated
    only when exponents differ.
    """
    if not small_gain_check(G, cross_check=False).verdict:
        raise SmallGainViolated("gain operator violates the small-gain condition")
    a = np.ones(G.n) if a is None else np.asarray(a, dtype=float)
    if a.shape != (G.n,) or np.any(a <= 0):
        raise DimensionMismatch("anchor vector must be positive with one entry per subsystem")
    layer = [[PowerLaw(float(a[i]), 1.0)] for i in range(G.n)]
    collected = [list(layer[i]) for i in range(G.n)]
    for _ in range(G.n - 1):
        nxt = []
        for i in range(G.n):
            terms = [compose(g, t) for j, g in G.row(i) for t in layer[j]]
            nxt.append(_prune(terms))
        layer = nxt
        for i in range(G.n):
            collected[i] = _prune(collected[i] + layer[i])
    sigmas = tuple(pointwise_max(c, grid=grid) for c in collected)
    path = OmegaPath(sigmas, provenance="Constructed")
    cert = omega_path_verify(G, path, r_samples=r_samples)
    if not cert.verdict:  # pragma: no cover - guaranteed by construction
        raise SmallGainViolated(f"constructed path failed verification: {cert.worst_margin}")
    return dataclasses.replace(path, verified=True)


def omega_path_verify(G: GainMatrix, path: OmegaPath, r_samples: int = 100,
                      r_range: tuple[float, float] = BOUNDED_RANGE) -> Certificate:
    """Check ``Gamma(sigma(r)) <= sigma(r)`` componentwise with relative slack 1e-9."""
    if path.n != G.n:
        raise DimensionMismatch("path and gain matrix sizes differ")
    rs = np.logspace(np.log10(r_range[0]), np.log10(r_range[1]), r_samples)
    worst = np.inf
    cert = Certificate(check="omega_path", verdict=True, samples=r_samples, tolerance=PATH_SLACK,
                       parameters={"r_range": list(r_range)})
    for r in rs:
        sig = path(r)
        margin = (sig - gamma_apply(G, sig)) / sig
        m = float(np.min(margin))
        worst = min(worst, m)
        if m < -PATH_SLACK:
            cert.add_witness({"r": float(r), "component": int(np.argmin(margin)) + 1,
                              "sigma": sig.tolist(), "gamma_sigma": gamma_apply(G, sig).tolist()})
    cert.worst_margin = float(worst)
    cert.verdict = bool(worst >= -PATH_SLACK)
    return cert


def mark_verified(G: GainMatrix, path: OmegaPath, **kwargs) -> OmegaPath:
    """Return ``path`` flagged as verified, or raise if the check fails."""
    cert = omega_path_verify(G, path, **kwargs)
    if not cert.verdict:
        raise SmallGainViolated(f"path violates Gamma(sigma) <= sigma (worst {cert.worst_margin:.3g})")
    return dataclasses.replace(path, verified=True)
