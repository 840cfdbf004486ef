"""Method-of-lines simulator for coupled 1-D reaction-diffusion systems.

Every species lives on the same uniform grid of interior nodes
``x_i = i h``, ``h = d / (n_interior + 1)``. Dirichlet species use the
standard (1, -2, 1) stencil; Neumann species reflect across the half cell,
so their first and last rows read (-1, 1) and the matrix stays symmetric
with zero row sums. All spatial integrals use the uniform weight ``h``,
which is the composite trapezoid rule for fields padded by zero boundary
values and makes the discrete Neumann mean an exact invariant.

Time stepping is first-order IMEX: diffusion and linear coupling are
implicit, reactions and inputs explicit.
"""

from __future__ import annotations

import ast
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import (
    EigensolverFailure,
    LinearSolveFailure,
    RegistryUnknown,
    ShapeMismatch,
)

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
DEFAULT_M_MAX = 1e8
NORMS = ("L2", "L4", "H10", "Sup")


@dataclass(frozen=True)
class Grid1D:
    d: float
    n_interior: int

    def __post_init__(self):
        if self.n_interior < 3:
            raise ValueError("n_interior must be at least 3")
        if not self.d > 0:
            raise ValueError("domain length must be positive")

    @property
    def h(self) -> float:
        return self.d / (self.n_interior + 1)

    @property
    def x(self) -> np.ndarray:
        return self.h * np.arange(1, self.n_interior + 1)


# --- nonlinear map registry -------------------------------------------------

@dataclass(frozen=True)
class NonlinearMap:
    name: str
    fn: Callable
    antiderivative: Callable | None = None
    odd_monotone: bool = False


def _signed_power(s, m):
    return np.sign(s) * np.abs(s) ** m


REGISTRY: dict[str, NonlinearMap] = {
    "none": NonlinearMap("none", lambda s, p=None: np.zeros_like(s),
                         lambda s, p=None: np.zeros_like(s)),
    "identity": NonlinearMap("identity", lambda s, p=None: s, lambda s, p=None: 0.5 * s ** 2, True),
    "cubic_odd": NonlinearMap("cubic_odd", lambda s, p=None: s ** 3,
                              lambda s, p=None: 0.25 * s ** 4, True),
    "sqrt_abs": NonlinearMap("sqrt_abs", lambda s, p=None: np.sqrt(np.abs(s))),
    "square": NonlinearMap("square", lambda s, p=None: s ** 2),
    # u -> u^m, extended oddly to negative arguments
    "power_m": NonlinearMap("power_m", lambda s, p=1.0: _signed_power(s, p),
                            lambda s, p=1.0: np.abs(s) ** (p + 1.0) / (p + 1.0), True),
}


def registry_map(name: str) -> NonlinearMap:
    try:
        return REGISTRY[name]
    except KeyError:
        raise RegistryUnknown(f"unknown nonlinear map {name!r}; known: {sorted(REGISTRY)}") from None


@dataclass(frozen=True)
class ReactionTerm:
    """``coeff * map(s_source)`` added to the equation of ``target``."""

    target: int
    source: int
    map: str
    coeff: float = 1.0
    param: float | None = None

    def evaluate(self, s: np.ndarray) -> np.ndarray:
        m = registry_map(self.map)
        return self.coeff * (m.fn(s) if self.param is None else m.fn(s, self.param))


@dataclass(frozen=True)
class InputTerm:
    """``coeff * map(u_channel)`` added to the equation of ``target``."""

    target: int
    channel: int
    map: str = "identity"
    coeff: float = 1.0
    param: float | None = None

    def evaluate(self, u: np.ndarray) -> np.ndarray:
        m = registry_map(self.map)
        return self.coeff * (m.fn(u) if self.param is None else m.fn(u, self.param))


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Coupled system ``ds_i/dt = c_i s_i'' + sum_j R_ij s_j + reactions + inputs``."""

    diffusion: tuple
    bc: tuple = ()
    linear_coupling: np.ndarray | None = None
    reactions: tuple = ()
    inputs: tuple = ()
    n_channels: int = 0
    _operators: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        diff = tuple(float(c) for c in self.diffusion)
        n = len(diff)
        if n == 0 or any(c <= 0 for c in diff):
            raise ValueError("diffusion coefficients must be positive")
        bc = tuple(self.bc) if self.bc else (DIRICHLET,) * n
        if len(bc) != n or any(b not in (DIRICHLET, NEUMANN) for b in bc):
            raise ValueError(f"bc must list {DIRICHLET!r}/{NEUMANN!r} per species")
        R = np.zeros((n, n)) if self.linear_coupling is None else np.array(self.linear_coupling, dtype=float)
        if R.shape != (n, n):
            raise ShapeMismatch(f"linear coupling must be {n}x{n}")
        R.setflags(write=False)
        reactions = tuple(self.reactions)
        inputs = tuple(self.inputs)
        for t in reactions:
            registry_map(t.map)
            if not (0 <= t.target < n and 0 <= t.source < n):
                raise ShapeMismatch(f"reaction {t} refers to a missing species")
        n_ch = max([self.n_channels] + [t.channel + 1 for t in inputs])
        for t in inputs:
            registry_map(t.map)
            if not 0 <= t.target < n:
                raise ShapeMismatch(f"input {t} refers to a missing species")
        object.__setattr__(self, "diffusion", diff)
        object.__setattr__(self, "bc", bc)
        object.__setattr__(self, "linear_coupling", R)
        object.__setattr__(self, "reactions", reactions)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "n_channels", int(n_ch))

    @property
    def n_species(self) -> int:
        return len(self.diffusion)

    def linear_part(self) -> "SystemSpec":
        """Same diffusion and coupling with reactions and inputs dropped."""
        return SystemSpec(self.diffusion, self.bc, self.linear_coupling)

    def self_reaction(self, species: int) -> list[ReactionTerm]:
        return [t for t in self.reactions if t.target == species and t.source == species]

    def to_json(self) -> dict:
        return {
            "species": [{"diffusion": c, "bc": b} for c, b in zip(self.diffusion, self.bc)],
            "linear_coupling": self.linear_coupling.tolist(),
            "reactions": [{"target": t.target + 1, "source": t.source + 1, "map": t.map,
                           "coeff": t.coeff, "param": t.param} for t in self.reactions],
            "inputs": [{"target": t.target + 1, "channel": t.channel + 1, "map": t.map,
                        "coeff": t.coeff, "param": t.param} for t in self.inputs],
            "n_channels": self.n_channels,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SystemSpec":
        species = obj["species"]
        reactions = tuple(ReactionTerm(int(r["target"]) - 1, int(r.get("source", r["target"])) - 1,
                                       r["map"], float(r.get("coeff", 1.0)), r.get("param"))
                          for r in obj.get("reactions", []))
        inputs = tuple(InputTerm(int(r["target"]) - 1, int(r.get("channel", 1)) - 1,
                                 r.get("map", "identity"), float(r.get("coeff", 1.0)), r.get("param"))
                       for r in obj.get("inputs", []))
        return cls(tuple(float(s["diffusion"]) for s in species),
                   tuple(s.get("bc", DIRICHLET).lower() for s in species),
                   obj.get("linear_coupling"), reactions, inputs, int(obj.get("n_channels", 0)))


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, ndmin=2)
        if v.shape[1] != self.grid.n_interior:
            raise ShapeMismatch(f"field has {v.shape[1]} nodes, grid has {self.grid.n_interior}")
        object.__setattr__(self, "values", v)

    @property
    def n_species(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, grid: Grid1D, n_species: int = 1) -> "Field":
        return cls(grid, np.zeros((n_species, grid.n_interior)))

    @classmethod
    def from_functions(cls, grid: Grid1D, fns: Sequence[Callable]) -> "Field":
        return cls(grid, np.array([np.broadcast_to(f(grid.x), grid.x.shape) for f in fns]))


# --- inputs -----------------------------------------------------------------

_EXPR_NAMES = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs,
               "tanh": np.tanh, "log": np.log, "pi": math.pi, "minimum": np.minimum,
               "maximum": np.maximum, "heaviside": lambda z: np.heaviside(z, 1.0)}
_EXPR_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
               ast.Constant, ast.operator, ast.unaryop)


def compile_expression(expr: str, extra: dict | None = None) -> Callable:
    """Compile an arithmetic expression in ``x``, ``t`` and ``d`` into a vectorized callable."""
    tree = ast.parse(expr, mode="eval")
    allowed = set(_EXPR_NAMES) | {"x", "t", "d"} | set(extra or {})
    for node in ast.walk(tree):
        if not isinstance(node, _EXPR_NODES):
            raise ValueError(f"unsupported syntax in expression {expr!r}")
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ValueError(f"unknown name {node.id!r} in expression {expr!r}")
    code = compile(tree, "<expr>", "eval")
    env = {"__builtins__": {}, **_EXPR_NAMES, **(extra or {})}

    def fn(x, t=0.0, d=1.0):
        return eval(code, env, {"x": x, "t": t, "d": d})

    return fn


class InputSignal:
    """Input ``u(x, t)`` per channel, evaluated as an array ``(n_channels, n_interior)``."""

    def __init__(self, fn: Callable[[np.ndarray, float], np.ndarray], n_channels: int,
                 description: str = "callable"):
        self._fn = fn
        self.n_channels = n_channels
        self.description = description

    def __call__(self, grid: Grid1D, t: float) -> np.ndarray:
        out = np.asarray(self._fn(grid.x, t), dtype=float)
        return np.broadcast_to(out, (self.n_channels, grid.n_interior)).copy() if out.ndim < 2 \
            else out.reshape(self.n_channels, grid.n_interior)

    @classmethod
    def zero(cls, n_channels: int = 0) -> "InputSignal":
        return cls(lambda x, t: np.zeros((n_channels, x.size)), n_channels, "zero")

    @classmethod
    def constant(cls, values) -> "InputSignal":
        """Time-invariant input; ``values`` is one scalar or one profile per channel."""
        vals = np.atleast_1d(np.asarray(values, dtype=float))
        n_ch = vals.shape[0]
        if vals.ndim == 1:
            return cls(lambda x, t: np.repeat(vals[:, None], x.size, axis=1), n_ch, "constant")
        return cls(lambda x, t: vals, n_ch, "constant")

    @classmethod
    def piecewise_constant(cls, times, values) -> "InputSignal":
        """Right-continuous table: ``values[k]`` holds on ``[times[k], times[k+1])``."""
        times = np.asarray(times, dtype=float)
        vals = [np.atleast_1d(np.asarray(v, dtype=float)) for v in values]
        if len(vals) != times.size or np.any(np.diff(times) <= 0):
            raise ValueError("piecewise table needs increasing times, one value per time")
        n_ch = vals[0].shape[0]

        def fn(x, t):
            k = max(int(np.searchsorted(times, t, side="right")) - 1, 0)
            v = vals[k]
            return np.repeat(v[:, None], x.size, axis=1) if v.ndim == 1 else v

        return cls(fn, n_ch, "piecewise_constant")

    @classmethod
    def from_expressions(cls, exprs: Sequence[str], d: float) -> "InputSignal":
        fns = [compile_expression(e) for e in exprs]

        def fn(x, t):
            return np.array([np.broadcast_to(f(x, t, d), x.shape) for f in fns])

        return cls(fn, len(fns), "; ".join(exprs))


# --- operators ---------------------------------------------------------------

def laplacian_matrix(grid: Grid1D, bc: str = DIRICHLET, c: float = 1.0) -> sp.csr_matrix:
    """Second-order central-difference ``c d^2/dx^2`` on the interior nodes."""
    n, h = grid.n_interior, grid.h
    main = -2.0 * np.ones(n)
    if bc == NEUMANN:
        main[0] = main[-1] = -1.0
    elif bc != DIRICHLET:
        raise ValueError(f"unknown boundary condition {bc!r}")
    off = np.ones(n - 1)
    return (c / h ** 2) * sp.diags([off, main, off], [-1, 0, 1], format="csr")


def dirichlet_eigenvalues(grid: Grid1D, c: float = 1.0) -> np.ndarray:
    """Closed-form spectrum ``-(4c/h^2) sin^2(k pi h / (2d))``, k = 1..n."""
    k = np.arange(1, grid.n_interior + 1)
    return -(4.0 * c / grid.h ** 2) * np.sin(k * np.pi * grid.h / (2.0 * grid.d)) ** 2


def linear_operator(spec: SystemSpec, grid: Grid1D) -> sp.csr_matrix:
    """Discretized generator of diffusion plus linear coupling on stacked species."""
    cached = spec._operators.get(grid)
    if cached is not None:
        return cached
    blocks = sp.block_diag([laplacian_matrix(grid, b, c) for c, b in zip(spec.diffusion, spec.bc)])
    coupling = sp.kron(sp.csr_matrix(spec.linear_coupling), sp.identity(grid.n_interior))
    op = sp.csr_matrix(blocks + coupling)
    spec._operators[grid] = op
    return op


def nonlinear_part(spec: SystemSpec, values: np.ndarray, u: np.ndarray | None) -> np.ndarray:
    out = np.zeros_like(values)
    for t in spec.reactions:
        out[t.target] += t.evaluate(values[t.source])
    if spec.inputs:
        if u is None:
            raise ShapeMismatch("system has input terms but no input was supplied")
        u = np.asarray(u, dtype=float).reshape(-1, values.shape[1])
        for t in spec.inputs:
            out[t.target] += t.evaluate(u[t.channel])
    return out


def _check_state(spec: SystemSpec, state: Field) -> None:
    if state.n_species != spec.n_species:
        raise ShapeMismatch(f"state has {state.n_species} species, spec has {spec.n_species}")


def rhs(spec: SystemSpec, state: Field, u_at_t=None) -> Field:
    """Right-hand side of the semi-discretized system at one instant."""
    _check_state(spec, state)
    L = linear_operator(spec, state.grid)
    lin = (L @ state.values.ravel()).reshape(state.values.shape)
    return Field(state.grid, lin + nonlinear_part(spec, state.values, u_at_t))


class IMEXStepper:
    """Factorizes ``I - dt L`` once and advances states by IMEX Euler steps."""

    def __init__(self, spec: SystemSpec, grid: Grid1D, dt: float):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.spec, self.grid, self.dt = spec, grid, float(dt)
        self.L = linear_operator(spec, grid)
        size = self.L.shape[0]
        try:
            self._lu = spla.splu(sp.csc_matrix(sp.identity(size) - self.dt * self.L))
        except RuntimeError as exc:
            raise LinearSolveFailure(str(exc)) from exc

    def advance(self, values: np.ndarray, u: np.ndarray | None) -> np.ndarray:
        explicit = values + self.dt * nonlinear_part(self.spec, values, u)
        out = self._lu.solve(explicit.ravel())
        if not np.all(np.isfinite(out)):
            raise LinearSolveFailure("non-finite values after implicit solve")
        return out.reshape(values.shape)


def step(spec: SystemSpec, state: Field, u=None, t: float = 0.0, dt: float = 1e-3) -> Field:
    """One IMEX Euler step: ``(I - dt L) s+ = s + dt N(s, u)``.

    ``u`` may be an array of per-channel values or an :class:`InputSignal`
    (evaluated at ``t``).
    """
    _check_state(spec, state)
    if isinstance(u, InputSignal):
        u = u(state.grid, t)
    return Field(state.grid, IMEXStepper(spec, state.grid, dt).advance(state.values, u))


def default_dt(spec: SystemSpec, grid: Grid1D) -> float:
    return 1e-3 * (grid.d / math.pi) ** 2 / max(spec.diffusion)


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    input: InputSignal | None = None
    blowup: float | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.states) != self.times.size:
            raise ShapeMismatch("states and times are misaligned")

    @property
    def grid(self) -> Grid1D:
        return self.states[0].grid

    @property
    def final(self) -> Field:
        return self.states[-1]

    def norms(self, which: str = "L2", species: int | None = None) -> np.ndarray:
        return np.array([norm(s, which, species) for s in self.states])

    def write_csv(self, path) -> Path:
        """Long-format CSV ``t,species,i,x,value`` (species and i are 1-based)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        x = self.grid.x
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "species", "i", "x", "value"])
            for t, st in zip(self.times, self.states):
                for k, row in enumerate(st.values):
                    for i, (xi, v) in enumerate(zip(x, row)):
                        w.writerow([_g(t), k + 1, i + 1, _g(xi), _g(v)])
        return path

    def write_norms_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "species", "L2", "L4", "H10", "Sup"])
            for t, st in zip(self.times, self.states):
                for k in range(st.n_species):
                    w.writerow([_g(t), k + 1] + [_g(norm(st, nm, k)) for nm in NORMS])
        return path


def _g(x) -> str:
    return format(float(x), ".17g")


def simulate(spec: SystemSpec, initial: Field, input: InputSignal | None = None,
             t_end: float = 1.0, dt: float | None = None, M_max: float = DEFAULT_M_MAX,
             record_every: int = 1, t_start: float = 0.0) -> Trajectory:
    """Integrate from ``t_start`` to ``t_end``; halts and flags blow-up when the sup-norm exceeds ``M_max``."""
    _check_state(spec, initial)
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    grid = initial.grid
    dt = default_dt(spec, grid) if dt is None else float(dt)
    n_steps = max(int(round((t_end - t_start) / dt)), 1)
    if input is None:
        input = InputSignal.zero(spec.n_channels)
    stepper = IMEXStepper(spec, grid, dt)
    values = initial.values.copy()
    times, states = [t_start], [Field(grid, values.copy())]
    blowup = None
    for k in range(n_steps):
        t = t_start + k * dt
        u = input(grid, t) if spec.inputs else None
        values = stepper.advance(values, u)
        t_next = t_start + (k + 1) * dt
        if not np.all(np.isfinite(values)) or np.max(np.abs(values)) > M_max:
            blowup = t_next
            times.append(t_next)
            states.append(Field(grid, values.copy()))
            break
        if (k + 1) % record_every == 0 or k == n_steps - 1:
            times.append(t_next)
            states.append(Field(grid, values.copy()))
    return Trajectory(np.array(times), states, input, blowup)


# --- norms and spectra ----------------------------------------------------------

def _padded(row: np.ndarray, bc: str) -> np.ndarray:
    if bc == NEUMANN:
        return np.concatenate([[row[0]], row, [row[-1]]])
    return np.concatenate([[0.0], row, [0.0]])


def norm(state: Field, which: str = "L2", species: int | None = 0, bc: str | None = None) -> float:
    """Discrete L2, L4, H1_0 (gradient) or sup norm of one species.

    ``species=None`` combines all species (root-sum of squares for L2/H10,
    fourth-root sum for L4, maximum for Sup). The boundary convention for
    H10 defaults to Dirichlet.
    """
    if species is None:
        parts = [norm(state, which, k, bc) for k in range(state.n_species)]
        if which == "Sup":
            return max(parts)
        p = 4 if which == "L4" else 2
        return float(sum(q ** p for q in parts) ** (1.0 / p))
    row = state.values[species]
    h = state.grid.h
    if which == "L2":
        return float(math.sqrt(h * np.dot(row, row)))
    if which == "L4":
        return float((h * np.sum(row ** 4)) ** 0.25)
    if which == "H10":
        diff = np.diff(_padded(row, bc or DIRICHLET)) / h
        return float(math.sqrt(h * np.dot(diff, diff)))
    if which == "Sup":
        return float(np.max(np.abs(row)))
    raise ValueError(f"unknown norm {which!r}; choose from {NORMS}")


def spectrum(spec: SystemSpec, grid: Grid1D) -> np.ndarray:
    """Eigenvalues of the discretized linear generator, sorted by decreasing real part."""
    L = linear_operator(spec, grid).toarray()
    try:
        if np.allclose(L, L.T, rtol=0, atol=1e-12 * np.abs(L).max()):
            ev = scipy.linalg.eigvalsh(L).astype(complex)
        else:
            ev = scipy.linalg.eigvals(L)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigensolverFailure(str(exc)) from exc
    return ev[np.argsort(-ev.real, kind="stable")]


def max_real_eigenvalue(spec: SystemSpec, grid: Grid1D) -> float:
    return float(spectrum(spec, grid)[0].real)
