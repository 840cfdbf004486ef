"""Numerical ISS-Lyapunov certificates on discretized states.

Every Lyapunov function here maps a :class:`~isskit.pde.Field` to a number
and exposes its Euclidean gradient with respect to the node values
(quadrature weights already folded in). The analytic Lie derivative is the
gradient paired with the semi-discrete right-hand side; the finite
difference route pushes the state through one short IMEX step instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import pde
from .certificate import Certificate
from .exceptions import MethodUnavailable, NoPositiveRadius, NotHurwitz, UnverifiedPath
from .gains import GainMatrix, OmegaPath
from .kfun import KFun, PowerLaw, Tabulated, compose, invert, pointwise_max
from .pde import DIRICHLET, NEUMANN, Field, Grid1D, SystemSpec

FD_RELATIVE_STEP = 1e-6
ANALYTIC = "analytic"
FINITE_DIFF = "finite_diff"


def _unit_laplacian_apply(row: np.ndarray, h: float, bc: str) -> np.ndarray:
    padded = pde._padded(row, bc)
    return (padded[2:] - 2.0 * padded[1:-1] + padded[:-2]) / h ** 2


class LyapunovFn:
    """Base class. ``psi1``/``psi2`` sandwich V, ``alpha`` is the decay rate, ``chi`` the gain."""

    psi1: KFun | None = None
    psi2: KFun | None = None
    alpha: KFun | None = None
    chi: KFun | None = None

    def value(self, state: Field) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def gradient(self, state: Field) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def state_norm(self, state: Field) -> float:
        return pde.norm(state, "L2", None)

    def lie(self, spec: SystemSpec, state: Field, u=None) -> float:
        f = pde.rhs(spec, state, u).values
        return float(np.sum(self.gradient(state) * f))

    def __call__(self, state: Field) -> float:
        return self.value(state)


@dataclass(frozen=True, eq=False)
class QuadraticLF(LyapunovFn):
    """``V(x) = <P x, x>`` on the stacked species vector.

    All quadrature weights are the uniform grid spacing ``h``, so the
    discrete inner product is ``h x.y`` and ``V = h x^T P x``.
    """

    P: np.ndarray
    h: float
    psi1: KFun | None = None
    psi2: KFun | None = None
    alpha: KFun | None = None
    chi: KFun | None = None

    def value(self, state):
        x = state.values.ravel()
        return float(self.h * x @ (self.P @ x))

    def gradient(self, state):
        x = state.values.ravel()
        return (2.0 * self.h * (self.P @ x)).reshape(state.values.shape)

    @property
    def eig_bounds(self) -> tuple[float, float]:
        ev = scipy.linalg.eigvalsh(self.P)
        return float(ev[0]), float(ev[-1])


@dataclass(frozen=True, eq=False)
class EnergyLF(LyapunovFn):
    """``V(s) = 1/2 ||s'||^2 + int F(s)`` where ``F' = f`` is the damping reaction.

    The species evolves as ``s_t = c s'' - f(s) + ...``; ``f`` is given by a
    registry map id with coefficient ``f_coeff``.
    """

    species: int
    f_map: str = "cubic_odd"
    f_coeff: float = 1.0
    f_param: float | None = None
    bc: str = DIRICHLET
    psi1: KFun | None = None
    psi2: KFun | None = None
    alpha: KFun | None = None
    chi: KFun | None = None

    def _f(self, s):
        m = pde.registry_map(self.f_map)
        return self.f_coeff * (m.fn(s) if self.f_param is None else m.fn(s, self.f_param))

    def _F(self, s):
        m = pde.registry_map(self.f_map)
        return self.f_coeff * (m.antiderivative(s) if self.f_param is None
                               else m.antiderivative(s, self.f_param))

    def value(self, state):
        h = state.grid.h
        s = state.values[self.species]
        grad_part = 0.5 * pde.norm(state, "H10", self.species, self.bc) ** 2
        return float(grad_part + h * np.sum(self._F(s)))

    def gradient(self, state):
        h = state.grid.h
        s = state.values[self.species]
        g = np.zeros_like(state.values)
        g[self.species] = h * (-_unit_laplacian_apply(s, h, self.bc) + self._f(s))
        return g

    def state_norm(self, state):
        return pde.norm(state, "H10", self.species, self.bc)


@dataclass(frozen=True, eq=False)
class NormPowerLF(LyapunovFn):
    """``V = scale * ||s_species||^q`` for an L2, L4 or H10 norm."""

    which: str
    q: float
    species: int = 0
    scale: float = 1.0
    bc: str = DIRICHLET
    psi1: KFun | None = None
    psi2: KFun | None = None
    alpha: KFun | None = None
    chi: KFun | None = None

    def value(self, state):
        return float(self.scale * pde.norm(state, self.which, self.species, self.bc) ** self.q)

    def gradient(self, state):
        h = state.grid.h
        s = state.values[self.species]
        N = pde.norm(state, self.which, self.species, self.bc)
        g = np.zeros_like(state.values)
        if N == 0.0:
            return g
        if self.which == "L2":
            dN = h * s / N
        elif self.which == "L4":
            dN = h * s ** 3 / N ** 3
        elif self.which == "H10":
            dN = -h * _unit_laplacian_apply(s, h, self.bc) / N
        else:
            raise MethodUnavailable(f"{self.which} norm is not differentiable")
        g[self.species] = self.scale * self.q * N ** (self.q - 1.0) * dN
        return g

    def state_norm(self, state):
        return pde.norm(state, self.which, self.species, self.bc)


def _derivative(f: KFun, r: float) -> float:
    if isinstance(f, PowerLaw):
        return float(f.derivative(r))
    delta = 1e-7
    lo = max(r * (1 - delta), 0.0)
    return float((f(r * (1 + delta)) - f(lo)) / (r * (1 + delta) - lo))


@dataclass(frozen=True, eq=False)
class CompositeLF(LyapunovFn):
    """``V(x) = max_i sigma_i^{-1}(V_i(x))`` over subsystem Lyapunov functions."""

    components: tuple
    path: OmegaPath
    psi1: KFun | None = None
    psi2: KFun | None = None
    alpha: KFun | None = None
    chi: KFun | None = None
    switch_rtol: float = 1e-12

    @property
    def inverses(self) -> tuple:
        return tuple(invert(s) for s in self.path.sigmas)

    def levels(self, state) -> np.ndarray:
        return np.array([inv(c.value(state)) for inv, c in zip(self.inverses, self.components)])

    def value(self, state):
        return float(np.max(self.levels(state)))

    def active(self, state) -> list[int]:
        lv = self.levels(state)
        top = lv.max()
        return [i for i, v in enumerate(lv) if v >= top - self.switch_rtol * max(top, 1e-300)]

    def gradient(self, state):
        i = self.active(state)[0]
        c = self.components[i]
        return _derivative(self.inverses[i], c.value(state)) * c.gradient(state)

    def lie(self, spec, state, u=None):
        # upper derivative of a max: the largest derivative among active branches
        f = pde.rhs(spec, state, u).values
        out = []
        for i in self.active(state):
            c = self.components[i]
            out.append(_derivative(self.inverses[i], c.value(state)) * float(np.sum(c.gradient(state) * f)))
        return max(out)

    def state_norm(self, state):
        return max(c.state_norm(state) for c in self.components)


def characteristic_time(spec: SystemSpec, grid: Grid1D) -> float:
    """Fastest diffusive time scale of the grid, ``h^2 / (2 max c)``.

    Forward differences over a fraction of this step resolve the stiff
    modes; the slow scale ``(d/pi)^2 / c`` leaves an O(1e-4) bias.
    """
    return grid.h ** 2 / (2.0 * max(spec.diffusion))


def lie_derivative(V: LyapunovFn, spec: SystemSpec, state: Field, u=None,
                   method: str = ANALYTIC, h_t: float | None = None) -> float:
    """Derivative of V along the semi-discrete flow at ``state`` under input values ``u``."""
    if method == ANALYTIC:
        return V.lie(spec, state, u)
    if method == FINITE_DIFF:
        h_t = FD_RELATIVE_STEP * characteristic_time(spec, state.grid) if h_t is None else h_t
        nxt = pde.step(spec, state, u, dt=h_t)
        return (V.value(nxt) - V.value(state)) / h_t
    raise ValueError(f"unknown method {method!r}")


# --- sampling -------------------------------------------------------------------

class FourierSampler:
    """Random smooth states: truncated sine (Dirichlet) or cosine (Neumann) series.

    Coefficients are standard normal divided by the mode number; each
    species is rescaled so that its sup-norm equals an amplitude drawn
    log-uniformly from ``amp_range``.
    """

    def __init__(self, spec: SystemSpec, grid: Grid1D, max_modes: int = 12,
                 amp_range: tuple[float, float] = (1e-2, 1.0), rng=None):
        self.spec, self.grid = spec, grid
        self.max_modes = max_modes
        self.amp_range = amp_range
        self.rng = np.random.default_rng(rng)

    def shape(self, bc: str = DIRICHLET, n_modes: int | None = None) -> np.ndarray:
        """One profile with unit sup-norm."""
        m = n_modes or int(self.rng.integers(1, self.max_modes + 1))
        x, d = self.grid.x, self.grid.d
        if bc == NEUMANN:
            ks = np.arange(0, m)
            basis = np.cos(np.outer(ks, np.pi * x / d))
            coef = self.rng.standard_normal(m) / np.maximum(ks, 1)
        else:
            ks = np.arange(1, m + 1)
            basis = np.sin(np.outer(ks, np.pi * x / d))
            coef = self.rng.standard_normal(m) / ks
        prof = coef @ basis
        top = np.max(np.abs(prof))
        if top == 0.0:
            return self.shape(bc, n_modes)
        return prof / top

    def amplitude(self) -> float:
        lo, hi = self.amp_range
        return float(10.0 ** self.rng.uniform(math.log10(lo), math.log10(hi)))

    def state(self, amplitudes: Sequence[float] | None = None) -> Field:
        n = self.spec.n_species
        amps = [self.amplitude() for _ in range(n)] if amplitudes is None else amplitudes
        vals = np.array([a * self.shape(b) for a, b in zip(amps, self.spec.bc)])
        return Field(self.grid, vals)

    def input_shape(self) -> np.ndarray:
        """Profiles for every input channel, jointly normalized to unit L2 norm."""
        n_ch = self.spec.n_channels
        if n_ch == 0:
            return np.zeros((0, self.grid.n_interior))
        prof = np.array([self.shape(DIRICHLET) for _ in range(n_ch)])
        return prof / math.sqrt(self.grid.h * np.sum(prof ** 2))


def input_l2(u, grid: Grid1D) -> float:
    if u is None:
        return 0.0
    u = np.asarray(u, dtype=float)
    return float(math.sqrt(grid.h * np.sum(u ** 2))) if u.size else 0.0


def check_implication(V: LyapunovFn, spec: SystemSpec, sampler: FourierSampler,
                      n_samples: int = 1000, tolerance: float | Callable = 0.0,
                      mode: str = "satisfy", premise: Callable | None = None,
                      bound: Callable | None = None, input_norm: Callable | None = None,
                      fd_check: bool = False, check_name: str = "iss_implication") -> Certificate:
    """Sample ``||x|| >= chi(||u||)  =>  dV/dt <= -alpha(||x||)``.

    ``mode`` selects how inputs are scaled: ``"satisfy"`` puts
    ``chi(||u||)`` uniformly in ``(0, ||x||]``, ``"violate"`` in
    ``(1.5 ||x||, 10 ||x||)``, ``"zero"`` uses no input. ``premise(state, u)``
    and ``bound(state)`` override the norm/gain premise and the right-hand
    side ``-alpha(||x||)``. ``tolerance`` may be a number or a function of the
    state norm.
    """
    rng = sampler.rng
    grid = sampler.grid
    input_norm = input_norm or (lambda u: input_l2(u, grid))
    chi_inv = invert(V.chi) if V.chi is not None else None
    alpha = V.alpha
    cert = Certificate(check=check_name, verdict=True,
                       parameters={"n_samples": n_samples, "mode": mode,
                                   "gain": None if V.chi is None else V.chi.to_json(),
                                   "decay": None if alpha is None else alpha.to_json()})
    worst = math.inf
    worst_fd = 0.0
    applicable = 0
    for k in range(n_samples):
        state = sampler.state()
        xn = V.state_norm(state)
        u = None
        if spec.n_channels:
            shape = sampler.input_shape()
            if mode == "zero" or chi_inv is None:
                u = np.zeros_like(shape)
            else:
                theta = rng.uniform(0.0, 1.0) if mode == "satisfy" else rng.uniform(1.5, 10.0)
                u = shape * chi_inv(max(theta * xn, 0.0))
        if premise is not None:
            holds = premise(state, u)
        else:
            holds = V.chi is None or xn >= V.chi(input_norm(u))
        if not holds:
            continue
        applicable += 1
        vdot = lie_derivative(V, spec, state, u, ANALYTIC)
        rhs_bound = bound(state) if bound is not None else (-alpha(xn) if alpha is not None else 0.0)
        tol = tolerance(xn) if callable(tolerance) else tolerance
        margin = rhs_bound - vdot
        worst = min(worst, margin + tol)
        if fd_check:
            fd = lie_derivative(V, spec, state, u, FINITE_DIFF)
            worst_fd = max(worst_fd, abs(fd - vdot) / max(abs(vdot), 1e-300))
        if margin < -tol:
            cert.add_witness({"sample": k, "vdot": vdot, "bound": rhs_bound, "state_norm": xn,
                              "input_norm": input_norm(u)}, state)
    cert.samples = applicable
    cert.worst_margin = worst if applicable else 0.0
    cert.verdict = bool(not cert.witnesses) if applicable else True
    if fd_check:
        cert.details["max_relative_fd_disagreement"] = worst_fd
    return cert


# --- constructions ----------------------------------------------------------

def solve_lyapunov(R: np.ndarray) -> np.ndarray:
    """Symmetric positive definite ``P`` with ``R^T P + P R = -I``.

    With the uniform quadrature weight ``h`` this is exactly the operator
    equation ``<Rx, Px> + <Px, Rx> = -||x||^2`` in the discrete L2 product.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape[0] != R.shape[1]:
        raise ValueError("R must be square")
    ev = np.linalg.eigvals(R)
    if np.max(ev.real) >= 0:
        raise NotHurwitz(f"largest real part {np.max(ev.real):.6g} is not negative")
    P = scipy.linalg.solve_continuous_lyapunov(R.T, -np.eye(R.shape[0]))
    return 0.5 * (P + P.T)


def lyapunov_residual(R: np.ndarray, P: np.ndarray) -> float:
    R = np.atleast_2d(R)
    return float(np.max(np.abs(R.T @ P + P @ R + np.eye(R.shape[0]))))


def linearization_sampler_check(V: QuadraticLF, spec: SystemSpec, shapes, fractions,
                                input_shapes, thetas, rho: float, tol_rel: float) -> tuple[bool, float]:
    """Decrease check at sup amplitude ``rho`` on pre-drawn sample shapes."""
    worst = math.inf
    chi_inv = invert(V.chi)
    for shp, frac, ushp, th in zip(shapes, fractions, input_shapes, thetas):
        state = Field(shp.grid, shp.values * (rho * frac))
        xn = V.state_norm(state)
        u = ushp * chi_inv(th * xn) if ushp is not None else None
        vdot = V.lie(spec, state, u)
        margin = -V.alpha(xn) - vdot + tol_rel * xn ** 2
        worst = min(worst, margin)
    return worst >= 0.0, worst


def build_linearization_lf(spec: SystemSpec, grid: Grid1D, gain: KFun = PowerLaw(1.0, 0.5),
                           decay: KFun = PowerLaw(0.25, 2.0), amp_ceiling: float = 10.0,
                           amp_floor: float = 1e-6, iterations: int = 40, n_samples: int = 200,
                           max_modes: int = 12, tol_rel: float = 1e-9, rng=None,
                           constant_states: bool = False) -> tuple[QuadraticLF, Certificate]:
    """Quadratic LISS-Lyapunov function from the linear part, with a certified radius.

    ``P`` solves the Lyapunov equation of the discretized diffusion plus
    linear coupling. The radius is the largest sup-norm amplitude (found by
    bisection) at which ``||x|| >= gain(||u||)`` implies
    ``dV/dt <= -decay(||x||)`` on every sample of the full nonlinear system.
    The same sample shapes are reused at every level.
    """
    rng = np.random.default_rng(rng)
    L = pde.linear_operator(spec.linear_part(), grid).toarray()
    P = solve_lyapunov(L)
    ev = scipy.linalg.eigvalsh(P)
    V = QuadraticLF(P, grid.h, psi1=PowerLaw(float(ev[0]), 2.0), psi2=PowerLaw(float(ev[-1]), 2.0),
                    alpha=decay, chi=gain)
    sampler = FourierSampler(spec, grid, max_modes=max_modes, rng=rng)
    shapes, input_shapes = [], []
    for _ in range(n_samples):
        if constant_states:
            vals = np.ones((spec.n_species, grid.n_interior)) * rng.choice([-1.0, 1.0], size=(spec.n_species, 1))
        else:
            vals = np.array([sampler.shape(b) for b in spec.bc])
        shapes.append(Field(grid, vals))
        input_shapes.append(sampler.input_shape() if spec.n_channels else None)
    fractions = rng.uniform(0.0, 1.0, n_samples)
    fractions[: max(n_samples // 10, 1)] = 1.0
    thetas = rng.uniform(0.0, 1.0, n_samples)

    def ok(rho):
        return linearization_sampler_check(V, spec, shapes, fractions, input_shapes, thetas, rho, tol_rel)

    cert = Certificate(check="linearization_radius", verdict=True, samples=n_samples,
                       parameters={"gain": gain.to_json(), "decay": decay.to_json(),
                                   "amp_ceiling": amp_ceiling, "iterations": iterations})
    passed, worst = ok(amp_ceiling)
    if passed:
        rho = amp_ceiling
    else:
        lo_ok, _ = ok(amp_floor)
        if not lo_ok:
            raise NoPositiveRadius("decrease fails even at the amplitude floor")
        lo, hi = amp_floor, amp_ceiling
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if ok(mid)[0]:
                lo = mid
            else:
                hi = mid
        rho = lo
        worst = ok(rho)[1]
    cert.worst_margin = float(worst)
    cert.details["radius"] = float(rho)
    cert.details["P_eigen_range"] = [float(ev[0]), float(ev[-1])]
    cert.details["lyapunov_residual"] = lyapunov_residual(L, P)
    return V, cert


def pointwise_min(fs: Sequence[KFun]) -> KFun:
    """Minimum of K-infinity functions via ``min f_i = (max f_i^{-1})^{-1}``."""
    return invert(pointwise_max([invert(f) for f in fs]))


def build_composite_lf(subsystem_lfs: Sequence[LyapunovFn], G: GainMatrix,
                       path: OmegaPath) -> CompositeLF:
    """``V = max_i sigma_i^{-1}(V_i)`` with gain ``max_i sigma_i^{-1} o chi_i``."""
    if not path.verified:
        raise UnverifiedPath("the Omega-path has not passed omega_path_verify")
    if len(subsystem_lfs) != G.n or path.n != G.n:
        raise ValueError("need one Lyapunov function and one path component per subsystem")
    inv = [invert(s) for s in path.sigmas]
    ext = [compose(si, g) for si, g in zip(inv, G.input_gains) if g is not None]
    chi = pointwise_max(ext) if ext else None
    psi1 = psi2 = None
    if all(v.psi1 is not None and v.psi2 is not None for v in subsystem_lfs):
        psi2 = pointwise_max([compose(si, v.psi2) for si, v in zip(inv, subsystem_lfs)])
        psi1 = pointwise_min([compose(si, v.psi1) for si, v in zip(inv, subsystem_lfs)])
    return CompositeLF(tuple(subsystem_lfs), path, psi1=psi1, psi2=psi2, chi=chi)
