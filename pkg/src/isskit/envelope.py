"""Exponential ISS envelope fitting with a scikit-learn estimator interface.

Rows of ``X`` are ``(initial_norm, time, input_norm)`` and ``y`` holds the
observed state norm. The fitted model is the bound
``M exp(-a t) r0 + gamma(u)``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import pde
from .certificate import Certificate
from .exceptions import NoFeasibleEnvelope
from .kfun import ExpEnvelope, KFun

__all__ = ["ISSEnvelope", "estimate_iss_envelope", "trajectories_to_rows"]


class ISSEnvelope(BaseEstimator):
    """Fit ``beta(r, t) = M e^{-a t} r`` so that ``y <= beta(r0, t) + gain(u)`` on every row.

    The rate is the largest ``a`` whose minimal feasible ``M`` stays within
    ``rate_slack`` (relative) of the ``a = 0`` optimum; ``M`` is then the
    smallest constant that covers the data at that rate.

    Parameters
    ----------
    gain : KFun or None
        Input gain guess; ``None`` means zero gain.
    rate_slack : float
        Relative increase of M tolerated when pushing the rate up.
    min_rate : float
        Rates below this count as "no decay" and make the fit infeasible.
    abs_tol : float
        Slack for rows with zero initial state.
    """

    def __init__(self, gain: KFun | None = None, rate_slack: float = 0.05,
                 min_rate: float = 1e-3, max_rate: float = 1e4, abs_tol: float = 1e-9):
        self.gain = gain
        self.rate_slack = rate_slack
        self.min_rate = min_rate
        self.max_rate = max_rate
        self.abs_tol = abs_tol

    def _excess(self, X, y):
        g = np.zeros(len(y)) if self.gain is None else np.asarray(self.gain(X[:, 2]), dtype=float)
        return y - g

    @staticmethod
    def _m_of_rate(r0, t, excess, a):
        with np.errstate(over="ignore"):
            return float(np.max(np.maximum(excess, 0.0) * np.exp(a * t) / r0))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if X.shape[1] != 3:
            raise ValueError("X must have columns (initial_norm, time, input_norm)")
        if np.any(X < 0) or np.any(y < 0):
            raise ValueError("norms and times must be nonnegative")
        excess = self._excess(X, y)
        cert = Certificate(check="iss_envelope", verdict=True, samples=len(y),
                           parameters={"gain": None if self.gain is None else self.gain.to_json(),
                                       "rate_slack": self.rate_slack})
        zero = X[:, 0] == 0
        bad_zero = zero & (excess > self.abs_tol)
        if np.any(bad_zero):
            k = int(np.argmax(np.where(bad_zero, excess, -np.inf)))
            cert.verdict = False
            cert.worst_margin = float(-excess[k])
            cert.add_witness({"row": k, "time": float(X[k, 1]), "excess": float(excess[k])})
            self.certificate_ = cert
            raise NoFeasibleEnvelope("state exceeds the input gain from a zero initial state", cert)
        r0, t, ex = X[~zero, 0], X[~zero, 1], excess[~zero]
        m0 = self._m_of_rate(r0, t, ex, 0.0) if r0.size else 0.0
        if m0 == 0.0:
            rate, M = self.max_rate, 1.0
        else:
            target = (1.0 + self.rate_slack) * m0
            lo, hi = 0.0, 1.0
            while hi < self.max_rate and self._m_of_rate(r0, t, ex, hi) <= target:
                lo, hi = hi, 2.0 * hi
            hi = min(hi, self.max_rate)
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                if self._m_of_rate(r0, t, ex, mid) <= target:
                    lo = mid
                else:
                    hi = mid
            rate = lo
            M = self._m_of_rate(r0, t, ex, rate)
        if rate < self.min_rate:
            cert.verdict = False
            cert.details["rate"] = rate
            self.certificate_ = cert
            raise NoFeasibleEnvelope(f"no decay rate above {self.min_rate:g} fits the ensemble", cert)
        self.M_ = float(max(M, np.finfo(float).tiny))
        self.rate_ = float(rate)
        self.envelope_ = ExpEnvelope(self.M_, self.rate_)
        bound = self.predict(X)
        slack = bound - y
        cert.worst_margin = float(np.min(slack))
        cert.verdict = bool(cert.worst_margin >= -1e-9 * max(1.0, float(np.max(y))))
        cert.details.update(M=self.M_, rate=self.rate_)
        self.certificate_ = cert
        return self

    def predict(self, X):
        """Envelope value ``M e^{-a t} r0 + gain(u)`` per row."""
        check_is_fitted(self, "envelope_")
        X = check_array(X, dtype=float)
        g = np.zeros(X.shape[0]) if self.gain is None else np.asarray(self.gain(X[:, 2]), dtype=float)
        return self.M_ * np.exp(-self.rate_ * X[:, 1]) * X[:, 0] + g

    def score(self, X, y):
        """Fraction of rows lying under the envelope."""
        bound = self.predict(X)
        return float(np.mean(np.asarray(y) <= bound * (1 + 1e-12) + 1e-300))


def trajectories_to_rows(trajectories: Sequence[pde.Trajectory], which: str = "L2"):
    """Flatten trajectories into envelope rows.

    The input norm of a row is the largest L2 input norm seen up to its time.
    """
    X, y = [], []
    for traj in trajectories:
        grid = traj.grid
        norms = traj.norms(which, None)
        r0 = norms[0]
        u_run = 0.0
        for t, n in zip(traj.times, norms):
            if traj.input is not None and traj.input.n_channels:
                u = traj.input(grid, t)
                u_run = max(u_run, math.sqrt(grid.h * float(np.sum(u ** 2))))
            X.append((r0, t, u_run))
            y.append(n)
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float)


def estimate_iss_envelope(trajectories: Sequence[pde.Trajectory], gamma_guess: KFun | None,
                          **kwargs) -> tuple[ExpEnvelope, Certificate]:
    """Fit an exponential envelope to simulated trajectories; raises NoFeasibleEnvelope."""
    X, y = trajectories_to_rows(trajectories)
    est = ISSEnvelope(gain=gamma_guess, **kwargs).fit(X, y)
    return est.envelope_, est.certificate_
