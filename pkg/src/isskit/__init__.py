"""Numerical input-to-state stability certificates for reaction-diffusion systems."""

from . import examples, gains, kfun, lyapunov, pde
from .certificate import Certificate
from .envelope import ISSEnvelope, estimate_iss_envelope
from .exceptions import IsskitError
from .gains import GainMatrix, OmegaPath, omega_path_build, omega_path_verify, small_gain_check
from .kfun import PowerLaw, Tabulated, compose, invert, less_than_id, pointwise_max
from .pde import Field, Grid1D, SystemSpec, simulate

__version__ = "0.1.0"

__all__ = [
    "Certificate", "Field", "GainMatrix", "Grid1D", "ISSEnvelope", "IsskitError", "OmegaPath",
    "PowerLaw", "SystemSpec", "Tabulated", "compose", "estimate_iss_envelope", "examples", "gains",
    "invert", "kfun", "less_than_id", "lyapunov", "omega_path_build", "omega_path_verify", "pde",
    "pointwise_max", "simulate", "small_gain_check",
]
