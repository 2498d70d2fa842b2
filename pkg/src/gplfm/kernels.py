"""
Stationary Matérn kernels in time and their equivalent linear SDE (companion) forms.

A zero-mean GP with Matérn covariance of half-integer smoothness is the output H x of the
linear SDE dx = F x dt + L dβ with β of spectral density q, started in its stationary
distribution N(0, P_inf). Only smoothness 1/2 and 3/2 are supported.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from gplfm.errors import InvalidParameterError, NonStationaryError

SUPPORTED_SMOOTHNESS = (0.5, 1.5)


def parse_smoothness(value: float | str) -> float:
    """Accept 0.5, 1.5, '1/2' or '3/2'."""
    if isinstance(value, str):
        text = value.strip()
        if "/" in text:
            num, den = text.split("/", 1)
            try:
                value = float(num) / float(den)
            except (ValueError, ZeroDivisionError):
                raise InvalidParameterError(f"cannot parse smoothness {text!r}") from None
        else:
            try:
                value = float(text)
            except ValueError:
                raise InvalidParameterError(f"cannot parse smoothness {text!r}") from None
    value = float(value)
    if value not in SUPPORTED_SMOOTHNESS:
        raise InvalidParameterError(
            f"unsupported Matérn smoothness {value}; expected one of {SUPPORTED_SMOOTHNESS}"
        )
    return value


@dataclass(frozen=True)
class KernelSpec:
    """Matérn kernel: smoothness ν, signal variance σ_f² (N²) and length scale ℓ (s)."""

    smoothness: float
    sigma_f2: float
    ell: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "smoothness", parse_smoothness(self.smoothness))
        if not (np.isfinite(self.sigma_f2) and self.sigma_f2 >= 0):
            raise InvalidParameterError(f"sigma_f2 must be non-negative, got {self.sigma_f2}")
        if not (np.isfinite(self.ell) and self.ell > 0):
            raise InvalidParameterError(f"length scale must be positive, got {self.ell}")


@dataclass(frozen=True)
class GpSde:
    F: np.ndarray
    L: np.ndarray
    q: float
    H: np.ndarray
    P_inf: np.ndarray

    @property
    def order(self) -> int:
        return self.F.shape[0]

    def autocovariance(self, tau: float) -> float:
        """Output covariance H exp(F |τ|) P_inf H' at lag τ."""
        return float(self.H @ expm(self.F * abs(tau)) @ self.P_inf @ self.H.T)


def stationary_covariance(F, L, q) -> np.ndarray:
    """Solve F P + P F' + L q L' = 0 for a Hurwitz F."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    L = np.asarray(L, dtype=float).reshape(F.shape[0], -1)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    eigenvalues = np.linalg.eigvals(F)
    if np.any(eigenvalues.real >= 0):
        raise NonStationaryError(
            f"F is not Hurwitz stable (max real eigenvalue {eigenvalues.real.max():.3g})"
        )
    W = L @ q @ L.T
    P = solve_continuous_lyapunov(F, -W)
    return 0.5 * (P + P.T)


def matern_to_sde(kernel: KernelSpec) -> GpSde:
    s2, ell = kernel.sigma_f2, kernel.ell
    if kernel.smoothness == 0.5:
        F = np.array([[-1.0 / ell]])
        L = np.array([[1.0]])
        q = 2.0 * s2 / ell
        H = np.array([[1.0]])
    else:
        lam = math.sqrt(3.0) / ell
        F = np.array([[0.0, 1.0], [-(lam**2), -2.0 * lam]])
        L = np.array([[0.0], [1.0]])
        q = 4.0 * s2 * lam**3
        H = np.array([[1.0, 0.0]])
    P_inf = stationary_covariance(F, L, q)
    return GpSde(F=F, L=L, q=q, H=H, P_inf=P_inf)


def kernel_eval(kernel: KernelSpec, tau) -> np.ndarray | float:
    r = np.abs(np.asarray(tau, dtype=float)) / kernel.ell
    if kernel.smoothness == 0.5:
        value = kernel.sigma_f2 * np.exp(-r)
    else:
        value = kernel.sigma_f2 * (1.0 + math.sqrt(3.0) * r) * np.exp(-math.sqrt(3.0) * r)
    return float(value) if np.ndim(value) == 0 else value
