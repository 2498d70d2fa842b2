"""
Ground-truth data: Newmark integration of polynomial oscillators, JONSWAP multisine forcing
and additive measurement noise.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from gplfm.errors import ConvergenceError, InvalidParameterError

LOGGER = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class PolynomialOde:
    """
    m z'' + c z' + k z + Σ a_d z^d + Σ b_d z'^d = U(t).

    `nl_terms` holds (degree in z, coefficient) pairs, `velocity_terms` the same in z'.
    """

    m: float
    c: float
    k: float
    nl_terms: tuple[tuple[int, float], ...] = ()
    velocity_terms: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        if not self.m > 0:
            raise InvalidParameterError(f"mass must be positive, got m={self.m}")
        object.__setattr__(self, "nl_terms", tuple((int(d), float(a)) for d, a in self.nl_terms))
        object.__setattr__(
            self, "velocity_terms", tuple((int(d), float(b)) for d, b in self.velocity_terms)
        )

    def restoring_force(self, z, zdot):
        force = self.k * z + self.c * zdot
        for degree, coefficient in self.nl_terms:
            force = force + coefficient * z**degree
        for degree, coefficient in self.velocity_terms:
            force = force + coefficient * zdot**degree
        return force

    def _stiffness(self, z) -> float:
        slope = self.k
        for degree, coefficient in self.nl_terms:
            if degree > 0:
                slope += degree * coefficient * z ** (degree - 1)
        return slope

    def _damping(self, zdot) -> float:
        slope = self.c
        for degree, coefficient in self.velocity_terms:
            if degree > 0:
                slope += degree * coefficient * zdot ** (degree - 1)
        return slope


def linearised(ode: PolynomialOde) -> PolynomialOde:
    """The same oscillator with every nonlinear term removed."""
    return PolynomialOde(m=ode.m, c=ode.c, k=ode.k)


class ExcitationKind(str, Enum):
    JONSWAP_MULTISINE = "jonswap_multisine"
    EXTERNAL = "external"


@dataclass(frozen=True)
class ExcitationSpec:
    kind: ExcitationKind = ExcitationKind.JONSWAP_MULTISINE
    hs: float = 2.5
    tp: float = 1.0
    n_freq: int = 1000
    fs: float = 100.0
    n_samples: int = 12566
    seed: int = 0
    gamma_peak: float = 3.3
    f_min_factor: float = 0.2
    f_max_factor: float = 5.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ExcitationKind(self.kind))
        if not self.fs > 0:
            raise InvalidParameterError(f"sample rate must be positive, got {self.fs}")
        if self.n_freq < 1:
            raise InvalidParameterError(f"need at least one frequency, got {self.n_freq}")
        if self.tp <= 0 or self.hs < 0:
            raise InvalidParameterError("JONSWAP needs Tp > 0 and Hs >= 0")

    @property
    def dt(self) -> float:
        return 1.0 / self.fs

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.fs


def jonswap_spectrum(f, hs: float, tp: float, gamma: float = 3.3) -> np.ndarray:
    """One-sided JONSWAP spectral density in Hz (units of hs² per Hz)."""
    f = np.asarray(f, dtype=float)
    fp = 1.0 / tp
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        pm = (5.0 / 16.0) * hs**2 * fp**4 * f**-5.0 * np.exp(-1.25 * (fp / f) ** 4)
        sigma = np.where(f <= fp, 0.07, 0.09)
        peak = gamma ** np.exp(-((f - fp) ** 2) / (2.0 * sigma**2 * fp**2))
    density = (1.0 - 0.287 * math.log(gamma)) * pm * peak
    return np.where(f > 0, density, 0.0)


def jonswap_multisine(spec: ExcitationSpec) -> np.ndarray:
    """
    Random-phase multisine with JONSWAP amplitudes.

    Frequencies are drawn uniformly on [f_min_factor/Tp, f_max_factor/Tp] (so they are not
    aligned to the sampling grid) and phases are uniform on [0, 2π). Amplitudes are
    sqrt(2 S(f) Δω): the density per Hz on the angular spacing Δω = 2π Δf, with Δf the band
    width over n_freq. The force variance is therefore 2π Hs²/16 for a well-covered band.
    """
    if spec.kind is not ExcitationKind.JONSWAP_MULTISINE:
        raise InvalidParameterError(f"cannot synthesise an excitation of kind {spec.kind}")
    rng = np.random.default_rng(spec.seed)
    f_low, f_high = spec.f_min_factor / spec.tp, spec.f_max_factor / spec.tp
    frequencies = np.sort(rng.uniform(f_low, f_high, spec.n_freq))
    phases = rng.uniform(0.0, 2.0 * np.pi, spec.n_freq)
    delta_omega = 2.0 * np.pi * (f_high - f_low) / spec.n_freq
    density = jonswap_spectrum(frequencies, spec.hs, spec.tp, spec.gamma_peak)
    amplitudes = np.sqrt(2.0 * density * delta_omega)
    t = spec.times
    signal = np.zeros_like(t)
    # chunked to bound memory at n_freq x chunk
    chunk = 4096
    for start in range(0, t.size, chunk):
        block = t[start : start + chunk]
        signal[start : start + chunk] = np.sin(
            2.0 * np.pi * np.outer(block, frequencies) + phases
        ) @ amplitudes
    return signal


@dataclass
class NewmarkResult:
    z: np.ndarray
    zdot: np.ndarray
    zdd: np.ndarray
    dt: float
    newton_iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.z.size)


def newmark_simulate(
    ode: PolynomialOde,
    u,
    dt: float,
    gamma: float = 0.5,
    beta: float = 0.25,
    z0: float = 0.0,
    zdot0: float = 0.0,
) -> NewmarkResult:
    """
    Implicit Newmark-β integration; each step solves the nonlinear equilibrium for the new
    displacement by Newton iteration.
    """
    if not dt > 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    if not (gamma >= 0.5 and beta >= 0.25 * (gamma + 0.5) ** 2 - 1e-15 and beta > 0):
        raise InvalidParameterError(
            f"Newmark parameters gamma={gamma}, beta={beta} are not unconditionally stable"
        )
    u = np.asarray(u, dtype=float).ravel()
    T = u.size
    z = np.zeros(T)
    v = np.zeros(T)
    a = np.zeros(T)
    iterations = np.zeros(T, dtype=int)
    if T == 0:
        return NewmarkResult(z, v, a, dt, iterations)

    m = ode.m
    a0 = 1.0 / (beta * dt**2)
    a2 = 1.0 / (beta * dt)
    a3 = 1.0 / (2.0 * beta) - 1.0
    a6 = dt * (1.0 - gamma)
    a7 = gamma * dt

    z[0], v[0] = z0, zdot0
    a[0] = (u[0] - ode.restoring_force(z0, zdot0)) / m

    for n in range(T - 1):
        z_n, v_n, a_n = z[n], v[n], a[n]
        target = u[n + 1]
        z_new = z_n + dt * v_n + 0.5 * dt**2 * a_n
        for iteration in range(1, NEWTON_MAX_ITER + 1):
            a_new = a0 * (z_new - z_n) - a2 * v_n - a3 * a_n
            v_new = v_n + a6 * a_n + a7 * a_new
            residual = m * a_new + ode.restoring_force(z_new, v_new) - target
            scale = max(1.0, abs(target), abs(m * a_new))
            if abs(residual) < NEWTON_TOL * scale:
                break
            tangent = m * a0 + ode._damping(v_new) * a7 * a0 + ode._stiffness(z_new)
            step = residual / tangent
            z_new -= step
            if abs(step) <= 1e-16 * max(abs(z_new), 1e-300):
                a_new = a0 * (z_new - z_n) - a2 * v_n - a3 * a_n
                v_new = v_n + a6 * a_n + a7 * a_new
                break
        else:
            raise ConvergenceError(
                f"Newton iteration did not converge at step {n + 1} "
                f"(residual {residual:.3e} after {NEWTON_MAX_ITER} iterations)",
                step=n + 1,
            )
        z[n + 1], v[n + 1], a[n + 1] = z_new, v_new, a_new
        iterations[n + 1] = iteration
    return NewmarkResult(z, v, a, dt, iterations)


def simulate_identified(
    ode: PolynomialOde,
    u,
    dt: float,
    z0: float = 0.0,
    zdot0: float = 0.0,
    gamma: float = 0.5,
    beta: float = 0.25,
) -> NewmarkResult:
    """Forward-simulate an identified model from the given initial conditions."""
    return newmark_simulate(ode, u, dt, gamma=gamma, beta=beta, z0=z0, zdot0=zdot0)


def add_measurement_noise(signal, noise_std: float, seed: int | None) -> np.ndarray:
    signal = np.asarray(signal, dtype=float)
    if noise_std < 0:
        raise InvalidParameterError(f"noise standard deviation must be >= 0, got {noise_std}")
    if noise_std == 0:
        return signal.copy()
    rng = np.random.default_rng(seed)
    return signal + noise_std * rng.standard_normal(signal.shape)
