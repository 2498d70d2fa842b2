"""
Continuous and discrete linear state-space models of a single-degree-of-freedom oscillator.

The oscillator m z'' + c z' + k z + f(z, z') = U(t) is written with state x = [z, z'] and the
unknown nonlinear force f is appended as extra states driven by white noise (see `augment`).
The augmented force enters with a negative sign, so the force states model +f directly.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import expm

from gplfm.errors import InvalidParameterError, NumericalError
from gplfm.kernels import GpSde


class ObservationMode(str, Enum):
    ACCELERATION = "acceleration"
    VELOCITY = "velocity"
    DISPLACEMENT = "displacement"


@dataclass(frozen=True)
class SdofParams:
    """Mass (kg), linear stiffness (N/m) and viscous damping (N s/m)."""

    m: float
    k: float
    c: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.m) and self.m > 0):
            raise InvalidParameterError(f"mass must be positive, got m={self.m}")
        if not (np.isfinite(self.k) and self.k > 0):
            raise InvalidParameterError(f"stiffness must be positive, got k={self.k}")
        if not (np.isfinite(self.c) and self.c >= 0):
            raise InvalidParameterError(f"damping must be non-negative, got c={self.c}")


def _as_matrix(value, name: str) -> np.ndarray:
    array = np.atleast_2d(np.asarray(value, dtype=float))
    if array.ndim != 2:
        raise InvalidParameterError(f"{name} must be a matrix, got shape {array.shape}")
    return array


@dataclass(frozen=True)
class ContinuousStateSpace:
    """
    dx = (A x + B u) dt + L dβ,  y = C x + D u, with β a Wiener process of spectral density q.

    Matrices are copied and made read-only on construction.
    """

    A: np.ndarray
    B: np.ndarray
    L: np.ndarray
    q: np.ndarray
    C: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    D: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self) -> None:
        A = _as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise InvalidParameterError(f"A must be square, got {A.shape}")
        B = _as_matrix(self.B, "B").reshape(n, -1)
        L = _as_matrix(self.L, "L").reshape(n, -1)
        q = _as_matrix(self.q, "q")
        if q.shape != (L.shape[1], L.shape[1]):
            raise InvalidParameterError(f"q must be {L.shape[1]}x{L.shape[1]}, got {q.shape}")
        if not np.allclose(q, q.T):
            raise InvalidParameterError("q must be symmetric")
        if q.size and np.min(np.linalg.eigvalsh(q)) < -1e-12 * max(1.0, np.abs(q).max()):
            raise InvalidParameterError("q must be positive semi-definite")
        C = np.asarray(self.C, dtype=float)
        C = np.zeros((0, n)) if C.size == 0 else _as_matrix(C, "C")
        if C.shape[1] != n:
            raise InvalidParameterError(f"C must have {n} columns, got {C.shape}")
        D = np.asarray(self.D, dtype=float)
        D = np.zeros((C.shape[0], B.shape[1])) if D.size == 0 else _as_matrix(D, "D")
        if D.shape != (C.shape[0], B.shape[1]):
            raise InvalidParameterError(
                f"D must be {C.shape[0]}x{B.shape[1]}, got {D.shape}"
            )
        for name, value in (("A", A), ("B", B), ("L", L), ("q", q), ("C", C), ("D", D)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class DiscreteStateSpace:
    """
    x[t+1] = A x[t] + B u[t] + w,  w ~ N(0, Q);  y[t] = C x[t] + D u[t] + v,  v ~ N(0, R).
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float
    R: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self) -> None:
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidParameterError(f"dt must be positive, got {self.dt}")
        A = _as_matrix(self.A, "A")
        n = A.shape[0]
        Q = _as_matrix(self.Q, "Q")
        if Q.shape != (n, n):
            raise InvalidParameterError(f"Q must be {n}x{n}, got {Q.shape}")
        C = _as_matrix(self.C, "C").reshape(-1, n)
        p = C.shape[0]
        R = np.asarray(self.R, dtype=float)
        R = np.zeros((p, p)) if R.size == 0 else _as_matrix(R, "R")
        if R.shape != (p, p):
            raise InvalidParameterError(f"R must be {p}x{p}, got {R.shape}")
        B = _as_matrix(self.B, "B").reshape(n, -1)
        D = np.asarray(self.D, dtype=float)
        D = np.zeros((p, B.shape[1])) if D.size == 0 else _as_matrix(D, "D").reshape(p, -1)
        for name, value in (("A", A), ("B", B), ("Q", Q), ("C", C), ("D", D), ("R", R)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def with_noise(self, R) -> "DiscreteStateSpace":
        return DiscreteStateSpace(self.A, self.B, self.Q, self.C, self.D, self.dt, R)


def build_sdof(params: SdofParams) -> ContinuousStateSpace:
    """Linear oscillator with state [z, z'] and the applied force as the only input."""
    m, k, c = params.m, params.k, params.c
    A = np.array([[0.0, 1.0], [-k / m, -c / m]])
    B = np.array([[0.0], [1.0 / m]])
    return ContinuousStateSpace(A=A, B=B, L=np.zeros((2, 1)), q=np.zeros((1, 1)))


def augment(sys: ContinuousStateSpace, gp: GpSde) -> ContinuousStateSpace:
    """
    Append the GP force states to a 2-state oscillator.

    A = [[A_s, B_f], [0, F]] where B_f is zero except for -1/m in the acceleration row
    against the first GP state. White noise drives the last GP state only.
    """
    if sys.A.shape != (2, 2) or sys.B.shape != (2, 1):
        raise InvalidParameterError(
            f"augment expects a 2-state single-input oscillator, got A{sys.A.shape}"
        )
    d = gp.F.shape[0]
    if gp.L.shape != (d, 1) or gp.H.shape != (1, d):
        raise InvalidParameterError("GP companion form has inconsistent dimensions")
    inv_m = sys.B[1, 0]
    n = 2 + d
    A = np.zeros((n, n))
    A[:2, :2] = sys.A
    A[1, 2:] = -inv_m * gp.H[0]
    A[2:, 2:] = gp.F
    B = np.vstack([sys.B, np.zeros((d, 1))])
    L = np.vstack([np.zeros((2, 1)), gp.L])
    q = np.atleast_2d(gp.q)
    C = np.hstack([sys.C, np.zeros((sys.C.shape[0], d))])
    return ContinuousStateSpace(A=A, B=B, L=L, q=q, C=C, D=sys.D)


def build_observation(
    sys: ContinuousStateSpace,
    mode: ObservationMode | str,
    params: SdofParams,
) -> ContinuousStateSpace:
    """Attach a single output row: acceleration, velocity or displacement."""
    try:
        mode = ObservationMode(mode)
    except ValueError:
        raise InvalidParameterError(f"unknown observation mode: {mode!r}") from None
    n = sys.n_states
    C = np.zeros((1, n))
    D = np.zeros((1, sys.n_inputs))
    if mode is ObservationMode.ACCELERATION:
        m = params.m
        C[0, 0] = -params.k / m
        C[0, 1] = -params.c / m
        if n > 2:
            C[0, 2] = -1.0 / m
        D[0, 0] = 1.0 / m
    elif mode is ObservationMode.VELOCITY:
        C[0, 1] = 1.0
    else:
        C[0, 0] = 1.0
    return ContinuousStateSpace(A=sys.A, B=sys.B, L=sys.L, q=sys.q, C=C, D=D)


def discretize(sys: ContinuousStateSpace, dt: float, R=None) -> DiscreteStateSpace:
    """
    Exact discretisation with a zero-order hold on the input.

    The transition and process covariance come from one block exponential
    expm([[-A, L q L'], [0, A']] dt) = [[., G], [0, F]]: A_d = F', Q_d = A_d G.
    """
    if not (np.isfinite(dt) and dt > 0):
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    A = sys.A
    n, m = sys.n_states, sys.n_inputs
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(sys.B))):
        raise NumericalError("cannot discretise a model with non-finite matrices")
    W = sys.L @ sys.q @ sys.L.T

    van_loan = np.zeros((2 * n, 2 * n))
    van_loan[:n, :n] = -A
    van_loan[:n, n:] = W
    van_loan[n:, n:] = A.T
    blocks = expm(van_loan * dt)
    A_d = blocks[n:, n:].T
    Q_d = A_d @ blocks[:n, n:]
    Q_d = 0.5 * (Q_d + Q_d.T)

    hold = np.zeros((n + m, n + m))
    hold[:n, :n] = A
    hold[:n, n:] = sys.B
    B_d = expm(hold * dt)[:n, n:]

    if not (np.all(np.isfinite(A_d)) and np.all(np.isfinite(Q_d)) and np.all(np.isfinite(B_d))):
        raise NumericalError(f"discretisation at dt={dt} produced non-finite matrices")
    C = sys.C if sys.n_outputs else np.zeros((0, n))
    D = sys.D if sys.n_outputs else np.zeros((0, m))
    if R is None:
        R = np.zeros((C.shape[0], C.shape[0]))
    return DiscreteStateSpace(A=A_d, B=B_d, Q=Q_d, C=C, D=D, dt=float(dt), R=np.atleast_2d(R))
