"""
Latent force model: the oscillator augmented with a GP restoring-force state, ready for filtering.
"""

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from gplfm.kernels import KernelSpec, matern_to_sde
from gplfm.sqrt_filter import GaussianBelief, psd_sqrt
from gplfm.state_space import (
    DiscreteStateSpace,
    ObservationMode,
    SdofParams,
    augment,
    build_observation,
    build_sdof,
    discretize,
)

PARAMETER_NAMES = ("k", "c", "m", "sigma_f2", "ell", "R")

# index of the GP force value in the augmented state
FORCE_STATE = 2


@dataclass(frozen=True)
class LatentForceModel:
    params: SdofParams
    kernel: KernelSpec
    R: float
    mode: ObservationMode = ObservationMode.ACCELERATION

    @classmethod
    def from_values(
        cls,
        values: Mapping[str, float],
        smoothness: float,
        mode: ObservationMode | str,
    ) -> "LatentForceModel":
        """Build from a name -> value mapping over `PARAMETER_NAMES`."""
        return cls(
            params=SdofParams(m=values["m"], k=values["k"], c=values["c"]),
            kernel=KernelSpec(smoothness, values["sigma_f2"], values["ell"]),
            R=float(values["R"]),
            mode=ObservationMode(mode),
        )

    def discretize(self, dt: float) -> DiscreteStateSpace:
        gp = matern_to_sde(self.kernel)
        continuous = augment(build_sdof(self.params), gp)
        observed = build_observation(continuous, self.mode, self.params)
        return discretize(observed, dt, R=np.array([[self.R]]))

    def initial_belief(self, physical_std) -> GaussianBelief:
        """Zero mean; diffuse on [z, z'], stationary GP covariance on the force states."""
        gp = matern_to_sde(self.kernel)
        physical = np.diag(np.broadcast_to(np.asarray(physical_std, dtype=float), (2,)) ** 2)
        cov = block_diag(physical, gp.P_inf)
        return GaussianBelief(np.zeros(cov.shape[0]), psd_sqrt(cov))


def diffuse_state_std(y, mode: ObservationMode | str, params: SdofParams, factor=1e3):
    """
    Prior standard deviation of [z, z'] as `factor` times a typical state scale.

    The scale comes from the spread of the observations, mapped through the natural frequency
    when velocity or acceleration is observed.
    """
    mode = ObservationMode(mode)
    spread = float(np.std(y)) if np.size(y) > 1 else 1.0
    spread = spread if spread > 0 else 1.0
    omega = np.sqrt(params.k / params.m)
    if mode is ObservationMode.DISPLACEMENT:
        scale = np.array([spread, spread * omega])
    elif mode is ObservationMode.VELOCITY:
        scale = np.array([spread / omega, spread])
    else:
        scale = np.array([spread / omega**2, spread / omega])
    return factor * scale
