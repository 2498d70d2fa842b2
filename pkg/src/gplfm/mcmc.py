"""
Random-walk Metropolis-Hastings over the physical parameters and GP hyperparameters.

The chain runs until a requested number of proposals has been *accepted*; only accepted states
are stored. Each stored state also records how many proposals it was held for, so posterior
moments weighted by those hold counts are ordinary Metropolis-Hastings averages.
"""

import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from gplfm.errors import InvalidParameterError, NumericalError, SamplerStallError
from gplfm.lfm import PARAMETER_NAMES, LatentForceModel
from gplfm.sqrt_filter import kalman_log_likelihood

LOGGER = logging.getLogger(__name__)

STALL_CHECK_PROPOSALS = 100_000
STALL_ACCEPTANCE = 1e-3


@dataclass(frozen=True)
class ParameterPrior:
    """Independent Gaussian prior; `active=False` pins the parameter to `mean`."""

    mean: float
    variance: float
    active: bool = True

    def __post_init__(self) -> None:
        if not self.variance > 0:
            raise InvalidParameterError(f"prior variance must be positive, got {self.variance}")

    def log_density(self, value: float) -> float:
        if math.isinf(self.variance):
            return 0.0
        return -0.5 * (
            math.log(2.0 * math.pi * self.variance) + (value - self.mean) ** 2 / self.variance
        )


@dataclass(frozen=True)
class PriorSpec:
    priors: Mapping[str, ParameterPrior]

    def __post_init__(self) -> None:
        unknown = set(self.priors) - set(PARAMETER_NAMES)
        if unknown:
            raise InvalidParameterError(f"unknown parameters in prior: {sorted(unknown)}")
        missing = set(PARAMETER_NAMES) - set(self.priors)
        if missing:
            raise InvalidParameterError(f"prior is missing parameters: {sorted(missing)}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping]) -> "PriorSpec":
        return cls({name: ParameterPrior(**dict(spec)) for name, spec in data.items()})

    @property
    def active_names(self) -> tuple[str, ...]:
        return tuple(name for name in PARAMETER_NAMES if self.priors[name].active)

    def means(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.active_names if names is None else names
        return np.array([self.priors[name].mean for name in names])

    def stds(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.active_names if names is None else names
        return np.sqrt([self.priors[name].variance for name in names])

    def values(self, theta: Sequence[float]) -> dict[str, float]:
        """Full name -> value mapping: active parameters from `theta`, fixed ones at their mean."""
        values = {name: prior.mean for name, prior in self.priors.items()}
        values.update(zip(self.active_names, map(float, theta)))
        return values

    def log_density(self, theta: Sequence[float]) -> float:
        return sum(
            self.priors[name].log_density(float(value))
            for name, value in zip(self.active_names, theta)
        )


def perturb_priors(
    priors: PriorSpec,
    rng_seed: int | np.random.Generator | None,
    z: Mapping[str, float] | None = None,
) -> PriorSpec:
    """
    Multiply every active prior mean by exp(z), z ~ N(0, 1) independently; variances are
    unchanged and inactive (known) parameters keep their value.

    `z` fixes the draws by parameter name.
    """
    rng = np.random.default_rng(rng_seed)
    active = [name for name in PARAMETER_NAMES if priors.priors[name].active]
    draws = {name: float(rng.standard_normal()) for name in active}
    if z is not None:
        draws.update(z)
    return PriorSpec(
        {
            name: replace(prior, mean=prior.mean * math.exp(draws[name])) if prior.active else prior
            for name, prior in priors.priors.items()
        }
    )


# parameters that must stay strictly positive; damping may be zero
_POSITIVE = {"k", "m", "sigma_f2", "ell", "R"}


@dataclass
class LogPosterior:
    """
    log p(θ | y) up to a constant: Kalman log-likelihood of the discretised latent force model
    plus the independent Gaussian log prior over the active parameters.
    """

    priors: PriorSpec
    y: np.ndarray
    u: np.ndarray
    dt: float
    smoothness: float
    mode: str
    physical_std: np.ndarray
    model_builder: Callable[..., LatentForceModel] = LatentForceModel.from_values

    @property
    def names(self) -> tuple[str, ...]:
        return self.priors.active_names

    def in_support(self, values: Mapping[str, float]) -> bool:
        for name, value in values.items():
            if not math.isfinite(value):
                return False
            if name in _POSITIVE and value <= 0:
                return False
            if name == "c" and value < 0:
                return False
        return True

    def log_likelihood(self, values: Mapping[str, float]) -> float:
        if np.size(self.y) == 0:
            return 0.0
        model = self.model_builder(values, self.smoothness, self.mode)
        discrete = model.discretize(self.dt)
        init = model.initial_belief(self.physical_std)
        return kalman_log_likelihood(discrete, self.y, self.u, init)

    def __call__(self, theta: Sequence[float]) -> float:
        values = self.priors.values(theta)
        if not self.in_support(values):
            return -math.inf
        try:
            log_likelihood = self.log_likelihood(values)
        except NumericalError as exc:
            LOGGER.debug("rejecting %s: %s", values, exc)
            return -math.inf
        return log_likelihood + self.priors.log_density(theta)


@dataclass
class ParameterChain:
    names: tuple[str, ...]
    samples: np.ndarray
    log_posteriors: np.ndarray
    accepted_at: np.ndarray
    hold_counts: np.ndarray
    proposal_scales: np.ndarray
    accepted_count: int
    proposed_count: int
    burn_in: int
    initial_scales: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_count / self.proposed_count if self.proposed_count else 0.0

    @property
    def retained(self) -> slice:
        return slice(self.burn_in, None)

    def weighted_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance of the retained samples, weighted by hold counts."""
        samples = self.samples[self.retained]
        if samples.shape[0] == 0:
            raise InvalidParameterError("chain has no samples after burn-in")
        weights = self.hold_counts[self.retained].astype(float)
        mean = np.average(samples, axis=0, weights=weights)
        variance = np.average((samples - mean) ** 2, axis=0, weights=weights)
        return mean, variance

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.samples[self.retained], columns=list(self.names))
        frame["log_posterior"] = self.log_posteriors[self.retained]
        frame["accepted_at"] = self.accepted_at[self.retained]
        frame["hold_count"] = self.hold_counts[self.retained]
        return frame

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def mh_sample(
    log_posterior: Callable[[np.ndarray], float],
    init: Sequence[float],
    proposal_scales: Sequence[float],
    n_accept: int,
    burn_in: int,
    rng_seed: int | np.random.Generator | None,
    names: Sequence[str] | None = None,
    adapt: bool = True,
    adapt_interval: int = 100,
    target_acceptance: tuple[float, float] = (0.2, 0.3),
) -> ParameterChain:
    """
    Draw until `n_accept` proposals are accepted; the first `burn_in` of them are burn-in.

    While burning in, the diagonal random-walk scales are shrunk or grown every
    `adapt_interval` proposals toward `target_acceptance`; afterwards they are frozen.
    """
    if n_accept <= burn_in:
        raise InvalidParameterError(f"n_accept ({n_accept}) must exceed burn_in ({burn_in})")
    rng = np.random.default_rng(rng_seed)
    current = np.asarray(init, dtype=float).copy()
    scales = np.asarray(proposal_scales, dtype=float).copy()
    if scales.shape != current.shape:
        raise InvalidParameterError("proposal scales must match the parameter vector")
    initial_scales = scales.copy()
    current_lp = float(log_posterior(current))
    if not math.isfinite(current_lp):
        raise InvalidParameterError(f"initial point {current} is outside the posterior support")

    d = current.size
    samples = np.zeros((n_accept, d))
    log_posteriors = np.zeros(n_accept)
    accepted_at = np.zeros(n_accept, dtype=int)
    accepted = 0
    proposed = 0
    window_proposed = window_accepted = 0
    report_every = max(n_accept // 10, 1)

    while accepted < n_accept:
        proposal = current + scales * rng.standard_normal(d)
        proposal_lp = float(log_posterior(proposal))
        proposed += 1
        window_proposed += 1
        log_ratio = proposal_lp - current_lp
        if log_ratio >= 0 or math.log(rng.uniform()) < log_ratio:
            current, current_lp = proposal, proposal_lp
            samples[accepted] = current
            log_posteriors[accepted] = current_lp
            accepted_at[accepted] = proposed
            accepted += 1
            window_accepted += 1
            if accepted % report_every == 0:
                LOGGER.info(
                    "accepted %d/%d (acceptance rate %.1f%%)",
                    accepted,
                    n_accept,
                    100.0 * accepted / proposed,
                )

        if proposed % STALL_CHECK_PROPOSALS == 0 and accepted / proposed < STALL_ACCEPTANCE:
            raise SamplerStallError(
                f"acceptance rate {accepted / proposed:.3%} after {proposed} proposals; "
                "reduce the proposal scales (mcmc.proposal_fraction) or start nearer the "
                "posterior mode"
            )

        if adapt and accepted < burn_in and window_proposed >= adapt_interval:
            rate = window_accepted / window_proposed
            if rate < target_acceptance[0]:
                scales *= 0.7
            elif rate > target_acceptance[1]:
                scales *= 1.3
            LOGGER.debug("window acceptance %.2f, proposal scales %s", rate, scales)
            window_proposed = window_accepted = 0

    hold_counts = np.diff(np.append(accepted_at, proposed + 1))
    return ParameterChain(
        names=tuple(names) if names is not None else tuple(f"theta{i}" for i in range(d)),
        samples=samples,
        log_posteriors=log_posteriors,
        accepted_at=accepted_at,
        hold_counts=hold_counts,
        proposal_scales=scales,
        accepted_count=accepted,
        proposed_count=proposed,
        burn_in=burn_in,
        initial_scales=initial_scales,
    )


def map_estimate(chain: ParameterChain) -> np.ndarray:
    """The retained sample with the highest log posterior."""
    log_posteriors = chain.log_posteriors[chain.retained]
    if log_posteriors.size == 0:
        raise InvalidParameterError("cannot take a MAP estimate of an empty chain")
    return chain.samples[chain.retained][int(np.argmax(log_posteriors))].copy()
