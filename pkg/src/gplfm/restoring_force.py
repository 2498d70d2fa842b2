"""
Static identification of the restoring force from estimated states.

Samples of (z, z', f̂) drawn from the smoothing distribution are regressed on a polynomial basis
with conjugate Bayesian linear regression; the order is chosen by BIC and the fitted linear
coefficient is folded back into the stiffness.

The basis is monomials z^1..z^order (optionally z'^1..z'^velocity_order and an intercept),
evaluated on inputs standardised by their sample standard deviation. The weight prior
N(0, weight_prior_variance) applies to the standardised weights; reported weights and
covariances are in the original units.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky
from scipy.optimize import minimize_scalar

from gplfm.errors import DataError, InvalidParameterError, RankDeficientDesignError

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class RestoringForceSamples:
    z: np.ndarray
    zdot: np.ndarray
    f_hat: np.ndarray
    f_total: np.ndarray | None = None

    def __post_init__(self) -> None:
        arrays = {"z": self.z, "zdot": self.zdot, "f_hat": self.f_hat}
        if self.f_total is not None:
            arrays["f_total"] = self.f_total
        lengths = set()
        for name, value in arrays.items():
            value = np.asarray(value, dtype=float).ravel()
            if not np.all(np.isfinite(value)):
                raise DataError(f"restoring force samples contain non-finite {name}")
            lengths.add(value.size)
            object.__setattr__(self, name, value)
        if len(lengths) > 1:
            raise DataError(f"restoring force samples have unequal lengths {sorted(lengths)}")

    @classmethod
    def from_states(cls, states: np.ndarray, force_index: int = 2) -> "RestoringForceSamples":
        """Pool state arrays of shape (..., n) into flat samples of z, z' and f̂."""
        states = np.asarray(states, dtype=float)
        return cls(
            z=states[..., 0].ravel(),
            zdot=states[..., 1].ravel(),
            f_hat=states[..., force_index].ravel(),
        )

    def __len__(self) -> int:
        return self.z.size


def direct_restoring_force(u, zdd, m: float) -> np.ndarray:
    """Classic restoring force f = U - m z''."""
    u = np.asarray(u, dtype=float)
    zdd = np.asarray(zdd, dtype=float)
    if u.shape != zdd.shape:
        raise DataError(f"force and acceleration lengths differ: {u.shape} vs {zdd.shape}")
    return u - m * zdd


def assemble_total_rf(samples: RestoringForceSamples, k_map: float, c_map: float) -> np.ndarray:
    """f = k z + c z' + f̂ per sample."""
    return k_map * samples.z + c_map * samples.zdot + samples.f_hat


def bias_correct(k_map: float, alpha: float) -> float:
    """Fold the fitted linear coefficient of f̂ into the stiffness: (k + α) z."""
    return k_map + alpha


def bic(n_params: int, n_obs: int, log_likelihood: float) -> float:
    return n_params * math.log(n_obs) - 2.0 * log_likelihood


@dataclass(frozen=True)
class BasisSpec:
    order: int
    velocity_order: int = 0
    include_intercept: bool = False

    def __post_init__(self) -> None:
        if self.order < 1:
            raise InvalidParameterError(f"polynomial order must be at least 1, got {self.order}")
        if self.velocity_order < 0:
            raise InvalidParameterError("velocity order must be non-negative")

    @property
    def terms(self) -> tuple[tuple[str, int], ...]:
        terms = [("1", 0)] if self.include_intercept else []
        terms += [("z", d) for d in range(1, self.order + 1)]
        terms += [("zdot", d) for d in range(1, self.velocity_order + 1)]
        return tuple(terms)


def _scale(x: np.ndarray) -> float:
    s = float(np.std(x)) if x.size > 1 else 0.0
    return s if s > 0 else 1.0


def _design(z, zdot, terms, z_scale, zdot_scale) -> np.ndarray:
    columns = []
    for variable, degree in terms:
        if variable == "1":
            columns.append(np.ones_like(z))
        elif variable == "z":
            columns.append((z / z_scale) ** degree)
        else:
            columns.append((zdot / zdot_scale) ** degree)
    return np.column_stack(columns) if columns else np.zeros((z.size, 0))


@dataclass
class PolynomialPosterior:
    """Gaussian weight posterior of one polynomial model, in original units."""

    order: int
    terms: tuple[tuple[str, int], ...]
    weight_mean: np.ndarray
    weight_sqrt_cov: np.ndarray
    noise_variance: float
    log_evidence: float
    bic: float
    log_likelihood: float
    n_obs: int
    z_scale: float = 1.0
    zdot_scale: float = 1.0

    @property
    def weight_cov(self) -> np.ndarray:
        return self.weight_sqrt_cov.T @ self.weight_sqrt_cov

    @property
    def weight_std(self) -> np.ndarray:
        return np.sqrt(np.sum(self.weight_sqrt_cov**2, axis=0))

    @property
    def n_params(self) -> int:
        return len(self.terms)

    def coefficient(self, variable: str, degree: int) -> float:
        """Posterior mean weight of a term; zero when the term is not in the basis."""
        for index, term in enumerate(self.terms):
            if term == (variable, degree):
                return float(self.weight_mean[index])
        return 0.0

    def design(self, z, zdot=None) -> np.ndarray:
        z = np.asarray(z, dtype=float).ravel()
        zdot = np.zeros_like(z) if zdot is None else np.asarray(zdot, dtype=float).ravel()
        return _design(z, zdot, self.terms, 1.0, 1.0)

    def predict(self, z, zdot=None, include_noise: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and standard deviation of the restoring force."""
        phi = self.design(z, zdot)
        mean = phi @ self.weight_mean
        var = np.sum((phi @ self.weight_sqrt_cov.T) ** 2, axis=1)
        if include_noise:
            var = var + self.noise_variance
        return mean, np.sqrt(var)


@dataclass(frozen=True)
class _Statistics:
    gram: np.ndarray
    cross: np.ndarray
    sum_sq: float
    n_obs: int


def _conjugate(stats: _Statistics, prior_var: float, noise_var: float):
    """Posterior mean, upper Cholesky factor of the precision, and log evidence."""
    P = stats.gram.shape[0]
    precision = stats.gram / noise_var
    if math.isfinite(prior_var):
        precision = precision + np.eye(P) / prior_var
    try:
        upper = cholesky(precision, lower=False)
    except LinAlgError:
        raise RankDeficientDesignError(
            "design matrix is rank deficient and the weight prior is flat"
        ) from None
    diag = np.abs(np.diag(upper))
    if diag.size and diag.min() <= 1e-12 * diag.max():
        raise RankDeficientDesignError("design matrix is numerically rank deficient")
    mean = cho_solve((upper, False), stats.cross / noise_var)
    if not math.isfinite(prior_var):
        return mean, upper, math.nan
    rss = stats.sum_sq - 2.0 * mean @ stats.cross + mean @ stats.gram @ mean
    N = stats.n_obs
    log_evidence = (
        -0.5 * N * math.log(2.0 * math.pi * noise_var)
        - 0.5 * P * math.log(prior_var)
        - np.sum(np.log(diag))
        - 0.5 * max(rss, 0.0) / noise_var
        - 0.5 * (mean @ mean) / prior_var
    )
    return mean, upper, float(log_evidence)


def _max_evidence_noise(stats: _Statistics, prior_var: float) -> float:
    mean_sq = stats.sum_sq / stats.n_obs
    if mean_sq <= 0:
        return 1.0
    if not math.isfinite(prior_var):
        try:
            cross_solve = cho_solve(cho_factor(stats.gram), stats.cross)
        except LinAlgError:
            raise RankDeficientDesignError(
                "design matrix is rank deficient and the weight prior is flat"
            ) from None
        rss = stats.sum_sq - stats.cross @ cross_solve
        dof = max(stats.n_obs - stats.gram.shape[0], 1)
        return max(rss / dof, 1e-300)

    def negative_evidence(log_noise: float) -> float:
        return -_conjugate(stats, prior_var, math.exp(log_noise))[2]

    result = minimize_scalar(
        negative_evidence,
        bounds=(math.log(mean_sq * 1e-14), math.log(mean_sq * 10.0)),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return float(math.exp(result.x))


def blr_fit(
    z,
    f,
    order: int,
    weight_prior_variance: float | None = None,
    noise_variance: float | None = None,
    zdot=None,
    velocity_order: int = 0,
    include_intercept: bool = False,
) -> PolynomialPosterior:
    """
    Conjugate Bayesian linear regression of f on the polynomial basis.

    `weight_prior_variance=None` uses 1e4 times the mean square of f (weak, scale aware);
    `math.inf` is a flat prior (ordinary least squares, evidence undefined).
    `noise_variance=None` picks the noise variance maximising the evidence.
    BIC uses P = number of basis terms and the maximised Gaussian log-likelihood at the
    posterior mean.
    """
    z = np.asarray(z, dtype=float).ravel()
    f = np.asarray(f, dtype=float).ravel()
    zdot_arr = np.zeros_like(z) if zdot is None else np.asarray(zdot, dtype=float).ravel()
    if z.shape != f.shape or zdot_arr.shape != z.shape:
        raise DataError("regression inputs and targets must have equal lengths")
    basis = BasisSpec(order, velocity_order, include_intercept)
    terms = basis.terms
    N = z.size
    P = len(terms)

    if weight_prior_variance is None:
        mean_sq = float(np.mean(f**2)) if N else 1.0
        weight_prior_variance = 1e4 * (mean_sq if mean_sq > 0 else 1.0)
    if not weight_prior_variance > 0:
        raise InvalidParameterError("weight prior variance must be positive")

    z_scale = _scale(z)
    zdot_scale = _scale(zdot_arr) if velocity_order else 1.0
    to_original = np.array(
        [
            1.0
            if variable == "1"
            else (z_scale if variable == "z" else zdot_scale) ** -degree
            for variable, degree in terms
        ]
    )

    if N == 0:
        if not math.isfinite(weight_prior_variance):
            raise RankDeficientDesignError("no data and a flat weight prior")
        sqrt_cov = math.sqrt(weight_prior_variance) * np.eye(P)
        return PolynomialPosterior(
            order=order,
            terms=terms,
            weight_mean=np.zeros(P),
            weight_sqrt_cov=sqrt_cov * to_original,
            noise_variance=1.0 if noise_variance is None else float(noise_variance),
            log_evidence=0.0,
            bic=math.nan,
            log_likelihood=0.0,
            n_obs=0,
            z_scale=z_scale,
            zdot_scale=zdot_scale,
        )

    phi = _design(z, zdot_arr, terms, z_scale, zdot_scale)
    stats = _Statistics(phi.T @ phi, phi.T @ f, float(f @ f), N)
    if noise_variance is None:
        noise_variance = _max_evidence_noise(stats, weight_prior_variance)
    mean_s, upper, log_evidence = _conjugate(stats, weight_prior_variance, noise_variance)
    # precision = U'U, so covariance = S'S with S = U^-T
    sqrt_cov_s = np.linalg.inv(upper).T
    residuals = f - phi @ mean_s
    ml_noise = max(float(residuals @ residuals) / N, 1e-300)
    log_likelihood = -0.5 * N * (math.log(2.0 * math.pi * ml_noise) + 1.0)

    return PolynomialPosterior(
        order=order,
        terms=terms,
        weight_mean=mean_s * to_original,
        weight_sqrt_cov=sqrt_cov_s * to_original,
        noise_variance=float(noise_variance),
        log_evidence=log_evidence,
        bic=bic(P, N, log_likelihood),
        log_likelihood=log_likelihood,
        n_obs=N,
        z_scale=z_scale,
        zdot_scale=zdot_scale,
    )


@dataclass
class BicScan:
    orders: list[int]
    bics: list[float]
    fits: list[PolynomialPosterior]

    @property
    def best_order(self) -> int:
        return self.orders[int(np.nanargmin(self.bics))]

    @property
    def best_fit(self) -> PolynomialPosterior:
        return self.fits[int(np.nanargmin(self.bics))]


def bic_scan(z, f, max_order: int, orders: Sequence[int] | None = None, **fit_kwargs) -> BicScan:
    """Fit orders 1..max_order and report the BIC of each; the lowest BIC wins."""
    if max_order < 1:
        raise InvalidParameterError(f"max_order must be at least 1, got {max_order}")
    orders = list(orders) if orders is not None else list(range(1, max_order + 1))
    fits = [blr_fit(z, f, order, **fit_kwargs) for order in orders]
    scan = BicScan(orders, [fit.bic for fit in fits], fits)
    LOGGER.info("BIC scan selected order %d of %s", scan.best_order, orders)
    return scan
