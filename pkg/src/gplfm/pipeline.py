"""
End-to-end pipelines: dataset simulation, identification, prediction, prior sensitivity and the
Silverbox train/test evaluation.

Every run writes its artifacts into one output directory together with a manifest that records
the configuration, the seeds, the sha256 of each artifact and whether the run finished. The
`Identifier` caches the MCMC stage on disk with `diskcache`, so repeated runs on the same data and
settings skip straight to state estimation.

Example:
    ```python
    from gplfm import Config, Identifier

    config = Config().build_run_config("duffing", seed=0)
    with Identifier(cache_dir=config.cache_dir) as identifier:
        result = identifier.identify(config)
        print(result.fitted.k_corrected)
    ```
"""

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
from diskcache import Cache
from pydantic import ValidationError

from gplfm.config import McmcConfig, ProposalBasis, RunConfig
from gplfm.datasets import (
    SilverboxDataset,
    TimeSeriesSet,
    downsample,
    ingest_csv,
    upsample_cubic,
    write_csv,
    write_dataset,
)
from gplfm.diagnostics import nmse, periodogram, residual_report, rmse
from gplfm.errors import DataError, UsageError
from gplfm.lfm import FORCE_STATE, PARAMETER_NAMES, LatentForceModel, diffuse_state_std
from gplfm.mcmc import (
    LogPosterior,
    ParameterChain,
    PriorSpec,
    map_estimate,
    mh_sample,
    perturb_priors,
)
from gplfm.restoring_force import (
    BicScan,
    PolynomialPosterior,
    RestoringForceSamples,
    assemble_total_rf,
    bias_correct,
    bic_scan,
    blr_fit,
)
from gplfm.results import (
    Coefficient,
    FittedModel,
    MetricReport,
    ParameterSummary,
    PosteriorSummary,
    PriorSensitivityReport,
    RunManifest,
)
from gplfm.simulate import (
    NewmarkResult,
    PolynomialOde,
    add_measurement_noise,
    jonswap_multisine,
    newmark_simulate,
    simulate_identified,
)
from gplfm.sqrt_filter import (
    StateTrajectory,
    backward_samples,
    sqrt_kalman_filter,
    sqrt_rts_smoother,
)
from gplfm.state_space import ObservationMode, SdofParams

LOGGER = logging.getLogger(__name__)

MANIFEST = "manifest.json"
# fitted restoring-force curve: grid size and band half-width in posterior stds
FIT_GRID_POINTS = 200
FIT_BAND_SIGMAS = 3.0


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _checksum(*arrays: np.ndarray | None) -> str:
    digest = hashlib.sha256()
    for array in arrays:
        if array is not None:
            digest.update(np.ascontiguousarray(array, dtype=float).tobytes())
    return digest.hexdigest()


class _RunRecord:
    """Tracks the artifacts of one run and writes the manifest on exit, also after a failure."""

    def __init__(
        self,
        command: str,
        output_dir: Path,
        config: dict[str, Any],
        seeds: dict[str, int | None] | None = None,
        manifest_name: str = MANIFEST,
    ) -> None:
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_name = manifest_name
        self.manifest = RunManifest(
            command=command, config=config, seeds=seeds or {}, started_at=_now()
        )
        self._paths: dict[str, Path] = {}

    def path(self, name: str) -> Path:
        path = self.output_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def add(self, path: Path, quiet: bool = False) -> Path:
        path = Path(path)
        try:
            name = path.relative_to(self.output_dir).as_posix()
        except ValueError:
            name = path.as_posix()
        self._paths[name] = path
        if not quiet:
            LOGGER.info("wrote %s", path)
        return path

    def csv(self, name: str, columns, quiet: bool = False) -> Path:
        return self.add(write_csv(self.path(name), columns), quiet=quiet)

    def artifact(self, name: str, model) -> Path:
        return self.add(model.write(self.path(name)))

    def __enter__(self) -> "_RunRecord":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.manifest.finished_at = _now()
        self.manifest.artifacts = {
            name: _sha256(path) for name, path in sorted(self._paths.items()) if path.exists()
        }
        if exc is None:
            self.manifest.status = "succeeded"
        else:
            self.manifest.status = "failed"
            self.manifest.partial = True
            self.manifest.error = f"{type(exc).__name__}: {exc}"
        self.manifest.write(self.output_dir / self.manifest_name)


@dataclass
class IdentificationResult:
    summary: PosteriorSummary
    fitted: FittedModel
    metrics: MetricReport
    output_dir: Path


def _require_seed(config: RunConfig, command: str) -> int:
    if config.seed is None:
        raise UsageError(f"'{command}' is stochastic; pass --seed")
    return config.seed


def load_record(config: RunConfig) -> TimeSeriesSet:
    if config.data.path is None:
        raise UsageError("no data file configured; pass --data or set data.path")
    return ingest_csv(config.data.path, fs=config.data.fs, columns=config.data.columns)


def training_set(config: RunConfig, record: TimeSeriesSet) -> TimeSeriesSet:
    """The configured training range (1-based, inclusive) of `record`, upsampled if requested."""
    data = record
    if config.data.train_range is not None:
        first, last = config.data.train_range
        data = record.slice(first - 1, last)
    if config.data.upsample > 1:
        data = data.upsample(config.data.upsample)
    return data


def held_out_set(config: RunConfig, record: TimeSeriesSet) -> TimeSeriesSet | None:
    if config.data.test_range is None:
        return None
    first, last = config.data.test_range
    return record.slice(first - 1, last)


def proposal_scales(priors: PriorSpec, mcmc: McmcConfig) -> np.ndarray:
    basis = priors.stds()
    if mcmc.proposal_basis is ProposalBasis.SMALLER_OF_STD_AND_MEAN:
        means = np.abs(priors.means())
        basis = np.where(means > 0, np.minimum(basis, means), basis)
    return mcmc.proposal_fraction * basis


def _prior_params(priors: PriorSpec) -> SdofParams:
    return SdofParams(
        m=priors.priors["m"].mean, k=priors.priors["k"].mean, c=priors.priors["c"].mean
    )


def summarise_chain(
    chain: ParameterChain, priors: PriorSpec, seed: int | None
) -> PosteriorSummary:
    """Hold-count weighted mean and std, MAP and prior of every parameter."""
    mean, variance = chain.weighted_moments()
    map_theta = map_estimate(chain)
    parameters = {}
    for name in PARAMETER_NAMES:
        prior = priors.priors[name]
        if name in chain.names:
            index = chain.names.index(name)
            parameters[name] = ParameterSummary(
                mean=float(mean[index]),
                std=float(math.sqrt(variance[index])),
                map=float(map_theta[index]),
                prior_mean=prior.mean,
                prior_variance=prior.variance,
            )
        else:
            parameters[name] = ParameterSummary(
                mean=prior.mean,
                std=0.0,
                map=prior.mean,
                prior_mean=prior.mean,
                prior_variance=prior.variance,
                active=False,
            )
    return PosteriorSummary(
        parameters=parameters,
        acceptance_rate=chain.acceptance_rate,
        accepted=int(chain.accepted_count),
        proposed=int(chain.proposed_count),
        burn_in=int(chain.burn_in),
        seed=seed,
    )


def _state_columns(trajectory: StateTrajectory, model: LatentForceModel, u: np.ndarray) -> dict:
    means = trajectory.means
    std = np.sqrt(trajectory.variances)
    p = model.params
    z, zdot, f_hat = means[:, 0], means[:, 1], means[:, FORCE_STATE]
    columns = {"t": trajectory.times, "z": z, "zdot": zdot, "f_hat": f_hat}
    if means.shape[1] > FORCE_STATE + 1:
        columns["f_hat_rate"] = means[:, FORCE_STATE + 1]
    columns["z_std"] = std[:, 0]
    columns["zdot_std"] = std[:, 1]
    columns["f_hat_std"] = std[:, FORCE_STATE]
    columns["zdd"] = (u - p.k * z - p.c * zdot - f_hat) / p.m
    columns["f_total"] = p.k * z + p.c * zdot + f_hat
    return columns


def _state_metrics(states: dict, data: TimeSeriesSet, report: MetricReport) -> None:
    truth = data.extra
    pairs = {
        "nmse_z": ("z", "z"),
        "nmse_zdot": ("zdot", "zdot"),
        "nmse_zdd": ("zdd", "zdd"),
        "nmse_f_total": ("f_total", "f_total"),
        "nmse_f_hat": ("f_nl", "f_hat"),
    }
    missing = sorted({column for column, _ in pairs.values() if column not in truth})
    if missing:
        LOGGER.warning("no truth columns %s in the data; state metrics omitted for them", missing)
        report.notes.append(f"state metrics omitted, missing truth columns {missing}")
    for metric, (true_column, estimate) in pairs.items():
        if true_column in truth:
            report.metrics[metric] = nmse(truth[true_column], states[estimate])
            LOGGER.info("%s = %.4g%%", metric, report.metrics[metric])


def _response(result: NewmarkResult, mode: ObservationMode) -> np.ndarray:
    if mode is ObservationMode.DISPLACEMENT:
        return result.z
    if mode is ObservationMode.VELOCITY:
        return result.zdot
    return result.zdd


def simulate_on_grid(
    ode: PolynomialOde,
    u: np.ndarray,
    fs: float,
    factor: int = 1,
    z0: float = 0.0,
    zdot0: float = 0.0,
    gamma: float = 0.5,
    beta: float = 0.25,
) -> NewmarkResult:
    """Simulate on a grid `factor` times denser than `u` and return the original time points."""
    u_fine = upsample_cubic(u, factor)
    result = simulate_identified(
        ode, u_fine, 1.0 / (fs * factor), z0=z0, zdot0=zdot0, gamma=gamma, beta=beta
    )
    return NewmarkResult(
        downsample(result.z, factor),
        downsample(result.zdot, factor),
        downsample(result.zdd, factor),
        1.0 / fs,
        downsample(result.newton_iterations, factor),
    )


def _fit_restoring_force(
    config: RunConfig, samples: RestoringForceSamples
) -> tuple[BicScan, PolynomialPosterior]:
    fitting = config.fitting
    kwargs = {
        "weight_prior_variance": fitting.weight_prior_variance,
        "velocity_order": fitting.velocity_order,
        "include_intercept": fitting.include_intercept,
        "zdot": samples.zdot if fitting.velocity_order else None,
    }
    scan = bic_scan(samples.z, samples.f_hat, fitting.max_order, **kwargs)
    if fitting.order is None:
        return scan, scan.best_fit
    if fitting.order in scan.orders:
        return scan, scan.fits[scan.orders.index(fitting.order)]
    return scan, blr_fit(samples.z, samples.f_hat, fitting.order, **kwargs)


def _compare_responses(
    record: _RunRecord,
    name: str,
    t: np.ndarray,
    u: np.ndarray,
    truth: np.ndarray,
    nonlinear: np.ndarray,
    linear: np.ndarray,
    fs: float,
    segment: int,
    report: MetricReport,
) -> None:
    record.csv(
        f"{name}_comparison.csv",
        {"t": t, "u": u, "truth": truth, "nonlinear": nonlinear, "linear": linear},
    )
    report.metrics[f"{name}_nmse_nonlinear"] = nmse(truth, nonlinear)
    report.metrics[f"{name}_nmse_linear"] = nmse(truth, linear)
    report.metrics[f"{name}_rmse_nonlinear"] = rmse(truth, nonlinear)
    report.metrics[f"{name}_rmse_linear"] = rmse(truth, linear)
    LOGGER.info(
        "%s NMSE: nonlinear %.4g%%, linear %.4g%%",
        name,
        report.metrics[f"{name}_nmse_nonlinear"],
        report.metrics[f"{name}_nmse_linear"],
    )
    frequencies, power_truth = periodogram(truth, fs, segment)
    record.csv(
        f"periodogram_{name}.csv",
        {
            "frequency": frequencies,
            "truth": power_truth,
            "nonlinear": periodogram(nonlinear, fs, segment)[1],
            "linear": periodogram(linear, fs, segment)[1],
        },
    )


class Identifier:
    """
    Runs identification pipelines, with the MCMC stage cached on disk via `diskcache`.

    The identifier should be closed when no longer in use to release the cache. This can be
    done by calling `close()` or by using it as a context manager.
    """

    def __init__(self, cache_dir: str | Path = ".gplfm_cache", clear_cache: bool = False) -> None:
        """
        Args:
            cache_dir: Directory of the on-disk cache of MCMC results.
            clear_cache: If True, the cache in `cache_dir` is cleared on initialization.
        """
        self.cache = Cache(directory=str(cache_dir))
        if clear_cache:
            self.cache.clear()

    def close(self) -> None:
        self.cache.close()

    def __enter__(self) -> "Identifier":
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.close()

    def _make_cache_key(self, stage: str, payload: dict[str, Any]) -> str:
        """
        Create a cache key by hashing the stage name and its canonical JSON payload.
        """
        str_key = json.dumps({"stage": stage, **payload}, sort_keys=True)
        return hashlib.md5(str_key.encode()).hexdigest()

    def sample_posterior(
        self, config: RunConfig, data: TimeSeriesSet, use_cache: bool | None = None
    ) -> tuple[ParameterChain, np.ndarray]:
        """
        Run (or fetch) the Metropolis-Hastings chain for `data`.

        Returns the chain and the diffuse prior std of [z, z'] the likelihood was evaluated with.
        """
        use_cache = config.use_cache if use_cache is None else use_cache
        priors = config.prior_spec()
        mode = config.system.observation
        physical_std = diffuse_state_std(
            data.y, mode, _prior_params(priors), config.system.initial_std_factor
        )
        n_accept, burn_in = config.mcmc.budget
        key = self._make_cache_key(
            "mcmc",
            {
                "data": _checksum(data.u, data.y),
                "dt": data.dt,
                "seed": config.seed,
                "system": config.system.model_dump(mode="json"),
                "kernel": config.kernel.model_dump(mode="json"),
                "priors": {name: p.model_dump(mode="json") for name, p in config.priors.items()},
                "mcmc": config.mcmc.model_dump(mode="json"),
            },
        )
        if use_cache:
            cached = self.cache.get(key)
            if cached is not None:
                LOGGER.info("MCMC stage restored from cache")
                LOGGER.debug("cache hit %s", key)
                return cached, physical_std
            LOGGER.debug("cache miss %s", key)

        log_posterior = LogPosterior(
            priors=priors,
            y=data.y,
            u=data.u,
            dt=data.dt,
            smoothness=config.kernel.smoothness,
            mode=mode,
            physical_std=physical_std,
        )
        LOGGER.info(
            "sampling %s until %d accepted (%d burn-in)", priors.active_names, n_accept, burn_in
        )
        chain = mh_sample(
            log_posterior,
            init=priors.means(),
            proposal_scales=proposal_scales(priors, config.mcmc),
            n_accept=n_accept,
            burn_in=burn_in,
            rng_seed=config.seed,
            names=priors.active_names,
            adapt=config.mcmc.adapt,
            adapt_interval=config.mcmc.adapt_interval,
        )
        if use_cache:
            self.cache.set(key, chain)
        return chain, physical_std

    def identify(
        self,
        config: RunConfig,
        train: TimeSeriesSet | None = None,
        test: TimeSeriesSet | None = None,
        use_cache: bool | None = None,
    ) -> IdentificationResult:
        """
        MCMC over the latent force model, state estimation at the MAP, restoring-force regression
        with BIC order selection and bias correction, then every evaluation the data allows.

        `train` and `test` default to the configured ranges of the configured data file.
        """
        seed = _require_seed(config, "identify")
        seeds = {"mcmc": seed, "state_samples": seed + 1, "fresh_excitation": seed + 2}
        with _RunRecord(
            "identify", config.output_dir, config.model_dump(mode="json"), seeds
        ) as record:
            if train is None:
                source = load_record(config)
                train, test = training_set(config, source), held_out_set(config, source)
            report = MetricReport()
            priors = config.prior_spec()
            mode = config.system.observation

            chain, physical_std = self.sample_posterior(config, train, use_cache)
            chain.to_csv(record.path("chain.csv"))
            record.add(record.path("chain.csv"))
            summary = summarise_chain(chain, priors, seed)
            record.artifact("posterior_summary.json", summary)
            LOGGER.info("posterior summary\n%s", summary)

            map_values = summary.map_values()
            model = LatentForceModel.from_values(map_values, config.kernel.smoothness, mode)
            discrete = model.discretize(train.dt)
            filtered, log_likelihood = sqrt_kalman_filter(
                discrete, train.y, train.u, model.initial_belief(physical_std), t0=train.t[0]
            )
            LOGGER.info("log-likelihood at the MAP %.6g", log_likelihood)
            smoothed = sqrt_rts_smoother(discrete, filtered)
            states = _state_columns(smoothed, model, train.u)
            record.csv("smoothed_states.csv", states)
            _state_metrics(states, train, report)

            n_samples = config.fitting.n_state_samples
            draws = backward_samples(discrete, filtered, seeds["state_samples"], n_samples)
            for index, draw in enumerate(draws):
                record.csv(
                    f"state_samples/sample_{index:03d}.csv",
                    {
                        "t": smoothed.times,
                        "z": draw[:, 0],
                        "zdot": draw[:, 1],
                        "f_hat": draw[:, FORCE_STATE],
                    },
                    quiet=True,
                )
            LOGGER.info("wrote %d state samples", n_samples)
            samples = RestoringForceSamples.from_states(draws, FORCE_STATE)
            k_map, c_map, m_map = map_values["k"], map_values["c"], map_values["m"]
            record.csv(
                "restoring_force.csv",
                {
                    "sample": np.repeat(np.arange(n_samples), len(train)),
                    "z": samples.z,
                    "zdot": samples.zdot,
                    "f_hat": samples.f_hat,
                    "f_total": assemble_total_rf(samples, k_map, c_map),
                },
            )

            scan, fit = _fit_restoring_force(config, samples)
            record.csv(
                "bic.csv",
                {
                    "order": scan.orders,
                    "bic": scan.bics,
                    "log_evidence": [f.log_evidence for f in scan.fits],
                    "noise_variance": [f.noise_variance for f in scan.fits],
                },
            )
            z_grid = np.linspace(samples.z.min(), samples.z.max(), FIT_GRID_POINTS)
            fit_mean, fit_std = fit.predict(z_grid)
            record.csv(
                "restoring_force_fit.csv",
                {
                    "z": z_grid,
                    "mean": fit_mean,
                    "std": fit_std,
                    "lower": fit_mean - FIT_BAND_SIGMAS * fit_std,
                    "upper": fit_mean + FIT_BAND_SIGMAS * fit_std,
                },
            )
            fitted = FittedModel(
                order=fit.order,
                coefficients=[
                    Coefficient(variable=variable, degree=degree, mean=mean, std=std)
                    for (variable, degree), mean, std in zip(
                        fit.terms, fit.weight_mean.tolist(), fit.weight_std.tolist()
                    )
                ],
                bic=fit.bic,
                k_map=k_map,
                k_corrected=bias_correct(k_map, fit.coefficient("z", 1)),
                c=c_map,
                m=m_map,
                noise_variance=fit.noise_variance,
                include_intercept=config.fitting.include_intercept,
                smoothness=config.kernel.smoothness,
                observation=mode,
            )
            record.artifact("fitted_model.json", fitted)
            LOGGER.info(
                "order %d fitted; stiffness %.6g corrected to %.6g",
                fitted.order,
                fitted.k_map,
                fitted.k_corrected,
            )

            # residuals of the smoothed total restoring force about the fitted model
            ode = fitted.to_ode()
            fitted_rf = ode.restoring_force(states["z"], states["zdot"])
            residuals = residual_report(
                states["f_total"], fitted_rf, train.fs, config.evaluation.psd_segment
            )
            record.artifact("residual_report.json", residuals)
            record.csv(
                "periodogram_residual.csv",
                {"frequency": residuals.frequencies, "power": residuals.power},
            )
            frequencies, power = periodogram(train.u, train.fs, config.evaluation.psd_segment)
            record.csv("periodogram_forcing.csv", {"frequency": frequencies, "power": power})
            report.metrics["fit_nmse_f_total"] = residuals.nmse
            report.metrics["ks_p_value"] = residuals.ks_p_value

            if config.evaluation.fresh_excitation:
                self._fresh_excitation(config, fitted, seeds["fresh_excitation"], record, report)
            if test is not None:
                self._test_range(config, fitted, test, record, report)
            record.artifact("metrics.json", report)

        return IdentificationResult(summary, fitted, report, Path(config.output_dir))

    def _fresh_excitation(
        self,
        config: RunConfig,
        fitted: FittedModel,
        seed: int,
        record: _RunRecord,
        report: MetricReport,
    ) -> None:
        """Simulate truth, identified and linear-only models on a new excitation."""
        sim = config.simulation
        spec = sim.excitation.spec(seed)
        u = jonswap_multisine(spec)
        runs = {
            "truth": sim.ode(),
            "nonlinear": fitted.to_ode(),
            "linear": fitted.to_linear_ode(),
        }
        displacements = {
            name: newmark_simulate(ode, u, spec.dt, gamma=sim.gamma, beta=sim.beta).z
            for name, ode in runs.items()
        }
        _compare_responses(
            record,
            "simulation",
            spec.times,
            u,
            displacements["truth"],
            displacements["nonlinear"],
            displacements["linear"],
            spec.fs,
            config.evaluation.psd_segment,
            report,
        )

    def _test_range(
        self,
        config: RunConfig,
        fitted: FittedModel,
        test: TimeSeriesSet,
        record: _RunRecord,
        report: MetricReport,
    ) -> None:
        """Simulate from rest on the held-out record at the training grid and compare outputs."""
        sim = config.simulation
        mode = config.system.observation
        responses = {
            name: _response(
                simulate_on_grid(
                    ode, test.u, test.fs, config.data.upsample, gamma=sim.gamma, beta=sim.beta
                ),
                mode,
            )
            for name, ode in (("nonlinear", fitted.to_ode()), ("linear", fitted.to_linear_ode()))
        }
        _compare_responses(
            record,
            "test",
            test.t,
            test.u,
            test.y,
            responses["nonlinear"],
            responses["linear"],
            test.fs,
            config.evaluation.psd_segment,
            report,
        )

    def prior_sensitivity(
        self, config: RunConfig, n_priors: int, seed: int | None = None
    ) -> PriorSensitivityReport:
        """
        Identify under `n_priors` priors: the configured one, then copies with every active mean
        scaled by exp(z), z ~ N(0, 1); known parameters stay fixed. All runs share the MCMC seed.
        """
        seed = config.seed if seed is None else seed
        if seed is None:
            raise UsageError("'prior-sensitivity' is stochastic; pass --seed")
        if n_priors < 1:
            raise UsageError(f"need at least one prior, got n_priors={n_priors}")
        base = config.prior_spec()
        priors = [base] + [
            perturb_priors(base, np.random.default_rng([seed, index]))
            for index in range(1, n_priors)
        ]
        root = Path(config.output_dir)
        configs = [
            config.with_priors(p).model_copy(
                update={"seed": seed, "output_dir": root / f"prior_{index:02d}"}
            )
            for index, p in enumerate(priors)
        ]
        record_config = config.model_dump(mode="json") | {"n_priors": n_priors}
        with _RunRecord("prior-sensitivity", root, record_config, {"seed": seed}) as record:
            source = load_record(config)
            train, test = training_set(config, source), held_out_set(config, source)
            with ThreadPoolExecutor(max_workers=max(config.workers, 1)) as pool:
                results = list(pool.map(lambda c: self.identify(c, train, test), configs))

            maps = {
                name: np.array([r.summary.parameters[name].map for r in results])
                for name in PARAMETER_NAMES
            }
            spread = {
                name: float(np.ptp(values) / abs(np.mean(values))) if np.mean(values) else 0.0
                for name, values in maps.items()
            }
            report = PriorSensitivityReport(
                runs=[r.summary for r in results],
                priors=[{name: p.priors[name].mean for name in PARAMETER_NAMES} for p in priors],
                map_spread=spread,
                selected_orders=[r.fitted.order for r in results],
            )
            record.artifact("prior_sensitivity.json", report)
            rows = [
                (index, name, priors[index].priors[name].mean, s.map, s.mean, s.std)
                for index, r in enumerate(results)
                for name, s in r.summary.parameters.items()
            ]
            record.csv(
                "prior_sensitivity.csv",
                dict(
                    zip(
                        ("prior", "parameter", "prior_mean", "map", "mean", "std"),
                        map(list, zip(*rows)),
                    )
                ),
            )
            LOGGER.info("prior sensitivity\n%s", report)
        return report


def run_simulate(config: RunConfig, output: str | Path | None = None) -> Path:
    """
    Simulate the configured polynomial oscillator under a JONSWAP multisine and write the
    dataset (t, u, y_clean, y_noisy plus truth columns z, zdot, zdd, f_nl, f_total).

    The excitation uses `seed`, the measurement noise `seed + 1`.
    """
    seed = _require_seed(config, "simulate")
    output = Path(output or config.data.path or Path(config.output_dir) / "duffing.csv")
    sim = config.simulation
    with _RunRecord(
        "simulate",
        output.parent,
        config.model_dump(mode="json"),
        {"excitation": seed, "noise": seed + 1},
        manifest_name=f"{output.stem}.manifest.json",
    ) as record:
        spec = sim.excitation.spec(seed)
        u = jonswap_multisine(spec)
        ode = sim.ode()
        result = newmark_simulate(ode, u, spec.dt, gamma=sim.gamma, beta=sim.beta)
        y_clean = _response(result, sim.observe)
        y_noisy = add_measurement_noise(y_clean, math.sqrt(sim.noise_variance), seed + 1)
        f_total = ode.restoring_force(result.z, result.zdot)
        csv_path, sidecar = write_dataset(
            output,
            spec.times,
            u,
            y_clean,
            y_noisy,
            metadata={
                "seed": seed,
                "fs": spec.fs,
                "observe": sim.observe.value,
                "simulation": sim.model_dump(mode="json"),
            },
            extra={
                "z": result.z,
                "zdot": result.zdot,
                "zdd": result.zdd,
                "f_nl": f_total - ode.k * result.z - ode.c * result.zdot,
                "f_total": f_total,
            },
        )
        record.add(csv_path)
        record.add(sidecar)
    return csv_path


def run_predict(
    model_path: str | Path,
    excitation_path: str | Path,
    output_dir: str | Path,
    z0: float = 0.0,
    zdot0: float = 0.0,
    fs: float | None = None,
    truth_column: str = "y",
    linear: bool = False,
    upsample: int = 1,
    psd_segment: int = 1024,
    gamma: float = 0.5,
    beta: float = 0.25,
) -> MetricReport:
    """
    Forward-simulate a fitted model under an excitation CSV; NMSE, RMSE and periodograms are
    added when the CSV carries `truth_column`.
    """
    model_path = Path(model_path)
    if not model_path.exists():
        raise DataError(f"model file not found: {model_path}")
    try:
        fitted = FittedModel.read(model_path)
    except ValidationError as exc:
        raise DataError(f"{model_path} is not a fitted model: {exc}") from None
    data = ingest_csv(excitation_path, fs=fs, columns={"y": truth_column}, require_output=False)
    ode = fitted.to_linear_ode() if linear else fitted.to_ode()
    config = {
        "model": str(model_path),
        "excitation": str(excitation_path),
        "z0": z0,
        "zdot0": zdot0,
        "linear": linear,
        "upsample": upsample,
    }
    with _RunRecord("predict", Path(output_dir), config) as record:
        report = MetricReport()
        result = simulate_on_grid(ode, data.u, data.fs, upsample, z0, zdot0, gamma, beta)
        y_hat = _response(result, fitted.observation)
        columns = {
            "t": data.t,
            "u": data.u,
            "z": result.z,
            "zdot": result.zdot,
            "zdd": result.zdd,
            "y_hat": y_hat,
        }
        if data.y is None:
            LOGGER.warning("no '%s' column in %s; metrics omitted", truth_column, excitation_path)
            report.notes.append(f"no '{truth_column}' column; metrics omitted")
        else:
            columns["y"] = data.y
            report.metrics["nmse"] = nmse(data.y, y_hat)
            report.metrics["rmse"] = rmse(data.y, y_hat)
            LOGGER.info("prediction NMSE %.4g%%", report.metrics["nmse"])
            frequencies, power_truth = periodogram(data.y, data.fs, psd_segment)
            record.csv(
                "periodogram_prediction.csv",
                {
                    "frequency": frequencies,
                    "truth": power_truth,
                    "prediction": periodogram(y_hat, data.fs, psd_segment)[1],
                },
            )
        record.csv("prediction.csv", columns)
        record.artifact("metrics.json", report)
    return report


def run_identify(config: RunConfig, clear_cache: bool = False) -> IdentificationResult:
    with Identifier(cache_dir=config.cache_dir, clear_cache=clear_cache) as identifier:
        return identifier.identify(config)


def run_prior_sensitivity(
    config: RunConfig, n_priors: int, seed: int | None = None, clear_cache: bool = False
) -> PriorSensitivityReport:
    with Identifier(cache_dir=config.cache_dir, clear_cache=clear_cache) as identifier:
        return identifier.prior_sensitivity(config, n_priors, seed)


def run_silverbox(config: RunConfig, clear_cache: bool = False) -> IdentificationResult:
    """Identify on the Silverbox training range, then simulate the test range from rest."""
    if config.data.train_range is None or config.data.test_range is None:
        raise UsageError("the Silverbox pipeline needs data.train_range and data.test_range")
    if config.data.path is None:
        raise UsageError("pass the Silverbox CSV with --data")
    dataset = SilverboxDataset.load(
        config.data.path,
        fs=config.data.fs or 610.35,
        columns=config.data.columns,
        train_range=tuple(config.data.train_range),
        test_range=tuple(config.data.test_range),
        upsample_factor=config.data.upsample,
    )
    with Identifier(cache_dir=config.cache_dir, clear_cache=clear_cache) as identifier:
        return identifier.identify(config, dataset.train(), dataset.test())
