import json

import numpy as np
import pandas as pd
import pytest

from gplfm.config import Config, ProposalBasis
from gplfm.datasets import TimeSeriesSet, ingest_csv
from gplfm.errors import DataError, UsageError
from gplfm.mcmc import mh_sample
from gplfm.pipeline import (
    Identifier,
    proposal_scales,
    run_predict,
    run_simulate,
    simulate_on_grid,
    summarise_chain,
    training_set,
)
from gplfm.results import Coefficient, FittedModel, RunManifest


@pytest.fixture
def mocked_identifier_deps(mocker):
    """
    Mocks the on-disk cache and the sampler of the Identifier.
    """
    mock_cache_class = mocker.patch("gplfm.pipeline.Cache")
    mock_cache_instance = mock_cache_class.return_value
    # Default to a cache miss
    mock_cache_instance.get.return_value = None
    mock_sample = mocker.patch("gplfm.pipeline.mh_sample")
    yield mock_cache_instance, mock_sample


@pytest.fixture
def record():
    rng = np.random.default_rng(0)
    return TimeSeriesSet(
        t=np.arange(100) / 100.0, u=rng.standard_normal(100), y=rng.standard_normal(100), fs=100.0
    )


def _true_model(config):
    sim = config.simulation
    return FittedModel(
        order=3,
        coefficients=[Coefficient(variable="z", degree=3, mean=1000.0, std=0.0)],
        bic=0.0,
        k_map=sim.k,
        k_corrected=sim.k,
        c=sim.c,
        m=sim.m,
        noise_variance=0.0,
        observation=sim.observe,
    )


def test_clear_cache_on_init(mocked_identifier_deps):
    mock_cache_instance, _ = mocked_identifier_deps
    Identifier(clear_cache=True)
    mock_cache_instance.clear.assert_called_once()


def test_close_method(mocked_identifier_deps):
    mock_cache_instance, _ = mocked_identifier_deps
    with Identifier():
        pass
    mock_cache_instance.close.assert_called_once()


def test_sample_posterior_cache_miss(mocked_identifier_deps, small_config, record):
    mock_cache_instance, mock_sample = mocked_identifier_deps
    config = small_config.model_copy(update={"use_cache": True})

    chain, physical_std = Identifier().sample_posterior(config, record)

    assert chain is mock_sample.return_value
    assert physical_std.shape == (2,)
    mock_cache_instance.get.assert_called_once()
    mock_cache_instance.set.assert_called_once()
    kwargs = mock_sample.call_args.kwargs
    assert kwargs["n_accept"] == 30
    assert kwargs["burn_in"] == 10
    assert kwargs["rng_seed"] == 3
    assert kwargs["names"] == ("k", "c", "sigma_f2", "ell", "R")
    np.testing.assert_allclose(kwargs["init"], config.prior_spec().means())


def test_sample_posterior_cache_hit(mocked_identifier_deps, small_config, record):
    mock_cache_instance, mock_sample = mocked_identifier_deps
    mock_cache_instance.get.return_value = "cached chain"
    config = small_config.model_copy(update={"use_cache": True})

    chain, _ = Identifier().sample_posterior(config, record)

    assert chain == "cached chain"
    mock_sample.assert_not_called()
    mock_cache_instance.set.assert_not_called()


def test_sample_posterior_bypasses_cache(mocked_identifier_deps, small_config, record):
    mock_cache_instance, mock_sample = mocked_identifier_deps
    Identifier().sample_posterior(small_config, record)
    mock_cache_instance.get.assert_not_called()
    mock_cache_instance.set.assert_not_called()
    mock_sample.assert_called_once()


def test_cache_key_covers_settings(mocked_identifier_deps, small_config, record):
    mock_cache_instance, _ = mocked_identifier_deps
    config = small_config.model_copy(update={"use_cache": True})
    identifier = Identifier()

    def key(cfg, data=record):
        mock_cache_instance.get.reset_mock()
        identifier.sample_posterior(cfg, data)
        return mock_cache_instance.get.call_args.args[0]

    base = key(config)
    assert key(config) == base
    assert key(config.model_copy(update={"seed": 4})) != base
    kernel = config.kernel.model_copy(update={"smoothness": 1.5})
    assert key(config.model_copy(update={"kernel": kernel})) != base
    shifted = TimeSeriesSet(record.t, record.u, record.y + 1.0, record.fs)
    assert key(config, shifted) != base


def test_proposal_scales(small_config):
    priors = small_config.prior_spec()
    scales = proposal_scales(priors, small_config.mcmc)
    np.testing.assert_allclose(scales, 0.02 * priors.stds())

    mcmc = small_config.mcmc.model_copy(
        update={"proposal_basis": ProposalBasis.SMALLER_OF_STD_AND_MEAN}
    )
    expected = 0.02 * np.minimum(priors.stds(), priors.means())
    np.testing.assert_allclose(proposal_scales(priors, mcmc), expected)


def test_summarise_chain(small_config):
    priors = small_config.prior_spec()
    names = priors.active_names
    means = priors.means()

    def target(theta):
        return -0.5 * float(np.sum(((np.asarray(theta) - means) / priors.stds()) ** 2))

    chain = mh_sample(target, means, 0.5 * priors.stds(), 200, 20, rng_seed=0, names=names)
    summary = summarise_chain(chain, priors, seed=0)
    assert set(summary.parameters) == {"k", "c", "m", "sigma_f2", "ell", "R"}
    mass = summary.parameters["m"]
    assert (mass.active, mass.std, mass.map) == (False, 0.0, 1.0)
    assert summary.parameters["k"].active
    assert summary.parameters["k"].std > 0
    assert summary.accepted == 200
    assert summary.burn_in == 20


def test_training_set_slices_and_upsamples(small_config):
    data = TimeSeriesSet(t=np.arange(20) / 10.0, u=np.arange(20.0), y=np.arange(20.0), fs=10.0)
    update = small_config.data.model_copy(update={"train_range": (3, 10), "upsample": 2})
    part = training_set(small_config.model_copy(update={"data": update}), data)
    assert len(part) == 15
    assert part.u[0] == 2.0
    assert part.u[-1] == 9.0


def test_simulate_on_grid_matches_direct_simulation(small_config):
    ode = small_config.simulation.ode()
    u = np.sin(np.arange(400) / 50.0)
    coarse = simulate_on_grid(ode, u, 100.0)
    fine = simulate_on_grid(ode, u, 100.0, factor=4)
    assert fine.z.size == 400
    scale = np.abs(coarse.z).max()
    np.testing.assert_allclose(fine.z, coarse.z, atol=0.05 * scale)


def test_run_simulate(small_config):
    path = run_simulate(small_config)
    assert path == small_config.data.path
    frame = pd.read_csv(path)
    assert list(frame.columns) == [
        "t", "u", "y_clean", "y_noisy", "z", "zdot", "zdd", "f_nl", "f_total"
    ]
    assert len(frame) == 600
    np.testing.assert_allclose(frame["f_nl"], 1000.0 * frame["z"] ** 3, rtol=1e-9, atol=1e-12)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    assert sidecar["seed"] == 3

    manifest = RunManifest.read(path.parent / "duffing.manifest.json")
    assert manifest.status == "succeeded"
    assert manifest.seeds == {"excitation": 3, "noise": 4}
    assert set(manifest.artifacts) == {"duffing.csv", "duffing.json"}

    again = pd.read_csv(run_simulate(small_config, path.parent / "again.csv"))
    pd.testing.assert_frame_equal(frame, again)


def test_run_predict_with_true_model(small_config, tmp_path):
    data_path = run_simulate(small_config)
    model_path = _true_model(small_config).write(tmp_path / "true_model.json")

    report = run_predict(model_path, data_path, tmp_path / "predict", truth_column="y_clean")

    assert report.metrics["nmse"] < 1e-6
    assert (tmp_path / "predict" / "periodogram_prediction.csv").exists()
    prediction = pd.read_csv(tmp_path / "predict" / "prediction.csv")
    assert list(prediction.columns) == ["t", "u", "z", "zdot", "zdd", "y_hat", "y"]
    truth = ingest_csv(data_path, columns={"y": "y_noisy"})
    np.testing.assert_allclose(prediction["z"], truth.extra["z"], atol=1e-9)


def test_run_predict_without_truth(small_config, tmp_path):
    data_path = run_simulate(small_config)
    model_path = _true_model(small_config).write(tmp_path / "true_model.json")

    report = run_predict(
        model_path, data_path, tmp_path / "predict", truth_column="absent", linear=True
    )

    assert report.metrics == {}
    assert report.notes
    assert not (tmp_path / "predict" / "periodogram_prediction.csv").exists()
    assert "y" not in pd.read_csv(tmp_path / "predict" / "prediction.csv").columns


def test_run_predict_bad_model(tmp_path):
    with pytest.raises(DataError, match="not found"):
        run_predict(tmp_path / "absent.json", tmp_path / "x.csv", tmp_path / "out")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(DataError, match="not a fitted model"):
        run_predict(bad, tmp_path / "x.csv", tmp_path / "out")


def test_identify_requires_seed(small_config):
    with Identifier(cache_dir=small_config.cache_dir) as identifier:
        with pytest.raises(UsageError, match="--seed"):
            identifier.identify(small_config.model_copy(update={"seed": None}))


def test_failed_identify_still_writes_manifest(small_config):
    # the configured data file was never simulated
    with Identifier(cache_dir=small_config.cache_dir) as identifier:
        with pytest.raises(DataError):
            identifier.identify(small_config)
    manifest = RunManifest.read(small_config.output_dir / "manifest.json")
    assert manifest.status == "failed"
    assert manifest.partial
    assert manifest.error.startswith("DataError")
    assert manifest.seeds == {"mcmc": 3, "state_samples": 4, "fresh_excitation": 5}


def test_small_identification(small_config):
    run_simulate(small_config)
    with Identifier(cache_dir=small_config.cache_dir) as identifier:
        result = identifier.identify(small_config)

    out = small_config.output_dir
    for name in (
        "chain.csv",
        "posterior_summary.json",
        "smoothed_states.csv",
        "state_samples/sample_002.csv",
        "restoring_force.csv",
        "bic.csv",
        "restoring_force_fit.csv",
        "fitted_model.json",
        "residual_report.json",
        "periodogram_residual.csv",
        "periodogram_forcing.csv",
        "simulation_comparison.csv",
        "periodogram_simulation.csv",
        "metrics.json",
    ):
        assert (out / name).exists(), name

    manifest = RunManifest.read(out / "manifest.json")
    assert manifest.status == "succeeded"
    assert "state_samples/sample_000.csv" in manifest.artifacts
    assert manifest.config["case"] == "duffing"

    assert 1 <= result.fitted.order <= 3
    assert result.fitted.m == 1.0
    assert result.summary.accepted == 30
    assert len(pd.read_csv(out / "chain.csv")) == 20
    assert len(pd.read_csv(out / "restoring_force.csv")) == 3 * 600
    assert set(pd.read_csv(out / "bic.csv")["order"]) == {1, 2, 3}
    curve = pd.read_csv(out / "restoring_force_fit.csv")
    assert len(curve) == 200
    assert curve["z"].is_monotonic_increasing
    assert (curve["std"] >= 0).all()
    band = curve["upper"] - curve["lower"]
    np.testing.assert_allclose(band, 6.0 * curve["std"], rtol=1e-6, atol=1e-9 * band.abs().max())
    midpoint = 0.5 * (curve["upper"] + curve["lower"])
    np.testing.assert_allclose(midpoint, curve["mean"], rtol=1e-6, atol=1e-9 * band.abs().max())
    for metric in ("nmse_z", "nmse_f_hat", "simulation_nmse_nonlinear", "fit_nmse_f_total"):
        assert np.isfinite(result.metrics.metrics[metric])
    assert FittedModel.read(out / "fitted_model.json") == result.fitted


def test_small_prior_sensitivity(small_config):
    run_simulate(small_config)
    with Identifier(cache_dir=small_config.cache_dir) as identifier:
        report = identifier.prior_sensitivity(small_config, n_priors=2)
        with pytest.raises(UsageError):
            identifier.prior_sensitivity(small_config, n_priors=0)

    out = small_config.output_dir
    assert len(report.runs) == 2
    assert report.priors[0]["k"] == 96.68
    assert report.priors[1]["k"] != 96.68
    assert [p["m"] for p in report.priors] == [1.0, 1.0]
    assert set(report.map_spread) == {"k", "c", "m", "sigma_f2", "ell", "R"}
    assert (out / "prior_00" / "fitted_model.json").exists()
    assert (out / "prior_01" / "manifest.json").exists()
    frame = pd.read_csv(out / "prior_sensitivity.csv")
    assert len(frame) == 2 * 6
    assert RunManifest.read(out / "manifest.json").status == "succeeded"


def test_config_without_priors_is_rejected(tmp_path):
    config = Config().build_run_config(None, seed=0, output_dir=tmp_path)
    with pytest.raises(UsageError):
        config.prior_spec()
