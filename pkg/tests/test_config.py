import logging
from pathlib import Path

import pytest

from gplfm.config import Config, ProposalBasis, apply_override, deep_merge
from gplfm.errors import UsageError
from gplfm.mcmc import perturb_priors
from gplfm.state_space import ObservationMode


@pytest.fixture
def config():
    return Config()


def test_cases_are_loaded(config):
    assert {"duffing", "duffing-matern32", "silverbox"} <= set(config.cases)
    assert config.defaults["kernel"]["smoothness"] == "1/2"


def test_unknown_case(config):
    with pytest.raises(UsageError, match="unknown case"):
        config.get_case("van-der-pol")


def test_duffing_case(config):
    run = config.build_run_config("duffing", seed=0)
    assert run.case == "duffing"
    assert run.kernel.smoothness == 0.5
    assert run.data.y_column == "y_noisy"
    assert run.evaluation.fresh_excitation is True
    priors = run.prior_spec()
    assert priors.active_names == ("k", "c", "sigma_f2", "ell", "R")
    assert priors.priors["k"].mean == 96.68
    assert run.simulation.ode().nl_terms == ((3, 1000.0),)
    assert run.simulation.excitation.spec(7).seed == 7


def test_matern32_and_silverbox_cases(config):
    assert config.build_run_config("duffing-matern32", seed=0).kernel.smoothness == 1.5
    silverbox = config.build_run_config("silverbox", seed=0)
    assert silverbox.system.observation is ObservationMode.DISPLACEMENT
    assert silverbox.data.train_range == (49278, 52350)
    assert silverbox.data.test_range == (1, 40500)
    assert silverbox.data.upsample == 4
    assert silverbox.data.columns == {"t": "t", "u": "u", "y": "v"}
    assert silverbox.fitting.order == 3
    assert silverbox.mcmc.proposal_basis is ProposalBasis.SMALLER_OF_STD_AND_MEAN
    # defaults survive where the case is silent
    assert silverbox.fitting.max_order == 9


def test_overrides_and_values(config, tmp_path):
    run = config.build_run_config(
        "duffing",
        ["kernel.smoothness=3/2", "mcmc.n_accept=500", "priors.k.mean=120"],
        seed=4,
        output_dir=tmp_path,
        **{"mcmc.burn_in": 50, "data.path": None},
    )
    assert run.kernel.smoothness == 1.5
    assert run.mcmc.budget == (500, 50)
    assert run.priors["k"].mean == 120.0
    assert run.priors["k"].variance == 100.0
    assert run.output_dir == tmp_path
    assert run.data.path == Path("data/duffing.csv")


@pytest.mark.parametrize(
    "override", ["mcmc.n_accept", "=3", "mcmc.n_accept=[", "mcmc.bogus=1", "kernel.smoothness=5/2"]
)
def test_bad_overrides(config, override):
    with pytest.raises(UsageError):
        config.build_run_config("duffing", [override], seed=0)


def test_full_budget(config):
    duffing = config.build_run_config("duffing", ["mcmc.full_budget=true"], seed=0)
    assert duffing.mcmc.budget == (20000, 2000)
    silverbox = config.build_run_config("silverbox", ["mcmc.full_budget=true"], seed=0)
    assert silverbox.mcmc.budget == (10000, 2000)


def test_missing_config_warns(config, tmp_path, caplog):
    with caplog.at_level(logging.WARNING, logger="gplfm.config"):
        config.load_config(tmp_path / "absent.yaml")
    assert "config not found" in caplog.text
    assert "duffing" in config.cases


def test_partial_user_file(config, tmp_path):
    path = tmp_path / "mine.yaml"
    path.write_text(
        "defaults:\n"
        "  mcmc:\n"
        "    n_accept: 50\n"
        "cases:\n"
        "  - name: duffing\n"
        "    fitting:\n"
        "      max_order: 5\n"
        "  - name: stiff\n"
        "    simulation:\n"
        "      k: 1000.0\n"
        "  - fitting: {}\n",
        encoding="utf-8",
    )
    config.load_config(path)
    duffing = config.build_run_config("duffing", seed=0)
    assert duffing.mcmc.n_accept == 50
    assert duffing.mcmc.burn_in == 200
    assert duffing.fitting.max_order == 5
    assert duffing.priors["k"].mean == 96.68
    assert config.build_run_config("stiff", seed=0).simulation.k == 1000.0


def test_priors_are_required_for_identification(config):
    run = config.build_run_config(None, seed=0)
    assert run.case is None
    with pytest.raises(UsageError, match="no priors"):
        run.prior_spec()
    with pytest.raises(UsageError, match="priors missing"):
        config.build_run_config(None, ["priors.k.mean=1", "priors.k.variance=1"], seed=0)


def test_with_priors(config):
    run = config.build_run_config("duffing", seed=0)
    perturbed = perturb_priors(run.prior_spec(), 1)
    updated = run.with_priors(perturbed)
    assert updated.prior_spec() == perturbed
    assert run.prior_spec() != perturbed
    assert updated.kernel == run.kernel


def test_helpers():
    base = {"a": {"b": 1, "c": 2}, "d": 3}
    merged = deep_merge(base, {"a": {"b": 5}})
    assert merged == {"a": {"b": 5, "c": 2}, "d": 3}
    assert base["a"]["b"] == 1
    assert apply_override(base, "a.c=[1, 2]")["a"]["c"] == [1, 2]
    assert apply_override(base, "e=")["e"] is None
