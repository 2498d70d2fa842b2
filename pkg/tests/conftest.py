from pathlib import Path

import numpy as np
import pytest

from gplfm.config import Config


def pytest_addoption(parser):
    parser.addoption(
        "--silverbox-data",
        action="store",
        default=None,
        help="Silverbox benchmark CSV (columns u, v) for the slow Silverbox tests",
    )


@pytest.fixture(scope="session")
def silverbox_data(request):
    """Path of the Silverbox CSV; the test is skipped when it was not provided."""
    path = request.config.getoption("--silverbox-data")
    if path is None or not Path(path).exists():
        pytest.skip("Silverbox data not provided (pass --silverbox-data)")
    return Path(path)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def small_config(tmp_path):
    """The Duffing case shrunk to a few hundred samples and a short chain."""
    return Config().build_run_config(
        "duffing",
        [
            "simulation.excitation.n_samples=600",
            "mcmc.n_accept=30",
            "mcmc.burn_in=10",
            "fitting.max_order=3",
            "fitting.n_state_samples=3",
            "use_cache=false",
        ],
        seed=3,
        output_dir=tmp_path / "run",
        cache_dir=tmp_path / "cache",
        **{"data.path": tmp_path / "duffing.csv"},
    )
