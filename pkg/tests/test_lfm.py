import numpy as np
import pytest

from gplfm.errors import InvalidParameterError
from gplfm.lfm import FORCE_STATE, PARAMETER_NAMES, LatentForceModel, diffuse_state_std
from gplfm.state_space import ObservationMode, SdofParams

VALUES = {"k": 1.0e4, "c": 10.0, "m": 1.0, "sigma_f2": 4.0, "ell": 0.05, "R": 1e-2}


def test_from_values():
    model = LatentForceModel.from_values(VALUES, "1/2", "displacement")
    assert model.params == SdofParams(m=1.0, k=1.0e4, c=10.0)
    assert model.kernel.smoothness == 0.5
    assert model.R == 1e-2
    assert model.mode is ObservationMode.DISPLACEMENT
    assert set(PARAMETER_NAMES) == set(VALUES)


def test_from_values_validates():
    with pytest.raises(InvalidParameterError):
        LatentForceModel.from_values({**VALUES, "m": -1.0}, 0.5, "acceleration")
    with pytest.raises(ValueError):
        LatentForceModel.from_values(VALUES, 0.5, "jerk")


@pytest.mark.parametrize("smoothness, n_states", [(0.5, 3), (1.5, 4)])
def test_discretize_shapes(smoothness, n_states):
    model = LatentForceModel.from_values(VALUES, smoothness, "acceleration").discretize(1e-3)
    assert model.A.shape == (n_states, n_states)
    assert model.B.shape == (n_states, 1)
    assert model.C.shape == (1, n_states)
    np.testing.assert_allclose(model.R, [[1e-2]])
    # the force state enters the acceleration output with -1/m
    assert model.C[0, FORCE_STATE] == pytest.approx(-1.0)


@pytest.mark.parametrize("smoothness", [0.5, 1.5])
def test_initial_belief(smoothness):
    lfm = LatentForceModel.from_values(VALUES, smoothness, "acceleration")
    belief = lfm.initial_belief([2.0, 3.0])
    cov = belief.cov
    np.testing.assert_allclose(belief.mean, 0.0)
    np.testing.assert_allclose(cov[:2, :2], np.diag([4.0, 9.0]), atol=1e-10)
    np.testing.assert_allclose(cov[:2, 2:], 0.0, atol=1e-10)
    assert cov[FORCE_STATE, FORCE_STATE] == pytest.approx(VALUES["sigma_f2"])


def test_diffuse_state_std():
    params = SdofParams(m=1.0, k=100.0, c=0.0)
    y = np.array([-1.0, 1.0, -1.0, 1.0])
    np.testing.assert_allclose(diffuse_state_std(y, "displacement", params), [1e3, 1e4])
    np.testing.assert_allclose(diffuse_state_std(y, "velocity", params, factor=1.0), [0.1, 1.0])
    np.testing.assert_allclose(
        diffuse_state_std(y, ObservationMode.ACCELERATION, params, factor=1.0), [0.01, 0.1]
    )
    np.testing.assert_allclose(diffuse_state_std(np.zeros(5), "displacement", params), [1e3, 1e4])
