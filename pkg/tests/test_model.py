import numpy as np
import pytest

from tube_empc.errors import DimensionError, NonContractiveError
from tube_empc.geometry import Polytope
from tube_empc.model import ConstraintData, LinearTubeModel, build_z_pi


def test_scalar_dynamics():
    m = LinearTubeModel([[1]], [[1]], [[-0.5]])
    assert m.A_K[0, 0] == pytest.approx(0.5)
    assert m.spectral_radius == pytest.approx(0.5)
    assert m.step_real([1.0], [0.2], [0.05]) == pytest.approx([1.0 + (-0.5 + 0.2) + 0.05])
    assert m.step_nominal([1.0], [0.2]) == pytest.approx([0.7])
    assert m.error_next([0.1], [0.05]) == pytest.approx([0.1])


def test_error_dynamics_consistent(rng):
    m = LinearTubeModel([[1, 1], [0, 1]], [[0.5], [1]], [[-0.5, -1.25]])
    for _ in range(10):
        x, z, v, w = rng.standard_normal(2), rng.standard_normal(2), rng.standard_normal(1), rng.standard_normal(2)
        xn = m.step_real(x, v, w)
        zn = m.step_nominal(z, v)
        assert xn - zn == pytest.approx(m.error_next(x - z, w))


def test_non_contractive_gain():
    with pytest.raises(NonContractiveError):
        LinearTubeModel([[1]], [[1]], [[0.5]])


def test_bad_shapes():
    with pytest.raises(DimensionError):
        LinearTubeModel([[1, 0]], [[1]], [[0]])
    with pytest.raises(DimensionError):
        LinearTubeModel([[1]], [[1]], [[0.1, 0.2]])


def test_plant_hook_only_changes_real_step():
    calls = []

    def plant(x, u, w):
        calls.append(1)
        return x + u + w + 1.0

    m = LinearTubeModel([[1]], [[1]], [[-0.5]], plant=plant)
    assert m.step_real([0.0], [0.0], [0.0]) == pytest.approx([1.0])
    assert m.step_nominal([0.0], [0.0]) == pytest.approx([0.0])
    assert calls == [1]


def test_z_pi_maps_input_rows():
    m = LinearTubeModel([[1]], [[1]], [[-0.5]])
    Zp = build_z_pi(Polytope.box([-2, -1], [2, 1]), m)
    # (x, v) = (2, 1.9) gives u = 0.9 (admissible), (0, 1.1) gives u = 1.1 (not)
    assert Zp.contains([2.0, 1.9])
    assert not Zp.contains([0.0, 1.1])


def test_constraint_data_validation():
    m = LinearTubeModel([[1]], [[1]], [[-0.5]])
    with pytest.raises(ValueError):
        ConstraintData.from_model(Polytope.box([-2], [2]), Polytope.box([-0.1], [0.1]), m)
    with pytest.raises(ValueError):
        ConstraintData.from_model(Polytope.box([-2, -1], [2, 1]), Polytope.box([0.1], [0.2]), m)
