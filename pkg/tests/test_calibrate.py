"""tests the dataset calibration script"""

import importlib.util
from pathlib import Path

import numpy as np
import pytest

from gridstrike.backend import config
from gridstrike.backend.attack import load_fleet
from gridstrike.backend.grid_model import load_grid_case

SCRIPT = Path(__file__).resolve().parents[1] / "scripts" / "calibrate.py"


@pytest.fixture(name="calibrate", scope="module")
def fixture_calibrate():
    """calibration script loaded as a module"""
    spec = importlib.util.spec_from_file_location("calibrate", SCRIPT)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture(name="manhattan")
def fixture_manhattan():
    """bundled dataset"""
    return load_grid_case(config.DEFAULT_CASE)


@pytest.fixture(name="fleet")
def fixture_fleet():
    """bundled fleet"""
    return load_fleet(config.DEFAULT_FLEET)


def test_operating_point_vector_roundtrip(calibrate, manhattan):
    """test the parameter vector rebuilds the shipped operating point"""
    x = calibrate.operating_point_vector(manhattan)
    assert x[:4].tolist() == [854.0, 1115.0, 183.0, 75.0]
    rebuilt = calibrate.with_operating_point(manhattan, x)
    for before, after in zip(manhattan.buses, rebuilt.buses):
        assert after.base_load_p == pytest.approx(before.base_load_p)
        assert after.base_load_q == pytest.approx(before.base_load_q)
    for before, after in zip(manhattan.generators, rebuilt.generators):
        assert (after.p_set, after.v_set) == pytest.approx((before.p_set, before.v_set))
    for value, (low, high) in zip(x, calibrate.OPERATING_POINT_BOUNDS):
        assert low <= value <= high


def test_shipped_operating_point_fits_loading_rows(calibrate, manhattan, fleet):
    """test the shipped loads sit near the optimum of the four-row loading objective"""
    error = calibrate.loading_error(manhattan, fleet)
    assert error < 20.0
    heavier = calibrate.operating_point_vector(manhattan)
    heavier[0] *= 1.2
    assert calibrate.loading_error(calibrate.with_operating_point(manhattan, heavier), fleet) > error


def test_divergence_is_penalised(calibrate, manhattan, fleet):
    """test a non-solvable operating point scores the divergence penalty"""
    x = calibrate.operating_point_vector(manhattan)
    x[:4] = np.array([1e6, 1e6, 1e6, 1e6])
    assert calibrate.loading_error(calibrate.with_operating_point(manhattan, x), fleet) == calibrate.DIVERGED
