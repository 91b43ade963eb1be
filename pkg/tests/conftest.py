import functools

import numpy as np
import pytest

from entroflow.grid import DensityField, Grid1D, gauss_cell_averages
from entroflow.lwr_av_models import DimensionalField, DimensionalParams, run_av, run_lwr
from entroflow.model_functions import make_tanh_model
from entroflow.scenario_runner import congestion_belt, quartic_bump

EPS1, EPS2 = -0.52, 2.52

BELT = dict(road_start=0.0, road_end=4.0, belt_start=1.5, belt_end=2.75, peak=55.0,
            shoulder_left=20.0, shoulder_right=20.0, ramp=0.25)


def academic_ic(x):
    return quartic_bump(x, EPS1, EPS2, 0.25)


def academic_field(dx=0.04):
    g = Grid1D.spanning(-1.0, 3.0, dx)
    return DensityField(g, gauss_cell_averages(academic_ic, g))


@pytest.fixture
def tanh1():
    return make_tanh_model(1.0, 2.0, 1.0)


@pytest.fixture
def field0():
    return academic_field()


def belt_field(x0, x1, dx, **over):
    g = Grid1D.spanning(x0, x1, dx)
    params = dict(BELT, **over)
    return DimensionalField(g, gauss_cell_averages(lambda x: congestion_belt(x, **params), g))


@functools.lru_cache(maxsize=None)
def traffic_trace(model, v_star=70.0):
    """Cached one-hour traffic runs on the default belt reconstruction."""
    p = DimensionalParams(v_star=v_star)
    if model == "lwr":
        return run_lwr(belt_field(0.0, 120.0, 0.05), p, 1.0, samples=600)
    return run_av(belt_field(-4.0, 12.0, 0.05), p, 1.0, samples=600)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
