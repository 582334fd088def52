import numpy as np
import pytest

import katolab as kl
from katolab.report import run_resolution
from katolab.scenarios import load_scenario

SCENARIO_DIR = "scenarios"
SCENARIO_NAMES = (
    "flat_circle",
    "round_sphere",
    "dumbbell_dprime",
    "dumbbell_dynkin",
    "dumbbell_sk",
    "torus_flat",
    "torus_bumpy",
    "hyperbolic_cap",
)

DUMBBELL_EXPR = "2*sin(r/2)*(1 + 0.26*sin(r/2)**2*exp(-((r-1.2)/0.5)**2))"


@pytest.fixture(scope="session")
def circle_256():
    spec = kl.GeometrySpec("conformal_circle", 1, 256, 2 * np.pi)
    geom = kl.build_geometry(spec)
    return geom, kl.decompose(geom)


@pytest.fixture(scope="session")
def sphere3_256():
    w = kl.Profile1D.from_expression("sin(r)")
    geom = kl.build_geometry(kl.GeometrySpec("warped_product", 3, 256, np.pi, profile=w))
    return geom, kl.decompose(geom)


@pytest.fixture(scope="session")
def dumbbell_256():
    w = kl.Profile1D.from_expression(DUMBBELL_EXPR)
    geom = kl.build_geometry(
        kl.GeometrySpec("warped_product", 3, 256, 2 * np.pi, profile=w)
    )
    return geom, kl.decompose(geom)


@pytest.fixture(scope="session")
def torus_32():
    u = kl.Profile2D.from_expression("0.05*cos(x)")
    geom = kl.build_geometry(
        kl.GeometrySpec("conformal_torus_2d", 2, 32, 2 * np.pi, profile=u)
    )
    return geom, kl.decompose(geom)


@pytest.fixture(scope="session")
def shipped():
    """Every shipped scenario executed at all of its configured resolutions."""
    out = {}
    for name in SCENARIO_NAMES:
        scn = load_scenario(f"{SCENARIO_DIR}/{name}.ini")
        runs = [run_resolution(scn, res) for res in scn.resolutions]
        out[name] = {"scenario": scn, "runs": runs}
    return out
