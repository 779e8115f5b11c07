import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from grosslab.model import FormFactorSpec, ModelConfig, build_grid
from grosslab.qspace import QSpace

settings.register_profile(
    "grosslab",
    deadline=None,
    max_examples=30,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("grosslab")

TWO_PI = 2 * math.pi


def make_config(**kw):
    base = dict(
        dimension=1,
        torus_length=TWO_PI,
        sites_per_dim=8,
        nmax=3,
        form_factor=FormFactorSpec("smooth_power", beta=0.125),
        K=1.5,
        lambda_list=(2.5, 3.5),
    )
    base.update(kw)
    return ModelConfig(**base)


# desk-scale reference model shared by the acceptance module and the slow tests
REF_CONFIG = ModelConfig(
    dimension=1,
    torus_length=TWO_PI,
    sites_per_dim=16,
    nmax=4,
    form_factor=FormFactorSpec("smooth_power", beta=0.125),
    K=2.0,
    lambda_list=(2.5, 3.5, 4.5, 5.5),
)


@pytest.fixture(scope="session")
def small_config():
    return make_config()


@pytest.fixture(scope="session")
def small_space(small_config):
    return QSpace(build_grid(small_config), small_config.nmax, mode_cutoff=small_config.lambda_ref)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance summary ----------------------------------------------------
_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion():
    def record(number, title, ok, detail=""):
        _CRITERIA[(number, title)] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), (ok, detail) in sorted(_CRITERIA.items(), key=lambda kv: (int(str(kv[0][0]).rstrip("ab")), str(kv[0][0]))):
        line = f"criterion {number!s:>4}: {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
