import math

import numpy as np
import pytest
from click.testing import CliRunner

from semimix.models import IntensitySpec, Linear, Threshold
from semimix.seeds import CompoundPoisson, GaussianWithFloor, GaussianZeroMean, Poisson, ZeroInflatedPoisson
from semimix.stats import wilson_interval

ACCEPTANCE_LINES = []


def record_acceptance(label, passed, detail=""):
    line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def assert_close(actual, expected, tol=1e-12, rel=0.0):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    limit = tol + rel * np.abs(expected)
    worst = float(np.max(np.abs(actual - expected) - limit))
    assert worst <= 0, f"{actual} != {expected} (tol {tol}, rel {rel})"


def assert_in_wilson(successes, trials, p, level=0.99):
    lo, hi = wilson_interval(successes, trials, level)
    assert lo <= p <= hi, f"p={p} outside [{lo}, {hi}] for {successes}/{trials}"


def assert_exit(result, code):
    assert result.exit_code == code, f"exit {result.exit_code}, output:\n{result.output}"


@pytest.fixture
def poisson():
    return Poisson()


@pytest.fixture(
    params=[
        Poisson(),
        ZeroInflatedPoisson(0.7),
        CompoundPoisson(((1, 0.5), (2, 0.3), (4, 0.2))),
    ],
    ids=["poisson", "zip", "compound"],
)
def discrete_family(request):
    return request.param


@pytest.fixture(params=[GaussianZeroMean(), GaussianWithFloor(0.5)], ids=["gauss", "gauss-floor"])
def gaussian_family(request):
    return request.param


@pytest.fixture
def linear11():
    return IntensitySpec(Linear(1.0, (0.3,), (0.5,)))


@pytest.fixture
def linear22():
    return IntensitySpec(Linear(0.5, (0.2, 0.1), (0.3, 0.2)))


@pytest.fixture
def threshold_spec():
    return IntensitySpec(Threshold(0.0, 3.0, (1.0, 0.2, 0.5), (2.0, 0.1, 0.6)))


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def write_config(tmp_path):
    def _write(text, name="run.cfg"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    return _write


LINEAR_CFG = """\
model.form = linear
model.a0 = 1
model.a = 0.3
model.b = 0.5
family.kind = poisson
"""


def poisson_pmf(lam, k):
    return math.exp(-lam + k * math.log(lam) - math.lgamma(k + 1)) if lam > 0 else float(k == 0)
