import numpy as np
import pytest

from meshparam.geometry import naca_generate
from meshparam.mesh import o_mesh, sample_template


@pytest.fixture(scope="session")
def naca0012():
    return naca_generate("0012", 200)


@pytest.fixture(scope="session")
def template_mesh(naca0012):
    return o_mesh(naca0012)


@pytest.fixture(scope="session")
def template(template_mesh):
    return sample_template(template_mesh, fixed_band=0.5)


@pytest.fixture(scope="session")
def small_template():
    # coarse mesh for fast unit tests
    mesh = o_mesh(naca_generate("0012", 64), n_radial=6)
    return mesh, sample_template(mesh, n_volume=120, fixed_band=1.0, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def dmm_2412(template):
    """Default DMM fit NACA 0012 -> 2412 with its wall time."""
    import time

    from meshparam.dmm import DmmConfig, fit_dmm

    target = naca_generate("2412", 200)
    t0 = time.perf_counter()
    result = fit_dmm(target, template, DmmConfig(), iters=600)
    return target, result, time.perf_counter() - t0


@pytest.fixture
def criterion(request):
    """Record one acceptance line: criterion(n, ok, detail)."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[n] = line
        print(line)
        return ok

    return record


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
