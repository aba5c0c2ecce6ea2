import numpy as np
import pytest

from netfuse.model import SensorModel, SystemModel, load_scenario


@pytest.fixture(scope="session")
def tracking3():
    return load_scenario("tracking3.json")


@pytest.fixture(scope="session")
def disorder14():
    return load_scenario("disorder14.json")


def random_stable(rng, r=2, radius=0.9):
    """Random r x r matrix scaled to spectral radius ``radius``."""
    A = rng.standard_normal((r, r))
    return A * radius / np.abs(np.linalg.eigvals(A)).max()


def random_psd(rng, n, floor=0.1):
    M = rng.standard_normal((n, n))
    return M @ M.T / n + floor * np.eye(n)


def plain_system(rng, r=2, m=1):
    """Linear-Gaussian system with correlated process/measurement noise and
    no uncertainty structures, plus one sensor."""
    A = random_stable(rng, r)
    G = rng.standard_normal((r, 1))
    system = SystemModel(A=A, mu0=rng.standard_normal(r), P0=random_psd(rng, r),
                         G=G, R=np.array([[0.3]]))
    sensor = SensorModel(C=rng.standard_normal((m, r)), G_s=rng.standard_normal((m, 1)))
    return system, sensor


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if not mod or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
