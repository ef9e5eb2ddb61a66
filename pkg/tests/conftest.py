import numpy as np
import pytest

from npsr.grid import PointCloud


def sphere_cloud(n=20_000, radius=0.3, center=(0.5, 0.5, 0.5), seed=0):
    """Uniform samples on a sphere with outward unit normals."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return PointCloud(np.asarray(center) + radius * d, d.copy())


def sphere_sdf(r, radius=0.3, center=(0.5, 0.5, 0.5)):
    c = (np.arange(r) + 0.5) / r
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    return np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2) - radius


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sphere20k():
    return sphere_cloud()


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in name:
                continue
            if rep.when != "call" and outcome != "error":
                continue
            detail = dict(rep.user_properties).get("detail", "")
            rows[name.split("::")[-1]] = ("PASS" if outcome == "passed" else "FAIL", detail)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(rows):
        status, detail = rows[name]
        terminalreporter.write_line(f"{status}  {name}  {detail}")
