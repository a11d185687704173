import pytest

from hmbounds.cli import run
from hmbounds.mesh import SurfaceSpec, build_surface, refine
from hmbounds.scenarios import REGISTRY

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def registry_manifest():
    """The full built-in registry, run once per session without timings."""
    return run(list(REGISTRY), include_timings=False)


def surface_levels(kind, levels, **params):
    mesh = build_surface(SurfaceSpec(kind, params))
    out = [mesh]
    for _ in range(levels - 1):
        mesh = refine(mesh)
        out.append(mesh)
    return out


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::")[-1].split("[")[0]
        ok = report.outcome == "passed" and _ACCEPTANCE.get(name, "PASS") == "PASS"
        _ACCEPTANCE[name] = "PASS" if ok else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        number, _, label = name.removeprefix("test_criterion_").partition("_")
        terminalreporter.write_line(
            f"criterion {int(number):2d} {label.replace('_', ' '):32s} {_ACCEPTANCE[name]}")
