"""Shared campaign fixtures.

``tiny_config`` keeps everything but the optics small so orchestration can
be exercised in seconds. ``desk_run`` is a one-cycle, two set-point campaign
with the full sweep that the analysis and CLI tests read from.
"""

import dataclasses

import pytest

from arlhil.config import CampaignConfig, LoadProfile, SweepConfig, desk_preset
from arlhil.lidar.sensor import SensorParams
from arlhil.orchestrator import MANIFEST_NAME, run_campaign


def tiny_config(**changes) -> CampaignConfig:
    base = CampaignConfig(
        profile=LoadProfile(T_min=20.0, T_max=25.0, T_step=5.0, cycle_duration=0.5, policy="ascending"),
        sweep=SweepConfig(-1.875, 1.875, 0.9375),
        frames_per_position=2,
        sensor=SensorParams(mode="parametric", supersample=1),
        cycles=1,
        seed=3,
    )
    return dataclasses.replace(base, **changes)


@pytest.fixture
def tiny():
    return tiny_config


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    cfg = desk_preset(seed=5)
    manifest = run_campaign(cfg, out)
    return out, out / MANIFEST_NAME, manifest, cfg


@pytest.fixture(scope="session")
def desk_reports(desk_run):
    from arlhil.analysis import analyze_manifest

    out, manifest_path, _, _ = desk_run
    run = analyze_manifest(manifest_path, out / "reports")
    assert not run.errors
    return run


# acceptance summary ------------------------------------------------------------

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.failed or (rep.when == "call" and rep.skipped):
        _criteria[n] = (title, "FAIL" if rep.failed else "SKIP")
    elif rep.when == "call" and n not in _criteria:
        _criteria[n] = (title, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")
