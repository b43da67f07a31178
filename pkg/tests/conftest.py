import os
from pathlib import Path

import pytest
from hypothesis import settings

from tokensmooth.testing import make_checkpoint
from tokensmooth.unicode_ranges import parse_range_spec

settings.register_profile("ci", max_examples=200, deadline=None)
settings.register_profile("dev", max_examples=50, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

ASSETS = Path(__file__).parent / "assets"


@pytest.fixture(scope="session")
def cjk():
    return parse_range_spec(["U+4E00-U+9FFF"])


@pytest.fixture(params=["F32", "F16", "BF16"])
def dtype(request):
    return request.param


@pytest.fixture
def checkpoint(tmp_path, dtype):
    return make_checkpoint(tmp_path / f"model-{dtype}", dtype)


# one PASS/FAIL/SKIP line per acceptance criterion, printed after the run
_CRITERIA: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    number, title = marker
    entry = _CRITERIA.setdefault(number, {"title": title, "outcomes": [], "failed": []})
    if report.when == "call" or report.outcome != "passed":
        entry["outcomes"].append(report.outcome)
        if report.outcome == "failed":
            entry["failed"].append(report.nodeid.split("::")[-1])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result().acceptance = (marker.kwargs["criterion"], marker.kwargs["title"])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        outcomes = entry["outcomes"]
        if "failed" in outcomes:
            verdict = "FAIL"
        elif outcomes and all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        detail = f"  (failed: {', '.join(entry['failed'])})" if entry["failed"] else ""
        terminalreporter.write_line(f"criterion {number} {verdict}: {entry['title']}{detail}")
