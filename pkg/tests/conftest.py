"""Collects one PASS/FAIL line per acceptance criterion and prints them after the run."""

import pytest

_RESULTS: dict[int, dict] = {}


@pytest.fixture
def detail(request):
    """Attach measured values to the criterion line of the running test."""
    marker = request.node.get_closest_marker("criterion")
    notes = _RESULTS.setdefault(marker.args[0], {"title": marker.args[1], "ok": True, "notes": []})["notes"]
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not rep.failed:
        return
    entry = _RESULTS.setdefault(marker.args[0], {"title": marker.args[1], "ok": True, "notes": []})
    entry["ok"] = entry["ok"] and not rep.failed


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        e = _RESULTS[n]
        line = f"criterion {n}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["notes"]:
            line += "  [" + "; ".join(e["notes"]) + "]"
        terminalreporter.write_line(line)
