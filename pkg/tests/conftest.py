import pytest

from pickstate.pipeline import PipelineConfig, run_pipeline

_criteria: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    if report.when == "call" or report.failed:
        prev = _criteria.get(number, (text, True))
        _criteria[number] = (text, prev[1] and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        text, ok = _criteria[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}")


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """Default pipeline (seed 42, 72/11 corpus), run once per session."""
    import time

    out = tmp_path_factory.mktemp("run_a")
    start = time.perf_counter()
    rf, mlp = run_pipeline(PipelineConfig(seed=42), out)
    return {"out": out, "rf": rf, "mlp": mlp, "seconds": time.perf_counter() - start}
