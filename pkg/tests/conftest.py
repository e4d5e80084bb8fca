import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    results = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            name = dict(getattr(rep, "user_properties", ())).get("criterion")
            if name is None:
                continue
            ok = rep.passed and results.get(name, True)
            if rep.when == "call" or not rep.passed:
                results[name] = ok
    if results:
        terminalreporter.section("acceptance criteria")
        for name, ok in results.items():
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
