import pytest

# criterion number -> (title, outcome, detail)
_ACCEPTANCE: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.fixture
def report(request):
    """Record a one-line detail for the acceptance summary."""
    marker = request.node.get_closest_marker("criterion")
    entry = _ACCEPTANCE.setdefault(marker.args[0], [marker.args[1], None, ""])

    def _report(text):
        entry[2] = text

    return _report


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    entry = _ACCEPTANCE.setdefault(marker.args[0], [marker.args[1], None, ""])
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        entry[1] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, outcome, detail = _ACCEPTANCE[n]
        line = f"criterion {n:2d} {outcome or 'NOT RUN':7s} {title}"
        if detail:
            line += f"  [{detail}]"
        tr.write_line(line)
