"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

_results = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    prev = _results.get(key)
    failed = report.failed or (prev is not None and prev[0] == "FAIL")
    if report.when == "call" or report.failed:
        _results[key] = ("FAIL" if failed else "PASS", props.get("title", ""), props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_results, key=int):
        status, title, detail = _results[key]
        terminalreporter.write_line(f"criterion {key} {status}: {title} | {detail}")
