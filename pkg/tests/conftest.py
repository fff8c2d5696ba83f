import re

_CRITERION = re.compile(r"test_criterion_(\d+)_")
_results = {}


def pytest_runtest_makereport(item, call):
    m = _CRITERION.search(item.name)
    if not m or call.when != "call":
        return
    n = int(m.group(1))
    ok = call.excinfo is None
    detail = dict(item.user_properties).get("detail", "")
    if not ok:
        detail = (detail + "; " if detail else "") + str(call.excinfo.value).splitlines()[0][:160]
    _results[n] = (ok, item.name, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        ok, name, detail = _results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {name}  {detail}")
