import numpy as np
import pytest
from scipy.optimize import linprog

from robustks.trimming import cdf_pair_values

_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call":
        _ACCEPTANCE.append((marker.args[0], marker.args[1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, text, outcome in sorted(_ACCEPTANCE):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {text}")


def lp_trimmed_ks(target, source, alpha):
    """Trimmed KS distance as a linear program over h at the source levels."""
    tv, sv = cdf_pair_values(target, source)
    levels = np.unique(np.r_[0.0, sv, 1.0])
    K = levels.size
    pos = {u: i for i, u in enumerate(levels)}
    nv = K + 1
    rows, rhs = [], []
    for t_i, s_i in zip(tv, sv):
        r = np.zeros(nv); r[pos[s_i]] = 1; r[-1] = -1
        rows.append(r); rhs.append(t_i)
        r = np.zeros(nv); r[pos[s_i]] = -1; r[-1] = -1
        rows.append(r); rhs.append(-t_i)
    for j in range(K - 1):
        r = np.zeros(nv); r[j] = 1; r[j + 1] = -1
        rows.append(r); rhs.append(0.0)
        r = np.zeros(nv); r[j + 1] = 1; r[j] = -1
        rows.append(r); rhs.append((levels[j + 1] - levels[j]) / (1 - alpha))
    bounds = [(0, 1)] * K + [(0, None)]
    bounds[0], bounds[K - 1] = (0, 0), (1, 1)
    c = np.zeros(nv); c[-1] = 1
    res = linprog(c, A_ub=np.array(rows), b_ub=rhs, bounds=bounds, method="highs")
    assert res.status == 0
    return res.fun


@pytest.fixture
def lp_oracle():
    return lp_trimmed_ks
