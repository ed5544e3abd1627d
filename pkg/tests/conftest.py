import numpy as np
import pytest

from riskdp.instances import maintenance_problem

# mean-semideviation risk of a cost c1 paid with probability 1 - x
# (lambda = 0.5, p = 2, c1 = 0.5); evaluated by hand from the two-point law
K_Q = 0.18944271909999155   # x = q = 0.8
K_H = 0.41274950199005567   # x = h = 0.3
C1, C2 = 0.5, 1.0


@pytest.fixture
def maint():
    return maintenance_problem(q=0.8, h=0.3, c1=C1, c2=C2, lam=0.5, p=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class MeanPlusVariance:
    """Not coherent: the penalty scales quadratically."""

    def evaluate(self, values, probs):
        v, w = np.asarray(values), np.asarray(probs)
        m = w @ v
        return float(m + 0.5 * (w @ (v - m) ** 2))

    def __str__(self):
        return "mean+variance"


# filled by test_acceptance; one (number, passed, text) entry per criterion
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, text in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}")
