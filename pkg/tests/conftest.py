import functools

import numpy as np
import pytest

ACCEPTANCE = {}


def record(tag, passed, detail=""):
    """Store one acceptance verdict; the summary hook prints them in order."""
    ACCEPTANCE[tag] = (bool(passed), detail)
    print(f"{tag} {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda k: (int("".join(c for c in k.split()[0][2:] if c.isdigit()) or 0), k)
    for tag in sorted(ACCEPTANCE, key=key):
        ok, detail = ACCEPTANCE[tag]
        terminalreporter.write_line(f"{tag}: {'PASS' if ok else 'FAIL'}  {detail}")


# shared expensive states -------------------------------------------------

@functools.lru_cache(maxsize=None)
def forged_oval(n, eps):
    from eulerforge.forge import forge_oval
    return forge_oval(q=0.5, lam=0.1, eps=eps, n=n)


@functools.lru_cache(maxsize=None)
def forged_torus(n, eps):
    from eulerforge.forge import forge_cellular
    return forge_cellular(eps, n=n)


@functools.lru_cache(maxsize=None)
def base_lambda(n):
    from eulerforge.neumann_oval import solve_semilinear_lambda
    return solve_semilinear_lambda(0.5, 0.1, n=n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
