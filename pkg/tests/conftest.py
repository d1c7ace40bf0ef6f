import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def conservative_flows(basis, rng, reverse_loops=True):
    """Random independent flows: positive consumer flows plus signed loop corrections."""
    H, L = basis.n_consumers, basis.n_flows
    q = np.empty(L)
    q[:H] = rng.uniform(1e-5, 2e-4, H)
    if L > H:
        scale = 3.0 * q[:H].sum() if reverse_loops else 0.1 * q[:H].min()
        q[H:] = rng.uniform(-scale, scale, L - H)
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion, printed at the end of the run."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number, ok, detail):
        store[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        ok, detail = store[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
