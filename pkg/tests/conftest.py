import numpy as np
import pytest

from mmss.dataset import make_synthetic


def numeric_grad(loss_fn, node, h=1e-5, indices=None):
    """Central differences of ``loss_fn()`` w.r.t. the entries of ``node.value``."""
    flat = node.value.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = np.zeros(flat.size)
    for i in indices:
        old = flat[i]
        flat[i] = old + h
        up = loss_fn()
        flat[i] = old - h
        down = loss_fn()
        flat[i] = old
        out[i] = (up - down) / (2 * h)
    return out.reshape(node.value.shape)


def max_rel_err(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture(scope="session")
def tiny_products():
    return make_synthetic(3, 6, 8, 6, seed=11, s_noise=0.2)


@pytest.fixture(scope="session")
def desk_products():
    return make_synthetic(4, 8, 16, 16, seed=7, s_noise=0.1)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one human-readable verdict line per acceptance criterion."""

    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
