import numpy as np
import pytest

from vsa_lab import autodiff as ad


def numeric_grad(fn, arr, eps=1e-6):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        hi = fn()
        arr[i] = old - eps
        lo = fn()
        arr[i] = old
        out[i] = (hi - lo) / (2 * eps)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def check_grads(build, *arrays, tol=1e-6, eps=1e-6):
    """``build(*tensors) -> scalar Tensor``; compare backward against finite differences."""
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    ad.backward(build(*tensors))
    for t in tensors:
        num = numeric_grad(lambda: float(build(*[ad.Tensor(u.data) for u in tensors]).data), t.data, eps)
        assert rel_err(t.grad, num) < tol


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
