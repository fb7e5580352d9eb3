import numpy as np
import pytest

from structmem import tensor_core as tc

ACCEPTANCE_LINES = []


def fd_grad(f, x, eps=1e-5):
    """Central finite differences of scalar f(x) over every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f(x)
        flat[i] = old - eps
        lo = f(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g


def scaled_error(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def tape_grads(fn, *arrays):
    """Gradients of scalar ``fn(*tensors)`` w.r.t. each input array, via the tape."""
    tape = tc.Tape()
    leaves = [tape.leaf(np.array(a, dtype=np.float64)) for a in arrays]
    out = fn(*leaves)
    tc.backward(tape, out)
    return [tape.grad(t) for t in leaves]


def check_op_gradient(fn, *arrays, eps=1e-5, seed=0):
    """Max scaled error between tape and finite-difference gradients of a random projection of fn."""
    rng = np.random.default_rng(seed)
    probe_shape = fn(*[tc.Tensor(a) for a in arrays]).shape
    r = rng.normal(size=probe_shape)

    def loss_t(*ts):
        out = fn(*ts)
        return tc.total(tc.mul(out, tc.Tensor(r))) if out.shape else out

    grads = tape_grads(loss_t, *arrays)
    worst = 0.0
    for idx, a in enumerate(arrays):
        def f(x, idx=idx):
            args = [tc.Tensor(v) for v in arrays]
            args[idx] = tc.Tensor(x)
            return loss_t(*args).item()
        worst = max(worst, scaled_error(grads[idx], fd_grad(f, a, eps)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
