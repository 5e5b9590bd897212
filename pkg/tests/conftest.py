import numpy as np
import pytest

from ofnet.autograd import Tensor, backward


def fd_check(build_loss, arrays, eps=1e-5, n_probe=None, seed=0):
    """Worst relative error between analytic and central-difference gradients.

    ``build_loss(tensors)`` maps Tensors wrapping ``arrays`` to a scalar
    Tensor.  All coordinates are probed unless ``n_probe`` is given.  The
    error of one input is ``max|num - ana| / max(|num|, |ana|)``.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    grads = backward(build_loss(tensors), tensors)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, a in enumerate(arrays):
        flat = a.reshape(-1)
        if n_probe is None:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=min(n_probe, flat.size), replace=False)
        num = np.empty(len(coords))
        for j, c in enumerate(coords):
            old = flat[c]
            flat[c] = old + eps
            up = float(build_loss([Tensor(x) for x in arrays]).data)
            flat[c] = old - eps
            down = float(build_loss([Tensor(x) for x in arrays]).data)
            flat[c] = old
            num[j] = (up - down) / (2 * eps)
        ana = grads[k].reshape(-1)[coords]
        scale = max(np.abs(num).max(), np.abs(ana).max(), 1e-12)
        worst = max(worst, float(np.abs(num - ana).max() / scale))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
