import numpy as np
import pytest

from depthflow.tensor import Tape, backward


def fd_gradients(f, tensors, step=1e-5):
    """Central finite differences of a scalar function of the given tensors.

    `f` re-evaluates the forward pass from the tensors' current data; each
    coordinate is perturbed in place and restored.
    """
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * step)
        grads.append(g.reshape(t.data.shape))
    return grads


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def check_gradients(build, params, tol=1e-4, step=1e-5):
    """Compare tape gradients of `build()` (a scalar Tensor) with central
    finite differences over every tensor in `params`.

    When both sides vanish (true-zero gradients, e.g. softmax shift
    invariance) the relative error is meaningless and the pair passes on an
    absolute threshold instead.
    """
    with Tape():
        loss = build()
    grads = backward(loss)
    numeric = fd_gradients(lambda: build().item(), params, step=step)
    for p, num in zip(params, numeric):
        got = grads.get(p)
        if got is None:
            got = np.zeros_like(p.data)
        if max(np.linalg.norm(got), np.linalg.norm(num)) < 1e-7:
            continue
        err = rel_err(got, num)
        assert err < tol, f"gradient mismatch {err:.2e} for shape {p.shape}"


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
