"""Shared test utilities (kept out of conftest so test modules can import them)."""
import numpy as np

from advlab.network import cost, input_gradient, loss_and_grads

# filled by tests/test_acceptance.py and printed by conftest.pytest_terminal_summary
ACCEPTANCE_LINES = []

# Gradients smaller than this are compared on an absolute scale: at step 1e-5
# the central difference carries ~1e-11 of float rounding noise, which would
# dominate a purely relative comparison for near-zero components.
GRAD_FLOOR = 1e-6


def rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), GRAD_FLOOR)


def check_gradients(net, x, y, rng, n_input=60, n_param=60, h=1e-5):
    """Central-difference check of input and parameter gradients of ``cost``.

    Returns a list of (where, analytic, numeric, rel_error) tuples.
    """
    bundle = input_gradient(net, x, y)
    out = []
    for i in rng.choice(x.size, size=n_input, replace=False):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        fd = (cost(net, xp, y) - cost(net, xm, y)) / (2 * h)
        a = bundle.input_grad.flat[i]
        out.append((f"x[{i}]", a, fd, rel_error(a, fd)))

    names = sorted(net.params)
    sizes = np.array([net.params[n].size for n in names])
    picks = rng.choice(sizes.sum(), size=n_param, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for g in picks:
        k = int(np.searchsorted(offsets, g, side="right") - 1)
        name, j = names[k], int(g - offsets[k])
        p = net.params[name]
        orig = p.flat[j]
        p.flat[j] = orig + h
        up = cost(net, x, y)
        p.flat[j] = orig - h
        down = cost(net, x, y)
        p.flat[j] = orig
        fd = (up - down) / (2 * h)
        a = bundle.param_grads[name].flat[j]
        out.append((f"{name}[{j}]", a, fd, rel_error(a, fd)))
    return out


def batch_param_grads(net, x, y):
    onehot = np.eye(net.class_count)[np.asarray(y)]
    _, grads, _ = loss_and_grads(net, x, onehot, need_params=True, need_input=False)
    return grads
