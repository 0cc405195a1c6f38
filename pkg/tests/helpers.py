"""Shared test oracles."""

import numpy as np

from centerseg.autodiff import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of scalar ``f(x)``; optionally only at flat ``index`` entries."""
    flat = x.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = np.zeros(len(idx) if index is not None else flat.size)
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[j] = (fp - fm) / (2 * h)
    return out if index is not None else out.reshape(x.shape)


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_op_grad(fn, *shapes, seed=0, h=1e-5, positive=False):
    """Compare autodiff and central-difference gradients of ``sum(fn(*xs) * w)``."""
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    if positive:
        arrays = [np.abs(a) + 0.5 for a in arrays]
    probe = None
    errs = []
    for k in range(len(arrays)):
        xs = [Tensor(a, requires_grad=True) for a in arrays]
        out = fn(*xs)
        if probe is None:
            probe = rng.normal(size=out.shape)
        (out * Tensor(probe)).sum().backward()

        def f():
            return float((fn(*[Tensor(a) for a in arrays]).data * probe).sum())

        num = numeric_grad(f, arrays[k], h)
        errs.append(rel_err(xs[k].grad, num))
    return max(errs)
