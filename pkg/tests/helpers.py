"""Shared test utilities: finite-difference gradient oracle and friends.

The oracle only evaluates forward passes (fresh tensors, no tape), so it
stays independent of the reverse-mode path it is used to check.
"""

import numpy as np

from altreco.tensor import Tape, Tensor


def finite_difference(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array.

    ``fn`` receives the array (not a Tensor) and must return a float.
    """
    x = x.astype(np.float64).copy()
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x)
        flat[i] = orig - h
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def autodiff_gradient(fn, x: np.ndarray) -> np.ndarray:
    """Reverse-mode gradient of a scalar Tensor function at x."""
    t = Tensor(x.copy(), requires_grad=True)
    with Tape() as tape:
        loss = fn(t)
        tape.backward(loss)
    return t.grad


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise relative error with a small absolute floor."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def gradcheck(tensor_fn, value_fn, x: np.ndarray, tol: float = 1e-4, h: float = 1e-6) -> float:
    """Compare reverse-mode and central-difference gradients at x.

    ``tensor_fn`` maps a Tensor to a scalar Tensor; ``value_fn`` maps an
    ndarray to a float through an independent forward evaluation.
    Returns the max relative error (and asserts it is under ``tol``).
    """
    err = max_rel_err(autodiff_gradient(tensor_fn, x), finite_difference(value_fn, x, h=h))
    assert err < tol, f"gradient mismatch: max rel err {err:.3e}"
    return err


def sample_coords(shape: tuple, rng: np.random.Generator, limit: int = 12) -> list:
    """A deterministic sample of index tuples into an array."""
    total = int(np.prod(shape)) if shape else 1
    if total <= limit:
        picks = np.arange(total)
    else:
        picks = rng.choice(total, size=limit, replace=False)
    return [np.unravel_index(int(i), shape) if shape else () for i in sorted(picks)]
