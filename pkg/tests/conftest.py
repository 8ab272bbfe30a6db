"""Shared test utilities.

gradcheck is the independent oracle for every differentiable op: it compares
the engine's backward pass against central finite differences computed from
forward evaluations only (h = 1e-5, float64).
"""

import numpy as np
import pytest

from edakit.engine import Tensor


def numerical_grad(func, tensors, index, h=1e-5):
    """Central finite differences of a scalar-valued func w.r.t. tensors[index]."""
    t = tensors[index]
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = func(*tensors).item()
        flat[i] = orig - h
        lo = func(*tensors).item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def gradcheck(func, tensors, h=1e-5, rtol=1e-4):
    """Assert analytic gradients match finite differences for every input.

    func maps the tensors to a scalar Tensor. Returns the worst relative
    error seen, for reporting.
    """
    for t in tensors:
        t.zero_grad()
    out = func(*tensors)
    assert out.size == 1, "gradcheck needs a scalar objective"
    out.backward()
    worst = 0.0
    for idx, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_grad(func, tensors, idx, h=h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max()))
        assert rel.max() < rtol, (
            f"gradient mismatch on input {idx}: max rel err {rel.max():.3e}"
        )
    return worst


def rand_tensor(rng, shape, requires_grad=True, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=requires_grad)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
