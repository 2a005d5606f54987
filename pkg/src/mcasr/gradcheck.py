"""Central finite-difference gradient checking.

Reverse-mode gradients are compared against an independent numerical
estimate obtained by re-running the forward computation with perturbed
inputs. Used by the test suite and the ``gradcheck`` CLI subcommand.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    """|a - b| scaled by the larger magnitude; absolute below ``floor``."""
    denom = max(abs(a), abs(b))
    if denom < floor:
        return abs(a - b)
    return abs(a - b) / denom


def finite_difference(build_loss, t: Tensor, index, h: float = 1e-5) -> float:
    """Central difference of ``build_loss()`` w.r.t. one entry of ``t``.

    ``build_loss`` must rebuild the forward graph from current tensor data
    and return a scalar Tensor.
    """
    flat = t.data.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    up = float(build_loss().data)
    flat[index] = orig - h
    down = float(build_loss().data)
    flat[index] = orig
    return (up - down) / (2.0 * h)


def check_gradients(
    build_loss,
    tensors,
    h: float = 1e-5,
    max_entries_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
):
    """Compare reverse-mode gradients of ``build_loss`` against central differences.

    ``tensors`` is a dict name -> Tensor (requires_grad). Returns
    ``(max_rel_err, failures)`` where failures lists every checked entry with
    its analytic and numerical gradient and relative error.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for t in tensors.values():
        t.zero_grad()
    loss = build_loss()
    loss.backward()
    grads = {
        name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
        for name, t in tensors.items()
    }

    max_err = 0.0
    records = []
    for name, t in tensors.items():
        n = t.size
        if max_entries_per_tensor is not None and n > max_entries_per_tensor:
            idx = rng.choice(n, size=max_entries_per_tensor, replace=False)
        else:
            idx = np.arange(n)
        analytic_flat = grads[name].reshape(-1)
        for i in idx:
            fd = finite_difference(build_loss, t, int(i), h=h)
            an = float(analytic_flat[int(i)])
            err = relative_error(an, fd)
            max_err = max(max_err, err)
            records.append((name, int(i), an, fd, err))
    return max_err, records
