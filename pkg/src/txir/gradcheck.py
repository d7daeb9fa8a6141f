"""Finite-difference verification of the reverse-mode gradients.

Central differences (f(x+eps) - f(x-eps)) / (2*eps) are computed per element
in float64 and compared against the tape gradients. For large tensors a
deterministic element subset is probed; small tensors are swept fully.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, TxirError, float64_mode, no_grad, backward, clear_graph


def _probe_indices(size: int, max_probes: int) -> np.ndarray:
    if size <= max_probes:
        return np.arange(size)
    # evenly spaced deterministic picks, always including both ends
    return np.unique(np.linspace(0, size - 1, max_probes).astype(np.int64))


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(|a|, |n|, 1): relative for large grads, absolute near zero."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[Tensor],
              eps: float = 1e-5, max_probes_per_input: int = 24,
              use_given: bool = False) -> float:
    """Return the max relative error between tape and finite-difference gradients.

    ``f`` maps tensors to a scalar tensor. By default the inputs are copied
    into fresh float64 leaves and passed to ``f``. With ``use_given`` the
    passed tensors themselves are treated as the leaves: ``f`` may ignore its
    arguments and reference them through an enclosing structure (parameter
    containers); they must already hold float64 data.
    """
    with float64_mode():
        if use_given:
            leaves = list(inputs)
            for t in leaves:
                if t.dtype != np.float64:
                    raise TxirError(f"use_given gradcheck needs float64 leaves, got {t.dtype}")
                t.requires_grad = True
                t.grad = None
        else:
            leaves = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in inputs]
        clear_graph()
        out = f(*leaves)
        backward(out)

        worst = 0.0
        for leaf in leaves:
            analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
            flat = leaf.data.reshape(-1)
            probes = _probe_indices(flat.size, max_probes_per_input)
            numeric = np.zeros(probes.size, dtype=np.float64)
            with no_grad():
                for j, idx in enumerate(probes):
                    orig = flat[idx]
                    flat[idx] = orig + eps
                    hi = f(*leaves).item()
                    flat[idx] = orig - eps
                    lo = f(*leaves).item()
                    flat[idx] = orig
                    numeric[j] = (hi - lo) / (2.0 * eps)
            worst = max(worst, relative_error(analytic.reshape(-1)[probes], numeric))
        return worst
