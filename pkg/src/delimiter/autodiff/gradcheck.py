"""Central finite differences against reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_gradient(fn, arrays, index, perturbation=1e-5) -> np.ndarray:
    base = arrays[index]
    out = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = base[i]
        base[i] = orig + perturbation
        hi = float(fn(*[Tensor(a) for a in arrays]).data)
        base[i] = orig - perturbation
        lo = float(fn(*[Tensor(a) for a in arrays]).data)
        base[i] = orig
        out[i] = (hi - lo) / (2.0 * perturbation)
    return out


def grad_check(fn, inputs, perturbation=1e-5, relative_floor=1e-3) -> float:
    """Worst relative disagreement between reverse-mode and central differences.

    ``fn`` maps Tensors (one per entry of ``inputs``) to a scalar Tensor.
    For each entry the error is ``|a - n| / max(|a|, |n|, floor)`` with
    ``floor = relative_floor * max|n|`` taken over all inputs. Entries whose
    gradient is negligible next to the largest one are thus judged on the
    function's gradient scale; otherwise an input whose true gradient is
    exactly zero would be scored on pure round-off.
    """
    arrays = [np.array(x, dtype=np.float64, copy=True) for x in inputs]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    out.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(a) for leaf, a in zip(leaves, arrays)]
    numeric = [numeric_gradient(fn, arrays, k, perturbation) for k in range(len(arrays))]
    scale = max((float(np.max(np.abs(n))) for n in numeric if n.size), default=0.0)
    floor = max(relative_floor * scale, 1e-12)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if n.size:
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
