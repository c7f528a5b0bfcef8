"""Finite-difference gradient checking against the reverse-mode tape."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import ContractError, NumericError, Tensor, backward


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per component is |analytic - numeric| / max(1, |analytic|, |numeric|).
    eps must lie in [1e-7, 1e-4].
    """
    if not (1e-7 <= eps <= 1e-4):
        raise ContractError(f"grad_check: eps {eps} outside [1e-7, 1e-4]")
    leaf = Tensor(x.data.copy(), requires_grad=True)
    out = f(leaf)
    if out.size != 1:
        raise ContractError("grad_check: f must return a scalar")
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

    flat = leaf.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        probe = flat.copy()
        probe[i] = orig + eps
        fp = f(Tensor(probe.reshape(x.shape))).item()
        probe[i] = orig - eps
        fm = f(Tensor(probe.reshape(x.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"grad_check: non-finite probe at component {i}")
        numeric[i] = (fp - fm) / (2.0 * eps)

    a = analytic.reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
    return float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
