"""Central finite-difference verification of registered adjoints."""

from __future__ import annotations

from typing import Callable, Dict, Mapping

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, backward, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - c| / max(|a|, |c|, 1e-12) over components."""
    a = np.asarray(analytic, dtype=np.float64)
    c = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(c)), 1e-12)
    return float(np.max(np.abs(a - c) / denom))


def numerical_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f(Tensor(x.copy())).item()
            flat[i] = orig - eps
            down = f(Tensor(x.copy())).item()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
    return grad


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between the analytic and central-difference gradient of ``f`` at ``x``.

    ``f`` maps a tensor to a scalar tensor.  Evaluation is in double
    precision regardless of the dtype of ``x``.
    """
    if not eps > 0:
        raise ContractError(f"grad_check needs eps > 0, got {eps}")
    values = np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(values.copy(), requires_grad=True)
    out = f(probe)
    if out.values.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    (analytic,) = backward(out, [probe])
    numeric = numerical_gradient(f, values, eps)
    return relative_error(analytic, numeric)


def grad_check_params(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
) -> Dict[str, float]:
    """Run :func:`grad_check` for every named parameter of ``loss_fn``.

    ``loss_fn`` receives the full parameter mapping; each parameter in turn is
    replaced by the probe while the others stay fixed.
    """
    base = {k: Tensor(np.array(v.values, dtype=np.float64)) for k, v in params.items()}
    errors = {}
    for name in base:
        def f(t, _name=name):
            return loss_fn({**base, _name: t})

        errors[name] = grad_check(f, base[name], eps)
    return errors
