"""Finite-difference suite over every engine op, the head, the losses and the backbone."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import engine as E
from .backbone import backbone_forward, init_backbone
from .engine import Tensor, grad_check, grad_check_params
from .head import FeatureMap, MODES, head_forward, init_params
from .losses import PcrConfig, mse_loss, pcr_loss

TOLERANCE = 1e-4
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    error: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _probe(rng: np.random.Generator, shape) -> Tensor:
    # random linear functional of the output: exercises every output adjoint
    return Tensor(rng.normal(size=shape))


def _scalarize(out: Tensor, weights: Tensor) -> Tensor:
    return E.sum_all(E.mul(out, weights))


def _check_op(rng, fn: Callable, shapes: List[tuple]) -> float:
    """Max error over every input of ``fn`` for each tuple of input shapes."""
    worst = 0.0
    for arg_shapes in shapes:
        args = [rng.normal(size=s) for s in arg_shapes]
        out_shape = fn(*[Tensor(a) for a in args]).shape
        w = _probe(rng, out_shape)
        for i in range(len(args)):
            def f(t, i=i):
                inputs = [Tensor(a) for a in args]
                inputs[i] = t
                return _scalarize(fn(*inputs), w)

            worst = max(worst, grad_check(f, args[i], EPS))
    return worst


def engine_checks(rng) -> Dict[str, Callable[[], float]]:
    return {
        "matmul": lambda: _check_op(rng, E.matmul, [((3, 4), (4, 2)), ((1, 5), (5, 3)), ((2, 3), (4, 3, 2))]),
        "broadcast_add_cols": lambda: _check_op(rng, E.broadcast_add_cols, [((3, 5), (3,)), ((2, 2), (2,)), ((2, 4, 3), (4,))]),
        "scale_cols": lambda: _check_op(rng, E.scale_cols, [((4, 6), (6,)), ((2, 3), (3,)), ((2, 3, 4), (2, 4))]),
        "scale_rows": lambda: _check_op(rng, E.scale_rows, [((4, 6), (4,)), ((3, 2), (3,)), ((2, 3, 4), (2, 3))]),
        "tanh": lambda: _check_op(rng, E.tanh, [((5,),), ((3, 4),), ((2, 2, 3),)]),
        "sigmoid": lambda: _check_op(rng, E.sigmoid, [((5,),), ((3, 4),), ((2, 2, 3),)]),
        "softmax": lambda: _check_op(rng, E.softmax, [((6,),), ((3, 4),), ((2, 2, 5),)]),
        "pool": lambda: max(
            _check_op(rng, lambda m, a=a, k=k: E.pool(m, a, k), [((3, 4),), ((2, 5),), ((2, 3, 4),)])
            for a in ("rows", "cols") for k in ("sum", "avg")
        ),
        "concat": lambda: _check_op(rng, E.concat, [((2,), (3,)), ((4,), (1,)), ((2, 3), (2, 2))]),
        "reshape": lambda: _check_op(rng, lambda x: E.reshape(x, (-1,)), [((3, 4),), ((2, 3, 2),), ((5,),)]),
        "transpose": lambda: _check_op(rng, E.transpose, [((3, 4),), ((2, 5),), ((2, 3, 4),)]),
        "add": lambda: _check_op(rng, E.add, [((3,), (3,)), ((2, 3), (3,)), ((2, 3, 4), (3, 4))]),
        "sub": lambda: _check_op(rng, E.sub, [((3,), (3,)), ((2, 3), (3,)), ((2, 3, 4), (3, 4))]),
        "mul": lambda: _check_op(rng, E.mul, [((3,), (3,)), ((2, 3), (3,)), ((2, 3, 4), (3, 4))]),
        "square": lambda: _check_op(rng, E.square, [((5,),), ((3, 4),), ((2, 2, 3),)]),
        "sum_all": lambda: _check_op(rng, E.sum_all, [((5,),), ((3, 4),), ((2, 2, 3),)]),
        "conv2d": lambda: max(
            _check_op(rng, lambda x, k, b: E.conv2d(x, k, b, stride=1, pad=1), [((2, 5, 5), (3, 2, 3, 3), (3,))]),
            _check_op(rng, lambda x, k, b: E.conv2d(x, k, b, stride=2, pad=0), [((2, 5, 5), (3, 2, 3, 3), (3,))]),
            _check_op(rng, lambda x, k, b: E.conv2d(x, k, b, stride=2, pad=(0, 1)), [((2, 2, 6, 6), (3, 2, 3, 3), (3,))]),
        ),
    }


def head_check(rng, mode: str) -> float:
    h, w, n = 2, 3, 3
    params = init_params(h, w, n, rng=rng)
    for t in params.named().values():
        t.values = rng.normal(size=t.shape)
    fm = rng.normal(size=(n, h, w))

    def loss(p):
        from .head import PdanetParams

        pp = PdanetParams.from_named(dict(p))
        return E.sum_all(head_forward(FeatureMap(Tensor(fm)), pp, mode).prediction)

    return max(grad_check_params(loss, params.named(), EPS).values())


def _off_boundary(rng, shape, threshold, margin=0.05):
    x = rng.uniform(0.0, 1.0, size=shape)
    near = np.abs(x - threshold) < margin
    x[near] += np.where(x[near] >= threshold, margin, -margin)
    return x


def loss_checks(rng) -> Dict[str, Callable[[], float]]:
    y = _off_boundary(rng, (4, 3), 0.5)
    cfg = PcrConfig(2.0, 0.5)
    return {
        "mse_loss": lambda: grad_check(lambda t: mse_loss(t, Tensor(y)), _off_boundary(rng, (4, 3), 0.5), EPS),
        "pcr_loss": lambda: grad_check(lambda t: pcr_loss(t, Tensor(y), cfg), _off_boundary(rng, (4, 3), 0.5), EPS),
    }


def backbone_check(rng) -> float:
    # same stage structure as the default (stride-2 3x3 "same" stages, tanh), at a size
    # that keeps the element-wise finite differences fast
    bb = init_backbone((3, 4, 4, 5, 5), input_size=16, rng=rng)
    img = rng.uniform(size=(3, 16, 16))
    w = _probe(rng, (5, 1, 1))

    def loss(p):
        bb.load_named(dict(p))
        return _scalarize(backbone_forward(Tensor(img), bb).data, w)

    errs = grad_check_params(loss, bb.named(), EPS)
    errs["input"] = grad_check(lambda t: _scalarize(backbone_forward(t, bb).data, w), img, EPS)
    return max(errs.values())


def run_suite(seed: int = 0) -> List[CheckResult]:
    """Run every check once; each entry of the result names one operation."""
    rng = np.random.default_rng(seed)
    checks: Dict[str, Callable[[], float]] = {}
    checks.update(engine_checks(rng))
    for mode in MODES:
        checks[f"head[{mode}]"] = lambda mode=mode: head_check(rng, mode)
    checks.update(loss_checks(rng))
    checks["backbone"] = lambda: backbone_check(rng)
    return [CheckResult(name, float(fn())) for name, fn in checks.items()]


def format_report(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {r.error:.3e}  {'PASS' if r.passed else 'FAIL'}" for r in results]
    failed = [r.name for r in results if not r.passed]
    lines.append("all passed" if not failed else "FAILED: " + ", ".join(failed))
    return "\n".join(lines) + "\n"
