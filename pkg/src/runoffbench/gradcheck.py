"""Central-difference gradient suite over every differentiable op and each architecture.

Each case is a scalar function of seeded leaf tensors.  Outputs are
contracted with a fixed random projection rather than plain-summed, so
symmetric errors cannot cancel.
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import models as M
from . import tensor as T
from .tensor import GradCheckReport, RngStream, Tensor

GRADCHECK_H = 1e-5
GRADCHECK_TOL = 1e-4
TINY_SPEC = dict(hidden_dim=4, d_model=4, n_heads=2, n_layers=2, d_ff=8, dropout_rate=0.0, seq_len=3)
TINY_BATCH = 2
TINY_INPUT_DIM = 3


@dataclass(frozen=True)
class GradCase:
    name: str
    build: Callable[[], tuple[Callable[..., Tensor], list[Tensor]]]


def _leaf(rng: RngStream, shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


def _away_from_zero(rng: RngStream, shape) -> Tensor:
    """Values in ±[0.1, 1]: clear of relu's kink by far more than the FD step."""
    mag = rng.uniform(0.1, 1.0, shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return Tensor(mag * sign, requires_grad=True)


def _project(out: Tensor, seed: int) -> Tensor:
    w = Tensor(RngStream(seed).normal(0.0, 1.0, out.shape))
    return T.sum(out * w)


def _unary(name, op, shape=(3, 4), init=_leaf):
    def build():
        rng = RngStream(zlib.crc32(name.encode()))
        return (lambda x: _project(op(x), 7)), [init(rng, shape)]
    return GradCase(name, build)


def _binary(name, op, sa, sb):
    def build():
        rng = RngStream(zlib.crc32(name.encode()))
        return (lambda a, b: _project(op(a, b), 7)), [_leaf(rng, sa), _leaf(rng, sb)]
    return GradCase(name, build)


def _layer_norm_case():
    def build():
        rng = RngStream(11)
        return (lambda x, g, b: _project(T.layer_norm(x, g, b), 7)), [
            _leaf(rng, (2, 3, 5)), _leaf(rng, (5,), 0.5, 1.5), _leaf(rng, (5,))]
    return GradCase("layer_norm", build)


def _concat_case():
    def build():
        rng = RngStream(12)
        return (lambda a, b: _project(T.concat([a, b], axis=1), 7)), [_leaf(rng, (2, 3)), _leaf(rng, (2, 2))]
    return GradCase("concat", build)


def _stack_case():
    def build():
        rng = RngStream(13)
        return (lambda a, b: _project(T.stack([a, b], axis=1), 7)), [_leaf(rng, (2, 3)), _leaf(rng, (2, 3))]
    return GradCase("stack", build)


def _dropout_case():
    def build():
        rng = RngStream(14)
        # a fresh stream per evaluation keeps the mask identical across FD probes
        return (lambda x: _project(T.dropout(x, 0.4, RngStream(99), training=True), 7)), [_leaf(rng, (4, 5))]
    return GradCase("dropout", build)


def op_cases() -> list[GradCase]:
    return [
        _binary("add", T.add, (3, 4), (3, 4)),
        _binary("add_broadcast", T.add, (2, 3, 4), (4,)),
        _binary("add_broadcast_both", T.add, (3, 1), (1, 4)),
        _binary("sub", T.sub, (3, 4), (1, 4)),
        _binary("mul", T.mul, (3, 4), (3, 4)),
        _binary("mul_broadcast", T.mul, (2, 3, 4), (3, 1)),
        _unary("scalar_div", lambda x: x / 2.5),
        _unary("neg", lambda x: -x),
        _binary("matmul", T.matmul, (3, 4), (4, 2)),
        _binary("matmul_batched", T.matmul, (2, 3, 4), (2, 4, 2)),
        _binary("matmul_broadcast_rhs", T.matmul, (2, 3, 4), (4, 2)),
        _unary("sigmoid", T.sigmoid, init=lambda r, s: _leaf(r, s, -4, 4)),
        _unary("tanh", T.tanh, init=lambda r, s: _leaf(r, s, -2, 2)),
        _unary("relu", T.relu, init=_away_from_zero),
        _unary("softmax_last", lambda x: T.softmax(x, axis=-1), shape=(2, 3, 4)),
        _unary("softmax_axis0", lambda x: T.softmax(x, axis=0)),
        _layer_norm_case(),
        _unary("reduce_sum_all", lambda x: T.sum(x) * T.sum(x)),
        _unary("reduce_sum_axis", lambda x: T.sum(x, axis=1), shape=(2, 3, 4)),
        _unary("reduce_mean_keepdims", lambda x: T.mean(x, axis=(0, 2), keepdims=True), shape=(2, 3, 4)),
        _unary("reshape", lambda x: T.reshape(x, (4, 3))),
        _unary("transpose", lambda x: T.transpose(x, (2, 0, 1)), shape=(2, 3, 4)),
        _concat_case(),
        _stack_case(),
        _unary("slice_axis", lambda x: T.slice_axis(x, 1, 1, 3), shape=(2, 4, 3)),
        _unary("getitem", lambda x: x[:, 2, :], shape=(2, 4, 3)),
        _unary("getitem_fancy", lambda x: x[np.array([0, 2, 0])], shape=(3, 4)),
        _dropout_case(),
    ]


def tiny_spec(variant: str) -> M.ModelSpec:
    return M.ModelSpec(variant, input_dim=TINY_INPUT_DIM, **TINY_SPEC)


def _architecture_case(variant: str) -> GradCase:
    def build():
        spec = tiny_spec(variant)
        weights = M.init_weights(spec, RngStream(21))
        names = list(weights)
        x = Tensor(RngStream(22).normal(0.0, 1.0, (TINY_BATCH, spec.seq_len, spec.input_dim)))

        def f(*ws):
            return _project(M.forward(spec, dict(zip(names, ws)), x), 23)

        return f, list(weights.values())
    return GradCase(f"arch:{variant}", build)


def architecture_cases() -> list[GradCase]:
    return [_architecture_case(v) for v in M.VARIANTS]


def all_cases() -> list[GradCase]:
    return op_cases() + architecture_cases()


@dataclass
class SuiteResult:
    reports: list[GradCheckReport]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    @property
    def worst(self) -> GradCheckReport:
        return max(self.reports, key=lambda r: r.max_rel_error)

    def lines(self) -> list[str]:
        return [r.line() for r in self.reports]


def run_suite(cases: list[GradCase] | None = None, h: float = GRADCHECK_H, tol: float = GRADCHECK_TOL,
              fault: str | None = None) -> SuiteResult:
    """Run every case; ``fault`` names an op whose backward rule is sign-flipped (test hook)."""
    cases = all_cases() if cases is None else cases
    start = time.perf_counter()
    reports = []
    for case in cases:
        f, inputs = case.build()
        if fault is None:
            reports.append(T.grad_check(f, inputs, h=h, tol=tol, name=case.name))
        else:
            with T.inject_fault(fault):
                reports.append(T.grad_check(f, inputs, h=h, tol=tol, name=case.name))
    return SuiteResult(reports, time.perf_counter() - start)
