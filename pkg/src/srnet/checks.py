"""Named finite-difference checks over every differentiable operation.

Each entry builds float64 inputs, wraps the operation into a scalar through
a fixed random probe (so symmetric gradient mistakes cannot cancel), and
compares reverse-mode gradients against central differences. The full model
entry perturbs the input plus a sample of elements from every parameter.
"""

from __future__ import annotations

import time
import zlib
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .gradcheck import grad_check
from .model import (
    ConvParams,
    ModelConfig,
    RdabParams,
    build_network,
    channel_attention,
    rdab_forward,
    spatial_attention,
)
from .metrics import loss_total
from .tensor import (
    Precision,
    Tensor,
    add_broadcast,
    concat_channels,
    conv2d,
    conv_transpose2d,
    div_broadcast,
    maxpool2d,
    mul_broadcast,
    reduce,
    relu,
    reshape,
    sigmoid,
    slice_channels,
    sub_broadcast,
    sum_all,
    use_precision,
)

__all__ = ["CheckResult", "check_names", "run_gradchecks"]


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    ok: bool
    seconds: float


def _t(rng: np.random.Generator, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _spaced(rng: np.random.Generator, shape, lo=-1.0, hi=1.0) -> Tensor:
    """Evenly spaced shuffled values: max/pool selections stay stable under
    the finite-difference step."""
    n = int(np.prod(shape))
    vals = np.linspace(lo, hi, n)
    rng.shuffle(vals)
    return Tensor(vals.reshape(shape), requires_grad=True)


def _spaced_nonzero(rng: np.random.Generator, shape) -> Tensor:
    """Spaced values bounded away from 0, safe for relu differencing."""
    n = int(np.prod(shape))
    half = n // 2
    neg = np.linspace(-1.0, -0.1, half)
    pos = np.linspace(0.1, 1.0, n - half)
    vals = np.concatenate([neg, pos])
    rng.shuffle(vals)
    return Tensor(vals.reshape(shape), requires_grad=True)


def _scalarized(op, probe_seed: int):
    """Reduce an op's output to sum(output * fixed_probe)."""
    cache: dict = {}

    def fn(*inputs):
        out = op(*inputs)
        if "probe" not in cache:
            prng = np.random.default_rng(probe_seed)
            cache["probe"] = Tensor(prng.uniform(0.5, 1.5, size=out.shape))
        return sum_all(mul_broadcast(out, cache["probe"]))

    return fn


def _builders(rng: np.random.Generator) -> "OrderedDict[str, tuple]":
    """name -> (scalar fn, input tensors, grad_check kwargs)."""
    checks: "OrderedDict[str, tuple]" = OrderedDict()

    def add(name, op, inputs, **kwargs):
        checks[name] = (_scalarized(op, probe_seed=zlib.crc32(name.encode())),
                        inputs, kwargs)

    add("add_broadcast", add_broadcast,
        [_t(rng, (2, 3, 4, 5)), _t(rng, (1, 3, 1, 1))])
    add("sub_broadcast", sub_broadcast,
        [_t(rng, (2, 3, 4, 5)), _t(rng, (2, 1, 4, 1))])
    add("mul_broadcast", mul_broadcast,
        [_t(rng, (2, 3, 4, 5)), _t(rng, (1, 1, 4, 5))])
    add("div_broadcast", div_broadcast,
        [_t(rng, (2, 3, 4, 5)), _t(rng, (1, 3, 1, 1), lo=0.5, hi=1.5)])
    add("relu", relu, [_spaced_nonzero(rng, (2, 3, 4, 5))])
    add("sigmoid", sigmoid, [_t(rng, (2, 3, 4, 5), lo=-3.0, hi=3.0)])
    add("concat_channels", lambda a, b, c: concat_channels([a, b, c]),
        [_t(rng, (2, 1, 4, 4)), _t(rng, (2, 2, 4, 4)), _t(rng, (2, 3, 4, 4))])
    add("slice_channels", lambda x: slice_channels(x, 1, 4),
        [_t(rng, (2, 6, 4, 4))])
    add("reshape", lambda x: reshape(x, (1, 6, 4, 5)),
        [_t(rng, (2, 3, 4, 5))])
    add("reduce_spatial_mean", lambda x: reduce(x, "spatial", "mean"),
        [_t(rng, (2, 3, 4, 5))])
    add("reduce_spatial_max", lambda x: reduce(x, "spatial", "max"),
        [_spaced(rng, (2, 3, 4, 5))])
    add("reduce_channel_mean", lambda x: reduce(x, "channel", "mean"),
        [_t(rng, (2, 3, 4, 5))])
    add("reduce_channel_max", lambda x: reduce(x, "channel", "max"),
        [_spaced(rng, (2, 3, 4, 5))])
    add("conv2d", lambda x, w, b: conv2d(x, w, b, pad=1),
        [_t(rng, (2, 3, 6, 6)), _t(rng, (4, 3, 3, 3)), _t(rng, (1, 4, 1, 1))])
    add("conv2d_s2", lambda x, w, b: conv2d(x, w, b, stride=2),
        [_t(rng, (1, 2, 7, 7)), _t(rng, (3, 2, 3, 3)), _t(rng, (1, 3, 1, 1))])
    add("conv_transpose2d", lambda x, w, b: conv_transpose2d(x, w, b, stride=2),
        [_t(rng, (2, 3, 4, 4)), _t(rng, (3, 2, 2, 2)), _t(rng, (1, 2, 1, 1))])
    add("maxpool2d", lambda x: maxpool2d(x, 2), [_spaced(rng, (2, 3, 4, 6))])

    f_ca = _spaced(rng, (2, 8, 5, 5))
    ca1 = ConvParams(_t(rng, (2, 8, 1, 1)), _t(rng, (1, 2, 1, 1), -0.1, 0.1))
    ca2 = ConvParams(_t(rng, (8, 2, 1, 1)), _t(rng, (1, 8, 1, 1), -0.1, 0.1))
    add("channel_attention",
        lambda f, *_: channel_attention(f, ca1, ca2),
        [f_ca, ca1.weight, ca1.bias, ca2.weight, ca2.bias])

    f_sa = _spaced(rng, (2, 6, 5, 5))
    sa = ConvParams(_t(rng, (1, 2, 7, 7)), _t(rng, (1, 1, 1, 1), -0.1, 0.1))
    add("spatial_attention",
        lambda f, *_: spatial_attention(f, sa),
        [f_sa, sa.weight, sa.bias])

    width, growth = 4, 3
    rd = RdabParams(
        width=width,
        convs=[ConvParams(_t(rng, (growth, width, 3, 3)),
                          _t(rng, (1, growth, 1, 1), -0.1, 0.1)),
               ConvParams(_t(rng, (growth, width + growth, 3, 3)),
                          _t(rng, (1, growth, 1, 1), -0.1, 0.1))],
        lff=ConvParams(_t(rng, (width, width + 2 * growth, 1, 1)),
                       _t(rng, (1, width, 1, 1), -0.1, 0.1)),
        ca_fc1=ConvParams(_t(rng, (2, width, 1, 1)),
                          _t(rng, (1, 2, 1, 1), -0.1, 0.1)),
        ca_fc2=ConvParams(_t(rng, (width, 2, 1, 1)),
                          _t(rng, (1, width, 1, 1), -0.1, 0.1)),
        sa=ConvParams(_t(rng, (1, 2, 7, 7)), _t(rng, (1, 1, 1, 1), -0.1, 0.1)),
    )
    rd_inputs = [_spaced(rng, (1, width, 6, 6))]
    for cp in rd.convs + [rd.lff, rd.ca_fc1, rd.ca_fc2, rd.sa]:
        rd_inputs += [cp.weight, cp.bias]
    add("rdab", lambda f, *_: rdab_forward(f, rd), rd_inputs)

    x_l = Tensor(rng.uniform(0.05, 0.95, size=(1, 2, 8, 8)), requires_grad=True)
    y_l = Tensor(rng.uniform(0.05, 0.95, size=(1, 2, 8, 8)), requires_grad=True)
    checks["loss_total"] = (lambda a, b: loss_total(a, b), [x_l, y_l], {})

    model = build_network(ModelConfig())
    mx = Tensor(rng.uniform(0.05, 0.95, size=(1, 3, 8, 8)), requires_grad=True)
    m_inputs = [mx] + list(model.params().values())
    checks["model_full"] = (
        _scalarized(lambda x, *_: model.forward(x), probe_seed=733),
        m_inputs,
        {"max_per_input": 2},
    )
    return checks


def check_names() -> list[str]:
    with use_precision(Precision.CHECK64):
        rng = np.random.default_rng(0)
        return list(_builders(rng).keys())


def run_gradchecks(names: list[str] | None = None, seed: int = 0,
                   tol: float = 1e-4) -> list[CheckResult]:
    """Run the selected checks (all by default) in 64-bit precision."""
    results: list[CheckResult] = []
    with use_precision(Precision.CHECK64):
        rng = np.random.default_rng(seed)
        checks = _builders(rng)
        if names is None:
            names = list(checks.keys())
        unknown = [n for n in names if n not in checks]
        if unknown:
            raise ValueError(f"unknown check names: {unknown}; "
                             f"available: {list(checks.keys())}")
        for name in names:
            fn, inputs, kwargs = checks[name]
            t0 = time.perf_counter()
            report = grad_check(fn, inputs, tol=tol,
                                rng=np.random.default_rng(seed + 1), **kwargs)
            dt = time.perf_counter() - t0
            results.append(CheckResult(name, report.max_rel_err, report.ok, dt))
    return results
