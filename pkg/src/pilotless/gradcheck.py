"""Finite-difference verification of every differentiable operation and the training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .link import SlotGeometry
from .numerics import Tensor

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < GRAD_TOL


def _leaf(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _away(rng, shape, margin=0.1):
    # values at least ``margin`` away from zero, for kinks and singularities
    v = rng.uniform(margin, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(v, requires_grad=True)


def _weights(rng, out_shape):
    w = rng.standard_normal(out_shape)
    return lambda t: nx.tsum(t * w)


def op_cases(rng: np.random.Generator):
    """(name, objective, params) for each primitive; objectives are random projections."""
    cases = []

    def add(name, build, params):
        out = build()
        proj = _weights(rng, out.shape)
        cases.append((name, lambda: proj(build()), params))

    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4,))
    add("add", lambda: a + b, [a, b])
    add("sub", lambda: a - b, [a, b])
    add("mul", lambda: a * b, [a, b])
    p, q = _leaf(rng, (3, 4)), _away(rng, (3, 4), 0.3)
    add("div", lambda: p / q, [p, q])
    pos = _leaf(rng, (5,), 0.5, 2.0)
    add("power", lambda: nx.power(pos, 1.7), [pos])
    m1, m2 = _leaf(rng, (2, 3, 4)), _leaf(rng, (4, 5))
    add("matmul", lambda: nx.matmul(m1, m2), [m1, m2])
    s = _leaf(rng, (3, 4, 2))
    add("tsum", lambda: nx.tsum(s, axis=1), [s])
    add("mean", lambda: nx.mean(s, axis=(0, 2)), [s])
    e = Tensor(rng.permutation(12).reshape(3, 4) * 0.1 + rng.uniform(0, 0.01, (3, 4)),
               requires_grad=True)
    add("tmax", lambda: nx.tmax(e) * 1.0, [e])
    add("tmin", lambda: nx.tmin(e) * 1.0, [e])
    add("reshape", lambda: nx.reshape(s, (6, 4)), [s])
    add("transpose", lambda: nx.transpose(s, (2, 0, 1)), [s])
    add("getitem", lambda: s[1:, ::2], [s])
    add("getitem_fancy", lambda: s[np.array([0, 2, 0])], [s])
    t = _leaf(rng, (6,))
    add("take", lambda: nx.take(t, np.array([[0, 5], [5, 3], [1, 1]])), [t])
    c1, c2 = _leaf(rng, (2, 3)), _leaf(rng, (2, 2))
    add("concatenate", lambda: nx.concatenate([c1, c2], axis=1), [c1, c2])
    add("stack", lambda: nx.stack([c1, c1 * 2.0], axis=-1), [c1])
    u = _away(rng, (4, 3))
    add("tanh", lambda: nx.tanh(u), [u])
    add("relu", lambda: nx.relu(u), [u])
    add("sigmoid", lambda: nx.sigmoid(u), [u])
    add("exp", lambda: nx.exp(u), [u])
    add("log", lambda: nx.log(pos), [pos])
    add("sqrt", lambda: nx.sqrt(pos), [pos])
    add("sin", lambda: nx.sin(u), [u])
    add("cos", lambda: nx.cos(u), [u])
    add("clip", lambda: nx.clip(u, -0.05, 0.05) + nx.clip(u, -2.0, 2.0), [u])
    add("maximum", lambda: nx.maximum(u, 0.02), [u])
    add("softmax", lambda: nx.softmax(u, axis=-1), [u])
    x = _leaf(rng, (2, 5, 4, 3))
    w, bias = _leaf(rng, (3, 3, 3, 2)), _leaf(rng, (2,))
    add("conv2d", lambda: nx.conv2d(x, w, bias), [x, w, bias])
    add("conv2d_dilated", lambda: nx.conv2d(x, w, bias, dilation=(2, 1)), [x, w, bias])
    return cases


def check_ops(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, f, params in op_cases(rng):
        rep = nx.finite_diff_check(f, params, report=True)
        out.append(CheckResult(name, rep.max_rel_error, rep.checked))
    return out


def _sample_coords(grads, rng, per_param: int, floor: float):
    coords = []
    for g in grads:
        flat = np.abs(g.reshape(-1))
        ok = np.flatnonzero(flat > floor)
        take = min(per_param, ok.size)
        coords.append(rng.choice(ok, size=take, replace=False) if take else np.array([], int))
    return coords


def check_training_loss(n_points: int = 20, seed: int = 0, per_param: int = 2) -> list[CheckResult]:
    """Composite loss (BCE + distance term) on a tiny link at random parameter points."""
    from .constellation import init_constellation_params
    from .neuralrx import init_rx_params
    from .train import TrainConfig, batch_loss, draw_batch

    g = SlotGeometry(n_subcarriers=4, n_symbols=3, n_streams=2, n_rx=2)
    cfg = TrainConfig(qm=4, batch=2, bias=0.5, lam=1.0, tap_count=3, geometry=g)
    out = []
    for point in range(n_points):
        rng = np.random.default_rng([seed, point])
        tx = init_constellation_params(4, 2, 2, seed=int(rng.integers(2**31)), scale=0.6)
        rx = init_rx_params(g, 4, n_blocks=1, n_filters=4, n_input_features=4,
                            seed=int(rng.integers(2**31)), head_gain=1.0)
        # zero biases behind a dead ReLU layer sit exactly on a kink; move off it
        for t in tx.tensors() + rx.tensors():
            t.value = t.value + rng.normal(0.0, 0.05, t.shape)
        batch = draw_batch(cfg, point, purpose="gradcheck")
        params = tx.tensors() + rx.tensors()
        f = lambda: batch_loss(tx, rx, batch, cfg)[0]
        grads = nx.backward(f(), params)
        coords = _sample_coords(grads, rng, per_param, 1e-6)
        rep = nx.finite_diff_check(f, params, coords=coords, report=True)
        out.append(CheckResult(f"loss@{point}", rep.max_rel_error, rep.checked))
    return out


def run_suite(n_points: int = 20, seed: int = 0) -> list[CheckResult]:
    return check_ops(seed) + check_training_loss(n_points, seed)
