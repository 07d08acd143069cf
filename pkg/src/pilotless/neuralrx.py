"""Pilotless convolutional receiver.

The received slot (N_F, N_S, N_R) is scaled to unit average power, mixed
across antennas by a learned complex matrix at every resource element, and
passed through a stack of pre-activation residual blocks of dilated 3x3
convolutions over the (frequency, time) grid. A 1x1 projection produces one
LLR per (stream, bit) at every RE. There is no channel-estimate input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .link import SlotGeometry
from .numerics import Tensor

DILATIONS = (1, 2, 4)
_RX_MAGIC = 0x5852_4C50  # b"PLRX" little-endian
_RX_VERSION = 1


@dataclass
class RxNetParams:
    n_subcarriers: int
    n_symbols: int
    n_rx: int
    n_streams: int
    qm: int
    n_blocks: int
    n_filters: int
    n_input_features: int
    mix_re: Tensor
    mix_im: Tensor
    stem_w: Tensor
    stem_b: Tensor
    blocks: list[tuple[Tensor, Tensor, Tensor, Tensor]]
    head_w: Tensor
    head_b: Tensor

    def tensors(self) -> list[Tensor]:
        out = [self.mix_re, self.mix_im, self.stem_w, self.stem_b]
        for blk in self.blocks:
            out.extend(blk)
        out.extend([self.head_w, self.head_b])
        return out

    @property
    def n_outputs(self) -> int:
        return self.n_streams * self.qm

    def dilation(self, block: int) -> tuple[int, int]:
        return DILATIONS[block % len(DILATIONS)], 1


def init_rx_params(geometry: SlotGeometry, qm: int, n_blocks: int = 8, n_filters: int = 48,
                   n_input_features: int = 32, seed: int = 0,
                   head_gain: float = 0.01) -> RxNetParams:
    """He-uniform convolution weights and zero biases.

    The output projection is scaled by ``head_gain`` so an untrained receiver
    emits near-zero LLRs; large random initial LLRs make the first updates
    silence the whole network instead of learning features.
    """
    if n_input_features % 2:
        raise ValueError("input feature count must be even (real/imag pairs)")
    rng = np.random.default_rng(seed)
    f0, f, nr = n_input_features, n_filters, geometry.n_rx

    def conv(kh, kw, cin, cout, gain=1.0):
        bound = gain * np.sqrt(6.0 / (kh * kw * cin))
        return (Tensor(rng.uniform(-bound, bound, (kh, kw, cin, cout)), requires_grad=True),
                Tensor(np.zeros(cout), requires_grad=True))

    mix_bound = np.sqrt(3.0 / nr)
    mix_re = Tensor(rng.uniform(-mix_bound, mix_bound, (f0 // 2, nr)), requires_grad=True)
    mix_im = Tensor(rng.uniform(-mix_bound, mix_bound, (f0 // 2, nr)), requires_grad=True)
    stem_w, stem_b = conv(3, 3, f0, f)
    blocks = []
    for _ in range(n_blocks):
        w1, b1 = conv(3, 3, f, f)
        w2, b2 = conv(3, 3, f, f, gain=0.5)
        blocks.append((w1, b1, w2, b2))
    n_out = geometry.n_streams * qm
    head_w, head_b = conv(1, 1, f, n_out, gain=head_gain)
    return RxNetParams(geometry.n_subcarriers, geometry.n_symbols, nr, geometry.n_streams, qm,
                       n_blocks, f, f0, mix_re, mix_im, stem_w, stem_b, blocks, head_w, head_b)


def _as_pair(Y):
    if isinstance(Y, tuple):
        return Y
    Y = np.asarray(Y)
    return Tensor(Y.real), Tensor(Y.imag)


def input_transform(Y, params: RxNetParams, normalize: bool = True) -> Tensor:
    """Per-RE learned complex antenna mixing.

    Args:
        Y: Complex array (..., N_F, N_S, N_R) or a (re, im) tensor pair.
        normalize: Scale each slot to unit mean power first.

    Returns:
        Tensor (..., N_F, N_S, F0): real parts of the F0/2 features, then
        imaginary parts.
    """
    y_re, y_im = _as_pair(Y)
    if y_re.shape[-1] != params.n_rx:
        raise ValueError(f"expected {params.n_rx} receive antennas, got {y_re.shape[-1]}")
    if normalize:
        axes = (-3, -2, -1)
        power = nx.mean(y_re * y_re + y_im * y_im, axis=axes, keepdims=True)
        scale = nx.sqrt(power + 1e-12)
        y_re, y_im = y_re / scale, y_im / scale
    ar = nx.transpose(params.mix_re)
    ai = nx.transpose(params.mix_im)
    z_re = nx.matmul(y_re, ar) - nx.matmul(y_im, ai)
    z_im = nx.matmul(y_im, ar) + nx.matmul(y_re, ai)
    return nx.concatenate([z_re, z_im], axis=-1)


def rx_forward(Y, params: RxNetParams) -> Tensor:
    """LLRs of shape (..., N_F, N_S, N_T, Q_m); positive favours bit 0."""
    y_re, _ = pair = _as_pair(Y)
    grid = y_re.shape[-3:]
    expected = (params.n_subcarriers, params.n_symbols, params.n_rx)
    if grid != expected:
        raise ValueError(f"received grid {grid} does not match receiver geometry {expected}")
    lead = y_re.shape[:-3]
    feats = input_transform(pair, params)
    h = nx.reshape(feats, (-1,) + feats.shape[-3:])
    h = nx.conv2d(h, params.stem_w, params.stem_b)
    for i, (w1, b1, w2, b2) in enumerate(params.blocks):
        d = params.dilation(i)
        r = nx.conv2d(nx.relu(h), w1, b1, dilation=d)
        r = nx.conv2d(nx.relu(r), w2, b2, dilation=d)
        h = h + r
    out = nx.conv2d(nx.relu(h), params.head_w, params.head_b)
    return nx.reshape(out, lead + grid[:2] + (params.n_streams, params.qm))


def rx_llrs(Y: np.ndarray, params: RxNetParams) -> np.ndarray:
    """Inference helper returning a plain array."""
    return rx_forward(np.asarray(Y), params).value


def save_rx_params(params: RxNetParams, path) -> None:
    header = struct.pack("<10i", _RX_MAGIC, _RX_VERSION, params.n_subcarriers, params.n_symbols,
                         params.n_rx, params.n_blocks, params.n_filters,
                         params.n_input_features, params.n_streams, params.qm)
    body = np.concatenate([t.value.reshape(-1) for t in params.tensors()]).astype("<f4")
    Path(path).write_bytes(header + body.tobytes())


def load_rx_params(path) -> RxNetParams:
    raw = Path(path).read_bytes()
    (magic, version, nf, ns, nr, d, f, f0, nt, qm) = struct.unpack_from("<10i", raw)
    if magic != _RX_MAGIC or version != _RX_VERSION:
        raise ValueError(f"{path}: not a receiver checkpoint")
    geometry = SlotGeometry(n_subcarriers=nf, n_symbols=ns, n_streams=nt, n_rx=nr)
    params = init_rx_params(geometry, qm, d, f, f0)
    body = np.frombuffer(raw, dtype="<f4", offset=40).astype(np.float64)
    tensors = params.tensors()
    expected = sum(t.size for t in tensors)
    if body.size != expected:
        raise ValueError(f"{path}: expected {expected} weights, found {body.size}")
    pos = 0
    for t in tensors:
        t.value = body[pos:pos + t.size].reshape(t.shape).copy()
        pos += t.size
    return params
