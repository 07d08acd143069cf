"""Reference QAM and learned per-stream constellations.

A learned constellation for stream ``l`` is built pointwise from the reference
QAM: each point's (amplitude, angle) goes through ``C`` shared transformation
networks, and a per-stream weighting network mixes their outputs with softmax
weights. The mixture is converted to the complex plane, then mean-removed and
scaled to unit average energy.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import Tensor

SUPPORTED_QM = (4, 6)
Q_WIDTHS = (32, 32, 16, 16)
W_WIDTHS = (16, 16, 8, 8)


class DegenerateConstellationError(ValueError):
    pass


@dataclass
class Constellation:
    """Labeled constellation: ``points[k]`` carries the bit label ``labels[k]``.

    Labels are the Q_m-bit binary expansion of ``k`` (MSB first), so
    ``map_bits`` is a plain index lookup.
    """

    points: np.ndarray
    qm: int
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.complex128)
        if not self.labels:
            self.labels = [format(k, f"0{self.qm}b") for k in range(len(self.points))]
        if len(self.points) != 2 ** self.qm:
            raise ValueError(f"expected {2 ** self.qm} points, got {len(self.points)}")

    @property
    def bits(self) -> np.ndarray:
        """(2^Q_m, Q_m) array of label bits."""
        return label_bits(self.qm)


def label_bits(qm: int) -> np.ndarray:
    k = np.arange(2 ** qm)
    return ((k[:, None] >> np.arange(qm - 1, -1, -1)) & 1).astype(np.int8)


def bits_to_index(bits: np.ndarray) -> np.ndarray:
    """Collapse a trailing axis of Q_m bits (MSB first) into symbol indices."""
    bits = np.asarray(bits, dtype=np.int64)
    qm = bits.shape[-1]
    return bits @ (1 << np.arange(qm - 1, -1, -1))


def qam_reference(qm: int) -> Constellation:
    """Unit-energy square QAM with the 5G NR per-axis Gray mapping."""
    if qm not in SUPPORTED_QM:
        raise ValueError(f"unsupported bits per symbol: {qm}")
    b = 1 - 2 * label_bits(qm).astype(np.float64)
    if qm == 4:
        re = b[:, 0] * (2 - b[:, 2])
        im = b[:, 1] * (2 - b[:, 3])
        scale = np.sqrt(10.0)
    else:
        re = b[:, 0] * (4 - b[:, 2] * (2 - b[:, 4]))
        im = b[:, 1] * (4 - b[:, 3] * (2 - b[:, 5]))
        scale = np.sqrt(42.0)
    return Constellation((re + 1j * im) / scale, qm)


def map_bits(bits, constellation: Constellation):
    """Map groups of Q_m bits (last axis) to constellation points."""
    bits = np.asarray(bits)
    if bits.shape[-1] != constellation.qm:
        raise ValueError(f"bit group length {bits.shape[-1]} != Q_m={constellation.qm}")
    return constellation.points[bits_to_index(bits)]


def normalize(points):
    """Remove the mean and scale to unit average energy.

    Accepts a complex numpy array, or a ``(re, im)`` pair of tensors for the
    differentiable path.
    """
    if isinstance(points, tuple):
        re, im = points
        re = re - nx.mean(re)
        im = im - nx.mean(im)
        power = nx.mean(re * re + im * im)
        if power.item() <= 1e-24:
            raise DegenerateConstellationError("all constellation points coincide")
        s = nx.sqrt(power)
        return re / s, im / s
    p = np.asarray(points, dtype=np.complex128)
    if p.size < 2:
        raise DegenerateConstellationError("need at least two points")
    p = p - p.mean()
    power = np.mean(np.abs(p) ** 2)
    if power <= 1e-24:
        raise DegenerateConstellationError("all constellation points coincide")
    return p / np.sqrt(power)


def min_max_distance(points) -> tuple[float, float]:
    """Exact (d_min, d_max) over all unordered pairs."""
    p = np.asarray(points, dtype=np.complex128).reshape(-1)
    if p.size < 2:
        raise ValueError("need at least two points")
    i, j = np.triu_indices(p.size, k=1)
    d = np.abs(p[i] - p[j])
    return float(d.min()), float(d.max())


# --------------------------------------------------------------------------- networks

def _init_mlp(rng: np.random.Generator, widths, n_in: int, n_out: int, scale: float):
    layers = []
    prev = n_in
    for w in (*widths, n_out):
        layers.append(Tensor(rng.uniform(-scale, scale, size=(prev, w)), requires_grad=True))
        layers.append(Tensor(np.zeros(w), requires_grad=True))
        prev = w
    return layers


def _mlp(layers, x: Tensor, act) -> Tensor:
    h = x
    n = len(layers) // 2
    for i in range(n):
        h = nx.matmul(h, layers[2 * i]) + layers[2 * i + 1]
        if i < n - 1:
            h = act(h)
    return h


@dataclass
class ConstellationNetParams:
    """Trainable transmitter parameters.

    ``q_nets[c]`` maps reference (amplitude, angle) to transformed (amplitude,
    angle); it carries an identity skip so the untrained transmitter sends the
    reference QAM. ``w_nets[l]`` gives stream ``l``'s softmax mixing weights
    over the ``C`` transformations.
    """

    qm: int
    n_streams: int
    q_nets: list[list[Tensor]]
    w_nets: list[list[Tensor]]

    @property
    def n_transforms(self) -> int:
        return len(self.q_nets)

    def tensors(self) -> list[Tensor]:
        out = []
        for net in self.q_nets:
            out.extend(net)
        for net in self.w_nets:
            out.extend(net)
        return out

    def copy(self) -> "ConstellationNetParams":
        dup = lambda nets: [[Tensor(t.value.copy(), requires_grad=True) for t in net] for net in nets]
        return ConstellationNetParams(self.qm, self.n_streams, dup(self.q_nets), dup(self.w_nets))


def init_constellation_params(qm: int, n_streams: int = 2, n_transforms: int = 3,
                              seed: int = 0, scale: float = 0.1) -> ConstellationNetParams:
    """Weights uniform in [-scale, scale], zero biases."""
    if qm not in SUPPORTED_QM:
        raise ValueError(f"unsupported bits per symbol: {qm}")
    rng = np.random.default_rng(seed)
    q_nets = [_init_mlp(rng, Q_WIDTHS, 2, 2, scale) for _ in range(n_transforms)]
    w_nets = [_init_mlp(rng, W_WIDTHS, 2, n_transforms, scale) for _ in range(n_streams)]
    return ConstellationNetParams(qm, n_streams, q_nets, w_nets)


def polar_features(points: np.ndarray) -> np.ndarray:
    """(amplitude, principal angle in (-pi, pi]) per point."""
    return np.stack([np.abs(points), np.angle(points)], axis=-1)


def transforms(params: ConstellationNetParams, q_ref: Constellation) -> list[Tensor]:
    """Outputs of every transformation network, each (M, 2) in (amplitude, angle)."""
    feats = Tensor(polar_features(q_ref.points))
    return [feats + _mlp(net, feats, nx.tanh) for net in params.q_nets]


def mixing_weights(params: ConstellationNetParams, stream: int, q_ref: Constellation) -> Tensor:
    """Softmax weights (M, C) for one stream."""
    feats = Tensor(polar_features(q_ref.points))
    return nx.softmax(_mlp(params.w_nets[stream], feats, nx.relu), axis=-1)


def learned_points(params: ConstellationNetParams, stream: int, q_ref: Constellation,
                   _transforms: list[Tensor] | None = None) -> tuple[Tensor, Tensor]:
    """Un-normalized learned points of one stream as a (re, im) tensor pair."""
    if not 0 <= stream < params.n_streams:
        raise ValueError(f"stream index {stream} out of range")
    outs = _transforms if _transforms is not None else transforms(params, q_ref)
    w = mixing_weights(params, stream, q_ref)
    mixed = None
    for c, out in enumerate(outs):
        term = out * w[:, c:c + 1]
        mixed = term if mixed is None else mixed + term
    amp, ang = mixed[:, 0], mixed[:, 1]
    return amp * nx.cos(ang), amp * nx.sin(ang)


def stream_constellations(params: ConstellationNetParams, q_ref: Constellation | None = None):
    """Normalized learned constellations for all streams as (re, im) tensor pairs."""
    q_ref = q_ref or qam_reference(params.qm)
    outs = transforms(params, q_ref)
    return [normalize(learned_points(params, l, q_ref, outs)) for l in range(params.n_streams)]


def export_constellations(params: ConstellationNetParams) -> list[Constellation]:
    """Evaluate the learned constellations as plain numpy objects."""
    out = []
    for re, im in stream_constellations(params):
        out.append(Constellation(re.value + 1j * im.value, params.qm))
    return out


# --------------------------------------------------------------------------- I/O

def write_constellation_csv(constellation: Constellation, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label"])
        for p, lab in zip(constellation.points, constellation.labels):
            w.writerow([f"{p.real:.9g}", f"{p.imag:.9g}", lab])


def read_constellation_csv(path) -> Constellation:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts = np.array([float(r["x"]) + 1j * float(r["y"]) for r in rows])
    labels = [r["label"] for r in rows]
    return Constellation(pts, len(labels[0]), labels)


_TX_MAGIC = 0x4E43_4C50  # b"PLCN" little-endian
_TX_VERSION = 1


def save_constellation_params(params: ConstellationNetParams, path) -> None:
    """Header of little-endian int32 (magic, version, Q_m, N_T, C) then float32 weights."""
    header = struct.pack("<5i", _TX_MAGIC, _TX_VERSION, params.qm, params.n_streams,
                         params.n_transforms)
    body = np.concatenate([t.value.reshape(-1) for t in params.tensors()]).astype("<f4")
    Path(path).write_bytes(header + body.tobytes())


def load_constellation_params(path) -> ConstellationNetParams:
    raw = Path(path).read_bytes()
    magic, version, qm, n_streams, c = struct.unpack_from("<5i", raw)
    if magic != _TX_MAGIC or version != _TX_VERSION:
        raise ValueError(f"{path}: not a constellation checkpoint")
    params = init_constellation_params(qm, n_streams, c)
    body = np.frombuffer(raw, dtype="<f4", offset=20).astype(np.float64)
    tensors = params.tensors()
    expected = sum(t.size for t in tensors)
    if body.size != expected:
        raise ValueError(f"{path}: expected {expected} weights, found {body.size}")
    pos = 0
    for t in tensors:
        t.value = body[pos:pos + t.size].reshape(t.shape).copy()
        pos += t.size
    return params
