"""End-to-end objective and joint transmitter/receiver training.

Per slot ``q`` the loss is ``ln(1 + snr_q) * BCE_q + lam * D`` where BCE is the
bit cross-entropy of the receiver LLRs and D penalizes constellations whose
largest-to-smallest point spacing ratio grows beyond ``exp(b)``. The batch loss
is the mean over slots.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .constellation import (ConstellationNetParams, bits_to_index, init_constellation_params,
                            qam_reference, stream_constellations)
from .link import (DELAY_SPREAD_RANGE, TRAIN_PROFILES, VELOCITY_RANGE, ChannelParams, Profile,
                   SlotGeometry, apply_channel_tensors, draw_noise, generate_channel,
                   noise_variance_from_snr)
from .neuralrx import RxNetParams, init_rx_params, rx_forward
from .numerics import Tensor
from .rng import derive_seed, generator

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
D_MIN_FLOOR = 1e-9
DEFAULT_BIAS = {4: 4.5, 6: 7.5}
DEFAULT_LAMBDA = {4: 0.1, 6: 0.05}


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: "TrainHistory"):
        super().__init__(message)
        self.history = history


# --------------------------------------------------------------------------- losses

def _bit_prob_one(llrs: Tensor) -> Tensor:
    # positive LLR favours bit 0, so P(bit = 1) = sigmoid(-LLR)
    return nx.clip(nx.sigmoid(-llrs), PROB_CLAMP, 1.0 - PROB_CLAMP)


def bce_loss(llrs: Tensor, bits) -> Tensor:
    """Mean binary cross-entropy between transmitted bits and LLR beliefs."""
    llrs = nx.as_tensor(llrs)
    bits = np.asarray(bits, dtype=np.float64)
    if llrs.shape != bits.shape:
        raise ValueError(f"LLR shape {llrs.shape} does not match bits {bits.shape}")
    p = _bit_prob_one(llrs)
    return -nx.mean(bits * nx.log(p) + (1.0 - bits) * nx.log(1.0 - p))


def bce_per_slot(llrs: Tensor, bits) -> Tensor:
    """BCE averaged within each slot; leading axis is the batch."""
    bits = np.asarray(bits, dtype=np.float64)
    if llrs.shape != bits.shape:
        raise ValueError(f"LLR shape {llrs.shape} does not match bits {bits.shape}")
    p = _bit_prob_one(llrs)
    per_bit = bits * nx.log(p) + (1.0 - bits) * nx.log(1.0 - p)
    axes = tuple(range(1, llrs.ndim))
    return -nx.mean(per_bit, axis=axes)


def _pairwise_distances(re: Tensor, im: Tensor):
    i, j = np.triu_indices(re.size, k=1)
    dre = nx.take(re, i) - nx.take(re, j)
    dim = nx.take(im, i) - nx.take(im, j)
    sq = dre * dre + dim * dim
    floored = bool(sq.value.min() < D_MIN_FLOOR ** 2)
    return nx.sqrt(nx.maximum(sq, D_MIN_FLOOR ** 2)), floored


def distance_loss(constellations, bias: float) -> Tensor:
    """``relu(ln(mean_l d_max,l / d_min,l) - bias)`` over the streams.

    Args:
        constellations: Per-stream ``(re, im)`` tensor pairs or complex arrays.
        bias: Offset below which the penalty is exactly zero.
    """
    ratios = []
    for c in constellations:
        if not isinstance(c, tuple):
            arr = np.asarray(getattr(c, "points", c), dtype=np.complex128)
            c = (Tensor(arr.real), Tensor(arr.imag))
        if c[0].size < 2:
            raise ValueError("distance loss needs at least two points per stream")
        d, floored = _pairwise_distances(*c)
        if floored:
            log.warning("coincident constellation points; d_min floored at %g", D_MIN_FLOOR)
        ratios.append(nx.tmax(d) / nx.tmin(d))
    mean_ratio = ratios[0]
    for r in ratios[1:]:
        mean_ratio = mean_ratio + r
    mean_ratio = mean_ratio * (1.0 / len(ratios))
    return nx.relu(nx.log(mean_ratio) - bias)


def total_loss(bce, dterm, snr_linear, lam: float):
    """Batch mean of ``ln(1 + snr) * BCE + lam * D``; accepts tensors or floats."""
    snr_linear = np.asarray(snr_linear, dtype=np.float64)
    if np.any(snr_linear < 0):
        raise ValueError("SNR must be non-negative on a linear scale")
    weight = np.log1p(snr_linear)
    if isinstance(bce, Tensor) or isinstance(dterm, Tensor):
        return nx.mean(nx.as_tensor(bce) * weight) + nx.as_tensor(dterm) * lam
    return float(np.mean(weight * np.asarray(bce)) + lam * dterm)


# --------------------------------------------------------------------------- config

@dataclass
class TrainConfig:
    qm: int = 4
    lam: float | None = None
    bias: float | None = None
    lr: float = 5e-4
    batch: int = 10
    steps: int = 1000
    snr_db: tuple[float, float] = (0.0, 30.0)
    delay_spread: tuple[float, float] = DELAY_SPREAD_RANGE
    velocity: tuple[float, float] = VELOCITY_RANGE
    profiles: tuple[Profile, ...] = TRAIN_PROFILES
    tap_count: int = 12
    seed: int = 0
    n_transforms: int = 3
    rx_blocks: int = 8
    rx_filters: int = 48
    rx_input_features: int = 32
    grad_clip: float = 10.0
    geometry: SlotGeometry = field(default_factory=SlotGeometry)

    def __post_init__(self):
        if self.qm not in DEFAULT_BIAS:
            raise ValueError(f"unsupported bits per symbol: {self.qm}")
        if self.bias is None:
            self.bias = DEFAULT_BIAS[self.qm]
        if self.lam is None:
            self.lam = DEFAULT_LAMBDA[self.qm]
        self.profiles = tuple(Profile(p) for p in self.profiles)


@dataclass
class StepRecord:
    step: int
    loss: float
    bce: float
    dterm: float
    snr_db: float
    gradnorm: float


@dataclass
class TrainHistory:
    records: list[StepRecord] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss", "bce", "dterm", "snr_db", "gradnorm"])
            for r in self.records:
                w.writerow([r.step, f"{r.loss:.9g}", f"{r.bce:.9g}", f"{r.dterm:.9g}",
                            f"{r.snr_db:.9g}", f"{r.gradnorm:.9g}"])


# --------------------------------------------------------------------------- batches

@dataclass
class SlotBatch:
    bits: np.ndarray       # (B, N_F, N_S, N_T, Q_m)
    H: np.ndarray          # (B, N_F, N_S, N_R, N_T)
    noise: np.ndarray      # (B, N_F, N_S, N_R), already scaled
    snr_db: np.ndarray     # (B,)


def draw_channel_params(rng: np.random.Generator, config: TrainConfig,
                        profiles=None) -> ChannelParams:
    profiles = profiles or config.profiles
    return ChannelParams(
        rms_delay_spread=rng.uniform(*config.delay_spread),
        velocity=rng.uniform(*config.velocity),
        tap_count=config.tap_count,
        profile=profiles[int(rng.integers(len(profiles)))],
    )


def draw_batch(config: TrainConfig, step: int, purpose: str = "train",
               profiles=None, snr_db: float | None = None) -> SlotBatch:
    """Simulate ``config.batch`` slots; every draw is keyed by (seed, purpose, step, slot)."""
    g = config.geometry
    bits, Hs, noises, snrs = [], [], [], []
    for q in range(config.batch):
        rng = generator(config.seed, purpose, step, q)
        snr = rng.uniform(*config.snr_db) if snr_db is None else float(snr_db)
        params = draw_channel_params(rng, config, profiles)
        slot_seed = derive_seed(config.seed, purpose, step, q)
        Hs.append(generate_channel(g, params, slot_seed))
        bits.append(rng.integers(0, 2, size=(g.n_subcarriers, g.n_symbols, g.n_streams, config.qm),
                                 dtype=np.int8))
        nv = float(noise_variance_from_snr(snr))
        noises.append(draw_noise((g.n_subcarriers, g.n_symbols, g.n_rx), nv, slot_seed))
        snrs.append(snr)
    return SlotBatch(np.stack(bits), np.stack(Hs), np.stack(noises), np.array(snrs))


# --------------------------------------------------------------------------- forward

def transmit(tx: ConstellationNetParams, bits: np.ndarray, q_ref=None):
    """Differentiable symbol mapping: returns (x_re, x_im) of shape bits.shape[:-1]."""
    consts = stream_constellations(tx, q_ref)
    idx = bits_to_index(bits)  # (..., N_T)
    x_re = nx.stack([nx.take(re, idx[..., l]) for l, (re, _) in enumerate(consts)], axis=-1)
    x_im = nx.stack([nx.take(im, idx[..., l]) for l, (_, im) in enumerate(consts)], axis=-1)
    return x_re, x_im, consts


def batch_loss(tx: ConstellationNetParams, rx: RxNetParams, batch: SlotBatch,
               config: TrainConfig, q_ref=None):
    """Forward pass of the whole link; returns (loss, mean BCE, D) tensors."""
    x_re, x_im, consts = transmit(tx, batch.bits, q_ref)
    y = apply_channel_tensors(x_re, x_im, batch.H, batch.noise)
    llrs = rx_forward(y, rx)
    bce = bce_per_slot(llrs, batch.bits)
    dterm = distance_loss(consts, config.bias)
    loss = total_loss(bce, dterm, 10.0 ** (batch.snr_db / 10.0), config.lam)
    return loss, bce, dterm


# --------------------------------------------------------------------------- loop

def init_models(config: TrainConfig) -> tuple[ConstellationNetParams, RxNetParams]:
    tx = init_constellation_params(config.qm, config.geometry.n_streams, config.n_transforms,
                                   seed=derive_seed(config.seed, "init", "tx"))
    rx = init_rx_params(config.geometry, config.qm, config.rx_blocks, config.rx_filters,
                        config.rx_input_features, seed=derive_seed(config.seed, "init", "rx"))
    return tx, rx


def train_e2e(config: TrainConfig, tx: ConstellationNetParams | None = None,
              rx: RxNetParams | None = None, progress=None):
    """Jointly train transmitter constellations and receiver with Adam.

    Args:
        config: Hyperparameters; all randomness derives from ``config.seed``.
        tx, rx: Optional starting models (default: fresh initialization).
        progress: Optional callable invoked with each :class:`StepRecord`.

    Returns:
        (tx params, rx params, history)

    Raises:
        TrainingDiverged: On a non-finite loss; carries the history so far.
    """
    if tx is None or rx is None:
        tx0, rx0 = init_models(config)
        tx = tx or tx0
        rx = rx or rx0
    params = tx.tensors() + rx.tensors()
    for p in params:
        p.requires_grad = True
    state = nx.AdamState.zeros_like(params, lr=config.lr)
    q_ref = qam_reference(config.qm)
    history = TrainHistory()
    for step in range(config.steps):
        batch = draw_batch(config, step)
        loss, bce, dterm = batch_loss(tx, rx, batch, config, q_ref)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(f"non-finite loss at step {step}", history)
        grads = nx.backward(loss, params)
        grads, norm, clipped = nx.clip_by_global_norm(grads, config.grad_clip)
        if clipped:
            log.info("step %d: gradient norm %.3g clipped to %.3g", step, norm, config.grad_clip)
        new_values, state = nx.adam_step([p.value for p in params], grads, state)
        for p, v in zip(params, new_values):
            p.value = v
        rec = StepRecord(step, loss.item(), float(np.mean(bce.value)), dterm.item(),
                         float(np.mean(batch.snr_db)), norm)
        history.records.append(rec)
        if progress is not None:
            progress(rec)
    return tx, rx, history
