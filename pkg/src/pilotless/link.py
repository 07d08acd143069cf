"""OFDM slot geometry, tapped-delay-line fading channel, and the per-RE MIMO model.

All quantities live in the frequency domain: ``y[f, s] = H[f, s] @ x[f, s] + n``
per resource element, with no cyclic prefix or time-domain waveform.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .rng import generator

SPEED_OF_LIGHT = 299_792_458.0
DELAY_SPREAD_RANGE = (10e-9, 300e-9)
VELOCITY_RANGE = (0.0, 5.0)


@dataclass(frozen=True)
class SlotGeometry:
    n_subcarriers: int = 72
    n_symbols: int = 14
    n_streams: int = 2
    n_rx: int = 4
    subcarrier_spacing: float = 30e3
    carrier_frequency: float = 3.5e9

    def __post_init__(self):
        counts = (self.n_subcarriers, self.n_symbols, self.n_streams, self.n_rx)
        if min(counts) < 1:
            raise ValueError(f"slot dimensions must be positive: {counts}")
        if self.n_streams > self.n_rx:
            raise ValueError("more transmit streams than receive antennas")

    @property
    def symbol_duration(self) -> float:
        # NR numerology: a slot of 14 symbols lasts 1 ms * 15 kHz / spacing.
        return 1e-3 * 15e3 / self.subcarrier_spacing / 14

    @property
    def n_re(self) -> int:
        return self.n_subcarriers * self.n_symbols


class Profile(str, Enum):
    TRAIN_A = "TDL-TRAIN-A"
    TRAIN_B = "TDL-TRAIN-B"
    VALID_C = "TDL-VALID-C"


TRAIN_PROFILES = (Profile.TRAIN_A, Profile.TRAIN_B)


def _template(profile: Profile, n_taps: int) -> np.ndarray:
    k = np.arange(n_taps, dtype=np.float64)
    if profile is Profile.TRAIN_A:
        return k
    if profile is Profile.TRAIN_B:
        return k ** 1.6
    # Fixed irregular spacing for the held-out profile.
    steps = 0.4 + 1.2 * (0.5 + 0.5 * np.sin(2.3 * k[1:] + 0.7))
    return np.concatenate([[0.0], np.cumsum(steps)])


@dataclass(frozen=True)
class ChannelParams:
    rms_delay_spread: float = 100e-9
    velocity: float = 0.0
    tap_count: int = 12
    profile: Profile = Profile.TRAIN_A
    n_sinusoids: int = 16

    def taps(self) -> tuple[np.ndarray, np.ndarray]:
        """Tap delays (s) and powers (sum 1) for this parameter set.

        Powers decay exponentially over the template; delays are scaled so the
        RMS delay spread equals ``rms_delay_spread`` exactly.
        """
        if self.tap_count < 1:
            raise ValueError("tap_count must be >= 1")
        u = _template(Profile(self.profile), self.tap_count)
        if self.tap_count == 1:
            return np.zeros(1), np.ones(1)
        decay = u[-1] / 4.0
        p = np.exp(-u / decay)
        p /= p.sum()
        mu = np.sum(p * u)
        rms = np.sqrt(np.sum(p * (u - mu) ** 2))
        return u * (self.rms_delay_spread / rms), p


def rms_delay_spread(delays: np.ndarray, powers: np.ndarray) -> float:
    p = powers / powers.sum()
    mu = np.sum(p * delays)
    return float(np.sqrt(np.sum(p * (delays - mu) ** 2)))


def doppler_frequency(velocity: float, carrier_frequency: float) -> float:
    return velocity * carrier_frequency / SPEED_OF_LIGHT


def generate_channel(geometry: SlotGeometry, params: ChannelParams, seed: int) -> np.ndarray:
    """Draw one slot's frequency response H of shape (N_F, N_S, N_R, N_T).

    Each (tap, rx, tx) gain is a sum of ``n_sinusoids`` complex Gaussian
    phasors rotating at ``f_D cos(alpha_m)`` with uniform arrival angles, which
    is exactly circular Gaussian at every instant and has the Jakes Doppler
    spectrum on average.
    """
    lo, hi = DELAY_SPREAD_RANGE
    if not lo <= params.rms_delay_spread <= hi and params.tap_count > 1:
        warnings.warn(f"delay spread {params.rms_delay_spread:.3g}s outside [{lo}, {hi}]")
    if not VELOCITY_RANGE[0] <= params.velocity <= VELOCITY_RANGE[1]:
        warnings.warn(f"velocity {params.velocity} m/s outside {VELOCITY_RANGE}")
    delays, powers = params.taps()
    rng = generator(seed, "channel")
    K, R, T, M = params.tap_count, geometry.n_rx, geometry.n_streams, params.n_sinusoids
    z = (rng.standard_normal((K, R, T, M)) + 1j * rng.standard_normal((K, R, T, M))) / np.sqrt(2 * M)
    alpha = rng.uniform(0.0, 2.0 * np.pi, size=(K, R, T, M))
    fd = doppler_frequency(params.velocity, geometry.carrier_frequency)
    t = np.arange(geometry.n_symbols) * geometry.symbol_duration
    # (S, K, R, T, M) phasors
    rot = np.exp(2j * np.pi * fd * np.cos(alpha)[None] * t[:, None, None, None, None])
    gains = (z[None] * rot).sum(axis=-1) * np.sqrt(powers)[None, :, None, None]
    f = np.arange(geometry.n_subcarriers) * geometry.subcarrier_spacing
    steer = np.exp(-2j * np.pi * f[:, None] * delays[None, :])  # (F, K)
    return np.einsum("fk,skrt->fsrt", steer, gains)


def draw_noise(shape, noise_var: float, seed: int) -> np.ndarray:
    """Circular complex Gaussian noise with per-element variance ``noise_var``."""
    rng = generator(seed, "noise")
    sd = np.sqrt(noise_var / 2.0)
    return sd * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def apply_channel(x: np.ndarray, H: np.ndarray, noise_var: float, seed: int) -> np.ndarray:
    """Received grid ``y = H x + n`` for complex arrays with matching leading axes.

    Args:
        x: (..., N_T) transmitted symbols per RE.
        H: (..., N_R, N_T) channel.
        noise_var: Per-antenna noise variance.
        seed: Noise seed.
    """
    x = np.asarray(x)
    if H.shape[:-2] != x.shape[:-1] or H.shape[-1] != x.shape[-1]:
        raise ValueError(f"shape mismatch: x {x.shape}, H {H.shape}")
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    y = np.einsum("...rt,...t->...r", H, x)
    if noise_var > 0:
        y = y + draw_noise(y.shape, noise_var, seed)
    return y


def apply_channel_tensors(x_re: Tensor, x_im: Tensor, H: np.ndarray,
                          noise: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Differentiable ``y = H x + n`` on (re, im) tensors; H and n are constants."""
    if H.shape[:-2] != x_re.shape[:-1] or H.shape[-1] != x_re.shape[-1]:
        raise ValueError(f"shape mismatch: x {x_re.shape}, H {H.shape}")
    xs = x_re.shape[:-1] + (1, x_re.shape[-1])
    xr, xi = nx.reshape(x_re, xs), nx.reshape(x_im, xs)
    hr, hi = H.real, H.imag
    y_re = nx.tsum(xr * hr - xi * hi, axis=-1)
    y_im = nx.tsum(xr * hi + xi * hr, axis=-1)
    if noise is not None:
        y_re = y_re + noise.real
        y_im = y_im + noise.imag
    return y_re, y_im


def noise_variance_from_snr(snr_db, geometry: SlotGeometry | None = None):
    """Per-antenna noise variance for unit symbol energy and unit channel gain."""
    return 10.0 ** (-np.asarray(snr_db, dtype=np.float64) / 10.0)


def dump_channel(H: np.ndarray, path) -> None:
    """Write H as little-endian float32 (re, im) pairs in row-major order."""
    pairs = np.stack([H.real, H.imag], axis=-1).astype("<f4")
    Path(path).write_bytes(pairs.tobytes(order="C"))


def load_channel(path, geometry: SlotGeometry) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    shape = (geometry.n_subcarriers, geometry.n_symbols, geometry.n_rx, geometry.n_streams, 2)
    pairs = raw.reshape(shape).astype(np.float64)
    return pairs[..., 0] + 1j * pairs[..., 1]
