"""Conventional receiver: DMRS pilots, LMMSE channel estimation, K-Best detection.

Pilots occupy two full OFDM symbols. On a pilot symbol, stream ``s`` sends
unit-modulus pilots on subcarriers ``f % 2 == s`` and nothing on the other
comb, so least-squares estimates of different streams never interfere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .link import SlotGeometry
from .rng import generator

LLR_CLIP = 15.0
ASSUMED_DELAY_SPREAD = 100e-9


@dataclass(frozen=True)
class DmrsPattern:
    symbols: tuple[int, ...] = (2, 11)
    n_streams: int = 2

    def __post_init__(self):
        if self.n_streams > 2:
            raise ValueError("comb-2 DMRS supports at most two streams")

    def comb(self, stream: int, n_subcarriers: int) -> np.ndarray:
        return np.arange(stream % 2, n_subcarriers, 2)

    def data_mask(self, geometry: SlotGeometry) -> np.ndarray:
        """(N_F, N_S) boolean mask of data-carrying REs."""
        if max(self.symbols) >= geometry.n_symbols:
            raise ValueError(f"pilot symbols {self.symbols} do not fit {geometry.n_symbols} symbols")
        mask = np.ones((geometry.n_subcarriers, geometry.n_symbols), dtype=bool)
        mask[:, list(self.symbols)] = False
        return mask

    def overhead(self, n_symbols: int) -> float:
        return len(self.symbols) / n_symbols

    def pilots(self, stream: int, n_subcarriers: int, seed: int) -> np.ndarray:
        """QPSK pilot values, shape (n_pilot_symbols, len(comb))."""
        rng = generator(seed, "dmrs", stream)
        n = len(self.comb(stream, n_subcarriers))
        bits = rng.integers(0, 2, size=(len(self.symbols), n, 2))
        return ((1 - 2 * bits[..., 0]) + 1j * (1 - 2 * bits[..., 1])) / np.sqrt(2.0)


def insert_dmrs(x: np.ndarray, pattern: DmrsPattern, seed: int) -> np.ndarray:
    """Overwrite pilot symbols of a (N_F, N_S, N_T) grid with DMRS."""
    out = np.array(x, dtype=np.complex128, copy=True)
    n_f = out.shape[0]
    for s in range(out.shape[2]):
        comb = pattern.comb(s, n_f)
        values = pattern.pilots(s, n_f, seed)
        for i, sym in enumerate(pattern.symbols):
            out[:, sym, s] = 0.0
            out[comb, sym, s] = values[i]
    return out


def exponential_pdp_correlation(freqs_a: np.ndarray, freqs_b: np.ndarray,
                                delay_spread: float = ASSUMED_DELAY_SPREAD) -> np.ndarray:
    """Frequency correlation of an exponential power-delay profile."""
    df = freqs_a[:, None] - freqs_b[None, :]
    return 1.0 / (1.0 + 2j * np.pi * df * delay_spread)


def lmmse_smoother(R: np.ndarray, noise_var: float) -> np.ndarray:
    """LMMSE denoising matrix ``R (R + s2 I)^-1`` written as ``I - s2 (R + s2 I)^-1``.

    The second form is exactly the identity at zero noise even when ``R`` is
    numerically singular.
    """
    n = R.shape[0]
    if noise_var == 0:
        return np.eye(n, dtype=np.complex128)
    return np.eye(n) - noise_var * np.linalg.inv(R + noise_var * np.eye(n))


def _linear_interp(known_idx: np.ndarray, values: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Linear inter/extrapolation from ``known_idx`` to 0..n-1 along ``axis``."""
    values = np.moveaxis(values, axis, 0)
    if known_idx.size == 1:
        out = np.repeat(values, n, axis=0)
        return np.moveaxis(out, 0, axis)
    target = np.arange(n)
    seg = np.clip(np.searchsorted(known_idx, target, side="right") - 1, 0, known_idx.size - 2)
    x0, x1 = known_idx[seg], known_idx[seg + 1]
    w = ((target - x0) / (x1 - x0)).reshape((-1,) + (1,) * (values.ndim - 1))
    out = values[seg] * (1 - w) + values[seg + 1] * w
    return np.moveaxis(out, 0, axis)


def lmmse_estimate(y: np.ndarray, pattern: DmrsPattern, noise_var: float, seed: int,
                   geometry: SlotGeometry) -> np.ndarray:
    """Channel estimate (N_F, N_S, N_R, N_T) from a received DMRS slot.

    LS estimates on each stream's pilot comb are denoised by LMMSE with an
    exponential-PDP prior of 100 ns, interpolated linearly in frequency to the
    other comb, then linearly in time between the pilot symbols.
    """
    if not isinstance(pattern, DmrsPattern):
        raise TypeError(f"unknown pilot pattern {pattern!r}")
    n_f, n_s, n_r = y.shape
    n_t = pattern.n_streams
    freqs = np.arange(n_f) * geometry.subcarrier_spacing
    syms = np.array(pattern.symbols)
    at_pilots = np.zeros((n_f, len(syms), n_r, n_t), dtype=np.complex128)
    for s in range(n_t):
        comb = pattern.comb(s, n_f)
        p = pattern.pilots(s, n_f, seed)  # (P_sym, n_comb)
        ls = y[comb][:, syms, :] / p.T[:, :, None]  # (n_comb, P_sym, R)
        R = exponential_pdp_correlation(freqs[comb], freqs[comb])
        W = lmmse_smoother(R, noise_var)
        smooth = np.einsum("ij,jsr->isr", W, ls)
        at_pilots[:, :, :, s] = _linear_interp(comb, smooth, n_f, axis=0)
    return _linear_interp(syms, at_pilots, n_s, axis=1)


def perfect_csi(H: np.ndarray) -> np.ndarray:
    return H


# --------------------------------------------------------------------------- K-Best

@dataclass
class CandidateList:
    """Per-RE surviving hypotheses.

    Attributes:
        indices: (N, K, N_T) constellation indices per stream.
        metrics: (N, K) exact ``||y - Hx||^2``, ascending along axis 1.
        regularized: (N,) whether diagonal loading was needed.
    """

    indices: np.ndarray
    metrics: np.ndarray
    regularized: np.ndarray


def kbest_detect(y: np.ndarray, H: np.ndarray, constellations, K: int) -> CandidateList:
    """Breadth-first K-Best tree search after QR decomposition.

    Args:
        y: (N, N_R) received vectors (or a single (N_R,) vector).
        H: (N, N_R, N_T) channels.
        constellations: One complex point array per stream.
        K: Survivors kept per level.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    single = y.ndim == 1
    if single:
        y, H = y[None], H[None]
    pts = [np.asarray(getattr(c, "points", c), dtype=np.complex128) for c in constellations]
    n, n_r, n_t = H.shape
    if len(pts) != n_t:
        raise ValueError(f"{len(pts)} constellations for {n_t} streams")
    Q, R = np.linalg.qr(H)
    diag = np.abs(np.diagonal(R, axis1=1, axis2=2))
    scale = np.linalg.norm(H, axis=(1, 2)) + 1e-300
    regularized = (diag.min(axis=1) < 1e-12 * scale)
    yt = np.einsum("nrt,nr->nt", Q.conj(), y)
    if regularized.any():
        # diagonal loading: search on [H; sqrt(eps) I], score with the true H below
        n_bad = int(regularized.sum())
        loading = np.broadcast_to(np.sqrt(1e-9) * np.eye(n_t), (n_bad, n_t, n_t))
        Qa, Ra = np.linalg.qr(np.concatenate([H[regularized], loading], axis=1))
        ya = np.concatenate([y[regularized], np.zeros((n_bad, n_t))], axis=1)
        R[regularized] = Ra
        yt[regularized] = np.einsum("nrt,nr->nt", Qa.conj(), ya)

    paths = np.zeros((n, 1, 0), dtype=np.int64)  # indices for levels already decided
    metric = np.zeros((n, 1))
    rows = np.arange(n)[:, None]
    for level in range(n_t - 1, -1, -1):
        decided = list(range(level + 1, n_t))
        interf = np.zeros(paths.shape[:2], dtype=np.complex128)
        for j in decided:
            # paths[..., 0] holds the deepest level (stream n_t - 1)
            sym = pts[j][paths[:, :, n_t - 1 - j]]
            interf += R[:, level, j][:, None] * sym
        resid = yt[:, level][:, None, None] - interf[:, :, None] - R[:, level, level][:, None, None] * pts[level][None, None, :]
        child = metric[:, :, None] + np.abs(resid) ** 2  # (n, C, M)
        C, M = child.shape[1], child.shape[2]
        flat = child.reshape(n, C * M)
        keep = min(K, C * M)
        order = np.argsort(flat, axis=1, kind="stable")[:, :keep]
        parent, sym_idx = np.divmod(order, M)
        paths = np.concatenate([paths[rows, parent], sym_idx[:, :, None]], axis=2)
        metric = flat[rows, order]

    # paths columns run from stream n_t-1 down to 0; flip to stream order
    indices = paths[:, :, ::-1]
    x = np.stack([pts[l][indices[:, :, l]] for l in range(n_t)], axis=-1)  # (n, K, n_t)
    exact = np.sum(np.abs(y[:, None, :] - np.einsum("nrt,nkt->nkr", H, x)) ** 2, axis=-1)
    order = np.argsort(exact, axis=1, kind="stable")
    cands = CandidateList(indices[rows, order], exact[rows, order], regularized)
    if single:
        cands = CandidateList(cands.indices[0], cands.metrics[0], cands.regularized[0])
    return cands


def maxlog_llr(candidates: CandidateList, noise_var: float, label_bits) -> np.ndarray:
    """Max-log LLRs (N, N_T, Q_m) from a candidate list.

    Args:
        label_bits: One (M, Q_m) bit-label array per stream.
    """
    idx, metrics = candidates.indices, candidates.metrics
    single = idx.ndim == 2
    if single:
        idx, metrics = idx[None], metrics[None]
    n_t = idx.shape[2]
    out = []
    for l in range(n_t):
        bits = np.asarray(label_bits[l])[idx[:, :, l]]  # (N, K, Q)
        m = metrics[:, :, None]
        m1 = np.where(bits == 1, m, np.inf).min(axis=1)
        m0 = np.where(bits == 0, m, np.inf).min(axis=1)
        with np.errstate(invalid="ignore"):
            llr = (m1 - m0) / noise_var
        llr = np.where(np.isinf(m1), LLR_CLIP, llr)
        llr = np.where(np.isinf(m0), -LLR_CLIP, llr)
        out.append(np.clip(llr, -LLR_CLIP, LLR_CLIP))
    llrs = np.stack(out, axis=1)
    return llrs[0] if single else llrs


def default_k(qm: int) -> int:
    return 16 if qm <= 4 else 32


def detect_slot(y: np.ndarray, H_est: np.ndarray, noise_var: float, constellations,
                K: int, data_mask: np.ndarray) -> np.ndarray:
    """K-Best + max-log on every data RE of a slot.

    Returns:
        (n_data_re, N_T, Q_m) LLRs in row-major (subcarrier, symbol) order.
    """
    yd = y[data_mask]
    Hd = H_est[data_mask]
    cands = kbest_detect(yd, Hd, constellations, K)
    labels = [c.bits for c in constellations]
    return maxlog_llr(cands, noise_var, labels)
