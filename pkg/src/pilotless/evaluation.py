"""BLER sweeps, link adaptation, spectral efficiency and CSV export.

Every simulated block is keyed by ``(seed, block index)``: channel, payload
and a unit-variance noise draw are shared by all schemes and all SNR points
(common random numbers), so scheme comparisons and SNR trends are paired.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .baseline import DmrsPattern, default_k, detect_slot, insert_dmrs, lmmse_estimate
from .coding import MCS_TABLE, McsEntry, ldpc_decode, ldpc_encode, mcs_code, mcs_lookup
from .constellation import (Constellation, ConstellationNetParams, bits_to_index,
                            export_constellations, qam_reference, write_constellation_csv)
from .link import (DELAY_SPREAD_RANGE, VELOCITY_RANGE, ChannelParams, Profile, SlotGeometry,
                   draw_noise, generate_channel, noise_variance_from_snr)
from .neuralrx import RxNetParams, rx_llrs
from .rng import derive_seed, generator

log = logging.getLogger(__name__)

SCHEMES = ("ML", "practical", "perfect")
CSV_SCHEMES = ("practical", "perfect", "ML")
PILOTLESS_OVERHEAD = 0.0
BLER_TARGET = 0.10


class MissingModelError(LookupError):
    pass


@dataclass(frozen=True)
class StoppingRule:
    """Simulate until ``min_errors`` block errors or ``max_blocks`` blocks.

    ``min_blocks`` forces a floor regardless of the error count.
    """

    min_errors: int = 100
    max_blocks: int = 10_000
    min_blocks: int = 0

    def done(self, errors: int, blocks: int) -> bool:
        if blocks < self.min_blocks:
            return False
        return errors >= self.min_errors or blocks >= self.max_blocks


@dataclass(frozen=True)
class BlerRow:
    snr_db: float
    scheme: str
    mcs: int
    errors: int
    blocks: int
    bit_errors: int = 0
    bits: int = 0

    @property
    def bler(self) -> float:
        return self.errors / self.blocks if self.blocks else float("nan")

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else float("nan")

    def confidence(self, level: float = 0.95) -> tuple[float, float]:
        """Wilson interval for the block error probability."""
        ci = stats.binomtest(self.errors, self.blocks).proportion_ci(level, method="wilson")
        return ci.low, ci.high


@dataclass(frozen=True)
class SeRow:
    snr_db: float
    scheme: str
    mcs: int | None
    se: float


@dataclass
class EvalSetup:
    """Everything except the SNR needed to simulate a block."""

    geometry: SlotGeometry = field(default_factory=SlotGeometry)
    profile: Profile = Profile.VALID_C
    delay_spread: tuple[float, float] = DELAY_SPREAD_RANGE
    velocity: tuple[float, float] = VELOCITY_RANGE
    tap_count: int = 12
    pattern: DmrsPattern = field(default_factory=DmrsPattern)
    kbest: dict[int, int] = field(default_factory=dict)
    models: dict[int, tuple[ConstellationNetParams, RxNetParams]] = field(default_factory=dict)

    def k_for(self, qm: int) -> int:
        return self.kbest.get(qm, default_k(qm))

    def model(self, qm: int):
        if qm not in self.models:
            raise MissingModelError(f"no trained model for Q_m={qm}; ML scheme needs a checkpoint")
        tx, rx = self.models[qm]
        g = self.geometry
        if (rx.n_subcarriers, rx.n_symbols, rx.n_rx, rx.n_streams) != (
                g.n_subcarriers, g.n_symbols, g.n_rx, g.n_streams):
            raise ValueError("checkpoint geometry does not match the evaluation geometry")
        return tx, rx


# --------------------------------------------------------------------------- SE

def spectral_efficiency(mcs: McsEntry, n_streams: int, pilot_overhead: float = 0.0,
                        geometry: SlotGeometry | None = None) -> float:
    """Net bits/s/Hz: ``n_streams * Q_m * rate * (1 - overhead)``."""
    if not 0.0 <= pilot_overhead < 1.0:
        raise ValueError("pilot overhead must be in [0, 1)")
    return n_streams * mcs.qm * mcs.rate * (1.0 - pilot_overhead)


def scheme_overhead(scheme: str, pattern: DmrsPattern, n_symbols: int) -> float:
    return PILOTLESS_OVERHEAD if scheme == "ML" else pattern.overhead(n_symbols)


# --------------------------------------------------------------------------- simulation

def _block_draws(setup: EvalSetup, seed: int, block: int):
    rng = generator(seed, "eval", block)
    params = ChannelParams(rms_delay_spread=rng.uniform(*setup.delay_spread),
                           velocity=rng.uniform(*setup.velocity),
                           tap_count=setup.tap_count, profile=setup.profile)
    block_seed = derive_seed(seed, "eval", block)
    g = setup.geometry
    H = generate_channel(g, params, block_seed)
    unit_noise = draw_noise((g.n_subcarriers, g.n_symbols, g.n_rx), 1.0, block_seed)
    return rng, H, unit_noise, block_seed


def _decode_errors(llrs: np.ndarray, code, payload: np.ndarray) -> tuple[bool, int]:
    decoded, _, _ = ldpc_decode(llrs.reshape(-1), code)
    wrong = int(np.count_nonzero(decoded != payload))
    return wrong > 0, wrong


def simulate_block(setup: EvalSetup, schemes, mcs: McsEntry, snr_db: float, seed: int,
                   block: int) -> dict[str, tuple[bool, int, int]]:
    """Simulate one slot for each scheme.

    Returns:
        scheme -> (block error, payload bit errors, payload bits)
    """
    g = setup.geometry
    rng, H, unit_noise, block_seed = _block_draws(setup, seed, block)
    nv = float(noise_variance_from_snr(snr_db))
    noise = np.sqrt(nv) * unit_noise
    out = {}

    dmrs = [s for s in schemes if s in ("practical", "perfect")]
    if dmrs:
        mask = setup.pattern.data_mask(g)
        n_data = int(mask.sum())
        code = mcs_code(mcs, n_data, g.n_streams)
        payload = rng.integers(0, 2, code.k, dtype=np.int8)
        cw = ldpc_encode(payload, code).reshape(n_data, g.n_streams, mcs.qm)
        q = qam_reference(mcs.qm)
        x = np.zeros((g.n_subcarriers, g.n_symbols, g.n_streams), dtype=np.complex128)
        x[mask] = q.points[bits_to_index(cw)]
        x = insert_dmrs(x, setup.pattern, block_seed)
        y = np.einsum("fsrt,fst->fsr", H, x) + noise
        consts = [q] * g.n_streams
        for s in dmrs:
            H_est = H if s == "perfect" else lmmse_estimate(y, setup.pattern, nv, block_seed, g)
            llrs = detect_slot(y, H_est, nv, consts, setup.k_for(mcs.qm), mask)
            err, wrong = _decode_errors(llrs, code, payload)
            out[s] = (err, wrong, code.k)

    if "ML" in schemes:
        tx, rx = setup.model(mcs.qm)
        code = mcs_code(mcs, g.n_re, g.n_streams)
        payload = generator(seed, "eval-ml", block).integers(0, 2, code.k, dtype=np.int8)
        cw = ldpc_encode(payload, code).reshape(g.n_subcarriers, g.n_symbols, g.n_streams, mcs.qm)
        consts = export_constellations(tx)
        idx = bits_to_index(cw)
        x = np.stack([consts[l].points[idx[..., l]] for l in range(g.n_streams)], axis=-1)
        y = np.einsum("fsrt,fst->fsr", H, x) + noise
        err, wrong = _decode_errors(rx_llrs(y, rx), code, payload)
        out["ML"] = (err, wrong, code.k)
    return out


def _sweep_point(args) -> list[BlerRow]:
    setup, schemes, mcs, snr, rule, seed = args
    counts = {s: [0, 0, 0, 0] for s in schemes}  # errors, blocks, bit errors, bits
    active = list(schemes)
    block = 0
    while active:
        res = simulate_block(setup, active, mcs, snr, seed, block)
        for s, (err, wrong, k) in res.items():
            c = counts[s]
            c[0] += err
            c[1] += 1
            c[2] += wrong
            c[3] += k
        active = [s for s in active if not rule.done(counts[s][0], counts[s][1])]
        block += 1
    return [BlerRow(float(snr), s, mcs.index, *counts[s]) for s in schemes]


def bler_sweeps(schemes, mcs_list, snr_points, setup: EvalSetup, rule: StoppingRule = StoppingRule(),
                seed: int = 0, jobs: int = 1) -> list[BlerRow]:
    """BLER table rows for every (MCS, SNR, scheme).

    Raises:
        MissingModelError: ML requested without a model for some Q_m.
    """
    snr_points = [float(s) for s in snr_points]
    if not snr_points:
        raise ValueError("empty SNR grid")
    unknown = set(schemes) - set(SCHEMES)
    if unknown:
        raise ValueError(f"unknown schemes {sorted(unknown)}; expected {SCHEMES}")
    mcs_list = [m if isinstance(m, McsEntry) else mcs_lookup(int(m)) for m in mcs_list]
    if "ML" in schemes:
        for m in mcs_list:
            setup.model(m.qm)
    tasks = [(setup, tuple(schemes), m, snr, rule, seed) for m in mcs_list for snr in snr_points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_sweep_point, tasks))
    else:
        parts = [_sweep_point(t) for t in tasks]
    return [row for part in parts for row in part]


def bler_sweep(scheme: str, mcs, snr_points, setup: EvalSetup, rule: StoppingRule = StoppingRule(),
               seed: int = 0) -> list[BlerRow]:
    return bler_sweeps([scheme], [mcs], snr_points, setup, rule, seed)


# --------------------------------------------------------------------------- link adaptation

def link_adapt(rows: list[BlerRow], n_streams: int = 2, n_symbols: int = 14,
               pattern: DmrsPattern = DmrsPattern(), target: float = BLER_TARGET,
               mcs_set=None, isotonic: bool = False) -> list[SeRow]:
    """Pick the highest-SE MCS meeting ``target`` per (SNR, scheme).

    Ties in SE go to the higher MCS index; SE is 0 when nothing qualifies.

    Raises:
        ValueError: if some (SNR, scheme, MCS) cell is missing.
    """
    mcs_set = sorted(mcs_set) if mcs_set is not None else [m.index for m in MCS_TABLE]
    cells = {(r.snr_db, r.scheme, r.mcs): r for r in rows}
    snrs = sorted({r.snr_db for r in rows})
    schemes = [s for s in SCHEMES if any(r.scheme == s for r in rows)]
    missing = [(snr, s, m) for snr in snrs for s in schemes for m in mcs_set
               if (snr, s, m) not in cells]
    if missing:
        raise ValueError("incomplete BLER table, missing (snr, scheme, mcs): "
                         + ", ".join(map(str, missing)))
    out = []
    for s in schemes:
        overhead = scheme_overhead(s, pattern, n_symbols)
        curve = []
        for snr in snrs:
            best, best_se = None, 0.0
            for m in mcs_set:
                if cells[(snr, s, m)].bler <= target:
                    se = spectral_efficiency(mcs_lookup(m), n_streams, overhead)
                    if se >= best_se:
                        best, best_se = m, se
            curve.append(SeRow(snr, s, best, best_se))
        if isotonic:
            running = SeRow(-math.inf, s, None, 0.0)
            fixed = []
            for r in curve:
                if r.se < running.se:
                    log.info("isotonic cleanup: %s at %g dB raised to %g", s, r.snr_db, running.se)
                    r = SeRow(r.snr_db, s, running.mcs, running.se)
                running = r
                fixed.append(r)
            curve = fixed
        out.extend(curve)
    return out


def se_gain(ml: list[SeRow], baseline: list[SeRow]) -> list[tuple[float, float | None]]:
    """Per-SNR percent gain of ``ml`` over ``baseline``; None where the baseline SE is 0."""
    a = sorted(ml, key=lambda r: r.snr_db)
    b = sorted(baseline, key=lambda r: r.snr_db)
    if [r.snr_db for r in a] != [r.snr_db for r in b]:
        raise ValueError("SE curves are on different SNR grids")
    return [(x.snr_db, None if y.se == 0 else 100.0 * (x.se - y.se) / y.se) for x, y in zip(a, b)]


# --------------------------------------------------------------------------- CSV

def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.9g}"


def _write(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def mcs_dirname(mcs: McsEntry) -> str:
    return f"qm{mcs.qm}_{mcs.rate:.2f}"


def write_bler_csv(rows: list[BlerRow], path) -> None:
    """``SNR,practical,perfect,ML``: one row per SNR for a single MCS."""
    by_snr: dict[float, dict[str, float]] = {}
    for r in rows:
        by_snr.setdefault(r.snr_db, {})[r.scheme] = r.bler
    _write(Path(path), ["SNR", *CSV_SCHEMES],
           [[_fmt(snr)] + [_fmt(by_snr[snr].get(s)) for s in CSV_SCHEMES] for snr in sorted(by_snr)])


def write_counts_csv(rows: list[BlerRow], path) -> None:
    _write(Path(path), ["snr_db", "scheme", "mcs", "errors", "blocks", "bler", "bit_errors", "bits"],
           [[_fmt(r.snr_db), r.scheme, r.mcs, r.errors, r.blocks, _fmt(r.bler), r.bit_errors, r.bits]
            for r in rows])


def write_se_csv(curves: list[SeRow], path) -> None:
    by_snr: dict[float, dict[str, float]] = {}
    for r in curves:
        by_snr.setdefault(r.snr_db, {})[r.scheme] = r.se
    _write(Path(path), ["SNR", *CSV_SCHEMES],
           [[_fmt(snr)] + [_fmt(by_snr[snr].get(s)) for s in CSV_SCHEMES] for snr in sorted(by_snr)])


def write_gain_csv(gain, path) -> None:
    _write(Path(path), ["SNR", "gain"], [[_fmt(snr), _fmt(g)] for snr, g in gain])


def read_csv_table(path) -> tuple[list[str], list[list[float | None]]]:
    """Parse a numeric CSV written by this module; empty cells become None."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(c) if c != "" else None for c in row] for row in reader]
    return header, rows


def export_csv(rows: list[BlerRow], curves: list[SeRow] | None, out_dir,
               constellations: list[Constellation] | None = None) -> list[Path]:
    """Write the BLER, link-adaptation, gain and constellation CSV families."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for m in sorted({r.mcs for r in rows}):
        p = out_dir / mcs_dirname(mcs_lookup(m)) / "valid_blers.csv"
        write_bler_csv([r for r in rows if r.mcs == m], p)
        written.append(p)
    if not rows:
        p = out_dir / "valid_blers.csv"
        write_bler_csv([], p)
        written.append(p)
    p = out_dir / "bler_counts.csv"
    write_counts_csv(rows, p)
    written.append(p)
    if curves is not None:
        p = out_dir / "link_adapt.csv"
        write_se_csv(curves, p)
        written.append(p)
        ml = [c for c in curves if c.scheme == "ML"]
        base = [c for c in curves if c.scheme == "practical"]
        gain = se_gain(ml, base) if ml and base else []
        p = out_dir / "gain.csv"
        write_gain_csv(gain, p)
        written.append(p)
    for l, c in enumerate(constellations or []):
        p = out_dir / f"layer{l}_const.csv"
        write_constellation_csv(c, p)
        written.append(p)
    return written
