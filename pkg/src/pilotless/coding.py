"""LDPC coding and the MCS table.

Codes are lifted from a shipped quasi-cyclic base graph (``data/base_graph.*``)
and rate-matched by shortening (known-zero filler bits) and puncturing (the
first information column and any extension parity that does not fit).

LLR convention everywhere: positive means bit 0 is more likely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numba
import numpy as np
from scipy import sparse

BASE_INFO_COLS = 30
BASE_CORE_ROWS = 4
SCALE = 0.75
MAX_ITERS = 25
FILLER_LLR = 1e4


@dataclass(frozen=True)
class McsEntry:
    index: int
    qm: int
    rate: float


MCS_TABLE = (
    McsEntry(1, 4, 0.37), McsEntry(2, 4, 0.42), McsEntry(3, 4, 0.48),
    McsEntry(4, 4, 0.54), McsEntry(5, 4, 0.60), McsEntry(6, 4, 0.64),
    McsEntry(7, 6, 0.46), McsEntry(8, 6, 0.50), McsEntry(9, 6, 0.55),
    McsEntry(10, 6, 0.60), McsEntry(11, 6, 0.65), McsEntry(12, 6, 0.70),
    McsEntry(13, 6, 0.75), McsEntry(14, 6, 0.80), McsEntry(15, 6, 0.85),
)


def mcs_lookup(index: int) -> McsEntry:
    if not 1 <= index <= len(MCS_TABLE):
        raise ValueError(f"MCS index {index} not in 1..{len(MCS_TABLE)}")
    return MCS_TABLE[index - 1]


# --------------------------------------------------------------------------- alist

def read_alist(text: str) -> sparse.csr_matrix:
    """Parse an alist description into an (M, N) binary sparse matrix."""
    tokens = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
    n, m = map(int, tokens[0])
    col_deg = list(map(int, tokens[2]))
    rows, cols = [], []
    for c in range(n):
        for r in tokens[4 + c][:col_deg[c]]:
            if int(r) > 0:
                rows.append(int(r) - 1)
                cols.append(c)
    data = np.ones(len(rows), dtype=np.uint8)
    return sparse.csr_matrix((data, (rows, cols)), shape=(m, n))


def write_alist(H) -> str:
    H = sparse.csc_matrix(H)
    m, n = H.shape
    Hr = H.tocsr()
    col_deg = np.diff(H.indptr)
    row_deg = np.diff(Hr.indptr)
    out = [f"{n} {m}", f"{col_deg.max()} {row_deg.max()}",
           " ".join(map(str, col_deg)), " ".join(map(str, row_deg))]
    for c in range(n):
        idx = list(H.indices[H.indptr[c]:H.indptr[c + 1]] + 1)
        out.append(" ".join(map(str, sorted(idx) + [0] * (col_deg.max() - len(idx)))))
    for r in range(m):
        idx = list(Hr.indices[Hr.indptr[r]:Hr.indptr[r + 1]] + 1)
        out.append(" ".join(map(str, sorted(idx) + [0] * (row_deg.max() - len(idx)))))
    return "\n".join(out) + "\n"


@lru_cache(maxsize=1)
def base_graph() -> np.ndarray:
    """Base matrix of shift values, -1 where the block is zero."""
    pkg = resources.files("pilotless") / "data"
    support = read_alist((pkg / "base_graph.alist").read_text()).toarray().astype(bool)
    V = -np.ones(support.shape, dtype=np.int64)
    for line in (pkg / "base_graph_shifts.txt").read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        r, c, s = map(int, line.split())
        V[r, c] = s
    if not np.array_equal(V >= 0, support):
        raise ValueError("base graph shift table disagrees with the alist support")
    return V


# --------------------------------------------------------------------------- GF(2)

def gf2_rank(H) -> int:
    A = (sparse.csr_matrix(H).toarray() & 1).astype(bool)
    rank = 0
    m, n = A.shape
    for c in range(n):
        pivot = np.flatnonzero(A[rank:, c])
        if pivot.size == 0:
            continue
        p = rank + pivot[0]
        A[[rank, p]] = A[[p, rank]]
        others = np.flatnonzero(A[:, c])
        others = others[others != rank]
        A[others] ^= A[rank]
        rank += 1
        if rank == m:
            break
    return rank


def _systematic_form(H) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reduced row echelon form; returns (parity map P, info cols, pivot cols)."""
    A = (sparse.csr_matrix(H).toarray() & 1).astype(bool)
    m, n = A.shape
    pivots, rank = [], 0
    for c in range(n):
        if rank == m:
            break
        pivot = np.flatnonzero(A[rank:, c])
        if pivot.size == 0:
            continue
        p = rank + pivot[0]
        A[[rank, p]] = A[[p, rank]]
        others = np.flatnonzero(A[:, c])
        others = others[others != rank]
        A[others] ^= A[rank]
        pivots.append(c)
        rank += 1
    pivots = np.array(pivots)
    info = np.setdiff1d(np.arange(n), pivots)
    return A[:rank][:, info].astype(np.uint8), info, pivots


# --------------------------------------------------------------------------- code object

@dataclass
class LdpcCode:
    """An LDPC code with rate matching.

    ``H`` is the parity-check matrix over the internal (mother) word; the
    transmitted codeword is ``mother[tx_pos]`` and the payload sits at
    ``mother[info_pos]``. Positions in ``filler_pos`` are known zeros.
    """

    H: sparse.csr_matrix
    k: int
    n: int
    info_pos: np.ndarray
    tx_pos: np.ndarray
    filler_pos: np.ndarray
    lift: int = 0
    max_iters: int = MAX_ITERS
    _parity_map: np.ndarray | None = None
    _pivots: np.ndarray | None = None
    _qc: tuple | None = None
    _graph_cache: tuple | None = None

    @property
    def rate(self) -> float:
        return self.k / self.n

    @property
    def n_mother(self) -> int:
        return self.H.shape[1]

    def syndrome(self, mother_word) -> np.ndarray:
        return (self.H @ np.asarray(mother_word, dtype=np.int64)) % 2

    @classmethod
    def from_parity_check(cls, H, max_iters: int = MAX_ITERS) -> "LdpcCode":
        """Plain (unpunctured, unshortened) code from any parity-check matrix."""
        H = sparse.csr_matrix(H, dtype=np.uint8)
        parity_map, info, pivots = _systematic_form(H)
        n = H.shape[1]
        return cls(H, len(info), n, info, np.arange(n), np.array([], dtype=np.int64),
                   0, max_iters, parity_map, pivots)

    def _graph(self):
        if self._graph_cache is None:
            csr = self.H.tocsr()
            csr.sort_indices()
            self._graph_cache = (csr.indptr.astype(np.int64), csr.indices.astype(np.int64))
        return self._graph_cache


def _lift(V: np.ndarray, Z: int, rows, cols) -> sparse.csr_matrix:
    ri, ci, vi = [], [], []
    col_offset = {c: i for i, c in enumerate(cols)}
    for out_r, r in enumerate(rows):
        for c in np.flatnonzero(V[r] >= 0):
            if c not in col_offset:
                continue
            s = V[r, c] % Z
            z = np.arange(Z)
            ri.append(out_r * Z + z)
            ci.append(col_offset[c] * Z + (z + s) % Z)
    ri, ci = np.concatenate(ri), np.concatenate(ci)
    return sparse.csr_matrix((np.ones(ri.size, dtype=np.uint8), (ri, ci)),
                             shape=(len(rows) * Z, len(cols) * Z))


@lru_cache(maxsize=64)
def build_code(target_rate: float, n_bits: int, max_iters: int = MAX_ITERS) -> LdpcCode:
    """Rate-matched QC-LDPC with ``n_bits`` transmitted bits.

    The payload is ``k = floor(target_rate * n_bits)``. The lifting size is the
    smallest one that fits the payload into the information columns and the
    parity into the available columns.

    Raises:
        ValueError: If the rate cannot be realized with the shipped base graph.
    """
    if not 0.3 <= target_rate <= 0.9:
        raise ValueError(f"target rate {target_rate} outside [0.3, 0.9]")
    V = base_graph()
    n_rows, n_cols = V.shape
    kb, core = BASE_INFO_COLS, BASE_CORE_ROWS
    n_ext = n_rows - core
    k = int(math.floor(target_rate * n_bits + 1e-9))
    Z = max(math.ceil(k / kb), math.ceil((n_bits - k) / (n_cols - kb - 1)), 2)
    n_parity_tx = n_bits - (k - Z)
    if k <= Z or n_parity_tx < core * Z:
        raise ValueError(f"rate {target_rate} unreachable for {n_bits} coded bits")
    n_ext_tx = n_parity_tx - core * Z
    if n_ext_tx > n_ext * Z:
        raise ValueError(f"rate {target_rate} unreachable for {n_bits} coded bits")
    ext_blocks = math.ceil(n_ext_tx / Z)
    rows = list(range(core + ext_blocks))
    cols = list(range(kb + core + ext_blocks))
    H = _lift(V, Z, rows, cols)
    # keep only extension checks whose degree-1 parity bit is transmitted
    n_keep = core * Z + n_ext_tx
    keep_cols = (kb + core) * Z + n_ext_tx
    H = H[:n_keep][:, :keep_cols].tocsr()
    info_pos = np.arange(k)
    filler_pos = np.arange(k, kb * Z)
    tx_pos = np.concatenate([np.arange(Z, k), np.arange(kb * Z, keep_cols)])
    assert tx_pos.size == n_bits
    return LdpcCode(H, k, n_bits, info_pos, tx_pos, filler_pos, Z, max_iters,
                    _qc=(V, Z, ext_blocks, n_ext_tx))


# --------------------------------------------------------------------------- encode

def _roll_xor(acc: np.ndarray, block: np.ndarray, shift: int) -> None:
    acc ^= np.roll(block, -shift)


def mother_codeword(payload, code: LdpcCode) -> np.ndarray:
    payload = np.asarray(payload, dtype=np.uint8).reshape(-1)
    if payload.size != code.k:
        raise ValueError(f"payload length {payload.size} != k={code.k}")
    qc = code._qc
    if qc is None:
        word = np.zeros(code.n_mother, dtype=np.uint8)
        word[code.info_pos] = payload
        word[code._pivots] = (code._parity_map.astype(np.int64) @ payload) % 2
        return word
    V, Z, ext_blocks, n_ext_tx = qc
    kb, core = BASE_INFO_COLS, BASE_CORE_ROWS
    u = np.zeros(kb * Z, dtype=np.uint8)
    u[:code.k] = payload
    ub = u.reshape(kb, Z)
    s = np.zeros((core, Z), dtype=np.uint8)
    for r in range(core):
        for c in np.flatnonzero(V[r, :kb] >= 0):
            _roll_xor(s[r], ub[c], V[r, c] % Z)
    p = np.zeros((core, Z), dtype=np.uint8)
    p[0] = s[0] ^ s[1] ^ s[2] ^ s[3]
    p[1] = s[0] ^ np.roll(p[0], -1)
    p[2] = s[1] ^ p[0] ^ p[1]
    p[3] = s[2] ^ p[2]
    head = np.concatenate([ub, p])  # (kb + core, Z)
    ext = np.zeros((ext_blocks, Z), dtype=np.uint8)
    for e in range(ext_blocks):
        r = core + e
        for c in np.flatnonzero(V[r, :kb + core] >= 0):
            _roll_xor(ext[e], head[c], V[r, c] % Z)
    return np.concatenate([head.reshape(-1), ext.reshape(-1)[:n_ext_tx]])


def ldpc_encode(payload, code: LdpcCode) -> np.ndarray:
    """Transmitted codeword bits (length n) for ``payload`` (length k)."""
    return mother_codeword(payload, code)[code.tx_pos]


# --------------------------------------------------------------------------- decode

@numba.njit(cache=True)
def _min_sum(indptr, indices, channel, max_iters, scale):
    n_chk = indptr.size - 1
    n_var = channel.size
    n_edge = indices.size
    c2v = np.zeros(n_edge)
    total = channel.copy()
    hard = np.zeros(n_var, dtype=np.uint8)
    for it in range(1, max_iters + 1):
        new_total = channel.copy()
        for c in range(n_chk):
            lo, hi = indptr[c], indptr[c + 1]
            min1 = np.inf
            min2 = np.inf
            arg = -1
            sign = 1.0
            for e in range(lo, hi):
                m = total[indices[e]] - c2v[e]
                a = abs(m)
                if m < 0:
                    sign = -sign
                if a < min1:
                    min2 = min1
                    min1 = a
                    arg = e
                elif a < min2:
                    min2 = a
            for e in range(lo, hi):
                m = total[indices[e]] - c2v[e]
                s = -sign if m < 0 else sign
                mag = min2 if e == arg else min1
                if mag == np.inf:
                    mag = 0.0
                c2v[e] = scale * s * mag
                new_total[indices[e]] += c2v[e]
        total = new_total
        for v in range(n_var):
            hard[v] = 1 if total[v] < 0 else 0
        ok = True
        for c in range(n_chk):
            acc = 0
            for e in range(indptr[c], indptr[c + 1]):
                acc ^= hard[indices[e]]
            if acc:
                ok = False
                break
        if ok:
            return hard, True, it
    return hard, False, max_iters


def ldpc_decode(llrs, code: LdpcCode):
    """Normalized min-sum decoding (factor 0.75) with early exit on zero syndrome.

    Args:
        llrs: Length-n channel LLRs for the transmitted bits.

    Returns:
        (payload bits, converged flag, iterations used)
    """
    llrs = np.asarray(llrs, dtype=np.float64).reshape(-1)
    if llrs.size != code.n:
        raise ValueError(f"expected {code.n} LLRs, got {llrs.size}")
    channel = np.zeros(code.n_mother)
    channel[code.tx_pos] = llrs
    channel[code.filler_pos] = FILLER_LLR
    indptr, indices = code._graph()
    hard, ok, iters = _min_sum(indptr, indices, channel, code.max_iters, SCALE)
    return hard[code.info_pos].copy(), bool(ok), int(iters)


def mcs_code(mcs: McsEntry, n_data_re: int, n_streams: int) -> LdpcCode:
    """Code filling ``n_data_re`` resource elements on every stream."""
    return build_code(mcs.rate, n_data_re * n_streams * mcs.qm)
