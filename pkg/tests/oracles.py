"""Independent reference implementations used as test oracles.

These are deliberately naive (explicit loops, exhaustive enumeration) so they
share no code paths with the package under test.
"""

import itertools

import numpy as np


def pairwise_extremes(points):
    """(d_min, d_max) by looping over every unordered pair."""
    pts = list(np.asarray(points, dtype=complex))
    dmin, dmax = np.inf, 0.0
    for a, b in itertools.combinations(pts, 2):
        d = abs(a - b)
        dmin, dmax = min(dmin, d), max(dmax, d)
    return dmin, dmax


def nr_qam_point(bits):
    """NR per-axis Gray mapping for 16/64-QAM, straight from the closed form."""
    b = [int(v) for v in bits]
    if len(b) == 4:
        re = (1 - 2 * b[0]) * (2 - (1 - 2 * b[2]))
        im = (1 - 2 * b[1]) * (2 - (1 - 2 * b[3]))
        return (re + 1j * im) / np.sqrt(10)
    if len(b) == 6:
        re = (1 - 2 * b[0]) * (4 - (1 - 2 * b[2]) * (2 - (1 - 2 * b[4])))
        im = (1 - 2 * b[1]) * (4 - (1 - 2 * b[3]) * (2 - (1 - 2 * b[5])))
        return (re + 1j * im) / np.sqrt(42)
    raise ValueError(len(b))


def exhaustive_candidates(y, H, constellations):
    """All symbol vectors with exact metrics, sorted by (metric, enumeration order)."""
    sizes = [len(c) for c in constellations]
    cands = []
    for idx in itertools.product(*[range(s) for s in sizes]):
        x = np.array([constellations[l][i] for l, i in enumerate(idx)])
        r = y - H @ x
        cands.append((float(np.real(np.vdot(r, r))), idx))
    cands.sort(key=lambda t: t[0])
    return cands


def exhaustive_maxlog(y, H, constellations, labels, noise_var, clip=15.0):
    """Max-log LLRs (N_T, Q_m) over the full hypothesis set."""
    cands = exhaustive_candidates(y, H, constellations)
    n_t, qm = len(constellations), labels[0].shape[1]
    out = np.zeros((n_t, qm))
    for l in range(n_t):
        for q in range(qm):
            m0 = min((m for m, idx in cands if labels[l][idx[l], q] == 0), default=np.inf)
            m1 = min((m for m, idx in cands if labels[l][idx[l], q] == 1), default=np.inf)
            if np.isinf(m1):
                out[l, q] = clip
            elif np.isinf(m0):
                out[l, q] = -clip
            else:
                out[l, q] = np.clip((m1 - m0) / noise_var, -clip, clip)
    return out


def per_re_mixing(Y, A):
    """Features of the antenna-mixing layer by looping over resource elements."""
    nf, ns, _ = Y.shape
    f = A.shape[0]
    out = np.zeros((nf, ns, 2 * f))
    for i in range(nf):
        for j in range(ns):
            z = A @ Y[i, j]
            out[i, j, :f] = z.real
            out[i, j, f:] = z.imag
    return out


def conv2d_loops(x, w, b, dilation=(1, 1)):
    """'Same' zero-padded 2-D convolution (cross-correlation) with explicit loops."""
    B, H, W, cin = x.shape
    kh, kw, _, cout = w.shape
    dh, dw = dilation
    ph, pw = dh * (kh // 2), dw * (kw // 2)
    out = np.zeros((B, H, W, cout)) + (0 if b is None else b)
    for i in range(H):
        for j in range(W):
            for u in range(kh):
                for v in range(kw):
                    ii, jj = i + u * dh - ph, j + v * dw - pw
                    if 0 <= ii < H and 0 <= jj < W:
                        out[:, i, j, :] += x[:, ii, jj, :] @ w[u, v]
    return out


def gf2_syndrome(H, word):
    return (np.asarray(H.todense() if hasattr(H, "todense") else H, dtype=np.int64) @ word) % 2


def gf2_solve(A, b):
    """Solve A x = b over GF(2) for square invertible A by Gauss-Jordan."""
    A = np.array(A, dtype=np.uint8) & 1
    b = np.array(b, dtype=np.uint8) & 1
    n = A.shape[0]
    M = np.concatenate([A, b[:, None]], axis=1)
    for c in range(n):
        rows = np.flatnonzero(M[c:, c]) + c
        if rows.size == 0:
            raise np.linalg.LinAlgError("singular over GF(2)")
        M[[c, rows[0]]] = M[[rows[0], c]]
        for r in np.flatnonzero(M[:, c]):
            if r != c:
                M[r] ^= M[c]
    return M[:, -1]
