"""Regenerate the shipped LDPC base graph (src/pilotless/data/base_graph.*).

Layout (rows x columns = 64 x 94):
  columns 0..29   information; column 0 is always punctured
  columns 30..33  core parity, dual-diagonal with a weight-3 first column
  columns 34..93  extension parity, one per extension row (degree 1)
  rows 0..3       core checks
  rows 4..63      extension checks, each closing on its own parity column
"""

from pathlib import Path

import numpy as np

KB, CORE, EXT = 30, 4, 60
MAX_SHIFT = 384
SEED = 20230


def design(seed: int = SEED) -> np.ndarray:
    rng = np.random.default_rng(seed)
    rows, cols = CORE + EXT, KB + CORE + EXT
    V = -np.ones((rows, cols), dtype=np.int64)

    # core: column 0 in every core row, other info columns in 2 or 3 core rows
    V[:CORE, 0] = rng.integers(0, MAX_SHIFT, CORE)
    for c in range(1, KB):
        deg = 3 if c % 2 else 2
        for r in rng.choice(CORE, size=deg, replace=False):
            V[r, c] = rng.integers(0, MAX_SHIFT)
    p0, p1, p2, p3 = range(KB, KB + CORE)
    V[0, p0], V[1, p0], V[3, p0] = 1, 0, 1
    V[0, p1] = V[1, p1] = 0
    V[1, p2] = V[2, p2] = 0
    V[2, p3] = V[3, p3] = 0

    usage = np.zeros(KB + CORE)
    usage[0] = np.inf  # column 0 is placed by rule below
    for e in range(EXT):
        r = CORE + e
        weight = 5 if e < 10 else (4 if e < 30 else 3)
        picks = []
        if e % 2 == 0:
            picks.append(0)
        # least-used information/core-parity columns, random tie-break
        order = np.lexsort((rng.random(KB + CORE), usage))
        for c in order:
            if len(picks) >= weight:
                break
            if c not in picks:
                picks.append(int(c))
        for c in picks:
            V[r, c] = rng.integers(0, MAX_SHIFT)
            if c:
                usage[c] += 1
        V[r, KB + CORE + e] = 0
    return V


def write(V: np.ndarray, out_dir: Path) -> None:
    rows, cols = V.shape
    support = V >= 0
    col_deg = support.sum(axis=0)
    row_deg = support.sum(axis=1)
    lines = [f"{cols} {rows}", f"{col_deg.max()} {row_deg.max()}",
             " ".join(map(str, col_deg)), " ".join(map(str, row_deg))]
    for c in range(cols):
        idx = np.flatnonzero(support[:, c]) + 1
        lines.append(" ".join(map(str, list(idx) + [0] * (col_deg.max() - len(idx)))))
    for r in range(rows):
        idx = np.flatnonzero(support[r]) + 1
        lines.append(" ".join(map(str, list(idx) + [0] * (row_deg.max() - len(idx)))))
    (out_dir / "base_graph.alist").write_text("\n".join(lines) + "\n")
    shifts = [f"{r} {c} {V[r, c]}" for r, c in zip(*np.nonzero(support))]
    (out_dir / "base_graph_shifts.txt").write_text(
        "# row col shift (0-based); lifted shift = shift mod Z\n" + "\n".join(shifts) + "\n")


if __name__ == "__main__":
    target = Path(__file__).resolve().parents[1] / "src" / "pilotless" / "data"
    target.mkdir(parents=True, exist_ok=True)
    write(design(), target)
    print(f"wrote base graph to {target}")
