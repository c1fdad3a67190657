"""The quantised splat representation: full-precision positions and opacities,
four codebooks and one index per splat and codebook."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gsvq.splat_model import SplatCloud
from gsvq.vq import Codebook, canonical_order

GROUPS = ("s", "r", "c", "sh")
DIMS = {"s": 3, "r": 4, "c": 3, "sh": 45}
_ATTR = {"s": "s_raw", "r": "r", "c": "c", "sh": "c_sh"}


def group_data(cloud, group):
    """Raw attribute columns of ``cloud`` that codebook ``group`` quantises."""
    return getattr(cloud, _ATTR[group])


@dataclass(eq=False)
class QuantizedCloud:
    x: np.ndarray
    o_raw: np.ndarray
    idx_s: np.ndarray
    idx_r: np.ndarray
    idx_c: np.ndarray
    idx_sh: np.ndarray
    cb_s: Codebook
    cb_r: Codebook
    cb_c: Codebook
    cb_sh: Codebook
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.x)
        self.x = np.asarray(self.x, dtype=np.float32).reshape(n, 3)
        self.o_raw = np.asarray(self.o_raw, dtype=np.float32).reshape(n)
        for g in GROUPS:
            idx = np.asarray(self.index(g), dtype=np.int64).reshape(-1)
            if len(idx) != n:
                raise ValueError(f"idx_{g} has {len(idx)} entries for {n} splats")
            setattr(self, f"idx_{g}", idx)
            cb = self.codebook(g)
            if cb.dim != DIMS[g]:
                raise ValueError(f"codebook {g} has dim {cb.dim}, expected {DIMS[g]}")

    def __len__(self):
        return len(self.x)

    def index(self, group):
        return getattr(self, f"idx_{group}")

    def codebook(self, group):
        return getattr(self, f"cb_{group}")

    def __eq__(self, other):
        if not isinstance(other, QuantizedCloud):
            return NotImplemented
        pairs = [(self.x, other.x), (self.o_raw, other.o_raw)]
        for g in GROUPS:
            pairs.append((self.index(g), other.index(g)))
            pairs.append((self.codebook(g).vectors.astype(np.float32),
                          other.codebook(g).vectors.astype(np.float32)))
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs)

    def usage_histograms(self):
        return {g: np.bincount(self.index(g), minlength=self.codebook(g).entries) for g in GROUPS}


def dequantize(q):
    """Splat cloud whose quantised attributes are the indexed codebook rows."""
    rows = {}
    for g in GROUPS:
        idx, cb = q.index(g), q.codebook(g)
        if len(idx) and (idx.min() < 0 or idx.max() >= cb.entries):
            bad = int(np.flatnonzero((idx < 0) | (idx >= cb.entries))[0])
            raise IndexError(f"splat {bad}: index {int(idx[bad])} out of range for "
                             f"{cb.entries}-entry codebook {g!r}")
        rows[g] = cb.vectors.astype(np.float32)[idx]
    return SplatCloud(q.x.copy(), q.o_raw.copy(), rows["s"], rows["r"], rows["c"], rows["sh"], 3)


def canonicalize(q):
    """Reorder every codebook lexicographically and remap indices to match."""
    books, idx = {}, {}
    for g in GROUPS:
        cb = q.codebook(g)
        perm = canonical_order(cb.vectors)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        books[g] = Codebook(cb.vectors[perm], cb.usage[perm])
        idx[g] = inverse[q.index(g)]
    return QuantizedCloud(q.x, q.o_raw, idx["s"], idx["r"], idx["c"], idx["sh"],
                          books["s"], books["r"], books["c"], books["sh"], dict(q.report))
