"""Hard vector quantisation, the noise-substitution surrogate, k-means
initialisation and dead-entry replacement.

All functions accept either a single ``D``-vector or a batch ``(B, D)`` of
inputs; batched results carry arrays where the single form carries scalars.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from gsvq._parallel import chunked_map

log = logging.getLogger(__name__)

# rows scanned per nearest-neighbour block
_BLOCK = 4096
# codebooks at most this wide and at least this long are searched with a k-d tree
_TREE_MAX_DIM = 8
_TREE_MIN_ENTRIES = 64


@dataclass(eq=False)
class Codebook:
    vectors: np.ndarray
    usage: np.ndarray = field(default=None)

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors))
        if self.vectors.shape[0] < 1 or self.vectors.shape[1] < 1:
            raise ValueError(f"codebook needs >= 1 entry and dim >= 1, got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("codebook vectors must be finite")
        if self.usage is None:
            self.usage = np.zeros(len(self.vectors), dtype=np.int64)
        elif len(self.usage) != len(self.vectors):
            raise ValueError("usage length must equal the entry count")

    @property
    def entries(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def active_fraction(self, threshold=1):
        return float(np.mean(self.usage >= threshold))

    def copy(self):
        return Codebook(self.vectors.copy(), self.usage.copy())


class QuantizationResult(NamedTuple):
    index: int | np.ndarray
    hard: np.ndarray
    distance: float | np.ndarray


class NSVQSample(NamedTuple):
    surrogate: np.ndarray
    index: int | np.ndarray
    noise: np.ndarray  # unit-norm direction used for the substitution


def _check_dim(t, cb):
    t = np.asarray(t, dtype=np.float64)
    if t.shape[-1] != cb.dim or t.ndim not in (1, 2):
        raise ValueError(f"input of shape {t.shape} does not match codebook dim {cb.dim}")
    return t


def _nearest_block(t, z, z_sq):
    # Expanded-form distances find candidates cheaply; rows with more than one
    # candidate are decided on directly evaluated distances, so the result
    # equals an exhaustive scan with ties going to the lowest index.
    t_sq = np.einsum("ij,ij->i", t, t)
    approx = t @ z.T
    approx *= -2.0
    approx += z_sq
    idx = np.argmin(approx, axis=1)
    best = approx[np.arange(len(t)), idx]
    slack = 1e-9 * (t_sq + z_sq.max()) + 1e-300
    near = approx <= (best + slack)[:, None]
    multi = np.flatnonzero(np.count_nonzero(near, axis=1) > 1)
    if len(multi):
        rows, cols = np.nonzero(near[multi])
        diff = t[multi[rows]] - z[cols]
        exact = np.einsum("ij,ij->i", diff, diff)
        order = np.lexsort((cols, exact, rows))
        rows, cols = rows[order], cols[order]
        first = np.ones(len(rows), dtype=bool)
        first[1:] = rows[1:] != rows[:-1]
        idx[multi] = cols[first]
    diff = t - z[idx]
    return idx, np.einsum("ij,ij->i", diff, diff)


def _tree_block(t, tree, first, z, z_sq):
    # Two nearest distinct rows; rows whose runner-up is within rounding of the
    # winner are settled by the exhaustive path so ties still go to the lowest index.
    d, j = tree.query(t, k=2)
    idx = first[j[:, 0]]
    diff = t - z[idx]
    exact = np.einsum("ij,ij->i", diff, diff)
    t_sq = np.einsum("ij,ij->i", t, t)
    close = d[:, 1] ** 2 - d[:, 0] ** 2 <= 1e-9 * (t_sq + z_sq.max()) + 1e-300
    if np.any(close):
        idx[close], exact[close] = _nearest_block(t[close], z, z_sq)
    return idx, exact


def nearest(data, vectors, threads=1):
    """Index of and squared distance to the nearest row of ``vectors`` for each row of ``data``.

    Ties resolve to the lowest index. Blocks are fixed-size so the result does
    not depend on ``threads``.
    """
    data = np.asarray(data, dtype=np.float64)
    z = np.asarray(vectors, dtype=np.float64)
    if len(data) == 0:
        return np.zeros(0, np.int64), np.zeros(0)
    z_sq = np.einsum("ij,ij->i", z, z)
    blocks = [data[i:i + _BLOCK] for i in range(0, len(data), _BLOCK)]
    work = lambda b: _nearest_block(b, z, z_sq)
    if z.shape[1] <= _TREE_MAX_DIM and len(z) >= _TREE_MIN_ENTRIES:
        uniq, first = np.unique(z, axis=0, return_index=True)
        if len(uniq) >= 2:
            tree = cKDTree(uniq)
            work = lambda b: _tree_block(b, tree, first, z, z_sq)
    parts = chunked_map(work, blocks, threads)
    idx = np.concatenate([p[0] for p in parts]).astype(np.int64)
    d2 = np.concatenate([p[1] for p in parts])
    return idx, d2


def quantize_hard(t, cb, threads=1):
    """Nearest codebook entry; increments ``cb.usage`` for every selection."""
    t = _check_dim(t, cb)
    single = t.ndim == 1
    idx, d2 = nearest(np.atleast_2d(t), cb.vectors, threads)
    cb.usage += np.bincount(idx, minlength=cb.entries)
    hard = cb.vectors[idx]
    dist = np.sqrt(d2)
    if single:
        return QuantizationResult(int(idx[0]), hard[0], float(dist[0]))
    return QuantizationResult(idx, hard, dist)


def _unit_noise(rng, shape):
    e = rng.standard_normal(shape)
    norms = np.sqrt(np.einsum("ij,ij->i", e, e))
    while np.any(norms == 0):
        bad = norms == 0
        e[bad] = rng.standard_normal((int(bad.sum()), shape[-1]))
        norms = np.sqrt(np.einsum("ij,ij->i", e, e))
    return e / norms[..., None]


def quantize_nsvq(t, cb, rng, threads=1):
    """Noise-substituted quantisation: ``t + ||t - t_q|| * e / ||e||``."""
    t = _check_dim(t, cb)
    hard = quantize_hard(t, cb, threads)
    u = _unit_noise(rng, np.atleast_2d(t).shape)
    dist = np.atleast_1d(hard.distance)
    surrogate = np.atleast_2d(t) + dist[:, None] * u
    if t.ndim == 1:
        return NSVQSample(surrogate[0], hard.index, u[0])
    return NSVQSample(surrogate, hard.index, u)


def nsvq_backward(t, z_star, unit_noise, upstream):
    """Gradients of the surrogate w.r.t. the input and the selected entry.

    With ``d = t - z``, the surrogate is ``t + ||d|| u`` so the vector-Jacobian
    product is ``grad_t = g + d/||d|| (u . g)`` and ``grad_z = -d/||d|| (u . g)``.
    Where ``||d|| = 0`` the entry gets no gradient and ``g`` passes through.
    """
    t, z, u, g = (np.asarray(a, dtype=np.float64) for a in (t, z_star, unit_noise, upstream))
    if not (t.shape == z.shape == u.shape == g.shape):
        raise ValueError("t, z_star, unit_noise and upstream must share a shape")
    d = t - z
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    proj = np.sum(u * g, axis=-1, keepdims=True)
    grad_z = np.where(norm > 0, -(d / safe) * proj, 0.0)
    return g - grad_z, grad_z


def _kmeanspp(data, k, rng):
    n = len(data)
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = rng.choice(n, p=d2 / total)
        else:
            pick = rng.integers(n)
        centers[j] = data[pick]
        d2 = np.minimum(d2, np.sum((data - centers[j]) ** 2, axis=1))
    return centers


def kmeans(data, k, rng, max_iters=20, tol=1e-6, threads=1):
    """Lloyd's algorithm with k-means++ seeding.

    Returns ``(centroids, labels, history)`` where ``history`` lists the
    objective (sum of squared distances) after each assignment step.
    Empty clusters are reseeded at the point farthest from its centroid.
    """
    data = np.asarray(data, dtype=np.float64)
    centers = _kmeanspp(data, k, rng)
    history = []
    labels = np.zeros(len(data), np.int64)
    for _ in range(max(max_iters, 1)):
        labels, d2 = nearest(data, centers, threads)
        history.append(float(d2.sum()))
        counts = np.bincount(labels, minlength=k)
        sums = np.stack([np.bincount(labels, weights=col, minlength=k) for col in data.T], axis=1)
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        for j in np.flatnonzero(~filled):
            far = int(np.argmax(d2))
            new[j] = data[far]
            d2[far] = 0.0
        shift = np.max(np.abs(new - centers))
        centers = new
        if shift < tol:
            break
    labels, d2 = nearest(data, centers, threads)
    history.append(float(d2.sum()))
    return centers, labels, history


def canonical_order(vectors):
    """Permutation sorting codebook rows lexicographically (first column primary)."""
    vectors = np.asarray(vectors)
    return np.lexsort(vectors.T[::-1])


def kmeans_init(data, entries, rng, max_iters=20, tol=1e-6, threads=1):
    """Codebook initialised at k-means centroids of ``data``, rows in canonical order.

    If ``entries`` exceeds the number of points, the surplus rows duplicate
    randomly chosen data points.
    """
    data = np.asarray(data, dtype=np.float64)
    if len(data) == 0:
        raise ValueError("cannot initialise a codebook from empty data")
    if entries < 1:
        raise ValueError("entries must be >= 1")
    k = min(entries, len(data))
    centers, _, _ = kmeans(data, k, rng, max_iters, tol, threads)
    if entries > len(data):
        log.warning("codebook has %d entries but only %d points; duplicating data points",
                    entries, len(data))
        extra = data[rng.integers(len(data), size=entries - len(data))]
        centers = np.concatenate([centers, extra])
    return Codebook(centers[canonical_order(centers)])


def replace_inactive(cb, threshold, rng, jitter=0.0):
    """Overwrite entries used fewer than ``threshold`` times with copies of active ones.

    Usage counters are reset afterwards. Returns the number of replaced entries.
    """
    active = np.flatnonzero(cb.usage >= threshold)
    inactive = np.flatnonzero(cb.usage < threshold)
    replaced = 0
    if len(active) and len(inactive):
        src = active[rng.integers(len(active), size=len(inactive))]
        cb.vectors[inactive] = cb.vectors[src]
        if jitter:
            cb.vectors[inactive] += jitter * rng.standard_normal((len(inactive), cb.dim))
        replaced = len(inactive)
    cb.usage[:] = 0
    return replaced
