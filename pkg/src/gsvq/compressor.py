"""Splat compression pipeline: opacity pruning, noise-substituted codebook
training and fine-tuning with frozen code assignment.

Positions and opacities stay in full precision; scaling, rotation, DC colour
and SH coefficients are each replaced by an index into a trained codebook.

Losses are summed over the splats of a batch (``0.5 * sum ||t~ - t||^2``), so
``lr_codebook`` acts per sample: an entry with ``n`` assigned splats moves a
fraction ``lr * n`` of the way to their mean, which must stay below 2.
The render loss ``0.5 * sum (I - I_ref)^2`` uses steps of ``lr_render / L`` with
``L`` the per-camera Lipschitz constant of its gradient, so ``lr_render`` is
dimensionless and descends for values below 2.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass

import numpy as np

from gsvq import renderer
from gsvq.metrics import attribute_mse
from gsvq.quantized import GROUPS, QuantizedCloud, canonicalize, dequantize, group_data
from gsvq.sh import C0, sh_basis, sh_colour
from gsvq.splat_model import SplatCloud, sigmoid
from gsvq.vq import Codebook, kmeans_init, nearest, nsvq_backward, quantize_nsvq, replace_inactive

log = logging.getLogger(__name__)

SIZE_PRESETS = {"16k": 16384, "8k": 8192, "4k": 4096, "2k": 2048, "1k": 1024, "0.5k": 512}


def size_entries(name):
    """Entry counts ``(s, r, c, sh)`` for a named size; colour and SH get a quarter."""
    try:
        n = SIZE_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown size {name!r}; choose from {', '.join(SIZE_PRESETS)}") from None
    return n, n, n // 4, n // 4


def _is_pow2(n):
    return n >= 1 and n & (n - 1) == 0


@dataclass
class CompressionConfig:
    entries_s: int = 1024
    entries_r: int = 1024
    entries_c: int = 256
    entries_sh: int = 256
    prune: bool = True
    prune_lambda: float = 1e-4
    prune_threshold: float = 0.005
    prune_steps: int = 100
    vq_steps: int = 1000
    finetune_steps: int = 100
    lr_codebook: float = 1e-3
    lr_attr: float = 1e-3
    lr_render: float = 1.0  # fraction of 1/L, L the render-loss Lipschitz constant; < 2 descends
    batch_size: int = 16384
    replace_period: int = 500
    replace_threshold: int = 1
    replace_jitter: float = 0.0
    kmeans_iters: int = 10
    kmeans_tol: float = 1e-6
    seed: int = 0
    render_loss: bool = False

    def __post_init__(self):
        for g in GROUPS:
            n = self.entries(g)
            if n < 2 or not _is_pow2(n):
                raise ValueError(f"entries_{g} must be a power of two >= 2, got {n}")
        for name in ("prune_steps", "vq_steps", "finetune_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("lr_codebook", "lr_attr", "lr_render"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.batch_size < 1 or self.replace_period < 1:
            raise ValueError("batch_size and replace_period must be >= 1")

    def entries(self, group):
        return getattr(self, f"entries_{group}")

    @classmethod
    def from_size(cls, name, **overrides):
        s, r, c, sh = size_entries(name)
        return cls(entries_s=s, entries_r=r, entries_c=c, entries_sh=sh, **overrides)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_file(cls, path, **overrides):
        """Load a JSON object of config fields; an optional ``"size"`` key selects a preset."""
        with open(path) as fh:
            data = json.load(fh)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)} - {"size"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data.update(overrides)
        size = data.pop("size", None)
        return cls.from_size(size, **data) if size else cls(**data)


def prune(cloud, cfg, steps=None):
    """Opacity-regularised pruning.

    Takes ``steps`` gradient steps on ``prune_lambda * sum(sigmoid(o_raw))`` and
    then drops every splat whose opacity falls below ``prune_threshold``.
    """
    steps = cfg.prune_steps if steps is None else steps
    o = np.asarray(cloud.o_raw, dtype=np.float64).copy()
    for _ in range(steps):
        p = sigmoid(o)
        o -= cfg.lr_attr * cfg.prune_lambda * p * (1.0 - p)
    keep = sigmoid(o) >= cfg.prune_threshold
    out = cloud.copy()
    out.o_raw = o.astype(cloud.o_raw.dtype)
    out = out[keep]
    removed = len(cloud) - len(out)
    log.info("pruning removed %d of %d splats", removed, len(cloud))
    if len(cloud) and not len(out):
        log.warning("pruning removed every splat")
    return out


class _Batches:
    """Mini-batches drawn without replacement, reshuffled every epoch."""

    def __init__(self, n, size, rng):
        self.n, self.size, self.rng = n, min(size, n), rng
        self.perm, self.pos = None, n

    def next(self):
        if self.size == self.n:
            return slice(None)
        if self.pos + self.size > self.n:
            self.perm, self.pos = self.rng.permutation(self.n), 0
        out = self.perm[self.pos:self.pos + self.size]
        self.pos += self.size
        return out


class _RenderTargets:
    """Per-camera compositing weights, SH bases and reference images of a fixed geometry."""

    def __init__(self, cloud, cams, threads):
        self.weights, self.bases, self.targets = [], [], []
        for cam in cams:
            w = renderer.blend_weights(cloud, cam, threads)
            basis = sh_basis(renderer.view_directions(cloud, cam))
            colour = np.clip(sh_colour(cloud.c, cloud.c_sh, None, basis), 0.0, 1.0)
            self.weights.append(w.matrix)
            self.bases.append(basis)
            self.targets.append(w.matrix @ colour)

    def __len__(self):
        return len(self.weights)

    def colour_grads(self, k, c, c_sh):
        """Render loss ``0.5 * sum (I - I_ref)^2`` for camera ``k`` and its gradients
        w.r.t. the per-splat DC colour and SH coefficients."""
        W, basis = self.weights[k], self.bases[k]
        colour = sh_colour(c, c_sh, None, basis)
        inside = (colour > 0.0) & (colour < 1.0)
        resid = W @ np.clip(colour, 0.0, 1.0) - self.targets[k]
        g = np.asarray(W.T @ resid) * inside
        g_c = C0 * g
        g_sh = (g[:, :, None] * basis[:, None, 1:]).reshape(len(g), -1)
        return 0.5 * float(np.sum(resid**2)), g_c, g_sh

    def lipschitz(self, k, idx_c, entries_c, idx_sh, entries_sh, iters=30):
        """Largest eigenvalue of the Gauss-Newton matrix of the (unclamped) render loss
        w.r.t. the colour and SH codebooks under a fixed assignment, by power iteration.

        A gradient step of ``lr / L`` then decreases the quadratic loss for ``lr < 2``.
        """
        W, basis = self.weights[k], self.bases[k]
        n = W.shape[1]

        def jtj(vc, vsh):
            rest = vsh[idx_sh].reshape(n, 3, -1)
            colour = C0 * vc[idx_c] + np.einsum("nck,nk->nc", rest, basis[:, 1:])
            g = np.asarray(W.T @ (W @ colour))
            g_sh = (g[:, :, None] * basis[:, None, 1:]).reshape(n, -1)
            return _scatter(C0 * g, idx_c, entries_c), _scatter(g_sh, idx_sh, entries_sh)

        vc, vsh = np.ones((entries_c, 3)), np.ones((entries_sh, 45))
        lam = 0.0
        for _ in range(iters):
            norm = np.sqrt(np.sum(vc**2) + np.sum(vsh**2))
            if norm == 0:
                return 0.0
            vc, vsh = jtj(vc / norm, vsh / norm)
            lam = np.sqrt(np.sum(vc**2) + np.sum(vsh**2))
        return float(lam)


def _render_step(lr, lip):
    # power iteration approaches the top eigenvalue from below; keep a small margin
    return lr / (1.05 * lip) if lip > 0 else 0.0


def _scatter(grad_rows, idx, entries):
    """Row sums of ``grad_rows`` grouped by codebook index."""
    cols = [np.bincount(idx, weights=col, minlength=entries) for col in np.asarray(grad_rows).T]
    return np.stack(cols, axis=1)


def _spawn(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _check_stability(cfg, n):
    for g in GROUPS:
        share = min(cfg.batch_size, n) / cfg.entries(g)
        if cfg.lr_codebook * share > 1.0:
            log.warning("lr_codebook * (batch / entries_%s) = %.2f; codebook updates may overshoot",
                        g, cfg.lr_codebook * share)


def _finalize(cloud, books, threads):
    idx, out = {}, {}
    for g in GROUPS:
        vecs = books[g].vectors.astype(np.float32)
        idx[g], _ = nearest(group_data(cloud, g), vecs, threads)
        out[g] = Codebook(vecs, np.bincount(idx[g], minlength=len(vecs)))
    return QuantizedCloud(cloud.x, cloud.o_raw, idx["s"], idx["r"], idx["c"], idx["sh"],
                          out["s"], out["r"], out["c"], out["sh"])


def _require_sh3(cloud):
    if cloud.sh_degree != 3:
        raise ValueError(f"compression expects degree-3 SH (45 coefficients), got degree {cloud.sh_degree}")


def train_codebooks(cloud, cfg, cams=None, threads=1):
    """K-means initialisation followed by ``vq_steps`` of noise-substituted training."""
    if len(cloud) == 0:
        raise ValueError("cannot train codebooks on an empty cloud")
    _require_sh3(cloud)
    if cfg.render_loss and not cams:
        raise ValueError("render_loss requires at least one camera")
    _check_stability(cfg, len(cloud))
    rng_km = _spawn(cfg.seed, 8)
    rng_noise, rng_batch, rng_rep, rng_cam = rng_km[4:]
    data = {g: np.asarray(group_data(cloud, g), dtype=np.float64) for g in GROUPS}
    books = {g: kmeans_init(data[g], cfg.entries(g), rng_km[i], cfg.kmeans_iters,
                            cfg.kmeans_tol, threads)
             for i, g in enumerate(GROUPS)}

    render_groups = ("c", "sh") if cfg.render_loss else ()
    targets = _RenderTargets(cloud, cams, threads) if render_groups else None
    if targets is not None:
        # step sizes from the k-means assignment; assignments drift little during training
        init_idx = {g: nearest(data[g], books[g].vectors, threads)[0] for g in render_groups}
        lips = [targets.lipschitz(k, init_idx["c"], cfg.entries_c, init_idx["sh"], cfg.entries_sh)
                for k in range(len(targets))]
    batches = _Batches(len(cloud), cfg.batch_size, rng_batch)
    cam_order = []

    for step in range(cfg.vq_steps):
        sel = batches.next()
        for g in GROUPS:
            if g in render_groups:
                continue
            cb, t = books[g], data[g][sel]
            smp = quantize_nsvq(t, cb, rng_noise, threads)
            _, gz = nsvq_backward(t, cb.vectors[smp.index], smp.noise, smp.surrogate - t)
            cb.vectors -= cfg.lr_codebook * _scatter(gz, smp.index, cb.entries)

        if targets is not None:
            if not cam_order:
                cam_order = list(rng_cam.permutation(len(targets)))
            k = cam_order.pop()
            cb_c, cb_sh = books["c"], books["sh"]
            smp_c = quantize_nsvq(data["c"], cb_c, rng_noise, threads)
            smp_sh = quantize_nsvq(data["sh"], cb_sh, rng_noise, threads)
            _, g_c, g_sh = targets.colour_grads(k, smp_c.surrogate, smp_sh.surrogate)
            step_size = _render_step(cfg.lr_render, lips[k])
            for cb, smp, t, up in ((cb_c, smp_c, data["c"], g_c), (cb_sh, smp_sh, data["sh"], g_sh)):
                _, gz = nsvq_backward(t, cb.vectors[smp.index], smp.noise, up)
                cb.vectors -= step_size * _scatter(gz, smp.index, cb.entries)

        if (step + 1) % cfg.replace_period == 0:
            for g in GROUPS:
                n = replace_inactive(books[g], cfg.replace_threshold, rng_rep, cfg.replace_jitter)
                if n:
                    log.debug("step %d: replaced %d inactive entries in codebook %s", step + 1, n, g)

    return _finalize(cloud, books, threads)


def finetune_frozen(qcloud, cloud, cfg, cams=None, threads=1):
    """Refine codebook entries with the code assignment held fixed.

    Each entry first jumps to the mean of the raw attributes assigned to it,
    then ``finetune_steps`` gradient steps polish the hard-quantised loss. With
    ``render_loss`` the colour and SH codebooks are instead polished on the
    render loss, since the attribute mean is not the render-space optimum.
    """
    _require_sh3(cloud)
    if len(cloud) != len(qcloud):
        raise ValueError("cloud and quantized cloud differ in splat count")
    render_groups = ("c", "sh") if cfg.render_loss and cams else ()
    rng_batch = _spawn(cfg.seed, 9)[8]
    books = {}
    for g in GROUPS:
        idx, cb = qcloud.index(g), qcloud.codebook(g)
        z = cb.vectors.astype(np.float64)
        if g not in render_groups:
            t = np.asarray(group_data(cloud, g), dtype=np.float64)
            counts = np.bincount(idx, minlength=cb.entries)
            sums = _scatter(t, idx, cb.entries)
            used = counts > 0
            z[used] = sums[used] / counts[used, None]
            batches = _Batches(len(t), cfg.batch_size, rng_batch)
            for _ in range(cfg.finetune_steps):
                sel = batches.next()
                z -= cfg.lr_codebook * _scatter(z[idx[sel]] - t[sel], idx[sel], cb.entries)
        books[g] = Codebook(z, cb.usage.copy())

    if render_groups:
        targets = _RenderTargets(cloud, cams, threads)
        zc, zsh = books["c"].vectors, books["sh"].vectors
        lips = [targets.lipschitz(k, qcloud.idx_c, len(zc), qcloud.idx_sh, len(zsh))
                for k in range(len(targets))]
        for step in range(cfg.finetune_steps):
            k = step % len(targets)
            _, g_c, g_sh = targets.colour_grads(k, zc[qcloud.idx_c], zsh[qcloud.idx_sh])
            step_size = _render_step(cfg.lr_render, lips[k])
            zc -= step_size * _scatter(g_c, qcloud.idx_c, len(zc))
            zsh -= step_size * _scatter(g_sh, qcloud.idx_sh, len(zsh))

    out = {g: Codebook(books[g].vectors.astype(np.float32), books[g].usage) for g in GROUPS}
    return QuantizedCloud(qcloud.x, qcloud.o_raw, qcloud.idx_s, qcloud.idx_r, qcloud.idx_c,
                          qcloud.idx_sh, out["s"], out["r"], out["c"], out["sh"], dict(qcloud.report))


def compress(cloud, cfg, cams=None, threads=1):
    """Prune, train codebooks and fine-tune; ``result.report`` summarises each phase."""
    if len(cloud) == 0:
        raise ValueError("cannot compress an empty cloud")
    cloud = cloud.astype(np.float32)
    pruned = prune(cloud, cfg) if cfg.prune else cloud
    if len(pruned) == 0:
        raise ValueError("pruning removed every splat; lower prune_threshold")
    q = train_codebooks(pruned, cfg, cams, threads)
    mse_trained = attribute_mse(pruned, q)
    q = finetune_frozen(q, pruned, cfg, cams, threads)
    q = canonicalize(q)
    hist = q.usage_histograms()
    q.report = {
        "splats": {"input": len(cloud), "after_prune": len(pruned)},
        "mse_after_training": mse_trained,
        "mse": attribute_mse(pruned, q),
        "active_fraction": {g: float(np.mean(h > 0)) for g, h in hist.items()},
        "usage_histogram": {g: h.tolist() for g, h in hist.items()},
        "config": cfg.to_dict(),
    }
    return q


__all__ = [
    "CompressionConfig", "QuantizedCloud", "SplatCloud", "SIZE_PRESETS", "compress",
    "dequantize", "finetune_frozen", "prune", "size_entries", "train_codebooks",
]
