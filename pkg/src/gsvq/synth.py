"""Seeded synthetic splat scenes and orbit cameras for desk-scale experiments.

Results are deterministic per seed on a given platform; transcendental
functions may differ in the last bit across libm implementations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gsvq.renderer import Camera
from gsvq.splat_model import SH_REST_DIMS, SplatCloud, logit


@dataclass
class SceneSpec:
    splat_count: int = 1000
    extent: float = 1.0
    scale_range: tuple = (-4.0, -2.0)
    opacity_range: tuple = (0.3, 0.95)
    dc_range: tuple = (-1.5, 1.5)
    sh_energy: float = 0.3
    sh_decay: float = 0.5
    seed: int = 0
    preset: str = "random"

    def __post_init__(self):
        if self.splat_count < 0:
            raise ValueError("splat_count must be >= 0")
        lo, hi = self.scale_range
        if lo > hi:
            raise ValueError("scale_range must be ordered")
        lo, hi = self.opacity_range
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError("opacity_range must lie inside (0, 1) and be ordered")
        if self.preset not in ("random", "grid"):
            raise ValueError(f"unknown preset {self.preset!r}")


def _sh_coeffs(rng, n, energy, decay):
    # degree-l bands get standard deviation energy * decay**(l-1)
    band = np.repeat(np.arange(1, 4), [3, 5, 7])
    std = energy * decay ** (band - 1)
    coeffs = rng.standard_normal((n, 3, 15)) * std
    return coeffs.reshape(n, SH_REST_DIMS[3])


def _grid_positions(n, extent):
    side = max(1, int(np.ceil(n ** (1 / 3))))
    ticks = np.linspace(-extent, extent, side) if side > 1 else np.zeros(1)
    g = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), -1).reshape(-1, 3)
    return g[:n]


def generate_cloud(spec):
    """Pseudo-random splats: ``random`` scatters them uniformly in the box,
    ``grid`` places coloured blobs on a lattice with position-coded colours."""
    rng = np.random.default_rng(spec.seed)
    n = spec.splat_count
    if spec.preset == "grid":
        x = _grid_positions(n, spec.extent)
        rgb = (x / (2 * spec.extent) + 0.5) if spec.extent > 0 else np.full((n, 3), 0.5)
        c = (np.clip(rgb, 0.05, 0.95) - 0.5) / 0.28209479177387814
    else:
        x = rng.uniform(-spec.extent, spec.extent, (n, 3))
        c = rng.uniform(*spec.dc_range, (n, 3))
    s_raw = rng.uniform(*spec.scale_range, (n, 3))
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    o_raw = logit(rng.uniform(*spec.opacity_range, n))
    c_sh = _sh_coeffs(rng, n, spec.sh_energy, spec.sh_decay)
    f = np.float32
    return SplatCloud(x.astype(f), o_raw.astype(f), s_raw.astype(f), q.astype(f), c.astype(f),
                      c_sh.astype(f), sh_degree=3)


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    """World-to-camera matrix with x right, y down and z forward."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    view = np.eye(4)
    view[:3, :3] = np.stack([right, down, fwd])
    view[:3, 3] = -view[:3, :3] @ eye
    return view


def generate_orbit_cameras(n, radius=4.0, image_size=(64, 64), fov_deg=50.0, height=0.0):
    """``n`` cameras evenly spaced on a circle in the z = ``height`` plane, all facing the origin."""
    if n < 1:
        raise ValueError("need at least one camera")
    w, h = image_size
    f = 0.5 * w / np.tan(np.radians(fov_deg) / 2)
    cams = []
    for k in range(n):
        a = 2 * np.pi * k / n
        eye = (radius * np.cos(a), radius * np.sin(a), height)
        cams.append(Camera(look_at(eye), f, f, w / 2, h / 2, w, h, 0.01))
    return cams
