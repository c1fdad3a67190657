"""CPU reference rasteriser for 3D Gaussian splats.

Forward image formation follows the usual 3DGS pipeline: EWA projection of
each covariance with a +0.3 px low-pass dilation, per-splat SH colour, and
front-to-back alpha compositing over depth-sorted splats. Because colour
enters the image linearly once geometry is fixed, the compositing weights are
materialised as a sparse ``pixels x splats`` matrix; the forward pass is a
product with that matrix and the colour backward pass is its transpose.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from gsvq._parallel import chunked_map
from gsvq.sh import sh_colour
from gsvq.splat_model import activate, covariance3d

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
DILATION = 0.3
DET_MIN = 1e-12


@dataclass
class Camera:
    view: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        self.view = np.asarray(self.view, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if self.near <= 0:
            raise ValueError("near plane must be positive")

    @property
    def center(self):
        R, t = self.view[:3, :3], self.view[:3, 3]
        return -R.T @ t

    def to_dict(self):
        return {"view": self.view.tolist(), "fx": self.fx, "fy": self.fy, "cx": self.cx,
                "cy": self.cy, "width": self.width, "height": self.height, "near": self.near}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["view"], dtype=np.float64), float(d["fx"]), float(d["fy"]),
                   float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]),
                   float(d.get("near", 0.01)))


def save_cameras(cams, path):
    with open(path, "w") as fh:
        json.dump({"cameras": [c.to_dict() for c in cams]}, fh, indent=1)


def load_cameras(path):
    """Read cameras from JSON: one camera object, a list, or ``{"cameras": [...]}``."""
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict) and "cameras" in data:
        data = data["cameras"]
    if isinstance(data, dict):
        data = [data]
    return [Camera.from_dict(d) for d in data]


class ProjectedSplat(NamedTuple):
    mu2d: np.ndarray
    cov2d: np.ndarray
    depth: float | np.ndarray
    colour: np.ndarray
    opacity: float | np.ndarray


def _project_arrays(x, cov3d, cam):
    R, t = cam.view[:3, :3], cam.view[:3, 3]
    p = x @ R.T + t
    px, py, pz = p[:, 0], p[:, 1], p[:, 2]
    visible = pz > cam.near
    z = np.where(visible, pz, 1.0)
    J = np.zeros((len(x), 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * px / z**2
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * py / z**2
    T = J @ R
    cov2d = T @ cov3d @ np.swapaxes(T, 1, 2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2))
    cov2d[:, 0, 0] += DILATION
    cov2d[:, 1, 1] += DILATION
    mu2d = np.stack([cam.fx * px / z + cam.cx, cam.fy * py / z + cam.cy], axis=1)
    return mu2d, cov2d, pz, visible


def view_directions(cloud, cam):
    d = np.asarray(cloud.x, dtype=np.float64) - cam.center
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    return d / np.where(norm > 0, norm, 1.0)


def view_colours(cloud, cam):
    """Unclamped SH colour of every splat, viewed from the camera centre."""
    return sh_colour(cloud.c, cloud.c_sh, view_directions(cloud, cam))


def project(splat, cam):
    """Project one splat; returns ``None`` when it lies behind the near plane."""
    act = activate(splat)
    cov = covariance3d(splat.s_raw, splat.r)
    mu2d, cov2d, depth, visible = _project_arrays(act.x[None], cov[None], cam)
    if not visible[0]:
        return None
    d = act.x - cam.center
    d = d / np.linalg.norm(d)
    colour = sh_colour(act.c, act.c_sh, d[None])[0]
    return ProjectedSplat(mu2d[0], cov2d[0], float(depth[0]), colour, float(act.opacity))


class BlendWeights(NamedTuple):
    matrix: sp.csr_matrix      # (pixels, splats) compositing weights alpha_i * T_i
    transmittance: np.ndarray  # (pixels,) light left after the last blended splat
    skipped: int               # splats dropped for a degenerate 2D covariance
    width: int
    height: int


def _blend_chunk(pix, mu, conic, opac):
    dx = pix[:, 0:1] - mu[None, :, 0]
    dy = pix[:, 1:2] - mu[None, :, 1]
    power = -0.5 * (conic[:, 0] * dx * dx + conic[:, 2] * dy * dy) - conic[:, 1] * dx * dy
    alpha = np.minimum(ALPHA_MAX, opac * np.exp(power))
    alpha[(power > 0) | (alpha < ALPHA_MIN)] = 0.0
    t_after = np.cumprod(1.0 - alpha, axis=1)
    keep = t_after >= T_MIN
    t_before = np.ones_like(t_after)
    t_before[:, 1:] = t_after[:, :-1]
    w = alpha * t_before * keep
    trans = np.min(np.where(keep, t_after, 1.0), axis=1)
    rows, cols = np.nonzero(w)
    return rows, cols, w[rows, cols], trans


def blend_weights(cloud, cam, threads=1):
    """Compositing weights of every splat at every pixel centre."""
    n = len(cloud)
    n_pix = cam.width * cam.height
    if n == 0:
        return BlendWeights(sp.csr_matrix((n_pix, 0)), np.ones(n_pix), 0, cam.width, cam.height)
    act = activate(cloud)
    cov3d = covariance3d(cloud.s_raw, cloud.r)
    mu2d, cov2d, depth, visible = _project_arrays(act.x, cov3d, cam)
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    singular = visible & ~(det >= DET_MIN)
    usable = visible & ~singular
    idx = np.flatnonzero(usable)
    idx = idx[np.argsort(depth[idx], kind="stable")]
    det_u = det[idx]
    conic = np.stack([cov2d[idx, 1, 1] / det_u, -cov2d[idx, 0, 1] / det_u,
                      cov2d[idx, 0, 0] / det_u], axis=1)
    mu, opac = mu2d[idx], act.opacity[idx]

    us, vs = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    pix = np.stack([us.ravel() + 0.5, vs.ravel() + 0.5], axis=1)
    step = max(1, (1 << 20) // max(len(idx), 1))
    starts = list(range(0, n_pix, step))
    parts = chunked_map(lambda s: _blend_chunk(pix[s:s + step], mu, conic, opac), starts, threads)

    rows = np.concatenate([p[0] + s for p, s in zip(parts, starts)])
    cols = np.concatenate([idx[p[1]] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    trans = np.concatenate([p[3] for p in parts])
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n_pix, n))
    return BlendWeights(matrix, trans, int(singular.sum()), cam.width, cam.height)


def composite(weights, colours, background=(0.0, 0.0, 0.0)):
    """Blend per-splat colours (clamped to [0, 1]) into an ``(H, W, 3)`` image."""
    colours = np.clip(np.asarray(colours, dtype=np.float64), 0.0, 1.0)
    img = weights.matrix @ colours if colours.size else np.zeros((len(weights.transmittance), 3))
    bg = np.asarray(background, dtype=np.float64)
    if np.any(bg):
        img = img + weights.transmittance[:, None] * bg
    return img.reshape(weights.height, weights.width, 3)


def render(cloud, cam, background=(0.0, 0.0, 0.0), threads=1, weights=None):
    if weights is None:
        weights = blend_weights(cloud, cam, threads)
    colours = view_colours(cloud, cam) if len(cloud) else np.zeros((0, 3))
    return composite(weights, colours, background)


def render_colour_backward(cloud, cam, upstream, threads=1, weights=None):
    """Gradient of ``sum(upstream * render(cloud))`` w.r.t. each splat's blended colour."""
    if weights is None:
        weights = blend_weights(cloud, cam, threads)
    g = np.asarray(upstream, dtype=np.float64).reshape(-1, 3)
    return np.asarray(weights.matrix.T @ g)


def save_png(image, path):
    from PIL import Image

    img8 = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img8).save(path)
