"""Gaussian splat containers, activations, covariance and PLY I/O.

Splat parameters are kept exactly as the 3DGS ecosystem stores them on disk
(pre-activation): opacity is a logit, scales are log-scales and the rotation
is an unnormalised ``(w, x, y, z)`` quaternion.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

SH_REST_DIMS = {0: 0, 1: 9, 2: 24, 3: 45}

_PLY_TYPES = {"float": "<f4", "float32": "<f4"}


class PlyError(ValueError):
    """Raised for malformed or unsupported PLY input."""


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class GaussianSplat:
    x: np.ndarray
    o_raw: float
    s_raw: np.ndarray
    r: np.ndarray
    c: np.ndarray
    c_sh: np.ndarray


class Activated(NamedTuple):
    x: np.ndarray
    opacity: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    c: np.ndarray
    c_sh: np.ndarray


@dataclass(eq=False)
class SplatCloud:
    """Struct-of-arrays container for N splats.

    ``c_sh`` rows follow the PLY ``f_rest_*`` order, i.e. channel-major:
    the 15 degree 1..3 coefficients of red, then green, then blue.
    """

    x: np.ndarray
    o_raw: np.ndarray
    s_raw: np.ndarray
    r: np.ndarray
    c: np.ndarray
    c_sh: np.ndarray
    sh_degree: int = 3

    def __post_init__(self):
        n = len(self.x)
        rest = SH_REST_DIMS.get(self.sh_degree)
        if rest is None:
            raise ValueError(f"sh_degree must be in 0..3, got {self.sh_degree}")
        self.x = np.asarray(self.x).reshape(n, 3)
        self.o_raw = np.asarray(self.o_raw).reshape(n)
        self.s_raw = np.asarray(self.s_raw).reshape(n, 3)
        self.r = np.asarray(self.r).reshape(n, 4)
        self.c = np.asarray(self.c).reshape(n, 3)
        self.c_sh = np.asarray(self.c_sh).reshape(n, rest)

    def __len__(self):
        return len(self.x)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return GaussianSplat(self.x[i], float(self.o_raw[i]), self.s_raw[i],
                                 self.r[i], self.c[i], self.c_sh[i])
        return SplatCloud(self.x[i], self.o_raw[i], self.s_raw[i], self.r[i],
                          self.c[i], self.c_sh[i], self.sh_degree)

    def __eq__(self, other):
        if not isinstance(other, SplatCloud) or self.sh_degree != other.sh_degree:
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays(), other.arrays())
        )

    def arrays(self):
        return (self.x, self.o_raw, self.s_raw, self.r, self.c, self.c_sh)

    def astype(self, dtype):
        return SplatCloud(*(a.astype(dtype) for a in self.arrays()), sh_degree=self.sh_degree)

    def copy(self):
        return SplatCloud(*(a.copy() for a in self.arrays()), sh_degree=self.sh_degree)

    @classmethod
    def empty(cls, sh_degree=3, dtype=np.float32):
        z = lambda d: np.zeros((0, d), dtype=dtype)
        return cls(z(3), np.zeros(0, dtype), z(3), z(4), z(3), z(SH_REST_DIMS[sh_degree]), sh_degree)


def normalize_quaternion(r):
    r = np.asarray(r, dtype=np.float64)
    norm = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("zero quaternion cannot be normalised")
    return r / norm


def _unit_quaternion(r):
    # all-zero quaternions (e.g. a zero-filled PLY row) are read as the identity
    r = np.array(r, dtype=np.float64)
    zero = ~np.any(r, axis=-1)
    r[zero] = (1.0, 0.0, 0.0, 0.0)
    return normalize_quaternion(r)


def quaternion_to_matrix(q):
    """Rotation matrices for ``(w, x, y, z)`` quaternions, shape ``(..., 3, 3)``.

    An all-zero quaternion yields the identity.
    """
    q = _unit_quaternion(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance3d(s_raw, r):
    """World-space covariance ``R S S^T R^T``; batched over leading axes."""
    M = quaternion_to_matrix(r) * np.exp(np.asarray(s_raw, dtype=np.float64))[..., None, :]
    cov = M @ np.swapaxes(M, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def activate(splat):
    """Activated attributes of a :class:`GaussianSplat` or a whole :class:`SplatCloud`."""
    return Activated(
        np.asarray(splat.x, dtype=np.float64),
        sigmoid(splat.o_raw),
        np.exp(np.asarray(splat.s_raw, dtype=np.float64)),
        _unit_quaternion(splat.r),
        np.asarray(splat.c, dtype=np.float64),
        np.asarray(splat.c_sh, dtype=np.float64),
    )


# --- PLY -------------------------------------------------------------------

def ply_property_names(sh_degree=3):
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(SH_REST_DIMS[sh_degree])]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def ply_header(n, sh_degree=3):
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    lines += [f"property float {name}" for name in ply_property_names(sh_degree)]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def save_ply(cloud, path):
    names = ply_property_names(cloud.sh_degree)
    rows = np.zeros(len(cloud), dtype=[(name, "<f4") for name in names])
    n_rest = SH_REST_DIMS[cloud.sh_degree]
    columns = {"opacity": cloud.o_raw}
    for i, axis in enumerate("xyz"):
        columns[axis] = cloud.x[:, i]
    for i in range(3):
        columns[f"f_dc_{i}"] = cloud.c[:, i]
        columns[f"scale_{i}"] = cloud.s_raw[:, i]
    for i in range(4):
        columns[f"rot_{i}"] = cloud.r[:, i]
    for i in range(n_rest):
        columns[f"f_rest_{i}"] = cloud.c_sh[:, i]
    for name, values in columns.items():
        rows[name] = values
    with open(path, "wb") as fh:
        fh.write(ply_header(len(cloud), cloud.sh_degree))
        fh.write(rows.tobytes())


def _read_header(fh):
    first = fh.readline()
    if first.rstrip(b"\r\n") != b"ply":
        raise PlyError("not a PLY file (missing 'ply' magic)")
    count = None
    props = []
    fmt = None
    while True:
        raw = fh.readline()
        if not raw:
            raise PlyError("header ended before 'end_header'")
        tokens = raw.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "end_header":
            break
        if key == "format":
            fmt = tokens[1] if len(tokens) > 1 else ""
            if fmt != "binary_little_endian":
                raise PlyError(f"unsupported PLY format {fmt!r}; only binary_little_endian is read")
        elif key == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise PlyError(f"malformed element line: {raw!r}")
            if tokens[1] != "vertex" or count is not None:
                raise PlyError(f"unsupported element {tokens[1]!r}")
            count = int(tokens[2])
        elif key == "property":
            if count is None:
                raise PlyError("property declared before the vertex element")
            if len(tokens) != 3:
                raise PlyError(f"malformed or list property: {raw!r}")
            ptype, name = tokens[1], tokens[2]
            if ptype not in _PLY_TYPES:
                raise PlyError(f"property {name!r} has type {ptype!r}; only 32-bit float is supported")
            props.append(name)
        else:
            raise PlyError(f"unexpected header line: {raw!r}")
    if fmt is None:
        raise PlyError("missing format line")
    if count is None:
        raise PlyError("missing vertex element")
    if len(set(props)) != len(props):
        raise PlyError("duplicate property names")
    return count, props


def load_ply(path):
    with open(path, "rb") as fh:
        count, props = _read_header(fh)
        payload = fh.read()

    n_rest = sum(1 for p in props if p.startswith("f_rest_"))
    degrees = {v: k for k, v in SH_REST_DIMS.items()}
    if n_rest not in degrees:
        raise PlyError(f"found {n_rest} f_rest_* properties; expected one of 0, 9, 24, 45")
    sh_degree = degrees[n_rest]
    for name in ply_property_names(sh_degree):
        if name not in props and name not in ("nx", "ny", "nz"):
            raise PlyError(f"missing property {name!r}")

    dtype = np.dtype([(p, "<f4") for p in props])
    expected = count * dtype.itemsize
    if len(payload) < expected:
        short_row = len(payload) // dtype.itemsize
        offset = len(payload) - short_row * dtype.itemsize
        name = props[min(offset // 4, len(props) - 1)]
        raise PlyError(f"truncated payload: {len(payload)} of {expected} bytes "
                       f"(vertex {short_row}, property {name!r})")
    rows = np.frombuffer(payload[:expected], dtype=dtype, count=count)

    def cols(names):
        if not names:
            return np.zeros((count, 0), np.float32)
        return np.stack([rows[n] for n in names], axis=1).astype(np.float32)

    return SplatCloud(
        x=cols(["x", "y", "z"]),
        o_raw=rows["opacity"].astype(np.float32),
        s_raw=cols(["scale_0", "scale_1", "scale_2"]),
        r=cols([f"rot_{i}" for i in range(4)]),
        c=cols(["f_dc_0", "f_dc_1", "f_dc_2"]),
        c_sh=cols([f"f_rest_{i}" for i in range(n_rest)]),
        sh_degree=sh_degree,
    )


def raw_parameter_count(sh_degree=3):
    return 3 + 1 + 3 + 4 + 3 + SH_REST_DIMS[sh_degree]
