"""Real spherical harmonics up to degree 3 with the 3DGS sign conventions."""
import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
      -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


def sh_basis(dirs, degree=3):
    """Basis values ``(N, (degree+1)**2)`` for unit directions ``(N, 3)``."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out = [np.full_like(x, C0)]
    if degree >= 1:
        out += [-C1 * y, C1 * z, -C1 * x]
    if degree >= 2:
        xx, yy, zz, xy, yz, xz = x * x, y * y, z * z, x * y, y * z, x * z
        out += [C2[0] * xy, C2[1] * yz, C2[2] * (2 * zz - xx - yy), C2[3] * xz, C2[4] * (xx - yy)]
    if degree >= 3:
        out += [
            C3[0] * y * (3 * xx - yy),
            C3[1] * xy * z,
            C3[2] * y * (4 * zz - xx - yy),
            C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            C3[4] * x * (4 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3 * yy),
        ]
    return np.stack(out, axis=1)


def degree_of(rest_dim):
    """SH degree from the number of non-DC coefficients per channel."""
    return {0: 0, 3: 1, 8: 2, 15: 3}[rest_dim]


def sh_colour(c, c_sh, dirs, basis=None):
    """Unclamped view-dependent colour ``0.5 + sum_k Y_k(dir) coeff_k`` for N splats.

    ``c_sh`` is ``(N, 3 * n_rest)`` in channel-major order.
    """
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    c_sh = np.atleast_2d(np.asarray(c_sh, dtype=np.float64))
    n_rest = c_sh.shape[1] // 3
    if basis is None:
        basis = sh_basis(dirs, degree_of(n_rest))
    colour = 0.5 + C0 * c
    if n_rest:
        rest = c_sh.reshape(len(c_sh), 3, n_rest)
        colour = colour + np.einsum("nck,nk->nc", rest, basis[:, 1:])
    return colour


def eval_sh(c, c_sh, view_dir):
    """Colour of a single splat seen along ``view_dir`` (must be unit length)."""
    view_dir = np.asarray(view_dir, dtype=np.float64)
    if abs(np.linalg.norm(view_dir) - 1.0) > 1e-6:
        raise ValueError("view direction must have unit norm")
    return sh_colour(c, c_sh, view_dir[None])[0]
