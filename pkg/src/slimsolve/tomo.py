"""Synthetic tomography problems: phantoms, projectors, simulated data.

Parallel-beam geometry with one block per view: in 2D each block holds
every ray of one projection angle, in 3D every detector pixel of one
projection direction.  Matrix entries are exact ray/cell intersection
lengths from Siddon-style grid traversal, which keeps the adjoint test
clean and the axis-aligned projections exactly computable.

Conventions (documented, load-bearing for the tests):

* The image/volume occupies [-n/2, n/2]^d with unit cells; the
  detector is centered on the image with one bin per ray and spacing
  equal to the cell size by default.
* 2D view angle theta in degrees, within (-90, 90]; theta = 0 sends
  rays along +y, so each ray of the 0-degree view sweeps one pixel
  column.  Ray direction (-sin t, cos t), detector axis (cos t, sin t).
* Voxels are indexed [iy, ix] (2D) or [iz, iy, ix] (3D) and flattened
  in C order; projector columns use the same flattening.
* 3D detector basis: e1 = normalize(d x z) (or d x x for near-axial
  directions), e2 = d x e1; detector pixel (u, v) maps to ray index
  u * side + v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from slimsolve.linops import DenseBlockOperator, SparseBlockOperator

TOMO3D_MAX_N = 64

# Classical 2D head phantom, ten ellipses:
# (x0, y0, semi_a, semi_b, angle_deg, additive intensity)
SHEPP_LOGAN_2D = (
    (0.0, 0.0, 0.69, 0.92, 0.0, 2.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.02),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.02),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.01),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.01),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.01),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
    (0.0, -0.605, 0.023, 0.023, 0.0, 0.01),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.01),
)

# Contrast-enhanced ("modified") 3D variant, ten ellipsoids:
# (intensity, semi_a, semi_b, semi_c, x0, y0, z0, phi, theta, psi),
# Euler angles in degrees, z-x-z convention.
SHEPP_LOGAN_3D = (
    (1.0, 0.69, 0.92, 0.81, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.78, 0.0, -0.0184, 0.0, 0.0, 0.0, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.22, 0.0, 0.0, -18.0, 0.0, 10.0),
    (-0.2, 0.16, 0.41, 0.28, -0.22, 0.0, 0.0, 18.0, 0.0, 10.0),
    (0.1, 0.21, 0.25, 0.41, 0.0, 0.35, -0.15, 0.0, 0.0, 0.0),
    (0.1, 0.046, 0.046, 0.05, 0.0, 0.1, 0.25, 0.0, 0.0, 0.0),
    (0.1, 0.046, 0.046, 0.05, 0.0, -0.1, 0.25, 0.0, 0.0, 0.0),
    (0.1, 0.046, 0.023, 0.05, -0.08, -0.605, 0.0, 0.0, 0.0, 0.0),
    (0.1, 0.023, 0.023, 0.02, 0.0, -0.605, 0.0, 0.0, 0.0, 0.0),
    (0.1, 0.023, 0.046, 0.02, 0.06, -0.605, 0.0, 0.0, 0.0, 0.0),
)

ARRAY_MAGIC = b"SLIMA"


@dataclass(frozen=True)
class Phantom:
    """Non-negative intensity grid, 2D (n, n) or 3D (n, n, n)."""

    voxels: np.ndarray

    def __post_init__(self):
        v = self.voxels
        if v.ndim not in (2, 3):
            raise ValueError("phantom must be 2-D or 3-D")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("phantom intensities must be finite and >= 0")

    @property
    def flat(self) -> np.ndarray:
        return self.voxels.ravel()


def _euler_zxz(phi_deg: float, theta_deg: float, psi_deg: float) -> np.ndarray:
    cphi, sphi = np.cos(np.radians(phi_deg)), np.sin(np.radians(phi_deg))
    cth, sth = np.cos(np.radians(theta_deg)), np.sin(np.radians(theta_deg))
    cpsi, spsi = np.cos(np.radians(psi_deg)), np.sin(np.radians(psi_deg))
    return np.array(
        [
            [cpsi * cphi - cth * sphi * spsi, cpsi * sphi + cth * cphi * spsi, spsi * sth],
            [-spsi * cphi - cth * sphi * cpsi, -spsi * sphi + cth * cphi * cpsi, cpsi * sth],
            [sth * sphi, -sth * cphi, cth],
        ]
    )


def shepp_logan(n: int, dims: int = 2) -> Phantom:
    """Head phantom on an n^dims grid over [-1, 1]^dims.

    Cell-center membership rasterization of the ellipse/ellipsoid
    tables above; intensities add where shapes overlap.
    """
    if n < 8:
        raise ValueError("phantom grid must have n >= 8")
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    centers = -1.0 + (np.arange(n) + 0.5) * (2.0 / n)
    if dims == 2:
        yy, xx = np.meshgrid(centers, centers, indexing="ij")
        img = np.zeros((n, n))
        for x0, y0, sa, sb, ang, value in SHEPP_LOGAN_2D:
            c, s = np.cos(np.radians(ang)), np.sin(np.radians(ang))
            u = (xx - x0) * c + (yy - y0) * s
            v = -(xx - x0) * s + (yy - y0) * c
            img[(u / sa) ** 2 + (v / sb) ** 2 <= 1.0] += value
        img[np.abs(img) < 1e-15] = 0.0
        return Phantom(img)
    if n > TOMO3D_MAX_N:
        raise ValueError(f"3-D phantoms are desk-scale only (n <= {TOMO3D_MAX_N})")
    zz, yy, xx = np.meshgrid(centers, centers, centers, indexing="ij")
    vol = np.zeros((n, n, n))
    pts = np.stack([xx.ravel(), yy.ravel(), zz.ravel()])
    for value, sa, sb, sc, x0, y0, z0, phi, theta, psi in SHEPP_LOGAN_3D:
        rot = _euler_zxz(phi, theta, psi)
        local = rot @ (pts - np.array([[x0], [y0], [z0]]))
        inside = (
            (local[0] / sa) ** 2 + (local[1] / sb) ** 2 + (local[2] / sc) ** 2
            <= 1.0
        )
        vol.ravel()[inside] += value
    vol[np.abs(vol) < 1e-15] = 0.0
    return Phantom(vol)


@dataclass(frozen=True)
class ProjectionGeometry:
    """Parallel-beam acquisition description.

    ``rays_per_view`` is the ray count for 2D views and the per-axis
    detector side for 3D views (so a 3D block has rays_per_view**2
    rows).
    """

    mode: str  # "parallel_2d" or "parallel_3d"
    angles: np.ndarray | None = None  # degrees, 2D only
    directions: np.ndarray | None = None  # unit vectors, 3D only
    rays_per_view: int = 0
    detector_spacing: float = 1.0

    def __post_init__(self):
        if self.mode == "parallel_2d":
            if self.angles is None or len(self.angles) == 0:
                raise ValueError("2D geometry needs at least one angle")
            ang = np.asarray(self.angles, dtype=float)
            if np.any(ang <= -90.0) or np.any(ang > 90.0):
                raise ValueError("view angles must lie in (-90, 90] degrees")
            object.__setattr__(self, "angles", ang)
        elif self.mode == "parallel_3d":
            if self.directions is None or len(self.directions) == 0:
                raise ValueError("3D geometry needs at least one direction")
            dirs = np.asarray(self.directions, dtype=float)
            if dirs.ndim != 2 or dirs.shape[1] != 3:
                raise ValueError("directions must be (n_views, 3)")
            norms = np.linalg.norm(dirs, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-12):
                raise ValueError("directions must be unit vectors (1e-12)")
            object.__setattr__(self, "directions", dirs)
        else:
            raise ValueError(f"unknown geometry mode {self.mode!r}")
        if self.rays_per_view < 1:
            raise ValueError("rays_per_view must be >= 1")
        if self.detector_spacing <= 0:
            raise ValueError("detector_spacing must be > 0")

    @property
    def n_views(self) -> int:
        if self.mode == "parallel_2d":
            return len(self.angles)
        return len(self.directions)


def parallel_2d_geometry(
    angles_deg, rays_per_view: int, detector_spacing: float = 1.0
) -> ProjectionGeometry:
    return ProjectionGeometry(
        "parallel_2d",
        angles=np.asarray(angles_deg, dtype=float),
        rays_per_view=rays_per_view,
        detector_spacing=detector_spacing,
    )


def parallel_3d_geometry(
    directions, detector_side: int, detector_spacing: float = 1.0
) -> ProjectionGeometry:
    return ProjectionGeometry(
        "parallel_3d",
        directions=np.asarray(directions, dtype=float),
        rays_per_view=detector_side,
        detector_spacing=detector_spacing,
    )


def wedge_angles(n_views: int, half_angle: float = 60.0) -> np.ndarray:
    """Evenly spaced view angles covering the limited wedge [-h, +h]."""
    return np.linspace(-half_angle, half_angle, n_views)


def random_directions(n_views: int, seed: int = 0) -> np.ndarray:
    """Uniform unit vectors on the sphere (normalized Gaussians)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    raw = rng.standard_normal((n_views, 3))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _trace_ray(p0: np.ndarray, d: np.ndarray, n: int):
    """Exact cell crossings of one ray through the [-n/2, n/2]^dim grid.

    Returns (flat cell indices, intersection lengths); C-order
    flattening with x fastest, matching the phantom layout.
    """
    dim = p0.shape[0]
    lo, hi = -0.5 * n, 0.5 * n
    t_enter, t_exit = -np.inf, np.inf
    for a in range(dim):
        if d[a] != 0.0:
            t0 = (lo - p0[a]) / d[a]
            t1 = (hi - p0[a]) / d[a]
            t_enter = max(t_enter, min(t0, t1))
            t_exit = min(t_exit, max(t0, t1))
        elif not lo < p0[a] < hi:
            return np.empty(0, dtype=np.int64), np.empty(0)
    if not t_enter < t_exit:
        return np.empty(0, dtype=np.int64), np.empty(0)
    crossings = [np.array([t_enter, t_exit])]
    for a in range(dim):
        if d[a] != 0.0:
            t_planes = (lo + np.arange(n + 1) - p0[a]) / d[a]
            crossings.append(
                t_planes[(t_planes > t_enter) & (t_planes < t_exit)]
            )
    ts = np.unique(np.concatenate(crossings))
    lengths = np.diff(ts) * np.linalg.norm(d)
    keep = lengths > 1e-12
    mids = 0.5 * (ts[:-1] + ts[1:])[keep]
    lengths = lengths[keep]
    flat = np.zeros(mids.shape[0], dtype=np.int64)
    # x is the fastest axis: flat = (... * n + iy) * n + ix
    for a in range(dim - 1, -1, -1):
        idx = np.floor(p0[a] + mids * d[a] - lo).astype(np.int64)
        np.clip(idx, 0, n - 1, out=idx)
        flat = flat * n + idx
    return flat, lengths


def _view_block_2d(angle_deg: float, n: int, rays: int, spacing: float):
    theta = np.radians(angle_deg)
    d = np.array([-np.sin(theta), np.cos(theta)])
    axis = np.array([np.cos(theta), np.sin(theta)])
    rows, cols, vals = [], [], []
    for j in range(rays):
        offset = (j - (rays - 1) / 2.0) * spacing
        cells, lengths = _trace_ray(offset * axis, d, n)
        rows.append(np.full(cells.shape[0], j, dtype=np.int64))
        cols.append(cells)
        vals.append(lengths)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(rays, n * n),
    )


def _detector_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.array([0.0, 0.0, 1.0])
    e1 = np.cross(d, z)
    if np.linalg.norm(e1) < 1e-8:
        e1 = np.cross(d, np.array([1.0, 0.0, 0.0]))
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1)


def _view_block_3d(direction: np.ndarray, n: int, side: int, spacing: float):
    e1, e2 = _detector_basis(direction)
    rows, cols, vals = [], [], []
    for u in range(side):
        off_u = (u - (side - 1) / 2.0) * spacing
        for v in range(side):
            off_v = (v - (side - 1) / 2.0) * spacing
            cells, lengths = _trace_ray(
                off_u * e1 + off_v * e2, direction, n
            )
            rows.append(np.full(cells.shape[0], u * side + v, dtype=np.int64))
            cols.append(cells)
            vals.append(lengths)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(side * side, n**3),
    )


def build_projector(geom: ProjectionGeometry, n: int) -> SparseBlockOperator:
    """Sparse row-block raytracing operator, one block per view."""
    if geom.mode == "parallel_2d":
        blocks = [
            _view_block_2d(ang, n, geom.rays_per_view, geom.detector_spacing)
            for ang in geom.angles
        ]
    else:
        if n > TOMO3D_MAX_N:
            raise ValueError(
                f"3-D projectors are desk-scale only (n <= {TOMO3D_MAX_N})"
            )
        blocks = [
            _view_block_3d(d, n, geom.rays_per_view, geom.detector_spacing)
            for d in geom.directions
        ]
    return SparseBlockOperator(blocks)


def simulate_data(op, phantom: Phantom, noise_level: float, seed: int = 0) -> np.ndarray:
    """b = A x_true + noise, with ||noise|| / ||A x_true|| scaled exactly."""
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")
    clean = op.apply(phantom.flat)
    if noise_level == 0.0:
        return clean
    rng = np.random.Generator(np.random.Philox(key=seed))
    eps = rng.standard_normal(clean.shape[0])
    eps *= noise_level * np.linalg.norm(clean) / np.linalg.norm(eps)
    return clean + eps


def gaussian_testproblem(
    m: int, n: int, big_m: int, seed: int = 0, noise_level: float = 0.01
) -> tuple[DenseBlockOperator, np.ndarray, np.ndarray]:
    """Dense standard-normal test problem with x_true = all ones.

    Returns (operator-with-rhs, b, x_true); the noise norm is scaled so
    ||eps|| / ||A x_true|| equals ``noise_level`` exactly.
    """
    if m % big_m != 0:
        raise ValueError(f"m = {m} not divisible into M = {big_m} blocks")
    rng = np.random.Generator(np.random.Philox(key=seed))
    a = rng.standard_normal((m, n))
    x_true = np.ones(n)
    clean = a @ x_true
    if noise_level > 0:
        eps = rng.standard_normal(m)
        eps *= noise_level * np.linalg.norm(clean) / np.linalg.norm(eps)
        b = clean + eps
    else:
        b = clean
    return DenseBlockOperator(a, m // big_m, b), b, x_true


# -- flat exports ------------------------------------------------------------


def save_array(path, arr: np.ndarray):
    """Binary export: magic, ndim, dims (u64 LE), then f64 LE data."""
    arr = np.asarray(arr, dtype=float)
    with open(path, "wb") as fh:
        fh.write(ARRAY_MAGIC)
        fh.write(np.asarray([arr.ndim, *arr.shape], dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(len(ARRAY_MAGIC))
        if magic != ARRAY_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        ndim = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        shape = tuple(np.frombuffer(fh.read(8 * ndim), dtype="<u8").astype(int))
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(shape).copy()


def save_csv(path, arr: np.ndarray):
    np.savetxt(path, np.atleast_2d(arr), delimiter=",", fmt="%.17g")
