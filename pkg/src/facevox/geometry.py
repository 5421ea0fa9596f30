"""Synthetic face geometry: procedural meshes, weak-perspective projection,
Z-buffer depth rendering, surface voxelization, and depth-view corruption.

Coordinate conventions (fixed here, shared by the whole pipeline):
  - Projected (u, v) are pixel units; v indexes rows, u columns. Pixel (ix, iy)
    has its center at (ix + 0.5, iy + 0.5).
  - The camera looks down -z, so a larger camera-space z is nearer. Foreground
    depth values are normalized affinely into (0, 1] with the nearest surface
    mapping to 1; background pixels hold the sentinel 0.
  - The voxel cube's (x, y) axes coincide with depth-view pixel coordinates and
    its z axis is the normalized depth range; grids are stored [z][y][x] with x
    fastest in memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError

__all__ = [
    "TriMesh", "ProjectionParams", "DepthView", "VoxelGrid",
    "rotation_from_euler", "synth_face", "project", "render_depth",
    "voxelize", "add_noise", "punch_holes", "depth_from_grid",
    "depth_mapping", "Z_PAD_FRACTION",
]

# Fraction of the raw z-range appended behind the farthest surface. Keeps the
# farthest foreground depth strictly positive (0 is the background code) and
# leaves depth headroom so one pixel's worth of surface slope stays within a
# couple of voxel layers, which is what makes the rendered view and the
# voxelized grid describe the same surface at matching resolution.
Z_PAD_FRACTION = 0.5

# Foreground depth values never drop below this after corruption.
MIN_FOREGROUND = 1e-6


@dataclass
class TriMesh:
    """Open triangle shell: vertex positions plus index triples."""

    vertices: np.ndarray   # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)

    @property
    def is_empty(self):
        return len(self.triangles) == 0

    def validate(self, area_tol=1e-12):
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index exceeds vertex count")
        if len(self.triangles) and self.triangles.min() < 0:
            raise ValueError("negative triangle index")
        if len(self.triangles):
            v = self.vertices
            t = self.triangles
            cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
            area = 0.5 * np.linalg.norm(cross, axis=1)
            if (area <= area_tol).any():
                raise ValueError("degenerate triangle present")


@dataclass
class ProjectionParams:
    """Weak-perspective camera: uniform scale, rotation, 2D pixel translation."""

    f: float
    rotation: np.ndarray  # (3, 3)
    t2d: np.ndarray       # (2,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.t2d = np.asarray(self.t2d, dtype=np.float64).reshape(2)
        if not self.f > 0:
            raise ValueError(f"scale factor must be positive, got {self.f}")
        r = self.rotation
        if np.abs(r.T @ r - np.eye(3)).max() >= 1e-9:
            raise ValueError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) >= 1e-9:
            raise ValueError("rotation matrix determinant is not 1")


@dataclass
class DepthView:
    """Single-channel raster of normalized depths; 0 marks background."""

    values: np.ndarray  # (H, W)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ShapeMismatchError(f"depth view must be 2-d, got {self.values.shape}")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def foreground(self):
        return self.values > 0


@dataclass
class VoxelGrid:
    """Cubic occupancy lattice stored [z][y][x]; binary for ground truth,
    probabilities in [0, 1] for predictions."""

    values: np.ndarray  # (n, n, n)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        s = self.values.shape
        if len(s) != 3 or s[0] != s[1] or s[1] != s[2]:
            raise ShapeMismatchError(f"voxel grid must be cubic, got {s}")

    @property
    def n(self):
        return self.values.shape[0]

    def is_binary(self):
        v = self.values
        return bool(np.all((v == 0) | (v == 1)))


# ---------------------------------------------------------------------------
# rotations and projection

def rotation_from_euler(yaw_deg, pitch_deg, roll_deg):
    """Compose pose angles: yaw about the vertical axis first, then pitch, then roll.

    Yaw follows the convention where +90 degrees maps +x onto -z.
    """
    y, p, r = (math.radians(a) for a in (yaw_deg, pitch_deg, roll_deg))
    cy, sy = math.cos(y), math.sin(y)
    cp, sp = math.cos(p), math.sin(p)
    cr, sr = math.cos(r), math.sin(r)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return rz @ rx @ ry


def project(mesh, params):
    """Per-vertex (u, v, z_cam): (u,v) = f*P_r*R*V + T2d, z_cam = third row of f*R*V."""
    rotated = params.f * (mesh.vertices @ params.rotation.T)
    uv = rotated[:, :2] + params.t2d
    return np.column_stack([uv, rotated[:, 2]])


# ---------------------------------------------------------------------------
# procedural face generator

_GRID_RES = 33  # odd, with power-of-two intervals, so the parameter grid is exactly symmetric


def synth_face(seed, identity, expression, pose_deg, view_size=128):
    """Deterministic face-like height field plus a camera that frames it.

    identity: >= 4 shape coefficients (roughly unit scale; passed through tanh).
    expression: mouth-open amount in [0, 1].
    pose_deg: (yaw, pitch, roll) in degrees; yaw limited to [-90, 90].

    The surface is an elliptical dome with a nose ridge, two eye sockets, an
    expression-controlled mouth depression and seed-dependent symmetric detail
    ripples, looking toward +z. The returned camera fills ~80% of the view.
    """
    identity = np.asarray(identity, dtype=np.float64).reshape(-1)
    if identity.size < 4:
        raise ValueError(f"need at least 4 identity coefficients, got {identity.size}")
    if not 0.0 <= expression <= 1.0:
        raise ValueError(f"expression must lie in [0,1], got {expression}")
    yaw, pitch, roll = (float(a) for a in pose_deg)
    for name, a in (("yaw", yaw), ("pitch", pitch), ("roll", roll)):
        if not -90.0 <= a <= 90.0:
            raise ValueError(f"{name} angle {a} outside [-90, 90]")
    if view_size < 8:
        raise ValueError("view_size must be at least 8")

    c = np.tanh(identity)
    rx = 0.78 * (1.0 + 0.12 * c[0])
    ry = 0.88 * (1.0 + 0.08 * c[1])
    # deep dome: the head must stay a rounded 3D blob so profile views still
    # present camera-facing surface instead of an all-grazing sliver
    dome_h = 1.35 * (1.0 + 0.20 * c[2])
    nose_h = 0.22 * (1.0 + 0.40 * c[3])
    eye_d = 0.07 * (1.0 + 0.35 * c[4]) if identity.size > 4 else 0.07
    mouth_d = 0.10 * (1.0 + 0.30 * c[5]) if identity.size > 5 else 0.10

    ax = np.linspace(-1.0, 1.0, _GRID_RES)
    gx, gy = np.meshgrid(ax, ax, indexing="xy")  # gy grows downward like rows

    r2 = (gx / rx) ** 2 + (gy / ry) ** 2
    inside = r2 <= 1.0
    z = dome_h * np.sqrt(np.clip(1.0 - r2, 0.0, None))
    z += nose_h * np.exp(-(gx ** 2 / 0.015 + (gy - 0.05) ** 2 / 0.045))
    z -= eye_d * (np.exp(-(((gx - 0.33) ** 2 + (gy + 0.30) ** 2) / 0.012))
                  + np.exp(-(((gx + 0.33) ** 2 + (gy + 0.30) ** 2) / 0.012)))
    z -= mouth_d * expression * np.exp(-(gx ** 2 / 0.05 + (gy - 0.45) ** 2 / 0.008))

    # seed-specific detail; cos(k*pi*gx) keeps every term even in gx, so the
    # mesh stays bilaterally symmetric for any seed
    rng = np.random.default_rng(seed)
    for _ in range(3):
        amp = rng.uniform(0.002, 0.007)
        kx = rng.integers(1, 4)
        ky = rng.integers(1, 4)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        z += amp * np.cos(kx * math.pi * gx) * np.cos(ky * math.pi * gy + phase)

    index = np.full((_GRID_RES, _GRID_RES), -1, dtype=np.int64)
    verts = []
    for iy in range(_GRID_RES):
        for ix in range(_GRID_RES):
            if inside[iy, ix]:
                index[iy, ix] = len(verts)
                verts.append((gx[iy, ix], gy[iy, ix], z[iy, ix]))
    tris = []
    for iy in range(_GRID_RES - 1):
        for ix in range(_GRID_RES - 1):
            a = index[iy, ix]
            b = index[iy, ix + 1]
            cc = index[iy + 1, ix + 1]
            d = index[iy + 1, ix]
            if a >= 0 and b >= 0 and cc >= 0:
                tris.append((a, b, cc))
            if a >= 0 and cc >= 0 and d >= 0:
                tris.append((a, cc, d))
    mesh = TriMesh(np.array(verts), np.array(tris, dtype=np.int64))
    mesh.validate()

    rot = rotation_from_euler(yaw, pitch, roll)
    rotated = mesh.vertices @ rot.T
    lo = rotated[:, :2].min(axis=0)
    hi = rotated[:, :2].max(axis=0)
    extent = float((hi - lo).max())
    f = 0.80 * view_size / extent
    center = 0.5 * (hi + lo)
    t2d = 0.5 * view_size - f * center
    return mesh, ProjectionParams(f=f, rotation=rot, t2d=t2d)


# ---------------------------------------------------------------------------
# depth normalization shared by rendering and voxelization

def depth_mapping(zmin, zmax):
    """(zfar, znear) of the affine map sending camera z to normalized depth.

    znear maps to 1; zmin maps to a small positive value thanks to the pad, so
    foreground never collides with the background sentinel. A degenerate range
    maps everything to exactly 1.
    """
    spread = zmax - zmin
    if spread < 1e-12:
        return zmin - 1.0, zmax
    return zmin - Z_PAD_FRACTION * spread, zmax


def _normalize_depth(z, zfar, znear):
    return (z - zfar) / (znear - zfar)


# ---------------------------------------------------------------------------
# rasterizer

def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _tie_included(ax, ay, bx, by):
    # ties land on the edge that goes up, or horizontally to the right; the
    # complementary triangle of a shared edge sees the opposite direction, so
    # every boundary pixel is claimed exactly once
    dy = by - ay
    return dy < 0 or (dy == 0 and bx - ax > 0)


def render_depth(mesh, params, size, z_range=None):
    """Z-buffer rasterization of the projected mesh into a size x size view.

    Half-plane coverage with a top-left fill rule on ties; the largest camera z
    wins per pixel; z interpolates barycentrically; foreground depths normalize
    affinely over z_range (default: this mesh's own z extent) with nearest -> 1.
    """
    if size < 8:
        raise ValueError("view size must be at least 8")
    zbuf = np.full((size, size), -np.inf)
    if mesh.is_empty:
        return DepthView(np.zeros((size, size)))

    uvz = project(mesh, params)
    if z_range is None:
        zmin, zmax = float(uvz[:, 2].min()), float(uvz[:, 2].max())
    else:
        zmin, zmax = z_range
    zfar, znear = depth_mapping(zmin, zmax)

    xs, ys, zs = uvz[:, 0], uvz[:, 1], uvz[:, 2]
    for t in mesh.triangles:
        x0, x1, x2 = xs[t[0]], xs[t[1]], xs[t[2]]
        y0, y1, y2 = ys[t[0]], ys[t[1]], ys[t[2]]
        z0, z1, z2 = zs[t[0]], zs[t[1]], zs[t[2]]
        area = _edge(x0, y0, x1, y1, x2, y2)
        if area == 0.0:
            continue
        if area < 0.0:
            x1, x2, y1, y2, z1, z2 = x2, x1, y2, y1, z2, z1
            area = -area

        ix0 = max(0, math.ceil(min(x0, x1, x2) - 0.5))
        ix1 = min(size - 1, math.floor(max(x0, x1, x2) - 0.5))
        iy0 = max(0, math.ceil(min(y0, y1, y2) - 0.5))
        iy1 = min(size - 1, math.floor(max(y0, y1, y2) - 0.5))
        if ix0 > ix1 or iy0 > iy1:
            continue
        px = np.arange(ix0, ix1 + 1) + 0.5
        py = (np.arange(iy0, iy1 + 1) + 0.5)[:, None]

        w0 = _edge(x1, y1, x2, y2, px, py)
        w1 = _edge(x2, y2, x0, y0, px, py)
        w2 = _edge(x0, y0, x1, y1, px, py)
        inc0 = (w0 > 0) | ((w0 == 0) & _tie_included(x1, y1, x2, y2))
        inc1 = (w1 > 0) | ((w1 == 0) & _tie_included(x2, y2, x0, y0))
        inc2 = (w2 > 0) | ((w2 == 0) & _tie_included(x0, y0, x1, y1))
        mask = inc0 & inc1 & inc2
        if not mask.any():
            continue
        z = (w0 * z0 + w1 * z1 + w2 * z2) / area
        tile = zbuf[iy0:iy1 + 1, ix0:ix1 + 1]
        np.copyto(tile, z, where=mask & (z > tile))

    covered = zbuf > -np.inf
    out = np.zeros((size, size))
    if covered.any():
        d = _normalize_depth(zbuf[covered], zfar, znear)
        out[covered] = np.clip(d, MIN_FOREGROUND, 1.0)
    return DepthView(out)


# ---------------------------------------------------------------------------
# voxelization

def _tri_box_overlaps(tri, centers):
    """Separating-axis triangle vs. unit-cube test, vectorized over box centers.

    Touching counts as overlap, which keeps the resolution-refinement property
    exact. Degenerate axes project everything to 0 and report no separation.
    """
    e0 = tri[1] - tri[0]
    e1 = tri[2] - tri[1]
    e2 = tri[0] - tri[2]
    axes = [
        (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0),
        (0.0, -e0[2], e0[1]), (e0[2], 0.0, -e0[0]), (-e0[1], e0[0], 0.0),
        (0.0, -e1[2], e1[1]), (e1[2], 0.0, -e1[0]), (-e1[1], e1[0], 0.0),
        (0.0, -e2[2], e2[1]), (e2[2], 0.0, -e2[0]), (-e2[1], e2[0], 0.0),
        tuple(np.cross(e0, e1)),
    ]
    alive = np.ones(len(centers), dtype=bool)
    for axis in axes:
        a = np.asarray(axis, dtype=np.float64)
        r = 0.5 * np.abs(a).sum()
        p = tri @ a
        c = centers @ a
        alive &= ~((p.min() > c + r) | (p.max() < c - r))
        if not alive.any():
            break
    return alive


def voxelize(mesh, params, n, z_range=None, view_size=None):
    """Mark every voxel whose box intersects a projected triangle.

    The cube spans the depth view: x,y in pixel coordinates (scaled when the
    grid resolution differs from the view size), z the normalized depth range.
    """
    if n < 8:
        raise ValueError("grid resolution must be at least 8")
    view = n if view_size is None else view_size
    grid = np.zeros((n, n, n), dtype=np.float32)
    if mesh.is_empty:
        return VoxelGrid(grid)

    uvz = project(mesh, params)
    if z_range is None:
        zmin, zmax = float(uvz[:, 2].min()), float(uvz[:, 2].max())
    else:
        zmin, zmax = z_range
    zfar, znear = depth_mapping(zmin, zmax)

    scale = n / view
    pts = np.column_stack([
        uvz[:, 0] * scale,
        uvz[:, 1] * scale,
        _normalize_depth(uvz[:, 2], zfar, znear) * n,
    ])

    for t in mesh.triangles:
        tri = pts[t]
        lo = np.maximum(np.floor(tri.min(axis=0)).astype(int) - 1, 0)
        hi = np.minimum(np.floor(tri.max(axis=0)).astype(int) + 1, n - 1)
        if (lo > hi).any():
            continue
        ii, jj, kk = np.meshgrid(
            np.arange(lo[0], hi[0] + 1),
            np.arange(lo[1], hi[1] + 1),
            np.arange(lo[2], hi[2] + 1),
            indexing="ij",
        )
        idx = np.column_stack([ii.ravel(), jj.ravel(), kk.ravel()])
        centers = idx + 0.5
        hit = _tri_box_overlaps(tri, centers)
        sel = idx[hit]
        grid[sel[:, 2], sel[:, 1], sel[:, 0]] = 1.0
    return VoxelGrid(grid)


# ---------------------------------------------------------------------------
# corruption and round-trip helpers

def add_noise(depth, sigma, seed):
    """Gaussian perturbation of foreground pixels, clamped into (0, 1].

    Background pixels are untouched; a full-field draw keeps the output a pure
    function of (input, seed) regardless of the foreground pattern.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    values = depth.values.copy()
    if sigma == 0:
        return DepthView(values)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=values.shape)
    fg = values > 0
    values[fg] = np.clip(values[fg] + noise[fg], MIN_FOREGROUND, 1.0)
    return DepthView(values)


def punch_holes(depth, count, radius_px, seed):
    """Zero out `count` disk regions of the foreground, deterministically in seed.

    Centers are drawn over foreground pixels and clamped one radius away from
    the border, so each hole is a complete discrete disk.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    values = depth.values.copy()
    if count == 0:
        return DepthView(values)
    fg = np.argwhere(values > 0)
    if len(fg) == 0:
        return DepthView(values)
    rng = np.random.default_rng(seed)
    h, w = values.shape
    r = int(radius_px)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    disk = dy * dy + dx * dx <= r * r
    offs_y, offs_x = dy[disk], dx[disk]
    for _ in range(count):
        cy, cx = fg[rng.integers(0, len(fg))]
        cy = int(np.clip(cy, r, h - 1 - r))
        cx = int(np.clip(cx, r, w - 1 - r))
        values[cy + offs_y, cx + offs_x] = 0.0
    return DepthView(values)


def depth_from_grid(grid, threshold):
    """Collapse a grid to a depth view: per column, the nearest occupied voxel's
    normalized layer center; empty columns map to background."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0,1)")
    occ = grid.values > threshold
    n = grid.n
    has = occ.any(axis=0)
    # nearest surface = largest z index (depth grows toward the camera)
    nearest = n - 1 - np.argmax(occ[::-1], axis=0)
    out = np.zeros((n, n))
    out[has] = (nearest[has] + 0.5) / n
    return DepthView(out)
