"""Dataset synthesis and loading: procedural faces rendered to corrupted depth
views paired with voxelized ground-truth grids.

Synthesis is two-pass: all meshes are generated first so the shared depth
normalization range (global camera-z min/max of the run) is known, then every
sample renders and voxelizes against that range. The manifest is written last;
its presence marks the directory complete. All draws are keyed substreams of
(base seed + sample index), so identical configs produce identical bytes.
"""

from __future__ import annotations

import glob
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .formats import (
    SampleRecord, read_depth, read_grid, read_manifest, write_depth,
    write_grid, write_manifest, GRID_KIND_BITS,
)
from .geometry import add_noise, project, punch_holes, render_depth, synth_face, voxelize
from .training import TrainSample, substream

__all__ = ["SynthConfig", "SampleSpec", "draw_sample_spec", "synthesize_dataset",
           "load_dataset", "load_pairs"]

_DRAW_TAG = 11
_NOISE_TAG = 13
_HOLE_TAG = 17


@dataclass
class SynthConfig:
    count: int = 200
    seed: int = 0
    view_size: int = 32
    grid_size: int = 32
    identity_dim: int = 6
    identity_scale: float = 0.5
    yaw_range: float = 90.0
    pitch_range: float = 20.0
    roll_range: float = 20.0
    sigma_noise: float = 0.02
    hole_count: int = 0
    hole_radius: int = 3

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be positive")
        if self.identity_dim < 4:
            raise ValueError("identity_dim must be at least 4")
        if not 0 < self.yaw_range <= 90:
            raise ValueError("yaw_range must lie in (0, 90]")


@dataclass
class SampleSpec:
    seed: int
    identity: np.ndarray
    expression: float
    pose: tuple


def draw_sample_spec(cfg, index):
    """Pose/identity/expression draw for sample `index`; seed is base + index."""
    seed = cfg.seed + index
    rng = substream(seed, _DRAW_TAG)
    identity = rng.normal(0.0, cfg.identity_scale, cfg.identity_dim)
    expression = float(rng.uniform(0.0, 1.0))
    pose = (float(rng.uniform(-cfg.yaw_range, cfg.yaw_range)),
            float(rng.uniform(-cfg.pitch_range, cfg.pitch_range)),
            float(rng.uniform(-cfg.roll_range, cfg.roll_range)))
    return SampleSpec(seed=seed, identity=identity, expression=expression, pose=pose)


def synthesize_dataset(out_dir, cfg, force=False):
    """Generate `cfg.count` (depth, grid) pairs plus the manifest; returns its path.

    Refuses to touch a directory with sample files but no manifest (a partial
    prior run) unless force is set.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    leftovers = (glob.glob(os.path.join(out_dir, "depth_*.dpth"))
                 + glob.glob(os.path.join(out_dir, "grid_*.voxg")))
    if leftovers and not os.path.exists(manifest_path) and not force:
        raise DataError(
            f"{out_dir}: sample files without a manifest (partial run?); "
            "use force to overwrite")

    specs = [draw_sample_spec(cfg, i) for i in range(cfg.count)]
    built = [synth_face(s.seed, s.identity, s.expression, s.pose,
                        view_size=cfg.view_size) for s in specs]

    zmin, zmax = np.inf, -np.inf
    for mesh, params in built:
        z = project(mesh, params)[:, 2]
        zmin = min(zmin, float(z.min()))
        zmax = max(zmax, float(z.max()))
    z_range = (zmin, zmax)

    records = []
    for i, (spec, (mesh, params)) in enumerate(zip(specs, built)):
        view = render_depth(mesh, params, cfg.view_size, z_range=z_range)
        view = add_noise(view, cfg.sigma_noise, seed=substream(spec.seed, _NOISE_TAG))
        if cfg.hole_count > 0:
            view = punch_holes(view, cfg.hole_count, cfg.hole_radius,
                               seed=substream(spec.seed, _HOLE_TAG))
        grid = voxelize(mesh, params, cfg.grid_size, z_range=z_range,
                        view_size=cfg.view_size)
        depth_name = f"depth_{i:06d}.dpth"
        grid_name = f"grid_{i:06d}.voxg"
        write_depth(os.path.join(out_dir, depth_name), view)
        write_grid(os.path.join(out_dir, grid_name), grid, kind=GRID_KIND_BITS)
        records.append(SampleRecord(
            depth_path=depth_name, grid_path=grid_name, seed=spec.seed,
            yaw=spec.pose[0], pitch=spec.pose[1], roll=spec.pose[2],
            expression=spec.expression))

    header = {
        "zmin": f"{zmin:.17g}", "zmax": f"{zmax:.17g}",
        "view": str(cfg.view_size), "grid": str(cfg.grid_size),
        "count": str(cfg.count),
    }
    write_manifest(manifest_path, records, header=header)
    return manifest_path


def load_pairs(manifest_path):
    """-> (records, header, [TrainSample]) with files resolved next to the manifest."""
    records, header = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    missing = []
    for r in records:
        dp = os.path.join(base, r.depth_path)
        gp = os.path.join(base, r.grid_path)
        if not os.path.exists(dp):
            missing.append(dp)
            continue
        if not os.path.exists(gp):
            missing.append(gp)
            continue
        samples.append(TrainSample(
            depth=read_depth(dp).values.astype(np.float32),
            grid=read_grid(gp).values.astype(np.float32)))
    if missing:
        raise DataError("missing sample files:\n" + "\n".join(missing))
    return records, header, samples


def load_dataset(manifest_path):
    return load_pairs(manifest_path)[2]
