"""Procedural toy rooms: floor, four walls, and a few hollow boxes.

Surfaces mimic splat reconstructions: one Gaussian per surface voxel, offset
toward the actual surface plane (sampled per structure), flattened along the
face normal, with per-structure colors drawn around a palette. The per-voxel
noise is small, so attributes are predictable from local content; the
per-structure parameters vary continuously, which keeps quantizer codes
spread across the corpus. Deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import GaussianPrimitive, GaussianScene, standardize_quaternion

DEFAULT_PALETTE = (
    (0.82, 0.78, 0.72), (0.45, 0.52, 0.60), (0.70, 0.35, 0.30), (0.35, 0.60, 0.40),
    (0.85, 0.70, 0.30), (0.40, 0.35, 0.65), (0.25, 0.55, 0.60), (0.75, 0.50, 0.65),
)

# face normals: +x, -x, +y, -y, +z, -z
_NORMALS = np.array([(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)])


@dataclass(frozen=True)
class SynthParams:
    voxel_size: float = 0.025
    room_cells_range: tuple[int, int] = (32, 44)  # footprint side, voxels
    room_height_range: tuple[int, int] = (12, 20)  # voxels
    wall_thickness: int = 1  # voxels
    object_count_range: tuple[int, int] = (1, 3)
    object_cells_range: tuple[int, int] = (3, 8)
    palette: tuple = DEFAULT_PALETTE
    structure_tint: float = 0.12  # per-structure color shift around the palette
    color_noise: float = 0.02  # per-voxel
    surface_shift_range: tuple[float, float] = (-0.3, 0.3)  # of a voxel, per structure
    offset_noise: float = 0.02  # per-voxel, of a voxel
    scale_fraction_range: tuple[float, float] = (0.45, 0.85)  # per structure
    normal_thinning: float = 0.35  # scale multiplier along the face normal
    scale_noise: float = 0.04
    opacity_logit: float = 4.0
    rotation_jitter: float = 0.04
    seed: int = 0


def _structure_style(rng: np.random.Generator, params: SynthParams) -> dict:
    base = np.array(params.palette[int(rng.integers(len(params.palette)))])
    return {
        "color": np.clip(base + rng.uniform(-params.structure_tint, params.structure_tint, 3), 0.02, 0.98),
        "shift": float(rng.uniform(*params.surface_shift_range)),
        "scale": float(rng.uniform(*params.scale_fraction_range)),
    }


def generate_toy_scene(params: SynthParams, seed: int) -> GaussianScene:
    """Axis-aligned room with colored hollow boxes; one splat per surface voxel."""
    rng = np.random.default_rng(seed)
    w = int(rng.integers(params.room_cells_range[0], params.room_cells_range[1] + 1))
    d = int(rng.integers(params.room_cells_range[0], params.room_cells_range[1] + 1))
    h = int(rng.integers(params.room_height_range[0], params.room_height_range[1] + 1))
    t = params.wall_thickness

    # cell -> (style id, face normal id)
    cells: dict[tuple[int, int, int], tuple[int, int]] = {}
    styles = [_structure_style(rng, params), _structure_style(rng, params)]  # floor, walls
    for x in range(w):
        for y in range(d):
            cells[(x, y, 0)] = (0, 4)  # floor, +z face
    for z in range(1, h):
        for x in range(w):
            for y in range(d):
                if x < t:
                    cells[(x, y, z)] = (1, 0)
                elif x >= w - t:
                    cells[(x, y, z)] = (1, 1)
                elif y < t:
                    cells[(x, y, z)] = (1, 2)
                elif y >= d - t:
                    cells[(x, y, z)] = (1, 3)

    n_objects = int(rng.integers(params.object_count_range[0], params.object_count_range[1] + 1))
    lo_c, hi_c = params.object_cells_range
    for _ in range(n_objects):
        placed = False
        for _try in range(20):
            bw = int(rng.integers(lo_c, hi_c + 1))
            bd = int(rng.integers(lo_c, hi_c + 1))
            bh = int(rng.integers(lo_c, min(hi_c, h - 2) + 1))
            x0 = int(rng.integers(t + 1, max(w - t - 1 - bw, t + 2)))
            y0 = int(rng.integers(t + 1, max(d - t - 1 - bd, t + 2)))
            if x0 + bw < w - t and y0 + bd < d - t:
                placed = True
                break
        if not placed:
            continue
        styles.append(_structure_style(rng, params))
        sid = len(styles) - 1
        for x in range(x0, x0 + bw):
            for y in range(y0, y0 + bd):
                for z in range(1, bh + 1):
                    if z == bh:
                        face = 4
                    elif x == x0:
                        face = 1
                    elif x == x0 + bw - 1:
                        face = 0
                    elif y == y0:
                        face = 3
                    elif y == y0 + bd - 1:
                        face = 2
                    elif z == 1:
                        face = 5
                    else:
                        continue  # interior
                    cells[(x, y, z)] = (sid, face)

    vs = params.voxel_size
    primitives = []
    for (x, y, z) in sorted(cells):
        sid, face = cells[(x, y, z)]
        style = styles[sid]
        normal = _NORMALS[face]
        color = np.clip(style["color"] + rng.uniform(-params.color_noise, params.color_noise, 3), 0.0, 1.0)
        center = (np.array([x, y, z], dtype=np.float64) + 0.5) * vs
        offset = normal * style["shift"] * vs + rng.uniform(-params.offset_noise, params.offset_noise, 3) * vs
        scale = np.full(3, style["scale"])
        scale[np.abs(normal).argmax()] *= params.normal_thinning
        scale = (scale + rng.uniform(-params.scale_noise, params.scale_noise, 3)) * vs
        quat = standardize_quaternion(np.array([1.0, *rng.normal(0.0, params.rotation_jitter, 3)]))
        primitives.append(GaussianPrimitive(
            position=tuple(center + offset),
            opacity_logit=params.opacity_logit,
            scale=tuple(np.maximum(scale, 0.05 * vs)),
            rotation=quat,
            color=tuple(color),
        ))
    return GaussianScene.from_primitives(primitives)


def make_dataset(params: SynthParams, count: int) -> list[GaussianScene]:
    return [generate_toy_scene(params, params.seed + i) for i in range(count)]
