"""Sparse voxel feature grids: scene voxelization, chunk extraction, sampling.

A grid maps integer voxel coordinates to single Gaussian records whose
positions are stored as offsets from the voxel center. Occupancy of a chunk is
measured over (x,y) columns, the generation unit of the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import GaussianPrimitive, GaussianScene

Coord = tuple[int, int, int]


@dataclass
class VoxelRecord:
    """Per-voxel Gaussian attributes; offset is relative to the voxel center."""

    offset: tuple[float, float, float]
    opacity_logit: float
    scale: tuple[float, float, float]
    rotation: tuple[float, float, float, float]
    color: tuple[float, float, float]

    def as_vector(self) -> np.ndarray:
        """Packed attribute vector in fixed order: scale, opacity, quat, color, offset."""
        return np.array(
            list(self.scale) + [self.opacity_logit] + list(self.rotation) + list(self.color) + list(self.offset),
            dtype=np.float64,
        )

    @staticmethod
    def from_vector(v) -> "VoxelRecord":
        v = np.asarray(v, dtype=np.float64)
        return VoxelRecord(
            scale=tuple(v[0:3]),
            opacity_logit=float(v[3]),
            rotation=tuple(v[4:8]),
            color=tuple(v[8:11]),
            offset=tuple(v[11:14]),
        )


ATTRIBUTE_DIMS = {"scale": 3, "opacity": 1, "rotation": 4, "color": 3, "offset": 3}
ATTRIBUTE_ORDER = ("scale", "opacity", "rotation", "color", "offset")
RECORD_DIM = sum(ATTRIBUTE_DIMS.values())  # 14


@dataclass
class SparseFeatureGrid:
    voxel_size: float
    entries: dict[Coord, VoxelRecord] = field(default_factory=dict)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __len__(self) -> int:
        return len(self.entries)

    def coords_array(self) -> np.ndarray:
        """Occupied coordinates as an (N,3) int array, lexicographically sorted."""
        if not self.entries:
            return np.zeros((0, 3), dtype=np.int64)
        coords = np.array(sorted(self.entries.keys()), dtype=np.int64)
        return coords

    def records_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(coords (N,3), attributes (N,14)) in sorted coordinate order."""
        coords = self.coords_array()
        feats = np.stack([self.entries[tuple(c)].as_vector() for c in coords]) if len(coords) else np.zeros((0, RECORD_DIM))
        return coords, feats

    def bounds_ijk(self) -> tuple[np.ndarray, np.ndarray]:
        coords = self.coords_array()
        if len(coords) == 0:
            return np.zeros(3, dtype=np.int64), np.zeros(3, dtype=np.int64) - 1
        return coords.min(axis=0), coords.max(axis=0)


@dataclass
class ChunkSpec:
    origin: Coord
    extent: tuple[int, int, int]
    anchor_vertical: bool = True

    def __post_init__(self):
        if any(e < 1 for e in self.extent):
            raise ValueError(f"chunk extent must be >= 1, got {self.extent}")


def voxelize(scene: GaussianScene, voxel_size: float, rng: np.random.Generator,
             origin: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> SparseFeatureGrid:
    """Assign Gaussians to voxels, keeping one uniformly at random per voxel."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    buckets: dict[Coord, list[GaussianPrimitive]] = {}
    for prim in scene.primitives:
        p = np.asarray(prim.position, dtype=np.float64)
        if not np.isfinite(p).all():
            raise ValueError("non-finite position")
        ijk = tuple(int(v) for v in np.floor((p - np.asarray(origin)) / voxel_size))
        buckets.setdefault(ijk, []).append(prim)
    grid = SparseFeatureGrid(voxel_size=voxel_size, origin=tuple(float(v) for v in origin))
    for ijk in sorted(buckets.keys()):
        group = buckets[ijk]
        prim = group[rng.integers(len(group))] if len(group) > 1 else group[0]
        center = np.asarray(origin) + (np.asarray(ijk, dtype=np.float64) + 0.5) * voxel_size
        offset = tuple(np.asarray(prim.position, dtype=np.float64) - center)
        grid.entries[ijk] = VoxelRecord(
            offset=offset,
            opacity_logit=prim.opacity_logit,
            scale=prim.scale,
            rotation=prim.rotation,
            color=prim.color,
        )
    return grid


def devoxelize(grid: SparseFeatureGrid) -> GaussianScene:
    """One primitive per occupied voxel at center + offset."""
    primitives = []
    origin = np.asarray(grid.origin, dtype=np.float64)
    for ijk in sorted(grid.entries.keys()):
        rec = grid.entries[ijk]
        center = origin + (np.asarray(ijk, dtype=np.float64) + 0.5) * grid.voxel_size
        primitives.append(
            GaussianPrimitive(
                position=tuple(center + np.asarray(rec.offset)),
                opacity_logit=rec.opacity_logit,
                scale=rec.scale,
                rotation=rec.rotation,
                color=rec.color,
            )
        )
    return GaussianScene.from_primitives(primitives)


def extract_dict_chunk(entries: dict[Coord, object], origin: Coord, extent: tuple[int, int, int]) -> dict:
    """Entries inside [origin, origin+extent), rebased to a (0,0,0) origin."""
    out = {}
    for ijk, value in entries.items():
        local = (ijk[0] - origin[0], ijk[1] - origin[1], ijk[2] - origin[2])
        if all(0 <= local[a] < extent[a] for a in range(3)):
            out[local] = value
    return out


def dict_column_occupancy(entries: dict[Coord, object], extent: tuple[int, int, int]) -> float:
    nx, ny, _ = extent
    if nx < 1 or ny < 1:
        raise ValueError("extent must be >= 1 per axis")
    columns = {(x, y) for (x, y, _z) in entries}
    return len(columns) / float(nx * ny)


def sample_dict_chunk(entries: dict[Coord, object], extent: tuple[int, int, int], threshold: float,
                      max_tries: int, rng: np.random.Generator) -> tuple[dict, Coord]:
    """Propose up to ``max_tries`` chunk origins; return the first chunk whose
    column occupancy meets ``threshold``, else the best seen, with its origin.
    Horizontal origins are uniform over the occupied span; the vertical origin
    is anchored at the minimum occupied z layer."""
    if max_tries < 1:
        raise ValueError("max_tries must be >= 1")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0,1]")
    if not entries:
        raise ValueError("cannot sample a chunk from an empty grid")
    coords = np.array(list(entries.keys()), dtype=np.int64)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = hi - lo + 1
    if span[0] < extent[0] or span[1] < extent[1]:
        raise ValueError(f"grid horizontal span {tuple(span[:2])} smaller than chunk extent {tuple(extent[:2])}")
    best: dict | None = None
    best_origin: Coord = (0, 0, 0)
    best_occ = -1.0
    z0 = int(lo[2])
    for _ in range(max_tries):
        ox = int(rng.integers(lo[0], hi[0] - extent[0] + 2))
        oy = int(rng.integers(lo[1], hi[1] - extent[1] + 2))
        chunk = extract_dict_chunk(entries, (ox, oy, z0), tuple(extent))
        occ = dict_column_occupancy(chunk, extent)
        if occ >= threshold:
            return chunk, (ox, oy, z0)
        if occ > best_occ:
            best, best_origin, best_occ = chunk, (ox, oy, z0), occ
    return best, best_origin


def extract_chunk(grid: SparseFeatureGrid, spec: ChunkSpec) -> SparseFeatureGrid:
    """Records inside [origin, origin+extent), rebased so the origin is (0,0,0)."""
    out = SparseFeatureGrid(voxel_size=grid.voxel_size, origin=grid.origin)
    out.entries = extract_dict_chunk(grid.entries, spec.origin, spec.extent)
    return out


def chunk_occupancy(chunk: SparseFeatureGrid, extent: tuple[int, int, int]) -> float:
    """Fraction of (x,y) columns of the extent containing at least one record."""
    return dict_column_occupancy(chunk.entries, extent)


def sample_training_chunk(grid: SparseFeatureGrid, extent: tuple[int, int, int],
                          threshold: float, max_tries: int, rng: np.random.Generator) -> SparseFeatureGrid:
    """Chunk sampling under an occupancy threshold (see sample_dict_chunk)."""
    entries, _origin = sample_dict_chunk(grid.entries, extent, threshold, max_tries, rng)
    out = SparseFeatureGrid(voxel_size=grid.voxel_size, origin=grid.origin)
    out.entries = entries
    return out


def grids_allclose(a: SparseFeatureGrid, b: SparseFeatureGrid, tol: float = 1e-9) -> bool:
    """Structural equality with float tolerance on record attributes."""
    if abs(a.voxel_size - b.voxel_size) > tol or set(a.entries) != set(b.entries):
        return False
    for ijk, ra in a.entries.items():
        rb = b.entries[ijk]
        if not np.allclose(ra.as_vector(), rb.as_vector(), atol=tol, rtol=0):
            return False
    return True
