"""3D-to-1D traversal orders for sparse latent grids.

Five variants: plain xyz raster (z fastest), Z-order (Morton) and Hilbert
curves, plus "transposed" curve variants that apply the cyclic axis
permutation (x,y,z) -> (y,z,x) before ranking. Curve variants pad the extent
to a power-of-two cube internally and compact the curve ranks over in-bounds
cells, so every variant is a bijection onto [0, Nx*Ny*Nz).
"""

from __future__ import annotations

import enum
from functools import lru_cache

import numpy as np

Extent = tuple[int, int, int]
Coord = tuple[int, int, int]


class Ordering(enum.IntEnum):
    XYZ = 0
    ZORDER = 1
    ZORDER_TRANSPOSED = 2
    HILBERT = 3
    HILBERT_TRANSPOSED = 4

    @classmethod
    def from_name(cls, name: str) -> "Ordering":
        key = name.strip().lower().replace("-", "_")
        aliases = {
            "xyz": cls.XYZ,
            "zorder": cls.ZORDER,
            "z_order": cls.ZORDER,
            "zorder_transposed": cls.ZORDER_TRANSPOSED,
            "hilbert": cls.HILBERT,
            "hilbert_transposed": cls.HILBERT_TRANSPOSED,
        }
        if key not in aliases:
            raise ValueError(f"unknown ordering {name!r}")
        return aliases[key]


ALL_ORDERINGS = tuple(Ordering)

# cyclic permutation used by the transposed variants
_TRANSPOSE_PERM = (1, 2, 0)


def _check_extent(extent: Extent) -> Extent:
    extent = tuple(int(e) for e in extent)
    if len(extent) != 3 or any(e < 1 for e in extent):
        raise ValueError(f"invalid extent {extent}")
    return extent


def _check_coord(coord: Coord, extent: Extent) -> Coord:
    coord = tuple(int(c) for c in coord)
    if any(c < 0 or c >= e for c, e in zip(coord, extent)):
        raise ValueError(f"coordinate {coord} out of extent {extent}")
    return coord


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p <<= 1
    return p


def morton_key(x: int, y: int, z: int, bits: int) -> int:
    """Bit-interleaved rank: per level the bit order is (x,y,z) MSB->LSB."""
    key = 0
    for b in range(bits - 1, -1, -1):
        key = (key << 3) | (((x >> b) & 1) << 2) | (((y >> b) & 1) << 1) | ((z >> b) & 1)
    return key


def hilbert_key(x: int, y: int, z: int, bits: int) -> int:
    """Rank along a 3D Hilbert curve over a 2^bits cube.

    Gray-code/bit-transposition construction: fold the coordinates into the
    "transposed" Hilbert form level by level, then bit-interleave with axis x
    most significant. Consecutive ranks differ in exactly one axis by 1.
    """
    if bits == 0:
        return 0
    v = [x, y, z]
    n = 3
    m = 1 << (bits - 1)
    q = m
    while q > 1:
        p = q - 1
        for i in range(n):
            if v[i] & q:
                v[0] ^= p
            else:
                t = (v[0] ^ v[i]) & p
                v[0] ^= t
                v[i] ^= t
        q >>= 1
    for i in range(1, n):
        v[i] ^= v[i - 1]
    t = 0
    q = m
    while q > 1:
        if v[n - 1] & q:
            t ^= q - 1
        q >>= 1
    for i in range(n):
        v[i] ^= t
    key = 0
    for b in range(bits - 1, -1, -1):
        key = (key << 3) | (((v[0] >> b) & 1) << 2) | (((v[1] >> b) & 1) << 1) | ((v[2] >> b) & 1)
    return key


def hilbert_coord(key: int, bits: int) -> Coord:
    """Inverse of :func:`hilbert_key`."""
    if bits == 0:
        return (0, 0, 0)
    n = 3
    v = [0, 0, 0]
    for b in range(bits - 1, -1, -1):
        shift = 3 * b
        v[0] = (v[0] << 1) | ((key >> (shift + 2)) & 1)
        v[1] = (v[1] << 1) | ((key >> (shift + 1)) & 1)
        v[2] = (v[2] << 1) | ((key >> shift) & 1)
    m = 2 << (bits - 1)
    t = v[n - 1] >> 1
    for i in range(n - 1, 0, -1):
        v[i] ^= v[i - 1]
    v[0] ^= t
    q = 2
    while q != m:
        p = q - 1
        for i in range(n - 1, -1, -1):
            if v[i] & q:
                v[0] ^= p
            else:
                t = (v[0] ^ v[i]) & p
                v[0] ^= t
                v[i] ^= t
        q <<= 1
    return (v[0], v[1], v[2])


@lru_cache(maxsize=64)
def _rank_tables(ordering: Ordering, extent: Extent) -> tuple[np.ndarray, np.ndarray]:
    """(rank_by_cell, cell_by_rank) for curve orderings on a given extent.

    rank_by_cell is indexed by the xyz flat index x*Ny*Nz + y*Nz + z and holds
    the compacted curve rank; cell_by_rank is its inverse as an (N,3) array.
    """
    nx, ny, nz = extent
    base = ordering
    perm = (0, 1, 2)
    if ordering == Ordering.ZORDER_TRANSPOSED:
        base, perm = Ordering.ZORDER, _TRANSPOSE_PERM
    elif ordering == Ordering.HILBERT_TRANSPOSED:
        base, perm = Ordering.HILBERT, _TRANSPOSE_PERM

    xs, ys, zs = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    coords = np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)
    permuted = coords[:, perm]
    side = _next_pow2(int(permuted.max(initial=0)) + 1)
    bits = max(1, side.bit_length() - 1)
    if base == Ordering.ZORDER:
        keys = np.array([morton_key(a, b, c, bits) for a, b, c in permuted], dtype=np.int64)
    else:
        keys = np.array([hilbert_key(a, b, c, bits) for a, b, c in permuted], dtype=np.int64)
    order = np.argsort(keys, kind="stable")
    rank_by_cell = np.empty(nx * ny * nz, dtype=np.int64)
    rank_by_cell[order] = np.arange(nx * ny * nz)
    cell_by_rank = coords[order].astype(np.int64)
    return rank_by_cell, cell_by_rank


def n_cells(extent: Extent) -> int:
    nx, ny, nz = _check_extent(extent)
    return nx * ny * nz


def linear_index(coord: Coord, extent: Extent, ordering: Ordering) -> int:
    """Rank of ``coord`` in [0, Nx*Ny*Nz) under the given traversal order."""
    extent = _check_extent(extent)
    x, y, z = _check_coord(coord, extent)
    nx, ny, nz = extent
    if ordering == Ordering.XYZ:
        return x * ny * nz + y * nz + z
    rank_by_cell, _ = _rank_tables(Ordering(ordering), extent)
    return int(rank_by_cell[x * ny * nz + y * nz + z])


def inverse_index(index: int, extent: Extent, ordering: Ordering) -> Coord:
    """Coordinate whose :func:`linear_index` equals ``index``."""
    extent = _check_extent(extent)
    nx, ny, nz = extent
    index = int(index)
    if index < 0 or index >= nx * ny * nz:
        raise ValueError(f"index {index} out of range for extent {extent}")
    if ordering == Ordering.XYZ:
        x, rem = divmod(index, ny * nz)
        y, z = divmod(rem, nz)
        return (x, y, z)
    _, cell_by_rank = _rank_tables(Ordering(ordering), extent)
    return tuple(int(c) for c in cell_by_rank[index])


def linear_index_many(coords: np.ndarray, extent: Extent, ordering: Ordering) -> np.ndarray:
    """Vectorized :func:`linear_index` for an (N,3) integer coordinate array."""
    extent = _check_extent(extent)
    coords = np.asarray(coords, dtype=np.int64)
    if coords.size == 0:
        return np.zeros(0, dtype=np.int64)
    if coords.min() < 0 or (coords >= np.array(extent)).any():
        raise ValueError("coordinates out of extent")
    nx, ny, nz = extent
    flat = coords[:, 0] * ny * nz + coords[:, 1] * nz + coords[:, 2]
    if ordering == Ordering.XYZ:
        return flat
    rank_by_cell, _ = _rank_tables(Ordering(ordering), extent)
    return rank_by_cell[flat]
