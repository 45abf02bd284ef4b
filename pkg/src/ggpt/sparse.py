"""Gather/scatter sparse 3D convolution over explicit coordinate lists.

Sites are (N,3) non-negative integer arrays kept lexicographically sorted.
Kernel maps (which input row feeds which output row for each kernel offset)
depend only on coordinates, so they are built once per chunk and reused across
training steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_SHIFT = 21
_BIAS = 1 << 20  # allows temporarily negative lookups from kernel offsets

KERNEL_OFFSETS_3 = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
    dtype=np.int64,
)
CHILD_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)],
    dtype=np.int64,
)


def coord_keys(coords: np.ndarray) -> np.ndarray:
    c = coords + _BIAS
    return (c[:, 0] << (2 * _SHIFT)) + (c[:, 1] << _SHIFT) + c[:, 2]


def sort_coords(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if len(coords) == 0:
        return coords
    return coords[np.argsort(coord_keys(coords), kind="stable")]


def _lookup(sorted_keys: np.ndarray, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(index, found) of each query key in a sorted key array."""
    pos = np.searchsorted(sorted_keys, queries)
    pos_c = np.minimum(pos, len(sorted_keys) - 1) if len(sorted_keys) else pos
    found = (pos < len(sorted_keys)) & (sorted_keys[pos_c] == queries) if len(sorted_keys) else np.zeros(len(queries), bool)
    return pos_c, found


@dataclass
class KernelMap:
    """Per-offset (input row, output row) index pairs plus site counts."""

    n_in: int
    n_out: int
    out_coords: np.ndarray
    pairs: list[tuple[int, np.ndarray, np.ndarray]]  # (offset id, in_idx, out_idx)


def build_same_map(coords: np.ndarray) -> KernelMap:
    """3x3x3 kernel, stride 1, outputs on the same occupied sites."""
    coords = np.asarray(coords, dtype=np.int64)
    keys = coord_keys(coords)
    pairs = []
    for k, off in enumerate(KERNEL_OFFSETS_3):
        neighbor = coords + off
        idx, found = _lookup(keys, coord_keys(neighbor))
        out_idx = np.nonzero(found)[0]
        if len(out_idx):
            pairs.append((k, idx[found], out_idx))
    return KernelMap(n_in=len(coords), n_out=len(coords), out_coords=coords, pairs=pairs)


def downsample_coords(coords: np.ndarray) -> np.ndarray:
    """Unique sorted parent sites: floor(coords / 2)."""
    if len(coords) == 0:
        return coords.reshape(0, 3)
    parents = np.asarray(coords, dtype=np.int64) >> 1
    return sort_coords(np.unique(parents, axis=0))


def build_down_map(coords: np.ndarray) -> KernelMap:
    """3x3x3 kernel, stride 2; output site p gathers inputs at 2p + offset."""
    coords = np.asarray(coords, dtype=np.int64)
    out_coords = downsample_coords(coords)
    keys = coord_keys(coords)
    pairs = []
    for k, off in enumerate(KERNEL_OFFSETS_3):
        taps = 2 * out_coords + off
        idx, found = _lookup(keys, coord_keys(taps))
        out_idx = np.nonzero(found)[0]
        if len(out_idx):
            pairs.append((k, idx[found], out_idx))
    return KernelMap(n_in=len(coords), n_out=len(out_coords), out_coords=out_coords, pairs=pairs)


def build_up_map(parent_coords: np.ndarray, child_coords: np.ndarray) -> KernelMap:
    """Kernel-2 transposed conv: child at 2p + o receives weight W[o] @ parent."""
    parent_coords = np.asarray(parent_coords, dtype=np.int64)
    child_coords = np.asarray(child_coords, dtype=np.int64)
    child_keys = coord_keys(child_coords)
    pairs = []
    for k, off in enumerate(CHILD_OFFSETS):
        candidates = 2 * parent_coords + off
        idx, found = _lookup(child_keys, coord_keys(candidates))
        parent_idx = np.nonzero(found)[0]
        if len(parent_idx):
            pairs.append((k, parent_idx, idx[found]))
    return KernelMap(n_in=len(parent_coords), n_out=len(child_coords), out_coords=child_coords, pairs=pairs)


def child_occupancy_bits(parent_coords: np.ndarray, child_coords: np.ndarray) -> np.ndarray:
    """(P, 8) 0/1 matrix: which of each parent's children are occupied."""
    parent_coords = np.asarray(parent_coords, dtype=np.int64)
    child_keys = coord_keys(np.asarray(child_coords, dtype=np.int64))
    bits = np.zeros((len(parent_coords), 8), dtype=np.float32)
    for k, off in enumerate(CHILD_OFFSETS):
        _, found = _lookup(child_keys, coord_keys(2 * parent_coords + off))
        bits[:, k] = found
    return bits


def expand_children(parent_coords: np.ndarray, keep_bits: np.ndarray) -> np.ndarray:
    """Child sites selected by a (P, 8) boolean matrix, sorted."""
    parent_coords = np.asarray(parent_coords, dtype=np.int64)
    out = []
    for k, off in enumerate(CHILD_OFFSETS):
        sel = np.nonzero(keep_bits[:, k])[0]
        if len(sel):
            out.append(2 * parent_coords[sel] + off)
    if not out:
        return np.zeros((0, 3), dtype=np.int64)
    return sort_coords(np.concatenate(out, axis=0))


def apply_conv(feats: Tensor, weights: Tensor, bias: Tensor | None, kmap: KernelMap) -> Tensor:
    """Apply a sparse convolution given its kernel map.

    feats: (N_in, C_in); weights: (K, C_in, C_out); bias: (C_out,) or None.
    """
    c_in = feats.shape[1]
    c_out = weights.shape[2]
    out: Tensor | None = None
    for k, in_idx, out_idx in kmap.pairs:
        # per offset, each output sees at most one input and vice versa
        gathered = ad.gather_rows(feats, in_idx, unique=True)
        w_k = ad.reshape(ad.narrow(weights, 0, k, 1), (c_in, c_out))
        contrib = ad.matmul(gathered, w_k)
        scattered = ad.scatter_add_rows(contrib, out_idx, kmap.n_out, unique=True)
        out = scattered if out is None else ad.add(out, scattered)
    if out is None:
        out = ad.zeros((kmap.n_out, c_out), dtype=feats.dtype)
    if bias is not None:
        out = ad.add(out, bias)
    return out
