"""Finite-difference verification of the full training objectives.

Both models are instantiated at small widths in float64 and their losses are
checked against central differences. The autoencoder check runs with the
quantizer in pass-through mode: the straight-through estimator is exact-by-
construction in backward but invisible to finite differences, so the smooth
path (which shares every trainable op) is what gets verified numerically.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autoencoder import (AutoencoderConfig, autoencoder_step_loss, build_chunk_plan,
                          init_autoencoder)
from .ordering import Ordering
from .scene import standardize_quaternion
from .tokens import LatentChunk, serialize_chunk
from .transformer import GptConfig, init_weights, sequence_ce
from .voxels import SparseFeatureGrid, VoxelRecord


def random_voxel_chunk(rng: np.random.Generator, n_voxels: int, extent: tuple[int, int, int],
                       voxel_size: float = 0.025) -> SparseFeatureGrid:
    grid = SparseFeatureGrid(voxel_size=voxel_size)
    while len(grid.entries) < n_voxels:
        c = tuple(int(rng.integers(0, e)) for e in extent)
        if c in grid.entries:
            continue
        grid.entries[c] = VoxelRecord(
            offset=tuple(rng.uniform(-0.4, 0.4, 3) * voxel_size),
            opacity_logit=float(rng.uniform(-6, 8)),
            scale=tuple(np.exp(rng.uniform(-0.7, 0.7, 3)) * voxel_size),
            rotation=standardize_quaternion(rng.normal(size=4)),
            color=tuple(rng.uniform(0.05, 0.95, 3)),
        )
    return grid


def random_latent_chunk(rng: np.random.Generator, n_cells_occ: int, extent: tuple[int, int, int],
                        codebook: int) -> LatentChunk:
    chunk = LatentChunk(extent=extent, codebook_size=codebook)
    while len(chunk.entries) < n_cells_occ:
        c = tuple(int(rng.integers(0, e)) for e in extent)
        chunk.entries[c] = int(rng.integers(codebook))
    return chunk


def transformer_grad_check(n_layer: int = 2, d_model: int = 32, seed: int = 0,
                           max_coords: int = 8, n_cells_occ: int = 5) -> float:
    """Full-model gradient check of the masked CE objective in float64."""
    rng = np.random.default_rng(seed)
    cfg = GptConfig(extent=(3, 3, 3), ordering=Ordering.XYZ, n_layer=n_layer,
                    n_head=d_model // 16, d_model=d_model, feat_vocab=32)
    params = init_weights(cfg, rng, dtype=np.float64)
    # zero-init projections get a nudge so their gradients are generic
    for name, p in params.items():
        if name.endswith((".wo", "mlp.w2")):
            p.data = p.data + rng.normal(0.0, 0.02, p.shape)
    chunk = random_latent_chunk(rng, n_cells_occ, cfg.extent, cfg.feat_vocab)
    seq = serialize_chunk(chunk, cfg.ordering)
    names = sorted(params)

    def objective():
        return sequence_ce(params, cfg, seq, reduction="mean")

    return ad.grad_check(objective, [params[n] for n in names],
                         max_coords_per_param=max_coords, rng=np.random.default_rng(seed + 1))


def autoencoder_grad_check(stages: int = 1, seed: int = 0, max_coords: int = 8,
                           n_voxels: int = 12) -> float:
    """Gradient check of the teacher-forced loss, quantizer in pass-through."""
    rng = np.random.default_rng(seed)
    cfg = AutoencoderConfig(stages=stages, chunk_extent=(8, 8, 8),
                            widths=tuple([8] + [12] * stages))
    params = init_autoencoder(cfg, rng, dtype=np.float64)
    for name, p in params.items():
        if name.endswith(".wf"):
            p.data = p.data + rng.normal(0.0, 0.02, p.shape)
    chunk = random_voxel_chunk(rng, n_voxels, cfg.chunk_extent, cfg.voxel_size)
    plan = build_chunk_plan(chunk, cfg)
    plan.attrs_norm = plan.attrs_norm.astype(np.float64)
    names = sorted(params)

    def objective():
        total, _components, _indices = autoencoder_step_loss(params, plan, cfg, quantize=False)
        return total

    return ad.grad_check(objective, [params[n] for n in names],
                         max_coords_per_param=max_coords, rng=np.random.default_rng(seed + 1))


def decoder_grad_check_quantized(seed: int = 0, max_coords: int = 8) -> float:
    """Decoder-side check with hard quantization on: codes are constant w.r.t.
    decoder parameters, so numeric and analytic gradients must agree."""
    rng = np.random.default_rng(seed)
    cfg = AutoencoderConfig(stages=1, chunk_extent=(8, 8, 8), widths=(8, 12))
    params = init_autoencoder(cfg, rng, dtype=np.float64)
    for name, p in params.items():
        if name.endswith(".wf"):
            p.data = p.data + rng.normal(0.0, 0.02, p.shape)
    chunk = random_voxel_chunk(rng, 10, cfg.chunk_extent, cfg.voxel_size)
    plan = build_chunk_plan(chunk, cfg)
    plan.attrs_norm = plan.attrs_norm.astype(np.float64)
    dec_names = sorted(n for n in params if n.startswith("dec."))

    def objective():
        total, _components, _indices = autoencoder_step_loss(params, plan, cfg, quantize=True)
        return total

    return ad.grad_check(objective, [params[n] for n in dec_names],
                         max_coords_per_param=max_coords, rng=np.random.default_rng(seed + 1))
