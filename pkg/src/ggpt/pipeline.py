"""Glue between pipeline stages: scenes -> grids -> latent chunks -> sequences."""

from __future__ import annotations

import numpy as np

from .autoencoder import (AutoencoderCheckpoint, encode_scene_to_latent_grid,
                          sample_latent_chunk)
from .ordering import Ordering
from .scene import GaussianScene
from .tokens import LatentChunk, TokenSequence, serialize_chunk
from .voxels import SparseFeatureGrid, voxelize


def scenes_to_grids(scenes: list[GaussianScene], voxel_size: float, seed: int) -> list[SparseFeatureGrid]:
    rng = np.random.default_rng(seed)
    return [voxelize(scene, voxel_size, rng) for scene in scenes]


def build_latent_corpus(ae: AutoencoderCheckpoint, grids: list[SparseFeatureGrid],
                        chunks_per_scene: int, threshold: float, tries: int,
                        rng: np.random.Generator) -> list[LatentChunk]:
    """Encode each scene grid once, then sample occupancy-thresholded latent chunks."""
    chunks: list[LatentChunk] = []
    extent = ae.cfg.latent_extent
    for grid in grids:
        latent = encode_scene_to_latent_grid(ae.params, ae.cfg, grid)
        for _ in range(chunks_per_scene):
            chunks.append(sample_latent_chunk(latent, extent, threshold, tries, rng))
    return chunks


def chunks_to_sequences(chunks: list[LatentChunk], ordering: Ordering) -> list[TokenSequence]:
    return [serialize_chunk(chunk, ordering) for chunk in chunks]
