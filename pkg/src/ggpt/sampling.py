"""Constrained autoregressive decoding over latent-grid token streams.

Position sampling is masked so ranks strictly increase (plus EOS), which
guarantees every emitted sequence deserializes into a valid chunk. On top of
plain chunk sampling this module provides prefix-conditioned completion and
sliding-window outpainting with empty-column resampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ordering import Ordering, inverse_index, n_cells
from .tokens import LatentChunk, TokenSequence, TokenType, empty_sequence
from .transformer import GptCheckpoint, GptConfig, InferenceSession


@dataclass(frozen=True)
class SampleConfig:
    temperature: float = 0.9
    nucleus_p: float = 0.9
    max_tokens: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not 0 < self.nucleus_p <= 1:
            raise ValueError("nucleus p must be in (0, 1]")


@dataclass
class GenerationState:
    sequence: TokenSequence
    emitted: set[int] = field(default_factory=set)
    last_position: int = -1
    truncated: bool = False


@dataclass
class SampleResult:
    sequence: TokenSequence
    chunk: LatentChunk
    truncated: bool = False


@dataclass(frozen=True)
class OutpaintConfig:
    target_columns: tuple[int, int]  # (Tx, Ty) in latent columns
    bootstrap_columns: int = 20
    frontier_low: int = 5  # target band along y is [low, high)
    frontier_high: int = 10
    frontier_x: int = 5
    resample_tries: int = 5


@dataclass
class OutpaintResult:
    chunk: LatentChunk
    attempts: dict[tuple[int, int], int] = field(default_factory=dict)
    writes: int = 0
    rewrites: int = 0
    schedule: list[tuple[str, tuple[int, int]]] = field(default_factory=list)


def filter_logits(logits: np.ndarray, legal_mask: np.ndarray, temperature: float, p: float) -> np.ndarray:
    """Temperature + nucleus filtering over the legal entries.

    Returns a full-size probability vector; entries outside the nucleus (or
    illegal) are exactly zero. Ties in the probability sort are broken by
    vocabulary index (stable sort) for reproducibility.
    """
    legal_mask = np.asarray(legal_mask, dtype=bool)
    if not legal_mask.any():
        raise ValueError("no legal entries to sample from")
    masked = np.where(legal_mask, logits.astype(np.float64), -np.inf) / temperature
    m = masked.max()
    probs = np.exp(masked - m)
    probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    keep = int(np.searchsorted(csum, p - 1e-12, side="left")) + 1
    kept = order[:keep]
    out = np.zeros_like(probs)
    out[kept] = probs[kept] / probs[kept].sum()
    return out


def sample_from(probs: np.ndarray, rng: np.random.Generator) -> int:
    support = np.nonzero(probs)[0]
    c = np.cumsum(probs[support])
    u = rng.random() * c[-1]
    idx = min(int(np.searchsorted(c, u, side="right")), len(support) - 1)
    return int(support[idx])


def legal_position_mask(state: GenerationState, pos_head_size: int, min_rank: int = 0) -> np.ndarray:
    """Legal next positions: ranks strictly greater than the last emitted one
    (and >= min_rank); EOS (the final slot) is always legal."""
    mask = np.zeros(pos_head_size, dtype=bool)
    start = max(state.last_position + 1, min_rank)
    if start < pos_head_size - 1:
        mask[start:pos_head_size - 1] = True
    mask[pos_head_size - 1] = True
    return mask


def _feed_sequence(session: InferenceSession, seq: TokenSequence) -> tuple[np.ndarray, np.ndarray]:
    logits = None
    for value, ttype, coord in zip(seq.tokens, seq.types, seq.coords):
        logits = session.append(value, ttype, coord)
    assert logits is not None
    return logits


def _generate(session: InferenceSession, cfg: GptConfig, state: GenerationState,
              scfg: SampleConfig, rng: np.random.Generator,
              logits: tuple[np.ndarray, np.ndarray],
              min_rank: int = 0, stop_rank: int | None = None,
              max_tokens: int | None = None) -> list[tuple[int, int]]:
    """Alternate position/feature sampling until EOS, stop_rank, or budget.

    Returns the (rank, code) pairs emitted by this call. ``stop_rank`` ends
    generation when a sampled position reaches it (the stopping token is
    discarded, which lets constrained calls express "nothing more here").
    """
    eos = cfg.eos_index
    budget = max_tokens if max_tokens is not None else cfg.context_length
    emitted_pairs: list[tuple[int, int]] = []
    pos_logits, feat_logits = logits
    while True:
        if len(state.sequence) + 2 > budget:
            state.truncated = True
            return emitted_pairs
        if session.length + 2 > cfg.context_length:
            state.truncated = True
            return emitted_pairs
        mask = legal_position_mask(state, cfg.pos_head_size, min_rank=min_rank)
        probs = filter_logits(pos_logits, mask, scfg.temperature, scfg.nucleus_p)
        rank = sample_from(probs, rng)
        if rank == eos:
            state.sequence.append(0, TokenType.EOS)
            return emitted_pairs
        if stop_rank is not None and rank >= stop_rank:
            return emitted_pairs
        coord = inverse_index(rank, cfg.extent, cfg.ordering)
        state.sequence.append(rank, TokenType.POS, coord)
        pos_logits, feat_logits = session.append(rank, TokenType.POS, coord)
        fprobs = filter_logits(feat_logits, np.ones(cfg.feat_vocab, dtype=bool),
                               scfg.temperature, scfg.nucleus_p)
        code = sample_from(fprobs, rng)
        state.sequence.append(code, TokenType.FEAT, coord)
        pos_logits, feat_logits = session.append(code, TokenType.FEAT, coord)
        state.emitted.add(rank)
        state.last_position = rank
        emitted_pairs.append((rank, code))


def _chunk_from_pairs(pairs: list[tuple[int, int]], cfg: GptConfig) -> LatentChunk:
    chunk = LatentChunk(extent=cfg.extent, codebook_size=cfg.feat_vocab)
    for rank, code in pairs:
        chunk.set(inverse_index(rank, cfg.extent, cfg.ordering), code)
    return chunk


def sample_chunk(ckpt: GptCheckpoint, scfg: SampleConfig,
                 rng: np.random.Generator | None = None) -> SampleResult:
    """Unconditional chunk generation from BOS."""
    rng = rng if rng is not None else np.random.default_rng(scfg.seed)
    cfg = ckpt.cfg
    session = InferenceSession(ckpt.params, cfg)
    state = GenerationState(sequence=empty_sequence())
    logits = session.append(0, TokenType.BOS, (0, 0, 0))
    pairs = _generate(session, cfg, state, scfg, rng, logits, max_tokens=scfg.max_tokens)
    return SampleResult(state.sequence, _chunk_from_pairs(pairs, cfg), state.truncated)


def validate_prefix(prefix: TokenSequence, cfg: GptConfig) -> int:
    """Well-formedness check; returns the last position rank (or -1)."""
    if len(prefix) == 0 or prefix.types[0] != TokenType.BOS:
        raise ValueError("prefix must start with BOS")
    if any(t == TokenType.EOS for t in prefix.types):
        raise ValueError("prefix must not contain EOS")
    if (len(prefix) - 1) % 2 != 0:
        raise ValueError("prefix must contain complete position/feature pairs")
    last = -1
    for i in range(1, len(prefix), 2):
        if prefix.types[i] != TokenType.POS or prefix.types[i + 1] != TokenType.FEAT:
            raise ValueError(f"malformed pair at index {i}")
        rank = prefix.tokens[i]
        if rank <= last or rank >= n_cells(cfg.extent):
            raise ValueError(f"prefix positions must be strictly increasing and in range, got {rank}")
        if prefix.coords[i] != inverse_index(rank, cfg.extent, cfg.ordering):
            raise ValueError("prefix coords inconsistent with ordering")
        last = rank
    return last


def complete(ckpt: GptCheckpoint, prefix: TokenSequence, scfg: SampleConfig,
             rng: np.random.Generator | None = None) -> SampleResult:
    """Continue a serialized partial chunk; the prefix is preserved verbatim."""
    rng = rng if rng is not None else np.random.default_rng(scfg.seed)
    cfg = ckpt.cfg
    last = validate_prefix(prefix, cfg)
    session = InferenceSession(ckpt.params, cfg)
    seq = TokenSequence(tokens=list(prefix.tokens), types=list(prefix.types), coords=list(prefix.coords))
    logits = _feed_sequence(session, seq)
    state = GenerationState(sequence=seq, emitted=set(prefix.position_values()), last_position=last)
    _generate(session, cfg, state, scfg, rng, logits, max_tokens=scfg.max_tokens)
    all_pairs = [(r, c) for r, c, _ in seq.pairs()]
    return SampleResult(state.sequence, _chunk_from_pairs(all_pairs, cfg), state.truncated)


def resample_column(attempt: Callable[[int], list], tries: int) -> tuple[list, int]:
    """Re-run ``attempt`` until it yields a non-empty column, at most ``tries``
    times; returns (result, attempts_used). The final attempt is accepted even
    if empty."""
    if tries < 1:
        raise ValueError("tries must be >= 1")
    result: list = []
    for a in range(1, tries + 1):
        result = attempt(a)
        if result:
            return result, a
    return result, tries


# ---------------------------------------------------------------------------
# sliding-window outpainting


def _window_prefix(known: dict[tuple[int, int, int], int], origin: tuple[int, int],
                   cfg: GptConfig, below_rank: int) -> TokenSequence:
    """Serialize known cells inside the window whose rank precedes below_rank."""
    wx, wy = origin
    nx, ny, nz = cfg.extent
    cells = []
    for (gx, gy, gz), code in known.items():
        lx, ly, lz = gx - wx, gy - wy, gz
        if 0 <= lx < nx and 0 <= ly < ny and 0 <= lz < nz:
            rank = (lx * ny + ly) * nz + lz  # xyz rank
            if rank < below_rank:
                cells.append((rank, (lx, ly, lz), code))
    cells.sort()
    seq = empty_sequence()
    for rank, coord, code in cells:
        seq.append(rank, TokenType.POS, coord)
        seq.append(code, TokenType.FEAT, coord)
    return seq


def outpaint(ckpt: GptCheckpoint, ocfg: OutpaintConfig, scfg: SampleConfig,
             rng: np.random.Generator | None = None) -> OutpaintResult:
    """Grow a scene beyond one window: seed chunk, bootstrap along x in
    multi-column slices, then raster-order column growth along y with
    empty-column resampling."""
    rng = rng if rng is not None else np.random.default_rng(scfg.seed)
    cfg = ckpt.cfg
    if cfg.ordering != Ordering.XYZ:
        raise ValueError("outpainting requires the xyz column ordering")
    nx, ny, nz = cfg.extent
    tx, ty = ocfg.target_columns
    if tx < nx or ty < ny:
        raise ValueError("target extent must be at least the window extent")
    known: dict[tuple[int, int, int], int] = {}
    result = OutpaintResult(chunk=LatentChunk(extent=(tx, ty, nz), codebook_size=cfg.feat_vocab))

    def merge(pairs: list[tuple[int, int]], origin: tuple[int, int]) -> None:
        wx, wy = origin
        for rank, code in pairs:
            lx, rem = divmod(rank, ny * nz)
            ly, lz = divmod(rem, nz)
            g = (wx + lx, wy + ly, lz)
            if g in known:
                result.rewrites += 1
            known[g] = code
            result.writes += 1

    # stage 1: seed block
    seed = sample_chunk(ckpt, scfg, rng)
    merge([(r, c) for r, c, _ in seed.sequence.pairs()], (0, 0))
    result.schedule.append(("seed", (0, 0)))

    # stage 2: bootstrap along x, generating trailing x-planes per call
    planes = max(1, ocfg.bootstrap_columns // ny)
    fx = nx
    while fx < tx:
        w = min(planes, tx - fx)
        wx = fx + w - nx
        origin = (wx, 0)
        slice_start = (nx - w) * ny * nz
        session = InferenceSession(ckpt.params, cfg)
        prefix = _window_prefix(known, origin, cfg, slice_start)
        logits = _feed_sequence(session, prefix)
        state = GenerationState(sequence=prefix, emitted=set(prefix.position_values()),
                                last_position=max([r for r, _, _ in prefix.pairs()], default=-1))
        pairs = _generate(session, cfg, state, scfg, rng, logits, min_rank=slice_start)
        merge(pairs, origin)
        result.schedule.append(("bootstrap", (fx, 0)))
        fx += w

    # stage 3: raster growth along y, one column per completion call
    for gy in range(ny, ty):
        for gx in range(tx):
            wx = min(max(gx - ocfg.frontier_x, 0), tx - nx)
            wy = min(max(gy - ocfg.frontier_low, 0), ty - ny)
            lx, ly = gx - wx, gy - wy
            col_start = (lx * ny + ly) * nz
            col_end = col_start + nz
            session = InferenceSession(ckpt.params, cfg)
            prefix = _window_prefix(known, (wx, wy), cfg, col_start)
            base_logits = _feed_sequence(session, prefix)
            base_len = session.length
            last = max([r for r, _, _ in prefix.pairs()], default=-1)

            def attempt(_a: int) -> list[tuple[int, int]]:
                session.truncate(base_len)
                state = GenerationState(sequence=TokenSequence(list(prefix.tokens), list(prefix.types),
                                                               list(prefix.coords)),
                                        emitted=set(prefix.position_values()), last_position=last)
                return _generate(session, cfg, state, scfg, rng, base_logits,
                                 min_rank=col_start, stop_rank=col_end)

            pairs, used = resample_column(attempt, ocfg.resample_tries)
            result.attempts[(gx, gy)] = used
            merge(pairs, (wx, wy))
            result.schedule.append(("column", (gx, gy)))

    for coord, code in known.items():
        result.chunk.set(coord, code)
    return result
