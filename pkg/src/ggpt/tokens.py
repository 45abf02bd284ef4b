"""Interleaved position/feature token sequences and their binary stream format.

A latent chunk serializes to BOS, (POS, FEAT)*, EOS where POS carries the
traversal rank of an occupied cell and FEAT the codebook index stored there.
POS ranks are strictly increasing; each POS/FEAT pair shares the cell's
integer coordinates (specials use (0,0,0)).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from .ordering import Coord, Extent, Ordering, inverse_index, linear_index, n_cells


class TokenType(enum.IntEnum):
    BOS = 0
    POS = 1
    FEAT = 2
    EOS = 3


class TokenStreamError(ValueError):
    """Malformed token sequence or stream file."""


DEFAULT_CODEBOOK_SIZE = 4096


@dataclass
class LatentChunk:
    """Fixed-extent sparse grid of discrete codebook indices."""

    extent: Extent
    entries: dict[Coord, int] = field(default_factory=dict)
    codebook_size: int = DEFAULT_CODEBOOK_SIZE

    def __post_init__(self):
        self.extent = tuple(int(e) for e in self.extent)
        for coord, code in self.entries.items():
            self._check_entry(coord, code)

    def _check_entry(self, coord: Coord, code: int) -> None:
        if any(c < 0 or c >= e for c, e in zip(coord, self.extent)):
            raise ValueError(f"entry {coord} outside extent {self.extent}")
        if not 0 <= code < self.codebook_size:
            raise ValueError(f"codebook index {code} out of range [0, {self.codebook_size})")

    def set(self, coord: Coord, code: int) -> None:
        coord = tuple(int(c) for c in coord)
        self._check_entry(coord, int(code))
        self.entries[coord] = int(code)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatentChunk):
            return NotImplemented
        return self.extent == other.extent and self.entries == other.entries

    def occupied_columns(self) -> set[tuple[int, int]]:
        return {(x, y) for (x, y, _z) in self.entries}


@dataclass
class TokenSequence:
    """Parallel token/type/coordinate arrays in BOS,(POS,FEAT)*,EOS pattern."""

    tokens: list[int] = field(default_factory=list)
    types: list[TokenType] = field(default_factory=list)
    coords: list[Coord] = field(default_factory=list)

    def append(self, token: int, ttype: TokenType, coord: Coord = (0, 0, 0)) -> None:
        self.tokens.append(int(token))
        self.types.append(TokenType(ttype))
        self.coords.append(tuple(int(c) for c in coord))

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return self.tokens == other.tokens and self.types == other.types and self.coords == other.coords

    def position_values(self) -> list[int]:
        return [t for t, ty in zip(self.tokens, self.types) if ty == TokenType.POS]

    def pairs(self) -> list[tuple[int, int, Coord]]:
        """(rank, code, coord) triples for each POS/FEAT pair, in order."""
        out = []
        i = 0
        while i < len(self.tokens):
            if self.types[i] == TokenType.POS:
                out.append((self.tokens[i], self.tokens[i + 1], self.coords[i]))
                i += 2
            else:
                i += 1
        return out


def empty_sequence() -> TokenSequence:
    seq = TokenSequence()
    seq.append(0, TokenType.BOS)
    return seq


def serialize_chunk(chunk: LatentChunk, ordering: Ordering) -> TokenSequence:
    """Emit occupied cells in ascending traversal rank as POS/FEAT pairs."""
    seq = empty_sequence()
    ranked = sorted(
        ((linear_index(coord, chunk.extent, ordering), coord, code) for coord, code in chunk.entries.items())
    )
    for rank, coord, code in ranked:
        seq.append(rank, TokenType.POS, coord)
        seq.append(code, TokenType.FEAT, coord)
    seq.append(0, TokenType.EOS)
    return seq


def validate_sequence(seq: TokenSequence, extent: Extent, ordering: Ordering,
                      codebook_size: int = DEFAULT_CODEBOOK_SIZE) -> None:
    """Raise TokenStreamError unless ``seq`` is a well-formed full sequence."""
    toks, types, coords = seq.tokens, seq.types, seq.coords
    if not (len(toks) == len(types) == len(coords)):
        raise TokenStreamError("parallel arrays of differing length")
    if len(toks) < 2 or types[0] != TokenType.BOS or types[-1] != TokenType.EOS:
        raise TokenStreamError("sequence must start with BOS and end with EOS")
    if (len(toks) - 2) % 2 != 0:
        raise TokenStreamError("unpaired position/feature token")
    cells = n_cells(extent)
    last_rank = -1
    for i in range(1, len(toks) - 1, 2):
        if types[i] != TokenType.POS or types[i + 1] != TokenType.FEAT:
            raise TokenStreamError(f"expected POS,FEAT pair at index {i}")
        rank = toks[i]
        if rank < 0 or rank >= cells:
            raise TokenStreamError(f"position {rank} out of extent {extent}")
        if rank <= last_rank:
            raise TokenStreamError(f"position {rank} not strictly increasing after {last_rank}")
        last_rank = rank
        expected = inverse_index(rank, extent, ordering)
        if coords[i] != expected or coords[i + 1] != expected:
            raise TokenStreamError(f"coords for rank {rank} do not match traversal order")
        code = toks[i + 1]
        if code < 0 or code >= codebook_size:
            raise TokenStreamError(f"feature token {code} out of codebook range")


def deserialize_tokens(seq: TokenSequence, extent: Extent, ordering: Ordering,
                       codebook_size: int = DEFAULT_CODEBOOK_SIZE) -> LatentChunk:
    """Rebuild the latent chunk; inverse of :func:`serialize_chunk`."""
    validate_sequence(seq, extent, ordering, codebook_size)
    chunk = LatentChunk(extent=tuple(extent), codebook_size=codebook_size)
    for i in range(1, len(seq.tokens) - 1, 2):
        coord = inverse_index(seq.tokens[i], extent, ordering)
        chunk.entries[coord] = seq.tokens[i + 1]
    return chunk


# ---------------------------------------------------------------------------
# binary token stream file

_MAGIC = b"GGPT"
_VERSION = 1


def write_token_stream(seq: TokenSequence, extent: Extent, ordering: Ordering) -> bytes:
    """Pack a sequence: magic, version u16, ordering u8, extent 3xu16, count
    u32, u32 token ids little-endian, then 2-bit type tags packed 4 per byte."""
    count = len(seq)
    head = struct.pack("<4sHB3HI", _MAGIC, _VERSION, int(ordering), *[int(e) for e in extent], count)
    ids = np.asarray(seq.tokens, dtype="<u4").tobytes()
    tags = np.zeros((count + 3) // 4, dtype=np.uint8)
    for i, t in enumerate(seq.types):
        tags[i // 4] |= int(t) << (2 * (i % 4))
    return head + ids + tags.tobytes()


def read_token_stream(data: bytes) -> tuple[TokenSequence, Extent, Ordering]:
    head_size = struct.calcsize("<4sHB3HI")
    if len(data) < head_size:
        raise TokenStreamError("truncated token stream header")
    magic, version, ordering_id, ex, ey, ez, count = struct.unpack("<4sHB3HI", data[:head_size])
    if magic != _MAGIC:
        raise TokenStreamError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise TokenStreamError(f"unsupported version {version}")
    extent = (ex, ey, ez)
    ordering = Ordering(ordering_id)
    ids_end = head_size + 4 * count
    tags_end = ids_end + (count + 3) // 4
    if len(data) < tags_end:
        raise TokenStreamError("truncated token stream body")
    ids = np.frombuffer(data[head_size:ids_end], dtype="<u4")
    tag_bytes = np.frombuffer(data[ids_end:tags_end], dtype=np.uint8)
    seq = TokenSequence()
    last_coord: Coord = (0, 0, 0)
    for i in range(count):
        tag = TokenType((tag_bytes[i // 4] >> (2 * (i % 4))) & 0x3)
        token = int(ids[i])
        if tag == TokenType.POS:
            last_coord = inverse_index(token, extent, ordering)
            coord = last_coord
        elif tag == TokenType.FEAT:
            coord = last_coord
        else:
            coord = (0, 0, 0)
        seq.append(token, tag, coord)
    return seq, extent, ordering
